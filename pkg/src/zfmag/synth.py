"""Synthetic field-scanned fluorescence stacks of a nanodiamond layer.

A :class:`Scene` binds a simulated field map to a per-pixel brightness and a
zero-field feature. Frames are rendered by evaluating the (field-modified)
feature at each scan value, then applying photon shot noise, camera gain,
read noise, rounding and saturation.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import rng
from .lineshape import TransverseResponse, ZeroFieldFeature, evaluate_arrays, respond_arrays
from .magnetostatics import CrossPattern, FieldMap, GridSpec, Route, build_cross, field_on_grid

DEFAULT_FEATURE = ZeroFieldFeature.from_contrast(0.01, 2.0e-3)


class StackLoadError(ValueError):
    """A stack directory could not be read back."""


@dataclass(frozen=True)
class ScanProtocol:
    b_start: float = -4e-3
    b_stop: float = 4e-3
    n_steps: int = 81
    exposure_s: float = 0.01

    def __post_init__(self):
        if not self.b_start < self.b_stop:
            raise ValueError("b_start must be below b_stop")
        if self.n_steps < 3:
            raise ValueError("n_steps must be at least 3")
        if not self.exposure_s > 0:
            raise ValueError("exposure_s must be positive")

    def b_values(self) -> np.ndarray:
        return np.linspace(self.b_start, self.b_stop, self.n_steps)

    @property
    def step(self) -> float:
        return (self.b_stop - self.b_start) / (self.n_steps - 1)


@dataclass(frozen=True)
class CameraModel:
    gain: float = 1.0
    read_noise_rms: float = 0.0
    bit_depth: int = 12

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("gain must be positive")
        if self.read_noise_rms < 0:
            raise ValueError("read_noise_rms must be non-negative")
        if not 1 <= self.bit_depth <= 16:
            raise ValueError("bit_depth must be in 1..16")

    @property
    def full_well_counts(self) -> int:
        return 2 ** self.bit_depth - 1


@dataclass(frozen=True)
class ClusterSpec:
    """Lognormal multiplicative brightness texture.

    ``sigma`` is the std of log-brightness, ``length_m`` the correlation
    length of the underlying Gaussian field.
    """

    sigma: float = 0.3
    length_m: float = 2e-6


@dataclass
class Scene:
    grid: GridSpec
    brightness: np.ndarray
    feature_base: ZeroFieldFeature
    response: TransverseResponse
    field: FieldMap
    cluster_spec: ClusterSpec = field(default_factory=ClusterSpec)

    def __post_init__(self):
        self.brightness = np.asarray(self.brightness, dtype=float)
        if self.brightness.shape != self.grid.shape:
            raise ValueError("brightness raster does not match grid")
        if self.field.grid.shape != self.grid.shape:
            raise ValueError("field map does not match grid")
        if np.any(self.brightness < 0):
            raise ValueError("brightness must be non-negative")

    def feature_rasters(self):
        """Per-pixel (deltaB, C, w) of the feature under the scene field.

        The dip sits where the scan field cancels the pattern's z field,
        so the along-scan shift is ``-bz``.
        """
        return respond_arrays(self.feature_base, self.response, -self.field.bz,
                              self.field.b_transverse)


def brightness_texture(grid: GridSpec, cluster: ClusterSpec, seed: int) -> np.ndarray:
    """Unit-mean lognormal texture, a pure function of (grid, cluster, seed)."""
    if cluster.sigma == 0:
        return np.ones(grid.shape)
    key = rng.stream_key(seed, 0, rng.STREAM_TEXTURE)
    g = rng.normal(key, np.arange(grid.nx * grid.ny)).reshape(grid.shape)
    g = gaussian_filter(g, cluster.length_m / grid.pitch, mode="wrap")
    g = (g - g.mean()) / g.std()
    return np.exp(cluster.sigma * g - 0.5 * cluster.sigma ** 2)


def make_scene(pattern: CrossPattern = CrossPattern(), current: float = 0.5,
               route: Route | str = Route.P34, seed: int = 0,
               grid: GridSpec | None = None, photon_rate: float = 1.0e5,
               feature_base: ZeroFieldFeature = DEFAULT_FEATURE,
               response: TransverseResponse = TransverseResponse(),
               cluster: ClusterSpec = ClusterSpec(), n_jobs: int | None = None) -> Scene:
    """Scene above a cross pattern driven with ``current`` along ``route``.

    ``photon_rate`` is the mean detected photon rate per camera pixel
    (photons/s) before the texture is applied.
    """
    if grid is None:
        grid = GridSpec.centered(612, 512)
    fmap = field_on_grid(build_cross(pattern, route, current), grid, n_jobs=n_jobs)
    brightness = photon_rate * brightness_texture(grid, cluster, seed)
    return Scene(grid, brightness, feature_base, response, fmap, cluster)


@dataclass
class RenderedFrame:
    counts: np.ndarray
    saturated: int = 0


def expected_photons(scene: Scene, b_scan: float, exposure_s: float, rasters=None) -> np.ndarray:
    dB, C, w = scene.feature_rasters() if rasters is None else rasters
    y0 = scene.feature_base.y0
    f = evaluate_arrays(y0, C, dB, w, b_scan)
    return scene.brightness * exposure_s * f / y0


def render_frame(scene: Scene, b_scan: float, camera: CameraModel, seed: int = 0,
                 frame_index: int = 0, exposure_s: float = 0.01, noiseless: bool = False,
                 quantize: bool = True, _rasters=None) -> RenderedFrame:
    """Render one camera frame at scan field ``b_scan``.

    In noiseless mode the expected count ``lambda / gain`` is returned,
    rounded only if ``quantize``; otherwise photons are Poisson-drawn with
    a counter-based generator keyed by (seed, frame_index, pixel).
    """
    lam = expected_photons(scene, b_scan, exposure_s, _rasters)
    fw = camera.full_well_counts
    if noiseless:
        counts = lam / camera.gain
        if quantize:
            counts = np.rint(counts)
    else:
        pix = np.arange(lam.size, dtype=np.uint64)
        photons = rng.poisson(rng.stream_key(seed, frame_index, rng.STREAM_POISSON),
                              pix, lam.ravel()).reshape(lam.shape)
        counts = photons / camera.gain
        if camera.read_noise_rms > 0:
            key = rng.stream_key(seed, frame_index, rng.STREAM_READ_NOISE)
            counts = counts + camera.read_noise_rms * rng.normal(key, pix).reshape(lam.shape)
        counts = np.rint(counts)
    saturated = int(np.count_nonzero(counts > fw))
    counts = np.clip(counts, 0, fw)
    if quantize or not noiseless:
        counts = counts.astype(np.uint16)
    return RenderedFrame(counts, saturated)


@dataclass
class ImageStack:
    frames: np.ndarray
    b_values: np.ndarray
    camera: CameraModel
    grid: GridSpec
    saturated: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.b_values = np.asarray(self.b_values, dtype=float)
        if self.frames.ndim != 3 or len(self.frames) != len(self.b_values):
            raise ValueError("frames must be (n_steps, ny, nx) matching b_values")
        if self.frames.shape[1:] != self.grid.shape:
            raise ValueError("frame dimensions do not match grid")
        if not self.saturated:
            self.saturated = [0] * len(self.b_values)

    @property
    def n_steps(self) -> int:
        return len(self.b_values)

    @property
    def is_integer(self) -> bool:
        return np.issubdtype(self.frames.dtype, np.integer)


def render_stack(scene: Scene, protocol: ScanProtocol, camera: CameraModel, seed: int = 0,
                 noiseless: bool = False, quantize: bool = True,
                 n_jobs: int | None = None) -> ImageStack:
    """Render every frame of a scan, in ascending scan order."""
    b_values = protocol.b_values()
    rasters = scene.feature_rasters()

    def one(k):
        return render_frame(scene, b_values[k], camera, seed, k, protocol.exposure_s,
                            noiseless, quantize, _rasters=rasters)

    if n_jobs is None or n_jobs == 1:
        frames = [one(k) for k in range(len(b_values))]
    else:
        from joblib import Parallel, delayed
        frames = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(one)(k) for k in range(len(b_values)))
    return ImageStack(np.stack([f.counts for f in frames]), b_values, camera, scene.grid,
                      [f.saturated for f in frames])


# -- stack directory I/O -----------------------------------------------------

MANIFEST = "manifest.json"


def write_pgm16(path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    ny, nx = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n65535\n".encode("ascii"))
        fh.write(raster.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise StackLoadError(f"{os.fspath(path)}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise StackLoadError(f"{os.fspath(path)}: not a binary PGM")
    nx, ny, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    need = nx * ny * np.dtype(dtype).itemsize
    if len(data) - pos < need:
        raise StackLoadError(f"{os.fspath(path)}: truncated pixel data "
                             f"({len(data) - pos} of {need} bytes)")
    return np.frombuffer(data, dtype=dtype, count=nx * ny, offset=pos).reshape(ny, nx).astype(np.uint16)


def _grid_to_dict(grid: GridSpec) -> dict:
    return {"nx": grid.nx, "ny": grid.ny, "pitch_m": grid.pitch, "standoff_m": grid.standoff_z,
            "origin_m": [grid.origin.x, grid.origin.y, grid.origin.z]}


def _grid_from_dict(d: dict) -> GridSpec:
    from .magnetostatics import Vec3
    return GridSpec(int(d["nx"]), int(d["ny"]), float(d["pitch_m"]), float(d["standoff_m"]),
                    Vec3(*d.get("origin_m", (0.0, 0.0, 0.0))))


def write_stack(stack: ImageStack, path) -> None:
    """Write ``manifest.json`` plus one file per frame.

    Integer stacks use 16-bit binary PGM; real-valued (noiseless) stacks use
    little-endian float64 raw files.
    """
    os.makedirs(path, exist_ok=True)
    integer = stack.is_integer
    entries = []
    for k, (frame, b) in enumerate(zip(stack.frames, stack.b_values)):
        if integer:
            name = f"frame_{k:04d}.pgm"
            write_pgm16(os.path.join(path, name), frame)
        else:
            name = f"frame_{k:04d}.f64"
            with open(os.path.join(path, name), "wb") as fh:
                fh.write(np.asarray(frame, dtype="<f8").tobytes())
        entries.append({"file": name, "b_scan_T": float(b), "saturated": int(stack.saturated[k])})
    manifest = {
        "format": "zfmag-stack/1",
        "dtype": "uint16" if integer else "float64",
        "grid": _grid_to_dict(stack.grid),
        "camera": {"gain_photons_per_count": stack.camera.gain,
                   "read_noise_counts": stack.camera.read_noise_rms,
                   "bit_depth": stack.camera.bit_depth},
        "frames": entries,
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_stack(path) -> ImageStack:
    mpath = os.path.join(path, MANIFEST)
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise StackLoadError(f"{mpath}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise StackLoadError(f"{mpath}: malformed manifest ({exc})") from None
    try:
        grid = _grid_from_dict(manifest["grid"])
        cam = manifest["camera"]
        camera = CameraModel(float(cam["gain_photons_per_count"]), float(cam["read_noise_counts"]),
                             int(cam["bit_depth"]))
        entries = manifest["frames"]
        dtype = manifest.get("dtype", "uint16")
        names = [e["file"] for e in entries]
        b_values = [float(e["b_scan_T"]) for e in entries]
        saturated = [int(e.get("saturated", 0)) for e in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise StackLoadError(f"{mpath}: malformed manifest ({exc!r})") from None
    if np.any(np.diff(b_values) <= 0):
        raise StackLoadError(f"{mpath}: b_scan_T values are not strictly increasing")
    frames = []
    for name in names:
        fpath = os.path.join(path, name)
        if not os.path.exists(fpath):
            raise StackLoadError(f"{name}: frame file missing")
        if dtype == "uint16":
            frame = read_pgm16(fpath)
            if frame.max(initial=0) > camera.full_well_counts:
                raise StackLoadError(f"{name}: counts exceed full well {camera.full_well_counts}")
        elif dtype == "float64":
            raw = open(fpath, "rb").read()
            if len(raw) != grid.nx * grid.ny * 8:
                raise StackLoadError(f"{name}: expected {grid.nx * grid.ny * 8} bytes, got {len(raw)}")
            frame = np.frombuffer(raw, dtype="<f8").reshape(grid.shape).astype(float)
        else:
            raise StackLoadError(f"{mpath}: unknown dtype {dtype!r}")
        if frame.shape != grid.shape:
            raise StackLoadError(f"{name}: dimensions {frame.shape[::-1]} do not match grid "
                                 f"{grid.shape[::-1]}")
        frames.append(frame)
    return ImageStack(np.stack(frames), np.array(b_values), camera, grid, saturated)


def directory_digest(path) -> str:
    """SHA-256 over all files of a directory, in name order."""
    h = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isfile(full):
            h.update(name.encode())
            with open(full, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def center_stderr_per_photon(feature: ZeroFieldFeature, b_values) -> float:
    """Cramer-Rao centre stderr (T) of a 4-parameter fit at one detected
    photon per frame on the offset; scales as ``1 / sqrt(photons)``.

    Poisson noise with variance equal to the mean is assumed.
    """
    from .lineshape import SQRT_2PI, evaluate
    b = np.asarray(b_values, dtype=float)
    f = feature
    lam = evaluate(f, b) / f.y0
    d = b - f.deltaB
    g = np.exp(-0.5 * (d / f.w) ** 2) / (f.w * SQRT_2PI)
    J = np.column_stack([np.ones_like(b), g, f.C * g * d / f.w ** 2,
                         f.C * g * (d * d - f.w ** 2) / f.w ** 3]) / f.y0
    fisher = (J / lam[:, None]).T @ J
    return float(np.sqrt(np.linalg.inv(fisher)[2, 2]))


def photons_for_center_stderr(feature: ZeroFieldFeature, b_values, target: float) -> float:
    """Photons per frame on the offset giving centre stderr ``target`` (T)."""
    return (center_stderr_per_photon(feature, b_values) / target) ** 2
