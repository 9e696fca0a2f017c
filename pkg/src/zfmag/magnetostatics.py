"""Static magnetic fields of filamentary current paths.

All quantities are SI: metres, amperes, tesla. Fields are evaluated with the
closed-form Biot-Savart expression for a straight finite segment and summed
over the segments of a polyline.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

MU0 = 4e-7 * math.pi
#: Points closer than this to a segment are treated as on-wire.
EXCLUSION_RADIUS = 1e-9


@dataclass(frozen=True)
class Vec3:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("Vec3 components must be finite")

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Vec3":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def norm(self) -> float:
        return math.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2)

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __neg__(self) -> "Vec3":
        return Vec3(-self.x, -self.y, -self.z)

    def __mul__(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    __rmul__ = __mul__


@dataclass(frozen=True)
class Segment:
    start: Vec3
    end: Vec3

    def __post_init__(self):
        if self.start == self.end:
            raise ValueError("segment has zero length")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end.to_array() - self.start.to_array()))


@dataclass(frozen=True)
class CurrentPath:
    """Connected polyline of segments carrying one current (signed, amperes)."""

    segments: tuple
    current: float

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not math.isfinite(self.current):
            raise ValueError("current must be finite")
        for a, b in zip(self.segments, self.segments[1:]):
            if a.end != b.start:
                raise ValueError("segments do not form a connected polyline")

    @classmethod
    def from_points(cls, points, current: float) -> "CurrentPath":
        pts = [p if isinstance(p, Vec3) else Vec3(*p) for p in points]
        return cls(tuple(Segment(a, b) for a, b in zip(pts, pts[1:])), current)

    def with_current(self, current: float) -> "CurrentPath":
        return CurrentPath(self.segments, current)

    def endpoints(self) -> np.ndarray:
        """(n_segments, 2, 3) array of segment start/end points."""
        return np.array([[s.start.to_array(), s.end.to_array()] for s in self.segments])


@dataclass(frozen=True)
class PathBundle:
    """Several current paths evaluated by superposition (e.g. a filament bundle)."""

    paths: tuple

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))

    def __iter__(self):
        return iter(self.paths)

    def __len__(self):
        return len(self.paths)

    @property
    def current(self) -> float:
        return sum(p.current for p in self.paths)

    def scaled(self, factor: float) -> "PathBundle":
        return PathBundle(tuple(p.with_current(p.current * factor) for p in self.paths))


class Route(str, enum.Enum):
    """Pair of cross arms the current is driven through, in flow order."""

    P34 = "P34"
    P14 = "P14"
    P12 = "P12"
    P13 = "P13"
    P23 = "P23"
    P24 = "P24"

    @property
    def arms(self) -> tuple[int, int]:
        return int(self.value[1]), int(self.value[2])


# Arm unit vectors in the pattern plane: 1 left, 2 right, 3 bottom, 4 top.
ARM_DIRECTIONS = {
    1: np.array([-1.0, 0.0, 0.0]),
    2: np.array([1.0, 0.0, 0.0]),
    3: np.array([0.0, -1.0, 0.0]),
    4: np.array([0.0, 1.0, 0.0]),
}


@dataclass(frozen=True)
class CrossPattern:
    arm_length: float = 5e-3
    wire_width: float = 65e-6
    n_filaments: int = 9
    center: Vec3 = Vec3()

    def __post_init__(self):
        if self.wire_width <= 0:
            raise ValueError("wire_width must be positive")
        if self.arm_length <= 0:
            raise ValueError("arm_length must be positive")
        if self.n_filaments < 1 or self.n_filaments % 2 == 0:
            raise ValueError("n_filaments must be a positive odd integer")

    def filament_offsets(self) -> np.ndarray:
        n = self.n_filaments
        return ((np.arange(n) + 0.5) / n - 0.5) * self.wire_width


@dataclass(frozen=True)
class GridSpec:
    """Raster of pixel centres in a plane parallel to the pattern.

    Pixel (row j, column i) sits at
    ``origin + ((i + 0.5) * pitch, (j + 0.5) * pitch, standoff_z)``.
    Row index increases with y.
    """

    nx: int
    ny: int
    pitch: float = 0.15e-6
    standoff_z: float = 0.11e-3
    origin: Vec3 = Vec3()

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid must have at least one pixel")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        if self.standoff_z < 0:
            raise ValueError("standoff_z must be non-negative")

    @classmethod
    def centered(cls, nx: int, ny: int, pitch: float = 0.15e-6,
                 standoff_z: float = 0.11e-3, center: Vec3 = Vec3()) -> "GridSpec":
        """Grid whose field of view is centred on ``center`` (x, y)."""
        origin = Vec3(center.x - nx * pitch / 2, center.y - ny * pitch / 2, center.z)
        return cls(nx, ny, pitch, standoff_z, origin)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def x_coords(self) -> np.ndarray:
        return self.origin.x + (np.arange(self.nx) + 0.5) * self.pitch

    def y_coords(self) -> np.ndarray:
        return self.origin.y + (np.arange(self.ny) + 0.5) * self.pitch

    def z_plane(self) -> float:
        return self.origin.z + self.standoff_z

    def points(self, rows: slice = slice(None)) -> np.ndarray:
        """Pixel centres as an (n_rows, nx, 3) array."""
        ys = self.y_coords()[rows]
        xs = self.x_coords()
        pts = np.empty((len(ys), self.nx, 3))
        pts[..., 0] = xs[None, :]
        pts[..., 1] = ys[:, None]
        pts[..., 2] = self.z_plane()
        return pts

    def binned(self, factor: int) -> "GridSpec":
        """Grid of ``factor`` x ``factor`` superpixels (trailing partial blocks dropped)."""
        return GridSpec(self.nx // factor, self.ny // factor, self.pitch * factor,
                        self.standoff_z, self.origin)


@dataclass
class FieldMap:
    grid: GridSpec
    bx: np.ndarray
    by: np.ndarray
    bz: np.ndarray
    #: True where some pixel fell inside the on-wire exclusion radius.
    on_wire: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("bx", "by", "bz"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != self.grid.shape:
                raise ValueError(f"{name} has shape {a.shape}, grid is {self.grid.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, a)
        if self.on_wire is None:
            self.on_wire = np.zeros(self.grid.shape, dtype=bool)

    def component(self, name: str) -> np.ndarray:
        return getattr(self, name)

    @property
    def b_transverse(self) -> np.ndarray:
        """In-plane field magnitude sqrt(bx**2 + by**2)."""
        return np.hypot(self.bx, self.by)


def _segments_field(starts, ends, currents, points):
    """Field of many segments at many points.

    starts, ends: (S, 3); currents: (S,); points: (..., 3).
    Returns (field (..., 3), on_wire mask (...)).
    """
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 3)
    total = np.zeros_like(flat)
    flagged = np.zeros(flat.shape[0], dtype=bool)
    for a, b, current in zip(starts, ends, currents):
        r1 = flat - a
        r2 = flat - b
        n1 = np.sqrt(np.einsum("ij,ij->i", r1, r1))
        n2 = np.sqrt(np.einsum("ij,ij->i", r2, r2))
        cross = np.cross(r1, r2)
        dot = np.einsum("ij,ij->i", r1, r2)
        seg = b - a
        seg_len = np.sqrt(seg @ seg)
        # distance to supporting line and position along the segment
        dist = np.sqrt(np.einsum("ij,ij->i", cross, cross)) / seg_len
        along = (r1 @ seg) / seg_len
        bad = (dist < EXCLUSION_RADIUS) & (along > -EXCLUSION_RADIUS) & (along < seg_len + EXCLUSION_RADIUS)
        denom = n1 * n2 * (n1 * n2 + dot)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = MU0 * current / (4 * math.pi) * (n1 + n2) / denom
        scale = np.where(bad | (denom == 0), 0.0, scale)
        total += cross * scale[:, None]
        flagged |= bad
    return total.reshape(pts.shape), flagged.reshape(pts.shape[:-1])


def segment_field(seg: Segment, current: float, p: Vec3) -> tuple[Vec3, bool]:
    """Field of one straight segment at ``p``.

    Returns ``(B, on_wire)``. Inside the exclusion radius the field is zero
    and ``on_wire`` is True.
    """
    b, flag = _segments_field(seg.start.to_array()[None], seg.end.to_array()[None],
                              [current], p.to_array())
    return Vec3.from_array(b), bool(flag)


def _as_bundle(path) -> PathBundle:
    if isinstance(path, PathBundle):
        return path
    if isinstance(path, CurrentPath):
        return PathBundle((path,))
    return PathBundle(tuple(path))


def _flatten(path):
    bundle = _as_bundle(path)
    starts, ends, currents = [], [], []
    for p in bundle:
        for s in p.segments:
            starts.append(s.start.to_array())
            ends.append(s.end.to_array())
            currents.append(p.current)
    return np.array(starts).reshape(-1, 3), np.array(ends).reshape(-1, 3), np.array(currents)


def path_field(path, p: Vec3) -> Vec3:
    """Superposed field of a path (or bundle of paths) at ``p``."""
    b, _ = path_field_array(path, p.to_array())
    return Vec3.from_array(b)


def path_field_array(path, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`path_field` over an (..., 3) array of points."""
    starts, ends, currents = _flatten(path)
    return _segments_field(starts, ends, currents, points)


def build_cross(pattern: CrossPattern, route: Route | str, current: float = 1.0) -> PathBundle:
    """Filament bundle for current driven between two arms of a cross.

    Each of the ``n_filaments`` parallel polylines carries
    ``current / n_filaments``. Opposite arms give a straight path; adjacent
    arms give an L with a sharp corner at the (offset) centre.
    """
    route = Route(route)
    a, b = route.arms
    d_in = -ARM_DIRECTIONS[a]  # flow direction along the first leg
    d_out = ARM_DIRECTIONS[b]
    c = pattern.center.to_array()
    L = pattern.arm_length
    n1 = np.array([-d_in[1], d_in[0], 0.0])
    n2 = np.array([-d_out[1], d_out[0], 0.0])
    i_fil = current / pattern.n_filaments
    paths = []
    for off in pattern.filament_offsets():
        start = c - d_in * L + n1 * off
        end = c + d_out * L + n2 * off
        if np.allclose(d_in, d_out):
            corner = c + n1 * off
        else:
            # intersection of the two offset legs
            corner = c + n1 * off + n2 * off
        paths.append(CurrentPath.from_points([start, corner, end], i_fil))
    return PathBundle(tuple(paths))


def field_on_grid(path, grid: GridSpec, n_jobs: int | None = None,
                  rows_per_tile: int = 64) -> FieldMap:
    """Evaluate the field at every pixel centre of ``grid``.

    Rows are processed in independent tiles; every pixel is computed by the
    same per-point arithmetic, so the result does not depend on ``n_jobs``.
    """
    starts, ends, currents = _flatten(path)
    tiles = [slice(r, min(r + rows_per_tile, grid.ny)) for r in range(0, grid.ny, rows_per_tile)]

    def work(rows):
        return _segments_field(starts, ends, currents, grid.points(rows))

    if n_jobs is None or n_jobs == 1:
        parts = [work(t) for t in tiles]
    else:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(work)(t) for t in tiles)
    b = np.concatenate([p[0] for p in parts], axis=0)
    flags = np.concatenate([p[1] for p in parts], axis=0)
    return FieldMap(grid, b[..., 0], b[..., 1], b[..., 2], flags)


def square_loop(side: float, current: float, center: Vec3 = Vec3()) -> CurrentPath:
    """Square loop in a plane of constant z, counter-clockwise seen from +z."""
    h = side / 2
    c = center
    pts = [Vec3(c.x - h, c.y - h, c.z), Vec3(c.x + h, c.y - h, c.z),
           Vec3(c.x + h, c.y + h, c.z), Vec3(c.x - h, c.y + h, c.z),
           Vec3(c.x - h, c.y - h, c.z)]
    return CurrentPath.from_points(pts, current)


def square_coil_field(side: float, turns: int, current: float, p: Vec3,
                      center: Vec3 = Vec3()) -> Vec3:
    """Field of a square coil of ``turns`` coincident loops."""
    return path_field(square_loop(side, current * turns, center), p)
