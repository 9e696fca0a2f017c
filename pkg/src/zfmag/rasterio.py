"""Raster exports: float32 raw + JSON sidecar, CSV with a ``#`` header, 8-bit PGM."""
from __future__ import annotations

import json
import os

import numpy as np

from .fitstack import FitStatus, ParameterMaps
from .magnetostatics import FieldMap, GridSpec, Vec3


def write_raw(base: str, raster: np.ndarray, meta: dict) -> None:
    """Write ``base.f32`` (little-endian float32, row-major) and ``base.json``."""
    raster = np.asarray(raster)
    ny, nx = raster.shape
    with open(base + ".f32", "wb") as fh:
        fh.write(raster.astype("<f4").tobytes())
    sidecar = {"nx": nx, "ny": ny, "dtype": "float32", "byte_order": "little", **meta}
    with open(base + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_raw(base: str) -> tuple[np.ndarray, dict]:
    with open(base + ".json") as fh:
        meta = json.load(fh)
    raw = open(base + ".f32", "rb").read()
    nx, ny = int(meta["nx"]), int(meta["ny"])
    if len(raw) != 4 * nx * ny:
        raise ValueError(f"{base}.f32: expected {4 * nx * ny} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(ny, nx).astype(float), meta


def write_csv(path: str, raster: np.ndarray, meta: dict) -> None:
    header = "\n".join(f"{k}: {json.dumps(v)}" for k, v in sorted(meta.items()))
    np.savetxt(path, np.asarray(raster, dtype=float), delimiter=",", fmt="%.9g",
               header=header, comments="# ")


def read_csv(path: str) -> tuple[np.ndarray, dict]:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = json.loads(value)
    return np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#")), meta


def write_pgm8(path: str, raster: np.ndarray) -> None:
    raster = np.asarray(raster, dtype=np.uint8)
    ny, nx = raster.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(raster.tobytes())


def read_pgm8(path: str) -> np.ndarray:
    from .synth import read_pgm16
    return read_pgm16(path).astype(np.uint8)


def grid_meta(grid: GridSpec) -> dict:
    return {"pitch_m": grid.pitch, "standoff_m": grid.standoff_z,
            "origin_m": [grid.origin.x, grid.origin.y, grid.origin.z]}


def write_fieldmap(fmap: FieldMap, out_dir: str, csv: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for comp in ("bx", "by", "bz"):
        meta = {**grid_meta(fmap.grid), "component": comp, "units": "T"}
        base = os.path.join(out_dir, comp)
        write_raw(base, fmap.component(comp), meta)
        written += [base + ".f32", base + ".json"]
        if csv:
            write_csv(base + ".csv", fmap.component(comp), {**meta, "nx": fmap.grid.nx,
                                                          "ny": fmap.grid.ny})
            written.append(base + ".csv")
    return written


def read_fieldmap(in_dir: str) -> FieldMap:
    comps = {}
    meta = None
    for comp in ("bx", "by", "bz"):
        comps[comp], meta = read_raw(os.path.join(in_dir, comp))
    grid = GridSpec(int(meta["nx"]), int(meta["ny"]), float(meta["pitch_m"]),
                    float(meta["standoff_m"]), Vec3(*meta["origin_m"]))
    return FieldMap(grid, comps["bx"], comps["by"], comps["bz"])


MASK_ENCODING = "quality codes: " + ", ".join(f"{s.value}={s.name}" for s in FitStatus) + \
                "; mask.pgm: 255=masked, 0=kept; masked raster values are NaN"


def write_maps(maps: ParameterMaps, out_dir: str, mask: np.ndarray | None = None) -> list[str]:
    """Export each map as CSV and float32 raw with a JSON sidecar."""
    os.makedirs(out_dir, exist_ok=True)
    common = {"bin_factor": maps.bin_factor, "mask_encoding": MASK_ENCODING}
    if maps.grid is not None:
        common.update(grid_meta(maps.grid))
    written = []
    for name in ParameterMaps.RASTERS:
        meta = {**common, "quantity": name, "units": ParameterMaps.UNITS[name]}
        base = os.path.join(out_dir, name)
        write_raw(base, getattr(maps, name), meta)
        write_csv(base + ".csv", getattr(maps, name), meta)
        written += [base + ".f32", base + ".json", base + ".csv"]
    write_pgm8(os.path.join(out_dir, "quality.pgm"), maps.quality)
    if mask is None:
        mask = ~maps.valid
    write_pgm8(os.path.join(out_dir, "mask.pgm"), np.where(mask, 255, 0))
    written += [os.path.join(out_dir, "quality.pgm"), os.path.join(out_dir, "mask.pgm")]
    return written


def read_maps(in_dir: str) -> ParameterMaps:
    rasters = {}
    meta = {}
    for name in ParameterMaps.RASTERS:
        rasters[name], meta = read_raw(os.path.join(in_dir, name))
    quality = read_pgm8(os.path.join(in_dir, "quality.pgm"))
    grid = None
    if "pitch_m" in meta:
        grid = GridSpec(int(meta["nx"]), int(meta["ny"]), float(meta["pitch_m"]),
                        float(meta["standoff_m"]), Vec3(*meta["origin_m"]))
    return ParameterMaps(rasters["shift"], rasters["contrast_pct"], rasters["fwhm"], quality,
                         rasters["center_err"], rasters["offset"], int(meta["bin_factor"]), grid)
