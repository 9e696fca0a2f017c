"""Deliverables derived from parameter maps: profiles, linearity, sensitivity,
simulation comparison and colour-mapped PNGs."""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import constants

from .fitstack import ParameterMaps
from .magnetostatics import FieldMap, GridSpec


def cross_section(raster: np.ndarray, row: int, grid: GridSpec | None = None,
                  pitch: float = 16 * 0.15e-6) -> tuple[np.ndarray, np.ndarray]:
    """Profile along one row as ``(distance_um, values)``.

    Distances are pixel-centre x coordinates of ``grid`` when given, else
    measured from the left edge in steps of ``pitch``. Values are copied
    unchanged, NaN gaps included.
    """
    raster = np.asarray(raster)
    if not 0 <= row < raster.shape[0]:
        raise IndexError(f"row {row} outside 0..{raster.shape[0] - 1}")
    if grid is not None:
        x = grid.x_coords()
    else:
        x = (np.arange(raster.shape[1]) + 0.5) * pitch
    return x * 1e6, raster[row].copy()


class SensitivityMode(str, enum.Enum):
    FIELD_UNITS = "FieldUnits"
    FREQUENCY_UNITS = "FrequencyUnits"


@dataclass(frozen=True)
class SensitivityInputs:
    gamma_fwhm: float
    contrast: float
    photon_rate: float
    p_f: float = 0.70
    g_factor: float = 2.003
    h_planck: float = constants.h
    mu_b: float = constants.physical_constants["Bohr magneton"][0]
    #: Linewidth in Hz for FrequencyUnits mode; derived from gamma_fwhm if None.
    gamma_hz: float | None = None

    def __post_init__(self):
        if not 0 < self.p_f <= 1:
            raise ValueError("p_f must lie in (0, 1]")
        if self.contrast <= 0 or self.photon_rate <= 0:
            raise ValueError("contrast and photon_rate must be positive")
        if self.gamma_fwhm <= 0 or min(self.g_factor, self.h_planck, self.mu_b) <= 0:
            raise ValueError("linewidth and constants must be positive")


def sensitivity(inp: SensitivityInputs, mode=SensitivityMode.FIELD_UNITS) -> float:
    """Shot-noise-limited field sensitivity in T/sqrt(Hz)."""
    mode = SensitivityMode(mode)
    if mode is SensitivityMode.FIELD_UNITS:
        return inp.p_f * inp.gamma_fwhm / (inp.contrast * math.sqrt(inp.photon_rate))
    gamma_hz = inp.gamma_hz
    if gamma_hz is None:
        gamma_hz = inp.gamma_fwhm * inp.g_factor * inp.mu_b / inp.h_planck
    return (inp.p_f * inp.h_planck / (inp.g_factor * inp.mu_b) * gamma_hz
            / (inp.contrast * math.sqrt(inp.photon_rate)))


def sensitivity_map(maps: ParameterMaps, rate_map: np.ndarray, p_f: float = 0.70,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Per-superpixel sensitivity from fitted FWHM and contrast (FieldUnits)."""
    rate_map = np.asarray(rate_map, dtype=float)
    if rate_map.shape != maps.shape:
        raise ValueError("rate map does not match parameter maps")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = p_f * maps.fwhm / (maps.contrast_pct / 100 * np.sqrt(rate_map))
    bad = ~maps.valid | ~np.isfinite(out) | (rate_map <= 0)
    if mask is not None:
        bad |= mask
    out[bad] = np.nan
    return out


def superpixel_rate(maps: ParameterMaps, gain: float, exposure_s: float) -> np.ndarray:
    """Detected photons/s collected by each superpixel, from the fitted offset."""
    return maps.offset * gain * maps.bin_factor ** 2 / exposure_s


@dataclass
class LinearityReport:
    currents: list
    slopes: dict
    intercepts: dict
    r2: dict
    roi: str
    used_currents: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _ols(x, y):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.ptp(x) == 0:
        raise ValueError("degenerate series: all currents equal")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    ss_res = np.sum((y - (intercept + slope * x)) ** 2)
    ss_tot = np.sum((y - ym) ** 2)
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), float(intercept), float(r2)


def linearity(series, roi=None, min_current: float = 0.1) -> LinearityReport:
    """Straight-line fits of shift, FWHM and contrast against current.

    ``series`` is a list of ``(current_A, ParameterMaps)``. ``roi`` is a
    ``(row, col)`` pixel or a ``(row_slice, col_slice)`` pair averaged with
    NaN-aware means. Width and contrast use only currents >= ``min_current``.
    """
    if len(series) < 3:
        raise ValueError("linearity needs at least 3 currents")
    if roi is None:
        ny, nx = series[0][1].shape
        roi = (ny // 2, nx // 2)
    currents = np.array([float(c) for c, _ in series])
    values = {"shift": [], "fwhm": [], "contrast_pct": []}
    for _, maps in series:
        for name in values:
            a = getattr(maps, name)[roi]
            values[name].append(float(np.nanmean(a)) if np.ndim(a) else float(a))
    slopes, intercepts, r2, used = {}, {}, {}, {}
    for name, ys in values.items():
        ys = np.array(ys)
        sel = np.isfinite(ys)
        if name != "shift":
            sel &= np.abs(currents) >= min_current
        if np.count_nonzero(sel) < 2:
            raise ValueError(f"degenerate series for {name}")
        slopes[name], intercepts[name], r2[name] = _ols(currents[sel], ys[sel])
        used[name] = currents[sel].tolist()
    return LinearityReport(currents.tolist(), slopes, intercepts, r2, repr(roi), used)


def mean_pool(raster: np.ndarray, factor: int) -> np.ndarray:
    raster = np.asarray(raster, float)
    ny, nx = raster.shape[0] // factor, raster.shape[1] // factor
    return raster[:ny * factor, :nx * factor].reshape(ny, factor, nx, factor).mean(axis=(1, 3))


def compare(shift: np.ndarray, bz, mask: np.ndarray | None = None, bin_factor: int | None = None) -> dict:
    """RMSE, Pearson r and max |error| between a shift map and simulated Bz.

    ``bz`` may be a :class:`FieldMap` or raster at camera resolution (it is
    mean-pooled by ``bin_factor``) or already on the shift grid.
    """
    shift = np.asarray(shift, float)
    sim = bz.bz if isinstance(bz, FieldMap) else np.asarray(bz, float)
    if sim.shape != shift.shape:
        if bin_factor is None:
            bin_factor = sim.shape[1] // shift.shape[1]
        if bin_factor < 1:
            raise ValueError(f"simulated map {sim.shape} is smaller than shift map {shift.shape}")
        sim = mean_pool(sim, bin_factor)
    if sim.shape != shift.shape:
        raise ValueError(f"simulated map {sim.shape} does not match shift map {shift.shape}")
    use = np.isfinite(shift) & np.isfinite(sim)
    if mask is not None:
        use &= ~np.asarray(mask, bool)
    if not np.any(use):
        raise ValueError("no unmasked pixels to compare")
    x, y = shift[use], sim[use]
    err = x - y
    xc, yc = x - x.mean(), y - y.mean()
    sxy, sxx, syy = np.sum(xc * yc), np.sum(xc * xc), np.sum(yc * yc)
    r = float(np.clip(sxy / math.sqrt(sxx * syy), -1.0, 1.0)) if sxx > 0 and syy > 0 else float("nan")
    return {"rmse": float(np.sqrt(np.mean(err * err))), "pearson_r": r,
            "max_abs_err": float(np.max(np.abs(err))), "n_pixels": int(use.sum())}


class Colormap(str, enum.Enum):
    DIVERGING = "Diverging"
    SEQUENTIAL = "Sequential"


_N_COLORS = 255
MASK_COLOR = (128, 128, 128)


def _lut(cmap: Colormap) -> np.ndarray:
    t = np.linspace(0.0, 1.0, _N_COLORS)[:, None]
    if cmap is Colormap.DIVERGING:
        blue = np.array([33, 102, 172], float)
        white = np.array([255, 255, 255], float)
        red = blue[::-1]
        lo = blue + (white - blue) * np.clip(2 * t, 0, 1)
        hi = white + (red - white) * np.clip(2 * t - 1, 0, 1)
        rgb = np.where(t <= 0.5, lo, hi)
    else:
        anchors = np.array([[0, 0, 4], [120, 28, 109], [237, 105, 37], [252, 255, 164]], float)
        pos = np.linspace(0, 1, len(anchors))
        rgb = np.column_stack([np.interp(t[:, 0], pos, anchors[:, c]) for c in range(3)])
    return np.rint(rgb).astype(np.uint8)


def colorize(raster: np.ndarray, colormap=Colormap.DIVERGING, vrange=None) -> np.ndarray:
    """RGB uint8 image; NaN pixels get :data:`MASK_COLOR`.

    Diverging maps use a range symmetric about zero, so the zero level is
    the middle colour and a sign flip mirrors colour indices.
    """
    cmap = Colormap(colormap)
    raster = np.asarray(raster, float)
    finite = np.isfinite(raster)
    if vrange is None:
        if cmap is Colormap.DIVERGING:
            m = float(np.max(np.abs(raster[finite]))) if finite.any() else 0.0
            vrange = (-m, m)
        else:
            vrange = (float(raster[finite].min()), float(raster[finite].max())) if finite.any() else (0, 0)
    lo, hi = vrange
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("colour range must be finite")
    span = hi - lo
    t = np.full(raster.shape, 0.5) if span == 0 else (np.where(finite, raster, lo) - lo) / span
    idx = np.rint(np.clip(t, 0, 1) * (_N_COLORS - 1)).astype(int)
    rgb = _lut(cmap)[idx]
    rgb[~finite] = MASK_COLOR
    return rgb


def render_png(raster: np.ndarray, path, colormap=Colormap.DIVERGING, vrange=None) -> None:
    from PIL import Image
    # flip so that increasing y points up in the image
    Image.fromarray(colorize(raster, colormap, vrange)[::-1], mode="RGB").save(path, format="PNG")
