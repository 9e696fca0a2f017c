"""Per-superpixel fitting of the zero-field feature across an image stack.

The stack is block-averaged, each superpixel spectrum gets a data-driven
initial guess and is then fitted with a bounded Levenberg-Marquardt loop
using the analytic Jacobian of the Gaussian-dip model.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lineshape import FWHM_PER_SIGMA, SQRT_2PI, ZeroFieldFeature
from .magnetostatics import GridSpec

# convergence controls
RSS_RTOL = 1e-10
STEP_RTOL = 1e-8
MAX_ITER = 200
_LAMBDA0 = 1e-3
_LAMBDA_MAX = 1e16
_COND_MAX = 1e14


class FitStatus(enum.IntEnum):
    """Quality codes stored in parameter maps (0 means a good fit)."""

    OK = 0
    MAX_ITER = 1
    SINGULAR = 2
    BOUNDS_HIT = 3
    LOW_SNR = 4
    THRESHOLD = 5


@dataclass
class BinnedStack:
    frames: np.ndarray
    b_values: np.ndarray
    bin_factor: int
    grid: GridSpec | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1:]


@dataclass
class Spectrum:
    b: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.b.shape != self.y.shape or self.b.ndim != 1:
            raise ValueError("b and y must be 1-D arrays of equal length")
        if len(self.b) < 5:
            raise ValueError("a spectrum needs at least 5 samples")
        if np.any(np.diff(self.b) <= 0):
            raise ValueError("b must be strictly increasing")

    @property
    def step(self) -> float:
        return float(np.min(np.diff(self.b)))

    @property
    def span(self) -> float:
        return float(self.b[-1] - self.b[0])


@dataclass
class FitResult:
    feature: ZeroFieldFeature
    stderr: np.ndarray
    rss: float
    n_iter: int
    converged: bool
    failure_reason: FitStatus | None = None

    @property
    def status(self) -> FitStatus:
        return FitStatus.OK if self.converged else self.failure_reason


def bin(stack, factor: int = 16) -> BinnedStack:
    """Block-average every frame by ``factor`` x ``factor``.

    Trailing rows/columns that do not fill a block are dropped.
    """
    frames = stack.frames if hasattr(stack, "frames") else np.asarray(stack)
    if factor < 1:
        raise ValueError("bin factor must be >= 1")
    n, ny, nx = frames.shape
    by, bx = ny // factor, nx // factor
    if by == 0 or bx == 0:
        raise ValueError(f"bin factor {factor} exceeds image size {nx}x{ny}")
    out = np.empty((n, by, bx))
    for k in range(n):
        block = np.asarray(frames[k, :by * factor, :bx * factor], dtype=float)
        out[k] = block.reshape(by, factor, bx, factor).mean(axis=(1, 3))
    grid = stack.grid.binned(factor) if hasattr(stack, "grid") else None
    b_values = getattr(stack, "b_values", None)
    return BinnedStack(out, None if b_values is None else np.asarray(b_values, float), factor, grid)


def extract(binned: BinnedStack, i: int, j: int) -> Spectrum:
    """Spectrum of superpixel at row ``i``, column ``j``."""
    ny, nx = binned.shape
    if not (0 <= i < ny and 0 <= j < nx):
        raise IndexError(f"superpixel ({i}, {j}) outside {ny}x{nx} map")
    return Spectrum(binned.b_values, binned.frames[:, i, j])


def robust_noise(y: np.ndarray) -> float:
    """Noise sigma from the MAD of second differences."""
    d2 = y[2:] - 2 * y[1:-1] + y[:-2]
    return 1.4826 * float(np.median(np.abs(d2 - np.median(d2)))) / math.sqrt(6)


def init_guess(s: Spectrum) -> tuple[ZeroFieldFeature, bool]:
    """Initial feature estimate and a low-SNR flag.

    The flag is set when the dip depth is not above three times the robust
    noise level; the guess is returned either way.
    """
    b, y = s.b, s.y
    n = len(y)
    n_outer = max(1, int(round(0.1 * n)))
    y0 = float(np.median(np.concatenate([y[:n_outer], y[-n_outer:]])))
    smooth = np.convolve(y, np.ones(3) / 3, mode="same")
    smooth[0], smooth[-1] = y[0], y[-1]
    k_min = int(np.argmin(smooth))
    depth = y0 - float(smooth[k_min])
    # floor keeps rounding-level ripple on a flat spectrum from counting as a dip
    low_snr = depth <= 3 * max(robust_noise(y), 1e-9 * abs(y0))

    half = y0 - depth / 2
    left = k_min
    while left > 0 and smooth[left] < half:
        left -= 1
    right = k_min
    while right < n - 1 and smooth[right] < half:
        right += 1
    x_left = _crossing(b, smooth, left, left + 1, half) if left < k_min else b[k_min]
    x_right = _crossing(b, smooth, right - 1, right, half) if right > k_min else b[k_min]
    w = (x_right - x_left) / FWHM_PER_SIGMA
    w = float(np.clip(w, s.step, s.span / 2))
    y0 = y0 if y0 > 0 else max(float(np.max(np.abs(y))), 1e-12)
    C = -max(depth, 0.0) * w * SQRT_2PI
    return ZeroFieldFeature(y0, C, float(b[k_min]), w), bool(low_snr)


def _crossing(b, y, k0, k1, level):
    if y[k1] == y[k0]:
        return float(b[k0])
    t = (level - y[k0]) / (y[k1] - y[k0])
    return float(b[k0] + t * (b[k1] - b[k0]))


def _model_jac(q, u):
    y0, C, c, w = q
    d = u - c
    g = np.exp(-0.5 * (d / w) ** 2) / (w * SQRT_2PI)
    model = y0 + C * g
    J = np.empty((len(u), 4))
    J[:, 0] = 1.0
    J[:, 1] = g
    J[:, 2] = C * g * d / (w * w)
    J[:, 3] = C * g * (d * d - w * w) / (w ** 3)
    return model, J


def fit(s: Spectrum, guess: ZeroFieldFeature, weighting: str = "none",
        max_iter: int = MAX_ITER) -> FitResult:
    """Bounded Levenberg-Marquardt fit of the Gaussian-dip model.

    Failures (``MAX_ITER``, ``SINGULAR``, ``BOUNDS_HIT``) are reported in the
    result, never raised. Standard errors come from the Gauss-Newton
    curvature scaled by the residual variance ``rss / (n - 4)``.
    """
    b_mid = 0.5 * (s.b[0] + s.b[-1])
    hs = 0.5 * s.span
    u = (s.b - b_mid) / hs
    ys = guess.y0
    v = s.y / ys
    n = len(u)
    if weighting == "none":
        wts = np.ones(n)
    elif weighting == "poisson":
        wts = 1.0 / np.maximum(s.y, 1.0)
        wts = wts / wts.mean()
    else:
        raise ValueError(f"unknown weighting {weighting!r}")

    lo = np.array([1e-12, -np.inf, -2.0, 0.1 * s.step / hs])
    hi = np.array([np.inf, np.inf, 2.0, 2.0])
    q = np.array([guess.y0 / ys, guess.C / (ys * hs), (guess.deltaB - b_mid) / hs, guess.w / hs])
    q = np.clip(q, lo, hi)

    model, J = _model_jac(q, u)
    r = v - model
    rss = float(np.sum(wts * r * r))
    lam = _LAMBDA0
    converged = False
    reason = None
    it = 0
    while it < max_iter:
        it += 1
        JW = J * wts[:, None]
        A = JW.T @ J
        g = JW.T @ r
        diag = np.maximum(np.diag(A), 1e-30)
        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            q_new = np.clip(q + step, lo, hi)
            model_new, J_new = _model_jac(q_new, u)
            r_new = v - model_new
            rss_new = float(np.sum(wts * r_new * r_new))
            if np.isfinite(rss_new) and rss_new < rss:
                accepted = True
                break
            lam *= 10
        if not accepted:
            # no descent direction left at numerical precision
            converged = True
            break
        dq = q_new - q
        small_rss = (rss - rss_new) <= RSS_RTOL * rss
        small_step = np.linalg.norm(dq) <= STEP_RTOL * (np.linalg.norm(q_new) + STEP_RTOL)
        q, model, J, r, rss = q_new, model_new, J_new, r_new, rss_new
        lam = max(lam / 10, 1e-15)
        if small_rss or small_step:
            converged = True
            break
    if not converged:
        reason = FitStatus.MAX_ITER

    JW = J * wts[:, None]
    A = JW.T @ J
    stderr = np.full(4, np.nan)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > _COND_MAX:
        converged, reason = False, FitStatus.SINGULAR
    else:
        cov = np.linalg.inv(A) * rss / max(n - 4, 1)
        stderr = np.sqrt(np.abs(np.diag(cov))) * np.array([ys, ys * hs, hs, hs])
    if converged and (np.any(q[[0, 2, 3]] <= lo[[0, 2, 3]]) or np.any(q[[2, 3]] >= hi[[2, 3]])):
        converged, reason = False, FitStatus.BOUNDS_HIT
    feature = ZeroFieldFeature(q[0] * ys, q[1] * ys * hs, q[2] * hs + b_mid, q[3] * hs)
    return FitResult(feature, stderr, rss * ys * ys, it, converged, reason)


def fit_spectrum(s: Spectrum, weighting: str = "none", max_iter: int = MAX_ITER) -> FitResult:
    """Guess then fit; low-SNR spectra are returned unfitted and flagged."""
    guess, low_snr = init_guess(s)
    if low_snr:
        return FitResult(guess, np.full(4, np.nan), float(np.sum((s.y - guess.y0) ** 2)), 0,
                         False, FitStatus.LOW_SNR)
    return fit(s, guess, weighting, max_iter)


@dataclass
class ParameterMaps:
    """Fitted feature maps on the superpixel grid.

    ``shift`` (T) is the negated fitted centre, i.e. the pattern's
    along-scan field. Pixels whose quality is not ``OK`` hold NaN.
    """

    shift: np.ndarray
    contrast_pct: np.ndarray
    fwhm: np.ndarray
    quality: np.ndarray
    center_err: np.ndarray
    offset: np.ndarray
    bin_factor: int = 1
    grid: GridSpec | None = None
    extras: dict = field(default_factory=dict)

    RASTERS = ("shift", "contrast_pct", "fwhm", "center_err", "offset")
    UNITS = {"shift": "T", "contrast_pct": "%", "fwhm": "T", "center_err": "T", "offset": "counts",
             "quality": "code"}

    @property
    def shape(self):
        return self.shift.shape

    @property
    def valid(self) -> np.ndarray:
        return self.quality == FitStatus.OK

    @property
    def pitch(self) -> float:
        return self.grid.pitch if self.grid is not None else self.bin_factor * 0.15e-6


def _fit_rows(frames, b_values, weighting, max_iter):
    """Fit every superpixel of a (n_steps, rows, nx) block."""
    _, rows, nx = frames.shape
    out = np.full((7, rows, nx), np.nan)
    for i in range(rows):
        for j in range(nx):
            res = fit_spectrum(Spectrum(b_values, frames[:, i, j]), weighting, max_iter)
            f = res.feature
            out[:, i, j] = (-f.deltaB, res.stderr[2], res.feature.y0,
                            100 * abs(f.C) / (f.w * SQRT_2PI) / f.y0,
                            FWHM_PER_SIGMA * f.w, res.status, res.n_iter)
    return out


def fit_all(binned: BinnedStack, weighting: str = "none", n_jobs: int | None = None,
            tile_rows: int = 8, max_iter: int = MAX_ITER) -> ParameterMaps:
    """Fit every superpixel independently and assemble parameter maps.

    Tiles of rows are fitted in parallel; each superpixel's result depends
    only on its own spectrum, so the maps are identical for any ``n_jobs``.
    """
    n, ny, nx = binned.frames.shape
    tiles = [slice(r, min(r + tile_rows, ny)) for r in range(0, ny, tile_rows)]
    args = [(np.ascontiguousarray(binned.frames[:, t]), binned.b_values, weighting, max_iter)
            for t in tiles]
    if n_jobs is None or n_jobs == 1 or len(tiles) == 1:
        parts = [_fit_rows(*a) for a in args]
    else:
        from joblib import Parallel, delayed
        parts = Parallel(n_jobs=n_jobs)(delayed(_fit_rows)(*a) for a in args)
    out = np.concatenate(parts, axis=1)
    shift, center_err, offset, contrast, fw, status, n_iter = out
    quality = status.astype(np.uint8)
    bad = quality != FitStatus.OK
    for a in (shift, center_err, contrast, fw, offset):
        a[bad] = np.nan
    return ParameterMaps(shift, contrast, fw, quality, center_err, offset, binned.bin_factor,
                         binned.grid, {"n_iter": n_iter.astype(int)})


def quality_mask(maps: ParameterMaps, min_contrast_pct: float = 0.2, max_fwhm: float = 6e-3,
                 max_center_err: float = 0.5e-3) -> np.ndarray:
    """Boolean mask, True where a superpixel should be discarded."""
    if min(min_contrast_pct, max_fwhm, max_center_err) <= 0:
        raise ValueError("thresholds must be positive")
    with np.errstate(invalid="ignore"):
        keep = (maps.valid & (maps.contrast_pct >= min_contrast_pct) & (maps.fwhm <= max_fwhm)
                & (maps.center_err <= max_center_err))
    return ~keep


def apply_mask(maps: ParameterMaps, mask: np.ndarray) -> ParameterMaps:
    """Copy of ``maps`` with masked superpixels set to NaN / ``THRESHOLD``."""
    quality = maps.quality.copy()
    quality[mask & (quality == FitStatus.OK)] = FitStatus.THRESHOLD
    rasters = {}
    for name in ParameterMaps.RASTERS:
        a = getattr(maps, name).copy()
        a[mask] = np.nan
        rasters[name] = a
    return replace(maps, quality=quality, **rasters)
