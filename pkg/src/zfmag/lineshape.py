"""Zero-field cross-relaxation feature: a Gaussian dip on a constant offset.

The model is ``y0 + C / (w sqrt(2 pi)) * exp(-(b - center)**2 / (2 w**2))``
with ``w`` the Gaussian sigma (tesla) and ``C`` the signed area, in
fluorescence units times tesla. A dip has ``C < 0``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

SQRT_2PI = math.sqrt(2 * math.pi)
#: FWHM / sigma for a Gaussian.
FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))


@dataclass(frozen=True)
class ZeroFieldFeature:
    y0: float
    C: float
    deltaB: float
    w: float

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError("w must be positive")
        if not self.y0 > 0:
            raise ValueError("y0 must be positive")

    @classmethod
    def from_contrast(cls, contrast: float, fwhm_T: float, deltaB: float = 0.0,
                      y0: float = 1.0) -> "ZeroFieldFeature":
        """Build a dip from fractional peak depth and FWHM (tesla)."""
        w = fwhm_T / FWHM_PER_SIGMA
        return cls(y0, -contrast * y0 * w * SQRT_2PI, deltaB, w)

    @property
    def amplitude(self) -> float:
        """Signed peak height above the offset, ``C / (w sqrt(2 pi))``."""
        return self.C / (self.w * SQRT_2PI)

    def is_physical(self) -> bool:
        return abs(self.amplitude) < self.y0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fwhm"] = fwhm(self)
        d["peak_contrast"] = peak_contrast(self)
        d["units"] = {"y0": "1", "C": "T", "deltaB": "T", "w": "T", "fwhm": "T",
                      "peak_contrast": "1"}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ZeroFieldFeature":
        return cls(float(d["y0"]), float(d["C"]), float(d["deltaB"]), float(d["w"]))

    CSV_HEADER = "y0,C_T,deltaB_T,w_T,fwhm_T,peak_contrast"

    def to_csv_row(self) -> str:
        return ",".join(repr(float(v)) for v in
                        (self.y0, self.C, self.deltaB, self.w, fwhm(self), peak_contrast(self)))


@dataclass(frozen=True)
class TransverseResponse:
    """Piecewise-linear broadening and contrast loss under in-plane field.

    Defaults are synthetic-scene knobs, not measured values.
    """

    k_w: float = 0.8
    k_C: float = 500.0
    B_knee: float = 0.0

    def __post_init__(self):
        if self.k_w < 0 or self.k_C < 0 or self.B_knee < 0:
            raise ValueError("transverse response coefficients must be non-negative")


def evaluate(f: ZeroFieldFeature, b_scan):
    """Fluorescence at scan field ``b_scan`` (scalar or array, tesla)."""
    u = (np.asarray(b_scan, dtype=float) - f.deltaB) / f.w
    out = f.y0 + f.C / (f.w * SQRT_2PI) * np.exp(-0.5 * u * u)
    return out if out.ndim else float(out)


def fwhm(f: ZeroFieldFeature) -> float:
    return FWHM_PER_SIGMA * f.w


def peak_contrast(f: ZeroFieldFeature) -> float:
    """Fractional peak depth relative to the offset."""
    return abs(f.C) / (f.w * SQRT_2PI) / f.y0


def respond(base: ZeroFieldFeature, resp: TransverseResponse, b_par: float,
            b_perp: float) -> ZeroFieldFeature:
    """Feature seen under an extra along-scan field and in-plane field.

    The centre moves by ``b_par``; above ``B_knee`` the width grows and the
    peak depth shrinks linearly with ``b_perp``. Depth is floored at zero.
    """
    if b_perp < 0:
        raise ValueError("b_perp must be non-negative")
    excess = max(0.0, b_perp - resp.B_knee)
    w_new = base.w + resp.k_w * excess
    depth_scale = max(0.0, 1.0 - resp.k_C * excess)
    C_new = base.C * depth_scale * w_new / base.w
    return replace(base, deltaB=base.deltaB + b_par, w=w_new, C=C_new)


def respond_arrays(base: ZeroFieldFeature, resp: TransverseResponse, b_par, b_perp):
    """Vectorised :func:`respond`; returns (deltaB, C, w) arrays."""
    b_par = np.asarray(b_par, dtype=float)
    excess = np.maximum(0.0, np.asarray(b_perp, dtype=float) - resp.B_knee)
    w_new = base.w + resp.k_w * excess
    depth_scale = np.maximum(0.0, 1.0 - resp.k_C * excess)
    C_new = base.C * depth_scale * w_new / base.w
    return base.deltaB + b_par, C_new, w_new


def evaluate_arrays(y0, C, deltaB, w, b_scan):
    """Elementwise model over parameter rasters at one scan value."""
    u = (b_scan - deltaB) / w
    return y0 + C / (w * SQRT_2PI) * np.exp(-0.5 * u * u)
