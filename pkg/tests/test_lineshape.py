import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zfmag.lineshape import (TransverseResponse, ZeroFieldFeature, evaluate, fwhm,
                             peak_contrast, respond)

features = st.builds(
    lambda y0, depth, w, c: ZeroFieldFeature(y0, -depth * y0 * w * math.sqrt(2 * math.pi), c, w),
    st.floats(0.1, 1e4), st.floats(0.0, 0.99), st.floats(1e-5, 3e-3), st.floats(-4e-3, 4e-3))


def test_extremum_at_center():
    f = ZeroFieldFeature(1.0, -2e-5, 3e-4, 0.8e-3)
    assert evaluate(f, 3e-4) == pytest.approx(1.0 - 2e-5 / (0.8e-3 * math.sqrt(2 * math.pi)))


def test_half_depth_at_half_maximum():
    f = ZeroFieldFeature(1.0, -2e-5, 3e-4, 0.8e-3)
    peak = 1.0 - evaluate(f, f.deltaB)
    for sign in (-1, 1):
        b = f.deltaB + sign * f.w * math.sqrt(2 * math.log(2))
        assert 1.0 - evaluate(f, b) == pytest.approx(peak / 2, rel=1e-12)


def test_baseline_one_percent_dip():
    # C given in fluorescence x tesla: -0.0214 in mT units
    f = ZeroFieldFeature(1.0, -0.0214e-3, 0.0, 0.849e-3)
    assert 1.0 - evaluate(f, 0.0) == pytest.approx(0.01, rel=0.01)
    assert fwhm(f) == pytest.approx(2.0e-3, rel=1e-3)


def test_fwhm_conversion():
    assert fwhm(ZeroFieldFeature(1, -1e-5, 0, 1e-3)) == pytest.approx(2.3548e-3, rel=1e-4)
    assert fwhm(ZeroFieldFeature(1, -1e-5, 0, 0.849e-3)) == pytest.approx(
        2 * math.sqrt(2 * math.log(2)) * 0.849e-3, rel=1e-15)
    assert fwhm(ZeroFieldFeature(1, -1e-5, 0, 0.849e-3)) == pytest.approx(2.000e-3, abs=1e-6)
    a, b = ZeroFieldFeature(1, -1e-5, 0, 0.4e-3), ZeroFieldFeature(1, -1e-5, 0, 1.2e-3)
    assert fwhm(b) == pytest.approx(3 * fwhm(a), rel=1e-15)


def test_peak_contrast():
    f = ZeroFieldFeature(1.0, -0.0214e-3, 0.0, 0.849e-3)
    assert peak_contrast(f) == pytest.approx(0.0214 / (0.849 * math.sqrt(2 * math.pi)), rel=1e-12)
    assert round(peak_contrast(f), 4) == 0.0101 or round(peak_contrast(f), 4) == 0.0100
    assert peak_contrast(ZeroFieldFeature(1.0, 0.0, 0.0, 1e-3)) == 0
    g = ZeroFieldFeature(2.0, f.C, f.deltaB, f.w)
    assert peak_contrast(g) == pytest.approx(peak_contrast(f) / 2, rel=1e-15)


def test_from_contrast_round_trip():
    f = ZeroFieldFeature.from_contrast(0.01, 2e-3, 1e-4, 1500.0)
    assert peak_contrast(f) == pytest.approx(0.01, rel=1e-12)
    assert fwhm(f) == pytest.approx(2e-3, rel=1e-12)
    assert f.C < 0


def test_invalid_feature():
    with pytest.raises(ValueError):
        ZeroFieldFeature(1.0, -1e-5, 0.0, 0.0)
    with pytest.raises(ValueError):
        ZeroFieldFeature(0.0, -1e-5, 0.0, 1e-3)


def test_respond_identity_and_parallel_shift():
    base = ZeroFieldFeature.from_contrast(0.01, 2e-3)
    resp = TransverseResponse()
    assert respond(base, resp, 0.0, 0.0) == base
    moved = respond(base, resp, 0.5e-3, 0.0)
    assert moved.deltaB == 0.5e-3
    assert moved.w == base.w and moved.C == base.C


def test_respond_default_transverse_example():
    base = ZeroFieldFeature.from_contrast(0.01, 2e-3)
    out = respond(base, TransverseResponse(), 0.0, 0.9e-3)
    assert out.w - base.w == pytest.approx(0.72e-3, rel=1e-12)
    assert peak_contrast(out) == pytest.approx(0.55 * peak_contrast(base), rel=1e-12)


def test_respond_knee_and_floor():
    base = ZeroFieldFeature.from_contrast(0.01, 2e-3)
    resp = TransverseResponse(0.8, 500.0, 0.2e-3)
    assert respond(base, resp, 0.0, 0.1e-3) == base
    gone = respond(base, resp, 0.0, 10e-3)
    assert peak_contrast(gone) == 0
    with pytest.raises(ValueError):
        respond(base, resp, 0.0, -1e-6)
    with pytest.raises(ValueError):
        TransverseResponse(k_w=-1)


@given(features, st.floats(0, 5e-3))
@settings(max_examples=200)
def test_evaluate_symmetric(f, delta):
    assert evaluate(f, f.deltaB + delta) == pytest.approx(evaluate(f, f.deltaB - delta), rel=1e-12)


@given(features, st.floats(-2e-3, 2e-3))
@settings(max_examples=100)
def test_parallel_field_moves_argmin_exactly(f, b_par):
    out = respond(f, TransverseResponse(), b_par, 0.0)
    assert out.deltaB == f.deltaB + b_par
    assert (out.w, out.y0) == (f.w, f.y0)
    assert out.C == pytest.approx(f.C, rel=1e-15)


@given(features, st.floats(0, 3e-3), st.floats(0, 3e-3))
@settings(max_examples=200)
def test_transverse_monotonicity(f, p1, p2):
    lo, hi = sorted((p1, p2))
    resp = TransverseResponse()
    a, b = respond(f, resp, 0.0, lo), respond(f, resp, 0.0, hi)
    assert peak_contrast(b) <= peak_contrast(a) * (1 + 1e-12)
    assert fwhm(b) >= fwhm(a)


@given(features)
@settings(max_examples=200)
def test_fluorescence_stays_positive(f):
    b = np.linspace(-4e-3, 4e-3, 801)
    assert np.min(evaluate(f, np.append(b, f.deltaB))) > 0


def test_serialisation():
    f = ZeroFieldFeature.from_contrast(0.01, 2e-3, -1e-4)
    d = json.loads(json.dumps(f.to_dict()))
    assert ZeroFieldFeature.from_dict(d) == f
    assert d["units"]["deltaB"] == "T"
    row = f.to_csv_row().split(",")
    assert len(row) == len(ZeroFieldFeature.CSV_HEADER.split(","))
    assert float(row[2]) == f.deltaB
