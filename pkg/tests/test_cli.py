import json
import os
import subprocess
import sys

import numpy as np
import pytest

from zfmag import cli, rasterio, synth
from zfmag.config import ConfigError, load_config
from zfmag.magnetostatics import GridSpec

SMALL = """
seed = 5
[scene]
nx = 128
ny = 96
pitch_m = 2.4e-6
[fit]
bin_factor = 4
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text(SMALL)
    return str(p)


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_emits_three_rasters(tmp_path, cfg_path):
    assert run("simulate", "--config", cfg_path, "--route", "P34", "--current", 0.5,
               "--out", tmp_path / "f") == 0
    for comp in ("bx", "by", "bz"):
        for ext in (".f32", ".json", ".csv"):
            assert (tmp_path / "f" / (comp + ext)).exists()
    summary = json.loads((tmp_path / "f" / "summary.json").read_text())
    assert summary["max_abs_bz_T"] > 0


def test_simulate_zero_current(tmp_path, cfg_path):
    assert run("simulate", "--config", cfg_path, "--current", 0, "--out", tmp_path / "f") == 0
    fmap = rasterio.read_fieldmap(str(tmp_path / "f"))
    assert not np.any(fmap.bz) and not np.any(fmap.bx) and not np.any(fmap.by)


def test_simulate_matches_library_bytes(tmp_path, cfg_path):
    assert run("simulate", "--config", cfg_path, "--threads", 3, "--out", tmp_path / "cli") == 0
    cfg = load_config(cfg_path)
    rasterio.write_fieldmap(cli._field(cfg, 1), str(tmp_path / "lib"))
    for name in ("bx.f32", "by.f32", "bz.f32", "bz.json", "bz.csv"):
        assert (tmp_path / "cli" / name).read_bytes() == (tmp_path / "lib" / name).read_bytes()


def test_synth_hash_fixed_by_seed(tmp_path, cfg_path):
    for d in ("a", "b"):
        assert run("synth", "--config", cfg_path, "--out", tmp_path / d) == 0
    assert run("synth", "--config", cfg_path, "--seed", 6, "--out", tmp_path / "c") == 0
    digest = synth.directory_digest
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert digest(tmp_path / "a") != digest(tmp_path / "c")
    stack = synth.read_stack(tmp_path / "a")
    assert stack.n_steps == 81


def test_synth_noiseless_zero_variance(tmp_path, cfg_path):
    for d in ("a", "b"):
        assert run("synth", "--config", cfg_path, "--noiseless", "--seed", d == "a" and 1 or 2,
                   "--out", tmp_path / d) == 0
    a = synth.read_stack(tmp_path / "a").frames
    b = synth.read_stack(tmp_path / "b").frames
    assert a.dtype == np.float64
    # only the texture depends on the seed; normalised frames carry no noise
    assert np.allclose(a / a[0], b / b[0], rtol=1e-12)
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["noiseless"] is True


@pytest.fixture
def stack_dir(tmp_path, cfg_path):
    assert run("synth", "--config", cfg_path, "--out", tmp_path / "stack") == 0
    return tmp_path / "stack"


def test_fit_outputs_and_rerun_identity(tmp_path, cfg_path, stack_dir):
    for d in ("m1", "m2"):
        assert run("fit", stack_dir, "--config", cfg_path, "--out", tmp_path / d) == 0
    names = sorted(os.listdir(tmp_path / "m1"))
    for required in ("shift.f32", "contrast_pct.csv", "fwhm.json", "mask.pgm", "quality.pgm",
                     "fit_summary.json", "timing.json"):
        assert required in names
    for name in names:
        if name != "timing.json":
            assert (tmp_path / "m1" / name).read_bytes() == (tmp_path / "m2" / name).read_bytes()
    summary = json.loads((tmp_path / "m1" / "fit_summary.json").read_text())
    assert summary["shape_rows_cols"] == [24, 32]
    assert summary["converged_fraction"] > 0.9
    assert "fit_seconds" in json.loads((tmp_path / "m1" / "timing.json").read_text())


def test_fit_full_scale_superpixel_count(tmp_path):
    grid = GridSpec.centered(2448, 2048)
    frames = np.full((5, 2048, 2448), 1000, dtype=np.uint16)
    stack = synth.ImageStack(frames, np.linspace(-4e-3, 4e-3, 5), synth.CameraModel(), grid)
    synth.write_stack(stack, tmp_path / "big")
    assert run("fit", tmp_path / "big", "--out", tmp_path / "m") == 0
    summary = json.loads((tmp_path / "m" / "fit_summary.json").read_text())
    assert summary["superpixels"] == 153 * 128
    assert summary["shape_rows_cols"] == [128, 153]


def test_fit_corrupt_stack(tmp_path, cfg_path, stack_dir, capsys):
    p = stack_dir / "frame_0010.pgm"
    p.write_bytes(p.read_bytes()[:100])
    assert run("fit", stack_dir, "--config", cfg_path, "--out", tmp_path / "m") == 1
    assert "frame_0010.pgm" in capsys.readouterr().err


@pytest.fixture
def maps_dir(tmp_path, cfg_path, stack_dir):
    assert run("fit", stack_dir, "--config", cfg_path, "--out", tmp_path / "maps") == 0
    assert run("simulate", "--config", cfg_path, "--out", tmp_path / "sim") == 0
    return tmp_path / "maps"


def test_report_with_and_without_sim(tmp_path, cfg_path, maps_dir):
    assert run("report", maps_dir, "--config", cfg_path, "--sim", tmp_path / "sim",
               "--out", tmp_path / "r1") == 0
    r1 = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert {"rmse", "pearson_r"} <= set(r1["comparison"])
    for name in ("shift.png", "contrast.png", "fwhm.png", "profile_shift.csv"):
        assert (tmp_path / "r1" / name).exists()
    assert run("report", maps_dir, "--config", cfg_path, "--out", tmp_path / "r2") == 0
    r2 = json.loads((tmp_path / "r2" / "report.json").read_text())
    assert "comparison" not in r2
    assert "sensitivity" in r2


def test_report_bad_row_and_missing_input(tmp_path, cfg_path, maps_dir, capsys):
    assert run("report", maps_dir, "--config", cfg_path, "--row", 24, "--out", tmp_path / "r") == 1
    assert "out of range" in capsys.readouterr().err
    assert run("report", tmp_path / "nope", "--out", tmp_path / "r") == 1


def test_roundtrip_default_config_passes(tmp_path, capsys):
    assert run("roundtrip", "--out", tmp_path / "rt") == 0
    out = capsys.readouterr().out
    assert "PASS rmse" in out and "roundtrip PASSED" in out


def test_roundtrip_tight_tolerance_fails(tmp_path, cfg_path, capsys):
    assert run("roundtrip", "--config", cfg_path, "--rmse-tol", 1e-12, "--out", tmp_path / "rt") == 1
    captured = capsys.readouterr()
    assert "FAIL rmse" in captured.out
    assert "outside configured tolerances" in captured.err


def test_roundtrip_currents_adds_linearity(tmp_path, cfg_path):
    assert run("roundtrip", "--config", cfg_path, "--noiseless", "--currents", "0.1,0.3,0.5",
               "--out", tmp_path / "rt") == 0
    rep = json.loads((tmp_path / "rt" / "roundtrip.json").read_text())
    assert rep["linearity"]["currents"] == [0.1, 0.3, 0.5]
    assert rep["linearity"]["r2"]["shift"] > 0.9999


def test_bad_config_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scene]\nbogus_key = 1\n")
    assert run("simulate", "--config", bad, "--out", tmp_path / "o") == 1
    assert "bogus_key" in capsys.readouterr().err
    bad.write_text("[scene]\nnx = 'wide'\n")
    assert run("simulate", "--config", bad, "--out", tmp_path / "o") == 1
    bad.write_text("[scene\n")
    assert run("simulate", "--config", bad, "--out", tmp_path / "o") == 1
    assert run("simulate", "--config", tmp_path / "missing.toml") == 1
    assert run("simulate", "--threads", 0) == 1
    assert run("simulate", "--route", "P99") == 1


def test_config_errors_direct(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[fit]\nweighting = 'cauchy'\n")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_env_var_sets_output_root(tmp_path, cfg_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ROOT_ENV, str(tmp_path / "root"))
    assert run("simulate", "--config", cfg_path) == 0
    assert (tmp_path / "root" / "field" / "bz.f32").exists()


def test_console_entry_point(tmp_path, cfg_path):
    proc = subprocess.run([sys.executable, "-m", "zfmag.cli", "simulate", "--config", cfg_path,
                           "--out", str(tmp_path / "f")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "simulate:" in proc.stdout
