import numpy as np
import pytest

from zfmag import fitstack, rasterio
from zfmag.magnetostatics import GridSpec, field_on_grid, square_loop


def test_raw_round_trip(tmp_path):
    a = np.random.default_rng(0).normal(size=(5, 7)).astype(np.float32).astype(float)
    a[2, 2] = np.nan
    rasterio.write_raw(str(tmp_path / "a"), a, {"units": "T"})
    back, meta = rasterio.read_raw(str(tmp_path / "a"))
    assert np.array_equal(back, a, equal_nan=True)
    assert meta["units"] == "T" and meta["nx"] == 7 and meta["byte_order"] == "little"
    (tmp_path / "a.f32").write_bytes((tmp_path / "a.f32").read_bytes()[:-4])
    with pytest.raises(ValueError, match="a.f32"):
        rasterio.read_raw(str(tmp_path / "a"))


def test_csv_round_trip(tmp_path):
    a = np.random.default_rng(1).normal(size=(3, 4)) * 1e-4
    a[0, 1] = np.nan
    rasterio.write_csv(str(tmp_path / "a.csv"), a, {"units": "T", "bin_factor": 16})
    back, meta = rasterio.read_csv(str(tmp_path / "a.csv"))
    assert np.allclose(back, a, rtol=1e-8, equal_nan=True)
    assert meta == {"units": "T", "bin_factor": 16}


def test_fieldmap_round_trip(tmp_path):
    grid = GridSpec.centered(6, 4, pitch=1e-5, standoff_z=1e-4)
    fmap = field_on_grid(square_loop(1e-3, 1.0), grid)
    files = rasterio.write_fieldmap(fmap, str(tmp_path))
    assert len(files) == 9
    back = rasterio.read_fieldmap(str(tmp_path))
    assert np.allclose(back.bz, fmap.bz, rtol=1e-6)
    assert back.grid == grid


def test_maps_round_trip(tmp_path, noisy_small_maps):
    m = noisy_small_maps
    mask = fitstack.quality_mask(m)
    rasterio.write_maps(m, str(tmp_path), mask)
    back = rasterio.read_maps(str(tmp_path))
    assert np.array_equal(back.quality, m.quality)
    assert np.allclose(back.shift, m.shift, rtol=1e-6, equal_nan=True)
    assert back.bin_factor == 16 and back.grid == m.grid
    pgm = rasterio.read_pgm8(str(tmp_path / "mask.pgm"))
    assert np.array_equal(pgm == 255, mask)
    _, meta = rasterio.read_raw(str(tmp_path / "shift"))
    assert meta["units"] == "T" and "255=masked" in meta["mask_encoding"]
