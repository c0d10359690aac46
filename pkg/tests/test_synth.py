import numpy as np
import pytest

from airstack.ingest import OUTCOME, SITE, read_csv_data, read_site_registry
from airstack.synth import (LAT_RANGE, LON_RANGE, field_variance, noise_sd_for_r2, r2_max,
                            split_sites, synth, synth_spatial)


def test_files_byte_identical(tmp_path):
    a = synth(12, 9, 1.0, 5, tmp_path / "a")
    b = synth(12, 9, 1.0, 5, tmp_path / "b")
    assert a.data_path.read_bytes() == b.data_path.read_bytes()
    assert a.sites_path.read_bytes() == b.sites_path.read_bytes()
    c = synth(12, 9, 1.0, 6, tmp_path / "c")
    assert c.data_path.read_bytes() != a.data_path.read_bytes()


def test_shape_and_layout(tmp_path):
    res = synth(25, 7, 0.5, 1, tmp_path)
    t = read_csv_data(res.data_path)
    assert len(t) == 25 * 7
    assert list(t.columns) == ["site_id", "date", OUTCOME, "aod", "ctm", "temperature",
                               "elevation", "noise"]
    frac = t["aod"].isna().mean()
    assert 0.08 < frac < 0.22
    assert t.drop(columns="aod").notna().all().all()
    sites = read_site_registry(res.sites_path)
    assert len(sites) == 25
    for s in sites:
        assert LON_RANGE[0] <= s.lon <= LON_RANGE[1] and LAT_RANGE[0] <= s.lat <= LAT_RANGE[1]
    # elevation is a per-site constant
    assert (t.groupby(SITE)["elevation"].nunique() == 1).all()


def test_field_variance_by_simulation():
    # Monte Carlo over the generating distribution agrees with the closed form
    rng = np.random.default_rng(0)
    n_days, m = 90, 2_000_000
    lon = rng.uniform(*LON_RANGE, m)
    lat = rng.uniform(*LAT_RANGE, m)
    t = rng.integers(0, n_days, m)
    f = 3 * np.sin(2 * np.pi * t / 365) + 2 * np.sin(3 * lon) + 2 * np.cos(3 * lat) + rng.normal(size=m)
    assert field_variance(n_days) == pytest.approx(f.var(), rel=5e-3)


def test_r2_max_formula():
    v = field_variance(90)
    assert r2_max(90, 1.0) == pytest.approx(v / (v + 1.0))
    sd = noise_sd_for_r2(90, 0.9)
    assert r2_max(90, sd) == pytest.approx(0.9, abs=1e-12)


def test_oracle_r2_on_generated_data(tmp_path):
    res = synth(300, 60, 1.0, 3, tmp_path)
    y = res.table[OUTCOME].to_numpy()
    r2 = 1 - np.sum((y - res.field) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r2 == pytest.approx(r2_max(60, 1.0), abs=0.02)


def test_invalid(tmp_path):
    with pytest.raises(ValueError):
        synth(1, 5, 1.0, 0, tmp_path)
    with pytest.raises(ValueError):
        synth(5, 0, 1.0, 0, tmp_path)
    with pytest.raises(ValueError):
        synth(5, 5, -1.0, 0, tmp_path)


def test_spatial_and_split(tmp_path):
    res = synth_spatial(30, 5, 2, tmp_path)
    assert len(res.table) == 150
    train, hold = split_sites(res.table, 6, seed=1)
    assert hold[SITE].nunique() == 6 and train[SITE].nunique() == 24
    assert not set(hold[SITE]) & set(train[SITE])
    t2, h2 = split_sites(res.table, 6, seed=1)
    assert list(h2[SITE]) == list(hold[SITE])
