import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from airstack.ingest import DATE, SITE, SiteRecord
from airstack.interpolate import KM_PER_DEGREE
from airstack.preprocess import NormRange
from airstack.two_stage import (NEIGHBOR, augment_with_neighbor_predictions, load_neighbor_range,
                                neighbor_range, save_neighbor_range, stage2_features)

SITES = [SiteRecord(f"s{i}", -71.0 + 0.05 * (i % 5), 42.0 + 0.04 * (i // 5)) for i in range(15)]


def frame(rows):
    return pd.DataFrame({SITE: [r[0] for r in rows], DATE: pd.to_datetime([r[1] for r in rows]),
                         "stage1": [float(r[2]) for r in rows]})


def test_two_sites_swap():
    out = augment_with_neighbor_predictions(
        frame([("s0", "2000-01-01", 3.0), ("s1", "2000-01-01", 8.0)]), SITES, k=1)
    assert out[NEIGHBOR].tolist() == [8.0, 3.0]


def test_alone_on_day_falls_back():
    out = augment_with_neighbor_predictions(
        frame([("s0", "2000-01-01", 3.0), ("s1", "2000-01-01", 8.0), ("s2", "2000-01-02", 5.0)]),
        SITES, k=3)
    assert out[NEIGHBOR].tolist() == [8.0, 3.0, 5.0]


def test_idw_weighting_same_day_only():
    d = 1.0 / KM_PER_DEGREE
    sites = [SiteRecord("a", 0.0, 0.0), SiteRecord("b", d, 0.0), SiteRecord("c", -2 * d, 0.0)]
    out = augment_with_neighbor_predictions(
        frame([("a", "2000-01-01", 100.0), ("b", "2000-01-01", 0.0), ("c", "2000-01-01", 9.0),
               ("b", "2000-01-02", 50.0)]), sites, k=2, power=2)
    assert out.loc[0, NEIGHBOR] == pytest.approx(1.8, abs=1e-9)
    # day 2 has only b, so its own value; day 1 values never leak in
    assert out.loc[3, NEIGHBOR] == 50.0


def random_frame(seed, n_days=4):
    rng = np.random.default_rng(seed)
    rows = []
    for d in range(n_days):
        present = rng.random(len(SITES)) < 0.6
        for s, p in zip(SITES, present):
            if p:
                rows.append((s.site_id, f"2000-01-{d + 1:02d}", rng.normal(10, 3)))
    return frame(rows)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(1, 6), row=st.integers(0, 10 ** 6))
def test_own_prediction_never_used(seed, k, row):
    f = random_frame(seed)
    if len(f) == 0:
        return
    i = row % len(f)
    base = augment_with_neighbor_predictions(f, SITES, k=k)
    g = f.copy()
    g.loc[i, "stage1"] += 1000.0
    bumped = augment_with_neighbor_predictions(g, SITES, k=k)
    alone = (f[DATE] == f.loc[i, DATE]).sum() == 1
    if alone:
        assert bumped.loc[i, NEIGHBOR] == base.loc[i, NEIGHBOR] + 1000.0
    else:
        assert bumped.loc[i, NEIGHBOR] == base.loc[i, NEIGHBOR]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_pure_function(seed):
    f = random_frame(seed)
    a = augment_with_neighbor_predictions(f, SITES, k=3, workers=1)
    b = augment_with_neighbor_predictions(f.copy(), SITES, k=3, workers=4)
    pd.testing.assert_frame_equal(a, b)


def test_convex_combination():
    f = random_frame(3, n_days=6)
    out = augment_with_neighbor_predictions(f, SITES, k=4)
    for _, g in out.groupby(DATE):
        assert g[NEIGHBOR].between(g["stage1"].min() - 1e-9, g["stage1"].max() + 1e-9).all()


def test_errors():
    with pytest.raises(ValueError, match="not found"):
        augment_with_neighbor_predictions(frame([("s0", "2000-01-01", 1.0)]).drop(columns="stage1"),
                                          SITES)
    f = frame([("s0", "2000-01-01", 1.0), ("s1", "2000-01-01", 2.0)])
    f.loc[0, "stage1"] = np.nan
    with pytest.raises(ValueError, match="present"):
        augment_with_neighbor_predictions(f, SITES)
    with pytest.raises(Exception, match="missing from registry"):
        augment_with_neighbor_predictions(frame([("zz", "2000-01-01", 1.0)]), SITES)


def test_feature_normalization_and_range_file(tmp_path):
    f = random_frame(8)
    r = neighbor_range(f["stage1"])
    assert r == NormRange(f["stage1"].min(), f["stage1"].max())
    save_neighbor_range(r, tmp_path)
    assert load_neighbor_range(tmp_path) == r
    out = stage2_features(f[[SITE, DATE]], f["stage1"].to_numpy(), SITES, 3, 2.0, r)
    raw = augment_with_neighbor_predictions(f, SITES, k=3)[NEIGHBOR]
    np.testing.assert_allclose(out[NEIGHBOR], (raw - r.min) / (r.max - r.min), atol=1e-15)
