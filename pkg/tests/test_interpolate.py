import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from airstack.ingest import DATE, SITE, SiteRecord
from airstack.interpolate import (KM_PER_DEGREE, GridSpec, SpatialIndex, grid_points, haversine,
                                  idw_interpolate, interpolate_covariates, neighbor_weights)

from oracles import haversine_naive, idw_naive, knn_naive


def east(km, lat=0.0):
    """Longitude offset of ``km`` kilometres along a parallel (equator by default)."""
    return km / KM_PER_DEGREE


def test_exact_hit():
    pts = np.array([[-71.0, 42.0], [-70.5, 42.2], [-70.9, 41.8]])
    v = np.array([3.0, 7.0, 11.0])
    assert idw_interpolate(pts, v, pts[1:2], k=3)[0] == 7.0


def test_symmetric_pair():
    pts = np.array([[-east(1.0), 0.0], [east(1.0), 0.0]])
    assert idw_interpolate(pts, [0.0, 10.0], [[0.0, 0.0]], k=2)[0] == pytest.approx(5.0, abs=1e-12)


def test_distances_one_and_two():
    pts = np.array([[east(1.0), 0.0], [-east(2.0), 0.0]])
    got = idw_interpolate(pts, [0.0, 9.0], [[0.0, 0.0]], k=2, power=2)[0]
    # weights 1 and 1/4 -> 9 * 0.25 / 1.25
    assert got == pytest.approx(1.8, abs=1e-9)
    assert got == pytest.approx(idw_naive(pts, [0.0, 9.0], [[0.0, 0.0]], 2, 2)[0], abs=1e-12)


def test_haversine_matches_naive():
    rng = np.random.default_rng(1)
    a = rng.uniform([-180, -90], [180, 90], (200, 2))
    b = rng.uniform([-180, -90], [180, 90], (200, 2))
    np.testing.assert_allclose(haversine(a[:, 0], a[:, 1], b[:, 0], b[:, 1]),
                               haversine_naive(a[:, 0], a[:, 1], b[:, 0], b[:, 1]), rtol=1e-12)


def test_oracle_equivalence_500x200():
    rng = np.random.default_rng(2024)
    pts = rng.uniform([-75, 38], [-68, 45], (500, 2))
    vals = rng.normal(10, 3, 500)
    q = rng.uniform([-75, 38], [-68, 45], (200, 2))
    for k, power in [(1, 2.0), (5, 2.0), (8, 1.3)]:
        np.testing.assert_allclose(idw_interpolate(pts, vals, q, k=k, power=power),
                                   idw_naive(pts, vals, q, k, power), rtol=0, atol=1e-10)
    _, idx = SpatialIndex(pts).query(q, 5)
    assert [list(r) for r in idx] == knn_naive(pts, q, 5)


def test_tie_break_lower_index():
    d = east(1.0)
    pts = np.array([[d, 0.0], [-d, 0.0], [0.0, 5 * d]])
    for order in (pts, pts[[1, 0, 2]]):
        dist, idx = SpatialIndex(order).query([[0.0, 0.0]], 1)
        assert idx[0][0] == 0
    nw = neighbor_weights(np.vstack([[[0.0, 0.0]], pts]), k=1)
    assert list(nw.indices[0]) == [1]


def test_k_clamped_and_errors():
    pts = np.array([[0.0, 0.0], [east(1.0), 0.0]])
    assert np.isfinite(idw_interpolate(pts, [1.0, 2.0], [[east(0.3), 0.0]], k=10)[0])
    with pytest.raises(ValueError):
        idw_interpolate(np.empty((0, 2)), [], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        idw_interpolate(pts, [1.0, 2.0], [[np.nan, 0.0]])
    with pytest.raises(ValueError):
        idw_interpolate(pts, [1.0, 2.0], [[0.0, 0.0]], power=0)
    with pytest.raises(ValueError):
        idw_interpolate(pts, [1.0, 2.0], [[0.0, 0.0]], k=0)


def test_randomized_properties_1000():
    rng = np.random.default_rng(77)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        pts = rng.uniform([-72, 41], [-70, 43], (n, 2))
        vals = rng.normal(0, 5, n)
        k = int(rng.integers(1, 8))
        power = float(rng.uniform(0.5, 4))
        q = rng.uniform([-72.2, 40.8], [-69.8, 43.2], (3, 2))
        got = idw_interpolate(pts, vals, q, k=k, power=power)
        assert np.all(got >= vals.min() - 1e-9) and np.all(got <= vals.max() + 1e-9)
        j = int(rng.integers(n))
        hit = idw_interpolate(pts, vals, pts[j:j + 1], k=k, power=power)[0]
        # coincident duplicates resolve to the lower index
        first = np.flatnonzero((pts == pts[j]).all(axis=1))[0]
        assert hit == vals[first]


def test_grid_points():
    spec = GridSpec(-71.0, 42.0, 2, 2, cell_size=1.0)
    pts = grid_points(spec)
    assert [p.site_id for p in pts] == ["g_0_0", "g_0_1", "g_1_0", "g_1_1"]
    dlat = 1.0 / KM_PER_DEGREE
    assert pts[0].lat == pytest.approx(42.0 + 0.5 * dlat)
    assert pts[0].lon > -71.0 and pts[2].lon > pts[0].lon
    # neighbouring centres one cell apart
    d_ns = haversine(pts[0].lon, pts[0].lat, pts[1].lon, pts[1].lat)
    d_ew = haversine(pts[0].lon, pts[0].lat, pts[2].lon, pts[2].lat)
    assert d_ns == pytest.approx(1.0, rel=1e-6) and d_ew == pytest.approx(1.0, rel=1e-3)
    assert len(grid_points(GridSpec(0.0, 0.0, 1, 1))) == 1


@pytest.mark.parametrize("kw", [{"n_x": 0}, {"n_y": -1}, {"cell_size": 0.0}, {"origin_lat": 95.0}])
def test_grid_invalid(kw):
    base = dict(origin_lon=0.0, origin_lat=0.0, n_x=2, n_y=2)
    base.update(kw)
    with pytest.raises(ValueError):
        GridSpec(**base)


def test_neighbor_weights_collinear():
    pts = np.array([[0.0, 0.0], [east(1.0), 0.0], [east(3.0), 0.0]])
    nw = neighbor_weights(pts, k=1, power=2)
    assert [list(i) for i in nw.indices] == [[1], [0], [1]]
    assert all(list(w) == [1.0] for w in nw.weights)


def test_neighbor_weights_equilateral():
    # equilateral triangle (approximately, in a small patch near the equator)
    s = east(1.0)
    pts = np.array([[0.0, 0.0], [s, 0.0], [s / 2, s * np.sqrt(3) / 2]])
    nw = neighbor_weights(pts, k=2, power=2)
    for w in nw.weights:
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-4)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), n=st.integers(2, 40), k=st.integers(1, 8),
       power=st.floats(0.5, 4.0))
def test_neighbor_weights_properties(seed, n, k, power):
    pts = np.random.default_rng(seed).uniform([-72, 41], [-70, 43], (n, 2))
    nw = neighbor_weights(pts, k=k, power=power, exclude_self=True)
    for i, (idx, w) in enumerate(zip(nw.indices, nw.weights)):
        assert i not in idx
        assert len(idx) <= k
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) <= 1e-12


def test_neighbor_weights_single_point():
    with pytest.raises(ValueError):
        neighbor_weights(np.array([[0.0, 0.0]]), exclude_self=True)


def test_interpolate_covariates_per_day():
    sites = [SiteRecord("a", 0.0, 0.0), SiteRecord("b", east(2.0), 0.0)]
    t = pd.DataFrame({SITE: ["a", "b", "a", "b"],
                      DATE: pd.to_datetime(["2000-01-01"] * 2 + ["2000-01-02"] * 2),
                      "x": [0.0, 10.0, 4.0, np.nan]})
    tgt = [SiteRecord("g", east(1.0), 0.0)]
    out = interpolate_covariates(t, sites, tgt, ["x"], k=2)
    assert out["x"].tolist() == pytest.approx([5.0, 4.0])
    assert out[SITE].tolist() == ["g", "g"]
