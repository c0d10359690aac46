"""Spatial helpers: k-nearest-neighbour inverse-distance weighting on lon/lat
points, neighbour weight sets, and regular prediction grids.

Distances are great-circle (haversine) kilometres.  Neighbour search goes
through a KD-tree on unit-sphere Cartesian coordinates; chord length is
monotone in arc length, so the tree returns the same candidates a haversine
scan would.  Candidates are then re-ranked by ``(haversine distance, index)``
so distance ties always resolve to the lower sample index.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .ingest import DATE, SITE, SiteRecord, registry_coords

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEGREE = np.pi * EARTH_RADIUS_KM / 180.0
# a sample closer than this to the query is an exact hit (1 metre)
EXACT_HIT_KM = 1e-3


@dataclass(frozen=True)
class GridSpec:
    """Regular grid of ``n_x`` by ``n_y`` square cells starting at the
    south-west corner ``(origin_lon, origin_lat)``."""

    origin_lon: float
    origin_lat: float
    n_x: int
    n_y: int
    cell_size: float = 1.0  # km

    def __post_init__(self):
        for name in ("n_x", "n_y"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"GridSpec.{name} must be a positive integer, got {v!r}")
        if not np.isfinite(self.cell_size) or self.cell_size <= 0:
            raise ValueError(f"GridSpec.cell_size must be > 0, got {self.cell_size!r}")
        if not (-180 <= self.origin_lon <= 180 and -90 <= self.origin_lat <= 90):
            raise ValueError("GridSpec origin outside valid lon/lat range")

    def to_dict(self) -> dict:
        return {
            "origin_lon": float(self.origin_lon),
            "origin_lat": float(self.origin_lat),
            "cell_size": float(self.cell_size),
            "n_x": int(self.n_x),
            "n_y": int(self.n_y),
        }


@dataclass
class NeighborWeights:
    """Per query point, the neighbour sample indices and their IDW weights.

    ``indices[i]`` and ``weights[i]`` are aligned arrays of length ``<= k``;
    each ``weights[i]`` sums to one.
    """

    indices: list
    weights: list

    def __len__(self):
        return len(self.indices)

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return np.array([w @ values[ix] for ix, w in zip(self.indices, self.weights)])


def haversine(lon1, lat1, lon2, lat2):
    """Great-circle distance in km; inputs in degrees, broadcast together."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(a, dtype=float)) for a in (lon1, lat1, lon2, lat2))
    a = (np.sin((lat2 - lat1) / 2.0) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


def _as_points(points, name="points") -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 2:
        pts = pts[None, :]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"{name} must be an (n, 2) array of (lon, lat)")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def _unit_xyz(pts: np.ndarray) -> np.ndarray:
    lon = np.radians(pts[:, 0])
    lat = np.radians(pts[:, 1])
    return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])


class SpatialIndex:
    """KD-tree over lon/lat samples returning haversine-ranked neighbours.

    The index is immutable once built and may be queried from several
    threads; ``workers`` is forwarded to the tree query.
    """

    def __init__(self, points):
        self.points = _as_points(points, "sample points")
        if len(self.points) == 0:
            raise ValueError("cannot index an empty sample set")
        self._tree = cKDTree(_unit_xyz(self.points))

    def __len__(self):
        return len(self.points)

    def query(self, query_points, k: int, workers: int = 1):
        """Return ``(dist_km, idx)``, both ``(m, k)``, sorted by distance
        then by sample index."""
        q = _as_points(query_points, "query points")
        n = len(self.points)
        k = int(min(max(k, 1), n))
        m = len(q)
        out_d = np.empty((m, k))
        out_i = np.empty((m, k), dtype=np.intp)
        if m == 0:
            return out_d, out_i
        qxyz = _unit_xyz(q)
        pending = np.arange(m)
        kq = min(n, k + 4)
        while len(pending):
            _, cand = self._tree.query(qxyz[pending], k=kq, workers=workers)
            cand = np.asarray(cand).reshape(len(pending), kq)
            qp = q[pending]
            d = haversine(qp[:, :1], qp[:, 1:], self.points[cand, 0], self.points[cand, 1])
            order = np.lexsort((cand, d), axis=1)
            d = np.take_along_axis(d, order, axis=1)
            cand = np.take_along_axis(cand, order, axis=1)
            # a point outside the candidate set could tie the k-th distance
            unsafe = (d[:, k - 1] >= d[:, -1] * (1.0 - 1e-9)) if kq < n else np.zeros(len(pending), bool)
            done = ~unsafe
            out_d[pending[done]] = d[done, :k]
            out_i[pending[done]] = cand[done, :k]
            pending = pending[unsafe]
            kq = min(n, 2 * kq)
        return out_d, out_i


def _idw_weights(dist: np.ndarray, power: float) -> np.ndarray:
    """Row-normalised ``d**-power`` weights; a row with an exact hit puts all
    weight on its first (nearest, lowest-index) column."""
    w = np.empty_like(dist)
    hit = dist[:, 0] < EXACT_HIT_KM
    if np.any(~hit):
        inv = dist[~hit] ** (-power)
        w[~hit] = inv / inv.sum(axis=1, keepdims=True)
    w[hit] = 0.0
    w[hit, 0] = 1.0
    return w


def _check_power(power):
    if not np.isfinite(power) or power <= 0:
        raise ValueError(f"IDW power must be > 0, got {power!r}")


def idw_interpolate(sample_points, sample_values, query_points, k: int = 5,
                    power: float = 2.0, workers: int = 1) -> np.ndarray:
    """Inverse-distance-weighted interpolation from the ``k`` nearest samples.

    ``k`` is clamped to the sample count.  A query within one metre of a
    sample takes that sample's value exactly.
    """
    _check_power(power)
    values = np.asarray(sample_values, dtype=float)
    pts = _as_points(sample_points, "sample points")
    if len(pts) == 0:
        raise ValueError("idw_interpolate needs at least one sample")
    if len(values) != len(pts):
        raise ValueError("sample_points and sample_values differ in length")
    if k < 1:
        raise ValueError("k must be >= 1")
    index = SpatialIndex(pts)
    dist, idx = index.query(query_points, k, workers=workers)
    if len(dist) == 0:
        return np.empty(0)
    w = _idw_weights(dist, power)
    return np.einsum("ij,ij->i", w, values[idx])


def neighbor_weights(points, k: int = 5, power: float = 2.0, exclude_self: bool = True,
                     workers: int = 1) -> NeighborWeights:
    """IDW weights of each point over its ``k`` nearest other points (or
    nearest points including itself when ``exclude_self`` is false)."""
    _check_power(power)
    pts = _as_points(points)
    n = len(pts)
    if exclude_self and n < 2:
        raise ValueError("neighbor_weights with exclude_self needs at least 2 points")
    if k < 1:
        raise ValueError("k must be >= 1")
    index = SpatialIndex(pts)
    if not exclude_self:
        dist, idx = index.query(pts, k, workers=workers)
    else:
        k = min(k, n - 1)
        dist, idx = index.query(pts, k + 1, workers=workers)
        keep = idx != np.arange(n)[:, None]
        # a coincident duplicate can sort ahead of self; drop exactly one self entry per row
        dist = np.array([d[m][:k] for d, m in zip(dist, keep)])
        idx = np.array([i[m][:k] for i, m in zip(idx, keep)])
    w = _idw_weights(dist, power)
    indices, weights = [], []
    for i in range(n):
        if dist[i, 0] < EXACT_HIT_KM:
            indices.append(idx[i, :1].copy())
            weights.append(np.ones(1))
        else:
            indices.append(idx[i].copy())
            weights.append(w[i].copy())
    return NeighborWeights(indices, weights)


def grid_points(spec: GridSpec) -> list[SiteRecord]:
    """Cell centres of ``spec``, ids ``g_<ix>_<iy>``, ordered by ix then iy.

    Uses a local equirectangular approximation around the grid origin, which
    is fine for regional grids but drifts for very large extents.
    """
    dlat = spec.cell_size / KM_PER_DEGREE
    dlon = spec.cell_size / (KM_PER_DEGREE * np.cos(np.radians(spec.origin_lat)))
    out = []
    for ix in range(spec.n_x):
        for iy in range(spec.n_y):
            out.append(SiteRecord(
                site_id=f"g_{ix}_{iy}",
                lon=float(spec.origin_lon + (ix + 0.5) * dlon),
                lat=float(spec.origin_lat + (iy + 0.5) * dlat),
            ))
    return out


def interpolate_covariates(table, sample_sites, targets, columns, k: int = 5, power: float = 2.0,
                           workers: int = 1):
    """IDW-interpolate ``columns`` of a site-day table onto ``targets``
    (SiteRecords), one date at a time.

    Only sites observed for a given column on a given day contribute to it;
    a column with no observations that day stays missing.
    """
    tgt = np.array([[s.lon, s.lat] for s in targets], dtype=float)
    tgt_ids = [s.site_id for s in targets]
    blocks = []
    for day, g in table.groupby(DATE, sort=True):
        coords = registry_coords(sample_sites, g[SITE].astype(str).to_numpy())
        block = {SITE: tgt_ids, DATE: [day] * len(tgt_ids)}
        for c in columns:
            v = g[c].to_numpy(float)
            ok = ~np.isnan(v)
            block[c] = (idw_interpolate(coords[ok], v[ok], tgt, k=k, power=power, workers=workers)
                        if ok.any() else np.full(len(tgt_ids), np.nan))
        blocks.append(pd.DataFrame(block))
    if not blocks:
        return pd.DataFrame(columns=[SITE, DATE] + list(columns))
    return pd.concat(blocks, ignore_index=True)
