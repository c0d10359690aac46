"""Synthetic site-day data with a known latent field.

Benchmark field (:func:`synth`)
-------------------------------
Sites are uniform in the box ``lon in [-72, -70]``, ``lat in [41, 43]``;
day ``t = 0 .. n_days-1`` starts on 2000-01-01.  With ``u_s ~ N(0, 1)`` a
per-site effect::

    f(s, t)     = 10 + 3 sin(2 pi t / 365) + 2 sin(3 lon) + 2 cos(3 lat) + u_s
    MonitorData = f + N(0, noise_sd^2)

Covariates::

    aod         = 0.1 f + N(0, 0.1^2)        linear proxy, 15% MCAR missing
    ctm         = exp(f / 8) + N(0, 0.3^2)   nonlinear proxy
    temperature = 15 + 10 sin(2 pi t / 365) + N(0, 2^2)
    elevation   = U(0, 500) per site         distractor
    noise       = N(0, 1)                    distractor

The four parts of ``f`` are independent, so ``Var(f)`` is the sum of their
variances (:func:`field_variance`) and the best achievable R^2 for the
monitor values is ``Var(f) / (Var(f) + noise_sd^2)``.

Spatial field (:func:`synth_spatial`)
-------------------------------------
A smooth spatial surface ``g`` observed only through a very noisy per-day
proxy, so a model of one site-day leaves spatially correlated residuals
that neighbouring sites' predictions can average away::

    g(lon, lat) = 2 sin(pi (lon + 72)) cos(pi (lat - 41) / 1.3)
    MonitorData = 10 + 2 sin(2 pi t / 365) + g + N(0, 0.5^2)
    proxy       = g + N(0, 1.5^2)
    season      = sin(2 pi t / 365) + N(0, 0.1^2)
    noise       = N(0, 1)
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import DATE, OUTCOME, SITE, SiteRecord, finalize_table, write_site_registry, write_table_csv

LON_RANGE = (-72.0, -70.0)
LAT_RANGE = (41.0, 43.0)
START = "2000-01-01"
MISSING_FRACTION = 0.15


@dataclass
class SynthResult:
    data_path: Path
    sites_path: Path
    table: pd.DataFrame
    sites: list
    field: np.ndarray  # latent noise-free outcome per row
    field_variance: float
    r2_max: float


def _uniform_moments(fn_sq_mean, fn_mean):
    return fn_sq_mean - fn_mean ** 2


def field_variance(n_days: int) -> float:
    """Var(f) for :func:`synth`, over uniform sites and days 0..n_days-1."""
    a, b = LON_RANGE
    e_sin = (np.cos(3 * a) - np.cos(3 * b)) / (3 * (b - a))
    e_sin2 = 0.5 - (np.sin(6 * b) - np.sin(6 * a)) / (12 * (b - a))
    var_lon = 4.0 * _uniform_moments(e_sin2, e_sin)
    a, b = LAT_RANGE
    e_cos = (np.sin(3 * b) - np.sin(3 * a)) / (3 * (b - a))
    e_cos2 = 0.5 + (np.sin(6 * b) - np.sin(6 * a)) / (12 * (b - a))
    var_lat = 4.0 * _uniform_moments(e_cos2, e_cos)
    t = np.arange(n_days)
    var_time = float(np.var(3.0 * np.sin(2 * np.pi * t / 365.0)))
    return float(var_time + var_lon + var_lat + 1.0)


def r2_max(n_days: int, noise_sd: float) -> float:
    v = field_variance(n_days)
    return v / (v + noise_sd ** 2)


def noise_sd_for_r2(n_days: int, r2: float) -> float:
    """Monitor noise level at which the oracle R^2 equals ``r2``."""
    return float(np.sqrt(field_variance(n_days) * (1.0 - r2) / r2))


def _site_layout(rng, n_sites):
    lon = rng.uniform(*LON_RANGE, n_sites)
    lat = rng.uniform(*LAT_RANGE, n_sites)
    width = max(3, len(str(n_sites - 1)))
    ids = [f"s{i:0{width}d}" for i in range(n_sites)]
    return ids, lon, lat


def _check(n_sites, n_days, noise_sd):
    if n_sites < 2:
        raise ValueError("synth needs n_sites >= 2")
    if n_days < 1:
        raise ValueError("synth needs n_days >= 1")
    if not np.isfinite(noise_sd) or noise_sd < 0:
        raise ValueError("noise_sd must be a finite non-negative number")


def _write(table, sites, out_dir, data_name):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return write_table_csv(table, out / data_name), write_site_registry(sites, out / "sites.csv")


def synth(n_sites: int, n_days: int, noise_sd: float, seed: int, out_dir,
          data_name: str = "data.csv") -> SynthResult:
    """Generate the benchmark field and write ``data.csv`` + ``sites.csv``."""
    _check(n_sites, n_days, noise_sd)
    rng = np.random.default_rng(seed)
    ids, lon, lat = _site_layout(rng, n_sites)
    u = rng.normal(0.0, 1.0, n_sites)
    elevation = rng.uniform(0.0, 500.0, n_sites)
    t = np.arange(n_days)
    dates = pd.date_range(START, periods=n_days, freq="D")
    # rows ordered day-major, matching the canonical (date, site) order once ids sort
    si = np.tile(np.arange(n_sites), n_days)
    ti = np.repeat(t, n_sites)
    n = len(si)
    season = np.sin(2 * np.pi * ti / 365.0)
    f = 10.0 + 3.0 * season + 2.0 * np.sin(3 * lon[si]) + 2.0 * np.cos(3 * lat[si]) + u[si]
    y = f + rng.normal(0.0, noise_sd, n)
    aod = 0.1 * f + rng.normal(0.0, 0.1, n)
    ctm = np.exp(f / 8.0) + rng.normal(0.0, 0.3, n)
    temperature = 15.0 + 10.0 * season + rng.normal(0.0, 2.0, n)
    noise = rng.normal(0.0, 1.0, n)
    aod[rng.random(n) < MISSING_FRACTION] = np.nan
    table = pd.DataFrame({
        SITE: np.array(ids)[si], DATE: dates[ti], OUTCOME: y,
        "aod": aod, "ctm": ctm, "temperature": temperature,
        "elevation": elevation[si], "noise": noise,
    })
    order = np.lexsort((table[SITE].to_numpy(), ti))
    table = finalize_table(table.iloc[order].reset_index(drop=True))
    f = f[order]
    sites = [SiteRecord(i, float(a), float(b)) for i, a, b in zip(ids, lon, lat)]
    dpath, spath = _write(table, sites, out_dir, data_name)
    fv = field_variance(n_days)
    return SynthResult(dpath, spath, table, sites, f, fv, fv / (fv + noise_sd ** 2))


def spatial_field(lon, lat):
    return 2.0 * np.sin(np.pi * (np.asarray(lon) - LON_RANGE[0])) * \
        np.cos(np.pi * (np.asarray(lat) - LAT_RANGE[0]) / 1.3)


def synth_spatial(n_sites: int, n_days: int, seed: int, out_dir, noise_sd: float = 0.5,
                  proxy_sd: float = 1.5, data_name: str = "data.csv") -> SynthResult:
    """Generate the spatially correlated field used for two-stage checks."""
    _check(n_sites, n_days, noise_sd)
    rng = np.random.default_rng(seed)
    ids, lon, lat = _site_layout(rng, n_sites)
    si = np.tile(np.arange(n_sites), n_days)
    ti = np.repeat(np.arange(n_days), n_sites)
    n = len(si)
    dates = pd.date_range(START, periods=n_days, freq="D")
    g = spatial_field(lon, lat)[si]
    season = np.sin(2 * np.pi * ti / 365.0)
    f = 10.0 + 2.0 * season + g
    y = f + rng.normal(0.0, noise_sd, n)
    table = pd.DataFrame({
        SITE: np.array(ids)[si], DATE: dates[ti], OUTCOME: y,
        "proxy": g + rng.normal(0.0, proxy_sd, n),
        "season": season + rng.normal(0.0, 0.1, n),
        "noise": rng.normal(0.0, 1.0, n),
    })
    order = np.lexsort((table[SITE].to_numpy(), ti))
    table = finalize_table(table.iloc[order].reset_index(drop=True))
    sites = [SiteRecord(i, float(a), float(b)) for i, a, b in zip(ids, lon, lat)]
    dpath, spath = _write(table, sites, out_dir, data_name)
    fv = float(np.var(f))
    return SynthResult(dpath, spath, table, sites, f[order], fv, fv / (fv + noise_sd ** 2))


def split_sites(table: pd.DataFrame, n_holdout: int, seed: int):
    """``(train, holdout)`` tables with ``n_holdout`` sites held out whole."""
    ids = np.array(sorted(table[SITE].unique()))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 99]))
    held = set(rng.choice(ids, size=n_holdout, replace=False).tolist())
    mask = table[SITE].isin(held).to_numpy()
    return (table.loc[~mask].reset_index(drop=True), table.loc[mask].reset_index(drop=True))
