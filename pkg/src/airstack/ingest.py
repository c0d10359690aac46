"""Reading site-day tables.

A site-day table is a :class:`pandas.DataFrame` with a string ``site_id``
column, a ``date`` column (``datetime64``), an optional ``MonitorData``
outcome column and numeric covariate columns.  Missing cells are NaN in
memory and empty fields on disk.  Rows are always kept sorted by
``(date, site_id)``.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

SITE = "site_id"
DATE = "date"
KEYS = [SITE, DATE]
OUTCOME = "MonitorData"

_KEY_ALIASES = {
    "site_id": SITE, "site no.": SITE, "site no": SITE, "site": SITE,
    "date": DATE,
}
# numeric missing-value codes we refuse rather than silently accept
SENTINELS = (-999.0, -9999.0)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0):
            raise DataError(f"site {self.site_id!r}: lon {self.lon} outside [-180, 180]")
        if not (-90.0 <= self.lat <= 90.0):
            raise DataError(f"site {self.site_id!r}: lat {self.lat} outside [-90, 90]")


def read_site_registry(path) -> list[SiteRecord]:
    """Load a ``site_id,lon,lat`` CSV."""
    df = pd.read_csv(path, dtype={SITE: str}, float_precision="round_trip")
    missing = {SITE, "lon", "lat"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: site registry lacks columns {sorted(missing)}")
    sites = [SiteRecord(str(r.site_id), float(r.lon), float(r.lat)) for r in df.itertuples(index=False)]
    check_registry(sites)
    return sites


def write_site_registry(sites, path):
    df = pd.DataFrame({SITE: [s.site_id for s in sites],
                       "lon": [s.lon for s in sites],
                       "lat": [s.lat for s in sites]})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return Path(path)


def check_registry(sites):
    ids = [s.site_id for s in sites]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise DataError(f"duplicate site ids in registry: {dup[:5]}")


def registry_coords(sites, site_ids) -> np.ndarray:
    """(n, 2) lon/lat array for ``site_ids`` looked up in ``sites``."""
    lookup = {s.site_id: (s.lon, s.lat) for s in sites}
    missing = sorted(set(site_ids) - set(lookup))
    if missing:
        raise DataError(f"sites missing from registry: {missing[:5]}")
    return np.array([lookup[s] for s in site_ids], dtype=float).reshape(-1, 2)


def _parse_dates(values: pd.Series, where: str) -> pd.Series:
    for fmt in ("ISO8601", "%m/%d/%Y"):
        try:
            return pd.to_datetime(values, format=fmt)
        except (ValueError, TypeError):
            continue
    raise DataError(f"{where}: dates must be YYYY-MM-DD or MM/DD/YYYY")


def covariate_columns(table: pd.DataFrame) -> list[str]:
    return [c for c in table.columns if c not in KEYS and c != OUTCOME]


def finalize_table(df: pd.DataFrame, where: str = "table") -> pd.DataFrame:
    """Validate keys and numeric columns, then return canonically sorted."""
    missing = [k for k in KEYS if k not in df.columns]
    if missing:
        raise DataError(f"{where}: missing key columns {missing}")
    if len(df.columns) < 3:
        raise DataError(f"{where}: needs at least one column besides site_id and date")
    df = df.copy()
    df[SITE] = df[SITE].astype(str)
    if not np.issubdtype(df[DATE].dtype, np.datetime64):
        df[DATE] = _parse_dates(df[DATE], where)
    dup = df.duplicated(KEYS, keep=False)
    if dup.any():
        row = df.loc[dup].iloc[0]
        raise DataError(f"{where}: duplicate (site_id, date) key "
                        f"({row[SITE]}, {row[DATE].date().isoformat()})")
    for c in df.columns:
        if c in KEYS:
            continue
        df[c] = df[c].astype(float)
        hits = df[c].isin(SENTINELS)
        if hits.any():
            raise DataError(f"{where}: column {c!r} holds sentinel value "
                            f"{df[c][hits].iloc[0]:g}; encode missing data as empty fields")
    return df.sort_values([DATE, SITE], kind="mergesort").reset_index(drop=True)


def read_csv_data(csv_path) -> pd.DataFrame:
    """Read a site-day CSV (``site_id,date,[MonitorData,]covariates...``).

    Column headers ``Site No.`` and ``Date`` are accepted for the key
    columns.  Empty fields become NaN; any other non-numeric cell is an
    error naming the line and column.
    """
    csv_path = Path(csv_path)
    if not csv_path.exists():
        raise FileNotFoundError(f"data file not found: {csv_path}")
    head = pd.read_csv(csv_path, nrows=0).columns
    rename = {c: _KEY_ALIASES[c.strip().lower()] for c in head if c.strip().lower() in _KEY_ALIASES}
    key_src = {v: k for k, v in rename.items()}
    if set(key_src) != set(KEYS):
        raise DataError(f"{csv_path}: header must contain site_id and date columns")
    df = pd.read_csv(
        csv_path,
        dtype={key_src[SITE]: str, key_src[DATE]: str},
        keep_default_na=False,
        na_values={c: [""] for c in head if c not in key_src.values()},
        float_precision="round_trip",
    ).rename(columns=rename)
    for c in df.columns:
        if c in KEYS or pd.api.types.is_numeric_dtype(df[c]):
            continue
        conv = pd.to_numeric(df[c], errors="coerce")
        bad = np.flatnonzero(conv.isna() & df[c].notna())
        line = int(bad[0]) + 2  # header is line 1
        raise DataError(f"{csv_path}: line {line}, column {c!r}: "
                        f"cannot parse {df[c].iloc[bad[0]]!r} as a number")
    return finalize_table(df, str(csv_path))


def write_table_csv(table: pd.DataFrame, path) -> Path:
    """Write a site-day table with ISO dates and round-trip float text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = table.copy()
    out[DATE] = out[DATE].dt.strftime("%Y-%m-%d")
    out.to_csv(path, index=False, na_rep="", lineterminator="\n")
    return path


def save_checkpoint(table: pd.DataFrame, stage_name: str, directory, manifest=None) -> Path:
    """Write ``<directory>/<stage_name>.csv``; a later call with the same
    stage name overwrites the file, while the manifest keeps both events."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise DataError(f"cannot create checkpoint directory {directory}: {err}") from err
    if not os.access(directory, os.W_OK):
        raise DataError(f"checkpoint directory is not writable: {directory}")
    path = write_table_csv(table, directory / f"{stage_name}.csv")
    if manifest is not None:
        manifest.add_checkpoint(stage_name, path)
    return path


# matrix tree ---------------------------------------------------------------

def _calendar(start, end, step_days=1) -> pd.DatetimeIndex:
    return pd.date_range(pd.Timestamp(start), pd.Timestamp(end), freq=f"{int(step_days)}D")


def write_matrix_variable(root, variable: str, values, site_ids, start, end, step_days: int = 1) -> Path:
    """Store one variable as ``root/<variable>/values.csv`` (rows = sites,
    columns = dates, empty = missing) plus ``manifest.yml``."""
    values = np.asarray(values, dtype=float)
    dates = _calendar(start, end, step_days)
    if values.shape != (len(site_ids), len(dates)):
        raise DataError(f"matrix for {variable!r} has shape {values.shape}, "
                        f"expected {(len(site_ids), len(dates))}")
    d = Path(root) / variable
    d.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(values).to_csv(d / "values.csv", header=False, index=False, na_rep="",
                                lineterminator="\n")
    meta = {
        "variable": variable,
        "sites": [str(s) for s in site_ids],
        "start": pd.Timestamp(start).strftime("%Y-%m-%d"),
        "end": dates[-1].strftime("%Y-%m-%d"),
        "step_days": int(step_days),
    }
    with open(d / "manifest.yml", "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    return d


def _read_matrix_variable(vdir: Path, site_ids, calendar: pd.DatetimeIndex):
    with open(vdir / "manifest.yml") as fh:
        meta = yaml.safe_load(fh)
    name = str(meta.get("variable", vdir.name))
    sites = [str(s) for s in meta.get("sites", [])]
    if sites != list(site_ids):
        raise DataError(f"{vdir}: site order in manifest does not match the registry")
    dates = _calendar(meta["start"], meta["end"], meta.get("step_days", 1))
    raw = pd.read_csv(vdir / "values.csv", header=None, float_precision="round_trip",
                      keep_default_na=False, na_values=[""])
    mat = raw.to_numpy(dtype=float)
    if mat.shape[0] != len(site_ids):
        raise DataError(f"{vdir}: matrix has {mat.shape[0]} rows but the registry has "
                        f"{len(site_ids)} sites")
    if mat.shape[1] != len(dates):
        raise DataError(f"{vdir}: matrix has {mat.shape[1]} columns but the declared "
                        f"date range has {len(dates)} dates")
    wide = pd.DataFrame(mat.T, index=dates, columns=list(site_ids)).reindex(calendar)
    return name, wide


def assemble_from_matrices(root, registry, calendar, workers: int = 1) -> pd.DataFrame:
    """Build a site-day table from a tree of per-variable matrices.

    Each variable is reindexed onto ``calendar`` (daily dates); calendar
    days a variable does not cover become missing.
    """
    root = Path(root)
    check_registry(registry)
    site_ids = [s.site_id for s in registry]
    calendar = pd.DatetimeIndex(pd.to_datetime(list(calendar))).sort_values()
    vdirs = sorted(p for p in root.iterdir() if (p / "manifest.yml").exists()) if root.is_dir() else []
    if not vdirs:
        raise DataError(f"no variables found under matrix root {root}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(lambda d: _read_matrix_variable(d, site_ids, calendar), vdirs))
    names = [n for n, _ in parts]
    if len(set(names)) != len(names) or set(names) & set(KEYS):
        raise DataError(f"overlapping or reserved variable names in matrix tree: {names}")
    grid = pd.MultiIndex.from_product([calendar, site_ids], names=[DATE, SITE])
    cols = {}
    for name, wide in sorted(parts, key=lambda t: t[0]):
        cols[name] = wide.to_numpy().reshape(-1)
    df = pd.DataFrame(cols, index=grid).reset_index()[[SITE, DATE] + sorted(cols)]
    if OUTCOME in cols:
        df = df[[SITE, DATE, OUTCOME] + [c for c in sorted(cols) if c != OUTCOME]]
    return finalize_table(df, str(root))


def matrix_calendar(root) -> pd.DatetimeIndex:
    """Daily calendar spanning every variable's declared date range."""
    starts, ends = [], []
    for vdir in sorted(Path(root).iterdir()):
        if (vdir / "manifest.yml").exists():
            with open(vdir / "manifest.yml") as fh:
                meta = yaml.safe_load(fh)
            starts.append(pd.Timestamp(meta["start"]))
            ends.append(pd.Timestamp(meta["end"]))
    if not starts:
        raise DataError(f"no variables found under matrix root {root}")
    return pd.date_range(min(starts), max(ends), freq="D")
