"""Transformation, imputation and normalization of covariate columns.

Stages always run in the order transform -> impute -> normalize.  Every
fitted parameter lands in a :class:`PreprocessState` that is written to the
``imputation_models`` directory, so prediction-time data go through exactly
the arithmetic the training data went through.  The outcome column is never
touched.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy import stats

from .ingest import DataError, OUTCOME, SITE, covariate_columns, save_checkpoint, write_table_csv

STAGE_ORDER = ("transform", "impute", "normalize")
STATE_FILE = "preprocess_state.yml"
LAMBDA_BOUNDS = (-2.0, 2.0)
LAMBDA_TOL = 1e-4
SHRINKAGE_PRIOR = 10.0  # site offset weight = n_site / (n_site + SHRINKAGE_PRIOR)
DEFAULT_RIDGE = 1e-3


# transformation ---------------------------------------------------------------

def yeo_johnson(x, lam: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, np.nan)
    pos = x >= 0
    neg = x < 0
    if abs(lam) < 1e-12:
        out[pos] = np.log1p(x[pos])
    else:
        out[pos] = np.expm1(lam * np.log1p(x[pos])) / lam
    if abs(lam - 2.0) < 1e-12:
        out[neg] = -np.log1p(-x[neg])
    else:
        out[neg] = -np.expm1((2.0 - lam) * np.log1p(-x[neg])) / (2.0 - lam)
    return out


def yeo_johnson_inverse(y, lam: float) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    out = np.full_like(y, np.nan)
    pos = y >= 0
    neg = y < 0
    if abs(lam) < 1e-12:
        out[pos] = np.expm1(y[pos])
    else:
        out[pos] = np.expm1(np.log1p(lam * y[pos]) / lam)
    if abs(lam - 2.0) < 1e-12:
        out[neg] = -np.expm1(-y[neg])
    else:
        out[neg] = -np.expm1(np.log1p(-(2.0 - lam) * y[neg]) / (2.0 - lam))
    return out


def abs_skewness(x, lam: float) -> float:
    s = stats.skew(yeo_johnson(x, lam), bias=True)
    return abs(s) if np.isfinite(s) else 0.0


def golden_section_min(f, a: float, b: float, tol: float = LAMBDA_TOL) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def fit_lambda(x) -> float:
    """Yeo-Johnson lambda in [-2, 2] minimising |sample skewness|."""
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if len(x) < 3:
        raise DataError("transformation needs at least 3 non-missing values")
    if np.ptp(x) == 0:
        return 1.0
    return golden_section_min(lambda lam: abs_skewness(x, lam), *LAMBDA_BOUNDS)


def _check_columns(table, variables):
    missing = [v for v in variables if v not in table.columns]
    if missing:
        raise DataError(f"columns not found: {missing}")


def fit_transform(table: pd.DataFrame, variables, workers: int = 1) -> dict:
    """Per-variable Yeo-Johnson lambdas, keyed in alphabetical order."""
    variables = sorted(variables)
    _check_columns(table, variables)
    for v in variables:
        if table[v].notna().sum() == 0:
            raise DataError(f"cannot transform all-missing column {v!r}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        lams = list(pool.map(lambda v: fit_lambda(table[v].to_numpy(float)), variables))
    return {v: float(lam) for v, lam in zip(variables, lams)}


def apply_transform(table: pd.DataFrame, params: dict) -> pd.DataFrame:
    out = table.copy()
    for v, lam in params.items():
        out[v] = yeo_johnson(out[v].to_numpy(float), lam)
    return out


def invert_transform(table: pd.DataFrame, params: dict) -> pd.DataFrame:
    out = table.copy()
    for v, lam in params.items():
        out[v] = yeo_johnson_inverse(out[v].to_numpy(float), lam)
    return out


# imputation ---------------------------------------------------------------------

@dataclass
class ImputationModel:
    """Ridge regression on other covariates plus a shrunken per-site offset."""

    variable: str
    predictors: list
    intercept: float
    coef: np.ndarray
    ridge: float
    site_offsets: dict = field(default_factory=dict)  # site -> (offset, weight)

    def predict(self, X: np.ndarray, sites) -> np.ndarray:
        pred = self.intercept + (X @ self.coef if len(self.predictors) else 0.0)
        offs = np.array([self.site_offsets.get(s, (0.0, 0.0))[0] for s in sites], dtype=float)
        return pred + offs


@dataclass
class ImputationModelSet:
    variables: list  # imputation order (alphabetical)
    medians: dict
    models: dict

    def __len__(self):
        return len(self.models)


def _ridge_fit(X: np.ndarray, y: np.ndarray, ridge: float):
    n, q = X.shape
    ybar = y.mean()
    if q == 0:
        return ybar, np.zeros(0)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    Xs = (X - mu) / sd
    beta = np.linalg.solve(Xs.T @ Xs + ridge * n * np.eye(q), Xs.T @ (y - ybar))
    coef = beta / sd
    return float(ybar - mu @ coef), coef


def _fit_one(v, predictors, W, observed, sites, ridge):
    X = W[predictors].to_numpy(float)[observed]
    y = W[v].to_numpy(float)[observed]
    intercept, coef = _ridge_fit(X, y, ridge)
    resid = y - (intercept + X @ coef)
    grp = pd.DataFrame({"s": sites[observed], "r": resid}).groupby("s", sort=True)["r"].agg(["mean", "count"])
    weight = grp["count"] / (grp["count"] + SHRINKAGE_PRIOR)
    offsets = {str(s): (float(m * w), float(w)) for s, m, w in zip(grp.index, grp["mean"], weight)}
    return ImputationModel(v, list(predictors), intercept, coef, ridge, offsets)


def fit_impute(table: pd.DataFrame, predictors=None, ridge: float = DEFAULT_RIDGE) -> ImputationModelSet:
    """Fit one imputation model per covariate.

    Missing cells start at the column median; every model is fit once, the
    fills are updated, and a refinement pass refits on the updated table.
    The refined models are the ones stored.
    """
    cols = sorted(predictors if predictors is not None else covariate_columns(table))
    cols = [c for c in cols if c != OUTCOME]
    _check_columns(table, cols)
    if not cols:
        raise DataError("imputation needs at least one covariate column")
    miss = {c: table[c].isna().to_numpy() for c in cols}
    if all(m.any() for m in miss.values()):
        raise DataError("imputation needs at least one complete predictor column")
    for c in cols:
        if miss[c].all():
            raise DataError(f"cannot impute all-missing column {c!r}")
    medians = {c: float(table[c].median()) for c in cols}
    W = table[cols].fillna(medians)
    sites = table[SITE].astype(str).to_numpy()
    models = {}
    for sweep in range(2):
        for v in cols:
            preds = [c for c in cols if c != v]
            m = _fit_one(v, preds, W, ~miss[v], sites, ridge)
            models[v] = m
            if miss[v].any():
                rows = miss[v]
                W.loc[rows, v] = m.predict(W.loc[rows, preds].to_numpy(float), sites[rows])
    return ImputationModelSet(cols, medians, models)


def apply_impute(table: pd.DataFrame, models: ImputationModelSet) -> pd.DataFrame:
    """Fill missing covariate cells; observed cells are never changed."""
    cols = [c for c in models.variables if c in table.columns]
    miss = {c: table[c].isna().to_numpy() for c in cols}
    if not any(m.any() for m in miss.values()):
        return table.copy()
    W = table[cols].fillna({c: models.medians[c] for c in cols})
    sites = table[SITE].astype(str).to_numpy()
    for sweep in range(2):
        for v in cols:
            if not miss[v].any():
                continue
            m = models.models[v]
            rows = miss[v]
            W.loc[rows, v] = m.predict(W.loc[rows, m.predictors].to_numpy(float), sites[rows])
    out = table.copy()
    for c in cols:
        out[c] = W[c].to_numpy()
    return out


# normalization ------------------------------------------------------------------

@dataclass(frozen=True)
class NormRange:
    min: float
    max: float

    @property
    def constant(self) -> bool:
        return self.max == self.min


def fit_normalize(table: pd.DataFrame, variables) -> dict:
    variables = sorted(variables)
    _check_columns(table, variables)
    out = {}
    for v in variables:
        x = table[v].to_numpy(float)
        if not np.isfinite(x).any():
            raise DataError(f"cannot normalize all-missing column {v!r}")
        out[v] = NormRange(float(np.nanmin(x)), float(np.nanmax(x)))
    return out


def normalize_values(x, r: NormRange) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if r.constant:
        return np.where(np.isnan(x), np.nan, 0.5)
    return (x - r.min) / (r.max - r.min)


def apply_normalize(table: pd.DataFrame, params: dict) -> pd.DataFrame:
    """Min-max scaling with training-time ranges.  Values outside the
    training range are not clipped, so they may land outside [0, 1]."""
    out = table.copy()
    for v, r in params.items():
        out[v] = normalize_values(out[v], r)
    return out


def invert_normalize(table: pd.DataFrame, params: dict) -> pd.DataFrame:
    out = table.copy()
    for v, r in params.items():
        x = out[v].to_numpy(float)
        out[v] = np.where(np.isnan(x), np.nan, r.min) if r.constant else x * (r.max - r.min) + r.min
    return out


# state ----------------------------------------------------------------------------

@dataclass
class PreprocessState:
    flags: dict
    covariates: list
    stage_order: tuple = STAGE_ORDER
    transform: dict = field(default_factory=dict)
    imputation: ImputationModelSet | None = None
    normalization: dict = field(default_factory=dict)

    @property
    def stages(self) -> list:
        return [s for s in self.stage_order if self.flags.get(s)]


def apply_state(table: pd.DataFrame, state: PreprocessState) -> pd.DataFrame:
    """Replay the fitted stages on a new table with the training schema."""
    present = set(covariate_columns(table))
    missing = [c for c in state.covariates if c not in present]
    extra = sorted(present - set(state.covariates))
    if missing or extra:
        msg = []
        if missing:
            msg.append(f"missing covariate columns: {', '.join(missing)}")
        if extra:
            msg.append(f"unexpected columns: {', '.join(extra)}")
        raise DataError("; ".join(msg))
    out = table
    for stage in state.stages:
        out = _APPLY[stage](out, state)
    return out


_APPLY = {
    "transform": lambda t, s: apply_transform(t, s.transform),
    "impute": lambda t, s: apply_impute(t, s.imputation),
    "normalize": lambda t, s: apply_normalize(t, s.normalization),
}


def run_preprocess(table: pd.DataFrame, config, manifest=None, progress=None, workers: int = 1):
    """Fit and apply the enabled stages, checkpointing as it goes.

    Intermediate stages are written to ``mid_process_data/<stage>.csv``
    (``transformed``, ``imputed``); the final table goes to the config's
    ``training_data`` path.  The fitted state is saved under
    ``imputation_models``.  Returns ``(prepped_table, state)``.
    """
    flags = {"transform": bool(config.transform), "impute": bool(config.impute),
             "normalize": bool(config.normalize)}
    covs = covariate_columns(table)
    state = PreprocessState(flags=flags, covariates=covs)
    enabled = state.stages
    mid = config.resolve("mid_process_data")
    names = {"transform": "transformed", "impute": "imputed", "normalize": "normalized"}
    out = table
    for i, stage in enumerate(enabled):
        if progress:
            progress(f"preprocess:{stage}", 100.0 * i / len(enabled))
        if stage == "transform":
            state.transform = fit_transform(out, covs, workers=workers)
        elif stage == "impute":
            state.imputation = fit_impute(out, covs)
        else:
            state.normalization = fit_normalize(out, covs)
        out = _APPLY[stage](out, state)
        if i < len(enabled) - 1:
            save_checkpoint(out, names[stage], mid, manifest)
    final = config.resolve("training_data")
    write_table_csv(out, final)
    if manifest is not None:
        manifest.add_checkpoint("prepped", final)
    save_state(state, config.resolve("imputation_models"))
    if progress:
        progress("preprocess", 100.0)
    return out, state


def save_state(state: PreprocessState, directory) -> list[Path]:
    """Write ``preprocess_state.yml`` plus one ``<variable>.coef.csv`` per
    imputation model; returns the written paths."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("*.coef.csv"):
        old.unlink()
    doc = {
        "stage_order": list(state.stage_order),
        "flags": {s: bool(state.flags.get(s, False)) for s in STAGE_ORDER},
        "covariates": list(state.covariates),
        "transform": {"family": "yeo-johnson", "lambda": {k: float(v) for k, v in state.transform.items()}},
        "normalization": {k: {"min": r.min, "max": r.max, "constant": r.constant}
                          for k, r in state.normalization.items()},
        "imputation": None,
    }
    paths = []
    if state.imputation is not None:
        imp = state.imputation
        doc["imputation"] = {"variables": list(imp.variables),
                             "medians": {k: float(v) for k, v in imp.medians.items()},
                             "shrinkage_prior": SHRINKAGE_PRIOR}
        for v in imp.variables:
            m = imp.models[v]
            rows = [("intercept", "", m.intercept, ""), ("ridge", "", m.ridge, "")]
            rows += [("coef", p, float(c), "") for p, c in zip(m.predictors, m.coef)]
            rows += [("site_offset", s, o, w) for s, (o, w) in sorted(m.site_offsets.items())]
            path = d / f"{v}.coef.csv"
            pd.DataFrame(rows, columns=["term", "name", "value", "weight"]).to_csv(
                path, index=False, lineterminator="\n")
            paths.append(path)
    path = d / STATE_FILE
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=False)
    return [path] + paths


def load_state(directory) -> PreprocessState:
    d = Path(directory)
    path = d / STATE_FILE
    if not path.exists():
        raise FileNotFoundError(f"preprocess state not found: {path}")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    state = PreprocessState(
        flags=dict(doc["flags"]),
        covariates=list(doc["covariates"]),
        stage_order=tuple(doc["stage_order"]),
        transform={k: float(v) for k, v in (doc["transform"]["lambda"] or {}).items()},
        normalization={k: NormRange(float(r["min"]), float(r["max"]))
                       for k, r in (doc["normalization"] or {}).items()},
    )
    imp = doc.get("imputation")
    if imp:
        models = {}
        for v in imp["variables"]:
            df = pd.read_csv(d / f"{v}.coef.csv", dtype={"name": str}, keep_default_na=False,
                             float_precision="round_trip")
            get = lambda term: df[df.term == term]
            coefs = get("coef")
            offs = get("site_offset")
            models[v] = ImputationModel(
                variable=v,
                predictors=list(coefs["name"]),
                intercept=float(get("intercept")["value"].iloc[0]),
                coef=coefs["value"].astype(float).to_numpy(),
                ridge=float(get("ridge")["value"].iloc[0]),
                site_offsets={s: (float(o), float(w)) for s, o, w in
                              zip(offs["name"], offs["value"].astype(float), offs["weight"].astype(float))},
            )
        state.imputation = ImputationModelSet(list(imp["variables"]),
                                              {k: float(v) for k, v in imp["medians"].items()}, models)
    return state
