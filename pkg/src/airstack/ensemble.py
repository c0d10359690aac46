"""Additive stacking model over base-learner predictions.

Prediction = intercept + sum of one centred smooth per base model.  Each
smooth is a natural cubic regression spline parameterised by its values at
knots placed on quantiles of the input, with a curvature penalty
``beta' S beta``.  Linear functions have zero penalty, and beyond the
boundary knots the spline continues linearly.

Fitting is modified backfitting: every sweep first refits the linear parts
of all components jointly by least squares (linear functions are exactly the
penalty null space), then backfits each component's nonlinear remainder.
The fixed point is the same as plain backfitting, but strongly correlated
inputs (the normal case when stacking) no longer slow convergence.

While the smoothing parameters are still being chosen, each component picks
its lambda by GCV (with the usual 1.4 inflation of the effective degrees of
freedom) on its partial residual at every sweep; once a full sweep leaves every choice unchanged the lambdas
are frozen and backfitting runs to convergence.  With fixed lambdas the
fixed point is the joint penalized least-squares fit.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_KNOTS = 10
GCV_GAMMA = 1.4
# relative to the scale of X'X / S for each component
LAMBDA_GRID = 10.0 ** np.arange(-3.0, 4.0)
MAX_ITER = 200
TOL = 1e-8
MAX_SELECT_SWEEPS = 20
ENSEMBLE_FORMAT = "airstack-ensemble"


class ConvergenceWarning(UserWarning):
    pass


def spline_matrices(knots: np.ndarray):
    """``(F, S)``: F maps knot values to second derivatives at the knots
    (zero at both ends), S is the integrated squared second derivative."""
    k = len(knots)
    if k < 3:
        return np.zeros((k, k)), np.zeros((k, k))
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    Bm = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        Bm[i, i] = (h[i] + h[i + 1]) / 3.0
        if i < k - 3:
            Bm[i, i + 1] = Bm[i + 1, i] = h[i + 1] / 6.0
    BinvD = np.linalg.solve(Bm, D)
    F = np.vstack([np.zeros(k), BinvD, np.zeros(k)])
    S = D.T @ BinvD
    return F, (S + S.T) / 2.0


def spline_basis(x, knots: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Design matrix ``X`` with ``f(x) = X @ beta``; linear outside the knots."""
    x = np.asarray(x, dtype=float)
    k = len(knots)
    X = np.zeros((len(x), k))
    h = np.diff(knots)
    j = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, k - 2)
    inside = (x >= knots[0]) & (x <= knots[-1])
    r = np.flatnonzero(inside)
    jj = j[r]
    hj = h[jj]
    am = (knots[jj + 1] - x[r]) / hj
    ap = (x[r] - knots[jj]) / hj
    cm = ((knots[jj + 1] - x[r]) ** 3 / hj - hj * (knots[jj + 1] - x[r])) / 6.0
    cp = ((x[r] - knots[jj]) ** 3 / hj - hj * (x[r] - knots[jj])) / 6.0
    X[r, jj] += am
    X[r, jj + 1] += ap
    X[r] += cm[:, None] * F[jj] + cp[:, None] * F[jj + 1]
    lo = np.flatnonzero(x < knots[0])
    if len(lo):
        h0 = h[0]
        slope = -np.eye(k)[0] / h0 + np.eye(k)[1] / h0 - h0 / 3.0 * F[0] - h0 / 6.0 * F[1]
        X[lo] = np.eye(k)[0] + (x[lo] - knots[0])[:, None] * slope
    hi = np.flatnonzero(x > knots[-1])
    if len(hi):
        hn = h[-1]
        slope = (np.eye(k)[-1] - np.eye(k)[-2]) / hn + hn / 6.0 * F[-2] + hn / 3.0 * F[-1]
        X[hi] = np.eye(k)[-1] + (x[hi] - knots[-1])[:, None] * slope
    return X


def place_knots(x, max_knots: int = MAX_KNOTS) -> np.ndarray:
    u = np.unique(np.asarray(x, dtype=float))
    k = min(max_knots, len(u))
    return np.quantile(u, np.linspace(0.0, 1.0, k))


@dataclass
class SmoothComponent:
    name: str
    knots: np.ndarray
    coef: np.ndarray
    lam: float          # absolute penalty weight used in the fit
    lam_relative: float  # grid value before scaling
    centering: float
    constant: bool = False

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=float)
        self.coef = np.asarray(self.coef, dtype=float)
        self._F = spline_matrices(self.knots)[0] if not self.constant else None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant:
            return np.zeros(len(x))
        return spline_basis(x, self.knots, self._F) @ self.coef - self.centering


@dataclass
class EnsembleModel:
    intercept: float
    components: list
    converged: bool = True
    n_iter: int = 0
    history: list = field(default_factory=list)

    @property
    def names(self):
        return [c.name for c in self.components]


class _Smoother:
    """Penalized spline fit of one input column to partial residuals."""

    def __init__(self, x):
        self.knots = place_knots(x)
        self.constant = len(self.knots) < 2
        if self.constant:
            return
        self.F, S = spline_matrices(self.knots)
        self.x = np.asarray(x, dtype=float)
        self.X = spline_basis(x, self.knots, self.F)
        self.XtX = self.X.T @ self.X
        sn = np.linalg.norm(S)
        self.scale = np.linalg.norm(self.XtX) / sn if sn > 0 else 0.0
        self.S = S

    def solve(self, r, lam_rel):
        A = self.XtX + lam_rel * self.scale * self.S
        beta = np.linalg.lstsq(A, self.X.T @ r, rcond=None)[0] if lam_rel * self.scale == 0 \
            else np.linalg.solve(A, self.X.T @ r)
        return beta, A

    def linear_part(self, beta):
        """``(slope, intercept)`` of the least-squares line through the
        training-point values of ``X @ beta``."""
        f = self.X @ beta
        D = np.column_stack([self.x, np.ones(len(f))])
        c = np.linalg.lstsq(D, f, rcond=None)[0]
        return float(c[0]), float(c[1])

    def gcv_select(self, r):
        n = len(r)
        best, best_score = LAMBDA_GRID[0], np.inf
        for lam in LAMBDA_GRID:
            beta, A = self.solve(r, lam)
            rss = float(np.sum((r - self.X @ beta) ** 2))
            edf = float(np.trace(np.linalg.solve(A, self.XtX)))
            denom = n - GCV_GAMMA * edf
            score = n * rss / denom ** 2 if denom > 0 else np.inf
            if score < best_score:  # strict: ties keep the smaller lambda
                best, best_score = lam, score
        return float(best)


def fit_gam(base_preds, target, names=None, lam=None, max_iter: int = MAX_ITER,
            tol: float = TOL) -> EnsembleModel:
    """Fit the additive stack.

    ``lam`` fixes the relative smoothing parameter (one value for every
    component or one per column) instead of selecting it by GCV.
    """
    P = np.asarray(base_preds, dtype=float)
    y = np.asarray(target, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    n, m = P.shape
    if m < 1 or n != len(y):
        raise ValueError("base_preds must be (n, m) with m >= 1 and n == len(target)")
    names = list(names) if names is not None else [f"x{j}" for j in range(m)]
    smoothers = [_Smoother(P[:, j]) for j in range(m)]
    for s in smoothers:
        if not s.constant and n <= len(s.knots):
            raise ValueError(f"need more rows ({n}) than spline coefficients ({len(s.knots)})")
    if lam is None:
        lams = [None] * m
    else:
        lams = list(np.broadcast_to(np.asarray(lam, dtype=float), (m,)))
    selecting = any(v is None for v in lams)
    lams = [LAMBDA_GRID[0] if v is None else float(v) for v in lams]

    alpha = float(y.mean())
    active = [j for j, s in enumerate(smoothers) if not s.constant]
    # linear parts of all components are fitted jointly each sweep; only the
    # nonlinear remainders are backfitted (modified backfitting)
    Pc = P[:, active] - P[:, active].mean(axis=0)
    lin = np.zeros(m)
    nl_beta = [np.zeros(len(s.knots)) for s in smoothers]
    NL = np.zeros((n, m))
    Fv = np.zeros((n, m))
    history = []
    converged = False
    select_sweeps = 0
    it = 0
    first = True
    for it in range(1, max_iter + 1):
        old = Fv.copy()
        changed = False
        if active:
            b = np.linalg.lstsq(Pc, y - alpha - NL.sum(axis=1), rcond=None)[0]
            lin[active] = b
        L = np.zeros((n, m))
        L[:, active] = Pc * lin[active]
        for j in active:
            s = smoothers[j]
            r = y - alpha - L.sum(axis=1) - NL.sum(axis=1) + L[:, j] + NL[:, j]
            if selecting:
                new = s.gcv_select(r)
                changed |= new != lams[j] or first
                lams[j] = new
            beta, _ = s.solve(r, lams[j])
            c1, c0 = s.linear_part(beta)
            nl_beta[j] = beta - c1 * s.knots - c0
            NL[:, j] = s.X @ nl_beta[j]
        first = False
        Fv = L + NL
        change = float(np.linalg.norm(Fv - old) / max(np.linalg.norm(Fv), 1e-300))
        history.append(change)
        if selecting:
            select_sweeps += 1
            if not changed or select_sweeps >= MAX_SELECT_SWEEPS:
                selecting = False
            continue
        if change < tol:
            converged = True
            break
    betas, centers = [None] * m, [0.0] * m
    for j in active:
        s = smoothers[j]
        betas[j] = nl_beta[j] + lin[j] * s.knots
        centers[j] = float((s.X @ betas[j]).mean())
    if not converged:
        warnings.warn(f"backfitting did not converge in {max_iter} sweeps "
                      f"(last relative change {history[-1]:.2e})", ConvergenceWarning)
    comps = []
    for j, s in enumerate(smoothers):
        if s.constant:
            comps.append(SmoothComponent(names[j], s.knots, np.zeros(len(s.knots)), 0.0, 0.0, 0.0,
                                         constant=True))
        else:
            comps.append(SmoothComponent(names[j], s.knots, betas[j], lams[j] * s.scale, lams[j],
                                         centers[j]))
    return EnsembleModel(alpha, comps, converged, it, history)


def predict_gam(model: EnsembleModel, base_preds) -> np.ndarray:
    P = np.asarray(base_preds, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[1] != len(model.components):
        raise ValueError(f"ensemble expects {len(model.components)} prediction columns, "
                         f"got {P.shape[1]}")
    out = np.full(len(P), model.intercept)
    for j, comp in enumerate(model.components):
        out = out + comp(P[:, j])
    return out


def component_matrix(model: EnsembleModel, base_preds) -> np.ndarray:
    """Per-component contributions, shape (n, m)."""
    P = np.asarray(base_preds, dtype=float)
    return np.column_stack([c(P[:, j]) for j, c in enumerate(model.components)])


def dumps_ensemble(model: EnsembleModel) -> str:
    doc = {
        "format": ENSEMBLE_FORMAT,
        "version": 1,
        "intercept": model.intercept,
        "converged": model.converged,
        "n_iter": model.n_iter,
        "components": [
            {"name": c.name, "knots": c.knots.tolist(), "coef": c.coef.tolist(), "lambda": c.lam,
             "lambda_relative": c.lam_relative, "centering": c.centering, "constant": c.constant}
            for c in model.components
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_ensemble(text: str) -> EnsembleModel:
    doc = json.loads(text)
    if doc.get("format") != ENSEMBLE_FORMAT:
        raise ValueError("not an ensemble artifact")
    comps = [SmoothComponent(c["name"], c["knots"], c["coef"], c["lambda"], c["lambda_relative"],
                             c["centering"], c["constant"]) for c in doc["components"]]
    return EnsembleModel(doc["intercept"], comps, doc["converged"], doc["n_iter"])


def save_ensemble(model: EnsembleModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_ensemble(model))
    return path


def load_ensemble(path) -> EnsembleModel:
    return loads_ensemble(Path(path).read_text())
