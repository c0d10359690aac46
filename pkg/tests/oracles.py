"""Slow reference implementations used only by the tests."""
import numpy as np

R = 6371.0088


def haversine_naive(lon1, lat1, lon2, lat2):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dl = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * R * np.arcsin(np.sqrt(np.clip(a, 0, 1)))


def idw_naive(samples, values, queries, k, power, exact_km=1e-3):
    out = []
    for qlon, qlat in queries:
        d = np.array([haversine_naive(qlon, qlat, s[0], s[1]) for s in samples])
        order = sorted(range(len(d)), key=lambda i: (d[i], i))[:k]
        if d[order[0]] < exact_km:
            out.append(values[order[0]])
            continue
        w = np.array([d[i] ** -power for i in order])
        out.append(float(np.dot(w / w.sum(), [values[i] for i in order])))
    return np.array(out)


def knn_naive(samples, queries, k):
    res = []
    for qlon, qlat in queries:
        d = np.array([haversine_naive(qlon, qlat, s[0], s[1]) for s in samples])
        res.append(sorted(range(len(d)), key=lambda i: (d[i], i))[:k])
    return res


def yeo_johnson_naive(x, lam):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i, v in enumerate(x):
        if v >= 0:
            out[i] = np.log(v + 1) if lam == 0 else ((v + 1) ** lam - 1) / lam
        else:
            out[i] = -np.log(1 - v) if lam == 2 else -((1 - v) ** (2 - lam) - 1) / (2 - lam)
    return out


def skew_naive(z):
    z = np.asarray(z, dtype=float)
    m = z.mean()
    m2 = np.mean((z - m) ** 2)
    m3 = np.mean((z - m) ** 3)
    return 0.0 if m2 == 0 else m3 / m2 ** 1.5


def best_lambda_grid(x, n=4001):
    grid = np.linspace(-2, 2, n)
    scores = np.array([abs(skew_naive(yeo_johnson_naive(x, g))) for g in grid])
    i = int(np.argmin(scores))
    return grid[i], scores[i]


def ridge_standardized(X, y, ridge):
    """Intercept and coefficients of a ridge fit on standardised columns
    with penalty ``ridge * n``, solved as an augmented least-squares problem."""
    n, q = X.shape
    mu, sd = X.mean(axis=0), X.std(axis=0)
    sd = np.where(sd == 0, 1.0, sd)
    Xs = (X - mu) / sd
    A = np.vstack([Xs, np.sqrt(ridge * n) * np.eye(q)])
    b = np.concatenate([y - y.mean(), np.zeros(q)])
    beta = np.linalg.lstsq(A, b, rcond=None)[0] / sd
    return y.mean() - mu @ beta, beta


def best_split_exhaustive(X, y, min_leaf=1):
    """``(sse, feature, threshold)`` of the best single variance-reduction
    split, scanning every feature and every midpoint; ties keep the lower
    feature, then the lower threshold."""
    best = (np.sum((y - y.mean()) ** 2), -1, None)
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        for t in (u[:-1] + u[1:]) / 2:
            left = X[:, j] <= t
            if left.sum() < min_leaf or (~left).sum() < min_leaf:
                continue
            sse = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
            if sse < best[0] - 1e-12:
                best = (sse, j, t)
    return best


def joint_penalized_fit(P, y, model):
    """Fitted values of the additive model solved in one dense system,
    with the fitted model's knots and absolute penalties, and each
    component constrained to sum to zero over the data."""
    from scipy.linalg import block_diag, null_space

    from airstack.ensemble import spline_basis, spline_matrices

    n = len(y)
    blocks, pens = [], []
    for j, c in enumerate(model.components):
        if c.constant:
            continue
        F, S = spline_matrices(c.knots)
        X = spline_basis(P[:, j], c.knots, F)
        Z = null_space(np.ones((1, n)) @ X)
        blocks.append(X @ Z)
        pens.append(c.lam * Z.T @ S @ Z)
    D = np.hstack([np.ones((n, 1))] + blocks)
    pen = block_diag(np.zeros((1, 1)), *pens)
    beta = np.linalg.solve(D.T @ D + pen, D.T @ y)
    return D @ beta


def ols_fit(P, y):
    D = np.column_stack([np.ones(len(y)), P])
    return D @ np.linalg.lstsq(D, y, rcond=None)[0]


def stump_agrees(X, y, tree, tol=1e-9):
    """True when a depth-1 tree picked the exhaustive optimum: the oracle's
    split itself, the same row partition through another feature, or a
    different partition with the same SSE (an exact tie)."""
    sse, f, thr = best_split_exhaustive(X, y)
    tf = tree.feature[0]
    if f < 0 or tf < 0:
        return f == tf
    if tf == f:
        return abs(tree.threshold[0] - thr) <= 1e-12
    left = X[:, tf] <= tree.threshold[0]
    ref = X[:, f] <= thr
    if (left == ref).all() or (left == ~ref).all():
        return True
    got = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
    return abs(got - sse) <= tol
