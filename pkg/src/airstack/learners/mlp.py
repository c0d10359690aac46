"""Fully connected ReLU network trained on squared error with mini-batch
gradient descent (heavy-ball momentum 0.9, constant step size).

The target is standardised internally; ``target_mean``/``target_scale``
are part of the fitted parameters and undone in :func:`predict_mlp`.
"""
from __future__ import annotations

import numpy as np

MOMENTUM = 0.9


def init_params(sizes, rng) -> list:
    """He-normal weights for hidden layers, variance 1/fan_in on the output."""
    params = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt((2.0 if i < len(sizes) - 2 else 1.0) / a)
        params.append((rng.normal(0.0, scale, size=(a, b)), np.zeros(b)))
    return params


def forward(params, X):
    acts = [X]
    a = X
    for i, (W, b) in enumerate(params):
        z = a @ W + b
        a = np.maximum(z, 0.0) if i < len(params) - 1 else z
        acts.append(a)
    return acts


def loss_and_grads(params, X, y):
    """Mean squared error and its gradient w.r.t. every (W, b)."""
    acts = forward(params, X)
    out = acts[-1][:, 0]
    resid = out - y
    loss = float(np.mean(resid ** 2))
    delta = (2.0 / len(y)) * resid[:, None]
    grads = [None] * len(params)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i:
            delta = (delta @ W.T) * (acts[i] > 0)
    return loss, grads


def fit_mlp(X, y, *, hidden_layers=(32, 32), epochs=50, learning_rate=0.01,
            batch_size=256, seed=0) -> dict:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    mu = float(y.mean())
    sd = float(y.std())
    # a constant target gets scale 0, so predictions are exactly that constant
    ys = (y - mu) / sd if sd > 0 else np.zeros(n)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, 3]))
    sizes = [p, *hidden_layers, 1]
    params = init_params(sizes, rng)
    vel = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    bs = max(1, min(batch_size, n))
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            loss, grads = loss_and_grads(params, X[idx], ys[idx])
            if not np.isfinite(loss):
                raise FloatingPointError("nn training diverged; lower learning_rate")
            new_params, new_vel = [], []
            for (W, b), (vW, vb), (gW, gb) in zip(params, vel, grads):
                vW = MOMENTUM * vW - learning_rate * gW
                vb = MOMENTUM * vb - learning_rate * gb
                new_params.append((W + vW, b + vb))
                new_vel.append((vW, vb))
            params, vel = new_params, new_vel
    return {
        "layer_sizes": sizes,
        "activation": "relu",
        "weights": [W for W, _ in params],
        "biases": [b for _, b in params],
        "target_mean": mu,
        "target_scale": sd,
    }


def predict_mlp(fit: dict, X) -> np.ndarray:
    params = list(zip(fit["weights"], fit["biases"]))
    out = forward(params, np.asarray(X, dtype=float))[-1][:, 0]
    return out * fit["target_scale"] + fit["target_mean"]
