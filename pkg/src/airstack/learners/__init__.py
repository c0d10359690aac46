"""Base learners (``nn``, ``forest``, ``gradboost``), out-of-fold
prediction and model (de)serialization."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ..ingest import KEYS, OUTCOME, covariate_columns
from . import mlp, trees

MODEL_FORMAT = "airstack-model"
MODEL_VERSION = 1


def derive_seed(seed: int, *tags: int) -> int:
    """A 64-bit seed derived from ``seed`` and integer tags."""
    ss = np.random.SeedSequence([int(seed) % 2**64, *tags])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class Dataset:
    """Fully observed feature matrix and target, plus the site/date keys of
    each row (carried along, never used as features)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list
    keys: pd.DataFrame | None = None

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.y):
            raise ValueError(f"X has shape {self.X.shape} but y has length {len(self.y)}")
        if self.X.shape[1] != len(self.feature_names):
            raise ValueError("feature_names does not match the number of columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset contains missing or non-finite values")

    def __len__(self):
        return len(self.y)

    def subset(self, rows) -> "Dataset":
        keys = None if self.keys is None else self.keys.iloc[rows].reset_index(drop=True)
        return Dataset(self.X[rows], self.y[rows], list(self.feature_names), keys)

    @classmethod
    def from_table(cls, table: pd.DataFrame, features=None) -> "Dataset":
        """Rows with an observed outcome and complete features."""
        features = list(features) if features is not None else covariate_columns(table)
        if OUTCOME not in table.columns:
            raise ValueError(f"table has no {OUTCOME} column")
        cols = features + [OUTCOME]
        ok = table[cols].notna().all(axis=1).to_numpy()
        sub = table.loc[ok]
        return cls(sub[features].to_numpy(float), sub[OUTCOME].to_numpy(float), features,
                   sub[KEYS].reset_index(drop=True))


@dataclass
class TrainedBaseModel:
    model_id: str
    feature_names: list
    params: dict

    @property
    def n_features(self):
        return len(self.feature_names)


def train_base_model(dataset: Dataset, model_config, seed: int = 0, workers: int = 1) -> TrainedBaseModel:
    if len(dataset) < 2:
        raise ValueError("need at least 2 rows to train a model")
    hp = model_config.hyperparameters
    X, y = dataset.X, dataset.y
    mid = model_config.model_id
    if mid == "nn":
        fit = mlp.fit_mlp(X, y, hidden_layers=list(hp["hidden_layers"]), epochs=hp["epochs"],
                          learning_rate=hp["learning_rate"], batch_size=hp["batch_size"], seed=seed)
        params = fit
    elif mid == "forest":
        forest = trees.fit_forest(X, y, n_trees=hp["n_trees"], max_depth=hp["max_depth"],
                                  min_leaf=hp["min_leaf"], feature_fraction=hp["feature_fraction"],
                                  seed=seed, workers=workers)
        params = {"trees": forest}
    elif mid == "gradboost":
        init, boosted = trees.fit_gradboost(
            X, y, n_trees=hp["n_trees"], learning_rate=hp["learning_rate"],
            max_depth=hp["max_depth"], min_leaf=hp.get("min_leaf", 1),
            subsample_fraction=hp["subsample_fraction"], seed=seed)
        params = {"init": init, "shrinkage": float(hp["learning_rate"]), "trees": boosted}
    else:
        raise ValueError(f"unknown model identifier {mid!r}")
    return TrainedBaseModel(mid, list(dataset.feature_names), params)


def predict_base(model: TrainedBaseModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1 and X.size == 0:
        return np.empty(0)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"{model.model_id}: expected {model.n_features} features, "
                         f"got array of shape {X.shape}")
    if len(X) == 0:
        return np.empty(0)
    p = model.params
    if model.model_id == "nn":
        return mlp.predict_mlp(p, X)
    if model.model_id == "forest":
        total = np.zeros(len(X))
        for t in p["trees"]:
            total += t.predict(X)
        return total / len(p["trees"])
    total = np.zeros(len(X))
    for t in p["trees"]:
        total += t.predict(X)
    return p["init"] + p["shrinkage"] * total


def fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold index per row from a seeded shuffle; fold sizes differ by at most one."""
    if not 2 <= folds <= n:
        raise ValueError(f"folds must be between 2 and n={n}, got {folds}")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, 4])).permutation(n)
    out = np.empty(n, dtype=np.intp)
    out[perm] = np.arange(n) % folds
    return out


def oof_predictions(dataset: Dataset, model_config, folds: int | None = None, seed: int = 0,
                    workers: int = 1) -> np.ndarray:
    """Cross-validated predictions: row i is predicted by a model trained
    without i's fold."""
    folds = model_config.folds if folds is None else folds
    assign = fold_assignment(len(dataset), folds, seed)
    out = np.empty(len(dataset))

    def one(f):
        train_rows = np.flatnonzero(assign != f)
        test_rows = np.flatnonzero(assign == f)
        model = train_base_model(dataset.subset(train_rows), model_config, seed=derive_seed(seed, 5, f))
        return test_rows, predict_base(model, dataset.X[test_rows])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(folds)))
    else:
        results = [one(f) for f in range(folds)]
    for rows, pred in results:
        out[rows] = pred
    return out


# serialization -----------------------------------------------------------------

def _params_to_json(model: TrainedBaseModel) -> dict:
    p = model.params
    if model.model_id == "nn":
        return {
            "layer_sizes": list(p["layer_sizes"]),
            "activation": p["activation"],
            "weights": [W.tolist() for W in p["weights"]],
            "biases": [b.tolist() for b in p["biases"]],
            "target_mean": p["target_mean"],
            "target_scale": p["target_scale"],
        }
    out = {"trees": [t.to_dict() for t in p["trees"]]}
    if model.model_id == "gradboost":
        out.update(init=p["init"], shrinkage=p["shrinkage"])
    return out


def _params_from_json(model_id: str, d: dict) -> dict:
    if model_id == "nn":
        return {
            "layer_sizes": d["layer_sizes"],
            "activation": d["activation"],
            "weights": [np.asarray(W, dtype=float).reshape(a, b)
                        for W, a, b in zip(d["weights"], d["layer_sizes"][:-1], d["layer_sizes"][1:])],
            "biases": [np.asarray(b, dtype=float) for b in d["biases"]],
            "target_mean": float(d["target_mean"]),
            "target_scale": float(d["target_scale"]),
        }
    out = {"trees": [trees.Tree.from_dict(t) for t in d["trees"]]}
    if model_id == "gradboost":
        out.update(init=float(d["init"]), shrinkage=float(d["shrinkage"]))
    return out


def dumps_model(model: TrainedBaseModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "model_id": model.model_id,
        "feature_names": list(model.feature_names),
        "params": _params_to_json(model),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads_model(text: str) -> TrainedBaseModel:
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ValueError("not a supported model artifact")
    return TrainedBaseModel(doc["model_id"], list(doc["feature_names"]),
                            _params_from_json(doc["model_id"], doc["params"]))


def save_model(model: TrainedBaseModel, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model))
    return path


def load_model(path) -> TrainedBaseModel:
    return loads_model(Path(path).read_text())
