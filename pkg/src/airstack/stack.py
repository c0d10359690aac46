"""One training stage: base learners, their out-of-fold predictions, and
the additive stack fit on those OOF predictions.

Artifacts of a stage live in one directory::

    <stage_dir>/models/<model_id>.model
    <stage_dir>/models/ensemble.model
    <stage_dir>/oof_predictions.csv
    <stage_dir>/training_predictions.csv
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .config import MODEL_IDS
from .ensemble import EnsembleModel, fit_gam, load_ensemble, predict_gam, save_ensemble
from .ingest import KEYS, write_table_csv
from .learners import (Dataset, derive_seed, load_model, oof_predictions, predict_base,
                       save_model, train_base_model)


@dataclass
class StackFit:
    feature_names: list
    models: dict          # model_id -> TrainedBaseModel, in config order
    ensemble: EnsembleModel
    oof: np.ndarray       # (n, m) out-of-fold base predictions
    insample: np.ndarray  # (n, m) full-model predictions on the training rows
    keys: pd.DataFrame
    y: np.ndarray

    @property
    def model_ids(self):
        return list(self.models)

    def stacked_oof(self) -> np.ndarray:
        """Ensemble applied to the OOF base predictions."""
        return predict_gam(self.ensemble, self.oof)


def fit_stack(dataset: Dataset, model_configs: dict, seed: int, workers: int = 1,
              progress=None, label: str = "train") -> StackFit:
    """Train every configured model and the GAM stack.

    Each model id gets its own seed stream, so adding or removing a model
    never changes another model's fit.
    """
    ids = list(model_configs)
    oof = np.empty((len(dataset), len(ids)))
    insample = np.empty_like(oof)
    models = {}
    for j, mid in enumerate(ids):
        if progress:
            progress(f"{label}:{mid}", 100.0 * j / (len(ids) + 1))
        mc = model_configs[mid]
        s = derive_seed(seed, 6, MODEL_IDS.index(mid))
        oof[:, j] = oof_predictions(dataset, mc, seed=s, workers=workers)
        models[mid] = train_base_model(dataset, mc, seed=s, workers=workers)
        insample[:, j] = predict_base(models[mid], dataset.X)
    if progress:
        progress(f"{label}:ensemble", 100.0 * len(ids) / (len(ids) + 1))
    ens = fit_gam(oof, dataset.y, names=ids)
    if progress:
        progress(label, 100.0)
    keys = dataset.keys if dataset.keys is not None else pd.DataFrame(index=range(len(dataset)))
    return StackFit(list(dataset.feature_names), models, ens, oof, insample, keys, dataset.y)


def predict_stack(models: dict, ensemble: EnsembleModel, X) -> tuple[np.ndarray, np.ndarray]:
    """``(base (n, m), ensemble (n,))`` predictions."""
    X = np.asarray(X, dtype=float)
    base = np.column_stack([predict_base(models[mid], X) for mid in models]) if len(X) \
        else np.empty((0, len(models)))
    return base, predict_gam(ensemble, base) if len(X) else np.empty(0)


def _pred_frame(keys, ids, base, ens) -> pd.DataFrame:
    df = keys[KEYS].copy() if set(KEYS) <= set(keys.columns) else pd.DataFrame(index=range(len(base)))
    for j, mid in enumerate(ids):
        df[mid] = base[:, j]
    df["ensemble"] = ens
    return df


def save_stack(fit: StackFit, stage_dir) -> list[Path]:
    d = Path(stage_dir)
    paths = [save_model(m, d / "models" / f"{mid}.model") for mid, m in fit.models.items()]
    paths.append(save_ensemble(fit.ensemble, d / "models" / "ensemble.model"))
    ids = fit.model_ids
    paths.append(write_table_csv(_pred_frame(fit.keys, ids, fit.oof, fit.stacked_oof()),
                                 d / "oof_predictions.csv"))
    paths.append(write_table_csv(_pred_frame(fit.keys, ids, fit.insample,
                                             predict_gam(fit.ensemble, fit.insample)),
                                 d / "training_predictions.csv"))
    return paths


def load_stack(stage_dir, model_ids) -> tuple[dict, EnsembleModel]:
    d = Path(stage_dir) / "models"
    models = {mid: load_model(d / f"{mid}.model") for mid in model_ids}
    ens = load_ensemble(d / "ensemble.model")
    if ens.names != list(model_ids):
        raise ValueError(f"ensemble was fit on {ens.names}, config lists {list(model_ids)}")
    return models, ens

