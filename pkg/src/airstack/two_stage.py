"""Second training stage: each site-day gets the IDW average of the
stage-1 predictions at its nearest *other* sites on the same day as an
extra feature, ``neighbor_pred``, and the whole stack is retrained.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .ingest import DATE, SITE, registry_coords
from .interpolate import neighbor_weights
from .learners import Dataset, derive_seed
from .preprocess import NormRange, normalize_values
from .stack import StackFit, fit_stack, save_stack

NEIGHBOR = "neighbor_pred"
STAGE2_DIR = "stage2"
NORM_FILE = "neighbor_norm.yml"


def augment_with_neighbor_predictions(stage1: pd.DataFrame, sites, k: int = 5, power: float = 2.0,
                                      pred_col: str = "stage1", workers: int = 1) -> pd.DataFrame:
    """Add ``neighbor_pred`` to a site-day table holding stage-1 predictions
    in ``pred_col``.

    Neighbours are the ``k`` nearest other sites present on the same day.
    A site alone on its day falls back to its own stage-1 prediction.
    ``sites`` is a list of :class:`~airstack.ingest.SiteRecord`.
    """
    if pred_col not in stage1.columns:
        raise ValueError(f"stage-1 prediction column {pred_col!r} not found")
    if stage1[pred_col].isna().any():
        raise ValueError("stage-1 predictions must be present for every row being augmented")
    out = stage1.copy()
    if len(out) == 0:
        out[NEIGHBOR] = np.empty(0)
        return out
    site_ids = out[SITE].astype(str).to_numpy()
    coords = registry_coords(sites, site_ids)
    groups = list(out.groupby(DATE, sort=True).indices.values())
    # most days share one site set; compute each distinct set's weights once
    key_of = [tuple(site_ids[g]) for g in groups]
    distinct = {}
    for key, g in zip(key_of, groups):
        distinct.setdefault(key, g)

    def weights_for(g):
        return neighbor_weights(coords[g], k=k, power=power, exclude_self=True) if len(g) > 1 else None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        computed = dict(zip(distinct, pool.map(weights_for, distinct.values())))
    preds = out[pred_col].to_numpy(float)
    neigh = np.empty(len(out))
    for key, g in zip(key_of, groups):
        nw = computed[key]
        neigh[g] = preds[g] if nw is None else nw.apply(preds[g])
    out[NEIGHBOR] = neigh
    return out


def neighbor_range(stage1_train_preds) -> NormRange:
    p = np.asarray(stage1_train_preds, dtype=float)
    return NormRange(float(p.min()), float(p.max()))


def save_neighbor_range(r: NormRange, stage_dir) -> Path:
    path = Path(stage_dir) / NORM_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump({"feature": NEIGHBOR, "min": r.min, "max": r.max}, sort_keys=False))
    return path


def load_neighbor_range(stage_dir) -> NormRange:
    d = yaml.safe_load((Path(stage_dir) / NORM_FILE).read_text())
    return NormRange(float(d["min"]), float(d["max"]))


def stage2_features(table: pd.DataFrame, stage1_pred, sites, k, power, norm: NormRange,
                    workers: int = 1) -> pd.DataFrame:
    """``table`` plus the normalised ``neighbor_pred`` column."""
    t = table[[SITE, DATE]].copy()
    t["stage1"] = stage1_pred
    aug = augment_with_neighbor_predictions(t, sites, k, power, workers=workers)
    out = table.copy()
    out[NEIGHBOR] = normalize_values(aug[NEIGHBOR].to_numpy(), norm)
    return out


def train_two_stage(prepped: pd.DataFrame, stage1: StackFit, sites, config, model_configs: dict,
                    out_dir, workers: int = 1, progress=None):
    """Retrain base models and stack on features + ``neighbor_pred``.

    For the training rows, stage-1 predictions are the stack applied to the
    out-of-fold base predictions, so the neighbour feature is built from
    predictions that never saw the neighbour's own outcome.
    Artifacts go to ``<out_dir>/stage2/``.
    """
    s1 = stage1.stacked_oof()
    if stage1.keys.groupby(DATE).size().max() < 2:
        raise ValueError("two-stage training needs at least 2 sites on some day")
    norm = neighbor_range(s1)
    keys = stage1.keys.reset_index(drop=True)
    feats = pd.merge(keys, prepped, on=[SITE, DATE], how="left")
    feats = stage2_features(feats, s1, sites, config.neighbor_count, config.idw_power, norm,
                            workers=workers)
    names = list(stage1.feature_names) + [NEIGHBOR]
    ds = Dataset(feats[names].to_numpy(float), stage1.y, names, keys)
    fit = fit_stack(ds, model_configs, seed=derive_seed(config.seed, 7), workers=workers,
                    progress=progress, label="stage2")
    stage_dir = Path(out_dir) / STAGE2_DIR
    paths = save_stack(fit, stage_dir)
    paths.append(save_neighbor_range(norm, stage_dir))
    return fit, paths
