"""End-to-end training and prediction over a project directory.

Layout, relative to the directory holding ``config.yml``::

    <mid_process_data>/assembled.csv, transformed.csv, imputed.csv
    <training_data>                      prepped training table
    <imputation_models>/                 fitted preprocessing state
    <training_output>/models/            base models + ensemble.model
    <training_output>/stage2/            second stage, when enabled
    <training_output>/manifest.yml
    <training_output>/predictions.csv    written by predict
"""
from __future__ import annotations

import os
import shutil
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

from .config import load_model_config
from .ingest import (KEYS, OUTCOME, DataError, assemble_from_matrices, finalize_table,
                     matrix_calendar, read_csv_data, read_site_registry, save_checkpoint,
                     write_table_csv)
from .interpolate import GridSpec, grid_points, interpolate_covariates
from .learners import Dataset
from .manifest import MANIFEST_NAME, ManifestError, RunManifest
from .preprocess import apply_state, load_state, run_preprocess
from .stack import fit_stack, load_stack, predict_stack, save_stack
from .two_stage import NEIGHBOR, STAGE2_DIR, load_neighbor_range, stage2_features, train_two_stage

LOCK_NAME = ".lock"
PREDICTIONS_NAME = "predictions.csv"
# files train owns under training_output; anything else there is left alone
_OWNED = ("models", STAGE2_DIR, "oof_predictions.csv", "training_predictions.csv",
          MANIFEST_NAME, PREDICTIONS_NAME)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class LockError(RuntimeError):
    pass


@contextmanager
def _lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{directory} is locked by another run (remove {path} if that run died)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def read_data(config, workers: int = 1) -> pd.DataFrame:
    """Raw site-day table from the matrix tree when configured, else the CSV."""
    if config.matrix_root is not None:
        root = config.resolve("matrix_root")
        registry = read_site_registry(config.resolve("site_registry"))
        return assemble_from_matrices(root, registry, matrix_calendar(root), workers=workers)
    return read_csv_data(config.resolve("csv_path"))


def assemble(config, manifest=None, workers: int = 1) -> pd.DataFrame:
    """Read the raw data and checkpoint it as ``assembled.csv``."""
    table = read_data(config, workers=workers)
    save_checkpoint(table, "assembled", config.resolve("mid_process_data"), manifest)
    return table


def preprocess(config, manifest=None, progress=None, workers: int = 1):
    """Assemble and run the preprocessing chain; returns ``(prepped, state)``."""
    return run_preprocess(assemble(config, manifest, workers), config, manifest, progress, workers)


def load_model_configs(config) -> dict:
    return {mid: load_model_config(mid, config.base_dir or ".") for mid in config.models}


def _clear_outputs(out: Path):
    for name in _OWNED:
        p = out / name
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()


def _files_under(directory: Path):
    return sorted(p for p in directory.rglob("*") if p.is_file())


def train(config, workers: int = 1, progress=None, seed: int | None = None) -> RunManifest:
    """Preprocess, train every configured model, stack, and (optionally)
    run the second stage.  Returns the written manifest.

    A failing stage leaves a manifest with ``status: incomplete`` and the
    stage name, then raises :class:`StageError`.
    """
    if seed is not None:
        config = config.with_overrides(seed=seed)
    out = config.resolve("training_output")
    base = Path(config.base_dir or ".")
    model_configs = load_model_configs(config)
    manifest = RunManifest(
        base_dir=base, seed=int(config.seed),
        config={"pipeline": config.to_dict(),
                "models": {mid: mc.to_dict() for mid, mc in model_configs.items()}},
    )
    with _lock(out):
        _clear_outputs(out)
        stage = "assemble"
        try:
            entry = manifest.start_stage(stage)
            raw = assemble(config, manifest, workers)
            manifest.end_stage(entry)

            stage = "preprocess"
            entry = manifest.start_stage(stage)
            prepped, state = run_preprocess(raw, config, manifest, progress, workers)
            for p in sorted(config.resolve("imputation_models").glob("*")):
                if p.is_file():
                    manifest.add_artifact(p)
            manifest.add_artifact(config.resolve("training_data"))
            manifest.end_stage(entry)

            stage = "train"
            entry = manifest.start_stage(stage)
            dataset = Dataset.from_table(prepped, state.covariates)
            if len(dataset) < 2:
                raise DataError("fewer than 2 training rows with an outcome and complete features")
            fit = fit_stack(dataset, model_configs, seed=config.seed, workers=workers,
                            progress=progress, label="train")
            save_stack(fit, out)
            manifest.end_stage(entry)

            if config.two_stage:
                stage = "stage2"
                entry = manifest.start_stage(stage)
                sites = read_site_registry(config.resolve("site_registry"))
                train_two_stage(prepped, fit, sites, config, model_configs, out, workers, progress)
                manifest.end_stage(entry)
        except Exception as err:
            manifest.failed_stage = stage
            _record_outputs(manifest, out)
            manifest.write(out / MANIFEST_NAME)
            raise StageError(stage, err) from err
        _record_outputs(manifest, out)
        manifest.status = "complete"
        manifest.write(out / MANIFEST_NAME)
    return manifest


def _record_outputs(manifest, out: Path):
    for p in _files_under(out):
        if p.name not in (MANIFEST_NAME, LOCK_NAME, PREDICTIONS_NAME) or p.parent != out:
            manifest.add_artifact(p)


def load_manifest(config) -> RunManifest:
    path = config.resolve("training_output") / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no training manifest at {path}; run train first")
    return RunManifest.read(path, config.base_dir or ".")


def _grid_table(config, spec: GridSpec, workers: int) -> tuple[pd.DataFrame, list]:
    raw = read_data(config, workers=workers)
    registry = read_site_registry(config.resolve("site_registry"))
    targets = grid_points(spec)
    covs = [c for c in raw.columns if c not in KEYS and c != OUTCOME]
    table = interpolate_covariates(raw, registry, targets, covs, k=config.neighbor_count,
                                   power=config.idw_power, workers=workers)
    return finalize_table(table, "grid"), targets


def _input_table(config, input, sites, workers):
    if isinstance(input, GridSpec):
        return _grid_table(config, input, workers)
    if input is None:
        table = read_data(config, workers=workers)
    elif isinstance(input, pd.DataFrame):
        table = finalize_table(input, "prediction input")
    else:
        table = read_csv_data(input)
    if sites is None:
        return table, None
    return table, sites if isinstance(sites, list) else read_site_registry(sites)


def predict(config, input=None, sites=None, workers: int = 1, progress=None,
            write: bool = True) -> pd.DataFrame:
    """Replay preprocessing and the trained models on new site-days.

    ``input`` is a site-day table, a CSV path, a :class:`GridSpec`, or
    ``None`` for the configured training source.  ``sites`` (registry path
    or SiteRecord list) supplies coordinates for the second stage; it
    defaults to the configured registry.  Rows whose features are still
    incomplete after preprocessing get missing predictions.
    """
    manifest = load_manifest(config)
    if manifest.status != "complete":
        raise ManifestError(f"training run is incomplete (failed stage: {manifest.failed_stage})")
    manifest.verify()
    trained = manifest.config.get("pipeline", {})
    if list(trained.get("models", config.models)) != list(config.models):
        raise ManifestError(f"config lists models {list(config.models)} but training used "
                            f"{trained.get('models')}")
    out = config.resolve("training_output")
    state = load_state(config.resolve("imputation_models"))
    if progress:
        progress("predict:input", 0.0)
    table, site_list = _input_table(config, input, sites, workers)
    features = list(state.covariates)
    if OUTCOME in table.columns:
        table = table.drop(columns=[OUTCOME])
    prepped = apply_state(table, state)
    X = prepped[features].to_numpy(float)
    ok = np.isfinite(X).all(axis=1)
    ids = list(config.models)
    models, ens = load_stack(out, ids)
    if progress:
        progress("predict:stage1", 30.0)
    base, ens_pred = predict_stack(models, ens, X[ok])
    result = table[KEYS].copy().reset_index(drop=True)
    for j, mid in enumerate(ids):
        col = np.full(len(result), np.nan)
        col[ok] = base[:, j]
        result[mid] = col
    col = np.full(len(result), np.nan)
    col[ok] = ens_pred
    result["ensemble"] = col
    if trained.get("two_stage", config.two_stage):
        if progress:
            progress("predict:stage2", 60.0)
        if site_list is None:
            site_list = read_site_registry(config.resolve("site_registry"))
        stage_dir = out / STAGE2_DIR
        m2, e2 = load_stack(stage_dir, ids)
        norm = load_neighbor_range(stage_dir)
        rows = prepped.loc[ok].reset_index(drop=True)
        feats = stage2_features(rows, ens_pred, site_list, config.neighbor_count,
                                config.idw_power, norm, workers=workers)
        _, s2 = predict_stack(m2, e2, feats[features + [NEIGHBOR]].to_numpy(float))
        col = np.full(len(result), np.nan)
        col[ok] = s2
        result["stage2"] = col
    if write:
        write_table_csv(result, out / PREDICTIONS_NAME)
    if progress:
        progress("predict", 100.0)
    return result


def info(config) -> dict:
    """Summary of the last training run: status, seed, models, hashes."""
    m = load_manifest(config)
    return {
        "status": m.status,
        "failed_stage": m.failed_stage,
        "tool_version": m.tool_version,
        "seed": m.seed,
        "models": list(m.config.get("pipeline", {}).get("models", [])),
        "two_stage": bool(m.config.get("pipeline", {}).get("two_stage", False)),
        "stages": [s["name"] for s in m.stages],
        "artifacts": dict(m.artifacts),
    }
