"""Primary pipeline config (``config.yml``) and per-model configs
(``<model_id>.yml``).

All paths in a pipeline config are relative and resolve against the
directory holding ``config.yml``, so a project folder can be copied to
another machine unchanged.

Defaults
--------
=================  ======================================================
field              default
=================  ======================================================
csv_path           ``input_data/data.csv``
matrix_root        none (read ``csv_path``)
site_registry      ``input_data/sites.csv``
normalize          true
transform          true
impute             true
imputation_models  ``imputation_models``
mid_process_data   ``mid_process_data``
training_data      ``mid_process_data/prepped.csv``
training_output    ``training_output``
two_stage          false
models             ``[nn, forest, gradboost]``
seed               42
neighbor_count     5
idw_power          2.0
grid               none
=================  ======================================================

Per-model defaults are in :data:`MODEL_DEFAULTS`.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path, PurePosixPath, PureWindowsPath

import yaml

from .interpolate import GridSpec

MODEL_IDS = ("nn", "forest", "gradboost")
CONFIG_NAME = "config.yml"


class ConfigError(ValueError):
    pass


PATH_FIELDS = ("csv_path", "matrix_root", "site_registry", "imputation_models",
               "mid_process_data", "training_data", "training_output")
FLAG_FIELDS = ("normalize", "transform", "impute", "two_stage")

DEFAULTS = {
    "csv_path": "input_data/data.csv",
    "matrix_root": None,
    "site_registry": "input_data/sites.csv",
    "normalize": True,
    "transform": True,
    "impute": True,
    "imputation_models": "imputation_models",
    "mid_process_data": "mid_process_data",
    "training_data": "mid_process_data/prepped.csv",
    "training_output": "training_output",
    "two_stage": False,
    "models": ["nn", "forest", "gradboost"],
    "seed": 42,
    "neighbor_count": 5,
    "idw_power": 2.0,
    "grid": None,
}
# fields a hand-written config.yml must contain; the rest fall back to DEFAULTS
REQUIRED = ("csv_path", "normalize", "transform", "impute", "imputation_models",
            "mid_process_data", "training_data", "training_output", "two_stage", "models")


@dataclass(frozen=True)
class PipelineConfig:
    csv_path: str
    normalize: bool
    transform: bool
    impute: bool
    imputation_models: str
    mid_process_data: str
    training_data: str
    training_output: str
    two_stage: bool
    models: tuple
    matrix_root: str | None = None
    site_registry: str = DEFAULTS["site_registry"]
    seed: int = 42
    neighbor_count: int = 5
    idw_power: float = 2.0
    grid: GridSpec | None = None
    # where the file lives; not part of the config contents
    base_dir: Path | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        _validate(self)

    @property
    def path(self) -> Path:
        return Path(self.base_dir or ".") / CONFIG_NAME

    def resolve(self, name: str) -> Path:
        """Absolute location of path field ``name``."""
        value = getattr(self, name)
        if value is None:
            raise ConfigError(f"config field {name!r} is not set")
        return Path(self.base_dir or ".") / value

    def to_dict(self) -> dict:
        """Field values in canonical file order."""
        out = {}
        for key in DEFAULTS:
            v = getattr(self, key)
            if key == "models":
                v = list(v)
            elif key == "grid" and v is not None:
                v = v.to_dict()
            elif key == "idw_power":
                v = float(v)
            out[key] = v
        return out

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **_coerce(kw))


def _is_absolute(p: str) -> bool:
    return (PurePosixPath(p).is_absolute() or PureWindowsPath(p).is_absolute()
            or bool(re.match(r"^[A-Za-z]:", p)) or p.startswith("~"))


def _validate(cfg: PipelineConfig):
    for name in PATH_FIELDS:
        v = getattr(cfg, name)
        if v is None and name == "matrix_root":
            continue
        if not isinstance(v, str) or not v:
            raise ConfigError(f"{name}: expected a relative path string, got {v!r}")
        if _is_absolute(v):
            raise ConfigError(f"{name}: paths must be relative, got {v!r}")
    for name in FLAG_FIELDS:
        if not isinstance(getattr(cfg, name), bool):
            raise ConfigError(f"{name}: expected a boolean, got {getattr(cfg, name)!r}")
    models = cfg.models
    if not isinstance(models, tuple) or not models:
        raise ConfigError("models: must be a non-empty list")
    unknown = [m for m in models if m not in MODEL_IDS]
    if unknown:
        raise ConfigError(f"models: unknown model identifier {unknown[0]!r} "
                          f"(expected one of {', '.join(MODEL_IDS)})")
    if len(set(models)) != len(models):
        raise ConfigError("models: duplicate model identifier")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise ConfigError(f"seed: expected an unsigned 64-bit integer, got {cfg.seed!r}")
    if isinstance(cfg.neighbor_count, bool) or not isinstance(cfg.neighbor_count, int) \
            or cfg.neighbor_count < 1:
        raise ConfigError(f"neighbor_count: expected an integer >= 1, got {cfg.neighbor_count!r}")
    if isinstance(cfg.idw_power, bool) or not isinstance(cfg.idw_power, (int, float)) \
            or not cfg.idw_power > 0 or cfg.idw_power == float("inf"):
        raise ConfigError(f"idw_power: expected a positive number, got {cfg.idw_power!r}")
    if cfg.grid is not None and not isinstance(cfg.grid, GridSpec):
        raise ConfigError("grid: expected a GridSpec")


def _coerce(values: dict) -> dict:
    """Turn YAML/override values into the dataclass field types."""
    out = dict(values)
    if "models" in out and isinstance(out["models"], (list, tuple)):
        out["models"] = tuple(out["models"])
    elif "models" in out and isinstance(out["models"], str):
        out["models"] = (out["models"],)
    if "grid" in out and isinstance(out["grid"], dict):
        g = out["grid"]
        allowed = {"origin_lon", "origin_lat", "cell_size", "n_x", "n_y"}
        extra = set(g) - allowed
        if extra:
            raise ConfigError(f"grid: unknown keys {sorted(extra)}")
        try:
            out["grid"] = GridSpec(**g)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"grid: {err}") from err
    if isinstance(out.get("idw_power"), int) and not isinstance(out.get("idw_power"), bool):
        out["idw_power"] = float(out["idw_power"])
    return out


def _build(values: dict, base_dir) -> PipelineConfig:
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    try:
        return PipelineConfig(**_coerce(values), base_dir=Path(base_dir) if base_dir else None)
    except TypeError as err:
        raise ConfigError(str(err)) from err


def dump_config(cfg: PipelineConfig) -> str:
    """Canonical YAML text: fixed key order, lowercase booleans."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=False)


def gen_config(overrides: dict | None = None, dir=".") -> PipelineConfig:
    """Write ``<dir>/config.yml`` holding the defaults merged with
    ``overrides`` and return the resulting config."""
    d = Path(dir)
    if not d.is_dir():
        raise ConfigError(f"config directory does not exist: {d}")
    values = dict(DEFAULTS)
    for key, v in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config field: {key}")
        values[key] = v
    cfg = _build(values, d)
    cfg.path.write_text(dump_config(cfg))
    return cfg


def _strip_elisions(text: str) -> str:
    # a bare "..." line is an elision in hand-written listings; YAML would
    # read it as an end-of-document marker
    return "\n".join(line for line in text.splitlines() if line.strip() != "...")


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(_strip_elisions(path.read_text()))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: malformed YAML: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of config fields")
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"{path}: missing required field {key!r}")
    values = dict(DEFAULTS)
    values.update(raw)
    return _build(values, path.parent)


# per-model configs -----------------------------------------------------------

MODEL_DEFAULTS = {
    "nn": {"folds": 10, "hidden_layers": [32, 32], "epochs": 50, "learning_rate": 0.01,
           "batch_size": 256},
    "forest": {"folds": 10, "n_trees": 100, "max_depth": 10, "min_leaf": 5,
               "feature_fraction": 0.5},
    "gradboost": {"folds": 10, "n_trees": 100, "learning_rate": 0.1, "max_depth": 4,
                  "subsample_fraction": 0.8, "min_leaf": 5},
}
_COUNTS = {"epochs", "batch_size", "n_trees", "min_leaf"}
_FRACTIONS = {"learning_rate", "feature_fraction", "subsample_fraction"}


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    folds: int
    hyperparameters: dict

    def __post_init__(self):
        if self.model_id not in MODEL_IDS:
            raise ConfigError(f"unknown model identifier {self.model_id!r}")
        if isinstance(self.folds, bool) or not isinstance(self.folds, int) or self.folds < 2:
            raise ConfigError(f"{self.model_id}: folds must be an integer >= 2, got {self.folds!r}")
        allowed = set(MODEL_DEFAULTS[self.model_id]) - {"folds"}
        unknown = sorted(set(self.hyperparameters) - allowed)
        if unknown:
            raise ConfigError(f"{self.model_id}: unknown hyperparameter(s) {unknown}")
        for k, v in self.hyperparameters.items():
            _check_hyper(self.model_id, k, v)

    def __getitem__(self, key):
        return self.hyperparameters[key]

    def with_overrides(self, **kw) -> "ModelConfig":
        hp = dict(self.hyperparameters)
        folds = kw.pop("folds", self.folds)
        hp.update(kw)
        return ModelConfig(self.model_id, folds, hp)

    def to_dict(self) -> dict:
        return {"folds": self.folds, **{k: self.hyperparameters[k]
                                        for k in MODEL_DEFAULTS[self.model_id] if k != "folds"}}


def _check_hyper(model_id, k, v):
    where = f"{model_id}.{k}"
    if k == "hidden_layers":
        if not isinstance(v, (list, tuple)) or any(
                isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in v):
            raise ConfigError(f"{where}: expected a list of positive integers, got {v!r}")
    elif k == "max_depth":
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            raise ConfigError(f"{where}: expected an integer >= 1 or null, got {v!r}")
    elif k in _COUNTS:
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{where}: expected an integer >= 1, got {v!r}")
    elif k in _FRACTIONS:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 < v <= 1:
            raise ConfigError(f"{where}: expected a value in (0, 1], got {v!r}")


def default_model_config(model_id: str) -> ModelConfig:
    if model_id not in MODEL_IDS:
        raise ConfigError(f"unknown model identifier {model_id!r}")
    d = dict(MODEL_DEFAULTS[model_id])
    folds = d.pop("folds")
    return ModelConfig(model_id, folds, d)


def load_model_config(model_id: str, dir=".") -> ModelConfig:
    """``<dir>/<model_id>.yml`` merged over the defaults; the defaults alone
    when that file does not exist."""
    base = default_model_config(model_id)
    path = Path(dir) / f"{model_id}.yml"
    if not path.exists():
        return base
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: malformed YAML: {err}") from err
    if raw is None:
        return base
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping of hyperparameters")
    return base.with_overrides(**raw)


def write_model_config(mc: ModelConfig, dir=".") -> Path:
    path = Path(dir) / f"{mc.model_id}.yml"
    path.write_text(yaml.safe_dump(mc.to_dict(), sort_keys=False, default_flow_style=False))
    return path


def config_fields() -> list[str]:
    return [f.name for f in fields(PipelineConfig) if f.name != "base_dir"]
