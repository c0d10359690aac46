import sys
from pathlib import Path

import pytest

from airstack.config import default_model_config, gen_config, write_model_config

# small learners so end-to-end tests finish in seconds
FAST_MODELS = {
    "nn": {"folds": 3, "hidden_layers": [8], "epochs": 5, "batch_size": 64},
    "forest": {"folds": 3, "n_trees": 5, "max_depth": 5},
    "gradboost": {"folds": 3, "n_trees": 10, "max_depth": 3},
}


def make_project(root: Path, overrides=None, fast=True, models=None):
    """Config plus per-model files in ``root``; data goes in ``root/input_data``."""
    root.mkdir(parents=True, exist_ok=True)
    ov = dict(overrides or {})
    if models is not None:
        ov["models"] = list(models)
    cfg = gen_config(ov, root)
    if fast:
        for mid in cfg.models:
            write_model_config(default_model_config(mid).with_overrides(**FAST_MODELS[mid]), root)
    return cfg


@pytest.fixture
def project(tmp_path):
    return lambda overrides=None, **kw: make_project(tmp_path / "proj", overrides, **kw)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
