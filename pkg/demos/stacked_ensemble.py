"""
Stacked ensemble on a synthetic monitor network
===============================================

Generate a site-day dataset with a known latent field, hold out whole
sites, train the three learners plus the additive stack, and compare each
model on the held-out sites against the best achievable R^2.
"""
import tempfile
from pathlib import Path

import numpy as np

from airstack import pipeline
from airstack.config import default_model_config, gen_config, write_model_config
from airstack.ensemble import component_matrix
from airstack.ingest import OUTCOME, write_table_csv
from airstack.stack import load_stack
from airstack.synth import noise_sd_for_r2, split_sites, synth

root = Path(tempfile.mkdtemp(prefix="airstack-demo-"))
n_days = 45
res = synth(n_sites=80, n_days=n_days, noise_sd=noise_sd_for_r2(n_days, 0.9), seed=1,
            out_dir=root / "input_data")
print(f"{len(res.table)} site-days, Var(f) = {res.field_variance:.3f}, R^2 ceiling {res.r2_max:.3f}")
print(f"aod missing in {res.table['aod'].isna().mean():.0%} of rows")

train, hold = split_sites(res.table, n_holdout=16, seed=1)
write_table_csv(train, root / "input_data" / "data.csv")

# the project: config.yml plus one file per learner, smaller than the defaults
cfg = gen_config({}, root)
smaller = {"nn": {"epochs": 30}, "forest": {"n_trees": 40}, "gradboost": {"n_trees": 60}}
for mid in cfg.models:
    write_model_config(default_model_config(mid).with_overrides(folds=5, **smaller[mid]), root)

manifest = pipeline.train(cfg)
print("stages:", ", ".join(s["name"] for s in manifest.stages))

pred = pipeline.predict(cfg, hold.drop(columns=[OUTCOME]), write=False)
y = hold[OUTCOME].to_numpy()
for col in ["nn", "forest", "gradboost", "ensemble"]:
    p = pred[col].to_numpy()
    print(f"{col:>10s}  held-out R^2 {1 - np.sum((y - p) ** 2) / np.sum((y - y.mean()) ** 2):.3f}")

# how much each base model moves the stack over its observed range
models, ens = load_stack(cfg.resolve("training_output"), list(cfg.models))
oof = np.loadtxt(cfg.resolve("training_output") / "oof_predictions.csv", delimiter=",",
                 skiprows=1, usecols=(2, 3, 4))
spread = np.ptp(component_matrix(ens, oof), axis=0)
for name, s, lam in zip(ens.names, spread, [c.lam for c in ens.components]):
    print(f"{name:>10s}  component range {s:.3f}  lambda {lam:.3g}")
print("artifacts in", cfg.resolve("training_output"))
