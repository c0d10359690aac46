"""
Borrowing strength from neighbouring sites
==========================================

The spatial generator hides a smooth surface behind a very noisy proxy, so
a model of one site-day leaves errors that are shared by nearby sites.
The second stage adds the distance-weighted stage-1 prediction at each
site's neighbours as one more feature.
"""
import tempfile
from pathlib import Path

import numpy as np

from airstack import pipeline
from airstack.config import default_model_config, gen_config, write_model_config
from airstack.ingest import OUTCOME, write_table_csv
from airstack.synth import split_sites, synth_spatial

root = Path(tempfile.mkdtemp(prefix="airstack-2stage-"))
res = synth_spatial(n_sites=100, n_days=40, seed=11, out_dir=root / "input_data")
train, hold = split_sites(res.table, n_holdout=20, seed=11)
write_table_csv(train, root / "input_data" / "data.csv")

cfg = gen_config({"two_stage": True, "neighbor_count": 5}, root)
for mid in cfg.models:
    write_model_config(default_model_config(mid).with_overrides(folds=5), root)
pipeline.train(cfg)

y = hold[OUTCOME].to_numpy()
rmse = lambda p: np.sqrt(np.mean((y - p) ** 2))

# neighbours come from whichever sites are in the prediction input
for label, table in [("held-out sites only", hold), ("all sites", res.table)]:
    pred = pipeline.predict(cfg, table.drop(columns=[OUTCOME]), write=False)
    pred = pred[pred["site_id"].isin(set(hold["site_id"]))].reset_index(drop=True)
    print(f"{label:>20s}: stage-1 RMSE {rmse(pred['ensemble']):.3f}, "
          f"stage-2 RMSE {rmse(pred['stage2']):.3f}")

print("stage-2 models:", sorted(p.name for p in (cfg.resolve("training_output") / "stage2/models").iterdir()))
