"""Config-driven ensemble platform for site-day air pollution exposure models.

Typical use::

    from airstack import config, pipeline
    cfg = config.gen_config({}, "project/")
    pipeline.train(cfg)
    preds = pipeline.predict(cfg, new_table)
"""

__version__ = "0.1.0"
