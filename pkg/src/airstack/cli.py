"""``airstack`` command line.

Exit codes: 0 success, 1 invalid usage, config or input data, 2 runtime
failure.  Each subcommand forwards to a single library operation.
"""
from __future__ import annotations

import argparse
import sys

import yaml

from . import __version__, pipeline, synth as synthmod
from .config import CONFIG_NAME, ConfigError, gen_config, load_config
from .ingest import DataError
from .manifest import ManifestError
from .progress import Progress


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _kv(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value) if value.strip() else None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help=f"pipeline config file (default ./{CONFIG_NAME})")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="no progress lines")

    p = _Parser(prog="airstack", parents=[common],
                description="Config-driven site-day ensemble training and prediction.")
    p.add_argument("--version", action="version", version=f"airstack {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("gen-config", parents=[common], help="write config.yml with defaults")
    s.add_argument("--set", dest="overrides", action="append", type=_kv, default=[],
                   metavar="KEY=VALUE", help="override one field (repeatable)")
    s.add_argument("--dir", default=".", help="directory for config.yml")
    sub.add_parser("assemble", parents=[common], help="read raw data and checkpoint it")
    sub.add_parser("preprocess", parents=[common], help="fit and apply preprocessing")
    sub.add_parser("train", parents=[common], help="train models and the ensemble")
    s = sub.add_parser("predict", parents=[common], help="predict with the trained models")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--input", help="site-day CSV to predict (default: the training source)")
    src.add_argument("--grid", action="store_true", help="predict on the config's grid")
    s.add_argument("--sites", help="site registry for the input's coordinates")
    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    s.add_argument("--sites", dest="n_sites", type=int, default=50)
    s.add_argument("--days", dest="n_days", type=int, default=30)
    s.add_argument("--noise-sd", type=float, default=1.0)
    s.add_argument("--out", default="input_data")
    s.add_argument("--spatial", action="store_true", help="spatially correlated two-stage field")
    sub.add_parser("info", parents=[common], help="summarize the last training run")
    return p


def _options(args):
    return (getattr(args, "config", CONFIG_NAME), getattr(args, "threads", 1),
            getattr(args, "seed", None), getattr(args, "quiet", False))


def _run(args) -> int:
    config_path, threads, seed, quiet = _options(args)
    if threads < 1:
        raise UsageError("--threads must be >= 1")
    progress = Progress(quiet=quiet)
    cmd = args.command
    if cmd == "gen-config":
        overrides = dict(args.overrides)
        if seed is not None:
            overrides["seed"] = seed
        cfg = gen_config(overrides, args.dir)
        print(cfg.path)
        return 0
    if cmd == "synth":
        if args.spatial:
            res = synthmod.synth_spatial(args.n_sites, args.n_days, seed or 0, args.out,
                                         noise_sd=args.noise_sd)
        else:
            res = synthmod.synth(args.n_sites, args.n_days, args.noise_sd, seed or 0, args.out)
        print(f"{res.data_path}\n{res.sites_path}\nr2_max {res.r2_max:.6f}")
        return 0
    cfg = load_config(config_path)
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    if cmd == "assemble":
        print(pipeline.assemble(cfg, workers=threads).shape[0], "rows")
    elif cmd == "preprocess":
        pipeline.preprocess(cfg, progress=progress, workers=threads)
        print(cfg.resolve("training_data"))
    elif cmd == "train":
        pipeline.train(cfg, workers=threads, progress=progress)
        print(cfg.resolve("training_output") / pipeline.MANIFEST_NAME)
    elif cmd == "predict":
        if args.grid:
            if cfg.grid is None:
                raise ConfigError("--grid needs a grid section in the config")
            source = cfg.grid
        else:
            source = args.input
        pipeline.predict(cfg, source, sites=args.sites, workers=threads, progress=progress)
        print(cfg.resolve("training_output") / pipeline.PREDICTIONS_NAME)
    elif cmd == "info":
        print(yaml.safe_dump(pipeline.info(cfg), sort_keys=False, default_flow_style=False), end="")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as stop:  # --help / --version
            return int(stop.code or 0)
        return _run(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ConfigError, DataError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except pipeline.StageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1 if isinstance(err.cause, (ConfigError, DataError, FileNotFoundError)) else 2
    except (ManifestError, pipeline.LockError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failure in a library stage
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
