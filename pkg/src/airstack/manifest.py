"""Run manifest: the record of what a training run read, wrote and used."""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__

MANIFEST_NAME = "manifest.yml"


class ManifestError(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclass
class RunManifest:
    """Mutable during a run, written as YAML at the end (and on failure).

    Paths are stored relative to ``base_dir`` (the config directory) so a
    whole project folder can be moved between machines.
    """

    base_dir: Path
    config: dict = field(default_factory=dict)
    seed: int | None = None
    tool_version: str = __version__
    status: str = "incomplete"
    failed_stage: str | None = None
    stages: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def _rel(self, path) -> str:
        return Path(os.path.relpath(Path(path).resolve(), Path(self.base_dir).resolve())).as_posix()

    def start_stage(self, name: str) -> dict:
        entry = {"name": name, "start": _now(), "end": None}
        self.stages.append(entry)
        return entry

    def end_stage(self, entry: dict):
        entry["end"] = _now()

    def add_checkpoint(self, stage: str, path):
        self.checkpoints.append({"stage": stage, "path": self._rel(path), "sha256": sha256_file(path)})

    def add_artifact(self, path):
        self.artifacts[self._rel(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "seed": self.seed,
            "config": self.config,
            "stages": self.stages,
            "checkpoints": self.checkpoints,
            "artifacts": dict(sorted(self.artifacts.items())),
        }

    def write(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False, default_flow_style=False)

    @classmethod
    def read(cls, path, base_dir) -> "RunManifest":
        with open(path) as fh:
            d = yaml.safe_load(fh)
        return cls(
            base_dir=Path(base_dir),
            config=d.get("config") or {},
            seed=d.get("seed"),
            tool_version=d.get("tool_version", ""),
            status=d.get("status", "incomplete"),
            failed_stage=d.get("failed_stage"),
            stages=d.get("stages") or [],
            checkpoints=d.get("checkpoints") or [],
            artifacts=d.get("artifacts") or {},
        )

    def verify(self, paths=None):
        """Raise ManifestError if a recorded artifact is missing or its hash
        differs.  ``paths`` restricts the check to those relative paths."""
        items = self.artifacts.items() if paths is None else ((p, self.artifacts[p]) for p in paths)
        for rel, digest in items:
            full = Path(self.base_dir) / rel
            if not full.exists():
                raise ManifestError(f"artifact listed in manifest is missing: {rel}")
            if sha256_file(full) != digest:
                raise ManifestError(f"artifact hash mismatch: {rel}")
