"""Run configuration: YAML file, CLI overrides, canonical serialization."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .audio import PrepParams
from .model import ModelConfig
from .train import ExperimentConfig, TrainConfig

OUTPUT_ROOT_ENV = "BTS_OUTPUT_ROOT"
CACHE_ROOT_ENV = "BTS_CACHE_ROOT"


@dataclass(frozen=True)
class RunConfig:
    dataset_root: Optional[str] = None
    split_list: Optional[str] = None
    demographics: Optional[str] = None
    output_dir: str = "bts-output"
    cache_dir: Optional[str] = None
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    prep: PrepParams = field(default_factory=PrepParams)

    @property
    def manifest_path(self) -> Path:
        return Path(self.output_dir) / "manifest.jsonl"

    @property
    def runs_dir(self) -> Path:
        return Path(self.output_dir) / "runs"

    @property
    def segment_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def to_dict(self) -> dict:
        return {
            "dataset_root": self.dataset_root,
            "split_list": self.split_list,
            "demographics": self.demographics,
            "output_dir": self.output_dir,
            "cache_dir": self.cache_dir,
            "prep": asdict(self.prep),
            **self.experiment.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        experiment = ExperimentConfig.from_dict(
            {k: d.pop(k) for k in ("model", "train", "subset", "scenario") if k in d}
        )
        prep = PrepParams(**(d.pop("prep", None) or {}))
        unknown = set(d) - {"dataset_root", "split_list", "demographics", "output_dir", "cache_dir"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(experiment=experiment, prep=prep, **d)

    def canonical(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True))


def _set(tree: dict, dotted: str, value: Any) -> None:
    *parents, leaf = dotted.split(".")
    node = tree
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """File values, then environment roots, then explicit overrides (dotted keys)."""
    tree: dict = {}
    if path is not None:
        tree = yaml.safe_load(Path(path).read_text()) or {}
    if os.environ.get(OUTPUT_ROOT_ENV) and "output_dir" not in tree:
        tree["output_dir"] = os.environ[OUTPUT_ROOT_ENV]
    if os.environ.get(CACHE_ROOT_ENV) and not tree.get("cache_dir"):
        tree["cache_dir"] = os.environ[CACHE_ROOT_ENV]
    for key, value in (overrides or {}).items():
        if value is not None:
            _set(tree, key, value)
    return RunConfig.from_dict(tree)


__all__ = ["RunConfig", "load_config", "ModelConfig", "TrainConfig", "ExperimentConfig", "PrepParams"]
