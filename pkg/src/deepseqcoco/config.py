"""JSON run configuration.

Example::

    {
      "seed": 0,
      "dataset": {"root": "data/toy"},
      "network": {"preset": "desk"},
      "augment": {"flip_probability": 0.5, "rotation_factor": 0.2, "zoom_factor": 0.2},
      "split": {"train_fraction": 0.8},
      "train": {"batch_size": 32,
                "schedule": [{"optimizer": "sgd", "epochs": 3},
                             {"optimizer": "adam", "epochs": 2}]},
      "output_dir": "runs/toy"
    }

Relative paths resolve against the directory holding the config file.
Unknown keys are rejected.  A section-level ``seed`` overrides the
top-level one for that section only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .augment import AugmentConfig
from .dataset import SplitConfig
from .errors import ConfigError, SpecError
from .nn import NetworkSpec, preset
from .optim import Schedule

OUT_DIR_ENV = "DEEPSEQCOCO_OUT"

_TOP_KEYS = {"seed", "dataset", "network", "augment", "split", "train", "output_dir"}
_DATASET_KEYS = {"root", "manifest"}
_NETWORK_KEYS = {"preset", "overrides", "spec"}
_SPLIT_KEYS = {"train_fraction", "seed", "shuffle"}
_TRAIN_KEYS = {"epochs", "batch_size", "seed", "schedule", "eval_every_epoch"}


@dataclass
class RunConfig:
    seed: int = 0
    dataset_root: Optional[Path] = None
    manifest: Optional[Path] = None
    network: NetworkSpec = field(default_factory=lambda: preset("desk"))
    preset_name: Optional[str] = "desk"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    schedule: Schedule = field(default_factory=lambda: Schedule.of(("adam", 5)))
    epochs: Optional[int] = None
    batch_size: int = 32
    train_seed: Optional[int] = None
    eval_every_epoch: bool = True
    output_dir: Optional[Path] = None

    def resolved_output_dir(self) -> Path:
        if self.output_dir is not None:
            return self.output_dir
        return Path(os.environ.get(OUT_DIR_ENV, "runs"))

    def with_seed(self, seed: int) -> "RunConfig":
        """Apply one seed everywhere (command-line ``--seed``)."""
        return replace(self, seed=seed, train_seed=seed, split=replace(self.split, seed=seed),
                       augment=replace(self.augment, seed=seed))

    def with_preset(self, name: str) -> "RunConfig":
        try:
            return replace(self, network=preset(name), preset_name=name)
        except SpecError as exc:
            raise ConfigError(str(exc)) from None


def _reject_unknown(section: str, d, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}")


def parse_config(data: dict, base: Path = Path(".")) -> RunConfig:
    _reject_unknown("config", data, _TOP_KEYS)
    seed = int(data.get("seed", 0))
    cfg = RunConfig(seed=seed)
    try:
        ds = data.get("dataset", {})
        _reject_unknown("dataset", ds, _DATASET_KEYS)
        if "root" in ds:
            cfg.dataset_root = base / ds["root"]
            if not cfg.dataset_root.is_dir():
                raise ConfigError(f"dataset.root {cfg.dataset_root} does not exist")
        if "manifest" in ds:
            cfg.manifest = base / ds["manifest"]
            if not cfg.manifest.is_file():
                raise ConfigError(f"dataset.manifest {cfg.manifest} does not exist")

        net = data.get("network", {"preset": "desk"})
        _reject_unknown("network", net, _NETWORK_KEYS)
        if "spec" in net:
            if "preset" in net:
                raise ConfigError("network: give either 'preset' or 'spec', not both")
            cfg.network = NetworkSpec.from_dict(net["spec"])
            cfg.preset_name = None
        else:
            cfg.preset_name = net.get("preset", "desk")
            overrides = dict(net.get("overrides", {}))
            if "input_size" in overrides:
                overrides["input_size"] = tuple(overrides["input_size"])
            cfg.network = preset(cfg.preset_name, **overrides)

        aug = dict(data.get("augment", {}))
        aug.setdefault("seed", seed)
        cfg.augment = AugmentConfig.from_dict(aug)

        sp = data.get("split", {})
        _reject_unknown("split", sp, _SPLIT_KEYS)
        cfg.split = SplitConfig(**{"seed": seed, **sp})

        tr = data.get("train", {})
        _reject_unknown("train", tr, _TRAIN_KEYS)
        if "schedule" in tr:
            cfg.schedule = Schedule.from_list(tr["schedule"])
        cfg.epochs = tr.get("epochs")
        cfg.batch_size = int(tr.get("batch_size", 32))
        cfg.train_seed = tr.get("seed")
        cfg.eval_every_epoch = bool(tr.get("eval_every_epoch", True))
    except (SpecError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.epochs is not None and cfg.epochs not in (0, cfg.schedule.total_epochs):
        raise ConfigError(f"train.epochs={cfg.epochs} but the schedule covers {cfg.schedule.total_epochs}")
    if "output_dir" in data:
        cfg.output_dir = base / data["output_dir"]
    return cfg


def load_config(path) -> RunConfig:
    """Parse a config file; syntax errors report ``path:line:column``."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return parse_config(data, path.parent)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
