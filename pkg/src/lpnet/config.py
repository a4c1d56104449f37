"""INI experiment configuration.

Example::

    [experiment]
    name = syn-n4g4
    mode = synchronous          ; or asynchronous
    seed = 0
    iterations = 120

    [data]
    train_images = data/subset-train-images.idx
    train_labels = data/subset-train-labels.idx
    test_images = data/subset-test-images.idx
    test_labels = data/subset-test-labels.idx

    [network]
    dims = 784, 784, 784, 784, 784
    goal_level = 4

    [levels]                    ; shared by every level
    preset = mnist              ; weights 34, threshold M_l / (2 l)

    [level.2]                   ; per-level overrides
    coherence = 100

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .core import DynamicGoal, HyperParams, LevelLambdas
from .errors import ConfigError, LPNetError

LAMBDA_KEYS = tuple(f.name for f in fields(LevelLambdas))
MODE_ALIASES = {"syn": "synchronous", "asyn": "asynchronous",
                "synchronous": "synchronous", "asynchronous": "asynchronous"}


@dataclass
class DataConfig:
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subset: int | None = None
    normalize: bool = True


@dataclass
class SyntheticConfig:
    num_classes: int = 3
    per_class: int = 40
    separation: float = 3.0
    spread: float = 1.0
    seed: int = 0
    epsilon: float | None = None


@dataclass
class ExperimentConfig:
    name: str
    dims: tuple[int, ...]
    hyper: HyperParams
    goal_level: int | None = None
    goal_sweeps: int = 3
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def goal(self) -> DynamicGoal | None:
        if self.goal_level is None:
            return None
        lam = self.hyper.level(self.goal_level)
        return DynamicGoal(lam.discrimination, lam.sparsity, self.goal_sweeps)

    def goals(self) -> dict:
        return {} if self.goal_level is None else {self.goal_level: self.goal()}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dims"] = list(self.dims)
        return out

    def digest(self) -> str:
        """sha256 of the canonical JSON form of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, seed=None, mode=None, subset=None) -> ExperimentConfig:
        hyper = self.hyper
        if seed is not None:
            hyper = replace(hyper, seed=seed)
        if mode is not None:
            hyper = replace(hyper, mode=MODE_ALIASES[mode])
        data = self.data if subset is None else replace(self.data, subset=subset)
        return replace(self, hyper=hyper, data=data)


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key]
    try:
        if conv is bool:
            return section.getboolean(key)
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from exc


def _level_values(section, dims, l) -> dict:
    values = {}
    preset = section.get("preset", "").strip().lower() if section is not None else ""
    if preset == "mnist":
        weight = _get(section, "preset_weight", float, 34.0)
        values = dict(discrimination=weight, sparsity=dims[l] / (2.0 * l), ridge=weight,
                      coherence=weight, logdet=weight, similarity=weight,
                      flow_prev=1.0, flow_next=1.0)
    elif preset:
        raise ConfigError(f"unknown preset {preset!r}")
    if section is not None:
        for key in LAMBDA_KEYS:
            if key in section:
                values[key] = _get(section, key, float, None)
    return values


def parse(text: str, base_dir: Path | str = ".") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    base_dir = Path(base_dir)
    known = {"experiment", "data", "network", "levels", "synthetic"}
    for name in cp.sections():
        if name not in known and not name.startswith("level."):
            raise ConfigError(f"unknown section [{name}]")
    if "network" not in cp or "dims" not in cp["network"]:
        raise ConfigError("[network] dims is required")

    net = cp["network"]
    try:
        dims = tuple(int(x) for x in net["dims"].replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"[network] dims: {exc}") from exc
    if len(dims) < 2:
        raise ConfigError("[network] dims needs at least two entries")
    depth = len(dims) - 1
    goal_level = _get(net, "goal_level", int, None)
    if goal_level is not None and not 1 <= goal_level <= depth:
        raise ConfigError(f"goal_level {goal_level} outside 1..{depth}")

    shared = cp["levels"] if "levels" in cp else None
    levels = []
    for l in range(1, depth + 1):
        values = _level_values(shared, dims, l)
        own = f"level.{l}"
        if own in cp:
            values.update(_level_values(cp[own], dims, l))
        try:
            levels.append(LevelLambdas(**values))
        except (TypeError, LPNetError) as exc:
            raise ConfigError(f"level {l}: {exc}") from exc
    for name in cp.sections():
        if name.startswith("level."):
            suffix = name.split(".", 1)[1]
            if not suffix.isdigit() or not 1 <= int(suffix) <= depth:
                raise ConfigError(f"section [{name}] does not name a level in 1..{depth}")

    exp = cp["experiment"] if "experiment" in cp else cp[cp.default_section]
    mode = exp.get("mode", "synchronous").strip().lower()
    if mode not in MODE_ALIASES:
        raise ConfigError(f"mode must be one of {sorted(MODE_ALIASES)}")
    try:
        hyper = HyperParams(
            levels=tuple(levels),
            step=_get(exp, "step", float, 0.5),
            batch_fraction=_get(exp, "batch_fraction", float, 0.15),
            iterations=_get(exp, "iterations", int, 120),
            mode=MODE_ALIASES[mode],
            bernoulli_p=_get(exp, "bernoulli_p", float, 0.5),
            knn_k=_get(exp, "knn_k", int, 3),
            seed=_get(exp, "seed", int, 0),
            tie_backward=_get(exp, "tie_backward", bool, True),
            goal_stage=_get(exp, "goal_stage", int, 1),
            cycles=_get(exp, "cycles", int, 1),
            refine_steps=_get(exp, "refine_steps", int, 20),
        )
    except LPNetError as exc:
        raise ConfigError(str(exc)) from exc

    data = DataConfig()
    if "data" in cp:
        sec = cp["data"]
        paths = {}
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if key in sec:
                p = Path(sec[key])
                paths[key] = str(p if p.is_absolute() else base_dir / p)
        data = DataConfig(**paths, subset=_get(sec, "subset", int, None),
                          normalize=_get(sec, "normalize", bool, True))

    synthetic = SyntheticConfig()
    if "synthetic" in cp:
        sec = cp["synthetic"]
        synthetic = SyntheticConfig(
            num_classes=_get(sec, "num_classes", int, 3),
            per_class=_get(sec, "per_class", int, 40),
            separation=_get(sec, "separation", float, 3.0),
            spread=_get(sec, "spread", float, 1.0),
            seed=_get(sec, "seed", int, 0),
            epsilon=_get(sec, "epsilon", float, None),
        )

    return ExperimentConfig(
        name=exp.get("name", "experiment"),
        dims=dims,
        hyper=hyper,
        goal_level=goal_level,
        goal_sweeps=_get(net, "goal_sweeps", int, 3),
        data=data,
        synthetic=synthetic,
    )


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse(text, path.parent)
