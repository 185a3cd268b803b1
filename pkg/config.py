"""
Run configuration for selfgate
JSON files map onto nested dataclasses; `--set section.key=value` overrides and
environment variables are applied on top, then validate() checks every field
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence

from errors import ConfigError

logger = logging.getLogger(__name__)

TASKS = ("auto", "node-classification", "link-prediction")
VARIANTS = ("base", "sfgnn")

ENV_SEED = "SELFGATE_SEED"
ENV_LOG_LEVEL = "SELFGATE_LOG_LEVEL"


@dataclass
class DataConfig:
    path: Optional[str] = None
    resplit: bool = False


@dataclass
class ModelConfig:
    task: str = "auto"
    encoder: str = "compgcn"
    decoder: str = "distmult"
    layers: int = 2
    dim: int = 32
    variant: str = "sfgnn"
    activation: str = "auto"
    composition: str = "sub"


@dataclass
class GateConfig:
    tau: float = 1.0
    tau_final: Optional[float] = None
    w_init: Optional[float] = None
    eval_policy: str = "deterministic"
    detach_quality: bool = False
    quality_mode: str = "auto"
    true_class_on_train: bool = False
    cap: int = 32
    pin: Optional[int] = None
    hard: bool = True


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 1024
    lr: float = 0.005
    negatives: int = 10
    seed: int = 0
    clip_norm: float = 10.0
    eval_every: int = 1


@dataclass
class OutputConfig:
    dir: str = "runs/default"
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.jsonl"
    run_db: Optional[str] = "selfgate_runs.db"

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)


SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "gate": GateConfig,
    "train": TrainConfig,
    "output": OutputConfig,
}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    gate: GateConfig = field(default_factory=GateConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        sections = {}
        for key, value in raw.items():
            if key not in SECTIONS:
                raise ConfigError(key, "unknown config section")
            if not isinstance(value, dict):
                raise ConfigError(key, "section must be an object")
            section_type = SECTIONS[key]
            declared = {f.name: f for f in fields(section_type)}
            defaults = section_type()
            coerced = {}
            for name, item in value.items():
                if name not in declared:
                    raise ConfigError(f"{key}.{name}", "unknown config key")
                coerced[name] = _coerce(f"{key}.{name}", item, getattr(defaults, name), declared[name].type)
            sections[key] = section_type(**coerced)
        return cls(**sections)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def copy(self) -> "RunConfig":
        return RunConfig.from_dict(self.to_dict())

    def set(self, dotted: str, value: Any) -> None:
        """Assign one `section.key`, coercing to the field's declared type"""
        section_name, _, key = dotted.partition(".")
        if section_name not in SECTIONS or not key:
            raise ConfigError(dotted, "override keys look like section.key")
        section = getattr(self, section_name)
        declared = {f.name: f for f in fields(section)}
        if key not in declared:
            raise ConfigError(dotted, "unknown config key")
        setattr(section, key, _coerce(dotted, value, getattr(section, key), declared[key].type))

    def validate(self, require_data: bool = True) -> "RunConfig":
        m, g, t = self.model, self.gate, self.train
        if require_data and not self.data.path:
            raise ConfigError("data.path", "dataset path is required")
        if m.task not in TASKS:
            raise ConfigError("model.task", f"must be one of {TASKS}")
        if m.encoder not in ("mean", "rgcn", "compgcn"):
            raise ConfigError("model.encoder", "must be mean, rgcn or compgcn")
        if m.decoder not in ("transe", "distmult"):
            raise ConfigError("model.decoder", "must be transe or distmult")
        if m.variant not in VARIANTS:
            raise ConfigError("model.variant", f"must be one of {VARIANTS}")
        if m.activation not in ("auto", "tanh", "relu", "identity"):
            raise ConfigError("model.activation", "must be auto, tanh, relu or identity")
        if m.composition not in ("sub", "mul"):
            raise ConfigError("model.composition", "must be sub or mul")
        if m.layers < 1:
            raise ConfigError("model.layers", "must be >= 1")
        if m.dim < 1:
            raise ConfigError("model.dim", "must be >= 1")
        if g.tau <= 0:
            raise ConfigError("gate.tau", "must be > 0")
        if g.tau_final is not None and g.tau_final <= 0:
            raise ConfigError("gate.tau_final", "must be > 0")
        if g.eval_policy not in ("deterministic", "sampled"):
            raise ConfigError("gate.eval_policy", "must be deterministic or sampled")
        if g.quality_mode not in ("auto", "sigmoid", "raw"):
            raise ConfigError("gate.quality_mode", "must be auto, sigmoid or raw")
        if g.cap < 1:
            raise ConfigError("gate.cap", "must be >= 1")
        if g.pin not in (None, 0, 1):
            raise ConfigError("gate.pin", "must be null, 0 or 1")
        if t.epochs < 1:
            raise ConfigError("train.epochs", "must be >= 1")
        if t.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if t.lr < 0:
            raise ConfigError("train.lr", "must be >= 0")
        if t.negatives < 1:
            raise ConfigError("train.negatives", "must be >= 1 for link prediction")
        if t.clip_norm <= 0:
            raise ConfigError("train.clip_norm", "must be > 0")
        if t.eval_every < 1:
            raise ConfigError("train.eval_every", "must be >= 1")
        return self


def _coerce(dotted: str, value: Any, current: Any, declared: Any) -> Any:
    if value is None:
        if "Optional" in str(declared):
            return None
        raise ConfigError(dotted, "may not be null")
    target = type(current) if current is not None else None
    if target is None:
        text = str(declared)
        target = int if "int" in text else float if "float" in text else str
    try:
        if target is bool:
            if isinstance(value, str):
                lowered = value.lower()
                if lowered not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return lowered in ("true", "1")
            return bool(value)
        if target is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return target(value)
    except (TypeError, ValueError):
        raise ConfigError(dotted, f"cannot interpret {value!r} as {target.__name__}")


def parse_override(text: str):
    """`section.key=value`; the value is JSON when it parses, a plain string otherwise"""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(text, "override must look like section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: Optional[str] = None, overrides: Sequence[str] = (),
                env: Optional[Dict[str, str]] = None) -> RunConfig:
    """Defaults <- JSON file <- SELFGATE_SEED <- --set overrides"""
    config = RunConfig()
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON in {path}: {exc}")
        config = RunConfig.from_dict(raw)

    env = os.environ if env is None else env
    if env.get(ENV_SEED):
        config.set("train.seed", env[ENV_SEED])

    for text in overrides:
        key, value = parse_override(text)
        config.set(key, value)
    return config


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class SweepSpec:
    """Layer-depth sweep: every (layers, variant, seed) cell, optionally per learning rate"""
    base: RunConfig
    layers: List[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    variants: List[str] = field(default_factory=lambda: ["base", "sfgnn"])
    seeds: List[int] = field(default_factory=lambda: [0])
    lr_grid: Optional[List[float]] = None

    def validate(self) -> "SweepSpec":
        if not self.layers:
            raise ConfigError("sweep.layers", "must be nonempty")
        if any(l < 1 for l in self.layers):
            raise ConfigError("sweep.layers", "values must be >= 1")
        if not self.variants or any(v not in VARIANTS for v in self.variants):
            raise ConfigError("sweep.variants", f"must be a nonempty subset of {VARIANTS}")
        if not self.seeds:
            raise ConfigError("sweep.seeds", "must be nonempty")
        if self.lr_grid is not None and (not self.lr_grid or any(lr < 0 for lr in self.lr_grid)):
            raise ConfigError("sweep.lr_grid", "must be a nonempty list of rates >= 0")
        self.base.validate()
        return self

    def cells(self):
        """(layers, variant, seed) in table order"""
        for layers in self.layers:
            for variant in self.variants:
                for seed in self.seeds:
                    yield layers, variant, seed

    def config_for(self, layers: int, variant: str, seed: int, lr: Optional[float] = None,
                   out_dir: Optional[str] = None) -> RunConfig:
        config = self.base.copy()
        config.model = replace(config.model, layers=layers, variant=variant)
        config.train = replace(config.train, seed=seed, lr=config.train.lr if lr is None else lr)
        if out_dir is not None:
            config.output = replace(config.output, dir=out_dir)
        return config


def parse_int_list(field_name: str, text: str) -> List[int]:
    """'1,2,3' or '1-5' into a list of ints"""
    values: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                values.extend(range(int(lo), int(hi) + 1))
            else:
                values.append(int(part))
    except ValueError:
        raise ConfigError(field_name, f"cannot parse integer list {text!r}")
    return values


def parse_float_list(field_name: str, text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(field_name, f"cannot parse number list {text!r}")
