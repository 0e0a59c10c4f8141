"""Experiment configuration: JSON in, validated dataclasses out.

Unknown keys are rejected and every constraint violation names the dotted key
it concerns (e.g. ``dropout.keep_prob``).  Model-dependent defaults
(optimizer, learning rate, batch size) are resolved at parse time, so a parsed
config re-emitted with :func:`config_to_json` parses back to an equal object.
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from typing import Optional

TASKS = ("verify", "train", "sweep", "mc_check", "compare")
MODELS = ("linear", "text_cnn")


class ConfigError(ValueError):
    pass


@dataclass
class DropoutConfig:
    variant: str = "self_balanced"
    keep_prob: float = 0.5
    keep_prob_input: Optional[float] = None
    keep_prob_hidden: Optional[float] = None
    granularity: str = "per_feature"
    inference_mode: str = "passthrough"


@dataclass
class DataConfig:
    seed: Optional[int] = None
    rho: float = 0.95
    n_train: int = 100
    n_test: int = 1000
    dim: int = 10
    noise_sigma: float = 1.0
    feature_mean: float = 1.0
    signal: float = 1.0
    decorrelate_test: bool = True
    vocab_size: int = 200
    seq_len: int = 12
    path: Optional[str] = None
    test_fraction: float = 0.2


@dataclass
class OptimizerConfig:
    name: Optional[str] = None
    lr: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class ArchitectureConfig:
    init_scale: float = 2.0
    bias: bool = True
    embed_dim: int = 16
    width: int = 3
    filters: int = 8
    site: str = "hidden"


@dataclass
class SweepConfig:
    keep_prob: list[float] = field(default_factory=list)
    keep_prob_input: list[float] = field(default_factory=list)
    keep_prob_hidden: list[float] = field(default_factory=list)


@dataclass
class CompareConfig:
    n_seeds: int = 20
    variants: list[str] = field(default_factory=lambda: ["standard", "self_balanced"])


@dataclass
class McConfig:
    instances: int = 20
    n: int = 3
    d: int = 3
    samples: int = 100_000
    mask: str = "scalar"


@dataclass
class OutputConfig:
    dir: str = "results"
    parallel: int = 1


@dataclass
class ExperimentConfig:
    task: str = "train"
    model: str = "linear"
    seed: int = 0
    epochs: int = 30
    batch_size: Optional[int] = None
    dropout: DropoutConfig = field(default_factory=DropoutConfig)
    data: DataConfig = field(default_factory=DataConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    mc: McConfig = field(default_factory=McConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def data_seed(self) -> int:
        return self.seed if self.data.seed is None else self.data.seed

    def keep_probs(self) -> tuple[float, float]:
        """(input, hidden) keep probabilities for the text CNN."""
        d = self.dropout
        p_in = d.keep_prob if d.keep_prob_input is None else d.keep_prob_input
        p_hid = d.keep_prob if d.keep_prob_hidden is None else d.keep_prob_hidden
        return p_in, p_hid


_MODEL_DEFAULTS = {
    "linear": {"optimizer": "sgd", "lr": 0.03, "batch_size": 10},
    "text_cnn": {"optimizer": "adam", "lr": 0.01, "batch_size": 20},
}


def _unwrap_optional(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return args[0], True
    return tp, False


def _coerce(value, tp, key: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{key}: must not be null")
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if typing.get_origin(tp) is list:
        (item_tp,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {type(value).__name__}")
        return [_coerce(v, item_tp, f"{key}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported config field type {tp!r}")


def _build(cls, doc, prefix: str = ""):
    if not isinstance(doc, dict):
        raise ConfigError(f"{prefix or '<root>'}: expected a JSON object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        where = f" in {prefix}" if prefix else ""
        raise ConfigError(f"unknown key{'s' if len(unknown) > 1 else ''}{where}: "
                          + ", ".join(f"{prefix + '.' if prefix else ''}{k}" for k in unknown))
    kwargs = {name: _coerce(doc[name], hints[name], f"{prefix + '.' if prefix else ''}{name}")
              for name in names if name in doc}
    return cls(**kwargs)


def _require(cond: bool, key: str, constraint: str, value) -> None:
    if not cond:
        raise ConfigError(f"{key}: must be {constraint}, got {value!r}")


def _check_prob(key: str, value) -> None:
    _require(value is None or 0.0 < value <= 1.0, key, "in range (0, 1]", value)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    _require(cfg.task in TASKS, "task", f"one of {TASKS}", cfg.task)
    _require(cfg.model in MODELS, "model", f"one of {MODELS}", cfg.model)
    _require(0 <= cfg.seed < 2**64, "seed", "a 64-bit unsigned integer", cfg.seed)
    _require(cfg.epochs >= 1, "epochs", ">= 1", cfg.epochs)

    d = cfg.dropout
    _require(d.variant in ("standard", "self_balanced"), "dropout.variant",
             "'standard' or 'self_balanced'", d.variant)
    _check_prob("dropout.keep_prob", d.keep_prob)
    _check_prob("dropout.keep_prob_input", d.keep_prob_input)
    _check_prob("dropout.keep_prob_hidden", d.keep_prob_hidden)
    _require(d.granularity in ("shared_scalar", "per_feature", "token_vector"),
             "dropout.granularity", "'shared_scalar', 'per_feature' or 'token_vector'", d.granularity)
    _require(d.inference_mode in ("passthrough", "expectation"), "dropout.inference_mode",
             "'passthrough' or 'expectation'", d.inference_mode)
    if cfg.model == "linear":
        _require(d.granularity != "token_vector", "dropout.granularity",
                 "a value mode for the linear model", d.granularity)

    data = cfg.data
    _require(data.seed is None or 0 <= data.seed < 2**64, "data.seed", "a 64-bit unsigned integer",
             data.seed)
    _require(0.0 <= data.rho <= 1.0, "data.rho", "in range [0, 1]", data.rho)
    _require(data.n_train >= 1, "data.n_train", ">= 1", data.n_train)
    _require(data.n_test >= 1, "data.n_test", ">= 1", data.n_test)
    _require(data.dim >= 2 and data.dim % 2 == 0, "data.dim", "a positive even number", data.dim)
    _require(data.noise_sigma >= 0, "data.noise_sigma", ">= 0", data.noise_sigma)
    _require(data.vocab_size >= 8, "data.vocab_size", ">= 8", data.vocab_size)
    _require(data.seq_len >= 3, "data.seq_len", ">= 3", data.seq_len)
    _require(0.0 < data.test_fraction < 1.0, "data.test_fraction", "in range (0, 1)",
             data.test_fraction)
    _require(data.path is None or cfg.model == "text_cnn", "data.path",
             "used only with model 'text_cnn'", data.path)

    defaults = _MODEL_DEFAULTS[cfg.model]
    opt = cfg.optimizer
    if opt.name is None:
        opt.name = defaults["optimizer"]
    if opt.lr is None:
        opt.lr = defaults["lr"]
    if cfg.batch_size is None:
        cfg.batch_size = defaults["batch_size"]
    _require(opt.name in ("sgd", "adam"), "optimizer.name", "'sgd' or 'adam'", opt.name)
    _require(opt.lr >= 0, "optimizer.lr", ">= 0", opt.lr)
    _require(0.0 <= opt.beta1 < 1.0, "optimizer.beta1", "in range [0, 1)", opt.beta1)
    _require(0.0 <= opt.beta2 < 1.0, "optimizer.beta2", "in range [0, 1)", opt.beta2)
    _require(opt.eps > 0, "optimizer.eps", "> 0", opt.eps)
    _require(cfg.batch_size >= 1, "batch_size", ">= 1", cfg.batch_size)

    arch = cfg.architecture
    _require(arch.init_scale >= 0, "architecture.init_scale", ">= 0", arch.init_scale)
    _require(arch.embed_dim >= 1, "architecture.embed_dim", ">= 1", arch.embed_dim)
    _require(arch.filters >= 1, "architecture.filters", ">= 1", arch.filters)
    _require(1 <= arch.width <= data.seq_len, "architecture.width", "in range [1, data.seq_len]",
             arch.width)
    _require(arch.site in ("input", "hidden"), "architecture.site", "'input' or 'hidden'", arch.site)

    for name in ("keep_prob", "keep_prob_input", "keep_prob_hidden"):
        for i, p in enumerate(getattr(cfg.sweep, name)):
            _check_prob(f"sweep.{name}[{i}]", p)
    if cfg.task == "sweep":
        if cfg.model == "linear":
            _require(bool(cfg.sweep.keep_prob), "sweep.keep_prob", "a nonempty grid",
                     cfg.sweep.keep_prob)
        else:
            _require(bool(cfg.sweep.keep_prob_input), "sweep.keep_prob_input", "a nonempty grid",
                     cfg.sweep.keep_prob_input)
            _require(bool(cfg.sweep.keep_prob_hidden), "sweep.keep_prob_hidden", "a nonempty grid",
                     cfg.sweep.keep_prob_hidden)

    _require(cfg.compare.n_seeds >= 2, "compare.n_seeds", ">= 2", cfg.compare.n_seeds)
    _require(len(cfg.compare.variants) == 2
             and all(v in ("standard", "self_balanced") for v in cfg.compare.variants),
             "compare.variants", "two of 'standard' / 'self_balanced'", cfg.compare.variants)

    mc = cfg.mc
    _require(mc.instances >= 1, "mc.instances", ">= 1", mc.instances)
    _require(mc.n >= 1 and mc.d >= 1, "mc.n/mc.d", ">= 1", (mc.n, mc.d))
    _require(mc.samples >= 1000, "mc.samples", ">= 1000", mc.samples)
    _require(mc.mask in ("scalar", "per_feature"), "mc.mask", "'scalar' or 'per_feature'", mc.mask)

    _require(cfg.output.parallel >= 1, "output.parallel", ">= 1", cfg.output.parallel)
    return cfg


def config_from_dict(doc: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, doc))


def load_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno} "
                          f"(char {exc.pos}): {exc.msg}") from None


def parse_config(text: str) -> ExperimentConfig:
    return config_from_dict(load_json(text))


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_to_json(cfg: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2)
