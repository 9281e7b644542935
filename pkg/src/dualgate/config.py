"""Flat ``key = value`` run configuration.

One file covers every hyperparameter of a run. Blank lines and ``#``
comments are ignored; unknown or repeated keys are errors. The canonical
text produced by :func:`dump_config` parses back to an equal config.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .augment import AugmentConfig
from .budget import BudgetConfig
from .encoder import EncoderConfig
from .errors import ConfigurationError
from .gating import GateSamplerConfig
from .objective import VICRegConfig
from .optim import TrainConfig


@dataclass
class DataConfig:
    train_dir: str = ""        # empty -> synthetic data
    test_dir: str = ""
    synth_train_n: int = 2000
    synth_test_n: int = 1000
    synth_seed: int = 0
    num_classes: int = 10
    normalize_features: bool = True


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    sampler: GateSamplerConfig = field(default_factory=GateSamplerConfig)
    vicreg: VICRegConfig = field(default_factory=VICRegConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def effective_vicreg(self) -> VICRegConfig:
        if self.train.eta_override is None:
            return self.vicreg
        return replace(self.vicreg, eta=self.train.eta_override)

    @property
    def effective_budget(self) -> BudgetConfig:
        return BudgetConfig(t_d=self.train.t_d, lam=self.budget.lam)

    @property
    def effective_augment(self) -> AugmentConfig:
        return replace(self.augment, seed=self.train.seed, output_size=self.encoder.input_size)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (list, tuple)):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (section, attribute, parser)
_KEYS = {
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "base_lr": ("train", "base_lr", float),
    "warmup_epochs": ("train", "warmup_epochs", int),
    "weight_decay": ("train", "weight_decay", float),
    "momentum": ("train", "momentum", float),
    "lars_trust": ("train", "lars_trust", float),
    "seed": ("train", "seed", int),
    "eta_override": ("train", "eta_override", _opt_float),
    "t_d": ("train", "t_d", float),
    "checkpoint_every": ("train", "checkpoint_every", int),
    "mode": ("train", "mode", str),
    "stage_widths": ("encoder", "stage_widths", _ints),
    "blocks_per_stage": ("encoder", "blocks_per_stage", _ints),
    "input_size": ("encoder", "input_size", int),
    "proj_dim": ("encoder", "proj_dim", int),
    "expand_dim": ("encoder", "expand_dim", int),
    "gate_bias_init": ("encoder", "gate_bias_init", float),
    "gate_w2_std": ("encoder", "gate_w2_std", float),
    "init_seed": ("encoder", "init_seed", int),
    "tau_start": ("sampler", "tau_start", float),
    "tau_end": ("sampler", "tau_end", float),
    "anneal_fraction": ("sampler", "anneal_fraction", float),
    "hard_forward": ("sampler", "hard_forward", _bool),
    "mu": ("vicreg", "mu", float),
    "nu": ("vicreg", "nu", float),
    "eta": ("vicreg", "eta", float),
    "gamma": ("vicreg", "gamma", float),
    "vicreg_eps": ("vicreg", "eps", float),
    "invariance_reduction": ("vicreg", "invariance_reduction", str),
    "lambda": ("budget", "lam", float),
    "crop_area_range": ("augment", "crop_area_range", _floats),
    "crop_ratio_range": ("augment", "crop_ratio_range", _floats),
    "p_flip": ("augment", "p_flip", float),
    "p_jitter": ("augment", "p_jitter", float),
    "jitter_strengths": ("augment", "jitter_strengths", _floats),
    "p_gray": ("augment", "p_gray", float),
    "p_solarize": ("augment", "p_solarize", float),
    "train_dir": ("data", "train_dir", str),
    "test_dir": ("data", "test_dir", str),
    "synth_train_n": ("data", "synth_train_n", int),
    "synth_test_n": ("data", "synth_test_n", int),
    "synth_seed": ("data", "synth_seed", int),
    "num_classes": ("data", "num_classes", int),
    "normalize_features": ("data", "normalize_features", _bool),
}


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    seen: set = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigurationError(f"line {lineno}: key {key!r} given twice")
        seen.add(key)
        section, attr, parse = _KEYS[key]
        try:
            values.setdefault(section, {})[attr] = parse(value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from None
    defaults = RunConfig()
    sections = {}
    for f in fields(RunConfig):
        base = getattr(defaults, f.name)
        kwargs = {g.name: getattr(base, g.name) for g in fields(base)}
        kwargs.update(values.get(f.name, {}))
        try:
            sections[f.name] = type(base)(**kwargs)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None


def dump_config(config: RunConfig) -> str:
    lines = []
    for key, (section, attr, _) in _KEYS.items():
        lines.append(f"{key} = {_fmt(getattr(getattr(config, section), attr))}")
    return "\n".join(lines) + "\n"
