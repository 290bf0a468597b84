"""Versioned JSON configuration for the full pipeline.

A config file is a JSON object mirroring :class:`PipelineConfig`; every
field is optional and falls back to its dataclass default.  Validation
walks the dataclass tree using type hints, so errors name the exact
field ("model.gbdt.num_leaves: expected int, got str").
"""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .alarmeval.metrics import EvalParams
from .clean import CleanConfig
from .endpoint import EndpointConfig
from .features import FeatureConfig
from .impute import ImputeConfig
from .model.gbdt import GBDTParams
from .model.splits import SplitConfig
from .shapelets import ShapeletConfig
from .synth import SynthConfig

CONFIG_VERSION = 1

MODEL_KINDS = ("gbdt", "gbdt_single", "logreg")


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass
class ModelSection:
    kind: str = "gbdt"
    seed: int = 0
    gbdt: GBDTParams = field(default_factory=GBDTParams)


@dataclass
class AlarmSection:
    silencing_min: float = 30.0
    reset_min: float = 25.0
    target_recall: float = 0.9
    threshold: float | None = None  # explicit cutoff; None picks one on validation
    logit_backoff: float = 2.0      # safety margin below the validation edge


@dataclass
class EvaluateSection:
    min_lead_min: float = 5.0
    horizon_min: float = 480.0
    grey_min: float = 0.0
    source_prevalence: float | None = None  # both set: rescale false alarms
    target_prevalence: float | None = None

    def params(self) -> EvalParams:
        scale = 1.0
        if self.source_prevalence is not None and self.target_prevalence is not None:
            from .alarmeval.metrics import prevalence_scaling
            scale = prevalence_scaling(self.source_prevalence, self.target_prevalence)
        return EvalParams(min_lead_min=self.min_lead_min,
                          horizon_min=self.horizon_min,
                          grey_min=self.grey_min, fp_scale=scale)


@dataclass
class PipelineConfig:
    version: int = CONFIG_VERSION
    workdir: str = "work"
    split_name: str = "random"
    threads: int = 1
    synth: SynthConfig = field(default_factory=SynthConfig)
    clean: CleanConfig = field(default_factory=CleanConfig)
    splits: SplitConfig = field(default_factory=SplitConfig)
    impute: ImputeConfig = field(default_factory=ImputeConfig)
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    shapelets: ShapeletConfig = field(default_factory=ShapeletConfig)
    model: ModelSection = field(default_factory=ModelSection)
    alarm: AlarmSection = field(default_factory=AlarmSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)


# ---------------------------------------------------------------------------
# Generic dataclass <-> JSON machinery
# ---------------------------------------------------------------------------

def _type_name(hint) -> str:
    return getattr(hint, "__name__", str(hint))


def _coerce(value, hint, where: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if hint is typing.Any:
        return value
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for arm in args:
            if arm is type(None):
                continue
            try:
                return _coerce(value, arm, where)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError(where, errors[-1] if errors else "no matching type")
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(where, f"expected object, got {type(value).__name__}")
        return _from_dict(hint, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(where, f"expected list, got {type(value).__name__}")
        if len(args) == 2 and args[1] is Ellipsis:
            elem = args[0]
            return tuple(_coerce(v, elem, f"{where}[{i}]")
                         for i, v in enumerate(value))
        if args and len(value) != len(args):
            raise ConfigError(where, f"expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{where}[{i}]")
                     for i, (v, a) in enumerate(zip(value, args)))
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(where, f"expected list, got {type(value).__name__}")
        elem = args[0] if args else typing.Any
        return [_coerce(v, elem, f"{where}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(where, f"expected object, got {type(value).__name__}")
        kt = args[0] if args else typing.Any
        vt = args[1] if args else typing.Any
        return {_coerce(k, kt, where): _coerce(v, vt, f"{where}.{k}")
                for k, v in value.items()}
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(where, f"expected bool, got {type(value).__name__}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(where, f"expected int, got {type(value).__name__}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(where, f"expected number, got {type(value).__name__}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(where, f"expected string, got {type(value).__name__}")
        return value
    return value


def _from_dict(cls, data: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        child = f"{where}.{key}" if where else key
        if key not in names:
            raise ConfigError(child, "unknown field")
        kwargs[key] = _coerce(value, hints[key], child)
    missing = [f.name for f in dataclasses.fields(cls)
               if f.name not in kwargs
               and f.default is dataclasses.MISSING
               and f.default_factory is dataclasses.MISSING]
    if missing:
        raise ConfigError(where, f"missing required field(s) {missing}")
    return cls(**kwargs)


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    return obj


# ---------------------------------------------------------------------------
# Loading and semantic checks
# ---------------------------------------------------------------------------

def _check(config: PipelineConfig) -> None:
    if config.version != CONFIG_VERSION:
        raise ConfigError("version", f"unsupported config version {config.version} "
                                     f"(this build reads version {CONFIG_VERSION})")
    if config.threads < 1:
        raise ConfigError("threads", "must be at least 1")
    if not config.workdir:
        raise ConfigError("workdir", "must be a non-empty path")
    if config.model.kind not in MODEL_KINDS:
        raise ConfigError("model.kind", f"must be one of {list(MODEL_KINDS)}")
    valid_splits = {"held_out", "random"} | {
        f"temporal_{k}" for k in range(config.splits.n_windows)}
    if config.split_name not in valid_splits:
        raise ConfigError("split_name", f"must be one of {sorted(valid_splits)}")
    if not 0.0 < config.alarm.target_recall <= 1.0:
        raise ConfigError("alarm.target_recall", "must be in (0, 1]")
    if config.alarm.silencing_min < 0:
        raise ConfigError("alarm.silencing_min", "must be non-negative")
    if config.alarm.reset_min < 0:
        raise ConfigError("alarm.reset_min", "must be non-negative")
    if config.synth.n_patients < 1:
        raise ConfigError("synth.n_patients", "must be at least 1")
    if not 0.0 < config.splits.heldout_frac < 1.0:
        raise ConfigError("splits.heldout_frac", "must be in (0, 1)")
    ev = config.evaluate
    if (ev.source_prevalence is None) != (ev.target_prevalence is None):
        raise ConfigError("evaluate.source_prevalence",
                          "source and target prevalence must be set together")
    if config.model.gbdt.num_leaves < 2:
        raise ConfigError("model.gbdt.num_leaves", "must be at least 2")
    if not 0.0 < config.model.gbdt.feature_fraction <= 1.0:
        raise ConfigError("model.gbdt.feature_fraction", "must be in (0, 1]")
    if not 0.0 < config.model.gbdt.row_fraction <= 1.0:
        raise ConfigError("model.gbdt.row_fraction", "must be in (0, 1]")


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigError("", "config root must be a JSON object")
    config = _from_dict(PipelineConfig, data, "")
    _check(config)
    return config


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        config = PipelineConfig()
        _check(config)
        return config
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"{path} is not valid JSON ({exc})")
    return config_from_dict(data)


def resolved_json(config: PipelineConfig) -> str:
    return json.dumps(to_jsonable(config), indent=2, sort_keys=True)
