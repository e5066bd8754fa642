"""Experiment configuration: flat ``dotted.key = value`` files.

Example::

    # scenario sweep on Kelmarsh turbine 1
    data.scada = data/Turbine_Data_Kelmarsh_1.csv
    data.events = data/Status_Kelmarsh_1.csv
    data.features = time
    scenarios = 1000:2000:0, 5000:10000:0, 7000:10000:0
    kernels = rbf, sm, gsm
    sm.q = 3
    gsm.q = 2
    optim.learning_rate = 0.01
    n_restarts = 10

Every key may also be given on the command line as ``--<key> <value>``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .dataset import SplitSpec
from .errors import ConfigError
from .inference import OptimConfig

TABLE1_SCENARIOS = (SplitSpec(1000, 2000, 0), SplitSpec(5000, 10000, 0), SplitSpec(7000, 10000, 0))


@dataclass(frozen=True)
class DataConfig:
    scada: str = ""
    events: str = ""
    features: tuple = ("time",)
    rated_power: float = 2050.0
    pre_outage_days: float = 7.0
    scada_timestamp: str = "# Date and time"
    scada_wind_speed: str = "Wind speed (m/s)"
    scada_power: str = "Power (kW)"
    events_start: str = "Timestamp start"
    events_end: str = "Timestamp end"
    events_labels: tuple = ("Status", "IEC category")
    # "label:Category; label:Category" pairs; empty keeps the Kelmarsh defaults
    category_map: str = ""


@dataclass(frozen=True)
class BenchmarkConfig:
    mode: str = "both"  # chirp | stationary | both
    n_train: int = 500
    n_test: int = 500
    f_start: float = 0.01
    f_end: float = 0.05
    amplitude_depth: float = 0.5
    noise_start: float = 0.1
    noise_end: float = 0.3
    seeds: int = 10
    cadence_seconds: int = 600
    start_timestamp: int = 1451779200  # 2016-01-03 00:00 UTC
    margin: float = 0.05
    min_wins: int = 8
    # the null case only compares SM with GSM
    null_kernels: tuple = ("sm", "gsm")


@dataclass(frozen=True)
class MixtureConfig:
    q: int = 3


@dataclass(frozen=True)
class GsmConfig:
    q: int = 2
    latent_lengthscale_fraction: float = 0.2
    latent_variance: float = 1.0
    whiten: bool = True


@dataclass(frozen=True)
class ForecastConfig:
    scenario: int = 3
    selection: str = "best"  # best | per-restart-mean
    horizon_hours: int = 24
    step_hours: float = 24.0


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    sm: MixtureConfig = field(default_factory=MixtureConfig)
    gsm: GsmConfig = field(default_factory=GsmConfig)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    scenarios: tuple = TABLE1_SCENARIOS
    kernels: tuple = ("rbf", "sm", "gsm")
    n_restarts: int = 10
    seed: int = 0
    out: str = "out"
    n_jobs: int = 1
    include_noise: bool = True

    def __post_init__(self):
        if not self.kernels:
            raise ConfigError("at least one kernel family is required", key="kernels")
        for k in self.kernels:
            if k not in ("rbf", "sm", "gsm"):
                raise ConfigError(f"unknown kernel family {k!r}", key="kernels")
        if not self.scenarios:
            raise ConfigError("at least one scenario is required", key="scenarios")
        if self.n_restarts < 1:
            raise ConfigError("n_restarts must be positive", key="n_restarts")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative", key="seed")
        if self.forecast.selection not in ("best", "per-restart-mean"):
            raise ConfigError("selection must be 'best' or 'per-restart-mean'",
                              key="forecast.selection")
        for k in self.benchmark.null_kernels:
            if k not in ("rbf", "sm", "gsm"):
                raise ConfigError(f"unknown kernel family {k!r}", key="benchmark.null_kernels")
        if self.benchmark.mode not in ("chirp", "stationary", "both"):
            raise ConfigError("benchmark.mode must be chirp, stationary or both",
                              key="benchmark.mode")

    def q_for(self, family):
        return {"sm": self.sm.q, "gsm": self.gsm.q}.get(family)


def _parse_value(text, typ, key):
    text = text.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return text
        if typ is tuple:
            if key == "scenarios":
                out = []
                for part in text.split(","):
                    nums = [int(x) for x in part.strip().split(":")]
                    if len(nums) == 2:
                        nums.append(0)
                    out.append(SplitSpec(*nums))
                return tuple(out)
            return tuple(p.strip() for p in text.split(",") if p.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot parse {text!r} as {getattr(typ, '__name__', typ)}",
                          key=key) from exc
    raise ConfigError(f"unsupported field type {typ}", key=key)


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def flat_keys(cls=ExperimentConfig, prefix=""):
    """All dotted keys accepted by the configuration."""
    out = []
    for name, typ in _field_types(cls).items():
        if dataclasses.is_dataclass(typ):
            out += flat_keys(typ, prefix + name + ".")
        else:
            out.append(prefix + name)
    return out


def build_config(pairs, path=None) -> ExperimentConfig:
    """Build a config from ``(key, text_value)`` pairs; later pairs win."""
    nested = {}
    top_types = _field_types(ExperimentConfig)
    for key, raw in pairs:
        parts = key.split(".")
        if len(parts) == 1:
            typ = top_types.get(key)
            if typ is None or dataclasses.is_dataclass(typ):
                raise ConfigError("unknown configuration key", key=key, path=path)
            nested[key] = _parse_value(raw, typ, key)
        elif len(parts) == 2 and parts[0] in top_types and dataclasses.is_dataclass(top_types[parts[0]]):
            sub = top_types[parts[0]]
            typ = _field_types(sub).get(parts[1])
            if typ is None:
                raise ConfigError("unknown configuration key", key=key, path=path)
            nested.setdefault(parts[0], {})[parts[1]] = _parse_value(raw, typ, key)
        else:
            raise ConfigError("unknown configuration key", key=key, path=path)
    kwargs = {}
    for name, val in nested.items():
        typ = top_types[name]
        if dataclasses.is_dataclass(typ):
            try:
                kwargs[name] = typ(**val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(str(exc), key=name, path=path) from exc
        else:
            kwargs[name] = val
    return ExperimentConfig(**kwargs)


def read_pairs(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("configuration file not found", path=str(path))
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        # only whole-line comments: values such as "# Date and time" contain '#'
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", path=str(path))
        k, v = line.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    return pairs


def load_config(path=None, overrides=()) -> ExperimentConfig:
    pairs = read_pairs(path) if path else []
    return build_config(list(pairs) + list(overrides), path=str(path) if path else None)


def _render(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], SplitSpec):
            return ", ".join(f"{s.train_size}:{s.test_size}:{s.offset}" for s in v)
        return ", ".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical flat rendering; ``load`` of this text reproduces ``cfg``."""
    lines = []

    def walk(obj, prefix):
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                walk(v, prefix + f.name + ".")
            else:
                lines.append(f"{prefix}{f.name} = {_render(v)}")

    walk(cfg, "")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest(cfg: ExperimentConfig) -> dict:
    """Hashes of the configuration and every input file it names."""
    files = {}
    for p in (cfg.data.scada, cfg.data.events):
        if p:
            files[Path(p).name] = file_hash(p)
    payload = {"config_sha256": config_hash(cfg), "inputs": files}
    payload["manifest_sha256"] = hashlib.sha256(
        json.dumps(payload, sort_keys=True).encode()).hexdigest()
    return payload
