"""Experiment configs and JSON reports."""

import json
import math
import os
from dataclasses import asdict, dataclass, field

from .. import __version__
from ..model_zoo import ConfigError, model_from_config

REPORT_SCHEMA = "stochflow.report/1"
KINDS = ("validate-model", "estimate-gamma", "moment-sweep", "drift-table", "diffchain-stats", "cumulant-audit")

_CONFIG_KEYS = {"model", "experiment", "N", "t", "k", "phi", "n_env", "n_paths", "seeds", "steps", "workers",
                "out", "truncation_eps", "seed_base"}


@dataclass
class ExperimentConfig:
    model: dict
    experiment: str = "moment-sweep"
    N: list = field(default_factory=lambda: [512, 2048])
    t: float = 1.0
    k: list = field(default_factory=lambda: [1, 2])
    phi: str = "gauss:0,0.5"
    n_env: int = 256
    n_paths: int = None
    seeds: list = field(default_factory=lambda: [0])
    steps: int = 10_000_000
    workers: int = 1
    out: str = "out"
    truncation_eps: float = 1e-14
    seed_base: int = 0

    def validate(self):
        if self.experiment not in KINDS:
            raise ConfigError(f"experiment: unknown kind {self.experiment!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be pairwise distinct")
        for n in self.N:
            if n < 1 or n & (n - 1):
                raise ConfigError(f"N: {n} is not a power of two")
        if self.workers < 1:
            raise ConfigError("workers: must be at least 1")
        return self

    def build_model(self):
        return model_from_config(self.model)

    def echo(self):
        return asdict(self)


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror}") from None


def resolve_model(ref, base_dir="."):
    """A model config given inline or as a path to a JSON file."""
    if isinstance(ref, str):
        path = ref if os.path.isabs(ref) else os.path.join(base_dir, ref)
        return load_json(path)
    if isinstance(ref, dict):
        return ref
    raise ConfigError("model: expected an object or a path")


def config_from_dict(raw, base_dir="."):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    extra = set(raw) - _CONFIG_KEYS
    if extra:
        raise ConfigError(f"config: unknown keys {sorted(extra)}")
    if "model" not in raw:
        raise ConfigError("config.model: required")
    vals = dict(raw)
    vals["model"] = resolve_model(raw["model"], base_dir)
    return ExperimentConfig(**vals).validate()


def load_config(path):
    return config_from_dict(load_json(path), os.path.dirname(os.path.abspath(path)))


def _clean(v):
    """JSON-safe scalars: non-finite floats become strings so reports round-trip."""
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {str(a): _clean(b) for a, b in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


@dataclass
class Report:
    kind: str
    config: dict
    rows: list
    status: str = "pass"
    messages: list = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0
    schema: str = REPORT_SCHEMA

    def to_json(self):
        return json.dumps(_clean(asdict(self)), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        if raw.get("schema") != REPORT_SCHEMA:
            raise ConfigError(f"report schema {raw.get('schema')!r} is not {REPORT_SCHEMA}")
        return cls(**raw)

    def normalized(self):
        """The report as it reads back from JSON."""
        return Report.from_json(self.to_json())

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")
