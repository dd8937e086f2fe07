"""Run configuration: a TOML file with a fixed set of sections and keys.

Example::

    seed = 1
    threads = 4

    [data]
    counts = "counts.csv"
    locations = "locations.csv"
    population = "population.csv"

    [model]
    preset = "model2"            # or spell it out:
    time = "matern32 + periodic"
    space = "matern32"
    interaction = true
    bias = true
    family = "negbin"            # negbin | zinb | poisson
    period = 52.0

    [inducing]
    stride = 5
    include_final = true

    [sampler]
    chains = 4
    warmup = 1000
    samples = 1000

    [forecast]
    horizon = 4

Relative paths resolve against the directory of the config file. Every key
is checked; a misspelt key is an error, never silently ignored.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import tomli

from . import kernels as kn
from .model import PRESETS, ModelSpec, PriorConfig, spatiotemporal_kernel
from .sampler import SamplerConfig


class ConfigError(ValueError):
    pass


_STR, _INT, _FLOAT, _BOOL, _LIST = "str", "int", "float", "bool", "list"

SCHEMA = {
    "": {"seed": _INT, "threads": _INT, "out": _STR, "name": _STR},
    "data": {"counts": _STR, "locations": _STR, "population": _STR},
    "model": {
        "preset": _STR, "time": _STR, "space": _STR, "interaction": _BOOL, "bias": _BOOL,
        "family": _STR, "period": _FLOAT, "fix_kernel": _BOOL, "jitter": _FLOAT,
    },
    "priors": {
        "lengthscale_shape": _FLOAT, "lengthscale_scale": _FLOAT, "kernel_sd": _FLOAT,
        "bias_sd": _FLOAT, "inv_sqrt_phi_sd": _FLOAT, "lambda_mean": _FLOAT, "lambda_sd": _FLOAT,
    },
    "inducing": {"stride": _INT, "include_final": _BOOL},
    "sampler": {
        "chains": _INT, "warmup": _INT, "samples": _INT, "leapfrog_min": _INT,
        "leapfrog_max": _INT, "target_accept": _FLOAT, "rhat_threshold": _FLOAT,
        "init_jitter": _FLOAT,
    },
    "forecast": {"horizon": _INT, "draws": _INT, "perturb": _BOOL, "full_cov": _BOOL,
                 "geojson": _BOOL, "holdout": _BOOL},
    "evaluate": {"loo_draws": _INT, "pvalue_draws": _INT, "crps_split": _INT},
    "simulate": {
        "n_locations": _INT, "n_weeks": _INT, "phi": _FLOAT, "pi": _FLOAT, "base_rate": _FLOAT,
        "pop_min": _FLOAT, "pop_max": _FLOAT, "seed": _INT, "truth": "table",
    },
    "compare": {"runs": _LIST},
}


def _check_type(where, value, kind):
    ok = {
        _STR: isinstance(value, str),
        _INT: isinstance(value, int) and not isinstance(value, bool),
        _FLOAT: isinstance(value, (int, float)) and not isinstance(value, bool),
        _BOOL: isinstance(value, bool),
        _LIST: isinstance(value, list) and all(isinstance(v, str) for v in value),
        "table": isinstance(value, dict),
    }[kind]
    if not ok:
        raise ConfigError(f"{where}: expected {kind}, got {value!r}")


def validate(raw: dict):
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]")
            for k, v in value.items():
                if k not in SCHEMA[key]:
                    raise ConfigError(f"unknown key {k!r} in section [{key}]")
                _check_type(f"[{key}] {k}", v, SCHEMA[key][k])
        else:
            if key not in SCHEMA[""]:
                raise ConfigError(f"unknown key {key!r}")
            _check_type(key, value, SCHEMA[""][key])


@dataclass
class ForecastOptions:
    horizon: int = 4
    draws: int = 1000
    perturb: bool = True
    full_cov: bool = False
    geojson: bool = True
    holdout: bool = True  # forecast weeks are the last weeks of the dataset


@dataclass
class EvaluateOptions:
    loo_draws: int = 200
    pvalue_draws: int = 1000
    crps_split: int | None = None


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    spec: ModelSpec
    sampler: SamplerConfig
    forecast: ForecastOptions
    evaluate: EvaluateOptions
    seed: int = 0
    threads: int = 1
    out: Path | None = None
    rhat_threshold: float = 1.1
    data_paths: dict = field(default_factory=dict)
    simulate: dict = field(default_factory=dict)
    compare_runs: list = field(default_factory=list)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def require_data(self):
        missing = [k for k in ("counts", "locations", "population") if k not in self.data_paths]
        if missing:
            raise ConfigError(f"[data] is missing {', '.join(missing)}")
        return self.data_paths


def _build_spec(model: dict, priors: dict, inducing: dict) -> ModelSpec:
    preset = model.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
    base = dict(PRESETS[preset]) if preset else {"time": "matern32", "space": "matern32",
                                                  "family": "negbin"}
    time = model.get("time", base["time"])
    space = model.get("space", base["space"])
    family = model.get("family", base["family"])
    try:
        expr = spatiotemporal_kernel(
            time, space, model.get("interaction", True), model.get("bias", True),
            model.get("period", 52.0),
        )
    except kn.KernelError as exc:
        raise ConfigError(f"[model] {exc}") from None
    try:
        return ModelSpec(
            expr, family, PriorConfig(**priors),
            stride=inducing.get("stride", 5),
            include_final=inducing.get("include_final", True),
            fix_kernel=model.get("fix_kernel", False),
            jitter=model.get("jitter", 1e-6),
            name=preset or "custom",
        )
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None


def from_dict(raw: dict, base_dir=".", overrides=None) -> RunConfig:
    """Validate a parsed config; ``overrides`` holds command-line values."""
    raw = json.loads(json.dumps(raw))  # deep copy, TOML types only
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    for key, value in overrides.items():
        if key == "preset":
            raw.setdefault("model", {})["preset"] = value
        else:
            raw[key] = value
    validate(raw)
    base_dir = Path(base_dir)
    model = raw.get("model", {})
    spec = _build_spec(model, raw.get("priors", {}), raw.get("inducing", {}))
    s = raw.get("sampler", {})
    seed = raw.get("seed", 0)
    threads = raw.get("threads", 1)
    try:
        sampler = SamplerConfig(
            n_chains=s.get("chains", 4), warmup=s.get("warmup", 1000),
            n_samples=s.get("samples", 1000), leapfrog_min=s.get("leapfrog_min", 15),
            leapfrog_max=s.get("leapfrog_max", 20), target_accept=s.get("target_accept", 0.8),
            init_jitter=s.get("init_jitter", 0.5), seed=seed, threads=threads,
        )
    except ValueError as exc:
        raise ConfigError(f"[sampler] {exc}") from None
    fc = ForecastOptions(**raw.get("forecast", {}))
    if fc.horizon < 0 or fc.draws < 2:
        raise ConfigError("[forecast] horizon must be >= 0 and draws >= 2")
    ev = EvaluateOptions(**raw.get("evaluate", {}))
    data_paths = {k: (base_dir / v) for k, v in raw.get("data", {}).items()}
    out = raw.get("out")
    return RunConfig(
        raw=raw, base_dir=base_dir, spec=spec, sampler=sampler, forecast=fc, evaluate=ev,
        seed=seed, threads=threads, out=(base_dir / out) if out else None,
        rhat_threshold=s.get("rhat_threshold", 1.1), data_paths=data_paths,
        simulate=raw.get("simulate", {}),
        compare_runs=[base_dir / r for r in raw.get("compare", {}).get("runs", [])],
    )


def load_config(path, overrides=None) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file") from None
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, path.parent, overrides)


def with_sampler(cfg: RunConfig, **changes) -> RunConfig:
    return replace(cfg, sampler=replace(cfg.sampler, **changes))
