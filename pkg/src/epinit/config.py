"""Experiment configuration and the flat ``key = value`` config file format."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .model import N_STATES, DEFAULT_PARAMS, ModelParams, NoiseConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    d: int = 42
    m: int = 30
    k_min: int = 19
    realizations: int = 100
    q0_diag: tuple = (0.1,) * N_STATES
    r: float = 0.1
    seed: int = 0
    threshold: int = 100
    #: initial state of the synthetic trajectories
    x0: tuple = (0.0, 1.0, 1.0, 2.0, 1.0)
    #: population of the Markov chain stand-in
    population: int = 1_000_000
    #: share of Markov chain realizations analyzed, ranked by final incidence
    top_fraction: float = 0.66
    s_tol: float = 1e-6
    max_iters: int = 50
    ols_nonneg: bool = False
    grid_size: int = 512
    workers: int = 1
    #: None samples the parameters from the prior with the master seed
    params: Optional[ModelParams] = field(default_factory=lambda: DEFAULT_PARAMS)

    def __post_init__(self):
        self.q0_diag = tuple(float(v) for v in self.q0_diag) if hasattr(self.q0_diag, "__len__") \
            else (float(self.q0_diag),) * N_STATES
        if len(self.q0_diag) != N_STATES:
            raise ConfigError(f"q0 needs 1 or {N_STATES} values, got {len(self.q0_diag)}")
        self.x0 = tuple(float(v) for v in self.x0)
        if len(self.x0) != N_STATES:
            raise ConfigError(f"x0 needs {N_STATES} values, got {len(self.x0)}")
        if not 0 <= self.k_min <= self.m <= self.d:
            raise ConfigError(f"need 0 <= k_min <= m <= d, got k_min={self.k_min}, m={self.m}, d={self.d}")
        if self.realizations < 1:
            raise ConfigError("realizations must be >= 1")
        if not 0 < self.top_fraction <= 1:
            raise ConfigError("top_fraction must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def noise(self) -> NoiseConfig:
        return NoiseConfig(self.q0_diag, self.r)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "params"}
        out["params"] = None if self.params is None else self.params.as_dict()
        return out


_PARAM_KEYS = {f.name for f in fields(ModelParams)}


def _coerce(name: str, raw: str):
    default = getattr(ExperimentConfig(), name)
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if isinstance(default, int):
        v = float(raw)
        if not v.is_integer():
            raise ConfigError(f"{name}: expected an integer, got {raw!r}")
        return int(v)
    return float(raw)


def parse_config_text(text: str, source: str = "<config>", extra_keys=()) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    Keys are ExperimentConfig fields, or model parameter names (``sigma``,
    ``beta``, ...) overriding entries of the default parametrization, or
    ``params = prior`` to sample parameters from the prior. Keys listed in
    ``extra_keys`` are collected verbatim under ``"_run"``.
    """
    known = {f.name for f in fields(ExperimentConfig)}
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in extra_keys:
                out.setdefault("_run", {})[key] = value
            elif key == "params":
                if value.lower() not in ("prior", "default"):
                    raise ConfigError(f"params must be 'prior' or 'default', got {value!r}")
                out["params"] = value.lower()
            elif key in _PARAM_KEYS:
                out.setdefault("param_values", {})[key] = float(value)
            elif key in known:
                out[key] = _coerce(key, value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    return out


def load_config(path, extra_keys=()) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path), extra_keys)


def make_config(values: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed config values and flag overrides."""
    values = dict(values)
    mode = values.pop("params", "default")
    pvals = values.pop("param_values", None)
    if pvals:
        merged = DEFAULT_PARAMS.as_dict() | pvals
        params = ModelParams.from_dict(merged)
    elif mode == "prior":
        params = None
    else:
        params = DEFAULT_PARAMS
    return ExperimentConfig(**values, params=params)


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in asdict(cfg).items():
        if key == "params":
            continue
        if isinstance(value, tuple):
            value = " ".join(repr(float(v)) for v in value)
        lines.append(f"{key} = {value}")
    if cfg.params is None:
        lines.append("params = prior")
    else:
        lines.extend(f"{k} = {v!r}" for k, v in cfg.params.as_dict().items())
    return "\n".join(lines) + "\n"
