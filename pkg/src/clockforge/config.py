"""Schema-validated experiment configurations for the command line.

Every time in a configuration is in units of the LO coherence time ``Z``
(``T_over_Z``, ``TD_over_Z``); physical units only enter through the noise
coefficients and ``omega0``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigurationError
from .noise import NoiseSpec
from .protocols import ProtocolSpec

__all__ = [
    "NoiseConfig",
    "ProtocolEntry",
    "ServoEntry",
    "BoundsConfig",
    "ProtocolConfig",
    "OptimizeConfig",
    "ClockRunConfig",
    "PriorConfig",
    "DeadtimeConfig",
    "AllanConfig",
    "COMMANDS",
    "load_config",
    "config_hash",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class NoiseConfig(_Strict):
    components: dict[int, float] = Field(default_factory=lambda: {0: 1.0})
    omega0: float = 1.0

    def build(self) -> NoiseSpec:
        return NoiseSpec(self.components, self.omega0)


class ProtocolEntry(_Strict):
    kind: Literal["css", "sss", "ghz", "variational", "poi"]
    n_atoms: int = Field(ge=1, le=4096)
    estimator: Literal["optimal_bayes", "linear"] = "optimal_bayes"
    readout: Literal["projective", "parity"] = "projective"
    mu: Optional[float] = None
    theta: Optional[float] = None
    layers: Optional[tuple[int, int]] = None
    params: Optional[list[float]] = None

    def build(self, n_atoms: int | None = None) -> ProtocolSpec:
        n = self.n_atoms if n_atoms is None else n_atoms
        if self.kind == "sss":
            if self.mu is None:
                raise ConfigurationError("sss protocols need 'mu'")
            return ProtocolSpec.sss(n, self.mu, self.theta, self.estimator)
        if self.kind == "variational":
            if self.layers is None or self.params is None:
                raise ConfigurationError("variational protocols need 'layers' and 'params'")
            return ProtocolSpec.variational(n, *self.layers, self.params, self.estimator)
        if self.kind == "poi":
            if self.params is None:
                raise ConfigurationError("poi protocols need 'params' (real then imaginary amplitudes)")
            return ProtocolSpec(n, "poi", tuple(self.params), estimator=self.estimator)
        if self.kind == "ghz":
            return ProtocolSpec.ghz(n, self.readout, self.estimator)
        return ProtocolSpec.css(n, self.estimator)


class ServoEntry(_Strict):
    kind: Literal["predictor", "integrator"] = "predictor"
    history_len: int = Field(50, ge=1)
    ridge: float = Field(1e-6, ge=0)
    gain: float = Field(0.5, gt=0, lt=2)
    refit_every: int = Field(1000, ge=1)


class BoundsConfig(_Strict):
    n_atoms: list[int] = Field(min_length=1)
    delta_phi: list[float] = Field(min_length=1)
    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(500, ge=1)
    include_poi: bool = False

    @field_validator("n_atoms")
    @classmethod
    def _n(cls, v):
        if any(n < 1 or n > 64 for n in v):
            raise ValueError("n_atoms entries must lie in [1, 64]")
        return v

    @field_validator("delta_phi")
    @classmethod
    def _d(cls, v):
        if any(not d > 0 for d in v):
            raise ValueError("delta_phi entries must be positive")
        return v


class ProtocolConfig(_Strict):
    protocols: list[ProtocolEntry] = Field(min_length=1)
    delta_phi: list[float] = Field(min_length=1)


class OptimizeConfig(_Strict):
    n_atoms: int = Field(ge=1, le=64)
    layers: list[tuple[int, int]] = Field(default_factory=lambda: [(0, 0), (1, 0), (1, 1)])
    T_over_Z: list[float] = Field(min_length=1)
    alpha: Literal[-1, 0, 1] = 0
    objective: Literal["optimal_bayes", "linear"] = "optimal_bayes"
    budget: int = Field(6000, ge=100)
    seed: int = 0
    top_k: int = Field(3, ge=1)


class PriorEntry(_Strict):
    mode: Literal["power_law", "calibrated"] = "power_law"
    stages: int = Field(3, ge=1)
    T_grid: Optional[list[float]] = None
    n_cycles: int = Field(100_000, ge=1000)


class ClockRunConfig(_Strict):
    protocol: ProtocolEntry
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    T_over_Z: list[float] = Field(min_length=1)
    TD_over_Z: float = Field(0.0, ge=0)
    n_cycles: int = Field(100_000, ge=400)
    runs: int = Field(1, ge=1)
    seed: int = 0
    servo: ServoEntry = Field(default_factory=ServoEntry)
    prior: PriorEntry = Field(default_factory=PriorEntry)
    optimize_mu: bool = True


class PriorConfig(_Strict):
    n_atoms: int = Field(ge=1, le=64)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    T_over_Z: list[float] = Field(min_length=2)
    stages: int = Field(3, ge=1)
    n_cycles: int = Field(100_000, ge=1000)
    seed: int = 0


class DeadtimeConfig(_Strict):
    kind: Literal["css", "sss"] = "css"
    estimator: Literal["optimal_bayes", "linear"] = "linear"
    n_atoms: list[int] = Field(min_length=1)
    T_over_Z: list[float] = Field(min_length=3)
    TD_over_Z: list[float] = Field(min_length=1)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)


class AllanConfig(_Strict):
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    T_C: float = Field(1.0, gt=0)
    n_cycles: int = Field(100_000, ge=30)
    seed: int = 0
    taus: Optional[list[float]] = None
    export_trace: bool = True


COMMANDS = {
    "bounds": BoundsConfig,
    "protocol": ProtocolConfig,
    "optimize": OptimizeConfig,
    "clock": ClockRunConfig,
    "prior": PriorConfig,
    "deadtime": DeadtimeConfig,
    "allan": AllanConfig,
}


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def load_config(command: str, source) -> BaseModel:
    """Parse YAML (path or mapping) into the schema of ``command``.

    Raises
    ------
    ConfigurationError
        On unknown commands, unreadable files or schema violations; the
        message names the offending key path.
    """
    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}")
    if isinstance(source, (str, Path)):
        try:
            data = yaml.safe_load(Path(source).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config {source}: {exc}") from exc
    else:
        data = source
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    try:
        return COMMANDS[command].model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_errors(exc)) from exc


def config_hash(cfg: BaseModel) -> str:
    canon = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
