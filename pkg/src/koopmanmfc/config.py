"""Experiment configuration: one JSON-compatible document drives every run.

A config plus its seed fully determines every output artifact byte for
byte. Validation errors carry the dotted field path of the offending
entry.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .model import SpectralConfig
from .mpc import MpcConfig

__all__ = ["ConfigError", "MpcSettings", "ExperimentConfig"]

CONFIG_SCHEMA = "koopmanmfc-config-v1"


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field path."""


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {message}")


@dataclass
class MpcSettings:
    """Controller block of the experiment config."""

    horizon: int = 5
    u_lo: float = -3.0
    u_hi: float = 3.0
    coarse_resolution: int = 9
    local_iterations: int = 100
    mode: str = "relift"
    episodes: int = 4

    def validate(self, path: str = "mpc") -> None:
        _require(isinstance(self.horizon, int) and self.horizon >= 1, f"{path}.horizon",
                 "must be a positive integer")
        _require(self.u_lo <= self.u_hi, f"{path}.u_lo", "must not exceed u_hi")
        _require(self.coarse_resolution >= 1, f"{path}.coarse_resolution", "must be >= 1")
        _require(self.local_iterations >= 0, f"{path}.local_iterations", "must be >= 0")
        _require(self.mode in ("relift", "paper-literal"), f"{path}.mode",
                 "must be 'relift' or 'paper-literal'")
        _require(self.episodes >= 1, f"{path}.episodes", "must be >= 1")

    def to_mpc_config(self) -> MpcConfig:
        return MpcConfig(
            horizon=self.horizon,
            u_lo=self.u_lo,
            u_hi=self.u_hi,
            coarse_resolution=self.coarse_resolution,
            local_iterations=self.local_iterations,
            mode=self.mode,
        )


@dataclass
class ExperimentConfig:
    """Everything a run needs: benchmark, data sizes, spectral and MPC knobs."""

    schema_version: str = CONFIG_SCHEMA
    benchmark: str = "circle-rotation"
    benchmark_params: dict = field(default_factory=dict)
    observable: str = "harmonic"
    observable_params: dict = field(default_factory=lambda: {"k": 1})
    trajectory_length: int = 10_000
    trajectory_count: int = 1
    particles: int = 1
    order: int = 1000
    grid_size: int | None = None
    filter_kind: str = "fejer"
    threshold: float | None = None
    harmonic_terms: int = 512
    quadrature_size: int | None = None
    max_base_states: int = 512
    scheme: str = "ergodic"
    mean_mode: str = "paper-literal"
    seed: int = 0
    out_dir: str = "out"
    plots: bool = True
    mpc: MpcSettings = field(default_factory=MpcSettings)

    def validate(self) -> None:
        _require(self.schema_version == CONFIG_SCHEMA, "schema_version",
                 f"must be {CONFIG_SCHEMA!r}")
        _require(bool(self.benchmark), "benchmark", "must be a benchmark name")
        for name, value in [
            ("trajectory_length", self.trajectory_length),
            ("trajectory_count", self.trajectory_count),
            ("particles", self.particles),
            ("order", self.order),
            ("harmonic_terms", self.harmonic_terms),
            ("max_base_states", self.max_base_states),
        ]:
            _require(isinstance(value, int) and value >= 1, name, "must be a positive integer")
        _require(self.trajectory_length >= self.order + 1, "trajectory_length",
                 f"must be at least order + 1 = {self.order + 1}")
        _require(self.filter_kind in ("fejer", "cosine", "sharp"), "filter_kind",
                 "must be fejer, cosine, or sharp")
        if self.grid_size is not None:
            _require(self.grid_size >= 4 * self.order, "grid_size",
                     f"must be at least 4 * order = {4 * self.order}")
        if self.threshold is not None:
            _require(self.threshold > 0, "threshold", "must be positive")
        if self.quadrature_size is not None:
            _require(self.quadrature_size > self.order, "quadrature_size",
                     "must exceed the correlation order")
        _require(self.scheme in ("ergodic", "ensemble"), "scheme",
                 "must be 'ergodic' or 'ensemble'")
        _require(self.mean_mode in ("paper-literal", "ensemble"), "mean_mode",
                 "must be 'paper-literal' or 'ensemble'")
        _require(isinstance(self.seed, int), "seed", "must be an integer")
        self.mpc.validate()

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        for key in data:
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration field")
        payload = dict(data)
        mpc_block = payload.pop("mpc", {})
        if not isinstance(mpc_block, dict):
            raise ConfigError("mpc: must be an object")
        mpc_known = {f for f in MpcSettings.__dataclass_fields__}
        for key in mpc_block:
            if key not in mpc_known:
                raise ConfigError(f"mpc.{key}: unknown configuration field")
        cfg = cls(**payload, mpc=MpcSettings(**mpc_block))
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    # -- derived views -----------------------------------------------------

    def spectral(self) -> SpectralConfig:
        return SpectralConfig(
            order=self.order,
            grid_size=self.grid_size,
            filter_kind=self.filter_kind,
            threshold=self.threshold,
            harmonic_terms=self.harmonic_terms,
            quadrature_size=self.quadrature_size,
            max_base_states=self.max_base_states,
            scheme=self.scheme,
        )

    def mpc_config(self) -> MpcConfig:
        return self.mpc.to_mpc_config()
