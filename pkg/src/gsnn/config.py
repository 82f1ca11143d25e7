"""Run configuration: model constants, engineering defaults and validation.

The LIF, STDP and reward constants default to the published model table;
everything else (step size, stimulation, arena size, readout) is an
engineering default that can be overridden from a YAML key-value file.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

CONFIG_ENV_VAR = "GSNN_CONFIG"


class ConfigError(ValueError):
    """Raised when a configuration is inconsistent or cannot be read."""


@dataclass(frozen=True)
class Config:
    # LIF neuron
    c_m_nf: float = 30.0
    tau_m_ms: float = 30.0
    v_reset_mv: float = -65.0
    v_threshold_mv: float = -35.0
    tau_ref_ms: float = 10.0
    dt_ms: float = 1.0

    # pair STDP
    tau_s_ms: float = 30.0
    tau_w_ms: float = 20.0
    a_plus: float = 1.1
    a_minus: float = 0.95

    # reward-modulated STDP
    c_r: float = 10.0
    c_p: float = -10.0
    t_r_ms: float = 5.0
    tau_e_ms: float = 20.0  # short enough that a readout-end reward misses cue-time pairings
    eta: float = 0.03  # R-max step scale; 1.0 saturates weights in one reward window

    # synapses
    w_exc_max: float = 5.0
    w_inh_min: float = -5.0
    syn_unit_na: float = 10.0  # current of a unit-weight spike, 1 ms pulse
    pulse_ms: float = 1.0

    # Poisson stimulation
    stim_rate_hz: float = 800.0
    stim_amplitude_na: float = 180.0  # 5 coincident pulses reach threshold

    # engram arena
    n_neurons: int = 1000
    sparsity: float = 0.05
    inhibitory_fraction: float = 0.15

    # readout
    smoothing_tau_ms: float = 20.0
    theta: float = 0.5
    theta_neg: float = 0.2

    # protocols
    window_ms: float = 100.0
    gap_ms: float = 0.0
    repetitions: int = 3
    rest_ms: float = 40.0
    encode_recurrent: bool = False  # synaptic transmission during encoding windows
    cue_ms: float = 100.0
    readout_ms: float = 100.0
    emergent_threshold: float = 0.5

    seed: int = 0

    @property
    def g_us(self) -> float:
        """Membrane conductance in microsiemens (C_m / tau_m)."""
        return self.c_m_nf / self.tau_m_ms

    @property
    def engram_size(self) -> int:
        return int(round(self.sparsity * self.n_neurons))

    def steps(self, duration_ms: float) -> int:
        """Number of whole steps in ``duration_ms``; raises if dt does not divide it."""
        n = duration_ms / self.dt_ms
        k = int(round(n))
        if abs(n - k) > 1e-9 or k < 0:
            raise ConfigError(f"duration {duration_ms} ms is not a multiple of dt={self.dt_ms} ms")
        return k

    def validate(self) -> "Config":
        positive = ("c_m_nf", "tau_m_ms", "tau_ref_ms", "dt_ms", "tau_s_ms", "tau_w_ms",
                    "tau_e_ms", "t_r_ms", "smoothing_tau_ms", "window_ms", "cue_ms", "pulse_ms")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("gap_ms", "rest_ms", "readout_ms", "stim_rate_hz", "stim_amplitude_na",
                     "syn_unit_na", "eta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.v_threshold_mv <= self.v_reset_mv:
            raise ConfigError("v_threshold_mv must exceed v_reset_mv")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError("theta must lie in (0, 1]")
        if not (0.0 <= self.theta_neg <= self.theta):
            raise ConfigError("theta_neg must lie in [0, theta]")
        if not (0.0 < self.sparsity < 1.0):
            raise ConfigError("sparsity must lie in (0, 1)")
        k = self.sparsity * self.n_neurons
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError(f"sparsity * n_neurons = {k} is not a positive integer")
        if not (0.0 <= self.inhibitory_fraction < 1.0):
            raise ConfigError("inhibitory_fraction must lie in [0, 1)")
        if self.w_exc_max < 0 or self.w_inh_min > 0:
            raise ConfigError("weight bounds must straddle zero")
        if self.repetitions < 0:
            raise ConfigError("repetitions must be >= 0")
        for name in ("window_ms", "gap_ms", "rest_ms", "cue_ms", "readout_ms", "tau_ref_ms"):
            self.steps(getattr(self, name))
        return self

    def replace(self, **overrides: Any) -> "Config":
        return dataclasses.replace(self, **overrides).validate()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


def from_mapping(data: Mapping[str, Any] | None, base: Config | None = None) -> Config:
    base = base or Config()
    data = dict(data or {})
    known = {f.name: f for f in fields(Config)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {}
    for key, value in data.items():
        typ = type(getattr(base, key))
        try:
            coerced[key] = _as_bool(value) if typ is bool else typ(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r}") from exc
        if typ is float and not math.isfinite(coerced[key]):
            raise ConfigError(f"{key} must be finite")
    return dataclasses.replace(base, **coerced).validate()


def load_config(path: str | os.PathLike | None = None, **overrides: Any) -> Config:
    """Load a YAML key-value config; falls back to $GSNN_CONFIG, then defaults.

    Keyword overrides are applied last (command-line flags win).
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    data: dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p} must hold a key-value mapping")
        data.update(loaded)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return from_mapping(data)
