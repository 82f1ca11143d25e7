"""Population-coded memory engrams and the similarity readout.

Each symbol owns ``K = sparsity * N`` neurons of a shared arena. The
similarity of engram ``m`` to a firing vector ``sigma`` is

    Sim_m = sum_i (phi_i^m - lam) * sigma_i / (N * lam * (1 - lam))

which is 1 when exactly the members fire and ~0 at rest.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import Config, ConfigError

ENTITY = "entity"
RELATION = "relation"


class RegistryError(KeyError):
    """Unknown or duplicate symbol label."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Engram:
    label: str
    kind: str
    neuron_ids: np.ndarray  # sorted member indices
    inhibitory: np.ndarray  # sorted inhibitory members (subset of neuron_ids)

    @property
    def size(self) -> int:
        return int(self.neuron_ids.shape[0])

    @property
    def excitatory(self) -> np.ndarray:
        return np.setdiff1d(self.neuron_ids, self.inhibitory)

    def pattern(self, n_neurons: int) -> np.ndarray:
        phi = np.zeros(n_neurons, dtype=np.int8)
        phi[self.neuron_ids] = 1
        return phi


def arena_polarity(n_neurons: int, inhibitory_fraction: float, seed) -> np.ndarray:
    """Per-neuron sign: exactly ``round(rho * N)`` inhibitory neurons, seeded."""
    rng = np.random.default_rng(seed)
    pol = np.ones(n_neurons, dtype=np.int8)
    n_inh = int(round(inhibitory_fraction * n_neurons))
    pol[rng.permutation(n_neurons)[:n_inh]] = -1
    return pol


class EngramRegistry:
    """Label -> engram map over one neuron arena."""

    def __init__(self, n_neurons: int, sparsity: float, inhibitory_fraction: float,
                 polarity: np.ndarray):
        k = sparsity * n_neurons
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ConfigError(f"sparsity * n_neurons = {k} is not a positive integer")
        self.n_neurons = int(n_neurons)
        self.sparsity = float(sparsity)
        self.inhibitory_fraction = float(inhibitory_fraction)
        self.polarity = np.asarray(polarity, dtype=np.int8)
        self.engrams: dict[str, Engram] = {}

    @classmethod
    def from_config(cls, cfg: Config, seed=None) -> "EngramRegistry":
        seed = cfg.seed if seed is None else seed
        pol = arena_polarity(cfg.n_neurons, cfg.inhibitory_fraction, [seed, 0x9E11])
        return cls(cfg.n_neurons, cfg.sparsity, cfg.inhibitory_fraction, pol)

    @property
    def k(self) -> int:
        return int(round(self.sparsity * self.n_neurons))

    @property
    def memory_load(self) -> float:
        return len(self.engrams) / self.n_neurons

    def __contains__(self, label: str) -> bool:
        return label in self.engrams

    def __getitem__(self, label: str) -> Engram:
        try:
            return self.engrams[label]
        except KeyError:
            raise RegistryError(f"unbound symbol: {label!r}") from None

    def __len__(self) -> int:
        return len(self.engrams)

    def __iter__(self):
        return iter(self.engrams.values())

    def labels(self, kind: Optional[str] = None) -> list[str]:
        return [e.label for e in self.engrams.values() if kind is None or e.kind == kind]

    def to_json(self) -> dict:
        return {
            "n_neurons": self.n_neurons,
            "sparsity": self.sparsity,
            "inhibitory_fraction": self.inhibitory_fraction,
            "engrams": [
                {"label": e.label, "kind": e.kind, "neuron_ids": e.neuron_ids.tolist(),
                 "inhibitory": [int(i) in set(e.inhibitory.tolist()) for i in e.neuron_ids]}
                for e in self.engrams.values()
            ],
        }

    @classmethod
    def from_json(cls, data: dict, polarity: np.ndarray) -> "EngramRegistry":
        reg = cls(data["n_neurons"], data["sparsity"], data["inhibitory_fraction"], polarity)
        for item in data["engrams"]:
            ids = np.asarray(item["neuron_ids"], dtype=np.int64)
            inh = ids[np.asarray(item["inhibitory"], dtype=bool)] if len(ids) else ids
            reg.engrams[item["label"]] = Engram(item["label"], item["kind"], ids, np.sort(inh))
        return reg


def allocate_engram(registry: EngramRegistry, label: str, kind: str, seed,
                    exclusive: bool = False) -> Engram:
    """Draw ``K`` members uniformly without replacement, stratified by polarity.

    ``round(rho * K)`` members come from the inhibitory pool and the rest from
    the excitatory pool, so overlaps with other engrams arise only by chance.
    ``exclusive`` restricts both pools to neurons no bound engram uses.
    """
    if label in registry.engrams:
        raise RegistryError(f"duplicate symbol: {label!r}")
    if kind not in (ENTITY, RELATION):
        raise ValueError(f"kind must be {ENTITY!r} or {RELATION!r}")
    if not label:
        raise ValueError("empty label")
    k = registry.k
    n_inh = int(round(registry.inhibitory_fraction * k))
    rng = np.random.default_rng(seed)
    inh_pool = np.flatnonzero(registry.polarity < 0)
    exc_pool = np.flatnonzero(registry.polarity > 0)
    if exclusive and registry.engrams:
        taken = np.concatenate([e.neuron_ids for e in registry.engrams.values()])
        inh_pool = np.setdiff1d(inh_pool, taken)
        exc_pool = np.setdiff1d(exc_pool, taken)
    if n_inh > inh_pool.size or k - n_inh > exc_pool.size:
        raise ConfigError("arena too small for the requested engram composition")
    exc = rng.choice(exc_pool, size=k - n_inh, replace=False)
    inh = rng.choice(inh_pool, size=n_inh, replace=False)
    eng = Engram(label, kind, np.sort(np.concatenate([exc, inh])).astype(np.int64),
                 np.sort(inh).astype(np.int64))
    registry.engrams[label] = eng
    return eng


def similarity(engram: Engram, sigma: np.ndarray, n_neurons: int, sparsity: float) -> float:
    """Similarity of ``engram`` to a firing vector ``sigma`` (length N).

    ``sigma`` may be a 0/1 indicator or any real-valued activity vector.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    lam = sparsity
    member = sigma[engram.neuron_ids].sum()
    return float((member - lam * sigma.sum()) / (n_neurons * lam * (1.0 - lam)))


def similarity_of_fired(engram: Engram, fired: np.ndarray, n_neurons: int,
                        sparsity: float) -> float:
    """Same as :func:`similarity` for a sparse list of fired indices."""
    member = np.isin(fired, engram.neuron_ids, assume_unique=True).sum()
    lam = sparsity
    return float((member - lam * len(fired)) / (n_neurons * lam * (1.0 - lam)))


class SmoothedReadout:
    """Similarity over exponentially decaying per-neuron spike traces.

    Each neuron's trace jumps to 1 when it fires and otherwise decays with
    ``tau``; the similarity formula is then applied to the trace vector.
    For a raster that is constant from the start the traces equal the raster,
    so the smoothed and raw similarities coincide.
    """

    def __init__(self, engrams: Sequence[Engram], n_neurons: int, sparsity: float, tau_ms: float,
                 dt_ms: float):
        self.engrams = list(engrams)
        self.labels = [e.label for e in self.engrams]
        self.n_neurons = n_neurons
        self.sparsity = sparsity
        self.decay = math.exp(-dt_ms / tau_ms)
        self.trace = np.zeros(n_neurons)
        self._norm = n_neurons * sparsity * (1.0 - sparsity)
        k = max((e.size for e in self.engrams), default=0)
        # ragged membership padded with index N (points at a zero slot)
        self._members = np.full((len(self.engrams), k), n_neurons, dtype=np.int64)
        for r, e in enumerate(self.engrams):
            self._members[r, :e.size] = e.neuron_ids
        self._counts = np.zeros(n_neurons + 1)

    def reset(self) -> None:
        self.trace[:] = 0.0

    def update(self, fired: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Advance one step; returns ``(raw, smoothed)`` similarities per engram."""
        self.trace *= self.decay
        self.trace[fired] = 1.0
        raw = self._sim_sparse(fired)
        smooth = self._sim_dense(self.trace)
        return raw, smooth

    def _sim_dense(self, x: np.ndarray) -> np.ndarray:
        buf = self._counts
        buf[:-1] = x
        buf[-1] = 0.0
        member = buf[self._members].sum(axis=1)
        return (member - self.sparsity * x.sum()) / self._norm

    def _sim_sparse(self, fired: np.ndarray) -> np.ndarray:
        buf = self._counts
        buf[:] = 0.0
        buf[fired] = 1.0
        member = buf[self._members].sum(axis=1)
        return (member - self.sparsity * len(fired)) / self._norm


@dataclass
class TraceLog:
    """Per-step similarity rows (raw and smoothed) for a watch-list of engrams."""

    labels: list[str]
    times: list[float] = field(default_factory=list)
    raw: list[np.ndarray] = field(default_factory=list)
    smooth: list[np.ndarray] = field(default_factory=list)

    def append(self, t_ms: float, raw: np.ndarray, smooth: Optional[np.ndarray] = None) -> None:
        self.times.append(float(t_ms))
        self.raw.append(np.asarray(raw, dtype=np.float64).copy())
        self.smooth.append(np.asarray(raw if smooth is None else smooth, dtype=np.float64).copy())

    def __len__(self) -> int:
        return len(self.times)

    def series(self, label: str, smoothed: bool = True) -> np.ndarray:
        col = self.labels.index(label)
        rows = self.smooth if smoothed else self.raw
        return np.array([r[col] for r in rows])

    def peak(self, label: str, smoothed: bool = True) -> float:
        s = self.series(label, smoothed)
        return float(s.max()) if s.size else 0.0

    def to_csv(self, path, smoothed: bool = True) -> None:
        rows = self.smooth if smoothed else self.raw
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time_ms", "label", "sim"])
            for t, row in zip(self.times, rows):
                for label, value in zip(self.labels, row):
                    w.writerow([f"{t:g}", label, repr(float(value))])


def record_similarity(trace_log: TraceLog, registry: EngramRegistry, fired: np.ndarray,
                      t_ms: float) -> TraceLog:
    """Append the raw similarity of every watched engram for one raster step."""
    row = np.array([similarity_of_fired(registry[label], np.asarray(fired, dtype=np.int64),
                                        registry.n_neurons, registry.sparsity)
                    for label in trace_log.labels])
    trace_log.append(t_ms, row)
    return trace_log


def watch_all(registry: EngramRegistry, kind: Optional[str] = None) -> TraceLog:
    return TraceLog(registry.labels(kind))
