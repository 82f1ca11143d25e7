"""A complete experiment network: config, engram arena, neuron state, synapses."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .config import Config
from .engram import EngramRegistry, SmoothedReadout, TraceLog
from .kg import Triple, bind_symbols
from .neuro import (NetworkState, Simulator, SpikeRaster, StimulusPlan, poisson_stimulus,
                    run_window)
from .plasticity import RewardSchedule, SynapseTable

STIM_STREAM = 0x571


class Network:
    """Single-writer bundle mutated by the protocols.

    Every Poisson plan draws its seed from ``(cfg.seed, STIM_STREAM, counter)``
    and bumps ``stim_counter``, so a run is fully determined by the config and
    the sequence of calls; the counter is part of a snapshot.
    """

    def __init__(self, cfg: Config, registry: Optional[EngramRegistry] = None,
                 synapses: Optional[SynapseTable] = None, state: Optional[NetworkState] = None,
                 stim_counter: int = 0):
        self.cfg = cfg.validate()
        self.registry = registry if registry is not None else EngramRegistry.from_config(cfg)
        pol = self.registry.polarity
        self.synapses = synapses if synapses is not None else SynapseTable.from_config(pol, cfg)
        self.state = state if state is not None else NetworkState.rest(pol, cfg)
        self.stim_counter = int(stim_counter)
        self._sim: Optional[Simulator] = None

    @classmethod
    def from_triples(cls, cfg: Config, triples: Iterable[Triple],
                     extra_entities: Iterable[str] = (),
                     isolated_entities: Iterable[str] = ()) -> "Network":
        net = cls(cfg)
        bind_symbols(triples, net.registry, cfg.seed, extra_entities, isolated_entities)
        return net

    @property
    def sim(self) -> Simulator:
        if self._sim is None or self._sim.state is not self.state or \
                self._sim.synapses is not self.synapses:
            self._sim = Simulator(self.state, self.synapses, self.cfg)
        return self._sim

    @property
    def t_ms(self) -> float:
        return self.state.t_ms

    def next_seed(self) -> list[int]:
        seed = [int(self.cfg.seed), STIM_STREAM, self.stim_counter]
        self.stim_counter += 1
        return seed

    def stimulate(self, labels: Sequence[str], start_ms: float, end_ms: float,
                  rate_hz: Optional[float] = None, amplitude_na: Optional[float] = None,
                  seeds: Optional[Sequence] = None) -> list[StimulusPlan]:
        """Poisson plans for ``labels``; seeds default to the network's stream."""
        rate = self.cfg.stim_rate_hz if rate_hz is None else rate_hz
        amp = self.cfg.stim_amplitude_na if amplitude_na is None else amplitude_na
        engrams = [self.registry[label] for label in labels]
        if seeds is None:
            seeds = [self.next_seed() for _ in engrams]
        return [poisson_stimulus(e.neuron_ids, rate, (start_ms, end_ms), amp, s)
                for e, s in zip(engrams, seeds)]

    def run(self, duration_ms: float, plans: Sequence[StimulusPlan] = (), mode: str = "off",
            reward: Optional[RewardSchedule] = None, observers=(),
            transmit: bool = True) -> SpikeRaster:
        _, raster = run_window(self.state, self.synapses, plans, duration_ms, self.cfg, mode,
                               reward=reward, observers=observers, sim=self.sim,
                               transmit=transmit)
        return raster

    def drive(self, labels: Sequence[str], duration_ms: float, mode: str = "off",
              reward: Optional[RewardSchedule] = None, observers=()) -> SpikeRaster:
        """Stimulate ``labels`` from now for ``duration_ms``."""
        t0 = self.t_ms
        plans = self.stimulate(labels, t0, t0 + duration_ms) if labels else []
        return self.run(duration_ms, plans, mode, reward, observers)

    def rest(self) -> None:
        """Reset neurons to rest (weights untouched)."""
        self.state.reset(self.cfg)

    def save_state(self) -> NetworkState:
        return self.state.copy()

    def restore_state(self, saved: NetworkState) -> None:
        """Copy ``saved`` back into the live state object (keeps the simulator bound)."""
        st = self.state
        st.v[:] = saved.v
        st.refractory[:] = saved.refractory
        st.last_spike[:] = saved.last_spike
        st.prev_fired = saved.prev_fired.copy()
        st.step = saved.step
        st.v_pre_reset = None if saved.v_pre_reset is None else saved.v_pre_reset.copy()

    def readout(self, labels: Optional[Sequence[str]] = None) -> SmoothedReadout:
        labels = self.registry.labels() if labels is None else list(labels)
        return SmoothedReadout([self.registry[l] for l in labels], self.registry.n_neurons,
                               self.registry.sparsity, self.cfg.smoothing_tau_ms, self.cfg.dt_ms)

    def recorder(self, labels: Optional[Sequence[str]] = None) -> tuple[TraceLog, callable]:
        """A trace log plus the observer that fills it (raw and smoothed Sim)."""
        ro = self.readout(labels)
        log = TraceLog(ro.labels)
        dt = self.cfg.dt_ms

        def observe(step: int, fired: np.ndarray) -> None:
            raw, smooth = ro.update(fired)
            log.append(step * dt, raw, smooth)

        return log, observe

    def private_members(self, label: str) -> np.ndarray:
        """Members of ``label`` that belong to no other engram."""
        others = [e.neuron_ids for e in self.registry if e.label != label]
        shared = np.concatenate(others) if others else np.zeros(0, dtype=np.int64)
        return np.setdiff1d(self.registry[label].neuron_ids, shared)

    def group_weights(self, sources: Sequence[str], targets: Sequence[str],
                      excitatory_only: bool = True, private: bool = False) -> np.ndarray:
        """Matrix of :meth:`group_weight` over label pairs (``nan`` on the diagonal).

        With ``private`` only neurons that belong to a single engram are used,
        so weights carried by overlapping members are not attributed to the
        wrong pair.
        """
        dense = self.synapses.dense()
        pol = self.registry.polarity

        def members(label):
            return self.private_members(label) if private else self.registry[label].neuron_ids

        out = np.full((len(sources), len(targets)), np.nan)
        for i, s in enumerate(sources):
            rows = members(s)
            if excitatory_only:
                rows = rows[pol[rows] > 0]
            for j, t in enumerate(targets):
                cols = members(t)
                if s != t and rows.size and cols.size:
                    out[i, j] = dense[np.ix_(rows, cols)].mean()
        return out

    def group_weight(self, src: str, dst: str, excitatory_only: bool = True) -> float:
        """Mean weight over all member pairs ``src -> dst`` (absent synapses count 0)."""
        a = self.registry[src]
        b = self.registry[dst]
        sources = a.excitatory if excitatory_only else a.neuron_ids
        block = self.synapses.weight_matrix_between(sources, b.neuron_ids)
        if src == dst:
            mask = sources[:, None] != b.neuron_ids[None, :]
            return float(block[mask].mean()) if mask.any() else 0.0
        return float(block.mean()) if block.size else 0.0
