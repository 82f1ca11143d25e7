"""Clock-driven LIF simulation with Poisson current injection.

Membrane update (explicit Euler, one step of ``dt``)::

    V <- V + dt / tau_m * (-(V - V_s) + I / g),   V_s = V_reset

with ``I`` the sum of last step's presynaptic spikes times their weights
plus the external pulses falling in this step. A neuron at or above
threshold spikes, resets and stays clamped at ``V_reset`` for ``tau_ref``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numba as nb
import numpy as np

from .config import Config
from .plasticity import (MODES, MODE_OFF, MODE_RSTDP, MODE_STDP, Plasticity, RewardSchedule,
                         SynapseTable, _propagate_kernel, apply_rstdp, decay_eligibility,
                         on_spike_pairing, reward_signal)

NEVER = np.int64(-(2 ** 40))


class SimulationFault(RuntimeError):
    """A membrane potential became non-finite."""

    def __init__(self, neuron: int, t_ms: float):
        super().__init__(f"non-finite membrane potential at neuron {neuron}, t={t_ms} ms")
        self.neuron = neuron
        self.t_ms = t_ms


@dataclass
class NetworkState:
    """Membrane variables, refractory counters and the clock of one network."""

    v: np.ndarray
    refractory: np.ndarray  # remaining refractory steps
    last_spike: np.ndarray  # step index of the latest spike, NEVER if none
    prev_fired: np.ndarray  # neurons that fired on the previous step
    polarity: np.ndarray  # +1 excitatory, -1 inhibitory
    step: int = 0
    dt_ms: float = 1.0
    v_pre_reset: Optional[np.ndarray] = None

    @classmethod
    def rest(cls, polarity: np.ndarray, cfg: Config) -> "NetworkState":
        n = len(polarity)
        return cls(v=np.full(n, cfg.v_reset_mv), refractory=np.zeros(n, dtype=np.int64),
                   last_spike=np.full(n, NEVER, dtype=np.int64),
                   prev_fired=np.zeros(0, dtype=np.int64),
                   polarity=np.asarray(polarity, dtype=np.int8).copy(), dt_ms=cfg.dt_ms)

    @property
    def n_neurons(self) -> int:
        return int(self.v.shape[0])

    @property
    def t_ms(self) -> float:
        return self.step * self.dt_ms

    @property
    def refractory_ms(self) -> np.ndarray:
        return self.refractory * self.dt_ms

    def reset(self, cfg: Config) -> None:
        """Back to rest (membrane, refractoriness, spike history); clock kept."""
        self.v[:] = cfg.v_reset_mv
        self.refractory[:] = 0
        self.last_spike[:] = NEVER
        self.prev_fired = np.zeros(0, dtype=np.int64)
        self.v_pre_reset = None

    def copy(self) -> "NetworkState":
        return NetworkState(self.v.copy(), self.refractory.copy(), self.last_spike.copy(),
                            self.prev_fired.copy(), self.polarity.copy(), self.step, self.dt_ms,
                            None if self.v_pre_reset is None else self.v_pre_reset.copy())


@dataclass
class StimulusPlan:
    """Poisson current pulses: parallel arrays sorted by (time, neuron)."""

    neuron: np.ndarray
    time_ms: np.ndarray
    current_na: np.ndarray
    rate_hz: float
    window: tuple[float, float]

    def __len__(self) -> int:
        return int(self.neuron.shape[0])

    def tobytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(a).tobytes()
                        for a in (self.neuron, self.time_ms, self.current_na))

    @classmethod
    def empty(cls, window: tuple[float, float] = (0.0, 0.0)) -> "StimulusPlan":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0), np.zeros(0), 0.0, window)


def poisson_stimulus(neuron_ids: Sequence[int], rate_hz: float, window: tuple[float, float],
                     amplitude_na: float, seed) -> StimulusPlan:
    """Independent homogeneous Poisson pulse trains for every neuron in ``neuron_ids``.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts; equal seeds
    give identical plans.
    """
    ids = np.sort(np.asarray(list(neuron_ids), dtype=np.int64))
    if ids.size == 0:
        raise ValueError("cannot stimulate an empty engram")
    start, end = float(window[0]), float(window[1])
    if rate_hz < 0:
        raise ValueError("rate must be non-negative")
    if end < start:
        raise ValueError(f"window {window} is not ordered")
    if rate_hz == 0 or end == start:
        return StimulusPlan.empty((start, end))
    rng = np.random.default_rng(seed)
    counts = rng.poisson(rate_hz * (end - start) / 1000.0, size=ids.size)
    neurons = np.repeat(ids, counts)
    times = rng.uniform(start, end, size=neurons.size)
    order = np.lexsort((neurons, times))
    return StimulusPlan(neurons[order], times[order], np.full(neurons.size, float(amplitude_na)),
                        float(rate_hz), (start, end))


class SpikeRaster:
    """Per-step sets of fired neurons."""

    def __init__(self, dt_ms: float, start_step: int = 0):
        self.dt_ms = dt_ms
        self.start_step = start_step
        self.steps: list[np.ndarray] = []

    def append(self, fired: np.ndarray) -> None:
        self.steps.append(np.asarray(fired, dtype=np.int64).copy())

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, k: int) -> np.ndarray:
        return self.steps[k]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SpikeRaster):
            return NotImplemented
        return (self.start_step == other.start_step and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.steps, other.steps)))

    def time_ms(self, k: int) -> float:
        return (self.start_step + k) * self.dt_ms

    def events(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(time_ms, neuron_id)`` arrays."""
        if not self.steps:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        times = np.concatenate([np.full(len(f), self.time_ms(k)) for k, f in enumerate(self.steps)])
        ids = np.concatenate(self.steps)
        return times, ids

    def indicator(self, k: int, n_neurons: int) -> np.ndarray:
        sigma = np.zeros(n_neurons, dtype=np.int8)
        sigma[self.steps[k]] = 1
        return sigma

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("time_ms,neuron_id\n")
            for k, fired in enumerate(self.steps):
                t = self.time_ms(k)
                for i in fired:
                    fh.write(f"{t:g},{i}\n")


@nb.njit(cache=True)
def _integrate_kernel(v, refractory, current, decay, gain, v_s, v_th, v_reset, ref_steps,
                      v_pre, fired_buf):
    n_fired = 0
    bad = -1
    for i in range(v.shape[0]):
        if refractory[i] > 0:
            refractory[i] -= 1
            v[i] = v_reset
            v_pre[i] = v_reset
            continue
        x = v[i] + decay * (-(v[i] - v_s) + current[i] * gain)
        v_pre[i] = x
        if not np.isfinite(x):
            if bad < 0:
                bad = i
            v[i] = x
            continue
        if x >= v_th:
            fired_buf[n_fired] = i
            n_fired += 1
            v[i] = v_reset
            refractory[i] = ref_steps
        else:
            v[i] = x
    return n_fired, bad


class _Binned:
    """External pulses pre-binned to step offsets relative to a start step."""

    def __init__(self, plans: Iterable[StimulusPlan], start_step: int, n_steps: int, cfg: Config):
        plans = [p for p in plans if len(p)]
        scale = cfg.pulse_ms / cfg.dt_ms
        if plans:
            neuron = np.concatenate([p.neuron for p in plans])
            time = np.concatenate([p.time_ms for p in plans])
            cur = np.concatenate([p.current_na for p in plans]) * scale
            k = np.floor(time / cfg.dt_ms + 1e-9).astype(np.int64) - start_step
            keep = (k >= 0) & (k < n_steps)
            neuron, k, cur = neuron[keep], k[keep], cur[keep]
            order = np.argsort(k, kind="stable")
            self.neuron, self.k, self.cur = neuron[order], k[order], cur[order]
        else:
            self.neuron = np.zeros(0, dtype=np.int64)
            self.k = np.zeros(0, dtype=np.int64)
            self.cur = np.zeros(0)
        self.bounds = np.searchsorted(self.k, np.arange(n_steps + 1))

    def add_into(self, out: np.ndarray, offset: int) -> None:
        a, b = self.bounds[offset], self.bounds[offset + 1]
        if b > a:
            np.add.at(out, self.neuron[a:b], self.cur[a:b])


class Simulator:
    """Binds a state, a synapse table and a config; owns scratch buffers."""

    def __init__(self, state: NetworkState, synapses: SynapseTable, cfg: Config):
        self.state = state
        self.synapses = synapses
        self.cfg = cfg
        self.plasticity = Plasticity(cfg)
        n = state.n_neurons
        self._current = np.zeros(n)
        self._fired = np.zeros(n, dtype=np.int64)
        self._v_pre = np.zeros(n)
        self._decay = cfg.dt_ms / cfg.tau_m_ms
        self._gain = 1.0 / cfg.g_us
        self._syn_scale = cfg.syn_unit_na * cfg.pulse_ms / cfg.dt_ms
        self._ref_steps = cfg.steps(cfg.tau_ref_ms)

    def advance(self, binned: Optional[_Binned] = None, offset: int = 0,
                bias_na: Optional[np.ndarray] = None, mode: int = MODE_OFF,
                reward: Optional[RewardSchedule] = None, transmit: bool = True) -> np.ndarray:
        st, syn, cfg = self.state, self.synapses, self.cfg
        cur = self._current
        cur[:] = 0.0
        if transmit and st.prev_fired.size:
            _propagate_kernel(st.prev_fired, syn.head_out, syn.next_out, syn.post, syn.w,
                              self._syn_scale, cur)
        if binned is not None:
            binned.add_into(cur, offset)
        if bias_na is not None:
            cur += bias_na
        n_fired, bad = _integrate_kernel(st.v, st.refractory, cur, self._decay, self._gain,
                                         cfg.v_reset_mv, cfg.v_threshold_mv, cfg.v_reset_mv,
                                         self._ref_steps, self._v_pre, self._fired)
        if bad >= 0:
            raise SimulationFault(int(bad), st.t_ms)
        fired = self._fired[:n_fired].copy()
        st.v_pre_reset = self._v_pre.copy() if _KEEP_PRE_RESET else None
        if mode == MODE_RSTDP:
            decay_eligibility(syn, cfg.dt_ms, cfg.tau_e_ms)
        if mode != MODE_OFF:
            # reward learning only reshapes synapses that unsupervised STDP created
            on_spike_pairing(syn, fired, st.last_spike, st.step, mode, self.plasticity,
                             create=mode == MODE_STDP)
        if mode == MODE_RSTDP and reward is not None:
            r = reward_signal(st.t_ms, reward)
            if r != 0.0:
                apply_rstdp(syn, r, cfg.eta * cfg.dt_ms)
        st.last_spike[fired] = st.step
        st.prev_fired = fired
        st.step += 1
        return fired


_KEEP_PRE_RESET = False


def keep_pre_reset(flag: bool) -> None:
    """Record pre-reset membrane values every step (for indicator checks)."""
    global _KEEP_PRE_RESET
    _KEEP_PRE_RESET = bool(flag)


def step_network(state: NetworkState, synapses: SynapseTable,
                 stimuli: StimulusPlan | Sequence[StimulusPlan] | None, cfg: Config,
                 bias_na: Optional[np.ndarray] = None) -> NetworkState:
    """Advance ``state`` by one step of ``cfg.dt_ms`` (in place) and return it."""
    plans = [stimuli] if isinstance(stimuli, StimulusPlan) else list(stimuli or [])
    sim = Simulator(state, synapses, cfg)
    binned = _Binned(plans, state.step, 1, cfg)
    sim.advance(binned, 0, bias_na)
    return state


Observer = Callable[[int, np.ndarray], Optional[bool]]


def run_window(state: NetworkState, synapses: SynapseTable, plans: Sequence[StimulusPlan],
               duration_ms: float, cfg: Config, plasticity_mode: str = "off",
               reward: Optional[RewardSchedule] = None, bias_na: Optional[np.ndarray] = None,
               observers: Sequence[Observer] = (), sim: Optional[Simulator] = None,
               transmit: bool = True) -> tuple[NetworkState, SpikeRaster]:
    """Run ``duration_ms`` of simulation, returning the state and the raster.

    Observers are called after each step with ``(step, fired)``; a truthy
    return value ends the window after that step. With ``transmit=False``
    spikes do not propagate through the synapses (plasticity still sees them).
    """
    n_steps = cfg.steps(duration_ms)
    mode = MODES[plasticity_mode]
    if sim is None or sim.state is not state or sim.synapses is not synapses:
        sim = Simulator(state, synapses, cfg)
    raster = SpikeRaster(cfg.dt_ms, state.step)
    binned = _Binned(plans, state.step, n_steps, cfg)
    for k in range(n_steps):
        step = state.step
        fired = sim.advance(binned, k, bias_na, mode, reward, transmit)
        raster.append(fired)
        stop = False
        for obs in observers:
            stop = bool(obs(step, fired)) or stop
        if stop:
            break
    return state, raster
