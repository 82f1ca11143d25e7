"""Pair STDP, eligibility traces and reward-modulated (R-max) weight updates.

Synapses live in :class:`SynapseTable`, a sparse store that only holds pairs
that were ever instantiated. Rows are kept in flat arrays (insertion order),
with a hash index ``pre * N + post -> row`` and a per-neuron linked list of
outgoing rows for spike propagation. The hot loops are numba kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from .config import Config

MODE_OFF = 0
MODE_STDP = 1
MODE_RSTDP = 2
MODES = {"off": MODE_OFF, "stdp": MODE_STDP, "rstdp": MODE_RSTDP}

# eligibility magnitudes below this are flushed to exactly zero
ELIGIBILITY_FLOOR = 1e-12


def stdp_delta(delta_t: float, cfg: Config = Config()) -> float:
    """Weight change for one spike pair, ``delta_t = t_pre - t_post`` in ms.

    Pre-before-post (negative ``delta_t``) potentiates, post-before-pre
    depresses; zero outside the open window ``(-tau_w, tau_w)`` and at 0.
    """
    if -cfg.tau_w_ms < delta_t < 0:
        return cfg.a_plus * math.exp(delta_t / cfg.tau_s_ms)
    if 0 < delta_t < cfg.tau_w_ms:
        return -cfg.a_minus * math.exp(-delta_t / cfg.tau_s_ms)
    return 0.0


def stdp_lut(cfg: Config) -> tuple[np.ndarray, np.ndarray]:
    """Potentiation/depression magnitudes indexed by the spike lag in steps."""
    n = int(math.ceil(cfg.tau_w_ms / cfg.dt_ms)) + 1
    plus = np.array([stdp_delta(-k * cfg.dt_ms, cfg) for k in range(n)])
    minus = np.array([stdp_delta(k * cfg.dt_ms, cfg) for k in range(n)])
    return plus, minus


@dataclass
class RewardSchedule:
    """Latest reward/punish times and the constants of the reward signal."""

    c_r: float = 10.0
    c_p: float = -10.0
    window_ms: float = 5.0
    t_r: Optional[float] = None
    t_p: Optional[float] = None

    @classmethod
    def from_config(cls, cfg: Config) -> "RewardSchedule":
        return cls(c_r=cfg.c_r, c_p=cfg.c_p, window_ms=cfg.t_r_ms)

    def reward(self, t: float) -> None:
        self.t_r = t

    def punish(self, t: float) -> None:
        self.t_p = t


def reward_signal(t: float, schedule: RewardSchedule) -> float:
    """Piecewise reward signal; punishment wins when both windows cover ``t``."""
    if schedule.t_p is not None and 0 <= t - schedule.t_p <= schedule.window_ms:
        return schedule.c_p
    if schedule.t_r is not None and 0 <= t - schedule.t_r <= schedule.window_ms:
        return schedule.c_r
    return 0.0


# --------------------------------------------------------------------------
# kernels


@nb.njit(cache=True)
def _find_or_create(index, j, i, n_neurons, meta, pre, post, w, e, sign, polarity,
                    head_out, next_out, create):
    key = np.int64(j) * n_neurons + i
    if key in index:
        return index[key]
    if not create:
        return np.int64(-1)
    s = meta[0]
    meta[0] = s + 1
    pre[s] = j
    post[s] = i
    w[s] = 0.0
    e[s] = 0.0
    sign[s] = polarity[j]
    next_out[s] = head_out[j]
    head_out[j] = s
    index[key] = s
    return s


@nb.njit(cache=True)
def _mark_active(s, active, is_active, meta):
    if not is_active[s]:
        is_active[s] = True
        active[meta[1]] = s
        meta[1] += 1


@nb.njit(cache=True)
def _pair_kernel(fired, recent, last_spike, fired_now, t_step, n_neurons, mode,
                 lut_plus, lut_minus, w_lo, w_hi, create,
                 index, meta, pre, post, w, e, sign, polarity, head_out, next_out,
                 active, is_active):
    n_lut = lut_plus.shape[0]
    # post spikes: pair with the latest earlier spike of every presynaptic partner
    for a in range(fired.shape[0]):
        i = fired[a]
        for b in range(recent.shape[0]):
            j = recent[b]
            if j == i or fired_now[j]:
                continue
            lag = t_step - last_spike[j]
            if lag <= 0 or lag >= n_lut:
                continue
            d = lut_plus[lag]
            if d == 0.0:
                continue
            s = _find_or_create(index, j, i, n_neurons, meta, pre, post, w, e, sign,
                                polarity, head_out, next_out, create)
            if s < 0:
                continue
            if mode == 1:
                x = w[s] + sign[s] * d
                w[s] = min(max(x, w_lo if sign[s] < 0 else 0.0), 0.0 if sign[s] < 0 else w_hi)
            else:
                e[s] += sign[s] * d
                _mark_active(s, active, is_active, meta)
    # pre spikes: pair with the latest earlier spike of every postsynaptic partner
    for a in range(fired.shape[0]):
        j = fired[a]
        for b in range(recent.shape[0]):
            i = recent[b]
            if j == i or fired_now[i]:
                continue
            lag = t_step - last_spike[i]
            if lag <= 0 or lag >= n_lut:
                continue
            d = lut_minus[lag]
            if d == 0.0:
                continue
            key = np.int64(j) * n_neurons + i
            if key not in index:
                continue
            s = index[key]
            if mode == 1:
                x = w[s] + sign[s] * d
                w[s] = min(max(x, w_lo if sign[s] < 0 else 0.0), 0.0 if sign[s] < 0 else w_hi)
            else:
                e[s] += sign[s] * d
                _mark_active(s, active, is_active, meta)


@nb.njit(cache=True)
def _decay_kernel(factor, floor, e, active, is_active, meta):
    k = 0
    while k < meta[1]:
        s = active[k]
        x = e[s] * factor
        if abs(x) < floor:
            e[s] = 0.0
            is_active[s] = False
            meta[1] -= 1
            active[k] = active[meta[1]]
        else:
            e[s] = x
            k += 1


@nb.njit(cache=True)
def _rstdp_kernel(scale, w_lo, w_hi, w, e, sign, active, meta):
    for k in range(meta[1]):
        s = active[k]
        x = w[s] + scale * e[s]
        if sign[s] < 0:
            w[s] = min(max(x, w_lo), 0.0)
        else:
            w[s] = min(max(x, 0.0), w_hi)


@nb.njit(cache=True)
def _propagate_kernel(prev_fired, head_out, next_out, post, w, scale, out):
    for a in range(prev_fired.shape[0]):
        s = head_out[prev_fired[a]]
        while s >= 0:
            out[post[s]] += w[s] * scale
            s = next_out[s]


def _new_index():
    return Dict.empty(key_type=types.int64, value_type=types.int64)


class SynapseTable:
    """Sparse ``(pre, post) -> (weight, eligibility)`` store.

    ``polarity`` is the per-neuron sign (+1 excitatory, -1 inhibitory); it
    fixes the weight range of every synapse that neuron sends: ``[0, w_max]``
    or ``[w_min, 0]``.
    """

    def __init__(self, polarity: np.ndarray, w_exc_max: float = 5.0, w_inh_min: float = -5.0,
                 capacity: int = 1024):
        self.polarity = np.asarray(polarity, dtype=np.int8).copy()
        self.n_neurons = int(self.polarity.shape[0])
        self.w_exc_max = float(w_exc_max)
        self.w_inh_min = float(w_inh_min)
        self.index = _new_index()
        self.meta = np.zeros(2, dtype=np.int64)  # [rows, active eligibility rows]
        self.head_out = np.full(self.n_neurons, -1, dtype=np.int64)
        self._alloc(max(int(capacity), 16))

    @classmethod
    def from_config(cls, polarity: np.ndarray, cfg: Config) -> "SynapseTable":
        return cls(polarity, cfg.w_exc_max, cfg.w_inh_min)

    def _alloc(self, cap: int) -> None:
        self.pre = np.zeros(cap, dtype=np.int64)
        self.post = np.zeros(cap, dtype=np.int64)
        self.w = np.zeros(cap, dtype=np.float64)
        self.e = np.zeros(cap, dtype=np.float64)
        self.sign = np.zeros(cap, dtype=np.int8)
        self.next_out = np.full(cap, -1, dtype=np.int64)
        self.active = np.zeros(cap, dtype=np.int64)
        self.is_active = np.zeros(cap, dtype=np.bool_)

    @property
    def capacity(self) -> int:
        return int(self.pre.shape[0])

    def __len__(self) -> int:
        return int(self.meta[0])

    def reserve(self, extra: int) -> None:
        need = len(self) + int(extra)
        if need <= self.capacity:
            return
        cap = self.capacity
        while cap < need:
            cap *= 2
        n = len(self)
        old = (self.pre, self.post, self.w, self.e, self.sign, self.next_out, self.active,
               self.is_active)
        self._alloc(cap)
        for new, prev in zip((self.pre, self.post, self.w, self.e, self.sign, self.next_out,
                              self.active, self.is_active), old):
            new[:n] = prev[:n]

    # -- row access -------------------------------------------------------
    def add(self, pre: int, post: int, weight: float = 0.0) -> int:
        """Instantiate (or fetch) a synapse and set its weight (clamped)."""
        self.reserve(1)
        s = _find_or_create(self.index, int(pre), int(post), self.n_neurons, self.meta,
                            self.pre, self.post, self.w, self.e, self.sign, self.polarity,
                            self.head_out, self.next_out, True)
        self.w[s] = self.clamp(weight, self.sign[s])
        return int(s)

    def clamp(self, weight: float, sign: int) -> float:
        if sign < 0:
            return min(max(weight, self.w_inh_min), 0.0)
        return min(max(weight, 0.0), self.w_exc_max)

    def find(self, pre: int, post: int) -> int:
        return int(self.index.get(int(pre) * self.n_neurons + int(post), -1))

    def weight(self, pre: int, post: int) -> float:
        s = self.find(pre, post)
        return 0.0 if s < 0 else float(self.w[s])

    def eligibility(self, pre: int, post: int) -> float:
        s = self.find(pre, post)
        return 0.0 if s < 0 else float(self.e[s])

    def set_eligibility(self, pre: int, post: int, value: float) -> None:
        s = self.find(pre, post)
        if s < 0:
            raise KeyError((pre, post))
        self.e[s] = value
        if value != 0.0:
            _mark_active(s, self.active, self.is_active, self.meta)

    def arrays(self) -> dict[str, np.ndarray]:
        """Copies of the live rows, in insertion order."""
        n = len(self)
        return {"pre": self.pre[:n].copy(), "post": self.post[:n].copy(),
                "weight": self.w[:n].copy(), "eligibility": self.e[:n].copy()}

    def dense(self) -> np.ndarray:
        """Full ``N x N`` weight matrix indexed ``[pre, post]`` (absent = 0)."""
        n = len(self)
        out = np.zeros((self.n_neurons, self.n_neurons))
        out[self.pre[:n], self.post[:n]] = self.w[:n]
        return out

    def weight_matrix_between(self, sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """Dense block of weights from ``sources`` to ``targets`` (absent = 0)."""
        out = np.zeros((len(sources), len(targets)))
        pos = {int(t): k for k, t in enumerate(targets)}
        for a, j in enumerate(sources):
            s = self.head_out[int(j)]
            while s >= 0:
                b = pos.get(int(self.post[s]))
                if b is not None:
                    out[a, b] = self.w[s]
                s = self.next_out[s]
        return out

    def digest(self) -> str:
        """Hash over weights and eligibilities (side-effect checks)."""
        import hashlib

        n = len(self)
        h = hashlib.sha256()
        for arr in (self.pre[:n], self.post[:n], self.w[:n], self.e[:n]):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def reset_eligibility(self) -> None:
        k = int(self.meta[1])
        rows = self.active[:k]
        self.e[rows] = 0.0
        self.is_active[rows] = False
        self.meta[1] = 0

    def copy(self) -> "SynapseTable":
        return SynapseTable.from_arrays(self.polarity, self.arrays(), self.w_exc_max,
                                        self.w_inh_min)

    @classmethod
    def from_arrays(cls, polarity: np.ndarray, rows: dict[str, np.ndarray], w_exc_max: float,
                    w_inh_min: float) -> "SynapseTable":
        table = cls(polarity, w_exc_max, w_inh_min, capacity=max(16, len(rows["pre"])))
        _bulk_load(rows["pre"].astype(np.int64), rows["post"].astype(np.int64),
                   rows["weight"].astype(np.float64), rows["eligibility"].astype(np.float64),
                   table.index, table.n_neurons, table.meta, table.pre, table.post, table.w,
                   table.e, table.sign, table.polarity, table.head_out, table.next_out,
                   table.active, table.is_active)
        return table

    def to_csv(self, path) -> None:
        n = len(self)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("pre_id,post_id,weight,eligibility\n")
            for s in range(n):
                fh.write(f"{self.pre[s]},{self.post[s]},{self.w[s]!r},{self.e[s]!r}\n")


@nb.njit(cache=True)
def _bulk_load(pres, posts, ws, es, index, n_neurons, meta, pre, post, w, e, sign, polarity,
               head_out, next_out, active, is_active):
    for k in range(pres.shape[0]):
        s = _find_or_create(index, pres[k], posts[k], n_neurons, meta, pre, post, w, e, sign,
                            polarity, head_out, next_out, True)
        w[s] = ws[k]
        e[s] = es[k]
        if es[k] != 0.0:
            _mark_active(s, active, is_active, meta)


# --------------------------------------------------------------------------
# table-level operations


class Plasticity:
    """Per-network cache of the STDP lookup tables and decay constants."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.lut_plus, self.lut_minus = stdp_lut(cfg)
        self.window_steps = self.lut_plus.shape[0]
        self.decay_factor = 1.0 - cfg.dt_ms / cfg.tau_e_ms


def on_spike_pairing(table: SynapseTable, fired: np.ndarray, last_spike: np.ndarray,
                     t_step: int, mode: str | int, plasticity: Plasticity,
                     create: bool = True) -> SynapseTable:
    """Nearest-neighbour pairing of the step-``t_step`` spikes.

    ``last_spike`` must still hold the spike steps *before* this step. In
    ``stdp`` mode deltas go to weights; in ``rstdp`` mode they accumulate in
    the eligibility trace. Synapses are instantiated on their first
    potentiating pairing when ``create`` is set.
    """
    mode = MODES[mode] if isinstance(mode, str) else int(mode)
    fired = np.asarray(fired, dtype=np.int64)
    if mode == MODE_OFF or fired.size == 0:
        return table
    recent = np.flatnonzero((t_step - last_spike) < plasticity.window_steps).astype(np.int64)
    if recent.size == 0:
        return table
    if create:
        table.reserve(fired.size * recent.size)
    fired_now = np.zeros(table.n_neurons, dtype=np.bool_)
    fired_now[fired] = True
    _pair_kernel(fired, recent, last_spike, fired_now, np.int64(t_step), table.n_neurons, mode,
                 plasticity.lut_plus, plasticity.lut_minus, table.w_inh_min, table.w_exc_max,
                 create, table.index, table.meta, table.pre, table.post, table.w, table.e,
                 table.sign, table.polarity, table.head_out, table.next_out, table.active,
                 table.is_active)
    return table


def decay_eligibility(table: SynapseTable, dt: float, tau_e: float) -> SynapseTable:
    """One explicit-Euler step of ``de/dt = -e / tau_e`` over the non-zero traces."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    _decay_kernel(1.0 - dt / tau_e, ELIGIBILITY_FLOOR, table.e, table.active, table.is_active,
                  table.meta)
    return table


def apply_rstdp(table: SynapseTable, reward: float, eta: float = 1.0) -> SynapseTable:
    """R-max update: every synapse moves by ``eta * reward * e`` (then clamped)."""
    if reward == 0.0 or eta == 0.0:
        return table
    _rstdp_kernel(float(eta * reward), table.w_inh_min, table.w_exc_max, table.w, table.e,
                  table.sign, table.active, table.meta)
    return table
