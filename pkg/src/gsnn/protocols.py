"""Experiment protocols: triple encoding, reward-driven transitivity training, induction."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import Config
from .datasets import chain_dataset, chain_queries, chain_split
from .engram import ENTITY, RELATION
from .kg import DatasetSplit, Triple
from .network import Network
from .plasticity import RewardSchedule
from .query import cue_seeds, rank_candidates, run_cue

ORDER_STREAM = 0x0DE
EPOCH_STREAM = 0xE90


@dataclass(frozen=True)
class EncodingProtocol:
    window_ms: float = 100.0
    gap_ms: float = 0.0
    rate_hz: float = 800.0
    amplitude_na: float = 180.0
    repetitions: int = 3
    rest_ms: float = 40.0
    recurrent: bool = False

    def __post_init__(self):
        if self.window_ms <= 0:
            raise ValueError("window_ms must be positive")
        if self.gap_ms < 0 or self.rest_ms < 0 or self.repetitions < 0:
            raise ValueError("gap_ms, rest_ms and repetitions must be non-negative")

    @classmethod
    def from_config(cls, cfg: Config) -> "EncodingProtocol":
        return cls(cfg.window_ms, cfg.gap_ms, cfg.stim_rate_hz, cfg.stim_amplitude_na,
                   cfg.repetitions, cfg.rest_ms, cfg.encode_recurrent)

    @property
    def triple_ms(self) -> float:
        """Simulated time spent per encoded triple."""
        return self.repetitions * (3 * self.window_ms + 2 * self.gap_ms + self.rest_ms)


def encode_triple(net: Network, head: str, relation: str, tail: str,
                  protocol: Optional[EncodingProtocol] = None) -> Network:
    """Stimulate head, relation and tail in consecutive windows with STDP on.

    Each repetition starts from rest and ends with a quiet period during which
    STDP stays on; the neuron state is reset afterwards so that consecutive
    triples do not pair with each other.
    """
    p = protocol or EncodingProtocol.from_config(net.cfg)
    labels = [head, relation, tail]
    for label in labels:
        net.registry[label]
    for _ in range(p.repetitions):
        net.rest()
        for k, label in enumerate(labels):
            t0 = net.t_ms
            plans = net.stimulate([label], t0, t0 + p.window_ms, p.rate_hz, p.amplitude_na)
            net.run(p.window_ms, plans, "stdp", transmit=p.recurrent)
            if p.gap_ms and k < 2:
                net.run(p.gap_ms, (), "stdp", transmit=p.recurrent)
        if p.rest_ms:
            net.run(p.rest_ms, (), "stdp", transmit=p.recurrent)
        net.rest()
    return net


def encoding_order(n: int, seed) -> np.ndarray:
    return np.random.default_rng([int(seed), ORDER_STREAM]).permutation(n)


def encode_graph(net: Network, triples: Sequence[Triple],
                 protocol: Optional[EncodingProtocol] = None, shuffle: bool = True,
                 progress: Optional[Callable[[int, int, Triple], None]] = None) -> Network:
    """Encode every triple once per call, in a seeded shuffled order."""
    triples = list(triples)
    for t in triples:
        for label in t:
            net.registry[label]
    order = encoding_order(len(triples), net.cfg.seed) if shuffle and len(triples) > 1 \
        else np.arange(len(triples))
    for k, idx in enumerate(order):
        t = triples[int(idx)]
        encode_triple(net, t.head, t.relation, t.tail, protocol)
        if progress is not None:
            progress(k + 1, len(triples), t)
    return net


# --------------------------------------------------------------------------
# reward-driven training


@dataclass
class TrialOutcome:
    triple: Triple
    truth: bool
    answer: bool
    peak: float
    reward: float

    @property
    def correct(self) -> bool:
        return self.answer == self.truth


@dataclass
class EpochMetrics:
    epoch: int
    accuracy: float
    mean_reward: float
    outcomes: list[TrialOutcome] = field(default_factory=list, repr=False)


def run_trial(net: Network, triple: Triple, truth: bool,
              schedule: Optional[RewardSchedule] = None) -> TrialOutcome:
    """One supervised query: cue head and relation, answer, then reward or punish.

    The network answers yes at the first step the tail's smoothed similarity
    reaches theta and no if the readout ends without that. Reward or
    punishment is issued at that answer time and R-STDP runs for the reward
    window (with the cue still on after a yes). Eligibility starts from zero
    and the neuron state is reset to rest afterwards. The cue uses the same
    per-query stimulus seeds as :func:`~gsnn.query.query`, so given fixed
    weights an answer does not depend on trial order.
    """
    cfg = net.cfg
    schedule = schedule or RewardSchedule.from_config(cfg)
    schedule.t_r = schedule.t_p = None
    net.synapses.reset_eligibility()
    col = list(dict.fromkeys(triple)).index(triple.tail)  # column of the tail in the log
    seeds = cue_seeds(cfg.seed, triple.head, triple.relation, 2)
    log, _, t0, plans = run_cue(net, triple.head, triple.relation, [triple.tail], "rstdp",
                                seeds=seeds, stop=lambda lg: lg.smooth[-1][col] >= cfg.theta)
    peak = rank_candidates(log, [triple.tail], cfg.theta, t0)[0].peak
    answer = peak >= cfg.theta
    if answer == truth:
        schedule.reward(net.t_ms)
        value = schedule.c_r
    else:
        schedule.punish(net.t_ms)
        value = schedule.c_p
    net.run(cfg.t_r_ms, plans if answer else (), "rstdp", schedule)
    net.synapses.reset_eligibility()
    net.rest()
    return TrialOutcome(triple, truth, bool(answer), float(peak), float(value))


def train_queries(net: Network, queries: Sequence[tuple[Triple, bool]], epochs: int,
                  on_epoch: Optional[Callable[[EpochMetrics], None]] = None
                  ) -> tuple[Network, list[EpochMetrics]]:
    """Run ``epochs`` passes over ``queries`` (seeded order per epoch)."""
    for t, _ in queries:
        for label in t:
            net.registry[label]
    history = []
    schedule = RewardSchedule.from_config(net.cfg)
    for epoch in range(int(epochs)):
        order = np.random.default_rng([int(net.cfg.seed), EPOCH_STREAM, epoch]) \
            .permutation(len(queries))
        outcomes = [run_trial(net, *queries[int(i)], schedule=schedule) for i in order]
        acc = float(np.mean([o.correct for o in outcomes])) if outcomes else math.nan
        mean_r = float(np.mean([o.reward for o in outcomes])) if outcomes else math.nan
        m = EpochMetrics(epoch + 1, acc, mean_r, outcomes)
        history.append(m)
        if on_epoch is not None:
            on_epoch(m)
    return net, history


def train_transitivity(net: Network, split: DatasetSplit, meta: dict[str, bool], epochs: int,
                       on_epoch: Optional[Callable[[EpochMetrics], None]] = None
                       ) -> tuple[Network, list[EpochMetrics]]:
    """Reward-driven training on masked chain completions and chain-derived negatives.

    ``split.train`` must already be encoded.
    """
    queries = chain_queries(split, meta, seed=[int(net.cfg.seed), EPOCH_STREAM])
    return train_queries(net, queries, epochs, on_epoch)


def write_metrics(history: Sequence[EpochMetrics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "accuracy", "mean_reward"])
        for m in history:
            w.writerow([m.epoch, f"{m.accuracy:.6f}", f"{m.mean_reward:.6f}"])


def moving_average(values: Sequence[float], width: int = 3) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < width:
        return np.zeros(0)
    return np.convolve(v, np.ones(width) / width, mode="valid")


# --------------------------------------------------------------------------
# transitivity experiment and inhibitory sweep


@dataclass(frozen=True)
class TransitivityTask:
    """Synthetic chain dataset plus the arena the transitivity runs use."""
    n_transitive: int = 2
    n_plain: int = 2
    chains_per_relation: int = 1
    chain_length: int = 4
    mask_fraction: float = 0.3
    # rewards are global, so engram overlap turns one query's reward into
    # noise on the others; K stays 50 but each neuron sits in half as many engrams
    n_neurons: Optional[int] = 2000
    sparsity: Optional[float] = 0.025

    def arena(self, cfg: Config) -> Config:
        """``cfg`` with this task's arena size (``None`` keeps the config's)."""
        changes = {k: v for k, v in (("n_neurons", self.n_neurons), ("sparsity", self.sparsity))
                   if v is not None}
        return cfg.replace(**changes) if changes else cfg

    def build(self, seed) -> tuple[DatasetSplit, dict[str, bool]]:
        triples, meta = chain_dataset(self.n_transitive, self.n_plain, self.chains_per_relation,
                                      self.chain_length)
        return chain_split(triples, meta, self.mask_fraction, seed=[int(seed), 0x5B1]), meta


def transitivity_experiment(cfg: Config, epochs: int, task: TransitivityTask = TransitivityTask(),
                            split: Optional[DatasetSplit] = None,
                            meta: Optional[dict[str, bool]] = None
                            ) -> tuple[Network, list[EpochMetrics]]:
    """Build a network in the task's arena, encode the training split and train."""
    if split is None or meta is None:
        split, meta = task.build(cfg.seed)
    net = Network.from_triples(task.arena(cfg), split.full)
    encode_graph(net, split.train)
    return train_transitivity(net, split, meta, epochs)


def _sweep_point(args) -> tuple[float, float]:
    cfg, ratio, epochs, task = args
    _, hist = transitivity_experiment(cfg.replace(inhibitory_fraction=ratio), epochs, task)
    return ratio, (hist[-1].accuracy if hist else math.nan)


def sweep_inhibitory_ratio(cfg: Config, ratios: Sequence[float], epochs_per_point: int,
                           task: TransitivityTask = TransitivityTask(), jobs: int = 1
                           ) -> list[tuple[float, float]]:
    """Final transitivity accuracy for each inhibitory fraction (independent runs)."""
    for r in ratios:
        if not 0.0 <= r < 1.0:
            raise ValueError(f"ratio {r} outside [0, 1)")
    work = [(cfg, float(r), epochs_per_point, task) for r in ratios]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_sweep_point, work))
    else:
        results = dict(map(_sweep_point, work))
    return [(float(r), results[float(r)]) for r in ratios]


def write_sweep(rows: Iterable[tuple[float, float]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["inhibitory_fraction", "accuracy"])
        for r, acc in rows:
            w.writerow([f"{r:g}", f"{acc:.6f}"])


# --------------------------------------------------------------------------
# induction


@dataclass
class InductionReport:
    emergent: list[Triple]
    threshold: float
    entities: list[str]
    relations: list[str]
    entity_to_relation_before: np.ndarray
    entity_to_relation_after: np.ndarray
    relation_to_entity_before: np.ndarray
    relation_to_entity_after: np.ndarray
    verification: Optional[tuple[str, str, str, bool, float]] = None

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("head\trelation\ttail\thead_relation\trelation_to_tail\n")
            hr = association(self.entity_to_relation_after, self.relation_to_entity_after)
            for t in self.emergent:
                i, j = self.entities.index(t.head), self.relations.index(t.relation)
                k = self.entities.index(t.tail)
                fh.write(f"{t}\t{hr[i, j]:.6f}\t"
                         f"{self.relation_to_entity_after[j, k]:.6f}\n")


def _structure(net: Network) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
    ents = net.registry.labels(ENTITY)
    rels = net.registry.labels(RELATION)
    return (ents, rels, net.group_weights(ents, rels, private=True),
            net.group_weights(rels, ents, private=True))


def association(er: np.ndarray, re: np.ndarray) -> np.ndarray:
    """Entity-relation link strength in either direction (``nan`` counts as 0)."""
    return np.fmax(np.nan_to_num(er), np.nan_to_num(re).T)


def emergent_triples(ents: Sequence[str], rels: Sequence[str], er0: np.ndarray,
                     er1: np.ndarray, re0: np.ndarray, re1: np.ndarray, threshold: float,
                     known: Iterable[Triple] = ()) -> list[Triple]:
    """Unknown ``(h, r, t)`` whose head-relation association and relation->tail
    group are both at or above ``threshold`` now, at least one of which was
    below it before.

    The head side is taken in either direction: a head that fires one hop
    after the relation in a locked cascade gets ``r -> h`` rather than
    ``h -> r``, yet co-stimulating the pair still recalls the tail.
    """
    known = set(known)
    hr0, hr1 = association(er0, re0), association(er1, re1)
    re0, re1 = np.nan_to_num(re0), np.nan_to_num(re1)
    out = []
    for i, h in enumerate(ents):
        for j, r in enumerate(rels):
            if hr1[i, j] < threshold:
                continue
            hr_new = hr0[i, j] < threshold
            for k, t in enumerate(ents):
                if t == h or re1[j, k] < threshold:
                    continue
                if not (hr_new or re0[j, k] < threshold):
                    continue
                tr = Triple(h, r, t)
                if tr not in known:
                    out.append(tr)
    return out


def run_induction(net: Network, co_stim: Sequence[str], duration_ms: float,
                  known: Iterable[Triple] = (), threshold: Optional[float] = None,
                  verify: Optional[tuple[str, str, str]] = None) -> tuple[Network, InductionReport]:
    """Co-stimulate ``co_stim`` with STDP on and report newly supported triples.

    ``verify = (head, relation, tail)`` additionally runs a read-only query and
    records whether the tail crosses the answer threshold.
    """
    from .query import verify_triple

    for label in co_stim:
        net.registry[label]
    threshold = net.cfg.emergent_threshold if threshold is None else threshold
    ents, rels, er0, re0 = _structure(net)
    if duration_ms > 0:
        net.rest()
        t0 = net.t_ms
        net.run(duration_ms, net.stimulate(list(co_stim), t0, t0 + duration_ms), "stdp")
        net.rest()
        _, _, er1, re1 = _structure(net)
    else:
        er1, re1 = er0.copy(), re0.copy()
    found = emergent_triples(ents, rels, er0, er1, re0, re1, threshold, known)
    report = InductionReport(found, threshold, ents, rels, er0, er1, re0, re1)
    if verify is not None:
        ok, series = verify_triple(net, *verify)
        report.verification = (*verify, ok, float(series.max()) if series.size else 0.0)
    return net, report
