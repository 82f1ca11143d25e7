"""Cue-based retrieval: drive head and relation engrams, rank candidates by similarity."""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .engram import ENTITY, TraceLog
from .neuro import SpikeRaster
from .network import Network
from .plasticity import RewardSchedule

QUERY_STREAM = 0x9E5


@dataclass
class Candidate:
    label: str
    peak: float  # peak smoothed similarity over cue + readout
    time_to_threshold_ms: Optional[float]  # from cue onset; None if never reached


@dataclass
class QueryResult:
    head: str
    relation: str
    theta: float
    candidates: list[Candidate]
    trace: TraceLog
    raster: Optional[SpikeRaster] = None
    t0_ms: float = 0.0
    members: dict[str, list[int]] = field(default_factory=dict)

    @property
    def answers(self) -> list[str]:
        return [c.label for c in self.candidates if c.peak >= self.theta]

    @property
    def top(self) -> Optional[Candidate]:
        return self.candidates[0] if self.candidates else None

    def candidate(self, label: str) -> Candidate:
        for c in self.candidates:
            if c.label == label:
                return c
        raise KeyError(label)

    def to_json(self) -> dict:
        return {
            "cue": [self.head, self.relation],
            "theta": self.theta,
            "answers": self.answers,
            "candidates": [{"label": c.label, "peak": c.peak,
                            "time_to_threshold_ms": c.time_to_threshold_ms}
                           for c in self.candidates],
        }


def cue_seeds(cfg_seed: int, head: str, relation: str, n: int) -> list[list[int]]:
    """Stimulus seeds for a query; independent of the network's training stream."""
    base = [int(cfg_seed), QUERY_STREAM, zlib.crc32(head.encode()), zlib.crc32(relation.encode())]
    return [base + [k] for k in range(n)]


def rank_candidates(trace: TraceLog, labels: Sequence[str], theta: float,
                    t0_ms: float) -> list[Candidate]:
    out = []
    times = np.asarray(trace.times)
    for label in labels:
        s = trace.series(label)
        peak = float(s.max()) if s.size else 0.0
        hit = np.flatnonzero(s >= theta)
        ttt = float(times[hit[0]] - t0_ms) if hit.size else None
        out.append(Candidate(label, peak, ttt))
    # stable: ties keep watch-list order
    return sorted(out, key=lambda c: -c.peak)


def run_cue(net: Network, head: str, relation: str, watch: Sequence[str], mode: str = "off",
            cue_ms: Optional[float] = None, readout_ms: Optional[float] = None,
            seeds: Optional[Sequence] = None, reward: Optional[RewardSchedule] = None,
            stop: Optional[Callable[[TraceLog], bool]] = None
            ) -> tuple[TraceLog, SpikeRaster, float, list]:
    """Rest, stimulate ``head`` and ``relation`` for the cue window, then run the readout.

    Returns the similarity log over ``[head, relation, *watch]``, the raster,
    the cue onset time and the cue's stimulus plans. ``stop`` is checked after
    every step and ends the run early when it returns true. Mutates the live
    network (state and, if ``mode`` is plastic, synapses).
    """
    cfg = net.cfg
    cue_ms = cfg.cue_ms if cue_ms is None else cue_ms
    readout_ms = cfg.readout_ms if readout_ms is None else readout_ms
    labels = list(dict.fromkeys([head, relation, *watch]))
    for label in labels:
        net.registry[label]  # raises on unbound symbols
    net.rest()
    t0 = net.t_ms
    plans = net.stimulate([head, relation], t0, t0 + cue_ms, seeds=seeds)
    log, observe = net.recorder(labels)
    observers = [observe]
    if stop is not None:
        observers.append(lambda step, fired: stop(log))
    raster = net.run(cue_ms + readout_ms, plans, mode, reward, observers=observers)
    return log, raster, t0, plans


def query(net: Network, head: str, relation: str, duration_ms: Optional[float] = None,
          theta: Optional[float] = None, watch: Optional[Sequence[str]] = None,
          keep_raster: bool = True) -> QueryResult:
    """Read-only retrieval of the tails of ``(head, relation, ?)``.

    Plasticity is off and the neuron state is restored afterwards, so weights,
    eligibilities, the clock and the training stimulus stream are untouched.
    ``duration_ms`` overrides the cue window; candidates default to every
    entity engram except the head.
    """
    theta = net.cfg.theta if theta is None else theta
    if watch is None:
        watch = [l for l in net.registry.labels(ENTITY) if l not in (head, relation)]
    else:
        watch = [l for l in watch if l not in (head, relation)]
    saved = net.save_state()
    try:
        log, raster, t0, _ = run_cue(net, head, relation, watch, "off", cue_ms=duration_ms,
                                     seeds=cue_seeds(net.cfg.seed, head, relation, 2))
    finally:
        net.restore_state(saved)
    cands = rank_candidates(log, watch, theta, t0)
    members = {l: net.registry[l].neuron_ids.tolist() for l in log.labels}
    return QueryResult(head, relation, theta, cands, log, raster if keep_raster else None, t0,
                       members)


def verify_triple(net: Network, head: str, relation: str, tail: str,
                  theta: Optional[float] = None) -> tuple[bool, np.ndarray]:
    """Whether ``tail`` reaches the answer threshold under cue ``(head, relation)``.

    Returns the verdict and the tail's smoothed similarity series.
    """
    res = query(net, head, relation, theta=theta, watch=[tail], keep_raster=False)
    if tail in (head, relation):
        series = res.trace.series(tail)
        return bool(series.max() >= res.theta), series
    return tail in res.answers, res.trace.series(tail)


def export_reasoning_trace(result: Optional[QueryResult], path) -> Path:
    """Write the similarity traces backing ``result``.

    ``.json`` gets the ranked candidates, the per-engram series and the spike
    raster restricted to the watched engrams; anything else is written as
    ``time_ms,label,sim`` CSV. ``None`` or an empty trace gives a header-only
    CSV (or an empty JSON document).
    """
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc: dict = {"cue": None, "candidates": [], "trace": {"labels": [], "times_ms": [],
                                                            "sim": []}, "raster": []}
        if result is not None:
            doc.update(result.to_json())
            doc["trace"] = {"labels": result.trace.labels, "times_ms": result.trace.times,
                            "sim": {l: result.trace.series(l).tolist()
                                    for l in result.trace.labels}}
            if result.raster is not None:
                watched = np.unique(np.concatenate(
                    [np.asarray(v, dtype=np.int64) for v in result.members.values()]
                    or [np.zeros(0, dtype=np.int64)]))
                times, ids = result.raster.events()
                keep = np.isin(ids, watched)
                doc["raster"] = [[float(t), int(i)] for t, i in zip(times[keep], ids[keep])]
        path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
        return path
    if result is None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(["time_ms", "label", "sim"])
        return path
    result.trace.to_csv(path)
    return path
