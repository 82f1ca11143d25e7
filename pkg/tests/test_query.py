import json

import numpy as np
import pytest

from gsnn.config import Config
from gsnn.kg import Triple
from gsnn.network import Network
from gsnn.protocols import EncodingProtocol, encode_triple
from gsnn.query import export_reasoning_trace, query, rank_candidates, verify_triple
from gsnn.engram import TraceLog

TRIPLE = Triple("A", "R", "B")


@pytest.fixture(scope="module")
def net():
    cfg = Config().replace(seed=1)
    n = Network.from_triples(cfg, [TRIPLE], extra_entities=["C", "D"])
    encode_triple(n, *TRIPLE, EncodingProtocol.from_config(cfg))
    return n


def test_query_retrieves_the_tail(net):
    res = query(net, "A", "R")
    assert res.top.label == "B"
    assert res.answers == ["B"]
    assert res.candidate("C").peak < net.cfg.theta_neg
    assert res.candidate("B").time_to_threshold_ms is not None


def test_query_is_side_effect_free(net):
    digest, step, counter = net.synapses.digest(), net.state.step, net.stim_counter
    v = net.state.v.copy()
    a = query(net, "A", "R")
    assert net.synapses.digest() == digest
    assert net.state.step == step and net.stim_counter == counter
    assert np.array_equal(net.state.v, v)
    b = query(net, "A", "R")
    assert [c.peak for c in a.candidates] == [c.peak for c in b.candidates]


def test_ranking_and_answer_set(net):
    res = query(net, "A", "R")
    peaks = [c.peak for c in res.candidates]
    assert peaks == sorted(peaks, reverse=True)
    labels = {c.label for c in res.candidates}
    assert set(res.answers) <= labels
    assert "A" not in labels and "R" not in labels


def test_cue_engrams_self_activate(net):
    res = query(net, "A", "R", watch=["B"])
    assert res.trace.peak("A") >= 0.8
    assert res.trace.peak("R") >= 0.8


def test_verify_trained_and_untrained(net):
    ok, series = verify_triple(net, "A", "R", "B")
    assert ok and series.max() >= net.cfg.theta
    bad, series = verify_triple(net, "A", "R", "D")
    assert not bad and series.max() < net.cfg.theta_neg


def test_unknown_symbol_raises(net):
    with pytest.raises(KeyError):
        query(net, "A", "nope")


def test_rank_candidates_ties_keep_order():
    log = TraceLog(["x", "y"])
    for t in range(3):
        log.append(float(t), np.array([0.1, 0.1]))
    ranked = rank_candidates(log, ["x", "y"], 0.5, 0.0)
    assert [c.label for c in ranked] == ["x", "y"]
    assert all(c.time_to_threshold_ms is None for c in ranked)


def test_trace_export_csv_has_four_columns(tmp_path, net):
    res = query(net, "A", "R", watch=["B", "C"])
    path = export_reasoning_trace(res, tmp_path / "trace.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "time_ms,label,sim"
    labels = {ln.split(",")[1] for ln in lines[1:]}
    assert labels == {"A", "R", "B", "C"}
    assert len(lines) - 1 == 4 * len(res.trace)


def test_trace_export_json(tmp_path, net):
    res = query(net, "A", "R", watch=["B", "C"])
    doc = json.loads(export_reasoning_trace(res, tmp_path / "trace.json").read_text())
    assert doc["cue"] == ["A", "R"]
    assert set(doc["trace"]["sim"]) == {"A", "R", "B", "C"}
    members = set()
    for lab in ("A", "R", "B", "C"):
        members |= set(net.registry[lab].neuron_ids.tolist())
    assert doc["raster"] and all(i in members for _, i in doc["raster"])


def test_empty_trace_export(tmp_path):
    path = export_reasoning_trace(None, tmp_path / "empty.csv")
    assert path.read_text().strip() == "time_ms,label,sim"
