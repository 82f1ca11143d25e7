import csv

import numpy as np
import pytest

from gsnn.config import Config
from gsnn.datasets import INDUCTION_TRIPLES, chain_queries
from gsnn.kg import Triple
from gsnn.network import Network
from gsnn.plasticity import RewardSchedule
from gsnn.protocols import (EncodingProtocol, TransitivityTask, association, emergent_triples,
                            encode_graph, encode_triple, moving_average, run_induction,
                            run_trial, sweep_inhibitory_ratio, train_queries,
                            transitivity_experiment, write_metrics, write_sweep)
from gsnn.snapshot import from_bytes, to_bytes

TRIPLE = Triple("A", "R", "B")
TINY = TransitivityTask(n_transitive=1, n_plain=1, chains_per_relation=1, n_neurons=None,
                        sparsity=None)


@pytest.fixture(scope="module")
def encoded():
    cfg = Config().replace(seed=3)
    net = Network.from_triples(cfg, [TRIPLE], extra_entities=["C"])
    encode_triple(net, *TRIPLE)
    return to_bytes(net)


def fresh(data):
    return from_bytes(data)


def test_encoding_is_directional(encoded):
    net = fresh(encoded)
    ar, rb = net.group_weight("A", "R"), net.group_weight("R", "B")
    ba, ra = net.group_weight("B", "A"), net.group_weight("R", "A")
    assert ar > 0 and rb > 0
    assert min(ar, rb) > max(ba, ra)
    assert ar > net.group_weight("A", "C")


def test_encoding_forms_intra_population_weights(encoded):
    assert fresh(encoded).group_weight("A", "A") > 0


def test_zero_repetitions_leave_network_unchanged():
    net = Network.from_triples(Config().replace(n_neurons=400), [TRIPLE])
    before = to_bytes(net)
    encode_triple(net, *TRIPLE, EncodingProtocol(repetitions=0))
    assert to_bytes(net) == before


def test_encoding_is_deterministic():
    def build():
        net = Network.from_triples(Config().replace(n_neurons=400, seed=9),
                                   [TRIPLE, Triple("B", "R", "C")])
        encode_graph(net, [TRIPLE, Triple("B", "R", "C")])
        return net.synapses.digest()
    assert build() == build()


def test_single_triple_graph_equals_encode_triple():
    cfg = Config().replace(n_neurons=400, seed=2)
    a = Network.from_triples(cfg, [TRIPLE])
    b = Network.from_triples(cfg, [TRIPLE])
    encode_graph(a, [TRIPLE])
    encode_triple(b, *TRIPLE)
    assert to_bytes(a) == to_bytes(b)


def test_encoding_rejects_unbound_symbols():
    net = Network.from_triples(Config().replace(n_neurons=400), [TRIPLE])
    with pytest.raises(KeyError):
        encode_triple(net, "A", "R", "missing")


@pytest.mark.parametrize("kwargs", [dict(window_ms=0), dict(gap_ms=-1), dict(repetitions=-1)])
def test_protocol_validation(kwargs):
    with pytest.raises(ValueError):
        EncodingProtocol(**kwargs)


@pytest.mark.parametrize("truth, reward", [(True, 10.0), (False, -10.0)])
def test_trial_rewards_follow_correctness(encoded, truth, reward):
    net = fresh(encoded)
    out = run_trial(net, TRIPLE, truth)
    assert out.answer is True and out.peak >= net.cfg.theta
    assert out.reward == reward and out.correct is truth


def test_trial_on_untrained_tail_answers_no(encoded):
    out = run_trial(fresh(encoded), Triple("A", "R", "C"), False)
    assert out.answer is False and out.correct and out.reward == 10.0


def test_rewarded_trial_changes_only_weights_of_existing_synapses(encoded):
    net = fresh(encoded)
    n = len(net.synapses)
    digest = net.synapses.digest()
    run_trial(net, TRIPLE, True)
    assert len(net.synapses) == n
    assert net.synapses.digest() != digest


def test_trial_isolation_order_does_not_matter(encoded):
    queries = [(TRIPLE, True), (Triple("A", "R", "C"), False), (Triple("C", "R", "B"), False)]

    def answers(order):
        net = fresh(encoded)
        out = {}
        for i in order:
            o = run_trial(net, *queries[i], schedule=RewardSchedule(0.0, 0.0))
            out[o.triple] = (o.answer, o.peak)
        return out

    assert answers([0, 1, 2]) == answers([2, 1, 0])


def test_reward_neutrality():
    cfg = Config().replace(seed=4, c_r=0.0, c_p=0.0)
    split, meta = TINY.build(cfg.seed)
    net = Network.from_triples(cfg, split.full)
    encode_graph(net, split.train)
    digest = net.synapses.digest()
    _, hist = train_queries(net, chain_queries(split, meta, seed=0), 3)
    accs = [m.accuracy for m in hist]
    assert accs == [accs[0]] * 3
    assert all(m.mean_reward == 0.0 for m in hist)
    assert net.synapses.digest() == digest


def test_zero_epochs():
    cfg = Config().replace(n_neurons=400, seed=1)
    split, _ = TINY.build(cfg.seed)
    ref = Network.from_triples(cfg, split.full)
    encode_graph(ref, split.train)
    net, hist = transitivity_experiment(cfg, 0, TINY)
    assert hist == [] and net.synapses.digest() == ref.synapses.digest()


def test_task_arena():
    cfg = Config().replace(seed=3)
    arena = TransitivityTask().arena(cfg)
    assert (arena.n_neurons, arena.sparsity, arena.seed) == (2000, 0.025, 3)
    assert TINY.arena(cfg) == cfg
    split, meta = TINY.build(0)
    net, _ = transitivity_experiment(cfg, 0, TransitivityTask(
        n_transitive=1, n_plain=1, n_neurons=800, sparsity=0.05), split, meta)
    assert net.cfg.n_neurons == 800


def test_training_is_deterministic():
    cfg = Config().replace(seed=6, eta=0.02)
    a = transitivity_experiment(cfg, 2, TINY)
    b = transitivity_experiment(cfg, 2, TINY)
    assert [m.accuracy for m in a[1]] == [m.accuracy for m in b[1]]
    assert a[0].synapses.digest() == b[0].synapses.digest()


def test_metrics_csv(tmp_path):
    cfg = Config().replace(seed=6, eta=0.02)
    _, hist = transitivity_experiment(cfg, 2, TINY)
    write_metrics(hist, tmp_path / "m.csv")
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["epoch", "accuracy", "mean_reward"]
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    assert float(rows[1][1]) == pytest.approx(hist[0].accuracy, abs=1e-6)


def test_moving_average():
    assert np.allclose(moving_average([0, 3, 6, 9]), [3, 6])
    assert moving_average([1, 2]).size == 0


def test_sweep_single_ratio_reproduces_a_run(tmp_path):
    cfg = Config().replace(seed=5, eta=0.02)
    rows = sweep_inhibitory_ratio(cfg, [0.15], 1, TINY)
    _, hist = transitivity_experiment(cfg.replace(inhibitory_fraction=0.15), 1, TINY)
    assert rows == [(0.15, hist[-1].accuracy)]
    write_sweep(rows, tmp_path / "s.csv")
    assert open(tmp_path / "s.csv").read().splitlines()[1].startswith("0.15,")


def test_sweep_rows_and_validation():
    cfg = Config().replace(n_neurons=400, seed=5)
    rows = sweep_inhibitory_ratio(cfg, [0.0, 0.3], 0, TINY)
    assert [r for r, _ in rows] == [0.0, 0.3]
    with pytest.raises(ValueError):
        sweep_inhibitory_ratio(cfg, [1.0], 0, TINY)


# --------------------------------------------------------------------------
# induction


def test_association_takes_either_direction():
    er = np.array([[0.1, np.nan]])
    re = np.array([[0.7], [0.2]])
    assert np.allclose(association(er, re), [[0.7, 0.2]])


def test_emergent_scan_against_hand_built_weights():
    ents, rels = ["h", "t", "x"], ["r"]
    er0 = np.zeros((3, 1))
    re0 = np.zeros((1, 3))
    er1, re1 = er0.copy(), re0.copy()
    er1[0, 0] = 0.9   # h -> r formed
    re1[0, 1] = 0.8   # r -> t formed
    re1[0, 2] = 0.4   # below threshold
    found = emergent_triples(ents, rels, er0, er1, re0, re1, 0.5)
    assert found == [Triple("h", "r", "t")]
    assert emergent_triples(ents, rels, er0, er1, re0, re1, 0.5,
                            known=[Triple("h", "r", "t")]) == []
    # nothing crossed: already-known structure is not reported
    assert emergent_triples(ents, rels, er1, er1, re1, re1, 0.5) == []


@pytest.fixture(scope="module")
def induction_net():
    cfg = Config().replace(seed=0)
    net = Network.from_triples(cfg, INDUCTION_TRIPLES, isolated_entities=["Ctl1", "Ctl2"])
    encode_graph(net, INDUCTION_TRIPLES)
    return to_bytes(net)


def test_isolated_entities_share_no_neurons(induction_net):
    net = fresh(induction_net)
    for label in ("Ctl1", "Ctl2"):
        assert np.array_equal(net.private_members(label), net.registry[label].neuron_ids)


def test_induction_reports_the_abstract_triple(induction_net):
    want = Triple("Person", "IsPresidentOf", "Country")
    _, report = run_induction(fresh(induction_net), ["Biden", "Putin"], 500.0,
                              INDUCTION_TRIPLES, verify=tuple(want))
    assert want in report.emergent
    assert not set(report.emergent) & set(INDUCTION_TRIPLES)
    assert report.verification[3] and report.verification[4] >= 0.5


def test_induction_control_is_empty(induction_net, tmp_path):
    _, report = run_induction(fresh(induction_net), ["Ctl1", "Ctl2"], 500.0, INDUCTION_TRIPLES)
    assert report.emergent == []
    report.write_tsv(tmp_path / "e.tsv")
    assert len(open(tmp_path / "e.tsv").read().splitlines()) == 1


def test_zero_duration_induction_changes_nothing(induction_net):
    net = fresh(induction_net)
    before = to_bytes(net)
    _, report = run_induction(net, ["Biden", "Putin"], 0.0, INDUCTION_TRIPLES)
    assert report.emergent == [] and to_bytes(net) == before


def test_induction_rejects_unbound_labels(induction_net):
    with pytest.raises(KeyError):
        run_induction(fresh(induction_net), ["Biden", "Obama"], 10.0)
