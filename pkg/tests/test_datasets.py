import pytest
from hypothesis import given, settings, strategies as st

from gsnn.datasets import (INDUCTION_TRIPLES, chain_dataset, chain_queries, chain_split,
                           graph_entities, ground_truth, random_untrained, transitive_closure,
                           type_consistent, typed_entities, typed_graph)
from gsnn.kg import Triple


def test_typed_graph_shape():
    g = typed_graph()
    assert len(g) == 200 and len(set(g)) == 200
    assert len({t.relation for t in g}) == 3
    ents = typed_entities()
    assert len(ents) == 100
    assert set(graph_entities(g)) <= set(ents)


def test_typed_graph_respects_domains_and_ranges():
    g = typed_graph(range_size=3)
    for t in g:
        r = int(t.relation[3:])
        assert int(t.head[1:]) % 3 == r
        assert int(t.tail[1:]) // 3 == r


def test_typed_graph_is_seeded():
    assert typed_graph(seed=1) == typed_graph(seed=1)
    assert typed_graph(seed=1) != typed_graph(seed=2)


def test_typed_graph_rejects_oversized_requests():
    with pytest.raises(ValueError):
        typed_graph(n_entities=12, n_relations=3, range_size=3, n_triples=200)


def test_random_untrained_are_new_and_distinct():
    g = typed_graph()
    neg = random_untrained(g, 200, seed=0, entities=typed_entities())
    assert len(set(neg)) == 200
    assert not set(neg) & set(g)
    assert all(t.head != t.tail for t in neg)


def test_type_consistency():
    g = [Triple("a", "r", "X"), Triple("b", "s", "Y")]
    assert type_consistent(Triple("c", "r", "X"), g)
    assert not type_consistent(Triple("c", "r", "Y"), g)


def test_transitive_closure_of_a_chain():
    links = [Triple("a", "r", "b"), Triple("b", "r", "c"), Triple("c", "r", "d")]
    closure = transitive_closure(links, "r")
    assert closure == set(links) | {Triple("a", "r", "c"), Triple("a", "r", "d"),
                                     Triple("b", "r", "d")}


def test_closure_ignores_other_relations_and_cycles():
    links = [Triple("a", "r", "b"), Triple("b", "r", "a"), Triple("b", "s", "c")]
    assert transitive_closure(links, "r") == {Triple("a", "r", "b"), Triple("b", "r", "a")}


def test_chain_dataset_counts():
    triples, meta = chain_dataset(2, 2, 4, 4)
    assert sum(meta.values()) == 2 and len(meta) == 4
    # a transitive 4-chain has 6 closure triples, a plain one 3 links
    assert len(triples) == 2 * 4 * 6 + 2 * 4 * 3


def test_chain_split_masks_only_derivable_triples():
    triples, meta = chain_dataset(2, 2, 2, 4)
    split = chain_split(triples, meta, 0.3, seed=0)
    assert len(split.masked) == round(0.3 * len(triples))
    assert sorted(split.full) == sorted(triples)
    for t in split.masked:
        assert meta[t.relation]
        assert t in transitive_closure(split.train, t.relation)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1, 2, 3]))
def test_chain_queries_are_balanced_and_correctly_labelled(seed, cpr):
    triples, meta = chain_dataset(2, 2, cpr, 4)
    split = chain_split(triples, meta, 0.3, seed=seed)
    qs = chain_queries(split, meta, seed=seed)
    pos = [t for t, y in qs if y]
    neg = [t for t, y in qs if not y]
    assert len(pos) == len(neg) == len(split.masked)
    for t, y in qs:
        assert ground_truth(t, split, meta) is y
    for t in neg:
        assert not meta[t.relation] and t not in set(triples)


def test_negatives_avoid_repeats_when_possible():
    triples, meta = chain_dataset(2, 2, 2, 4)
    split = chain_split(triples, meta, 0.3, seed=0)
    neg = [t for t, y in chain_queries(split, meta, seed=0) if not y]
    n_cands = 2 * 2 * 3  # (0,2), (0,3), (1,3) per plain chain
    assert len(set(neg)) == min(len(neg), n_cands)


def test_too_large_mask_fraction_is_reported():
    triples, meta = chain_dataset(1, 1, 1, 4)
    with pytest.raises(ValueError):
        chain_split(triples, meta, 0.9, seed=0)


def test_induction_set():
    assert len(INDUCTION_TRIPLES) == 6
    assert {t.relation for t in INDUCTION_TRIPLES} == {"IsPresidentOf", "IsA"}
