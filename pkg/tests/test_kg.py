import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsnn.config import Config
from gsnn.datasets import INDUCTION_TRIPLES
from gsnn.engram import RELATION, EngramRegistry
from gsnn.kg import (ParseError, Triple, bind_symbols, mask_split, parse_relation_meta,
                     parse_triples, write_relation_meta, write_triples)


def test_single_line():
    assert parse_triples("Biden\tIsPresidentOf\tAmerica") == [
        Triple("Biden", "IsPresidentOf", "America")]


def test_empty_file(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    assert parse_triples(p) == []
    assert parse_triples("") == []


def test_comments_and_blank_lines_skipped():
    text = "# header\n\nA\tr\tB\n  # indented comment\nB\tr\tC\n"
    assert parse_triples(text) == [Triple("A", "r", "B"), Triple("B", "r", "C")]


def test_wrong_column_count_reports_line():
    with pytest.raises(ParseError) as err:
        parse_triples("A\tr\tB\n# c\nA\tr\n")
    assert err.value.line == 3


def test_empty_field_rejected():
    with pytest.raises(ParseError) as err:
        parse_triples("A\t\tB\n")
    assert err.value.line == 1


def test_relation_used_as_entity_rejected():
    with pytest.raises(ParseError):
        parse_triples("A\tr\tB\nr\ts\tC\n")


def test_duplicates_preserved_unless_deduped():
    text = "A\tr\tB\nA\tr\tB\n"
    assert len(parse_triples(text)) == 2
    assert len(parse_triples(text, dedupe=True)) == 1


def test_triple_file_round_trip(tmp_path):
    p = tmp_path / "t.tsv"
    write_triples(INDUCTION_TRIPLES, p)
    assert parse_triples(p) == INDUCTION_TRIPLES


def test_relation_meta(tmp_path):
    meta = parse_relation_meta("Bigger\t1\nAntonym\t0\n")
    assert meta == {"Bigger": True, "Antonym": False}
    with pytest.raises(ParseError):
        parse_relation_meta("Bigger\tyes\n")
    p = tmp_path / "m.tsv"
    write_relation_meta(meta, p)
    assert parse_relation_meta(p) == meta


# --------------------------------------------------------------------------
# splits


def synthetic(n, n_rel=4):
    return [Triple(f"h{k}", f"r{k % n_rel}", f"t{k}") for k in range(n)]


def test_zero_fraction_masks_nothing():
    s = mask_split(synthetic(40), 0.0, 1)
    assert s.masked == [] and len(s.train) == 40


def test_hundred_triples_thirty_percent():
    s = mask_split(synthetic(100), 0.3, 1)
    assert abs(len(s.masked) - 30) <= 4  # one per relation stratum


def test_split_is_seeded():
    a = mask_split(synthetic(100), 0.3, 5)
    b = mask_split(synthetic(100), 0.3, 5)
    c = mask_split(synthetic(100), 0.3, 6)
    assert a == b and a.masked != c.masked


def test_fraction_out_of_range():
    with pytest.raises(ValueError):
        mask_split(synthetic(10), 1.0, 0)
    with pytest.raises(ValueError):
        mask_split(synthetic(10), -0.1, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 120), st.integers(1, 6), st.floats(0, 0.95), st.integers(0, 10 ** 6))
def test_split_partitions_the_dataset(n, n_rel, frac, seed):
    triples = synthetic(n, n_rel)
    s = mask_split(triples, frac, seed)
    assert sorted(s.full) == sorted(triples)
    assert not set(s.train) & set(s.masked)
    by_rel = {}
    for t in triples:
        by_rel.setdefault(t.relation, []).append(t)
    for rel, items in by_rel.items():
        got = sum(t.relation == rel for t in s.masked)
        assert abs(got - frac * len(items)) <= 0.5 + 1e-9
    assert abs(len(s.masked) - frac * n) <= n_rel * 0.5 + 1e-9


# --------------------------------------------------------------------------
# binding


def fresh_registry():
    return EngramRegistry.from_config(Config())


def test_induction_inventory_binds_eight_engrams():
    reg = bind_symbols(INDUCTION_TRIPLES, fresh_registry(), 0)
    assert len(reg) == 8
    assert set(reg.labels(RELATION)) == {"IsPresidentOf", "IsA"}


def test_binding_is_idempotent_and_deterministic():
    reg = bind_symbols(INDUCTION_TRIPLES, fresh_registry(), 0)
    ids = {e.label: e.neuron_ids.copy() for e in reg}
    bind_symbols(INDUCTION_TRIPLES, reg, 0)
    assert len(reg) == 8
    other = bind_symbols(INDUCTION_TRIPLES, fresh_registry(), 0)
    for label, members in ids.items():
        assert np.array_equal(reg[label].neuron_ids, members)
        assert np.array_equal(other[label].neuron_ids, members)


def test_binding_does_not_depend_on_order():
    a = bind_symbols(INDUCTION_TRIPLES, fresh_registry(), 0)
    b = bind_symbols(INDUCTION_TRIPLES[::-1], fresh_registry(), 0)
    for e in a:
        assert np.array_equal(b[e.label].neuron_ids, e.neuron_ids)


def test_empty_binding_leaves_registry_alone():
    reg = fresh_registry()
    assert len(bind_symbols([], reg, 0)) == 0


def test_kind_conflict_on_rebind():
    reg = bind_symbols([Triple("A", "r", "B")], fresh_registry(), 0)
    with pytest.raises(ParseError):
        bind_symbols([Triple("r", "s", "C")], reg, 0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ABCDEFG"), st.sampled_from(["p", "q", "s"]),
                          st.sampled_from("ABCDEFG")), max_size=15))
def test_binding_is_total(rows):
    triples = [Triple(*r) for r in rows]
    reg = bind_symbols(triples, fresh_registry(), 0)
    for t in triples:
        for label in t:
            assert reg[label].label == label
