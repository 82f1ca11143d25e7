"""Seeded synthetic knowledge graphs for the desk-scale experiments."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .kg import DatasetSplit, Triple

INDUCTION_TRIPLES = [
    Triple("Biden", "IsPresidentOf", "America"),
    Triple("Putin", "IsPresidentOf", "Russia"),
    Triple("Biden", "IsA", "Person"),
    Triple("Putin", "IsA", "Person"),
    Triple("America", "IsA", "Country"),
    Triple("Russia", "IsA", "Country"),
]


def typed_graph(n_entities: int = 100, n_relations: int = 3, n_triples: int = 200,
                range_size: int = 3, seed=0) -> list[Triple]:
    """Random typed graph in which every relation has its own domain and range.

    The ``n_relations * range_size`` entities ``c*`` are classes (tails only),
    the remaining entities ``e*`` are instances (heads only). Instances are
    split round-robin into one domain per relation and classes into disjoint
    ranges of ``range_size``; triples are distinct draws from
    ``domain(r) x {r} x range(r)``.
    """
    n_classes = n_relations * range_size
    n_inst = n_entities - n_classes
    if n_inst < n_relations:
        raise ValueError("not enough entities for the requested class sets")
    inst = [f"e{k:03d}" for k in range(n_inst)]
    rels = [f"rel{k}" for k in range(n_relations)]
    classes = [f"c{k:03d}" for k in range(n_classes)]
    space = [Triple(inst[h], rels[r], classes[r * range_size + c])
             for h in range(n_inst) for r in [h % n_relations] for c in range(range_size)]
    if n_triples > len(space):
        raise ValueError("more triples requested than the typed space holds")
    rng = np.random.default_rng(seed)
    return [space[int(i)] for i in rng.choice(len(space), size=n_triples, replace=False)]


def typed_entities(n_entities: int = 100, n_relations: int = 3, range_size: int = 3
                   ) -> list[str]:
    """Every entity label of :func:`typed_graph`, including ones no triple uses."""
    n_classes = n_relations * range_size
    return [f"e{k:03d}" for k in range(n_entities - n_classes)] + \
        [f"c{k:03d}" for k in range(n_classes)]


def type_consistent(triple: Triple, triples: Sequence[Triple]) -> bool:
    """Whether the tail already occurs as a tail of the triple's relation."""
    return any(t.relation == triple.relation and t.tail == triple.tail for t in triples)


def graph_entities(triples: Iterable[Triple]) -> list[str]:
    return list(dict.fromkeys(x for t in triples for x in (t.head, t.tail)))


def graph_relations(triples: Iterable[Triple]) -> list[str]:
    return list(dict.fromkeys(t.relation for t in triples))


def random_untrained(triples: Sequence[Triple], n: int, seed=0,
                     entities: Sequence[str] | None = None,
                     relations: Sequence[str] | None = None) -> list[Triple]:
    """``n`` distinct uniformly random ``(h, r, t)``, ``h != t``, absent from ``triples``."""
    entities = list(entities or graph_entities(triples))
    relations = list(relations or graph_relations(triples))
    known = set(triples)
    rng = np.random.default_rng(seed)
    out: dict[Triple, None] = {}
    space = len(entities) * (len(entities) - 1) * len(relations) - len(known)
    if n > space:
        raise ValueError("not enough untrained triples")
    while len(out) < n:
        h, t = rng.choice(len(entities), size=2, replace=False)
        r = rng.integers(len(relations))
        tr = Triple(entities[h], relations[r], entities[t])
        if tr not in known:
            out[tr] = None
    return list(out)


def transitive_closure(triples: Iterable[Triple], relation: str) -> set[Triple]:
    succ: dict[str, set[str]] = defaultdict(set)
    for t in triples:
        if t.relation == relation:
            succ[t.head].add(t.tail)
    closure = set()
    for a in list(succ):
        stack, seen = list(succ[a]), set()
        while stack:
            b = stack.pop()
            if b in seen:
                continue
            seen.add(b)
            stack.extend(succ.get(b, ()))
        closure.update(Triple(a, relation, b) for b in seen if b != a)
    return closure


def chain_dataset(n_transitive: int = 2, n_plain: int = 2, chains_per_relation: int = 4,
                  chain_length: int = 4) -> tuple[list[Triple], dict[str, bool]]:
    """Disjoint entity chains per relation.

    A transitive relation contributes its chains' full closure; a
    non-transitive one only the consecutive links. Returns triples and the
    ``relation -> is_transitive`` map.
    """
    if chain_length < 3:
        raise ValueError("chains need at least three entities")
    meta = {f"trans{k}": True for k in range(n_transitive)}
    meta.update({f"plain{k}": False for k in range(n_plain)})
    triples: list[Triple] = []
    for rel, transitive in meta.items():
        for c in range(chains_per_relation):
            ents = [f"{rel}_c{c}_{k}" for k in range(chain_length)]
            links = [Triple(ents[k], rel, ents[k + 1]) for k in range(chain_length - 1)]
            if transitive:
                closure = transitive_closure(links, rel)
                links += sorted(closure - set(links))
            triples += links
    return triples, meta


def chain_split(triples: Sequence[Triple], meta: dict[str, bool], fraction: float = 0.3,
                seed=0) -> DatasetSplit:
    """Mask ``round(fraction * len(triples))`` transitively derivable triples.

    Only multi-hop closure triples of transitive relations are eligible, so
    every masked triple is a chain completion of the remaining training set.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    tset = list(triples)
    direct = _direct_links(tset, meta)
    eligible = [k for k, t in enumerate(tset) if meta.get(t.relation) and t not in direct]
    n_mask = int(round(fraction * len(tset)))
    if n_mask > len(eligible):
        raise ValueError(f"only {len(eligible)} derivable triples; cannot mask {n_mask}")
    rng = np.random.default_rng(seed)
    chosen = set(int(i) for i in rng.choice(eligible, size=n_mask, replace=False))
    return DatasetSplit([t for k, t in enumerate(tset) if k not in chosen],
                        [t for k, t in enumerate(tset) if k in chosen], fraction)


def _direct_links(triples: Sequence[Triple], meta: dict[str, bool]) -> set[Triple]:
    """Triples not implied by the others through a transitive relation."""
    out = set()
    for t in triples:
        if not meta.get(t.relation):
            out.add(t)
            continue
        others = [u for u in triples if u.relation == t.relation and u != t]
        if t not in transitive_closure(others, t.relation):
            out.add(t)
    return out


def chain_queries(split: DatasetSplit, meta: dict[str, bool], seed=0
                  ) -> list[tuple[Triple, bool]]:
    """Masked positives plus one chain-derived non-transitive negative per positive.

    A negative ``(a, r, c)`` has ``a r b`` and ``b r c`` in the training set for a
    non-transitive ``r`` and is absent from the full dataset. Negatives are drawn
    without replacement (recycled only once every candidate has been used).
    """
    for t in split.masked:
        if t.relation not in meta:
            raise ValueError(f"relation {t.relation!r} missing from the metadata")
    full = set(split.full)
    cands = sorted({neg for rel, trans in meta.items() if not trans
                    for neg in transitive_closure(split.train, rel)} - full)
    positives = [(t, True) for t in split.masked]
    if not positives:
        return []
    if not cands:
        raise ValueError("no non-transitive chains to derive negatives from")
    rng = np.random.default_rng(seed)
    negs: list[Triple] = []
    while len(negs) < len(positives):
        perm = rng.permutation(len(cands))
        negs += [cands[i] for i in perm[:len(positives) - len(negs)]]
    return positives + [(t, False) for t in negs]


def ground_truth(triple: Triple, split: DatasetSplit, meta: dict[str, bool]) -> bool:
    """True if ``triple`` is a fact or follows from training facts of a transitive relation."""
    if triple in set(split.full):
        return True
    if meta.get(triple.relation):
        return triple in transitive_closure(split.train, triple.relation)
    return False
