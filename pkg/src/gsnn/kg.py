"""Triple datasets: TSV parsing, relation metadata, mask splits, symbol binding."""

from __future__ import annotations

import io
import os
import zlib
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence, TextIO

import numpy as np

from .engram import ENTITY, RELATION, EngramRegistry, allocate_engram


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class Triple(NamedTuple):
    head: str
    relation: str
    tail: str

    def __str__(self) -> str:
        return f"{self.head}\t{self.relation}\t{self.tail}"


def _lines(source) -> Iterator[str]:
    """Lines from a path, from TSV text (anything holding a tab/newline or empty), or an iterable."""
    if isinstance(source, str) and (source == "" or "\t" in source or "\n" in source):
        yield from io.StringIO(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def iter_triples(source) -> Iterator[Triple]:
    """Stream triples from a path, a TSV string or an iterable of lines."""
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}", lineno)
        cols = [c.strip() for c in cols]
        if not all(cols):
            raise ParseError("empty field", lineno)
        yield Triple(*cols)


def parse_triples(source, dedupe: bool = False) -> list[Triple]:
    triples = list(iter_triples(source))
    if dedupe:
        triples = list(dict.fromkeys(triples))
    _check_roles(triples)
    return triples


def _check_roles(triples: Sequence[Triple]) -> None:
    relations = {t.relation for t in triples}
    entities = {t.head for t in triples} | {t.tail for t in triples}
    clash = relations & entities
    if clash:
        raise ParseError(f"labels used both as relation and entity: {sorted(clash)}")


def write_triples(triples: Iterable[Triple], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t}\n")


def parse_relation_meta(source) -> dict[str, bool]:
    """``relation<TAB>transitive(0|1)`` lines -> {relation: is_transitive}."""
    meta: dict[str, bool] = {}
    for lineno, raw in enumerate(_lines(source), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = [c.strip() for c in line.split("\t")]
        if len(cols) != 2 or not cols[0]:
            raise ParseError("expected relation<TAB>0|1", lineno)
        if cols[1] not in ("0", "1"):
            raise ParseError(f"transitivity flag must be 0 or 1, got {cols[1]!r}", lineno)
        meta[cols[0]] = cols[1] == "1"
    return meta


def write_relation_meta(meta: dict[str, bool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rel, flag in meta.items():
            fh.write(f"{rel}\t{int(flag)}\n")


@dataclass
class DatasetSplit:
    train: list[Triple]
    masked: list[Triple]
    mask_fraction: float

    @property
    def full(self) -> list[Triple]:
        return self.train + self.masked


def mask_split(triples: Sequence[Triple], fraction: float, seed) -> DatasetSplit:
    """Seeded split that masks ``round(fraction * n_r)`` triples of each relation."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    by_rel: dict[str, list[int]] = defaultdict(list)
    for k, t in enumerate(triples):
        by_rel[t.relation].append(k)
    masked_idx: set[int] = set()
    for rel in sorted(by_rel):
        idx = by_rel[rel]
        n_mask = int(round(fraction * len(idx)))
        if n_mask:
            masked_idx.update(int(i) for i in rng.choice(idx, size=n_mask, replace=False))
    train = [t for k, t in enumerate(triples) if k not in masked_idx]
    masked = [t for k, t in enumerate(triples) if k in masked_idx]
    return DatasetSplit(train, masked, fraction)


def symbol_order(triples: Iterable[Triple]) -> list[tuple[str, str]]:
    """Distinct ``(label, kind)`` pairs in order of first appearance."""
    seen: dict[str, str] = {}
    for t in triples:
        for label, kind in ((t.head, ENTITY), (t.relation, RELATION), (t.tail, ENTITY)):
            if label not in seen:
                seen[label] = kind
    return list(seen.items())


def label_seed(seed: int, label: str) -> list[int]:
    return [int(seed), zlib.crc32(label.encode("utf-8"))]


def bind_symbols(triples: Iterable[Triple], registry: EngramRegistry, seed: int,
                 extra_entities: Iterable[str] = (),
                 isolated_entities: Iterable[str] = ()) -> EngramRegistry:
    """Allocate an engram for every unbound label (idempotent for bound ones).

    ``isolated_entities`` are bound last, from neurons outside every other
    engram, so they share no members with the graph.
    """
    symbols = symbol_order(triples) + [(e, ENTITY) for e in extra_entities]
    isolated = [(e, ENTITY) for e in isolated_entities]
    for n, (label, kind) in enumerate(symbols + isolated):
        if label in registry:
            if registry[label].kind != kind:
                raise ParseError(f"{label!r} is bound as {registry[label].kind}, not {kind}")
            continue
        allocate_engram(registry, label, kind, label_seed(seed, label),
                        exclusive=n >= len(symbols))
    return registry
