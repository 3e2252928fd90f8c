"""Purchasable building-block sets with exact canonical-key membership.

Loading canonicalizes every line, so any spelling of a stocked molecule
matches. A raw-line memo collapses repeated spellings without re-running the
canonicalizer; membership itself is a plain set lookup. The synthetic
generator emits small building-block-like molecules for benchmarks where no
real catalog is available.
"""

from __future__ import annotations

import gzip
import random
from dataclasses import dataclass
from typing import Iterable, Iterator

from .molgraph import ParseError, canonicalize

# fraction of unparsable lines above which the file is assumed to be wrong
_MAX_UNPARSABLE = 0.5


@dataclass(frozen=True)
class Stock:
    keys: frozenset[str]
    source: str
    n_lines: int = 0
    n_unparsable: int = 0

    @property
    def size(self) -> int:
        return len(self.keys)

    def contains(self, key: str) -> bool:
        return key in self.keys

    def __contains__(self, key: str) -> bool:
        return key in self.keys

    @classmethod
    def from_keys(cls, keys: Iterable[str], source: str = "memory") -> "Stock":
        keys = frozenset(keys)
        return cls(keys=keys, source=source, n_lines=len(keys))


def load_stock(path: str, limit: int | None = None) -> Stock:
    """Read one SMILES per line (gzip by extension); unparsable lines are
    counted, not fatal, unless they are the majority of the file."""
    opener = gzip.open if str(path).endswith(".gz") else open
    keys: set[str] = set()
    memo: dict[str, str | None] = {}
    n_lines = 0
    n_unparsable = 0
    with opener(path, "rt", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            if limit is not None and n_lines >= limit:
                break
            n_lines += 1
            if line in memo:
                key = memo[line]
            else:
                try:
                    key = canonicalize(line)
                except ParseError:
                    key = None
                memo[line] = key
            if key is None:
                n_unparsable += 1
            else:
                keys.add(key)
    if n_lines and n_unparsable > _MAX_UNPARSABLE * n_lines:
        raise ValueError(
            f"{n_unparsable} of {n_lines} lines failed to parse; "
            f"{path} does not look like a SMILES stock file"
        )
    return Stock(
        keys=frozenset(keys), source=str(path), n_lines=n_lines, n_unparsable=n_unparsable
    )


# ---------------------------------------------------------------------------
# Synthetic corpus

_CHAIN_ELEMENTS = ("C", "C", "C", "C", "C", "C", "N", "O", "S")
_LEAF_ELEMENTS = ("C", "C", "C", "C", "N", "N", "O", "O", "O", "F", "Cl", "Br")
_AROMATIC_HETERO = ("n", "o", "s")
_SIZE_RANGE = range(3, 13)
_SIZE_WEIGHTS = (14, 14, 13, 12, 11, 10, 8, 6, 5, 4)
_BOND_TOKEN = {1: "", 2: "=", 3: "#"}


def _random_molecule(rng: random.Random) -> str:
    """One random small molecule as a non-canonical SMILES string."""
    k = rng.choices(_SIZE_RANGE, weights=_SIZE_WEIGHTS)[0]
    parent = [-1] * k
    children: list[list[int]] = [[] for _ in range(k)]
    for i in range(1, k):
        # biased to recent atoms: mostly chains with short branches
        parent[i] = rng.randrange(max(0, i - 3), i)
        children[parent[i]].append(i)

    ring: list[int] = []
    aromatic = [False] * k
    if k >= 5 and rng.random() < 0.32:
        # close the backbone prefix into a ring; prefix atoms form a path
        # only when each parent is the previous atom, so force that shape
        size = min(rng.choice((5, 5, 6, 6, 6, 6, 7)), k)
        ring = list(range(size))
        for i in range(1, size):
            children[parent[i]].remove(i)
            parent[i] = i - 1
            children[i - 1].append(i)
        if size in (5, 6) and rng.random() < 0.45:
            for i in ring:
                aromatic[i] = True

    degree = [len(children[i]) + (1 if parent[i] >= 0 else 0) for i in range(k)]
    if ring:
        degree[ring[0]] += 1
        degree[ring[-1]] += 1

    elements = []
    for i in range(k):
        if aromatic[i]:
            el = _AROMATIC_HETERO[rng.randrange(3)] if rng.random() < 0.12 else "c"
        elif degree[i] == 1:
            el = rng.choice(_LEAF_ELEMENTS)
        else:
            el = rng.choice(_CHAIN_ELEMENTS)
        elements.append(el)

    order = [1] * k  # bond order to parent
    for i in range(1, k):
        p = parent[i]
        if aromatic[i] or aromatic[p]:
            continue
        if degree[i] <= 2 and degree[p] <= 3 and elements[i] != elements[p] or degree[i] == 1:
            roll = rng.random()
            if roll < 0.10 and elements[i] in "NO":
                order[i] = 2
            elif roll < 0.12 and elements[i] == "N" and degree[i] == 1:
                order[i] = 3

    out: list[str] = []

    def emit(i: int) -> None:
        out.append(elements[i])
        if ring and i == ring[0]:
            out.append("1")
        if ring and i == ring[-1]:
            out.append("1")
        kids = children[i]
        for pos, child in enumerate(kids):
            tail = pos == len(kids) - 1
            if not tail:
                out.append("(")
            out.append(_BOND_TOKEN[order[child]])
            emit(child)
            if not tail:
                out.append(")")

    emit(0)
    return "".join(out)


def synthetic_stock(n: int, seed: int = 0) -> Iterator[str]:
    """Deterministic stream of n building-block-like SMILES lines."""
    rng = random.Random(seed)
    for _ in range(n):
        yield _random_molecule(rng)


def write_synthetic_stock(path: str, n: int, seed: int = 0) -> None:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8") as handle:
        for line in synthetic_stock(n, seed):
            handle.write(line + "\n")
