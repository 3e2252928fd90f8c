"""Synthesis route trees: interchange, hashing, accuracy metrics, statistics,
edit distance, and per-target clustering.

A route is a molecule tree: each molecule either terminates as a building
block or carries exactly one reaction whose reactant molecules are its
children. Reaction priors and ranks ride along as metadata and never enter
route identity; the hash sorts child hashes, so sibling order is irrelevant.
The tree edit distance is the exact Zhang-Shasha distance over rational
costs (delete/insert 1, substitute 1 - tanimoto), computed on the
molecule-only tree with children ordered by canonical key.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .fingerprint import Clustering, Fingerprint, butina_cluster, morgan_fingerprint
from .molgraph import ParseError, canonicalize, parse_smiles


class RouteError(ValueError):
    """Route document violates the schema or a structural invariant."""


@dataclass(frozen=True)
class RouteRxn:
    children: tuple["RouteMol", ...]
    prior: float | None = None
    rank: int | None = None


@dataclass(frozen=True)
class RouteMol:
    molecule: str
    in_stock: bool
    reaction: RouteRxn | None = None


@dataclass(frozen=True)
class Route:
    root: RouteMol
    partial: bool = False


@dataclass(frozen=True)
class RouteStats:
    max_depth: int
    n_building_blocks: int
    reactants_per_reaction: tuple[int, ...]


# ---------------------------------------------------------------------------
# Interchange format: one mol node with zero or one reaction child, reaction
# nodes with metadata {prior, rank} and a non-empty reactant list.


def parse_route(doc: dict, partial: bool = False) -> Route:
    """Validate and canonicalize a route document."""
    return Route(root=_parse_mol(doc, frozenset(), partial), partial=partial)


def _parse_mol(doc, ancestors: frozenset[str], partial: bool) -> RouteMol:
    if not isinstance(doc, dict) or doc.get("type") != "mol":
        raise RouteError(f"expected a mol node, got {str(doc)[:120]!r}")
    smiles = doc.get("smiles")
    if not isinstance(smiles, str):
        raise RouteError("mol node without a smiles string")
    try:
        key = canonicalize(smiles)
    except ParseError as err:
        raise RouteError(f"unparsable smiles {smiles!r}: {err}") from err
    if key in ancestors:
        raise RouteError(f"molecule {key!r} repeats along a root-to-leaf path")
    in_stock = doc.get("in_stock")
    if not isinstance(in_stock, bool):
        raise RouteError(f"mol {key!r} without a boolean in_stock")
    children = doc.get("children", [])
    if not isinstance(children, list):
        raise RouteError(f"mol {key!r} children must be a list")
    if not children:
        if not in_stock and not partial:
            raise RouteError(f"leaf {key!r} is not in stock in a complete route")
        return RouteMol(molecule=key, in_stock=in_stock)
    if len(children) > 1:
        raise RouteError(f"mol {key!r} has {len(children)} reactions; at most one reaction per molecule")
    rdoc = children[0]
    if not isinstance(rdoc, dict) or rdoc.get("type") != "reaction":
        raise RouteError(f"child of mol {key!r} is not a reaction node")
    meta = rdoc.get("metadata") or {}
    if not isinstance(meta, dict):
        raise RouteError(f"reaction metadata under {key!r} is not an object")
    prior = meta.get("prior")
    if prior is not None:
        if isinstance(prior, bool) or not isinstance(prior, (int, float)) or not 0.0 < prior <= 1.0:
            raise RouteError(f"reaction prior {prior!r} outside (0, 1]")
        prior = float(prior)
    rank = meta.get("rank")
    if rank is not None and (isinstance(rank, bool) or not isinstance(rank, int) or rank < 1):
        raise RouteError(f"reaction rank {rank!r} is not a positive integer")
    reactants = rdoc.get("children")
    if not isinstance(reactants, list) or not reactants:
        raise RouteError(f"reaction under {key!r} has no reactant children")
    kids = tuple(_parse_mol(r, ancestors | {key}, partial) for r in reactants)
    return RouteMol(molecule=key, in_stock=in_stock, reaction=RouteRxn(children=kids, prior=prior, rank=rank))


def route_to_dict(route: Route) -> dict:
    return _mol_to_dict(route.root)


def _mol_to_dict(mol: RouteMol) -> dict:
    doc = {"type": "mol", "smiles": mol.molecule, "in_stock": mol.in_stock, "children": []}
    if mol.reaction is not None:
        meta = {}
        if mol.reaction.prior is not None:
            meta["prior"] = mol.reaction.prior
        if mol.reaction.rank is not None:
            meta["rank"] = mol.reaction.rank
        doc["children"] = [
            {
                "type": "reaction",
                "metadata": meta,
                "children": [_mol_to_dict(c) for c in mol.reaction.children],
            }
        ]
    return doc


def load_routes(path, partial: bool = False) -> list[Route]:
    """Read a JSON array of route documents."""
    with open(path, encoding="utf-8") as handle:
        docs = json.load(handle)
    if not isinstance(docs, list):
        raise RouteError(f"{path} is not a JSON array of routes")
    return [parse_route(doc, partial=partial) for doc in docs]


def save_routes(path, routes: Iterable[Route]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump([route_to_dict(r) for r in routes], handle, indent=2)
        handle.write("\n")


# ---------------------------------------------------------------------------
# Identity and leaf sets


def route_hash(route: Route) -> str:
    """Structural identity: molecule keys and tree shape, nothing else."""
    return _mol_hash(route.root)


def _mol_hash(mol: RouteMol) -> str:
    h = hashlib.sha256()
    if mol.reaction is None:
        h.update(b"leaf\x00")
        h.update(mol.molecule.encode("utf-8"))
    else:
        h.update(b"mol\x00")
        h.update(mol.molecule.encode("utf-8"))
        for child in sorted(_mol_hash(c) for c in mol.reaction.children):
            h.update(b"\x00")
            h.update(child.encode("ascii"))
    return h.hexdigest()


def route_leaves(route: Route) -> frozenset[str]:
    """Distinct building-block keys of the route."""
    out: set[str] = set()
    stack = [route.root]
    while stack:
        mol = stack.pop()
        if mol.reaction is None:
            out.add(mol.molecule)
        else:
            stack.extend(mol.reaction.children)
    return frozenset(out)


# ---------------------------------------------------------------------------
# Gold-standard accuracy


def route_accuracy(
    predicted: Mapping[str, Sequence[Route]],
    gold: Mapping[str, Route],
    ns: Sequence[int],
) -> dict[int, float]:
    """Percentage of targets whose gold route appears among the top-n predictions."""
    ranks = {}
    for target, gold_route in gold.items():
        want = route_hash(gold_route)
        got = [route_hash(r) for r in predicted.get(target, ())]
        ranks[target] = got.index(want) + 1 if want in got else None
    return _rank_accuracy(ranks, ns)


def building_block_accuracy(
    predicted: Mapping[str, Sequence[Route]],
    gold: Mapping[str, Route],
    ns: Sequence[int],
) -> dict[int, float]:
    """Percentage of targets where some top-n prediction uses exactly the gold
    building-block set, ignoring reactions and intermediates."""
    ranks = {}
    for target, gold_route in gold.items():
        want = route_leaves(gold_route)
        rank = None
        for pos, predicted_route in enumerate(predicted.get(target, ())):
            if route_leaves(predicted_route) == want:
                rank = pos + 1
                break
        ranks[target] = rank
    return _rank_accuracy(ranks, ns)


def _rank_accuracy(ranks: dict[str, int | None], ns: Sequence[int]) -> dict[int, float]:
    if not ranks:
        return {n: 0.0 for n in ns}
    hits = sorted(r for r in ranks.values() if r is not None)
    return {n: 100.0 * sum(1 for r in hits if r <= n) / len(ranks) for n in ns}


# ---------------------------------------------------------------------------
# Statistics


def route_stats(route: Route) -> RouteStats:
    leaf_depths: list[int] = []
    shapes: list[int] = []
    leaves: set[str] = set()

    def walk(mol: RouteMol, depth: int) -> None:
        if mol.reaction is None:
            leaf_depths.append(depth)
            leaves.add(mol.molecule)
        else:
            shapes.append(len(mol.reaction.children))
            for child in mol.reaction.children:
                walk(child, depth + 1)

    walk(route.root, 0)
    return RouteStats(
        max_depth=max(leaf_depths),
        n_building_blocks=len(leaves),
        reactants_per_reaction=tuple(shapes),
    )


# ---------------------------------------------------------------------------
# Tree edit distance (Zhang-Shasha) over the molecule-only tree. Costs are
# exact rationals: tanimoto is a ratio of popcounts, so the whole DP stays in
# Fraction and two edit scripts of equal cost compare equal regardless of
# summation order. Converted to float only at the API boundary.

_ONE = Fraction(1)
_fp_cache: dict[str, Fingerprint] = {}


def _fp(key: str) -> Fingerprint:
    fp = _fp_cache.get(key)
    if fp is None:
        fp = _fp_cache.setdefault(key, morgan_fingerprint(parse_smiles(key)))
    return fp


def _subst_cost(a: str, b: str) -> Fraction:
    if a == b:
        return Fraction(0)
    fa, fb = _fp(a), _fp(b)
    union = (fa.bits | fb.bits).bit_count()
    if union == 0:
        return Fraction(0)
    return Fraction(union - (fa.bits & fb.bits).bit_count(), union)


def _flatten(mol: RouteMol) -> tuple[list[str], list[int]]:
    """Postorder molecule labels and leftmost-leaf indices, children by key."""
    labels: list[str] = []
    lml: list[int] = []

    def walk(m: RouteMol) -> int:
        children = () if m.reaction is None else m.reaction.children
        left = None
        for child in sorted(children, key=lambda c: c.molecule):
            index = walk(child)
            if left is None:
                left = lml[index]
        labels.append(m.molecule)
        lml.append(len(labels) - 1 if left is None else left)
        return len(labels) - 1

    walk(mol)
    return labels, lml


def _keyroots(lml: list[int]) -> list[int]:
    seen: set[int] = set()
    roots: list[int] = []
    for i in range(len(lml) - 1, -1, -1):
        if lml[i] not in seen:
            seen.add(lml[i])
            roots.append(i)
    return roots[::-1]


def route_ted(a: Route, b: Route) -> tuple[float, float]:
    """Exact tree edit distance, raw and normalized by total node count."""
    la, lla = _flatten(a.root)
    lb, llb = _flatten(b.root)
    m, n = len(la), len(lb)
    dist = [[Fraction(0)] * n for _ in range(m)]
    for i in _keyroots(lla):
        ioff = lla[i]
        for j in _keyroots(llb):
            joff = llb[j]
            rows, cols = i - ioff + 2, j - joff + 2
            fd = [[Fraction(0)] * cols for _ in range(rows)]
            for x in range(1, rows):
                fd[x][0] = fd[x - 1][0] + _ONE
            for y in range(1, cols):
                fd[0][y] = fd[0][y - 1] + _ONE
            for x in range(1, rows):
                for y in range(1, cols):
                    xi, yj = ioff + x - 1, joff + y - 1
                    if lla[xi] == ioff and llb[yj] == joff:
                        fd[x][y] = min(
                            fd[x - 1][y] + _ONE,
                            fd[x][y - 1] + _ONE,
                            fd[x - 1][y - 1] + _subst_cost(la[xi], lb[yj]),
                        )
                        dist[xi][yj] = fd[x][y]
                    else:
                        fd[x][y] = min(
                            fd[x - 1][y] + _ONE,
                            fd[x][y - 1] + _ONE,
                            fd[lla[xi] - ioff][llb[yj] - joff] + dist[xi][yj],
                        )
    raw = dist[m - 1][n - 1]
    return float(raw), float(raw / (m + n))


# ---------------------------------------------------------------------------
# Clustering routes of one target; members carry model labels externally.


def cluster_routes(routes: Sequence[Route], cutoff: float = 0.5) -> Clustering:
    """Sphere-exclusion clustering on normalized edit distance."""
    n = len(routes)
    dist = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            dist[i][j] = dist[j][i] = route_ted(routes[i], routes[j])[1]
    return butina_cluster(n, lambda i, j: dist[i][j], cutoff)


def cluster_label_sets(clustering: Clustering, labels: Sequence[str]) -> list[frozenset[str]]:
    return [frozenset(labels[m] for m in cluster.members) for cluster in clustering.clusters]


def cluster_overlap_counts(label_sets: Iterable[Iterable[str]]) -> dict[tuple[str, ...], int]:
    """Exact-combination census over clusters from many targets: every
    non-empty subset of the observed labels, mapped to the number of clusters
    whose label set is exactly that subset."""
    sets = [frozenset(s) for s in label_sets]
    universe = sorted(set().union(*sets)) if sets else []
    counts = Counter(tuple(sorted(s)) for s in sets)
    out: dict[tuple[str, ...], int] = {}
    for size in range(1, len(universe) + 1):
        for combo in itertools.combinations(universe, size):
            out[combo] = counts.get(combo, 0)
    return out
