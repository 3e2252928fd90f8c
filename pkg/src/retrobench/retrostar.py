"""Best-first AND/OR search over single-step retrosynthesis predictions.

The tree alternates molecule (OR) and reaction (AND) nodes. Reaction cost is
-ln(prior) with the prior clamped away from zero; unexpanded molecules are
estimated at zero cost, so a frontier molecule's priority is the cost of the
cheapest partial solution tree of the root that contains it. Each iteration
expands exactly one frontier molecule with one predictor call. The search
runs to its limits instead of stopping at the first solution, then
enumerates solved trees cheapest-first into ranked routes. Identical
molecules in different branches are distinct nodes: the cycle guard only
excludes molecules on the path back to the root.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, fields
from heapq import heapify, heappop, heappush
from itertools import count
from typing import Callable, Iterator

from .molgraph import canonicalize
from .predictor import TransportError
from .routes import Route, RouteMol, RouteRxn, route_hash, route_leaves

FRONTIER = "frontier"
EXPANDED = "expanded"
STOCK_LEAF = "stock-leaf"
DEAD = "dead"

_INF = math.inf


@dataclass(frozen=True)
class SearchConfig:
    iteration_limit: int = 200
    time_limit_s: float = 28800.0
    top_k: int = 50
    max_depth: int = 7
    epsilon: float = 1e-10  # prior clamp floor before the log
    route_cap: int = 5000

    def __post_init__(self):
        for name in ("iteration_limit", "top_k", "max_depth", "route_cap"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")
        bad_time = isinstance(self.time_limit_s, bool) or not isinstance(
            self.time_limit_s, (int, float)
        )
        if bad_time or self.time_limit_s < 1:
            raise ValueError(f"time_limit_s must be >= 1, got {self.time_limit_s!r}")
        bad_eps = isinstance(self.epsilon, bool) or not isinstance(self.epsilon, (int, float))
        if bad_eps or not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "SearchConfig":
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
        if not isinstance(doc, dict):
            raise ValueError(f"{path} is not a JSON config object")
        return cls.from_dict(doc)


@dataclass(frozen=True)
class SearchResult:
    target: str
    solved: bool
    routes: tuple[Route, ...]
    iterations_used: int
    model_calls: int
    wall_time_s: float  # includes route extraction
    extract_time_s: float
    termination: str  # iterations | time | exhausted | transport-error


class MolNode:
    """OR node: one molecule instance at one branch position."""

    __slots__ = ("molecule", "depth", "serial", "parent", "state", "value", "children")

    def __init__(self, molecule: str, depth: int, serial: int, parent: "RxnNode | None" = None):
        self.molecule = molecule
        self.depth = depth
        self.serial = serial
        self.parent = parent
        self.state = FRONTIER
        self.value = 0.0
        self.children: list[RxnNode] = []


class RxnNode:
    """AND node: one predicted reaction; solved only when every child is."""

    __slots__ = ("prior", "rank", "cost", "parent", "children")

    def __init__(self, prior: float, rank: int, cost: float, parent: MolNode):
        self.prior = prior
        self.rank = rank
        self.cost = cost
        self.parent = parent
        self.children: list[MolNode] = []


def _new_mol(molecule, depth, parent, stock, config, serial) -> MolNode:
    node = MolNode(molecule, depth, next(serial), parent)
    if molecule in stock:
        node.state = STOCK_LEAF
    elif depth >= config.max_depth:
        node.state = DEAD
        node.value = _INF
    return node


def expand(node: MolNode, predictor, stock, config: SearchConfig, serial) -> list[RxnNode]:
    """One model call; surviving reactions become children of the node.

    Reactions that would rebuild any molecule on the path back to the root
    are discarded. Children are classified at creation: in stock means a
    zero-cost leaf, out of stock at the depth limit means dead.
    """
    predictions = predictor.predict(node.molecule, top_k=config.top_k)
    blocked = set()
    mol = node
    while mol is not None:
        blocked.add(mol.molecule)
        mol = mol.parent.parent if mol.parent is not None else None
    kept: list[RxnNode] = []
    for pred in predictions:
        if blocked.intersection(pred.reactants):
            continue
        clamped = min(max(pred.prior, config.epsilon), 1.0)
        rxn = RxnNode(prior=pred.prior, rank=pred.rank, cost=-math.log(clamped), parent=node)
        rxn.children = [
            _new_mol(r, node.depth + 1, rxn, stock, config, serial) for r in pred.reactants
        ]
        kept.append(rxn)
    node.children = kept
    if kept:
        node.state = EXPANDED
    else:
        node.state = DEAD
        node.value = _INF
    return kept


def refresh_values(root: MolNode) -> None:
    """Bottom-up Bellman pass: V(expanded) = min over reactions of
    cost + sum of child values. Leaf states keep their fixed values."""
    order = [root]
    for mol in order:  # appending while iterating puts children after parents
        if mol.state == EXPANDED:
            for rxn in mol.children:
                order.extend(rxn.children)
    for mol in reversed(order):
        if mol.state == EXPANDED:
            best = _INF
            for rxn in mol.children:
                total = rxn.cost
                for child in rxn.children:
                    total += child.value
                if total < best:
                    best = total
            mol.value = best


def assert_value_consistency(root: MolNode) -> None:
    """Full-tree audit of the value invariants; for debugging and tests."""
    stack = [root]
    while stack:
        mol = stack.pop()
        if mol.state in (FRONTIER, STOCK_LEAF):
            assert mol.value == 0.0, (mol.molecule, mol.state, mol.value)
        elif mol.state == DEAD:
            assert mol.value == _INF, (mol.molecule, mol.value)
        else:
            best = _INF
            for rxn in mol.children:
                total = rxn.cost
                for child in rxn.children:
                    total += child.value
                if total < best:
                    best = total
                stack.extend(rxn.children)
            assert mol.value == best, (mol.molecule, mol.value, best)


def select_frontier(root: MolNode) -> MolNode | None:
    """Frontier molecule on the cheapest partial solution tree, or None.

    The prefix carried down the tree is the cost of reaching a node: all
    reaction costs on its path plus the value estimates of every sibling
    branch forced in by those reactions. Ties break toward lower depth, then
    creation order. Nodes whose every containing tree is infinite are
    unreachable in any solution and are skipped."""
    best: tuple[float, int, int] | None = None
    best_node: MolNode | None = None
    stack: list[tuple[MolNode, float]] = [(root, 0.0)]
    while stack:
        mol, prefix = stack.pop()
        if mol.state == FRONTIER:
            candidate = (prefix, mol.depth, mol.serial)
            if best is None or candidate < best:
                best = candidate
                best_node = mol
            continue
        if mol.state != EXPANDED:
            continue
        for rxn in mol.children:
            base = prefix + rxn.cost
            for child in rxn.children:
                if child.state == STOCK_LEAF or child.state == DEAD:
                    continue
                through = base
                for other in rxn.children:
                    if other is not child:
                        through += other.value
                if through < _INF:
                    stack.append((child, through))
    return best_node


def search(
    target: str,
    predictor,
    stock,
    config: SearchConfig | None = None,
    *,
    dedupe_leaf_sets: bool = False,
    audit: bool = False,
    clock: Callable[[], float] = time.perf_counter,
) -> SearchResult:
    """Run the full search for one target and rank its solved routes.

    The time limit is only checked between iterations, so a slow model call
    can overrun it. A predictor transport failure ends the search but keeps
    every route already provable from the tree built so far.
    """
    config = config if config is not None else SearchConfig()
    started = clock()
    key = canonicalize(target)
    serial = count()
    root = _new_mol(key, 0, None, stock, config, serial)
    iterations = 0
    calls = 0
    termination = "exhausted"
    while True:
        if iterations >= config.iteration_limit:
            termination = "iterations"
            break
        if clock() - started >= config.time_limit_s:
            termination = "time"
            break
        node = select_frontier(root)
        if node is None:
            termination = "exhausted"
            break
        iterations += 1
        calls += 1
        try:
            expand(node, predictor, stock, config, serial)
        except TransportError:
            termination = "transport-error"
            break
        refresh_values(root)
        if audit:
            assert_value_consistency(root)
    extraction_started = clock()
    routes = extract_routes(root, config.route_cap, config.epsilon, dedupe_leaf_sets)
    finished = clock()
    return SearchResult(
        target=key,
        solved=bool(routes),
        routes=tuple(routes),
        iterations_used=iterations,
        model_calls=calls,
        wall_time_s=finished - started,
        extract_time_s=finished - extraction_started,
        termination=termination,
    )


# ---------------------------------------------------------------------------
# Route extraction: lazy best-first enumeration of solved solution trees.
# Every solved OR node merges its solved reactions' solution streams by cost;
# every reaction enumerates the cross product of its children's streams in
# cost order over a visited-index-vector heap.


class _Stream:
    """Memoized random access over a nondecreasing-cost solution generator."""

    __slots__ = ("_it", "items")

    def __init__(self, it):
        self._it = it
        self.items: list = []

    def get(self, i: int):
        while self._it is not None and len(self.items) <= i:
            item = next(self._it, None)
            if item is None:
                self._it = None
            else:
                self.items.append(item)
        return self.items[i] if i < len(self.items) else None


def _solved_map(root: MolNode) -> dict[int, bool]:
    order = [root]
    for mol in order:
        if mol.state == EXPANDED:
            for rxn in mol.children:
                order.extend(rxn.children)
    solved: dict[int, bool] = {}
    for mol in reversed(order):
        if mol.state == STOCK_LEAF:
            solved[mol.serial] = True
        elif mol.state == EXPANDED:
            solved[mol.serial] = any(
                all(solved[c.serial] for c in rxn.children) for rxn in mol.children
            )
        else:
            solved[mol.serial] = False
    return solved


def _stream(mol: MolNode, solved, streams) -> _Stream:
    stream = streams.get(mol.serial)
    if stream is None:
        stream = streams[mol.serial] = _Stream(_mol_solutions(mol, solved, streams))
    return stream


def _mol_solutions(mol: MolNode, solved, streams) -> Iterator[tuple[float, int, RouteMol]]:
    """(cost, reaction count, subtree) in nondecreasing cost order."""
    if mol.state == STOCK_LEAF:
        yield (0.0, 0, RouteMol(molecule=mol.molecule, in_stock=True))
        return
    if mol.state != EXPANDED:
        return
    heap = []
    for pos, rxn in enumerate(mol.children):
        if all(solved[c.serial] for c in rxn.children):
            gen = _rxn_solutions(rxn, [_stream(c, solved, streams) for c in rxn.children])
            first = next(gen, None)
            if first is not None:
                heap.append((first[0], pos, first, gen))
    heapify(heap)  # (cost, reaction position) is unique, payloads never compared
    while heap:
        _, pos, item, gen = heappop(heap)
        yield (item[0], item[1], RouteMol(molecule=mol.molecule, in_stock=False, reaction=item[2]))
        item = next(gen, None)
        if item is not None:
            heappush(heap, (item[0], pos, item, gen))


def _rxn_solutions(rxn: RxnNode, child_streams) -> Iterator[tuple[float, int, RouteRxn]]:
    k = len(child_streams)
    start = (0,) * k
    if any(s.get(0) is None for s in child_streams):
        return
    heap = [(_vector_cost(rxn, child_streams, start), start)]
    seen = {start}
    while heap:
        cost, vector = heappop(heap)
        parts = [child_streams[i].get(vector[i]) for i in range(k)]
        n_reactions = 1 + sum(p[1] for p in parts)
        children = tuple(p[2] for p in parts)
        yield (cost, n_reactions, RouteRxn(children=children, prior=rxn.prior, rank=rxn.rank))
        for i in range(k):
            bumped = vector[:i] + (vector[i] + 1,) + vector[i + 1 :]
            if bumped in seen or child_streams[i].get(bumped[i]) is None:
                continue
            seen.add(bumped)
            heappush(heap, (_vector_cost(rxn, child_streams, bumped), bumped))


def _vector_cost(rxn: RxnNode, child_streams, vector) -> float:
    total = rxn.cost
    for stream, index in zip(child_streams, vector):
        total += stream.get(index)[0]
    return total


def extract_routes(
    root: MolNode,
    route_cap: int,
    epsilon: float = 1e-10,
    dedupe_leaf_sets: bool = False,
) -> list[Route]:
    """Solved solution trees as routes, ranked by (cost, reactions, hash).

    Enumeration is cheapest-first, so hitting the cap keeps the best routes.
    Identity is the structural route hash, or the building-block set when
    dedupe_leaf_sets is on."""
    solved = _solved_map(root)
    if not solved[root.serial]:
        return []
    routes: list[Route] = []
    seen: set = set()
    for _cost, _n, mol in _mol_solutions(root, solved, {}):
        route = Route(root=mol)
        ident = route_leaves(route) if dedupe_leaf_sets else route_hash(route)
        if ident in seen:
            continue
        seen.add(ident)
        routes.append(route)
        if len(routes) >= route_cap:
            break
    routes.sort(key=lambda r: (route_cost(r, epsilon), _n_reactions(r.root), route_hash(r)))
    return routes


def _n_reactions(mol: RouteMol) -> int:
    if mol.reaction is None:
        return 0
    return 1 + sum(_n_reactions(c) for c in mol.reaction.children)


def route_cost(route: Route, epsilon: float = 1e-10) -> float:
    """Sum of -ln(clamped prior) over the route's reactions. fsum makes the
    total independent of traversal order."""
    costs = []
    stack = [route.root]
    while stack:
        mol = stack.pop()
        if mol.reaction is not None:
            if mol.reaction.prior is None:
                raise ValueError("route has a reaction without a prior; cost undefined")
            costs.append(-math.log(min(max(mol.reaction.prior, epsilon), 1.0)))
            stack.extend(mol.reaction.children)
    return math.fsum(costs)
