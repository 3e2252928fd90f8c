"""Batch benchmarking over target lists and the aggregate statistics that go
with it: success-rate tables, single-step top-n accuracy, subsample variance,
and prior/rank extraction from predicted routes.

Results are line-delimited JSON, one record per target, appended as they
finish so an interrupted batch resumes by skipping targets already on disk.
Per-target results depend only on (target, predictor, stock, config), never
on worker count or batch composition. All means are over every target,
solved or not, and all rates are percentages.
"""

from __future__ import annotations

import json
import math
import os
import random
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

from .molgraph import ParseError, canonicalize
from .predictor import PredictorConfig, TransportError, make_predictor
from .retrostar import SearchConfig, SearchResult, search
from .routes import Route, parse_route, route_to_dict

TOP_N_DEFAULT = (1, 3, 5, 10, 50)

_RECORD_KEYS = frozenset(
    (
        "target",
        "solved",
        "n_solved_routes",
        "wall_time_s",
        "search_time_s",
        "extract_time_s",
        "model_calls",
        "iterations",
        "termination",
        "error",
        "routes",
    )
)


@dataclass(frozen=True)
class BenchmarkRecord:
    """One target's search outcome, as stored in a results file.

    ``wall_time_s`` covers the whole search call including route extraction;
    the two components are recorded separately alongside it. ``routes``
    holds only the best few serialized routes (the record must stay small);
    ``n_solved_routes`` counts everything found. ``termination`` is the
    search's own label, plus "error" for targets that could not be searched
    at all (say, an unparsable SMILES), with the message in ``error``.
    """

    target: str
    solved: bool
    n_solved_routes: int
    wall_time_s: float
    search_time_s: float
    extract_time_s: float
    model_calls: int
    iterations: int
    termination: str
    routes: tuple[Route, ...] = ()
    error: str | None = None

    def __post_init__(self):
        if self.solved != (self.n_solved_routes >= 1):
            raise ValueError(
                f"solved={self.solved} contradicts n_solved_routes={self.n_solved_routes}"
            )

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "solved": self.solved,
            "n_solved_routes": self.n_solved_routes,
            "wall_time_s": self.wall_time_s,
            "search_time_s": self.search_time_s,
            "extract_time_s": self.extract_time_s,
            "model_calls": self.model_calls,
            "iterations": self.iterations,
            "termination": self.termination,
            "error": self.error,
            "routes": [route_to_dict(r) for r in self.routes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchmarkRecord":
        if not isinstance(doc, dict):
            raise ValueError(f"benchmark record is not an object: {doc!r}")
        missing = _RECORD_KEYS - set(doc)
        extra = set(doc) - _RECORD_KEYS
        if missing or extra:
            raise ValueError(
                f"benchmark record keys off: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        if not isinstance(doc["routes"], list):
            raise ValueError("benchmark record routes must be a list")
        return cls(
            target=doc["target"],
            solved=doc["solved"],
            n_solved_routes=doc["n_solved_routes"],
            wall_time_s=doc["wall_time_s"],
            search_time_s=doc["search_time_s"],
            extract_time_s=doc["extract_time_s"],
            model_calls=doc["model_calls"],
            iterations=doc["iterations"],
            termination=doc["termination"],
            routes=tuple(parse_route(r) for r in doc["routes"]),
            error=doc["error"],
        )


def record_to_line(record: BenchmarkRecord) -> str:
    return json.dumps(record.to_dict(), sort_keys=True)


def record_from_result(result: SearchResult, route_record_cap: int = 50) -> BenchmarkRecord:
    return BenchmarkRecord(
        target=result.target,
        solved=result.solved,
        n_solved_routes=len(result.routes),
        wall_time_s=result.wall_time_s,
        search_time_s=result.wall_time_s - result.extract_time_s,
        extract_time_s=result.extract_time_s,
        model_calls=result.model_calls,
        iterations=result.iterations_used,
        termination=result.termination,
        routes=result.routes[:route_record_cap],
    )


def _error_record(target: str, termination: str, message: str) -> BenchmarkRecord:
    return BenchmarkRecord(
        target=target,
        solved=False,
        n_solved_routes=0,
        wall_time_s=0.0,
        search_time_s=0.0,
        extract_time_s=0.0,
        model_calls=0,
        iterations=0,
        termination=termination,
        error=message,
    )


def load_records(path) -> list[BenchmarkRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            records.append(BenchmarkRecord.from_dict(doc))
    return records


def _resume_targets(path) -> set[str]:
    """Targets already recorded at ``path``; drops lines a crash left behind.

    A truncated final line is exactly what an interrupted write produces, so
    unparsable lines are removed (rewriting the file in place) and their
    targets get recomputed.
    """
    if not os.path.exists(path):
        return set()
    kept: list[str] = []
    done: set[str] = set()
    dropped = 0
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            try:
                target = json.loads(line)["target"]
            except (json.JSONDecodeError, KeyError, TypeError):
                dropped += 1
                continue
            kept.append(line)
            done.add(target)
    if dropped:
        tmp = f"{path}.resume.tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            for line in kept:
                handle.write(line + "\n")
        os.replace(tmp, path)
    return done


def run_batch(
    targets_path,
    predictor: PredictorConfig | str,
    stock,
    config: SearchConfig | None = None,
    out_path=None,
    *,
    workers: int = 1,
    route_record_cap: int = 50,
    sidecar_path=None,
    timeout_s: float = 600.0,
) -> Iterator[BenchmarkRecord]:
    """Search every target in a file and yield one record each, in file order.

    Records are appended to ``out_path`` as they complete; targets already
    present there are skipped, which makes an interrupted batch resumable.
    Each worker thread owns its own predictor handle (spawned from the spec)
    and replaces it if it fails, so one dead external process costs one
    transport-error record, not the batch. Per-target failures of any kind
    become records; only unreadable input files raise, before any search
    starts. ``sidecar_path`` additionally gets every found route per target,
    not just the capped list embedded in the record.
    """
    if isinstance(predictor, str):
        predictor = PredictorConfig.from_spec(predictor)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise ValueError(f"workers must be an integer >= 1, got {workers!r}")
    config = config if config is not None else SearchConfig()
    with open(targets_path, encoding="utf-8") as handle:
        raw_targets = [line.strip() for line in handle if line.strip()]

    done = _resume_targets(out_path) if out_path is not None else set()
    pending: list[tuple[str, str | None]] = []
    scheduled: set[str] = set()
    for raw in raw_targets:
        try:
            key = canonicalize(raw)
        except ParseError:
            key = None
        ident = key if key is not None else raw
        if ident in done or ident in scheduled:
            continue
        scheduled.add(ident)
        pending.append((raw, key))

    local = threading.local()
    handles: list = []
    handles_lock = threading.Lock()

    def own_predictor():
        handle = getattr(local, "handle", None)
        if handle is not None and getattr(handle, "failed", False):
            handle.close()
            handle = None
        if handle is None:
            handle = make_predictor(predictor, timeout_s=timeout_s)
            with handles_lock:
                handles.append(handle)
            local.handle = handle
        return handle

    def run_one(raw: str, key: str | None):
        if key is None:
            try:
                canonicalize(raw)
            except ParseError as exc:
                return _error_record(raw, "error", str(exc)), ()
        try:
            result = search(key, own_predictor(), stock, config)
        except TransportError as exc:  # the handle never came up
            return _error_record(key, "transport-error", str(exc)), ()
        return record_from_result(result, route_record_cap), result.routes

    out_handle = open(out_path, "a", encoding="utf-8") if out_path is not None else None
    side_handle = open(sidecar_path, "a", encoding="utf-8") if sidecar_path is not None else None
    try:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_one, raw, key) for raw, key in pending]
            for future in futures:  # submission order keeps output order stable
                record, all_routes = future.result()
                if out_handle is not None:
                    out_handle.write(record_to_line(record) + "\n")
                    out_handle.flush()
                if side_handle is not None:
                    doc = {
                        "target": record.target,
                        "routes": [route_to_dict(r) for r in all_routes],
                    }
                    side_handle.write(json.dumps(doc, sort_keys=True) + "\n")
                    side_handle.flush()
                yield record
    finally:
        for handle in handles:
            handle.close()
        if out_handle is not None:
            out_handle.close()
        if side_handle is not None:
            side_handle.close()


# ---------------------------------------------------------------------------
# Aggregation.


@dataclass(frozen=True)
class MetricsReport:
    """Success rate (percent) and per-molecule means over ALL targets,
    unsolved ones included."""

    n_targets: int
    success_rate: float
    mean_solved_routes: float
    mean_search_time_s: float
    mean_model_calls: float

    def to_dict(self) -> dict:
        return {
            "n_targets": self.n_targets,
            "success_rate": self.success_rate,
            "mean_solved_routes": self.mean_solved_routes,
            "mean_search_time_s": self.mean_search_time_s,
            "mean_model_calls": self.mean_model_calls,
        }


METRIC_NAMES = ("success_rate", "mean_solved_routes", "mean_search_time_s", "mean_model_calls")


def aggregate_metrics(records: Iterable[BenchmarkRecord]) -> MetricsReport:
    """Table-style aggregate. Search time is wall time (extraction included);
    fsum keeps every mean independent of record order."""
    records = list(records)
    if not records:
        raise ValueError("no records to aggregate")
    n = len(records)
    return MetricsReport(
        n_targets=n,
        success_rate=100.0 * sum(r.solved for r in records) / n,
        mean_solved_routes=math.fsum(r.n_solved_routes for r in records) / n,
        mean_search_time_s=math.fsum(r.wall_time_s for r in records) / n,
        mean_model_calls=math.fsum(r.model_calls for r in records) / n,
    )


# ---------------------------------------------------------------------------
# Single-step accuracy.


@dataclass(frozen=True)
class SingleStepReport:
    accuracy: dict[int, float]  # n -> percentage of reactions hit within top-n
    n_reactions: int
    n_skipped: int

    def to_dict(self) -> dict:
        return {
            "accuracy": {str(n): v for n, v in sorted(self.accuracy.items())},
            "n_reactions": self.n_reactions,
            "n_skipped": self.n_skipped,
        }


def single_step_top_n(
    predictor, reactions_path, ns: Sequence[int] = TOP_N_DEFAULT
) -> SingleStepReport:
    """Fraction of test reactions whose gold reactant multiset appears in the
    predictor's top-n, per n. Rows that fail to parse are skipped and
    counted; an empty prediction list is a miss at every n."""
    ns = sorted(set(ns))
    if not ns or any(isinstance(n, bool) or not isinstance(n, int) or n < 1 for n in ns):
        raise ValueError(f"top-n list must hold integers >= 1, got {ns!r}")
    golds: list[tuple[str, tuple[str, ...]]] = []
    skipped = 0
    with open(reactions_path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 2 or not fields[1]:
                skipped += 1
                continue
            try:
                product = canonicalize(fields[0])
                gold = tuple(sorted(canonicalize(r) for r in fields[1].split(".")))
            except ParseError:
                skipped += 1
                continue
            golds.append((product, gold))
    if not golds:
        raise ValueError(f"{reactions_path} has no usable reactions")
    deepest = max(ns)
    hits = dict.fromkeys(ns, 0)
    for product, gold in golds:
        rank = None
        for i, pred in enumerate(predictor.predict(product, top_k=deepest)):
            if tuple(pred.reactants) == gold:  # reactants are canonical and sorted
                rank = i + 1
                break
        if rank is not None:
            for n in ns:
                if rank <= n:
                    hits[n] += 1
    total = len(golds)
    accuracy = {n: 100.0 * hits[n] / total for n in ns}
    return SingleStepReport(accuracy=accuracy, n_reactions=total, n_skipped=skipped)


# ---------------------------------------------------------------------------
# Subsampling. The index draw below is the documented algorithm: a partial
# Fisher-Yates shuffle whose swap indices come from Random.random(), the one
# generator output the random module guarantees stable across versions.


def _sample_indices(rng: random.Random, n: int, size: int) -> list[int]:
    pool = list(range(n))
    for j in range(size):
        k = j + int(rng.random() * (n - j))
        if k >= n:  # random() can land close enough to 1 to round up
            k = n - 1
        pool[j], pool[k] = pool[k], pool[j]
    return sorted(pool[:size])


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    # identical values mean no variance, exactly; skip the float arithmetic
    if min(values) == max(values):
        return values[0], 0.0
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class SubsampleReport:
    size: int
    repetitions: int
    seed: int
    metrics: dict[str, dict[str, float]]  # metric -> {"mean": .., "std": ..}

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "metrics": self.metrics,
        }


def subsample_stats(
    records: Sequence[BenchmarkRecord], size: int, repetitions: int, seed: int
) -> SubsampleReport:
    """Mean and population standard deviation of every aggregate metric over
    repeated subsamples drawn without replacement. Same seed, same report."""
    records = list(records)
    n = len(records)
    if not isinstance(size, int) or isinstance(size, bool) or not 1 <= size <= n:
        raise ValueError(f"subsample size must be in 1..{n}, got {size!r}")
    if not isinstance(repetitions, int) or isinstance(repetitions, bool) or repetitions < 1:
        raise ValueError(f"repetitions must be an integer >= 1, got {repetitions!r}")
    rng = random.Random(seed)
    values: dict[str, list[float]] = {name: [] for name in METRIC_NAMES}
    for _ in range(repetitions):
        chosen = _sample_indices(rng, n, size)
        report = aggregate_metrics([records[i] for i in chosen])
        for name in METRIC_NAMES:
            values[name].append(getattr(report, name))
    metrics = {}
    for name in METRIC_NAMES:
        mean, std = _mean_std(values[name])
        metrics[name] = {"mean": mean, "std": std}
    return SubsampleReport(size=size, repetitions=repetitions, seed=seed, metrics=metrics)


# ---------------------------------------------------------------------------
# Prior/rank extraction.


@dataclass(frozen=True)
class PriorRankSample:
    pairs: tuple[tuple[float, int], ...]
    n_skipped_routes: int  # routes with a reaction missing prior or rank

    def to_dict(self) -> dict:
        return {
            "pairs": [[p, r] for p, r in self.pairs],
            "n_skipped_routes": self.n_skipped_routes,
        }


def extract_prior_rank(
    records: Iterable[BenchmarkRecord],
    top_n_routes: int = 10,
    sample: int | None = None,
    seed: int = 0,
) -> PriorRankSample:
    """Every reaction's (prior, rank) from each target's best routes.

    Routes carrying a reaction without metadata are skipped whole and
    counted. ``sample`` optionally subsamples the pairs without replacement
    with the seeded generator; asking for more pairs than exist returns all
    of them.
    """
    if not isinstance(top_n_routes, int) or isinstance(top_n_routes, bool) or top_n_routes < 1:
        raise ValueError(f"top_n_routes must be an integer >= 1, got {top_n_routes!r}")
    pairs: list[tuple[float, int]] = []
    skipped = 0
    for record in records:
        for route in record.routes[:top_n_routes]:
            route_pairs = []
            stack = [route.root]
            complete = True
            while stack:
                mol = stack.pop()
                rxn = mol.reaction
                if rxn is None:
                    continue
                if rxn.prior is None or rxn.rank is None:
                    complete = False
                    break
                route_pairs.append((rxn.prior, rxn.rank))
                stack.extend(rxn.children)
            if complete:
                pairs.extend(route_pairs)
            else:
                skipped += 1
    if sample is not None:
        if not isinstance(sample, int) or isinstance(sample, bool) or sample < 1:
            raise ValueError(f"sample must be an integer >= 1, got {sample!r}")
        if sample < len(pairs):
            rng = random.Random(seed)
            pairs = [pairs[i] for i in _sample_indices(rng, len(pairs), sample)]
    return PriorRankSample(pairs=tuple(pairs), n_skipped_routes=skipped)
