"""Command-line entry point for the whole pipeline.

One subcommand per pipeline stage: plan a single target, run a benchmark
batch, evaluate routes or single-step predictions against gold data, cluster
routes or molecules, aggregate and subsample statistics, and generate a
synthetic stock. Reports are JSON with sorted keys, so identical invocations
over identical inputs produce byte-identical outputs; every report echoes
the effective configuration it ran with. Exit status: 0 for success (an
unsolved target is a result, not an error), 1 for domain errors in the data,
2 for usage errors such as bad flags or missing files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace

from .evalharness import (
    TOP_N_DEFAULT,
    aggregate_metrics,
    extract_prior_rank,
    load_records,
    run_batch,
    single_step_top_n,
    subsample_stats,
)
from .fingerprint import cluster_fingerprints, morgan_fingerprint
from .molgraph import canonicalize, parse_smiles
from .predictor import PredictorConfig, TransportError, make_predictor
from .retrostar import SearchConfig, search
from .routes import (
    building_block_accuracy,
    cluster_routes,
    load_routes,
    route_accuracy,
    route_to_dict,
)
from .stock import load_stock, write_synthetic_stock

ROUTE_REPORT_CAP = 50  # serialized routes per report; counts stay uncapped


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"must be >= 1, got {text}")
    return value


def _time_limit(text: str) -> float:
    value = float(text)
    if value < 1:
        raise ValueError(f"must be >= 1 second, got {text}")
    return value


def _cutoff(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"must lie in [0, 1], got {text}")
    return value


def _top_n_list(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    values = sorted({int(p) for p in parts})
    if not values or values[0] < 1:
        raise ValueError(f"expected comma-separated integers >= 1, got {text!r}")
    return tuple(values)


def _emit(doc: dict, out_path: str | None) -> None:
    text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _effective_config(args) -> SearchConfig:
    """Config file, then the PaRoutes preset, then explicit flags on top."""
    config = SearchConfig.from_file(args.config) if args.config else SearchConfig()
    if getattr(args, "paroutes", False):
        config = replace(config, max_depth=10)
    overrides = {}
    if args.iterations is not None:
        overrides["iteration_limit"] = args.iterations
    if args.time_limit is not None:
        overrides["time_limit_s"] = args.time_limit
    if args.top_k is not None:
        overrides["top_k"] = args.top_k
    if args.max_depth is not None:
        overrides["max_depth"] = args.max_depth
    return replace(config, **overrides) if overrides else config


def _predictor_spec(args) -> str:
    if args.predictor is not None:
        return args.predictor
    return f"table:{args.reactions}"


def _add_search_flags(sub) -> None:
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--predictor", help="predictor spec: table:<tsv> or cmd:<command>")
    group.add_argument("--reactions", help="reaction TSV, shorthand for table:<path>")
    sub.add_argument("--stock", required=True, help="stock file, one SMILES per line")
    sub.add_argument("--config", help="JSON search config file")
    sub.add_argument("--iterations", type=_positive_int, help="iteration limit")
    sub.add_argument("--time-limit", type=_time_limit, help="wall-time limit in seconds")
    sub.add_argument("--top-k", type=_positive_int, help="predictions kept per expansion")
    sub.add_argument("--max-depth", type=_positive_int, help="route depth limit")
    sub.add_argument("--paroutes", action="store_true", help="benchmark preset: depth limit 10")


def _search_report(result, config: SearchConfig) -> dict:
    return {
        "config": asdict(config),
        "target": result.target,
        "solved": result.solved,
        "termination": result.termination,
        "iterations": result.iterations_used,
        "model_calls": result.model_calls,
        "wall_time_s": result.wall_time_s,
        "search_time_s": result.wall_time_s - result.extract_time_s,
        "extract_time_s": result.extract_time_s,
        "n_solved_routes": len(result.routes),
        "routes": [route_to_dict(r) for r in result.routes[:ROUTE_REPORT_CAP]],
    }


def _cmd_plan(args) -> int:
    config = _effective_config(args)
    stock = load_stock(args.stock)
    predictor = make_predictor(PredictorConfig.from_spec(_predictor_spec(args)))
    try:
        result = search(args.target, predictor, stock, config)
    finally:
        predictor.close()
    _emit(_search_report(result, config), args.out)
    return 0


def _cmd_batch(args) -> int:
    config = _effective_config(args)
    stock = load_stock(args.stock)
    for _ in run_batch(
        args.targets,
        _predictor_spec(args),
        stock,
        config,
        args.out,
        workers=args.workers,
        sidecar_path=args.sidecar,
    ):
        pass
    report = aggregate_metrics(load_records(args.out))
    _emit({"config": asdict(config), **report.to_dict()}, None)
    return 0


def _cmd_eval_routes(args) -> int:
    records = load_records(args.records)
    gold: dict[str, object] = {}
    for route in load_routes(args.gold):
        target = route.root.molecule
        if target in gold:
            raise ValueError(f"duplicate gold route for {target}")
        gold[target] = route
    if not gold:
        raise ValueError(f"{args.gold} holds no gold routes")
    predicted = {r.target: list(r.routes) for r in records}
    doc = {
        "config": {"records": args.records, "gold": args.gold, "top_n": list(args.top_n)},
        "n_gold": len(gold),
        "route_accuracy": {str(n): v for n, v in route_accuracy(predicted, gold, args.top_n).items()},
        "building_block_accuracy": {
            str(n): v for n, v in building_block_accuracy(predicted, gold, args.top_n).items()
        },
    }
    _emit(doc, args.out)
    return 0


def _cmd_eval_single_step(args) -> int:
    spec = _predictor_spec(args)
    predictor = make_predictor(PredictorConfig.from_spec(spec))
    try:
        report = single_step_top_n(predictor, args.test_reactions, args.top_n)
    finally:
        predictor.close()
    doc = {
        "config": {"predictor": spec, "test_reactions": args.test_reactions,
                   "top_n": list(args.top_n)},
        **report.to_dict(),
    }
    _emit(doc, args.out)
    return 0


def _clustering_doc(clustering) -> dict:
    return {
        "n_clusters": len(clustering.clusters),
        "assignment": {str(i): c for i, c in sorted(clustering.assignment().items())},
        "clusters": [
            {"centroid": c.centroid, "members": list(c.members)} for c in clustering.clusters
        ],
    }


def _cmd_cluster_routes(args) -> int:
    routes = load_routes(args.routes)
    if not routes:
        raise ValueError(f"{args.routes} holds no routes")
    clustering = cluster_routes(routes, cutoff=args.cutoff)
    doc = {
        "config": {"routes": args.routes, "cutoff": args.cutoff},
        "n_routes": len(routes),
        **_clustering_doc(clustering),
    }
    _emit(doc, args.out)
    return 0


def _cmd_cluster_mols(args) -> int:
    keys = []
    with open(args.molecules, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                keys.append(canonicalize(line))
    if not keys:
        raise ValueError(f"{args.molecules} holds no molecules")
    fps = [morgan_fingerprint(parse_smiles(k)) for k in keys]
    clustering = cluster_fingerprints(fps, cutoff=args.cutoff)
    doc = {
        "config": {"molecules": args.molecules, "cutoff": args.cutoff},
        "n_molecules": len(keys),
        "keys": keys,
        **_clustering_doc(clustering),
    }
    _emit(doc, args.out)
    return 0


def _cmd_stats(args) -> int:
    records = load_records(args.records)
    report = aggregate_metrics(records)
    doc = {"config": {"records": args.records}, **report.to_dict()}
    if args.prior_rank:
        sample = extract_prior_rank(
            records, top_n_routes=args.top_routes, sample=args.sample, seed=args.seed
        )
        doc["config"].update(
            {"top_routes": args.top_routes, "sample": args.sample, "seed": args.seed}
        )
        doc["prior_rank"] = sample.to_dict()
    _emit(doc, args.out)
    return 0


def _cmd_subsample(args) -> int:
    records = load_records(args.records)
    report = subsample_stats(records, size=args.size, repetitions=args.repetitions, seed=args.seed)
    doc = {"config": {"records": args.records}, **report.to_dict()}
    _emit(doc, args.out)
    return 0


def _cmd_export_stock(args) -> int:
    write_synthetic_stock(args.out, args.count, seed=args.seed)
    _emit({"config": {"count": args.count, "seed": args.seed}, "out": args.out}, None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retrobench", description="Retrosynthesis search and benchmarking."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    plan = commands.add_parser("plan", help="search one target and print its routes")
    plan.add_argument("--target", required=True, help="target SMILES")
    _add_search_flags(plan)
    plan.add_argument("--out", help="write the report here instead of stdout")
    plan.set_defaults(func=_cmd_plan)

    batch = commands.add_parser("batch", help="benchmark a target list into a results file")
    batch.add_argument("--targets", required=True, help="file of target SMILES, one per line")
    _add_search_flags(batch)
    batch.add_argument("--workers", type=_positive_int, default=1)
    batch.add_argument("--out", required=True, help="results file (JSON lines, resumable)")
    batch.add_argument("--sidecar", help="also write every found route per target here")
    batch.set_defaults(func=_cmd_batch)

    ev = commands.add_parser("eval-routes", help="score recorded routes against gold routes")
    ev.add_argument("records", help="results file from batch")
    ev.add_argument("--gold", required=True, help="JSON array of gold routes")
    ev.add_argument("--top-n", type=_top_n_list, default=TOP_N_DEFAULT)
    ev.add_argument("--out")
    ev.set_defaults(func=_cmd_eval_routes)

    ss = commands.add_parser("eval-single-step", help="top-n accuracy of a predictor")
    ss.add_argument("test_reactions", help="reaction TSV with gold reactant sets")
    group = ss.add_mutually_exclusive_group(required=True)
    group.add_argument("--predictor", help="predictor spec: table:<tsv> or cmd:<command>")
    group.add_argument("--reactions", help="reaction TSV, shorthand for table:<path>")
    ss.add_argument("--top-n", type=_top_n_list, default=TOP_N_DEFAULT)
    ss.add_argument("--out")
    ss.set_defaults(func=_cmd_eval_single_step)

    cr = commands.add_parser("cluster-routes", help="cluster routes by tree edit distance")
    cr.add_argument("routes", help="JSON array of routes")
    cr.add_argument("--cutoff", type=_cutoff, default=0.5, help="normalized distance cutoff")
    cr.add_argument("--out")
    cr.set_defaults(func=_cmd_cluster_routes)

    cm = commands.add_parser("cluster-mols", help="cluster molecules by fingerprint")
    cm.add_argument("molecules", help="file of SMILES, one per line")
    cm.add_argument("--cutoff", type=_cutoff, default=0.6, help="Tanimoto distance cutoff")
    cm.add_argument("--out")
    cm.set_defaults(func=_cmd_cluster_mols)

    st = commands.add_parser("stats", help="aggregate metrics over a results file")
    st.add_argument("records")
    st.add_argument("--prior-rank", action="store_true",
                    help="also extract (prior, rank) pairs from each target's top routes")
    st.add_argument("--top-routes", type=_positive_int, default=10)
    st.add_argument("--sample", type=_positive_int, help="subsample the pairs to this many")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--out")
    st.set_defaults(func=_cmd_stats)

    su = commands.add_parser("subsample", help="subsample variance of the aggregate metrics")
    su.add_argument("records")
    su.add_argument("--size", type=_positive_int, required=True)
    su.add_argument("--repetitions", type=_positive_int, default=1000)
    su.add_argument("--seed", type=int, default=0)
    su.add_argument("--out")
    su.set_defaults(func=_cmd_subsample)

    ex = commands.add_parser("export-stock", help="write a synthetic stock file")
    ex.add_argument("count", type=_positive_int, help="number of lines to write")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=_cmd_export_stock)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage or help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
