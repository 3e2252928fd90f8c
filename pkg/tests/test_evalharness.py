import json
import math
import sys

import pytest

from retrobench.evalharness import (
    BenchmarkRecord,
    METRIC_NAMES,
    PriorRankSample,
    aggregate_metrics,
    extract_prior_rank,
    load_records,
    record_from_result,
    record_to_line,
    run_batch,
    single_step_top_n,
    subsample_stats,
)
from retrobench.molgraph import canonicalize
from retrobench.predictor import build_table_predictor
from retrobench.retrostar import SearchConfig
from retrobench.routes import Route, RouteMol, RouteRxn
from retrobench.stock import load_stock

NETWORK_TSV = """\
[101C]\t[1C].[2C]\t3
[101C]\t[1C]\t1
[102C]\t[2C]
[103C]\t[1C].[1C]
[104C]\t[1C]\t2
[104C]\t[401C]\t1
[201C]\t[301C]
[203C]\t[203C]
[204C]\t[302C]
[205C]\t[303C]
"""

TARGETS = "[101C] [102C] [103C] [104C] [201C] [202C] [203C] [204C] [205C] [206C]".split()


@pytest.fixture
def toy_batch(tmp_path):
    reactions = tmp_path / "reactions.tsv"
    reactions.write_text(NETWORK_TSV)
    targets = tmp_path / "targets.txt"
    targets.write_text("".join(t + "\n" for t in TARGETS))
    stock_file = tmp_path / "stock.txt"
    stock_file.write_text("[1C]\n[2C]\n")
    return {
        "reactions": str(reactions),
        "targets": str(targets),
        "stock": load_stock(str(stock_file)),
        "out": str(tmp_path / "records.jsonl"),
    }


def run_toy(toy_batch, **kwargs):
    return list(
        run_batch(
            toy_batch["targets"],
            f"table:{toy_batch['reactions']}",
            toy_batch["stock"],
            SearchConfig(iteration_limit=50),
            kwargs.pop("out", toy_batch["out"]),
            **kwargs,
        )
    )


def null_timing(line):
    doc = json.loads(line)
    for field in ("wall_time_s", "search_time_s", "extract_time_s"):
        doc[field] = None
    return json.dumps(doc, sort_keys=True)


def make_record(target="[900C]", solved=False, n_routes=0, wall=1.0, calls=3, routes=()):
    return BenchmarkRecord(
        target=target,
        solved=solved,
        n_solved_routes=n_routes,
        wall_time_s=wall,
        search_time_s=wall * 0.9,
        extract_time_s=wall * 0.1,
        model_calls=calls,
        iterations=calls,
        termination="exhausted" if solved else "iterations",
        routes=tuple(routes),
    )


def stock_leaf(key):
    return RouteMol(molecule=key, in_stock=True)


def step(key, children, prior, rank):
    rxn = RouteRxn(children=tuple(children), prior=prior, rank=rank)
    return RouteMol(molecule=key, in_stock=False, reaction=rxn)


# -- records ----------------------------------------------------------------


def test_record_round_trips_through_json():
    route = Route(root=step("[900C]", [stock_leaf("[1C]")], prior=0.5, rank=2))
    record = make_record(solved=True, n_routes=1, routes=(route,))
    line = record_to_line(record)
    assert BenchmarkRecord.from_dict(json.loads(line)) == record
    # key order in the document must not matter
    shuffled = dict(reversed(list(json.loads(line).items())))
    assert BenchmarkRecord.from_dict(shuffled) == record


def test_record_solved_contradiction_rejected():
    with pytest.raises(ValueError, match="contradicts"):
        make_record(solved=True, n_routes=0)
    with pytest.raises(ValueError, match="contradicts"):
        make_record(solved=False, n_routes=2)


def test_record_key_set_is_strict():
    doc = json.loads(record_to_line(make_record()))
    doc["surprise"] = 1
    with pytest.raises(ValueError, match="surprise"):
        BenchmarkRecord.from_dict(doc)
    doc = json.loads(record_to_line(make_record()))
    del doc["model_calls"]
    with pytest.raises(ValueError, match="model_calls"):
        BenchmarkRecord.from_dict(doc)


# -- run_batch --------------------------------------------------------------


def test_batch_records_known_solvable_set(toy_batch):
    records = run_toy(toy_batch)
    assert [r.target for r in records] == TARGETS
    solved = {r.target for r in records if r.solved}
    assert solved == {"[101C]", "[102C]", "[103C]", "[104C]"}
    by_target = {r.target: r for r in records}
    assert by_target["[101C]"].n_solved_routes == 2
    assert all(r.termination == "exhausted" for r in records)
    assert all(r.model_calls == r.iterations for r in records)
    # in-stock reactant sets mean one expansion per solvable target
    assert by_target["[102C]"].model_calls == 1

    on_disk = load_records(toy_batch["out"])
    assert on_disk == records
    assert aggregate_metrics(records).success_rate == 40.0


def test_batch_resume_skips_present_targets(toy_batch, tmp_path):
    run_toy(toy_batch)
    with open(toy_batch["out"], encoding="utf-8") as fh:
        original = fh.read().splitlines()
    with open(toy_batch["out"], "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in original[:5]))

    # recompute with an unrelated network: kept lines must stay byte-identical,
    # which proves the first five targets were skipped, not recomputed
    empty_net = tmp_path / "other.tsv"
    empty_net.write_text("[999C]\t[1C]\n")
    resumed = list(
        run_batch(
            toy_batch["targets"],
            f"table:{empty_net}",
            toy_batch["stock"],
            SearchConfig(iteration_limit=50),
            toy_batch["out"],
        )
    )
    assert [r.target for r in resumed] == TARGETS[5:]
    with open(toy_batch["out"], encoding="utf-8") as fh:
        merged = fh.read().splitlines()
    assert merged[:5] == original[:5]
    assert len(merged) == len(TARGETS)

    # same network instead: the final file matches a clean run up to timing
    with open(toy_batch["out"], "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in original[5:]))
    list(
        run_batch(
            toy_batch["targets"],
            f"table:{toy_batch['reactions']}",
            toy_batch["stock"],
            SearchConfig(iteration_limit=50),
            toy_batch["out"],
        )
    )
    with open(toy_batch["out"], encoding="utf-8") as fh:
        merged = fh.read().splitlines()
    assert sorted(map(null_timing, merged)) == sorted(map(null_timing, original))


def test_batch_resume_recovers_from_truncated_line(toy_batch):
    run_toy(toy_batch)
    with open(toy_batch["out"], encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    with open(toy_batch["out"], "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines[:-1]))
        fh.write(lines[-1][: len(lines[-1]) // 2])  # a crash mid-write
    resumed = run_toy(toy_batch)
    assert [r.target for r in resumed] == [TARGETS[-1]]
    assert len(load_records(toy_batch["out"])) == len(TARGETS)


def test_batch_worker_count_does_not_change_records(toy_batch, tmp_path):
    run_toy(toy_batch, workers=1)
    other_out = str(tmp_path / "records4.jsonl")
    run_toy(toy_batch, workers=4, out=other_out)
    with open(toy_batch["out"], encoding="utf-8") as fh:
        one = [null_timing(line) for line in fh]
    with open(other_out, encoding="utf-8") as fh:
        four = [null_timing(line) for line in fh]
    assert one == four


def test_batch_unparsable_target_becomes_error_record(toy_batch, tmp_path):
    targets = tmp_path / "bad_targets.txt"
    targets.write_text("[101C]\nnot(a smiles\n[102C]\n")
    records = list(
        run_batch(
            str(targets),
            f"table:{toy_batch['reactions']}",
            toy_batch["stock"],
            SearchConfig(iteration_limit=50),
        )
    )
    assert [r.solved for r in records] == [True, False, True]
    bad = records[1]
    assert bad.target == "not(a smiles"
    assert bad.termination == "error"
    assert bad.error
    assert bad.model_calls == 0


def test_batch_spelling_variants_collapse_to_one_record(toy_batch, tmp_path):
    targets = tmp_path / "dupes.txt"
    targets.write_text("CCO\nOCC\nC(C)O\n")
    stock_file = tmp_path / "ethanol_stock.txt"
    stock_file.write_text("CCO\n")
    records = list(
        run_batch(
            str(targets),
            f"table:{toy_batch['reactions']}",
            load_stock(str(stock_file)),
            SearchConfig(iteration_limit=50),
        )
    )
    assert len(records) == 1
    assert records[0].target == canonicalize("CCO")
    assert records[0].solved and records[0].model_calls == 0


ONE_SHOT_ADAPTER = """\
import json, sys
print(json.dumps({"type": "hello", "version": 1, "max_top_k": 50}))
sys.stdout.flush()
req = json.loads(sys.stdin.readline())
reply = {"type": "predictions", "id": req["id"],
         "results": [{"reactants": ["[1C]"], "prob": 0.9}]}
print(json.dumps(reply))
sys.stdout.flush()
"""


def test_batch_transport_failure_is_one_record_not_an_abort(tmp_path):
    adapter = tmp_path / "one_shot.py"
    adapter.write_text(ONE_SHOT_ADAPTER)
    targets = tmp_path / "targets.txt"
    targets.write_text("[101C]\n[102C]\n[103C]\n")
    stock_file = tmp_path / "stock.txt"
    stock_file.write_text("[1C]\n")
    records = list(
        run_batch(
            str(targets),
            f"cmd:{sys.executable} {adapter}",
            load_stock(str(stock_file)),
            SearchConfig(iteration_limit=50),
            str(tmp_path / "records.jsonl"),
            timeout_s=10.0,
        )
    )
    # the adapter dies after one answer; the worker notices on the next call,
    # records the failure, then respawns for the target after that
    assert [r.termination for r in records] == ["exhausted", "transport-error", "exhausted"]
    assert [r.solved for r in records] == [True, False, True]


def test_batch_route_cap_and_sidecar(toy_batch, tmp_path):
    sidecar = str(tmp_path / "full_routes.jsonl")
    records = run_toy(toy_batch, route_record_cap=1, sidecar_path=sidecar)
    by_target = {r.target: r for r in records}
    assert by_target["[101C]"].n_solved_routes == 2
    assert len(by_target["[101C]"].routes) == 1
    with open(sidecar, encoding="utf-8") as fh:
        docs = {d["target"]: d for d in map(json.loads, fh)}
    assert len(docs["[101C]"]["routes"]) == 2
    assert docs["[206C]"]["routes"] == []


def test_batch_rejects_bad_workers(toy_batch):
    with pytest.raises(ValueError, match="workers"):
        run_toy(toy_batch, workers=0)


# -- aggregation ------------------------------------------------------------


def test_aggregate_hand_values():
    records = [
        make_record(target="[900C]", solved=True, n_routes=2, wall=1.0, calls=10),
        make_record(target="[901C]", solved=False, n_routes=0, wall=2.0, calls=20),
        make_record(target="[902C]", solved=True, n_routes=4, wall=4.5, calls=60),
    ]
    report = aggregate_metrics(records)
    assert report.n_targets == 3
    assert report.success_rate == pytest.approx(100.0 * 2 / 3)
    assert report.mean_solved_routes == 2.0
    assert report.mean_search_time_s == 2.5
    assert report.mean_model_calls == 30.0


def test_aggregate_single_record_and_empty():
    report = aggregate_metrics([make_record(wall=7.5)])
    assert report.mean_search_time_s == 7.5
    assert report.success_rate == 0.0
    with pytest.raises(ValueError, match="no records"):
        aggregate_metrics([])


def test_aggregate_concatenation_is_weighted_mean():
    import random

    rng = random.Random(5)
    part_a = [
        make_record(target=f"[{i}C]", solved=bool(i % 2), n_routes=i % 2 and i, wall=rng.random(), calls=rng.randrange(1, 300))
        for i in range(1, 8)
    ]
    part_b = [
        make_record(target=f"[{i}C]", solved=bool(i % 3), n_routes=(i % 3 > 0) and i, wall=rng.random(), calls=rng.randrange(1, 300))
        for i in range(8, 13)
    ]
    whole = aggregate_metrics(part_a + part_b)
    a, b = aggregate_metrics(part_a), aggregate_metrics(part_b)
    na, nb = len(part_a), len(part_b)
    for name in METRIC_NAMES:
        combined = (na * getattr(a, name) + nb * getattr(b, name)) / (na + nb)
        assert getattr(whole, name) == pytest.approx(combined, rel=1e-12)


# -- single-step accuracy ----------------------------------------------------


def test_single_step_self_recall_is_total(toy_batch):
    predictor = build_table_predictor(toy_batch["reactions"])
    # the identity row [203C] -> [203C] filters to an empty prediction list,
    # so it can never be recalled; score the other rows
    report = single_step_top_n(predictor, toy_batch["reactions"], ns=(1, 50))
    assert report.n_reactions == 10
    assert report.n_skipped == 0
    assert report.accuracy[50] == pytest.approx(100.0 * 9 / 10)


def test_single_step_rank_thresholds(tmp_path):
    train = tmp_path / "train.tsv"
    train.write_text("[201C]\t[1C].[2C]\t5\n[201C]\t[3C]\t3\n[201C]\t[4C]\t2\n")
    evalfile = tmp_path / "eval.tsv"
    evalfile.write_text(
        "[201C]\t[4C]\n"  # rank 3
        "[201C]\t[2C].[1C]\n"  # rank 1, spelled in the other order
        "[555C]\t[1C]\n"  # unknown product: empty predictions, always a miss
        "junk(\t[1C]\n"  # unparsable, skipped
    )
    report = single_step_top_n(build_table_predictor(str(train)), str(evalfile), ns=(1, 3, 5))
    assert report.n_reactions == 3
    assert report.n_skipped == 1
    third = 100.0 / 3
    assert report.accuracy == {
        1: pytest.approx(third),
        3: pytest.approx(2 * third),
        5: pytest.approx(2 * third),
    }


def test_single_step_rejects_useless_inputs(tmp_path, toy_batch):
    empty = tmp_path / "empty.tsv"
    empty.write_text("nope(\t[1C]\n")
    predictor = build_table_predictor(toy_batch["reactions"])
    with pytest.raises(ValueError, match="no usable reactions"):
        single_step_top_n(predictor, str(empty))
    with pytest.raises(ValueError, match="top-n"):
        single_step_top_n(predictor, toy_batch["reactions"], ns=(0,))


# -- subsampling ------------------------------------------------------------


def ten_records():
    return [
        make_record(
            target=f"[{i}C]",
            solved=i < 4,
            n_routes=(i + 1) if i < 4 else 0,
            wall=0.5 + i,
            calls=10 * (i + 1),
        )
        for i in range(10)
    ]


def test_subsample_full_population_has_zero_variance():
    records = ten_records()
    report = subsample_stats(records, size=10, repetitions=25, seed=3)
    full = aggregate_metrics(records)
    for name in METRIC_NAMES:
        assert report.metrics[name]["std"] == 0.0
        assert report.metrics[name]["mean"] == getattr(full, name)


def test_subsample_bernoulli_matches_closed_form():
    # size 1: success_rate per draw is 0 or 100 with p = 0.4
    report = subsample_stats(ten_records(), size=1, repetitions=1000, seed=11)
    stats = report.metrics["success_rate"]
    sigma = 100.0 * math.sqrt(0.4 * 0.6)
    # 3-sigma Monte-Carlo bands for the mean and std estimators at R=1000
    assert abs(stats["mean"] - 40.0) < 3 * sigma / math.sqrt(1000)
    mu4 = 0.4 * 60.0**4 + 0.6 * 40.0**4
    std_of_var = math.sqrt((mu4 - sigma**4) / 1000)
    assert abs(stats["std"] - sigma) < 3 * std_of_var / (2 * sigma)


def test_subsample_is_seed_deterministic():
    records = ten_records()
    first = subsample_stats(records, size=4, repetitions=50, seed=9)
    second = subsample_stats(records, size=4, repetitions=50, seed=9)
    assert first == second
    assert json.dumps(first.to_dict(), sort_keys=True) == json.dumps(
        second.to_dict(), sort_keys=True
    )
    assert subsample_stats(records, size=4, repetitions=50, seed=10) != first


def test_subsample_size_bounds():
    records = ten_records()
    with pytest.raises(ValueError, match="size"):
        subsample_stats(records, size=11, repetitions=5, seed=0)
    with pytest.raises(ValueError, match="size"):
        subsample_stats(records, size=0, repetitions=5, seed=0)
    with pytest.raises(ValueError, match="repetitions"):
        subsample_stats(records, size=2, repetitions=0, seed=0)


# -- prior/rank extraction ----------------------------------------------------


def two_step_route(prior_top=0.9, rank_top=1, prior_leaf=0.2, rank_leaf=4):
    inner = step("[801C]", [stock_leaf("[1C]")], prior=prior_leaf, rank=rank_leaf)
    return Route(root=step("[800C]", [inner, stock_leaf("[2C]")], prior=prior_top, rank=rank_top))


def test_extract_prior_rank_walks_reactions():
    record = make_record(solved=True, n_routes=1, routes=(two_step_route(),))
    sample = extract_prior_rank([record])
    assert sorted(sample.pairs) == [(0.2, 4), (0.9, 1)]
    assert sample.n_skipped_routes == 0


def test_extract_prior_rank_honors_top_n_routes():
    routes = (two_step_route(), two_step_route(prior_top=0.5, rank_top=2))
    record = make_record(solved=True, n_routes=2, routes=routes)
    sample = extract_prior_rank([record], top_n_routes=1)
    assert sorted(sample.pairs) == [(0.2, 4), (0.9, 1)]


def test_extract_prior_rank_skips_routes_without_metadata():
    bare = Route(root=RouteMol(molecule="[800C]", in_stock=False,
                               reaction=RouteRxn(children=(stock_leaf("[1C]"),))))
    record = make_record(solved=True, n_routes=2, routes=(bare, two_step_route()))
    sample = extract_prior_rank([record])
    assert sample.n_skipped_routes == 1
    assert len(sample.pairs) == 2


def test_extract_prior_rank_subsamples_deterministically():
    records = [
        make_record(target=f"[{i}C]", solved=True, n_routes=1,
                    routes=(two_step_route(prior_top=(i + 1) / 20, rank_top=i + 1),))
        for i in range(10)
    ]
    full = extract_prior_rank(records)
    assert len(full.pairs) == 20
    sampled = extract_prior_rank(records, sample=7, seed=2)
    again = extract_prior_rank(records, sample=7, seed=2)
    assert sampled == again
    assert len(sampled.pairs) == 7
    full_multiset = sorted(full.pairs)
    for pair in sampled.pairs:
        assert pair in full_multiset
    assert extract_prior_rank(records, sample=500, seed=2).pairs == full.pairs
