"""Differential equivalence with the planner's in-process table predictor.

The planner looks molecules up by canonical SMILES, and the adapter matches
product strings textually, so the shared fixture is written in canonical
spellings (computed here, not assumed). On such a table the two predictor
kinds must agree entry for entry: same reactant multisets, bit-identical
priors, same order at every top_k.
"""

import json
import os
import shlex
import signal
import sys

import pytest

from retrobench.evalharness import run_batch
from retrobench.molgraph import canonicalize
from retrobench.predictor import TransportError, build_table_predictor, spawn_external

ESTER = canonicalize("CCOC(C)=O")
ACID = canonicalize("CC(=O)O")
CHLORIDE = canonicalize("CC(=O)Cl")
ETHANOL = canonicalize("CCO")
ALDEHYDE = canonicalize("CC=O")
ETHYLENE = canonicalize("C=C")
NITRILE = canonicalize("CC#N")

# Duplicate multisets (spelled in both orders), a prior tie broken by the
# reactant key, and an identity row that drops without renormalizing.
ROWS = [
    (ESTER, f"{ACID}.{ETHANOL}", 6),
    (ESTER, f"{CHLORIDE}.{ETHANOL}", 3),
    (ESTER, NITRILE, 1),
    (ETHANOL, ALDEHYDE, 4),
    (ETHANOL, ETHYLENE, 1),
    (ETHANOL, ALDEHYDE, 2),
    ("[7C]", "[1C].[2C]", 1),
    ("[7C]", "[2C].[1C]", 1),
    ("[7C]", "[3C]", 1),
    ("[7C]", "[4C]", 1),
    ("[8C]", "[8C]", 5),
    ("[8C]", "[1C]", 1),
]

PRODUCTS = [ESTER, ETHANOL, "[7C]", "[8C]", "[99C]"]

STOCK = frozenset([ACID, CHLORIDE, ALDEHYDE, ETHYLENE, "[1C]", "[2C]", "[3C]", "[4C]"])


@pytest.fixture
def table(tmp_path):
    path = tmp_path / "shared.tsv"
    path.write_text(
        "".join(f"{p}\t{r}\t{c}\n" for p, r, c in ROWS), encoding="utf-8"
    )
    return str(path)


def adapter_command(table, *extra):
    return [sys.executable, "-m", "stepadapter", "--reactions", table, *extra]


def test_wire_and_in_process_predictions_are_identical(table):
    in_process = build_table_predictor(table)
    wire = spawn_external(adapter_command(table))
    try:
        for product in PRODUCTS:
            for top_k in (1, 2, 3, 50):
                want = in_process.predict(product, top_k)
                got = wire.predict(product, top_k)
                assert got == want, (product, top_k)
    finally:
        wire.close()
        in_process.close()


def test_batch_through_the_wire_boundary(table, tmp_path):
    targets = tmp_path / "targets.smi"
    targets.write_text(f"{ESTER}\n[7C]\n{NITRILE}\n", encoding="utf-8")
    spec = "cmd:" + shlex.join(adapter_command(table))
    out = tmp_path / "records.jsonl"
    records = list(run_batch(str(targets), spec, STOCK, out_path=str(out)))
    assert [r.solved for r in records] == [True, True, False]
    assert all(r.termination == "exhausted" for r in records)
    assert records[0].n_solved_routes == 4  # acid/chloride x aldehyde/ethylene


def test_latency_beyond_timeout_degrades_to_transport_error_records(table, tmp_path):
    targets = tmp_path / "targets.smi"
    targets.write_text(f"{ESTER}\n[7C]\n[8C]\n", encoding="utf-8")
    spec = "cmd:" + shlex.join(adapter_command(table, "--latency", "5"))
    records = list(run_batch(str(targets), spec, STOCK, timeout_s=0.3))
    assert len(records) == 3  # the batch finishes; nothing aborts
    assert all(r.termination == "transport-error" for r in records)
    assert all(not r.solved for r in records)


def test_killed_adapter_latches_failure_without_poisoning_new_handles(table):
    wire = spawn_external(adapter_command(table))
    assert wire.predict("[7C]")[0].reactants == ("[1C]", "[2C]")
    os.kill(wire._proc.pid, signal.SIGKILL)
    with pytest.raises(TransportError):
        wire.predict("[7C]")
    assert wire.failed is True
    wire.close()

    fresh = spawn_external(adapter_command(table))
    try:
        assert fresh.predict("[7C]")[0].reactants == ("[1C]", "[2C]")
        assert fresh.failed is False
    finally:
        fresh.close()


def test_malformed_request_line_does_not_kill_the_stream(table):
    # A stray line on the adapter's stdin draws an error reply; the planner
    # client treats an error reply as a failed call, not a dead process.
    wire = spawn_external(adapter_command(table))
    try:
        wire._proc.stdin.write(b"garbage\n")
        wire._proc.stdin.flush()
        reply = json.loads(wire._read_line())
        assert reply == {"type": "error", "id": None, "message": "request is not JSON"}
        assert wire.predict(ETHANOL)[0].prior == 6 / 7
        assert wire.failed is False
    finally:
        wire.close()
