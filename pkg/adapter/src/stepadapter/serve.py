"""Serve a reaction-table file over the line-JSON single-step protocol.

Reference implementation of the external-predictor boundary: one hello
line on startup, then one JSON reply per request line until stdin closes.
The frequency table stands in for a real model; swap ``table.get`` in
``_reply`` for a neural single-step call and every protocol obligation
stays met.

Matching is textual. The planner queries with canonical SMILES, so a
table keyed by canonical spellings answers reply-for-reply like the
in-process table predictor; other spellings still speak the protocol but
those products are never asked for.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass

PROTOCOL_VERSION = 1
DEFAULT_MAX_TOP_K = 50

Row = tuple[tuple[str, ...], float]


@dataclass(frozen=True)
class AdapterConfig:
    """Where the table lives and how the process should behave."""

    reactions: str
    max_top_k: int = DEFAULT_MAX_TOP_K
    latency_s: float = 0.0

    def __post_init__(self) -> None:
        if self.max_top_k < 1:
            raise ValueError("max_top_k must be >= 1")
        if self.latency_s < 0:
            raise ValueError("latency must be >= 0")


def load_table(path: str) -> dict[str, list[Row]]:
    """product -> [(reactants, prob)], prob descending.

    Mirrors the planner's table arithmetic so differential comparisons
    are exact: integer counts (default 1) merged per sorted reactant
    multiset, renormalized over every row of a product before identity
    rows are dropped, ordered by prob descending then reactant multiset.
    """
    counts: dict[str, dict[tuple[str, ...], int]] = {}
    n_rows = 0
    with open(path, "rt", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if not 2 <= len(fields) <= 3 or not fields[0] or not fields[1]:
                raise ValueError(
                    f"{path}:{lineno}: expected product<TAB>reactants[<TAB>count]"
                )
            count = 1
            if len(fields) == 3 and fields[2].strip():
                try:
                    count = int(fields[2])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: count must be an integer") from None
                if count < 1:
                    raise ValueError(f"{path}:{lineno}: count must be >= 1")
            n_rows += 1
            multiset = tuple(sorted(fields[1].split(".")))
            bucket = counts.setdefault(fields[0], {})
            bucket[multiset] = bucket.get(multiset, 0) + count
    if not n_rows:
        raise ValueError(f"{path}: reaction file has no reactions")

    table: dict[str, list[Row]] = {}
    for product, bucket in counts.items():
        total = sum(bucket.values())
        entries = [
            (multiset, count / total)
            for multiset, count in bucket.items()
            if product not in multiset
        ]
        entries.sort(key=lambda item: (-item[1], item[0]))
        table[product] = entries
    return table


def _reply(table: dict[str, list[Row]], config: AdapterConfig, line: str) -> dict:
    try:
        request = json.loads(line)
    except ValueError:
        return {"type": "error", "id": None, "message": "request is not JSON"}
    request_id = request.get("id") if isinstance(request, dict) else None
    if not isinstance(request, dict) or request.get("type") != "predict":
        return {"type": "error", "id": request_id, "message": "expected a predict request"}
    smiles = request.get("smiles")
    if not isinstance(smiles, str) or not smiles:
        return {"type": "error", "id": request_id, "message": "predict needs a smiles string"}
    top_k = request.get("top_k", config.max_top_k)
    if not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1:
        return {"type": "error", "id": request_id, "message": "top_k must be an integer >= 1"}
    if config.latency_s:
        time.sleep(config.latency_s)  # pretend to be a slow model
    results = [
        {"reactants": list(reactants), "prob": prob}
        for reactants, prob in table.get(smiles, [])[: min(top_k, config.max_top_k)]
    ]
    return {"type": "predictions", "id": request_id, "results": results}


def serve(config: AdapterConfig, stdin=sys.stdin, stdout=sys.stdout) -> None:
    """Answer requests until the input stream closes.

    The table loads before the hello line, so a bad reactions file kills
    the process while the client is still waiting for the handshake. A
    malformed request gets an error reply, never a crash: one broken
    client line must not take down a server mid-benchmark.
    """
    table = load_table(config.reactions)

    def emit(message: dict) -> None:
        # json floats print shortest-round-trip (up to 17 significant
        # digits), so the client parses back the exact double
        print(json.dumps(message), file=stdout, flush=True)

    emit({"type": "hello", "version": PROTOCOL_VERSION, "max_top_k": config.max_top_k})
    for line in stdin:
        if line.strip():
            emit(_reply(table, config, line))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stepadapter",
        description="Serve a TSV reaction table over the line-JSON predictor protocol.",
    )
    parser.add_argument(
        "--reactions", required=True, help="product<TAB>reactants[<TAB>count] rows"
    )
    parser.add_argument(
        "--latency", type=float, default=0.0, help="seconds to stall each prediction"
    )
    parser.add_argument(
        "--max-top-k", type=int, default=DEFAULT_MAX_TOP_K,
        help="cap advertised in the handshake",
    )
    args = parser.parse_args(argv)
    try:
        serve(AdapterConfig(
            reactions=args.reactions, max_top_k=args.max_top_k, latency_s=args.latency
        ))
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
