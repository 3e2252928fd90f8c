"""Single-step retrosynthesis model interface.

Two implementations of one contract: a frequency-table predictor built
from a TSV reaction file, and a client for external predictor processes
speaking line-delimited JSON over stdin/stdout.  Both return ranked
``Prediction`` lists; priors are never renormalized after filtering or
truncation, the search consumes them as given.
"""

from __future__ import annotations

import json
import os
import select
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass

from .molgraph import ParseError, canonicalize

DEFAULT_TOP_K = 50
DEFAULT_TIMEOUT_S = 600.0
PROTOCOL_VERSION = 1


class TransportError(Exception):
    """External predictor failed at the process or protocol level.

    Distinct from an empty prediction list: the caller can tell "model
    says no disconnection" apart from "model unreachable".
    """


@dataclass(frozen=True)
class Prediction:
    """One proposed retrosynthetic disconnection.

    ``reactants`` is a multiset of canonical keys stored as a sorted
    tuple; ``prior`` is the model's probability in (0, 1]; ``rank`` is
    1-based within its prediction list.
    """

    reactants: tuple[str, ...]
    prior: float
    rank: int


@dataclass(frozen=True)
class PredictorConfig:
    """How to obtain a predictor: a table file or a spawn command."""

    kind: str
    source: str
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.kind not in ("table", "external"):
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    @classmethod
    def from_spec(cls, spec: str, top_k: int = DEFAULT_TOP_K) -> "PredictorConfig":
        """Parse ``table:<path>`` or ``cmd:<spawn command>``."""
        scheme, sep, rest = spec.partition(":")
        if not sep or not rest:
            raise ValueError(f"predictor spec {spec!r} is not table:<path> or cmd:<command>")
        if scheme == "table":
            return cls(kind="table", source=rest, top_k=top_k)
        if scheme == "cmd":
            return cls(kind="external", source=rest, top_k=top_k)
        raise ValueError(f"unknown predictor scheme {scheme!r}")


def normalize_predictions(
    raw: list[tuple[list[str], float]],
    product: str | None = None,
    diagnostics: dict[str, int] | None = None,
) -> list[Prediction]:
    """Filter, dedupe, and rank raw (reactant SMILES list, prior) pairs.

    Drops entries with unparsable reactants, empty reactant lists, priors
    outside (0, 1], or any reactant equal to ``product``; keeps the max
    prior per reactant multiset; ranks 1..k by prior descending, ties by
    reactant key.  Filtering is silent; pass ``diagnostics`` to count
    drops by reason.
    """

    def drop(reason: str) -> None:
        if diagnostics is not None:
            diagnostics[reason] = diagnostics.get(reason, 0) + 1

    best: dict[tuple[str, ...], float] = {}
    for reactants, prior in raw:
        if not reactants:
            drop("empty")
            continue
        if not 0.0 < prior <= 1.0:
            drop("bad_prior")
            continue
        try:
            multiset = tuple(sorted(canonicalize(r) for r in reactants))
        except ParseError:
            drop("unparsable")
            continue
        if product is not None and product in multiset:
            drop("identity_loop")
            continue
        if multiset in best:
            drop("duplicate")
            if prior > best[multiset]:
                best[multiset] = prior
        else:
            best[multiset] = prior
    ordered = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return [
        Prediction(reactants=multiset, prior=prior, rank=pos + 1)
        for pos, (multiset, prior) in enumerate(ordered)
    ]


class TablePredictor:
    """Immutable product -> ranked predictions lookup; thread-safe.

    Lookups expect canonical keys (the search always holds them); an
    unknown product yields an empty list, never an error.
    """

    __slots__ = ("_table", "source")

    def __init__(self, table: dict[str, list[Prediction]], source: str = "memory"):
        self._table = table
        self.source = source

    def predict(self, product: str, top_k: int = DEFAULT_TOP_K) -> list[Prediction]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        return list(self._table.get(product, ())[:top_k])

    def close(self) -> None:
        pass


def build_table_predictor(path: str) -> TablePredictor:
    """Load a TSV reaction file into a frequency-table predictor.

    Rows are product<TAB>reactants-dot-joined<TAB>count with count
    optional (default 1).  Each product's priors are count ratios over
    all its rows, computed before filtering, so they sum to 1 unless an
    identity loop was dropped.  Bad rows are errors, not skips: a
    reaction file is curated input, unlike a stock file.
    """
    counts: dict[str, dict[tuple[str, ...], int]] = {}
    n_rows = 0
    with open(path, "rt", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if not 2 <= len(fields) <= 3:
                raise ValueError(f"{path}:{lineno}: expected 2 or 3 tab-separated fields")
            try:
                product = canonicalize(fields[0])
                multiset = tuple(sorted(canonicalize(r) for r in fields[1].split(".")))
            except ParseError as err:
                raise ValueError(f"{path}:{lineno}: {err}") from err
            count = 1
            if len(fields) == 3 and fields[2].strip():
                try:
                    count = int(fields[2])
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: count must be an integer") from None
                if count < 1:
                    raise ValueError(f"{path}:{lineno}: count must be >= 1")
            n_rows += 1
            bucket = counts.setdefault(product, {})
            bucket[multiset] = bucket.get(multiset, 0) + count
    if not n_rows:
        raise ValueError(f"{path}: reaction file has no reactions")

    table: dict[str, list[Prediction]] = {}
    for product, bucket in counts.items():
        total = sum(bucket.values())
        entries = [
            (multiset, count / total)
            for multiset, count in bucket.items()
            if product not in multiset
        ]
        entries.sort(key=lambda item: (-item[1], item[0]))
        table[product] = [
            Prediction(reactants=multiset, prior=prior, rank=pos + 1)
            for pos, (multiset, prior) in enumerate(entries)
        ]
    return TablePredictor(table, source=str(path))


class ExternalPredictor:
    """Line-JSON client for a child-process predictor.

    One handle owns one child process and one request stream with
    strictly increasing ids.  The wire admits no interleaving, so a
    handle is bound to the thread that spawned it; concurrent workers
    each spawn their own.  Any process or protocol failure marks the
    handle failed for good; an in-protocol error reply fails only the
    current call.
    """

    def __init__(self, command: str | list[str], timeout_s: float = DEFAULT_TIMEOUT_S):
        args = shlex.split(command) if isinstance(command, str) else list(command)
        self._timeout_s = float(timeout_s)
        self._owner = threading.get_ident()
        self._buffer = bytearray()
        self._next_id = 1
        self._failed: str | None = None
        self.max_top_k = 0
        try:
            self._proc = subprocess.Popen(
                args,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as err:
            self._failed = str(err)
            raise TransportError(f"failed to spawn predictor: {err}") from err
        hello = self._read_message()
        if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
            self._fail(f"bad handshake: {hello!r}")
        k = hello.get("max_top_k")
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            self._fail(f"handshake advertised max_top_k {k!r}")
        self.max_top_k = k

    def _fail(self, message: str) -> None:
        self._failed = message
        try:
            self._proc.kill()
        except OSError:
            pass
        raise TransportError(message)

    def _read_line(self) -> bytes:
        deadline = time.monotonic() + self._timeout_s
        fd = self._proc.stdout.fileno()
        while True:
            newline = self._buffer.find(b"\n")
            if newline >= 0:
                line = bytes(self._buffer[:newline])
                del self._buffer[: newline + 1]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0 or not select.select([fd], [], [], remaining)[0]:
                self._fail(f"no reply within {self._timeout_s} s")
            chunk = os.read(fd, 65536)
            if not chunk:
                self._fail("predictor process closed its output")
            self._buffer.extend(chunk)

    def _read_message(self) -> dict:
        line = self._read_line()
        try:
            message = json.loads(line)
        except ValueError:
            self._fail(f"reply is not JSON: {line[:200]!r}")
        if not isinstance(message, dict):
            self._fail(f"reply is not an object: {line[:200]!r}")
        return message

    def predict(self, product: str, top_k: int = DEFAULT_TOP_K) -> list[Prediction]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        if threading.get_ident() != self._owner:
            raise RuntimeError("external predictor handles must not be shared across threads")
        if self._failed is not None:
            raise TransportError(f"predictor already failed: {self._failed}")
        request_id = self._next_id
        self._next_id += 1
        k = min(top_k, self.max_top_k)
        request = {"type": "predict", "id": request_id, "smiles": product, "top_k": k}
        try:
            self._proc.stdin.write((json.dumps(request) + "\n").encode("utf-8"))
            self._proc.stdin.flush()
        except OSError:
            self._fail("predictor process closed its input")
        reply = self._read_message()
        kind = reply.get("type")
        if reply.get("id") != request_id or kind not in ("predictions", "error"):
            self._fail(f"reply out of protocol: id {reply.get('id')!r}, type {kind!r}")
        if kind == "error":
            raise TransportError(str(reply.get("message", "predictor error")))
        results = reply.get("results")
        if not isinstance(results, list):
            self._fail("predictions reply without a results list")
        raw: list[tuple[list[str], float]] = []
        for item in results:
            if (
                not isinstance(item, dict)
                or not isinstance(item.get("reactants"), list)
                or not all(isinstance(r, str) for r in item["reactants"])
                or not isinstance(item.get("prob"), (int, float))
                or isinstance(item.get("prob"), bool)
            ):
                self._fail(f"malformed prediction entry: {item!r}")
            raw.append((item["reactants"], float(item["prob"])))
        return normalize_predictions(raw, product=product)[:k]

    @property
    def failed(self) -> bool:
        return self._failed is not None

    def close(self) -> None:
        """Close the request stream (adapters exit on EOF) and reap."""
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc.wait()

    def __enter__(self) -> "ExternalPredictor":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def spawn_external(command: str | list[str], timeout_s: float = DEFAULT_TIMEOUT_S) -> ExternalPredictor:
    """Spawn a predictor child process and perform the handshake."""
    return ExternalPredictor(command, timeout_s=timeout_s)


def make_predictor(config: PredictorConfig, timeout_s: float = DEFAULT_TIMEOUT_S):
    """Build the predictor a config describes.

    External handles are not shareable; call once per worker.
    """
    if config.kind == "table":
        return build_table_predictor(config.source)
    return spawn_external(config.source, timeout_s=timeout_s)
