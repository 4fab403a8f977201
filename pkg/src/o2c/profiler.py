"""Training-data collection: label objects at allocation, read content at free."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .dtree.features import DEFAULT_FEATURE_WORDS, content_to_words
from .errors import SchemaError
from .trace_model import CompartmentSpec, EventKind, TraceEvent, dump_trace

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    X: np.ndarray                 # (n, L) uint64
    y_type: np.ndarray            # (n,) int64
    y_comp: np.ndarray            # (n,) int64, 1 = in-compartment
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.uint64).reshape(-1, self.n_words)
        self.y_type = np.asarray(self.y_type, dtype=np.int64)
        self.y_comp = np.asarray(self.y_comp, dtype=np.int64)
        if not (len(self.X) == len(self.y_type) == len(self.y_comp)):
            raise SchemaError("feature and label columns differ in length")
        self.meta.setdefault("histogram", _histogram(self.y_type))

    @property
    def n_words(self) -> int:
        if "L" in self.meta:
            return int(self.meta["L"])
        return int(np.asarray(self.X).shape[1]) if np.asarray(self.X).ndim == 2 else 0

    def __len__(self) -> int:
        return len(self.y_type)

    def labels(self, granularity: str) -> np.ndarray:
        return self.y_comp if str(granularity).lower().startswith("comp") else self.y_type

    def __eq__(self, other) -> bool:
        # provenance fields in meta do not survive CSV and are not compared
        return (isinstance(other, Dataset) and np.array_equal(self.X, other.X)
                and np.array_equal(self.y_type, other.y_type)
                and np.array_equal(self.y_comp, other.y_comp) and self.n_words == other.n_words)


def _histogram(y) -> dict:
    return {str(k): v for k, v in sorted(Counter(int(t) for t in y).items())}


def trace_digest(trace: Iterable[TraceEvent]) -> str:
    return hashlib.sha256(dump_trace(trace).encode()).hexdigest()


def profile_trace(trace: Iterable[TraceEvent], spec: CompartmentSpec,
                  n_words: int = DEFAULT_FEATURE_WORDS) -> Dataset:
    """One row per Free whose address matches a recorded typed Alloc.

    Collection covers every allocation in the trace, kernel and compartment.
    """
    trace = list(trace)
    live: dict[int, int] = {}
    rows, types = [], []
    skipped = 0
    for ev in trace:
        if ev.kind is EventKind.ALLOC:
            if ev.type_id is not None:
                live[ev.addr] = ev.type_id
            else:
                live.pop(ev.addr, None)
        elif ev.kind is EventKind.FREE:
            type_id = live.pop(ev.addr, None)
            if type_id is None:
                continue
            if ev.payload is None:
                skipped += 1
                log.warning("tick %d: free at %#x has no payload; row skipped", ev.tick, ev.addr)
                continue
            rows.append(content_to_words(ev.payload, n_words))
            types.append(type_id)
    X = np.stack(rows) if rows else np.zeros((0, n_words), dtype=np.uint64)
    y_comp = [int(spec.labels_in_compartment(t)) for t in types]
    meta = {"L": n_words, "source_sha256": trace_digest(trace), "skipped": skipped}
    return Dataset(X, np.array(types, dtype=np.int64), np.array(y_comp, dtype=np.int64), meta)


def header(n_words: int) -> list[str]:
    return [f"w{i}" for i in range(n_words)] + ["type_id", "in_compartment"]


def dumps_dataset(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header(ds.n_words))
    for words, t, c in zip(ds.X.tolist(), ds.y_type.tolist(), ds.y_comp.tolist()):
        w.writerow([*words, t, c])
    return buf.getvalue()


def export_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_dataset(ds))


def loads_dataset(text: str, n_words: int | None = None) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        head = next(reader)
    except StopIteration:
        raise SchemaError("dataset file is empty") from None
    L = len(head) - 2
    if L < 1 or head != header(L) or (n_words is not None and L != n_words):
        raise SchemaError(f"unexpected dataset header: {','.join(head[:3])}...")
    X, yt, yc = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != L + 2:
            raise SchemaError(f"expected {L + 2} columns, got {len(row)}", lineno)
        try:
            vals = [int(v) for v in row]
        except ValueError:
            raise SchemaError("non-integer cell", lineno) from None
        if any(v < 0 or v >= 1 << 64 for v in vals[:L]) or vals[-1] not in (0, 1):
            raise SchemaError("cell out of range", lineno)
        X.append(vals[:L])
        yt.append(vals[L])
        yc.append(vals[L + 1])
    arr = np.array(X, dtype=np.uint64).reshape(-1, L)
    return Dataset(arr, np.array(yt, dtype=np.int64), np.array(yc, dtype=np.int64), {"L": L})


def import_dataset(path, n_words: int | None = None) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return loads_dataset(fh.read(), n_words)
