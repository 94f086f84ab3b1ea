"""
Per-query observability record.

A QueryTrace is owned by one inference query. Stages append their wall
time; chunk fetches append per-type records; totals are always derived
from the records, never stored separately.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Set
import threading
import time


@dataclass
class StageTiming:
    name: str
    ms: float


@dataclass
class FetchRecord:
    """Chunk traffic for one node type."""

    node_type: str
    chunks_loaded: Set[int] = field(default_factory=set)
    chunks_total: int = 0
    bytes_loaded: int = 0
    rows: int = 0


@dataclass
class QueryTrace:
    stages: List[StageTiming] = field(default_factory=list)
    fetches: Dict[str, FetchRecord] = field(default_factory=dict)
    weight_bytes: int = 0
    multiply_adds: int = 0
    peak_resident_bytes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time the enclosed block as one stage."""
        started = time.perf_counter()
        try:
            yield
        finally:
            self.stages.append(StageTiming(name, (time.perf_counter() - started) * 1000.0))

    def record_fetch(self, node_type: str, chunks: Set[int], chunks_total: int, nbytes: int, rows: int) -> None:
        with self._lock:
            record = self.fetches.setdefault(node_type, FetchRecord(node_type, chunks_total=chunks_total))
            record.chunks_loaded |= set(chunks)
            record.bytes_loaded += nbytes
            record.rows += rows

    def note_resident(self, nbytes: int) -> None:
        self.peak_resident_bytes = max(self.peak_resident_bytes, int(nbytes))

    @property
    def chunks_loaded(self) -> int:
        return sum(len(r.chunks_loaded) for r in self.fetches.values())

    @property
    def chunks_total(self) -> int:
        return sum(r.chunks_total for r in self.fetches.values())

    @property
    def bytes_loaded(self) -> int:
        return sum(r.bytes_loaded for r in self.fetches.values())

    @property
    def total_ms(self) -> float:
        return sum(s.ms for s in self.stages)

    def counters(self) -> dict:
        """Deterministic part of the trace (no timings)."""
        return {
            "bytes_loaded": self.bytes_loaded,
            "weight_bytes": self.weight_bytes,
            "chunks_loaded": {t: sorted(r.chunks_loaded) for t, r in sorted(self.fetches.items())},
            "chunks_total": {t: r.chunks_total for t, r in sorted(self.fetches.items())},
            "multiply_adds": self.multiply_adds,
            "peak_resident_bytes": self.peak_resident_bytes,
        }

    def to_dict(self) -> dict:
        data = self.counters()
        data["stage_ms"] = {s.name: round(s.ms, 3) for s in self.stages}
        data["total_ms"] = round(self.total_ms, 3)
        return data
