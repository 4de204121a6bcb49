"""
Work accounting for kernels and dense operations.

A WorkCounter is activated with `counting(counter)`; every tensor op and
sparse kernel reports multiply-accumulates (or value touches for elementwise
work) to the active counter under the current stage name. Memory is accounted
analytically from output shapes, never from the allocator.
"""
import time
from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from typing import Iterator, Optional


@dataclass
class WorkCounter:
    """Per-stage multiply-accumulate, nnz and byte accounting for one run."""
    macs: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    ops: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    peak_bytes: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    wall_s: dict[str, float] = field(default_factory=lambda: defaultdict(float))
    nnz: int = 0

    def add(self, stage: str, op: str, macs: int, out_bytes: int = 0) -> None:
        self.macs[stage] += int(macs)
        self.ops[op] += int(macs)
        if out_bytes > self.peak_bytes[stage]:
            self.peak_bytes[stage] = int(out_bytes)

    def add_nnz(self, count: int) -> None:
        self.nnz += int(count)

    def total_macs(self, *stages: str) -> int:
        if not stages:
            return sum(self.macs.values())
        return sum(self.macs.get(s, 0) for s in stages)

    def reset(self) -> None:
        self.macs.clear()
        self.ops.clear()
        self.peak_bytes.clear()
        self.wall_s.clear()
        self.nnz = 0


_active_counter: ContextVar[Optional[WorkCounter]] = ContextVar("active_counter", default=None)
_active_stage: ContextVar[str] = ContextVar("active_stage", default="dense")


@contextmanager
def counting(counter: WorkCounter) -> Iterator[WorkCounter]:
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Attribute work and wall time to `name` until the block exits."""
    token = _active_stage.set(name)
    started = time.perf_counter()
    try:
        yield
    finally:
        _active_stage.reset(token)
        counter = _active_counter.get()
        if counter is not None:
            counter.wall_s[name] += time.perf_counter() - started


def current_stage() -> str:
    return _active_stage.get()


def record_work(op: str, macs: int, out_bytes: int = 0) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(_active_stage.get(), op, macs, out_bytes)


def record_nnz(count: int) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add_nnz(count)
