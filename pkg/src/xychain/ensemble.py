"""Deterministic disorder averaging.

Realizations are cut into fixed blocks. Each block is accumulated in index
order and blocks are merged in index order, so the result does not depend
on how many workers processed the blocks.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Any, Callable

import numpy as np

from .model import ChainSpec, EnsembleConfig, NumericalError

WORKERS_ENV = "XYCHAIN_WORKERS"
BLOCK_SIZE = 16


class Accumulator:
    """Streaming mean and variance (Welford), mergeable (Chan et al.)."""

    def __init__(self, shape=()):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def push(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.count += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other: Accumulator) -> Accumulator:
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        self.count = n
        return self

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return self.m2 / (self.count - 1)

    @property
    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.mean)
        return np.sqrt(self.variance / self.count)


@dataclass
class EnsembleResult:
    stats: dict[str, Accumulator]
    records: list[Any]

    def mean(self, key: str) -> np.ndarray:
        return self.stats[key].mean

    def stderr(self, key: str) -> np.ndarray:
        return self.stats[key].stderr

    @property
    def count(self) -> int:
        return max((acc.count for acc in self.stats.values()), default=0)


# a task maps (index, chain) to (values to average or None, per-realization record)
Task = Callable[[int, ChainSpec], tuple[dict[str, np.ndarray] | None, Any]]


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _run_block(config: EnsembleConfig, task: Task, indices: range):
    stats: dict[str, Accumulator] = {}
    records = []
    for i in indices:
        chain = config.realization(i)
        try:
            values, record = task(i, chain)
        except NumericalError as exc:
            raise NumericalError(str(exc), seed=config.disorder.base_seed, index=i) from exc
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"linear algebra failure: {exc}", seed=config.disorder.base_seed, index=i) from exc
        records.append(record)
        if values is None:
            continue
        for key, val in values.items():
            val = np.asarray(val, dtype=float)
            stats.setdefault(key, Accumulator(val.shape)).push(val)
    return stats, records


def run_ensemble(config: EnsembleConfig, task: Task, workers: int | None = None, block_size: int = BLOCK_SIZE) -> EnsembleResult:
    """Evaluate ``task`` on every realization and average its outputs."""
    R = config.disorder.realizations
    blocks = [range(s, min(s + block_size, R)) for s in range(0, R, block_size)]
    workers = default_workers() if workers is None else max(1, workers)
    if workers == 1 or len(blocks) == 1:
        parts = [_run_block(config, task, b) for b in blocks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(partial(_run_block, config, task), blocks))
    stats: dict[str, Accumulator] = {}
    records: list[Any] = []
    for block_stats, block_records in parts:
        for key, acc in block_stats.items():
            stats.setdefault(key, Accumulator(acc.mean.shape)).merge(acc)
        records.extend(block_records)
    return EnsembleResult(stats, records)
