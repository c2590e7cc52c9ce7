"""Seed derivation and the process-wide parallelism budget.

Every random draw in the package goes through a Philox generator keyed by an
explicit 64-bit seed; nothing touches numpy's global RNG state.
"""
from __future__ import annotations

import hashlib
import os
from contextlib import contextmanager
from typing import Iterator

import numpy as np

SEED_MAX = 2**64 - 1
THREADS_ENV = "ADAGIO_THREADS"

_thread_budget: int | None = None


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def derive_seed(seed: int, purpose: str) -> int:
    """Named sub-seed: blake2b(seed || purpose) truncated to 64 bits."""
    seed = check_seed(seed)
    digest = hashlib.blake2b(
        seed.to_bytes(8, "little") + purpose.encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=check_seed(seed)))


def thread_count() -> int:
    """Current worker budget: explicit setting, then $ADAGIO_THREADS, then all CPUs."""
    if _thread_budget is not None:
        return _thread_budget
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if value >= 1:
            return value
    return os.cpu_count() or 1


def set_thread_count(threads: int | None) -> None:
    global _thread_budget
    if threads is not None and threads < 1:
        raise ValueError("thread count must be >= 1")
    _thread_budget = threads


@contextmanager
def thread_budget(threads: int | None) -> Iterator[int]:
    """Temporarily cap package workers and BLAS threads."""
    from threadpoolctl import threadpool_limits

    previous = _thread_budget
    set_thread_count(threads)
    try:
        with threadpool_limits(limits=thread_count()):
            yield thread_count()
    finally:
        set_thread_count(previous)
