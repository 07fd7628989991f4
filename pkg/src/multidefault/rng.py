"""Seed-derived, schedule-independent random streams.

Work is cut into fixed-size blocks. Block ``b`` of purpose ``k`` draws from a
Philox generator keyed by ``SeedSequence(master, spawn_key=(k, b))``, so a
path's random numbers depend only on its index, never on which worker ran
it. Results are merged in block order.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

BLOCK = 1 << 16

# purpose codes keep streams for different jobs disjoint
DEFAULTS = 1
TIE_REDRAW = 2
BROWNIAN = 3
BRIDGE = 4
STRATEGY_FUZZ = 5
OPTIMIZER_STARTS = 6
RANDOM_FAMILIES = 7
TERMINAL_WEALTH = 8

T = TypeVar("T")


def stream(seed: int, purpose: int, *index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), *(int(i) for i in index)))
    return np.random.Generator(np.random.Philox(ss))


def blocks(count: int, size: int = BLOCK) -> list[tuple[int, int, int]]:
    """``(block_index, start, stop)`` triples covering ``range(count)``."""
    return [(b, lo, min(lo + size, count)) for b, lo in enumerate(range(0, count, size))]


def map_blocks(fn: Callable[[int, int, int], T], count: int, threads: int = 1, size: int = BLOCK) -> list[T]:
    """Apply ``fn(block, start, stop)`` over all blocks; output is in block order."""
    work = blocks(count, size)
    if threads <= 1 or len(work) <= 1:
        return [fn(*w) for w in work]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda w: fn(*w), work))


def concat(parts: Iterable[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(parts), axis=0)


def derive_seed(seed: int, *key: int) -> int:
    """64-bit child seed for an independent sub-experiment identified by ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
