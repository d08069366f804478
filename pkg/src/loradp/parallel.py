"""Ordered fan-out of pure tasks over a process pool."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], parallelism: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally across ``parallelism`` processes.

    Results always come back in input order, so any reduction over them is
    independent of the worker count.
    """
    items = list(items)
    if parallelism <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(parallelism, len(items))) as pool:
        return list(pool.map(fn, items))
