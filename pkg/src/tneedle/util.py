"""Shared plumbing: deterministic parallel mapping, seed derivation, content hashing."""

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def parallel_map(fn, items, threads=1):
    """Map fn over items, optionally on a thread pool.

    Results come back in input order and are identical for any thread count;
    threads only cap concurrency, never change the work partition.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def content_hash(data) -> bytes:
    """Identity of an array by value: digest over shape plus raw bytes."""
    arr = np.ascontiguousarray(data)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.digest()


def hash_seed(*parts) -> int:
    """Derive a 64-bit RNG seed from byte strings and integers.

    Used wherever randomness must be keyed by content rather than by
    positional index, so permuting inputs cannot change the streams.
    """
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bytes):
            h.update(p)
        elif isinstance(p, str):
            h.update(p.encode())
        else:
            h.update(int(p).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little")
