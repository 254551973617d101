"""Deterministic seeding: one global seed fans out to named per-task streams."""

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def fnv1a64_array(arr) -> int:
    """FNV-1a over an ndarray's little-endian buffer (chunked to keep memory flat)."""
    a = np.ascontiguousarray(arr)
    if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and not np.little_endian):
        a = a.astype(a.dtype.newbyteorder("<"))
    h = FNV_OFFSET
    view = a.view(np.uint8).ravel()
    for start in range(0, view.size, 1 << 20):
        chunk = view[start:start + (1 << 20)].tobytes()
        for byte in chunk:
            h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def stream(seed: int, label: str) -> np.random.Generator:
    """Counter-based generator for (seed, label); independent across labels.

    Philox keyed by hash(seed, label) gives parallel-safe, thread-count
    independent streams: the same (seed, label) always yields the same
    sequence no matter how many other streams are drawn concurrently.
    """
    key = fnv1a64(f"{seed}:{label}".encode())
    return np.random.Generator(np.random.Philox(key=key))
