"""64-bit FNV-1a, scalar and vectorized over gene matrices."""
from __future__ import annotations

import numba
import numpy as np

from .space import FIELDS, PALETTES

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK
    return h


def config_id(canonical: str) -> str:
    """Stable record id: FNV-1a 64 of the canonical string, as 16 hex digits."""
    return f"{fnv1a_64(canonical.encode('utf-8')):016x}"


def unit_interval(h) -> np.ndarray:
    """Linear map of a 64-bit hash onto [-1, 1]."""
    return 2.0 * (np.asarray(h, dtype=np.float64) / float(_MASK)) - 1.0


def _segment_table():
    # segment bytes for every (dimension, candidate): ",field=value"
    segments = []
    for d, f in enumerate(FIELDS):
        sep = "," if d else ""
        segments.append([f"{sep}{f}={v}".encode() for v in PALETTES[f]])
    width = max(len(s) for row in segments for s in row)
    max_k = max(len(row) for row in segments)
    table = np.zeros((len(FIELDS), max_k, width), dtype=np.uint8)
    lengths = np.zeros((len(FIELDS), max_k), dtype=np.int64)
    for d, row in enumerate(segments):
        for k, s in enumerate(row):
            table[d, k, :len(s)] = np.frombuffer(s, dtype=np.uint8)
            lengths[d, k] = len(s)
    return table, lengths


_TABLE, _LENGTHS = _segment_table()


@numba.njit(cache=True)
def _hash_genes(genes, table, lengths, suffix):
    n, dims = genes.shape
    out = np.empty(n, dtype=np.uint64)
    prime = np.uint64(FNV_PRIME)
    for i in range(n):
        h = np.uint64(FNV_OFFSET)
        for d in range(dims):
            k = genes[i, d]
            for j in range(lengths[d, k]):
                h = (h ^ np.uint64(table[d, k, j])) * prime
        for j in range(suffix.shape[0]):
            h = (h ^ np.uint64(suffix[j])) * prime
        out[i] = h
    return out


def hash_genes(genes: np.ndarray, suffix: bytes = b"") -> np.ndarray:
    """FNV-1a 64 of ``canonical(config) + suffix`` for every gene row."""
    genes = np.ascontiguousarray(np.atleast_2d(genes), dtype=np.int64)
    return _hash_genes(genes, _TABLE, _LENGTHS, np.frombuffer(suffix, dtype=np.uint8).copy())
