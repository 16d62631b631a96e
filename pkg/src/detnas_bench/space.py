"""Discrete YOLO-style architecture space.

Configurations are exposed as :class:`ArchConfig` values. Internally, and in
every hot loop (sampling, evolution, exhaustive sweeps), a configuration is a
row of 14 integer *genes*: the index of the chosen candidate in each
dimension's palette, in the fixed field order given by :data:`FIELDS`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

FIELDS = (
    "ch_p2", "ch_p3", "ch_p4", "ch_p5",
    "d_p2", "d_p3", "d_p4", "d_p5",
    "op_p2", "op_p3", "op_p4", "op_p5",
    "op_neck", "op_neck_down",
)

PALETTES = {
    "ch_p2": (128, 192, 256),
    "ch_p3": (256, 320, 384, 448, 512),
    "ch_p4": (384, 512, 640, 768),
    "ch_p5": (768, 1024, 1280),
    "d_p2": (1, 2),
    "d_p3": (2, 3, 4),
    "d_p4": (2, 3, 4),
    "d_p5": (2, 3),
    "op_p2": ("C2f", "C3k2"),
    "op_p3": ("C2f", "C3k2"),
    "op_p4": ("C2f", "C3k2", "C2fCIB"),
    "op_p5": ("C2f", "C3k2", "C2fCIB", "C2PSA"),
    "op_neck": ("C2f", "C3k2", "C2fCIB"),
    "op_neck_down": ("Conv", "SCDown"),
}

N_DIMS = len(FIELDS)
FEATURE_DIM = 24
SIZES = np.array([len(PALETTES[f]) for f in FIELDS], dtype=np.int64)
DIM = {name: i for i, name in enumerate(FIELDS)}
OP_FIELDS = FIELDS[8:]

_CH_P3 = np.array(PALETTES["ch_p3"])
_CH_P4 = np.array(PALETTES["ch_p4"])

# Valid (ch_p3, ch_p4) gene pairs in lexicographic order; the pair acts as a
# single 18-valued digit of the mixed-radix index.
VALID_PAIRS = np.array(
    [(i3, i4) for i3 in range(len(_CH_P3)) for i4 in range(len(_CH_P4))
     if _CH_P4[i4] >= _CH_P3[i3]],
    dtype=np.int64,
)
_PAIR_INDEX = np.full((len(_CH_P3), len(_CH_P4)), -1, dtype=np.int64)
_PAIR_INDEX[VALID_PAIRS[:, 0], VALID_PAIRS[:, 1]] = np.arange(len(VALID_PAIRS))
# Smallest admissible ch_p4 gene for each ch_p3 gene (admissible sets are suffixes).
MIN_P4_GENE = np.array(
    [int(np.argmax(_CH_P4 >= c)) for c in _CH_P3], dtype=np.int64
)

# Mixed-radix digits, most significant first: ch_p2, (ch_p3, ch_p4), ch_p5, ...
_RADICES = np.array(
    [SIZES[0], len(VALID_PAIRS)] + [int(s) for s in SIZES[3:]], dtype=np.int64
)
_PLACE = np.concatenate([np.cumprod(_RADICES[::-1])[::-1][1:], [1]]).astype(np.int64)
CARDINALITY = int(np.prod(_RADICES))

# One-hot block offsets inside the 24-dim encoding, per operator field.
_ONEHOT_OFFSET = {}
_off = 8
for _f in OP_FIELDS:
    _ONEHOT_OFFSET[_f] = _off
    _off += len(PALETTES[_f])
assert _off == FEATURE_DIM


class InvalidConfigError(ValueError):
    """Raised when an operation requires a valid configuration."""


@dataclass(frozen=True)
class ArchConfig:
    ch_p2: int
    ch_p3: int
    ch_p4: int
    ch_p5: int
    d_p2: int
    d_p3: int
    d_p4: int
    d_p5: int
    op_p2: str
    op_p3: str
    op_p4: str
    op_p5: str
    op_neck: str
    op_neck_down: str

    def values(self) -> tuple:
        return tuple(getattr(self, f) for f in FIELDS)

    def canonical(self) -> str:
        """Single-line ``key=value`` form in fixed field order."""
        return ",".join(f"{f}={getattr(self, f)}" for f in FIELDS)

    @classmethod
    def from_canonical(cls, text: str) -> "ArchConfig":
        parts = text.strip().split(",")
        if len(parts) != N_DIMS:
            raise ValueError(f"expected {N_DIMS} fields, got {len(parts)}: {text!r}")
        kwargs = {}
        for expected, part in zip(FIELDS, parts):
            key, sep, raw = part.partition("=")
            if not sep or key != expected:
                raise ValueError(f"expected field {expected!r} in {text!r}")
            kwargs[key] = raw if key.startswith("op_") else int(raw)
        return cls(**kwargs)

    def replace(self, **changes) -> "ArchConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ValidityResult:
    valid: bool
    field: Optional[str] = None
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


def validate(config: ArchConfig) -> ValidityResult:
    """Check every palette constraint plus ``ch_p4 >= ch_p3``.

    The first violation in field order is reported; the P4/P3 ordering rule is
    checked right after the ``ch_p4`` palette.
    """
    for name in FIELDS:
        value = getattr(config, name)
        if value not in PALETTES[name]:
            return ValidityResult(False, name, f"{name} palette")
        if name == "ch_p4" and config.ch_p4 < config.ch_p3:
            return ValidityResult(False, "ch_p4", "P4>=P3")
    return ValidityResult(True)


def _require_valid(config: ArchConfig) -> None:
    result = validate(config)
    if not result:
        raise InvalidConfigError(f"invalid config ({result.reason}): {config}")


def cardinality() -> int:
    return CARDINALITY


# --- genes -----------------------------------------------------------------

def genes_of(config: ArchConfig) -> np.ndarray:
    _require_valid(config)
    return np.array(
        [PALETTES[f].index(getattr(config, f)) for f in FIELDS], dtype=np.int64
    )


def config_from_genes(genes: Sequence[int]) -> ArchConfig:
    return ArchConfig(*(PALETTES[f][int(g)] for f, g in zip(FIELDS, genes)))


def configs_from_genes(genes: np.ndarray) -> list[ArchConfig]:
    return [config_from_genes(row) for row in np.asarray(genes)]


def genes_matrix(configs: Sequence[ArchConfig]) -> np.ndarray:
    if not configs:
        return np.empty((0, N_DIMS), dtype=np.int64)
    return np.stack([genes_of(c) for c in configs])


def genes_valid(genes: np.ndarray) -> np.ndarray:
    genes = np.atleast_2d(genes)
    in_range = np.all((genes >= 0) & (genes < SIZES), axis=1)
    ok = in_range.copy()
    ok[in_range] = genes[in_range, 2] >= MIN_P4_GENE[genes[in_range, 1]]
    return ok


def index_to_genes(index) -> np.ndarray:
    """Vectorized inverse of :func:`genes_to_index` (returns shape (n, 14))."""
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    if np.any((idx < 0) | (idx >= CARDINALITY)):
        raise IndexError(f"index out of range [0, {CARDINALITY})")
    digits = (idx[:, None] // _PLACE) % _RADICES
    out = np.empty((len(idx), N_DIMS), dtype=np.int64)
    out[:, 0] = digits[:, 0]
    out[:, 1:3] = VALID_PAIRS[digits[:, 1]]
    out[:, 3:] = digits[:, 2:]
    return out


def genes_to_index(genes: np.ndarray) -> np.ndarray:
    genes = np.atleast_2d(np.asarray(genes, dtype=np.int64))
    if not np.all(genes_valid(genes)):
        raise InvalidConfigError("genes outside the valid space")
    digits = np.empty((len(genes), len(_RADICES)), dtype=np.int64)
    digits[:, 0] = genes[:, 0]
    digits[:, 1] = _PAIR_INDEX[genes[:, 1], genes[:, 2]]
    digits[:, 2:] = genes[:, 3:]
    return digits @ _PLACE


def config_from_index(i: int) -> ArchConfig:
    i = int(i)
    if not 0 <= i < CARDINALITY:
        raise IndexError(f"index {i} out of range [0, {CARDINALITY})")
    return config_from_genes(index_to_genes(i)[0])


def index_of(config: ArchConfig) -> int:
    return int(genes_to_index(genes_of(config))[0])


def all_genes() -> np.ndarray:
    """Every valid configuration, in index order."""
    return index_to_genes(np.arange(CARDINALITY, dtype=np.int64))


# --- encoding --------------------------------------------------------------

_SCALAR_TABLE = [np.array(PALETTES[f], dtype=np.float64) for f in FIELDS[:8]]


def encode_genes(genes: np.ndarray) -> np.ndarray:
    """Map an (n, 14) gene matrix to (n, 24) feature vectors."""
    genes = np.atleast_2d(genes)
    n = len(genes)
    out = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    for j in range(8):
        out[:, j] = _SCALAR_TABLE[j][genes[:, j]]
    rows = np.arange(n)
    for f in OP_FIELDS:
        out[rows, _ONEHOT_OFFSET[f] + genes[:, DIM[f]]] = 1.0
    return out


def encode(config: ArchConfig) -> np.ndarray:
    return encode_genes(genes_of(config)[None, :])[0]


# --- genetic operators -----------------------------------------------------

def repair_genes(genes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Resample ch_p4 uniformly among admissible candidates where ch_p4 < ch_p3."""
    lo = MIN_P4_GENE[genes[:, 1]]
    bad = np.flatnonzero(genes[:, 2] < lo)
    if len(bad):
        span = len(_CH_P4) - lo[bad]
        genes[bad, 2] = lo[bad] + (rng.random(len(bad)) * span).astype(np.int64)
    return genes


def mutate_genes(genes: np.ndarray, mutation_prob: float,
                 rng: np.random.Generator) -> np.ndarray:
    genes = np.array(np.atleast_2d(genes), dtype=np.int64)
    hit = rng.random(genes.shape) < mutation_prob
    draws = (rng.random(genes.shape) * SIZES).astype(np.int64)
    genes[hit] = draws[hit]
    return repair_genes(genes, rng)


def crossover_genes(a: np.ndarray, b: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    take_a = rng.random(a.shape) < 0.5
    child = np.where(take_a, a, b).astype(np.int64)
    return repair_genes(child, rng)


def mutate(config: ArchConfig, mutation_prob: float,
           rng: np.random.Generator) -> ArchConfig:
    """Resample each dimension with probability ``mutation_prob``, then repair P4."""
    return config_from_genes(mutate_genes(genes_of(config), mutation_prob, rng)[0])


def uniform_crossover(a: ArchConfig, b: ArchConfig,
                      rng: np.random.Generator) -> ArchConfig:
    return config_from_genes(crossover_genes(genes_of(a), genes_of(b), rng)[0])


def random_genes(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform draws (with replacement) over the valid space."""
    return index_to_genes(rng.integers(0, CARDINALITY, size=n))


def space_info() -> dict:
    return {
        "cardinality": CARDINALITY,
        "fields": list(FIELDS),
        "palettes": {f: list(PALETTES[f]) for f in FIELDS},
        "feature_dim": FEATURE_DIM,
        "valid_p3_p4_pairs": len(VALID_PAIRS),
    }


FIRST_CONFIG = ArchConfig(*(PALETTES[f][0] for f in FIELDS))
