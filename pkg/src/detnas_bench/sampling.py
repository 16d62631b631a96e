"""Random, cost-stratified, and Latin Hypercube sampling over the space."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import costs
from .space import (
    CARDINALITY, DIM, N_DIMS, SIZES, ArchConfig, configs_from_genes,
    index_to_genes, repair_genes,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("random", "stratified", "lhs")
DEFAULT_BINS = 8
REJECTION_FACTOR = 10_000


class SamplingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplePlan:
    strategy: str
    n: int
    seed: int
    bins: Optional[int] = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.strategy == "stratified" and (self.bins or DEFAULT_BINS) < 2:
            raise ValueError("stratified sampling needs bins >= 2")

    def run(self) -> list[ArchConfig]:
        if self.strategy == "random":
            return sample_random(self.n, self.seed)
        if self.strategy == "stratified":
            return sample_stratified(self.n, self.bins or DEFAULT_BINS, self.seed)
        return sample_lhs(self.n, self.seed)


def random_indices(n: int, rng: np.random.Generator, exclude=()) -> np.ndarray:
    """``n`` distinct uniform indices, skipping ``exclude``; collisions are redrawn."""
    if n > CARDINALITY - len(exclude):
        raise ValueError(f"cannot draw {n} distinct configs from the space")
    seen = set(int(i) for i in exclude)
    out = []
    while len(out) < n:
        for i in rng.integers(0, CARDINALITY, size=n - len(out)):
            i = int(i)
            if i not in seen:
                seen.add(i)
                out.append(i)
    return np.array(out, dtype=np.int64)


def sample_random_genes(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return index_to_genes(random_indices(n, np.random.default_rng(seed)))


def sample_random(n: int, seed: int) -> list[ArchConfig]:
    """Uniform sampling without replacement over the valid configs."""
    return configs_from_genes(sample_random_genes(n, seed))


# --- stratified ------------------------------------------------------------------

def bin_edges(bins: int) -> np.ndarray:
    """Equal-width total-cost edges over the full space."""
    lo, hi = costs.cost_range()
    return np.linspace(lo, hi, bins + 1)


def assign_bins(total_cost: np.ndarray, edges: np.ndarray) -> np.ndarray:
    bins = len(edges) - 1
    width = (edges[-1] - edges[0]) / bins
    b = np.floor((np.asarray(total_cost) - edges[0]) / width).astype(np.int64)
    return np.clip(b, 0, bins - 1)


def _quotas(n: int, bins: int) -> list[int]:
    base, extra = divmod(n, bins)
    return [base + (1 if b < extra else 0) for b in range(bins)]


def _nearest_open_bin(b: int, open_bins: list[bool]) -> Optional[int]:
    for dist in range(1, len(open_bins)):
        for cand in (b - dist, b + dist):
            if 0 <= cand < len(open_bins) and open_bins[cand]:
                return cand
    return None


def sample_stratified_genes(n: int, bins: int, seed: int) -> np.ndarray:
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if n < bins:
        raise ValueError(f"n ({n}) must be >= bins ({bins})")
    rng = np.random.default_rng(seed)
    space_costs = costs.space_costs()
    edges = bin_edges(bins)
    quotas = _quotas(n, bins)
    open_bins = [True] * bins
    taken: set[int] = set()
    chosen: list[list[int]] = [[] for _ in range(bins)]
    pending = list(range(bins))
    while pending:
        b = pending.pop(0)
        budget = REJECTION_FACTOR * quotas[b]
        rejections = 0
        batch = max(256, 8 * quotas[b])
        while len(chosen[b]) < quotas[b] and rejections < budget:
            idx = rng.integers(0, CARDINALITY, size=batch)
            in_bin = assign_bins(space_costs[idx], edges) == b
            for i, ok in zip(idx.tolist(), in_bin.tolist()):
                if len(chosen[b]) >= quotas[b]:
                    break
                if ok and i not in taken:
                    taken.add(i)
                    chosen[b].append(i)
                else:
                    rejections += 1
                    if rejections >= budget:
                        break
        shortfall = quotas[b] - len(chosen[b])
        if shortfall:
            open_bins[b] = False
            quotas[b] = len(chosen[b])
            target = _nearest_open_bin(b, open_bins)
            msg = f"stratum {b} short by {shortfall} after {rejections} rejections"
            if target is None:
                raise RuntimeError(msg + "; no stratum left to absorb it")
            quotas[target] += shortfall
            if target not in pending:
                pending.append(target)
            warnings.warn(f"{msg}; moved to stratum {target}", SamplingWarning, stacklevel=2)
            logger.warning("%s; moved to stratum %d", msg, target)
    order = [i for b in range(bins) for i in chosen[b]]
    return index_to_genes(np.array(order, dtype=np.int64))


def sample_stratified(n: int, bins: int, seed: int) -> list[ArchConfig]:
    """Equal quotas per equal-width total-cost stratum, filled by rejection sampling.

    Output is grouped by stratum, lightest first.
    """
    return configs_from_genes(sample_stratified_genes(n, bins, seed))


# --- Latin hypercube -------------------------------------------------------------

def sample_lhs_genes(n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    genes = np.empty((n, N_DIMS), dtype=np.int64)
    for d in range(N_DIMS):
        k = int(SIZES[d])
        base, extra = divmod(n, k)
        counts = np.full(k, base, dtype=np.int64)
        counts[rng.choice(k, size=extra, replace=False)] += 1
        column = np.repeat(np.arange(k, dtype=np.int64), counts)
        genes[:, d] = rng.permutation(column)
    return repair_genes(genes, rng)


def sample_lhs(n: int, seed: int) -> list[ArchConfig]:
    """Per-dimension balanced columns, shuffled independently, then P4 repair.

    Every dimension except ``ch_p4`` keeps exact balance: each candidate
    appears ``floor(n/k)`` or ``ceil(n/k)`` times.
    """
    return configs_from_genes(sample_lhs_genes(n, seed))


REPAIRED_DIMS = (DIM["ch_p4"],)
