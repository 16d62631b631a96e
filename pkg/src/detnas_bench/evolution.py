"""Latency-constrained evolutionary search with truncation selection and elitism.

Fitness and latency are *batch* callables over (n, 14) gene matrices so that
surrogate predictions and cost proxies run vectorized; :func:`per_config`
adapts a scalar ``ArchConfig -> float`` function. Evaluation order within a
generation never changes the outcome.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import costs
from .space import (
    CARDINALITY, N_DIMS, ArchConfig, config_from_genes, crossover_genes, encode_genes,
    genes_to_index, index_to_genes, mutate_genes,
)

logger = logging.getLogger(__name__)

BatchFn = Callable[[np.ndarray], np.ndarray]

INIT_ATTEMPTS_PER_SLOT = 10_000
OFFSPRING_ATTEMPTS = 100


class InfeasibleTargetError(RuntimeError):
    pass


@dataclass(frozen=True)
class EAParams:
    population: int = 50
    generations: int = 100
    parent_fraction: float = 0.25
    crossover_fraction: float = 0.5
    mutation_fraction: float = 0.5
    mutation_prob: float = 0.2
    elite_fraction: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("population must be >= 4")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("parent_fraction", "crossover_fraction", "mutation_fraction",
                     "elite_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if not math.isclose(self.crossover_fraction + self.mutation_fraction, 1.0):
            raise ValueError("crossover_fraction + mutation_fraction must equal 1")

    @property
    def n_elite(self) -> int:
        return min(self.population, math.ceil(self.elite_fraction * self.population - 1e-9))

    @property
    def n_parents(self) -> int:
        return max(2, min(self.population, math.ceil(self.parent_fraction * self.population - 1e-9)))


@dataclass(frozen=True)
class SearchEntry:
    config: ArchConfig
    predicted_map: float
    latency_ms: float
    index: int


@dataclass
class SearchResult:
    entries: list[SearchEntry]
    best_per_generation: list[float] = field(default_factory=list)
    fitness_calls: int = 0
    distinct_configs: int = 0
    # excluded configs that outranked returned entries (replaced by backfill)
    skipped_excluded: int = 0


def per_config(fn: Callable[[ArchConfig], float]) -> BatchFn:
    def batch(genes: np.ndarray) -> np.ndarray:
        return np.array([fn(config_from_genes(g)) for g in genes], dtype=np.float64)
    return batch


def model_fitness(model) -> BatchFn:
    """Predicted mAP of a surrogate as a batch fitness."""
    return lambda genes: np.asarray(model.predict(encode_genes(genes)), dtype=np.float64)


def cost_latency(genes: np.ndarray) -> np.ndarray:
    return costs.latency_genes(genes)


class _Feasible:
    """Rejection sampler for uniform configs under the latency bound."""

    def __init__(self, latency: BatchFn, target: float, rng: np.random.Generator):
        self.latency = latency
        self.target = target
        self.rng = rng

    def draw(self, k: int, budget: int) -> np.ndarray:
        found = []
        attempts = 0
        while len(found) < k and attempts < budget:
            size = min(budget - attempts, max(256, 4 * k))
            idx = self.rng.integers(0, CARDINALITY, size=size)
            genes = index_to_genes(idx)
            ok = np.asarray(self.latency(genes)) <= self.target
            hits = np.flatnonzero(ok)
            need = k - len(found)
            if len(hits) >= need:
                attempts += int(hits[need - 1]) + 1
                hits = hits[:need]
            else:
                attempts += size
            found.extend(genes[hits])
        if not found:
            return np.empty((0, N_DIMS), dtype=np.int64)
        return np.stack(found)


def ea_search(fitness: BatchFn, latency: BatchFn, target_latency: float,
              params: EAParams = EAParams(), top_k: int = 5,
              exclude: Iterable[int] = ()) -> SearchResult:
    """Maximize ``fitness`` subject to ``latency <= target_latency``.

    Returns the ``top_k`` best distinct feasible configs seen in any
    generation, skipping config indices in ``exclude``.
    """
    rng = np.random.default_rng(params.seed)
    sampler = _Feasible(latency, target_latency, rng)
    pop = sampler.draw(params.population, INIT_ATTEMPTS_PER_SLOT * params.population)
    if len(pop) == 0:
        raise InfeasibleTargetError(
            f"no config with latency <= {target_latency} found in "
            f"{INIT_ATTEMPTS_PER_SLOT * params.population} uniform draws")
    if len(pop) < params.population:
        logger.warning("only %d feasible configs for the initial population; cycling them", len(pop))
        pop = pop[np.arange(params.population) % len(pop)]

    memo: dict[int, float] = {}
    lat_memo: dict[int, float] = {}
    calls = 0

    def score(genes: np.ndarray) -> np.ndarray:
        nonlocal calls
        idx = genes_to_index(genes)
        fresh = []
        seen = set()
        for k, i in enumerate(idx.tolist()):
            if i not in memo and i not in seen:
                seen.add(i)
                fresh.append(k)
        if fresh:
            sel = genes[fresh]
            vals = np.asarray(fitness(sel), dtype=np.float64)
            lats = np.asarray(latency(sel), dtype=np.float64)
            calls += len(fresh)
            for k, v, l in zip(fresh, vals.tolist(), lats.tolist()):
                memo[int(idx[k])] = v
                lat_memo[int(idx[k])] = l
        return np.array([memo[i] for i in idx.tolist()])

    n_elite = params.n_elite
    n_parents = params.n_parents
    n_children = params.population - n_elite
    history = []
    for gen in range(params.generations + 1):
        fit = score(pop)
        order = np.argsort(-fit, kind="stable")
        pop = pop[order]
        history.append(float(fit[order[0]]))
        if gen == params.generations:
            break
        parents = pop[:n_parents]
        children = np.empty((n_children, pop.shape[1]), dtype=np.int64)
        pending = np.arange(n_children)
        for _ in range(OFFSPRING_ATTEMPTS):
            if len(pending) == 0:
                break
            cand = _breed(parents, len(pending), params, rng)
            ok = np.asarray(latency(cand)) <= target_latency
            children[pending[ok]] = cand[ok]
            pending = pending[~ok]
        if len(pending):
            fill = sampler.draw(len(pending), INIT_ATTEMPTS_PER_SLOT * len(pending))
            if len(fill) < len(pending):
                # fall back to copies of parents, which are feasible by construction
                extra = parents[np.arange(len(pending) - len(fill)) % len(parents)]
                fill = np.concatenate([fill.reshape(-1, pop.shape[1]), extra])
            children[pending] = fill
        pop = np.concatenate([pop[:n_elite], children])

    excluded = set(int(i) for i in exclude)
    ranked = sorted(
        ((v, i) for i, v in memo.items() if lat_memo[i] <= target_latency),
        key=lambda t: (-t[0], t[1]),
    )
    entries = []
    skipped = 0
    for v, i in ranked:
        if len(entries) == top_k:
            break
        if i in excluded:
            skipped += 1
            continue
        entries.append(SearchEntry(config_from_genes(index_to_genes(i)[0]), v, lat_memo[i], i))
    return SearchResult(entries, history, calls, len(memo), skipped)


def _breed(parents: np.ndarray, k: int, params: EAParams,
           rng: np.random.Generator) -> np.ndarray:
    """``k`` offspring: crossover of two distinct parents or mutation of one."""
    n_par = len(parents)
    use_cross = rng.random(k) < params.crossover_fraction
    a = rng.integers(0, n_par, size=k)
    # second parent uniformly among the others
    b = (a + 1 + rng.integers(0, n_par - 1, size=k)) % n_par
    crossed = crossover_genes(parents[a], parents[b], rng)
    mutated = mutate_genes(parents[a], params.mutation_prob, rng)
    return np.where(use_cross[:, None], crossed, mutated)
