"""Self-evolving refinement loop and its random-expansion baseline.

Each round: bucket the pool's latency range, run one constrained EA per bucket
with the ensemble's predicted mAP as fitness, evaluate the top discoveries,
merge them into the pool, and retrain.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import database as db
from . import metrics, sampling
from .database import ArchRecord, Pool
from .evaluator import Evaluator, EvaluatorError, EvaluatorSpec
from .evolution import EAParams, InfeasibleTargetError, ea_search, model_fitness
from .predictor import EnsemblePredictor, GBDTParams, fit_ensemble
from .space import (
    ArchConfig, configs_from_genes, encode_genes, genes_matrix, genes_to_index,
    index_to_genes,
)

logger = logging.getLogger(__name__)


def derive_seed(seed: int, *parts: int) -> int:
    """Independent 63-bit child seed for a (seed, parts...) path."""
    state = np.random.SeedSequence([int(seed) & (2**63 - 1), *map(int, parts)]).generate_state(2)
    return int((int(state[0]) << 31) ^ int(state[1])) & (2**63 - 1)


@dataclass(frozen=True)
class SelfEvolveConfig:
    evaluator: EvaluatorSpec
    seed: int
    rounds: int = 10
    buckets: int = 10
    top_per_bucket: int = 5
    ensemble_members: int = 10
    ea: EAParams = EAParams()
    gbdt: GBDTParams = GBDTParams()
    val_fraction: float = 0.2
    freeze_buckets: bool = False

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.buckets < 1:
            raise ValueError("buckets must be >= 1")
        if self.top_per_bucket < 1:
            raise ValueError("top_per_bucket must be >= 1")
        if self.ensemble_members < 1:
            raise ValueError("ensemble_members must be >= 1")


@dataclass
class RoundLog:
    round: int
    bucket_edges: list[float]
    targets: list[Optional[float]]
    added_ids: list[str]
    backfilled: int = 0
    shortfall: int = 0
    skipped_buckets: list[int] = field(default_factory=list)
    latency_violations: int = 0
    val_r2: Optional[float] = None
    val_skt: Optional[float] = None
    pool_size: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


class SelfEvolveAborted(RuntimeError):
    """An evaluator failure stopped the loop; ``pool`` is the last consistent state."""

    def __init__(self, message: str, pool: Pool, logs: list[RoundLog]):
        super().__init__(message)
        self.pool = pool
        self.logs = logs


def pool_xy(pool: Pool) -> tuple[np.ndarray, np.ndarray]:
    recs = pool.evaluated()
    X = encode_genes(genes_matrix([r.config for r in recs]))
    y = np.array([r.map_50_95 for r in recs], dtype=np.float64)
    return X, y


def train_ensemble(pool: Pool, params: GBDTParams, seed: int, members: int) -> EnsemblePredictor:
    X, y = pool_xy(pool)
    meta = {"pool_hash": pool.digest()}
    return fit_ensemble(X, y, params, seed, members, training_meta=meta)


def validation_report(pool: Pool, params: GBDTParams, seed: int, members: int,
                      val_fraction: float = 0.2) -> tuple[metrics.MetricReport, EnsemblePredictor]:
    """Fit on a seeded train split and score on the held-out split."""
    train, val = db.split(pool, val_fraction, seed)
    model = train_ensemble(train, params, seed, members)
    Xv, yv = pool_xy(val)
    return metrics.report(yv, model.predict(Xv)), model


def bucket_edges(latencies: np.ndarray, buckets: int) -> np.ndarray:
    return np.linspace(float(np.min(latencies)), float(np.max(latencies)), buckets + 1)


def _evaluate_into(pool: Pool, configs: Sequence[ArchConfig], evaluator: Evaluator,
                   source: str, created_round: int) -> list[ArchRecord]:
    results = evaluator.evaluate_many(list(configs))
    return [ArchRecord.new(c, source, created_round, e.map_50_95, e.latency_ms)
            for c, e in zip(configs, results)]


def run_self_evolve(pool: Pool, cfg: SelfEvolveConfig,
                    evaluator: Optional[Evaluator] = None
                    ) -> tuple[Pool, EnsemblePredictor, list[RoundLog]]:
    if pool.unevaluated():
        raise ValueError("self-evolve needs a fully evaluated pool")
    if len(pool) < 2 * 2 * cfg.gbdt.min_leaf:
        raise ValueError("pool too small to train the predictor")
    evaluator = evaluator or Evaluator(cfg.evaluator)
    logs: list[RoundLog] = []
    frozen = bucket_edges(pool.latencies(), cfg.buckets) if cfg.freeze_buckets else None

    for k in range(1, cfg.rounds + 1):
        edges = frozen if frozen is not None else bucket_edges(pool.latencies(), cfg.buckets)
        model = train_ensemble(pool, cfg.gbdt, derive_seed(cfg.seed, k, 0), cfg.ensemble_members)
        fitness = model_fitness(model)
        target_rng = np.random.default_rng(derive_seed(cfg.seed, k, 1))
        taken = set(genes_to_index(genes_matrix(pool.configs())).tolist())
        log = RoundLog(k, edges.tolist(), [], [])
        chosen: list[int] = []
        targets: list[float] = []
        for b in range(cfg.buckets):
            target = float(target_rng.uniform(edges[b], edges[b + 1]))
            params = EAParams(**{**asdict(cfg.ea), "seed": derive_seed(cfg.seed, k, 2, b)})
            try:
                result = ea_search(fitness, evaluator.search_latency_genes, target, params,
                                   top_k=cfg.top_per_bucket, exclude=taken)
            except InfeasibleTargetError as exc:
                logger.warning("round %d bucket %d skipped: %s", k, b, exc)
                log.skipped_buckets.append(b)
                log.targets.append(None)
                log.shortfall += cfg.top_per_bucket
                continue
            log.targets.append(target)
            picks = [e.index for e in result.entries]
            log.backfilled += result.skipped_excluded
            log.shortfall += cfg.top_per_bucket - len(picks)
            for i in picks:
                taken.add(i)
                chosen.append(i)
                targets.append(target)

        configs = configs_from_genes(index_to_genes(chosen)) if chosen else []
        try:
            new = _evaluate_into(pool, configs, evaluator, f"self_evolve_round_{k}", k)
        except EvaluatorError as exc:
            raise SelfEvolveAborted(f"round {k}: {exc}", pool, logs) from exc
        for rec, target in zip(new, targets):
            if rec.latency_ms > target:
                log.latency_violations += 1
                logger.warning("measured latency %.3f exceeds target %.3f for %s",
                               rec.latency_ms, target, rec.id)
        pool = db.merge(pool, Pool(new))
        log.added_ids = [r.id for r in new]
        log.pool_size = len(pool)

        rep, _ = validation_report(pool, cfg.gbdt, derive_seed(cfg.seed, k, 3),
                                   cfg.ensemble_members, cfg.val_fraction)
        log.val_r2, log.val_skt = rep.r2, rep.sparse_kendall_tau
        logs.append(log)
        logger.info("round %d: +%d -> %d records, val R2 %.4f sKT %.4f", k, len(new),
                    len(pool), rep.r2 if rep.r2 is not None else float("nan"),
                    rep.sparse_kendall_tau if rep.sparse_kendall_tau is not None else float("nan"))

    final = train_ensemble(pool, cfg.gbdt, derive_seed(cfg.seed, cfg.rounds + 1, 0),
                           cfg.ensemble_members)
    return pool, final, logs


def run_random_expansion(pool: Pool, n_add: int, evaluator: Evaluator | EvaluatorSpec,
                         seed: int) -> Pool:
    """Add ``n_add`` uniformly sampled configs absent from ``pool``, evaluated."""
    if n_add < 0:
        raise ValueError("n_add must be >= 0")
    if n_add == 0:
        return Pool(pool)
    if isinstance(evaluator, EvaluatorSpec):
        evaluator = Evaluator(evaluator)
    taken = genes_to_index(genes_matrix(pool.configs())).tolist() if len(pool) else []
    idx = sampling.random_indices(n_add, np.random.default_rng(seed), exclude=taken)
    configs = configs_from_genes(index_to_genes(idx))
    return db.merge(pool, Pool(_evaluate_into(pool, configs, evaluator, "random", 0)))


def initial_pool(evaluator: Evaluator | EvaluatorSpec, seed: int, n_random: int = 200,
                 n_stratified: int = 400, n_lhs: int = 400, bins: int = 8) -> Pool:
    """Mixed-strategy starting pool of exactly ``n_random + n_stratified + n_lhs`` records.

    Configs drawn twice across strategies keep their first source; the
    shortfall is topped up with extra uniform samples tagged ``random``.
    """
    if isinstance(evaluator, EvaluatorSpec):
        evaluator = Evaluator(evaluator)
    parts = [
        ("random", sampling.sample_random_genes(n_random, derive_seed(seed, 10))),
        ("stratified", sampling.sample_stratified_genes(n_stratified, bins, derive_seed(seed, 11))),
        ("lhs", sampling.sample_lhs_genes(n_lhs, derive_seed(seed, 12))),
    ]
    seen: set[int] = set()
    tagged: list[tuple[int, str]] = []
    for source, genes in parts:
        for i in genes_to_index(genes).tolist():
            if i not in seen:
                seen.add(i)
                tagged.append((i, source))
    missing = n_random + n_stratified + n_lhs - len(tagged)
    if missing:
        extra = sampling.random_indices(missing, np.random.default_rng(derive_seed(seed, 13)),
                                        exclude=seen)
        tagged.extend((int(i), "random") for i in extra)
    configs = configs_from_genes(index_to_genes([i for i, _ in tagged]))
    results = evaluator.evaluate_many(configs)
    return Pool(ArchRecord.new(c, s, 0, e.map_50_95, e.latency_ms)
                for c, (_, s), e in zip(configs, tagged, results))
