"""Analytic parameter/latency proxies.

``unit(c) = (c / 256) ** 2`` models quadratic conv growth in channel width;
operator and downsample weights scale each stage. Latency is affine in the
total cost. Constants are frozen: golden tests depend on them.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

from .space import ArchConfig, DIM, PALETTES, genes_of, all_genes

OP_WEIGHTS = {"C2f": 1.0, "C3k2": 0.85, "C2fCIB": 0.7, "C2PSA": 1.3}
DOWNSAMPLE_WEIGHTS = {"Conv": 0.25, "SCDown": 0.125}
BACKBONE_DOWNSAMPLE_WEIGHT = 0.25
NECK_BLOCKS = 4
NECK_DOWNSAMPLES = 2
HEAD_COST = 0.5
LATENCY_BASE_MS = 5.0
LATENCY_MS_PER_COST = 2.0

_STAGES = ("p2", "p3", "p4", "p5")


@dataclass(frozen=True)
class CostBreakdown:
    backbone_cost: float
    downsample_cost: float
    neck_cost: float
    head_cost: float
    total_cost: float
    latency_ms: float

    def as_dict(self) -> dict:
        return asdict(self)


def unit(channels: float) -> float:
    return (channels / 256.0) ** 2


def latency_from_cost(total_cost):
    return LATENCY_BASE_MS + LATENCY_MS_PER_COST * total_cost


def cost(config: ArchConfig) -> CostBreakdown:
    genes_of(config)  # validates
    backbone = 0.0
    downsample = 0.0
    for s in _STAGES:
        u = unit(getattr(config, f"ch_{s}"))
        backbone += getattr(config, f"d_{s}") * OP_WEIGHTS[getattr(config, f"op_{s}")] * u
        downsample += BACKBONE_DOWNSAMPLE_WEIGHT * u
    u4 = unit(config.ch_p4)
    neck = (NECK_BLOCKS * OP_WEIGHTS[config.op_neck] * u4
            + NECK_DOWNSAMPLES * DOWNSAMPLE_WEIGHTS[config.op_neck_down] * u4)
    total = backbone + downsample + neck + HEAD_COST
    return CostBreakdown(backbone, downsample, neck, HEAD_COST, total,
                         latency_from_cost(total))


def _table(field: str, fn) -> np.ndarray:
    return np.array([fn(v) for v in PALETTES[field]], dtype=np.float64)


_UNIT = {s: _table(f"ch_{s}", unit) for s in _STAGES}
_DEPTH = {s: _table(f"d_{s}", float) for s in _STAGES}
_OPW = {s: _table(f"op_{s}", OP_WEIGHTS.get) for s in _STAGES}
_NECK_W = _table("op_neck", OP_WEIGHTS.get)
_DOWN_W = _table("op_neck_down", DOWNSAMPLE_WEIGHTS.get)


def total_cost_genes(genes: np.ndarray) -> np.ndarray:
    """Vectorized ``cost(...).total_cost`` over an (n, 14) gene matrix.

    Terms are accumulated in the same order as :func:`cost` so results are
    bit-identical to the scalar path.
    """
    genes = np.atleast_2d(genes)
    backbone = np.zeros(len(genes))
    downsample = np.zeros(len(genes))
    for s in _STAGES:
        u = _UNIT[s][genes[:, DIM[f"ch_{s}"]]]
        backbone = backbone + _DEPTH[s][genes[:, DIM[f"d_{s}"]]] * _OPW[s][genes[:, DIM[f"op_{s}"]]] * u
        downsample = downsample + BACKBONE_DOWNSAMPLE_WEIGHT * u
    u4 = _UNIT["p4"][genes[:, DIM["ch_p4"]]]
    neck = (NECK_BLOCKS * _NECK_W[genes[:, DIM["op_neck"]]] * u4
            + NECK_DOWNSAMPLES * _DOWN_W[genes[:, DIM["op_neck_down"]]] * u4)
    return backbone + downsample + neck + HEAD_COST


def latency_genes(genes: np.ndarray) -> np.ndarray:
    return latency_from_cost(total_cost_genes(genes))


@lru_cache(maxsize=1)
def space_costs() -> np.ndarray:
    """Total cost of every valid configuration, in index order (read-only)."""
    costs = total_cost_genes(all_genes())
    costs.setflags(write=False)
    return costs


def cost_range() -> tuple[float, float]:
    costs = space_costs()
    return float(costs.min()), float(costs.max())


def constants() -> dict:
    return {
        "unit": "(channels/256)^2",
        "op_weights": dict(OP_WEIGHTS),
        "downsample_weights": dict(DOWNSAMPLE_WEIGHTS),
        "backbone_downsample_weight": BACKBONE_DOWNSAMPLE_WEIGHT,
        "neck_blocks": NECK_BLOCKS,
        "neck_downsamples": NECK_DOWNSAMPLES,
        "head_cost": HEAD_COST,
        "latency_ms": {"base": LATENCY_BASE_MS, "per_cost": LATENCY_MS_PER_COST},
    }
