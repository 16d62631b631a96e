"""Exhaustive sweeps of the synthetic oracle over all 1,679,616 configs."""
from __future__ import annotations

from functools import lru_cache
from typing import Optional

import numpy as np

from . import costs
from .evaluator import synthetic_map_genes
from .space import all_genes, config_from_index


@lru_cache(maxsize=4)
def space_maps(oracle_seed: int, noise: bool) -> np.ndarray:
    values = synthetic_map_genes(all_genes(), oracle_seed, noise)
    values.setflags(write=False)
    return values


def space_latencies() -> np.ndarray:
    return costs.latency_from_cost(costs.space_costs())


def best(latency_max: float, oracle_seed: int, noise: bool = False, top: int = 1) -> list[dict]:
    """Top feasible configs by synthetic mAP (ties broken by lowest index)."""
    maps = space_maps(oracle_seed, noise)
    lat = space_latencies()
    feasible = np.flatnonzero(lat <= latency_max)
    if len(feasible) == 0:
        return []
    # stable sort on -map keeps index order among ties
    order = feasible[np.argsort(-maps[feasible], kind="stable")[:top]]
    return [
        {"index": int(i), "config": config_from_index(int(i)).canonical(),
         "map_50_95": float(maps[i]), "latency_ms": float(lat[i])}
        for i in order
    ]


def sweep(oracle_seed: int, noise: bool = True, latency_max: Optional[float] = None) -> dict:
    maps = space_maps(oracle_seed, noise)
    lat = space_latencies()
    mask = np.ones(len(maps), dtype=bool) if latency_max is None else lat <= latency_max
    sel = maps[mask]
    out = {"count": int(mask.sum()), "latency_min": float(lat.min()),
           "latency_max": float(lat.max())}
    if len(sel):
        out.update({"map_min": float(sel.min()), "map_mean": float(sel.mean()),
                    "map_max": float(sel.max())})
    return out
