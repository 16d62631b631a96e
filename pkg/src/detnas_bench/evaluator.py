"""Ground-truth sources: synthetic oracle, table replay, or an external trainer.

The synthetic oracle is a closed-form stand-in for detector training::

    base    = 0.18 + 0.16 * (1 - exp(-total_cost / 30))
    bonuses = small operator terms - 0.004 * |d_p3 - d_p4|
    noise   = 0.003 * u,  u in [-1, 1] from FNV-1a(canonical + "|" + seed)

Noise is hash-derived rather than drawn from a stream, so evaluation order
never changes results.
"""
from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import costs
from .hashing import fnv1a_64, hash_genes, unit_interval
from .space import DIM, PALETTES, ArchConfig, genes_of

logger = logging.getLogger(__name__)

BASE_MAP = 0.18
GAIN_MAP = 0.16
COST_SCALE = 30.0
NOISE_HALF_WIDTH = 0.003
DEPTH_MISMATCH_PENALTY = 0.004
BONUS_C2PSA = 0.006
BONUS_P4_C2FCIB = 0.003
BONUS_NECK_C3K2 = 0.002
BONUS_SCDOWN = 0.001
BONUS_C2PSA_NECK_C2FCIB = 0.003


class EvaluatorError(RuntimeError):
    """Base class for failures to obtain ground truth for a config."""

    def __init__(self, message: str, canonical: str = ""):
        super().__init__(f"{message} [config: {canonical}]" if canonical else message)
        self.canonical = canonical


class TableMissError(EvaluatorError):
    pass


class CommandError(EvaluatorError):
    pass


@dataclass(frozen=True)
class Evaluation:
    map_50_95: float
    latency_ms: float

    def __post_init__(self):
        if not (math.isfinite(self.map_50_95) and 0.0 <= self.map_50_95 <= 1.0):
            raise ValueError(f"map_50_95 must lie in [0, 1], got {self.map_50_95}")
        if not (math.isfinite(self.latency_ms) and self.latency_ms > 0.0):
            raise ValueError(f"latency_ms must be positive, got {self.latency_ms}")


@dataclass(frozen=True)
class EvaluatorSpec:
    kind: str
    oracle_seed: Optional[int] = None
    noise: bool = True
    table_path: Optional[str] = None
    command_line: Optional[str] = None
    max_parallel: int = 1
    timeout_s: float = 3600.0

    def __post_init__(self):
        populated = {
            "synthetic": self.oracle_seed is not None,
            "table": self.table_path is not None,
            "command": self.command_line is not None,
        }
        if self.kind not in populated:
            raise ValueError(f"unknown evaluator kind {self.kind!r}")
        if not populated[self.kind] or sum(populated.values()) != 1:
            raise ValueError(f"evaluator {self.kind!r} needs exactly its own parameters")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")

    @classmethod
    def parse(cls, text: str, max_parallel: int = 1, timeout_s: float = 3600.0) -> "EvaluatorSpec":
        """Parse ``synthetic:SEED``, ``synthetic:SEED:nonoise``, ``table:PATH`` or ``cmd:COMMAND``."""
        kind, sep, rest = text.partition(":")
        if not sep or not rest:
            raise ValueError(f"malformed evaluator {text!r}")
        if kind == "synthetic":
            seed, _, flag = rest.partition(":")
            if flag not in ("", "nonoise"):
                raise ValueError(f"unknown synthetic flag {flag!r}")
            return cls("synthetic", oracle_seed=int(seed), noise=flag != "nonoise")
        if kind == "table":
            return cls("table", table_path=rest)
        if kind == "cmd":
            return cls("command", command_line=rest, max_parallel=max_parallel,
                       timeout_s=timeout_s)
        raise ValueError(f"unknown evaluator kind {kind!r}")

    def describe(self) -> str:
        if self.kind == "synthetic":
            return f"synthetic:{self.oracle_seed}" + ("" if self.noise else ":nonoise")
        if self.kind == "table":
            return f"table:{self.table_path}"
        return f"cmd:{self.command_line}"


# --- synthetic oracle --------------------------------------------------------

def _noise_suffix(oracle_seed: int) -> bytes:
    return f"|{int(oracle_seed)}".encode("utf-8")


def synthetic_noise(config: ArchConfig, oracle_seed: int) -> float:
    h = fnv1a_64(config.canonical().encode("utf-8") + _noise_suffix(oracle_seed))
    return NOISE_HALF_WIDTH * float(unit_interval(h))


def synthetic_map(config: ArchConfig, oracle_seed: int, noise: bool = True) -> float:
    """Closed-form mAP fraction for ``config``; bit-identical to the gene path."""
    return float(synthetic_map_genes(genes_of(config)[None, :], oracle_seed, noise)[0])


def _onehot(genes, field, value):
    return (genes[:, DIM[field]] == PALETTES[field].index(value)).astype(np.float64)


def synthetic_map_genes(genes: np.ndarray, oracle_seed: int = 0,
                        noise: bool = True) -> np.ndarray:
    genes = np.atleast_2d(genes)
    total = costs.total_cost_genes(genes)
    base = BASE_MAP + GAIN_MAP * (1.0 - np.exp(-total / COST_SCALE))
    c2psa = _onehot(genes, "op_p5", "C2PSA")
    neck_cib = _onehot(genes, "op_neck", "C2fCIB")
    d3 = np.asarray(PALETTES["d_p3"])[genes[:, DIM["d_p3"]]]
    d4 = np.asarray(PALETTES["d_p4"])[genes[:, DIM["d_p4"]]]
    bonuses = (BONUS_C2PSA * c2psa
               + BONUS_P4_C2FCIB * _onehot(genes, "op_p4", "C2fCIB")
               + BONUS_NECK_C3K2 * _onehot(genes, "op_neck", "C3k2")
               + BONUS_SCDOWN * _onehot(genes, "op_neck_down", "SCDown")
               + BONUS_C2PSA_NECK_C2FCIB * c2psa * neck_cib
               - DEPTH_MISMATCH_PENALTY * np.abs(d3 - d4))
    value = base + bonuses
    if noise:
        value = value + NOISE_HALF_WIDTH * unit_interval(hash_genes(genes, _noise_suffix(oracle_seed)))
    return np.clip(value, 0.0, 1.0)


# --- evaluators ----------------------------------------------------------------

class Evaluator:
    """Callable ground-truth source built from an :class:`EvaluatorSpec`."""

    def __init__(self, spec: EvaluatorSpec):
        self.spec = spec
        self._table = None
        if spec.kind == "table":
            self._table = _load_table(spec.table_path)

    def evaluate(self, config: ArchConfig) -> Evaluation:
        genes_of(config)  # validates
        if self.spec.kind == "synthetic":
            return Evaluation(
                synthetic_map(config, self.spec.oracle_seed, self.spec.noise),
                costs.cost(config).latency_ms,
            )
        if self.spec.kind == "table":
            key = config.canonical()
            try:
                return self._table[key]
            except KeyError:
                raise TableMissError("config absent from table", key) from None
        return evaluate_command(self.spec, config)

    def evaluate_many(self, configs: Sequence[ArchConfig]) -> list[Evaluation]:
        """Evaluate in input order; command evaluations run ``max_parallel`` at a time."""
        if self.spec.kind != "command" or self.spec.max_parallel == 1 or len(configs) < 2:
            return [self.evaluate(c) for c in configs]
        with ThreadPoolExecutor(max_workers=self.spec.max_parallel) as pool:
            return list(pool.map(self.evaluate, configs))

    def search_latency_genes(self, genes: np.ndarray) -> np.ndarray:
        """Latency used as the search-time constraint.

        Only the synthetic kind knows latency for unevaluated configs; table and
        command kinds fall back to the cost-model proxy.
        """
        return costs.latency_genes(genes)


def _load_table(path) -> dict:
    from .database import load  # local import: database depends on this module's types

    table = {}
    for rec in load(path):
        if rec.evaluated:
            table[rec.config.canonical()] = Evaluation(rec.map_50_95, rec.latency_ms)
    return table


def evaluate(spec: EvaluatorSpec, config: ArchConfig) -> Evaluation:
    return Evaluator(spec).evaluate(config)


def _excerpt(text: str, limit: int = 500) -> str:
    text = (text or "").strip()
    return text if len(text) <= limit else "..." + text[-limit:]


def evaluate_command(spec: EvaluatorSpec, config: ArchConfig) -> Evaluation:
    """Run the trainer command once: JSON config on stdin, one JSON object on stdout."""
    canonical = config.canonical()
    payload = json.dumps({"config": canonical})
    argv = shlex.split(spec.command_line)
    try:
        proc = subprocess.run(argv, input=payload, capture_output=True, text=True,
                              timeout=spec.timeout_s)
    except subprocess.TimeoutExpired as exc:
        stderr = exc.stderr.decode() if isinstance(exc.stderr, bytes) else exc.stderr
        raise CommandError(f"command timed out after {spec.timeout_s}s; stderr: {_excerpt(stderr)}",
                           canonical) from None
    except OSError as exc:
        raise CommandError(f"command could not start: {exc}", canonical) from None
    if proc.returncode != 0:
        raise CommandError(f"command exited {proc.returncode}; stderr: {_excerpt(proc.stderr)}",
                           canonical)
    try:
        obj = json.loads(proc.stdout)
        map_value = obj["map_50_95"]
        latency = obj["latency_ms"]
        if isinstance(map_value, bool) or isinstance(latency, bool):
            raise TypeError("boolean values")
        return Evaluation(float(map_value), float(latency))
    except (ValueError, KeyError, TypeError) as exc:
        raise CommandError(f"malformed command output ({exc}): {_excerpt(proc.stdout)}; "
                           f"stderr: {_excerpt(proc.stderr)}", canonical) from None
