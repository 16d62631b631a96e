"""JSONL pool of architecture records.

One record per line with keys in the fixed order
``id, config, map_50_95, latency_ms, source, created_round``. Records are
keyed by the FNV-1a id of their canonical config string, so re-sampling a
config never duplicates ground truth.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .hashing import config_id, fnv1a_64
from .space import ArchConfig, validate

SOURCE_PATTERN = re.compile(r"^(random|stratified|lhs|search|self_evolve_round_[1-9][0-9]*)$")
RECORD_KEYS = ("id", "config", "map_50_95", "latency_ms", "source", "created_round")


class DatabaseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class MergeConflictError(DatabaseError):
    pass


@dataclass(frozen=True)
class ArchRecord:
    id: str
    config: ArchConfig
    map_50_95: Optional[float] = None
    latency_ms: Optional[float] = None
    source: str = "random"
    created_round: int = 0

    @classmethod
    def new(cls, config: ArchConfig, source: str, created_round: int = 0,
            map_50_95: Optional[float] = None,
            latency_ms: Optional[float] = None) -> "ArchRecord":
        rec = cls(config_id(config.canonical()), config, map_50_95, latency_ms,
                  source, created_round)
        rec.check()
        return rec

    @property
    def evaluated(self) -> bool:
        return self.map_50_95 is not None

    def with_evaluation(self, map_50_95: float, latency_ms: float) -> "ArchRecord":
        rec = replace(self, map_50_95=float(map_50_95), latency_ms=float(latency_ms))
        rec.check()
        return rec

    def check(self) -> None:
        """Raise :class:`DatabaseError` on any invariant violation."""
        result = validate(self.config)
        if not result:
            raise DatabaseError(f"invalid config ({result.reason})")
        if self.id != config_id(self.config.canonical()):
            raise DatabaseError(f"id {self.id} does not match config hash")
        if (self.map_50_95 is None) != (self.latency_ms is None):
            raise DatabaseError("map_50_95 and latency_ms must be both present or both null")
        if self.map_50_95 is not None:
            if not (math.isfinite(self.map_50_95) and 0.0 <= self.map_50_95 <= 1.0):
                raise DatabaseError(f"map_50_95 {self.map_50_95} outside [0, 1]")
            if not (math.isfinite(self.latency_ms) and self.latency_ms > 0.0):
                raise DatabaseError(f"latency_ms {self.latency_ms} must be positive")
        if not SOURCE_PATTERN.match(self.source):
            raise DatabaseError(f"unknown source tag {self.source!r}")
        if isinstance(self.created_round, bool) or not isinstance(self.created_round, int) \
                or self.created_round < 0:
            raise DatabaseError(f"created_round must be an integer >= 0, got {self.created_round!r}")

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id,
            "config": self.config.canonical(),
            "map_50_95": self.map_50_95,
            "latency_ms": self.latency_ms,
            "source": self.source,
            "created_round": self.created_round,
        })

    @classmethod
    def from_dict(cls, obj: dict) -> "ArchRecord":
        if not isinstance(obj, dict) or set(obj) != set(RECORD_KEYS):
            raise DatabaseError(f"record must have exactly the keys {list(RECORD_KEYS)}")
        try:
            config = ArchConfig.from_canonical(obj["config"])
        except (ValueError, AttributeError) as exc:
            raise DatabaseError(f"bad config string: {exc}") from None

        def _num(v):
            if v is None:
                return None
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise DatabaseError(f"expected a number, got {v!r}")
            return float(v)

        rec = cls(obj["id"], config, _num(obj["map_50_95"]), _num(obj["latency_ms"]),
                  obj["source"], obj["created_round"])
        rec.check()
        return rec


class Pool:
    """Insertion-ordered, id-keyed collection of records."""

    def __init__(self, records: Iterable[ArchRecord] = ()):
        self._records: dict[str, ArchRecord] = {}
        for rec in records:
            self.add(rec)

    def add(self, rec: ArchRecord) -> None:
        if rec.id in self._records:
            raise DatabaseError(f"duplicate id {rec.id}")
        self._records[rec.id] = rec

    def put(self, rec: ArchRecord) -> None:
        """Insert or replace by id."""
        self._records[rec.id] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ArchRecord]:
        return iter(self._records.values())

    def __contains__(self, key) -> bool:
        if isinstance(key, ArchConfig):
            key = config_id(key.canonical())
        return key in self._records

    def __getitem__(self, rec_id: str) -> ArchRecord:
        return self._records[rec_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pool):
            return NotImplemented
        return self._records == other._records

    def ids(self) -> list[str]:
        return list(self._records)

    def evaluated(self) -> list[ArchRecord]:
        return [r for r in self if r.evaluated]

    def unevaluated(self) -> list[ArchRecord]:
        return [r for r in self if not r.evaluated]

    def configs(self) -> list[ArchConfig]:
        return [r.config for r in self]

    def targets(self) -> np.ndarray:
        return np.array([r.map_50_95 for r in self.evaluated()], dtype=np.float64)

    def latencies(self) -> np.ndarray:
        return np.array([r.latency_ms for r in self.evaluated()], dtype=np.float64)

    def digest(self) -> str:
        """Order-independent hash of the record ids, for training metadata."""
        return f"{fnv1a_64(','.join(sorted(self._records)).encode()):016x}"

    def subset(self, ids: Iterable[str]) -> "Pool":
        return Pool(self._records[i] for i in ids)


# --- persistence ---------------------------------------------------------------

def dumps(pool: Pool) -> str:
    return "".join(rec.to_json() + "\n" for rec in pool)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(pool: Pool, path) -> None:
    atomic_write_text(path, dumps(pool))


def loads(text: str) -> Pool:
    pool = Pool()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatabaseError(f"parse error: {exc.msg}", lineno) from None
        try:
            rec = ArchRecord.from_dict(obj)
        except DatabaseError as exc:
            raise DatabaseError(str(exc), lineno) from None
        if rec.id in pool:
            raise DatabaseError(f"duplicate id {rec.id}", lineno)
        pool.add(rec)
    return pool


def load(path) -> Pool:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# --- pool algebra ----------------------------------------------------------------

def merge(a: Pool, b: Pool) -> Pool:
    """Union by id; an evaluated record beats an unevaluated one.

    Two evaluated records with different mAP for the same config is a
    :class:`MergeConflictError`.
    """
    out = Pool(a)
    for rec in b:
        if rec.id not in out:
            out.add(rec)
            continue
        mine = out[rec.id]
        if rec.evaluated and mine.evaluated:
            if rec.map_50_95 != mine.map_50_95:
                raise MergeConflictError(
                    f"conflicting ground truth for {rec.config.canonical()}: "
                    f"{mine.map_50_95} vs {rec.map_50_95}")
        elif rec.evaluated:
            out.put(rec)
    return out


def split(pool: Pool, val_fraction: float, seed: int) -> tuple[Pool, Pool]:
    """Seeded train/validation split of the evaluated records.

    Ids are sorted before the shuffle so the split depends only on the set of
    records, not on file order. ``ceil(n * val_fraction)`` records go to val.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    ids = sorted(r.id for r in pool.evaluated())
    if len(ids) < 2:
        raise DatabaseError(f"need at least 2 evaluated records to split, have {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_val = min(len(ids) - 1, math.ceil(len(ids) * val_fraction - 1e-9))
    val_ids = [ids[i] for i in order[:n_val]]
    train_ids = [ids[i] for i in order[n_val:]]
    return pool.subset(train_ids), pool.subset(val_ids)


def stats(pool: Pool) -> dict:
    evaluated = pool.evaluated()
    by_source: dict[str, int] = {}
    for rec in pool:
        by_source[rec.source] = by_source.get(rec.source, 0) + 1
    out = {
        "records": len(pool),
        "evaluated": len(evaluated),
        "by_source": dict(sorted(by_source.items())),
    }
    if evaluated:
        maps = pool.targets()
        lats = pool.latencies()
        out["map_50_95"] = {"min": float(maps.min()), "mean": float(maps.mean()),
                            "max": float(maps.max())}
        out["latency_ms"] = {"min": float(lats.min()), "median": float(np.median(lats)),
                             "max": float(lats.max())}
    return out


CSV_COLUMNS = ("id", "total_cost", "latency_ms", "map_50_95", "predicted_map", "source")


def export_csv(pool: Pool, predictor=None) -> str:
    """Plot-ready CSV; ``predicted_map`` is empty unless a predictor is given."""
    from .costs import cost
    from .space import encode

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rec in pool:
        pred = "" if predictor is None else repr(float(predictor.predict(encode(rec.config))))
        writer.writerow([
            rec.id,
            repr(cost(rec.config).total_cost),
            "" if rec.latency_ms is None else repr(rec.latency_ms),
            "" if rec.map_50_95 is None else repr(rec.map_50_95),
            pred,
            rec.source,
        ])
    return buf.getvalue()
