"""Regression and ranking quality: R^2, Kendall tau-b, sparse Kendall tau."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

import numpy as np

SPARSE_QUANTUM = Decimal("0.001")


def _pair(y, yhat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if len(y) != len(yhat):
        raise ValueError(f"length mismatch: {len(y)} vs {len(yhat)}")
    if len(y) < 2:
        raise ValueError("need at least 2 samples")
    return y, yhat


def r_squared(y: Sequence[float], yhat: Sequence[float]) -> float:
    y, yhat = _pair(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r_squared undefined: y has zero variance")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


def pair_counts(y, yhat) -> tuple[int, int, int, int]:
    """(concordant, discordant, tied only in yhat, tied only in y) over all pairs."""
    y, yhat = _pair(y, yhat)
    n = len(y)
    C = D = Tx = Ty = 0
    # row blocks keep memory at O(block * n) for a few thousand samples
    block = max(1, 2_000_000 // n)
    for lo in range(0, n - 1, block):
        hi = min(n - 1, lo + block)
        i = np.arange(lo, hi)[:, None]
        j = np.arange(n)[None, :]
        upper = j > i
        dy = np.sign(y[None, :] - y[lo:hi, None])
        dh = np.sign(yhat[None, :] - yhat[lo:hi, None])
        prod = dy * dh
        C += int(np.count_nonzero((prod > 0) & upper))
        D += int(np.count_nonzero((prod < 0) & upper))
        Tx += int(np.count_nonzero((dh == 0) & (dy != 0) & upper))
        Ty += int(np.count_nonzero((dy == 0) & (dh != 0) & upper))
    return C, D, Tx, Ty


def kendall_tau_b(y: Sequence[float], yhat: Sequence[float]) -> Optional[float]:
    """Tie-corrected Kendall tau; ``None`` when every pair is tied on a side."""
    C, D, Tx, Ty = pair_counts(y, yhat)
    denom = (C + D + Tx) * (C + D + Ty)
    if denom == 0:
        return None
    return (C - D) / math.sqrt(denom)


def round_sparse(values: Sequence[float]) -> np.ndarray:
    """Round to the nearest 0.001, halves away from zero, on the decimal repr."""
    out = [
        float(Decimal(repr(float(v))).quantize(SPARSE_QUANTUM, rounding=ROUND_HALF_UP))
        for v in np.asarray(values, dtype=np.float64).ravel()
    ]
    return np.array(out, dtype=np.float64)


def sparse_kendall_tau(y: Sequence[float], yhat: Sequence[float]) -> Optional[float]:
    """Kendall tau-b of ``y`` against predictions rounded to 0.001 (``y`` is left as is)."""
    y, yhat = _pair(y, yhat)
    return kendall_tau_b(y, round_sparse(yhat))


@dataclass(frozen=True)
class MetricReport:
    r2: Optional[float]
    kendall_tau: Optional[float]
    sparse_kendall_tau: Optional[float]
    n: int

    def to_json_dict(self) -> dict:
        return {"r2": self.r2, "kendall_tau": self.kendall_tau,
                "skt": self.sparse_kendall_tau, "n": self.n}


def report(y: Sequence[float], yhat: Sequence[float]) -> MetricReport:
    y, yhat = _pair(y, yhat)
    try:
        r2 = r_squared(y, yhat)
    except ValueError:
        r2 = None
    return MetricReport(r2, kendall_tau_b(y, yhat), sparse_kendall_tau(y, yhat), len(y))
