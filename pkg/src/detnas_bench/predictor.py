"""Gradient-boosted regression trees (least squares) and seed ensembles.

Trees are grown leaf-wise: the open leaf with the largest variance-reduction
gain is split next, until ``max_leaves`` or no admissible split remains.
Split search is exact over each feature's sorted distinct values. Ties in gain
go to the lowest feature index, then the lowest threshold, so fits are
portable across platforms.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import _tree_kernels as K
from .database import atomic_write_text
from .space import FEATURE_DIM

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GBDTParams:
    n_trees: int = 300
    learning_rate: float = 0.05
    max_leaves: int = 31
    min_leaf: int = 5
    row_subsample: float = 0.8
    feature_subsample: float = 0.9

    def __post_init__(self):
        if self.n_trees < 0 or self.max_leaves < 2 or self.min_leaf < 1:
            raise ValueError(f"invalid tree hyperparameters: {self}")
        for name in ("learning_rate", "row_subsample", "feature_subsample"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == K.LEAF))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return K.predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature,
                              self.threshold, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        nodes = []
        for j in range(len(self.feature)):
            if self.feature[j] == K.LEAF:
                nodes.append({"value": float(self.value[j]), "count": int(self.count[j])})
            else:
                nodes.append({"feature": int(self.feature[j]),
                              "threshold": float(self.threshold[j]),
                              "left": int(self.left[j]), "right": int(self.right[j])})
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, obj: dict, n_features: int) -> "RegressionTree":
        nodes = obj["nodes"]
        n = len(nodes)
        if n == 0:
            raise ModelFormatError("tree without nodes")
        feature = np.full(n, K.LEAF, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        count = np.zeros(n, dtype=np.int64)
        for j, node in enumerate(nodes):
            if "value" in node:
                value[j] = float(node["value"])
                count[j] = int(node.get("count", 0))
                if not math.isfinite(value[j]):
                    raise ModelFormatError("non-finite leaf value")
            else:
                feature[j] = int(node["feature"])
                threshold[j] = float(node["threshold"])
                left[j] = int(node["left"])
                right[j] = int(node["right"])
                if not (0 <= feature[j] < n_features and j < left[j] < n and j < right[j] < n):
                    raise ModelFormatError(f"malformed internal node {j}")
        return cls(feature, threshold, left, right, value, count)


def _compile(trees: Sequence[RegressionTree]):
    sizes = [len(t.feature) for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)

    def cat(name, dtype):
        if not trees:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([getattr(t, name) for t in trees]).astype(dtype)

    return (offsets, cat("feature", np.int64), cat("threshold", np.float64),
            cat("left", np.int64), cat("right", np.int64), cat("value", np.float64))


def _as_matrix(x, n_features: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != n_features:
        raise ValueError(f"expected feature vectors of length {n_features}, got shape {np.shape(x)}")
    return np.ascontiguousarray(arr), single


@dataclass
class TreeEnsembleModel:
    base_score: float
    learning_rate: float
    trees: list[RegressionTree]
    params: GBDTParams
    seed: int
    n_features: int = FEATURE_DIM
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._flat = None

    def predict(self, x):
        """Predict for one vector (returns float) or an (n, d) matrix (returns array)."""
        X, single = _as_matrix(x, self.n_features)
        if self._flat is None:
            self._flat = _compile(self.trees)
        out = self.base_score + self.learning_rate * K.predict_forest(X, *self._flat)
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "hyperparams": {**asdict(self.params), "seed": self.seed},
            "trees": [t.to_dict() for t in self.trees],
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TreeEnsembleModel":
        hp = dict(obj["hyperparams"])
        seed = int(hp.pop("seed"))
        n_features = int(obj.get("n_features", FEATURE_DIM))
        return cls(
            base_score=float(obj["base_score"]),
            learning_rate=float(obj["learning_rate"]),
            trees=[RegressionTree.from_dict(t, n_features) for t in obj["trees"]],
            params=GBDTParams(**hp),
            seed=seed,
            n_features=n_features,
            training_meta=dict(obj.get("training_meta", {})),
        )


@dataclass
class EnsemblePredictor:
    members: list[TreeEnsembleModel]

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")

    @property
    def n_features(self) -> int:
        return self.members[0].n_features

    def predict(self, x):
        X, single = _as_matrix(x, self.n_features)
        out = np.mean(np.stack([m.predict(X) for m in self.members]), axis=0)
        return float(out[0]) if single else out

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members]}


Predictor = Union[TreeEnsembleModel, EnsemblePredictor]


# --- fitting ------------------------------------------------------------------

def _prepare_codes(X: np.ndarray):
    n, d = X.shape
    codes = np.empty((n, d), dtype=np.int64)
    uniques = []
    for j in range(d):
        u, inv = np.unique(X[:, j], return_inverse=True)
        uniques.append(u)
        codes[:, j] = inv
    n_bins = np.array([len(u) for u in uniques], dtype=np.int64)
    bin_values = np.zeros((d, int(n_bins.max())), dtype=np.float64)
    for j, u in enumerate(uniques):
        bin_values[j, :len(u)] = u
    return codes, n_bins, bin_values


def fit(X, y, params: GBDTParams = GBDTParams(), seed: int = 0,
        training_meta: Optional[dict] = None) -> TreeEnsembleModel:
    """Least-squares gradient boosting on (X, y); deterministic given inputs and seed."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with len(y) == n")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite training data")
    if np.any((y < 0.0) | (y > 1.0)):
        raise ValueError("targets must be mAP fractions in [0, 1]")
    n, d = X.shape
    if n < 2 * params.min_leaf:
        raise ValueError(f"need at least {2 * params.min_leaf} rows (2 * min_leaf), got {n}")

    meta = {"train_size": n, **(training_meta or {})}
    constant = bool(np.all(y == y[0]))
    # np.mean of n equal floats can drift by an ulp; a constant target is returned as is
    base = float(y[0]) if constant else float(np.mean(y))
    model = TreeEnsembleModel(base, params.learning_rate, [], params, seed, d, meta)
    if constant:
        return model

    rng = np.random.default_rng(seed)
    codes, n_bins, bin_values = _prepare_codes(X)
    n_rows = n if params.row_subsample >= 1.0 else max(1, int(round(params.row_subsample * n)))
    n_feat = d if params.feature_subsample >= 1.0 else max(1, int(round(params.feature_subsample * d)))
    all_rows = np.arange(n, dtype=np.int64)
    all_feats = np.arange(d, dtype=np.int64)
    F = np.full(n, base)
    for _ in range(params.n_trees):
        residual = y - F
        rows = all_rows.copy() if n_rows == n else np.sort(rng.choice(n, n_rows, replace=False))
        feats = all_feats if n_feat == d else np.sort(rng.choice(d, n_feat, replace=False))
        arrays = K.grow_tree(codes, residual, rows, feats, n_bins, bin_values,
                             params.max_leaves, params.min_leaf)
        tree = RegressionTree(*arrays)
        if len(tree.feature) == 1:
            logger.debug("no admissible split; stopping after %d trees", len(model.trees))
            break
        model.trees.append(tree)
        F = F + params.learning_rate * tree.predict(X)
    return model


def fit_ensemble(X, y, params: GBDTParams = GBDTParams(), seed: int = 0, members: int = 10,
                 training_meta: Optional[dict] = None) -> EnsemblePredictor:
    """Independent fits on the same data with seeds ``seed .. seed + members - 1``."""
    if members < 1:
        raise ValueError("members must be >= 1")
    return EnsemblePredictor(
        [fit(X, y, params, seed + k, training_meta) for k in range(members)]
    )


def predict(model: Predictor, x):
    return model.predict(x)


def training_rmse_path(model: TreeEnsembleModel, X, y) -> np.ndarray:
    """Training RMSE after 0, 1, ..., len(trees) boosting rounds."""
    X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    F = np.full(len(y), model.base_score)
    out = [math.sqrt(float(np.mean((y - F) ** 2)))]
    for t in model.trees:
        F = F + model.learning_rate * t.predict(X)
        out.append(math.sqrt(float(np.mean((y - F) ** 2))))
    return np.array(out)


# --- persistence ----------------------------------------------------------------

def model_to_json(model: Predictor) -> str:
    if isinstance(model, EnsemblePredictor):
        body = {"version": SCHEMA_VERSION, "kind": "ensemble", **model.to_dict()}
    else:
        body = {"version": SCHEMA_VERSION, "kind": "model", **model.to_dict()}
    return json.dumps(body, separators=(",", ":"))


def save_model(model: Predictor, path) -> None:
    atomic_write_text(path, model_to_json(model) + "\n")


def model_from_json(text: str) -> Predictor:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"parse error: {exc}") from None
    if not isinstance(obj, dict) or "version" not in obj:
        raise ModelFormatError("missing schema version")
    if obj["version"] != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported model version {obj['version']!r} "
                               f"(expected {SCHEMA_VERSION!r})")
    try:
        if obj.get("kind") == "ensemble":
            return EnsemblePredictor([TreeEnsembleModel.from_dict(m) for m in obj["members"]])
        return TreeEnsembleModel.from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model: {exc}") from None


def load_model(path) -> Predictor:
    return model_from_json(Path(path).read_text(encoding="utf-8"))
