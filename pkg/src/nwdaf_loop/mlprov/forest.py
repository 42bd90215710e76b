"""Random-forest classifier: CART trees in flat arrays, seeded training, JSON form."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from ..ees.model import AnalyticsEventId, SchemaViolation

log = logging.getLogger(__name__)

BENIGN, ANOMALOUS = 0, 1
LEAF = -1


class FeatureWidthMismatch(ValueError):
    pass


class DegenerateDataset(UserWarning):
    pass


@dataclass
class DecisionTree:
    """Internal node i: ``feature[i] >= 0``; leaf: ``feature[i] == -1`` and ``label[i]`` is the class."""

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    label: list[int]

    @classmethod
    def leaf(cls, label: int) -> "DecisionTree":
        return cls([LEAF], [0.0], [LEAF], [LEAF], [label])

    def __len__(self) -> int:
        return len(self.feature)

    def validate(self, width: int) -> None:
        n = len(self.feature)
        if n == 0 or not all(len(a) == n for a in (self.threshold, self.left, self.right, self.label)):
            raise SchemaViolation("trees", "node arrays must be non-empty and equally long")
        parents = [0] * n
        for i in range(n):
            f = self.feature[i]
            if f == LEAF:
                if self.label[i] not in (BENIGN, ANOMALOUS):
                    raise SchemaViolation("trees", f"leaf {i} has class {self.label[i]!r}")
                continue
            if not 0 <= f < width:
                raise SchemaViolation("trees", f"node {i} splits on feature {f}, schema has {width}")
            if not math.isfinite(self.threshold[i]):
                raise SchemaViolation("trees", f"node {i} has a non-finite threshold")
            for c in (self.left[i], self.right[i]):
                if not 0 < c < n:
                    raise SchemaViolation("trees", f"node {i} has child {c} out of bounds")
                parents[c] += 1
        # single root, every other node reached exactly once: a tree, hence acyclic
        if parents[0] != 0 or any(p > 1 for p in parents[1:]):
            raise SchemaViolation("trees", "node graph is not a tree")
        seen, stack = set(), [0]
        while stack:
            i = stack.pop()
            if i in seen:
                raise SchemaViolation("trees", "cycle in node graph")
            seen.add(i)
            if self.feature[i] != LEAF:
                stack += [self.left[i], self.right[i]]

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature)
        thr = np.asarray(self.threshold, dtype=float)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = feat[node] != LEAF
        while active.any():
            idx = rows[active]
            n = node[idx]
            go_left = X[idx, feat[n]] <= thr[n]
            node[idx] = np.where(go_left, left[n], right[n])
            active = feat[node] != LEAF
        return np.asarray(self.label)[node]

    def to_dict(self) -> dict:
        return {"featureIndex": self.feature, "threshold": [float(x) for x in self.threshold], "leftChild": self.left,
                "rightChild": self.right, "classLabel": self.label}

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        try:
            return cls([int(x) for x in d["featureIndex"]], [float(x) for x in d["threshold"]],
                       [int(x) for x in d["leftChild"]], [int(x) for x in d["rightChild"]],
                       [int(x) for x in d["classLabel"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation("trees", f"bad tree: {exc!r}") from None


@dataclass
class ModelDescriptor:
    name: str
    feature_schema: tuple[str, ...]
    event_id: AnalyticsEventId = AnalyticsEventId.ABNORMAL_BEHAVIOUR
    version: Optional[int] = None  # assigned by the registry
    created_at: Optional[str] = None  # assigned by the registry
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "version": self.version, "eventId": self.event_id.value,
                "featureSchema": list(self.feature_schema), "createdAt": self.created_at, "metrics": self.metrics}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDescriptor":
        try:
            name = d["name"]
            if not isinstance(name, str) or not name or "/" in name or ":" in name:
                raise SchemaViolation("name", f"bad model name {name!r}")
            version = d.get("version")
            if version is not None and (not isinstance(version, int) or version < 1):
                raise SchemaViolation("version", f"bad version {version!r}")
            return cls(name, tuple(d["featureSchema"]), AnalyticsEventId(d.get("eventId", "ABNORMAL_BEHAVIOUR")),
                       version, d.get("createdAt"), dict(d.get("metrics") or {}))
        except KeyError as exc:
            raise SchemaViolation(str(exc.args[0]), "missing") from None
        except ValueError as exc:
            if isinstance(exc, SchemaViolation):
                raise
            raise SchemaViolation("eventId", str(exc)) from None


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    descriptor: ModelDescriptor
    num_classes: int = 2

    def validate(self) -> None:
        if self.num_classes != 2:
            raise SchemaViolation("numClasses", "only binary forests are supported")
        if not self.trees:
            raise SchemaViolation("trees", "forest has no trees")
        for t in self.trees:
            t.validate(len(self.descriptor.feature_schema))

    def votes(self, X: np.ndarray) -> np.ndarray:
        """Anomalous votes per row."""
        return np.sum([t.predict(X) for t in self.trees], axis=0)

    def infer(self, X: Sequence[Sequence[float]]) -> list[tuple[int, float]]:
        """Per row (label, voteShare); ties go to BENIGN."""
        width = len(self.descriptor.feature_schema)
        if any(len(r) != width for r in X):
            raise FeatureWidthMismatch(f"rows must have {width} features")
        if len(X) == 0:
            return []
        anomalous = self.votes(np.asarray(X, dtype=float))
        n = len(self.trees)
        return [(ANOMALOUS if 2 * int(a) > n else BENIGN, int(a) / n) for a in anomalous]

    def to_dict(self) -> dict:
        return {"descriptor": self.descriptor.to_dict(), "numClasses": self.num_classes,
                "trees": [t.to_dict() for t in self.trees]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Any) -> "ForestModel":
        if not isinstance(d, dict):
            raise SchemaViolation("model", "expected an object")
        try:
            m = cls([DecisionTree.from_dict(t) for t in d["trees"]], ModelDescriptor.from_dict(d["descriptor"]),
                    int(d.get("numClasses", 2)))
        except (KeyError, TypeError) as exc:
            raise SchemaViolation("model", f"bad model document: {exc!r}") from None
        m.validate()
        return m

    @classmethod
    def loads(cls, text: str | bytes) -> "ForestModel":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SchemaViolation("model", f"not JSON: {exc}") from None


# -- training ----------------------------------------------------------------

def _best_split(X: np.ndarray, y: np.ndarray, features: Sequence[int]) -> Optional[tuple[float, int, float]]:
    """Lowest weighted Gini over midpoint thresholds; returns (impurity, feature, threshold)."""
    n = len(y)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cut = np.nonzero(xs[1:] > xs[:-1])[0]  # split after position i
        if cut.size == 0:
            continue
        pos = np.cumsum(ys)
        nl = cut + 1.0
        pl = pos[cut]
        nr = n - nl
        pr = pos[-1] - pl
        gl = 1.0 - (pl / nl) ** 2 - ((nl - pl) / nl) ** 2
        gr = 1.0 - (pr / nr) ** 2 - ((nr - pr) / nr) ** 2
        score = (nl * gl + nr * gr) / n
        k = int(np.argmin(score))
        if best is None or score[k] < best[0]:
            best = (float(score[k]), int(f), float((xs[cut[k]] + xs[cut[k] + 1]) / 2.0))
    return best


def _majority(y: np.ndarray) -> int:
    return ANOMALOUS if 2 * int(y.sum()) > len(y) else BENIGN


def _grow(X: np.ndarray, y: np.ndarray, max_depth: int, max_features: int, rng: np.random.Generator) -> DecisionTree:
    t = DecisionTree([], [], [], [], [])
    width = X.shape[1]

    def node(idx: np.ndarray, depth: int) -> int:
        i = len(t.feature)
        t.feature.append(LEAF)
        t.threshold.append(0.0)
        t.left.append(LEAF)
        t.right.append(LEAF)
        ys = y[idx]
        t.label.append(_majority(ys))
        if depth >= max_depth or ys.min() == ys.max():
            return i
        subset = rng.choice(width, size=max_features, replace=False)
        split = _best_split(X[idx], ys, subset)
        if split is None:  # every sampled feature constant here: fall back to the rest
            rest = [f for f in range(width) if f not in set(subset.tolist())]
            split = _best_split(X[idx], ys, rest)
        if split is None:
            return i
        _, f, thr = split
        go_left = X[idx, f] <= thr
        t.feature[i] = f
        t.threshold[i] = thr
        t.left[i] = node(idx[go_left], depth + 1)
        t.right[i] = node(idx[~go_left], depth + 1)
        return i

    node(np.arange(len(y)), 0)
    return t


def train_forest(
    X: Any,
    y: Any,
    *,
    num_trees: int = 100,
    max_depth: int = 10,
    seed: int = 0,
    feature_schema: Sequence[str],
    name: str = "bot-rf",
    max_features: Optional[int] = None,
) -> ForestModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] != len(feature_schema) or len(X) != len(y):
        raise FeatureWidthMismatch(f"expected rows x {len(feature_schema)} matrix with matching labels")
    if num_trees < 1 or max_depth < 0:
        raise ValueError("num_trees must be >= 1 and max_depth >= 0")
    desc = ModelDescriptor(name, tuple(feature_schema))
    classes = set(np.unique(y).tolist())
    if not classes <= {BENIGN, ANOMALOUS}:
        raise ValueError(f"labels must be 0/1, got {sorted(classes)}")
    if len(classes) < 2:
        label = classes.pop() if classes else BENIGN
        log.warning("training data has a single class (%d); emitting a constant predictor", label)
        desc.metrics = {"trainAccuracy": 1.0, "rows": int(len(y)), "degenerate": True}
        return ForestModel([DecisionTree.leaf(label)], desc)
    k = max_features or math.ceil(math.sqrt(X.shape[1]))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(num_trees):
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(_grow(X[boot], y[boot], max_depth, k, rng))
    model = ForestModel(trees, desc)
    pred = np.array([lab for lab, _ in model.infer(X.tolist())])
    desc.metrics = {"trainAccuracy": round(float((pred == y).mean()), 6), "rows": int(len(y)),
                    "numTrees": num_trees, "maxDepth": max_depth, "seed": seed}
    return model
