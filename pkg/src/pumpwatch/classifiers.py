"""Tree-ensemble classifiers built from scratch.

Greedy CART trees (weighted Gini, midpoint thresholds), bagged into a
random forest with per-split feature subsampling, and boosted with
discrete SAMME. No external ML dependency: the detector's behavior must
be fully pinned by this code and a seed.

Determinism: every forest derives one PCG64 stream per tree from
numpy's SeedSequence(seed).spawn(tree_index), so results are identical
across platforms and independent of any training parallelism.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import (
    EmptyTrainingSet,
    FeatureDimensionMismatch,
    ModelFormatError,
    SingleClassInput,
)
from .features import FEATURE_NAMES

MODEL_FORMAT = "pumpwatch-model"
MODEL_FORMAT_VERSION = 1

# err == 0 would make ln((1-err)/err) blow up; clamp like err = 1e-10.
ALPHA_MAX = math.log((1.0 - 1e-10) / 1e-10)


class ClassWeighting(enum.Enum):
    NONE = "none"
    BALANCED = "balanced"


@dataclass
class TreeArrays:
    """One decision tree, flattened. feature < 0 marks a leaf.

    value is the weighted positive fraction at the node; weighted_n and
    impurity are kept for Gini importances.
    """

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64
    n_samples: np.ndarray  # int64
    weighted_n: np.ndarray  # float64
    impurity: np.ndarray  # float64

    def __len__(self) -> int:
        return len(self.feature)

    def predict_row(self, x) -> float:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
        return float(self.value[node])


def _gini(wp: float, wn: float) -> float:
    w = wp + wn
    if w <= 0:
        return 0.0
    p = wp / w
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split_for_feature(x, y, w, parent_gini, total_w, total_wp):
    """Best (decrease, threshold) splitting on one feature, or None.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values; children impurity is weighted Gini.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ws = w[order]
    wys = ws * y[order]
    cw = np.cumsum(ws)
    cwp = np.cumsum(wys)
    boundary = np.nonzero(xs[:-1] != xs[1:])[0]
    if boundary.size == 0:
        return None
    wl = cw[boundary]
    wpl = cwp[boundary]
    wr = total_w - wl
    wpr = total_wp - wpl
    valid = (wl > 0) & (wr > 0)
    if not valid.any():
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        pl = wpl / wl
        pr = wpr / wr
        gl = 1.0 - pl * pl - (1.0 - pl) * (1.0 - pl)
        gr = 1.0 - pr * pr - (1.0 - pr) * (1.0 - pr)
    child = (wl * gl + wr * gr) / total_w
    decrease = np.where(valid, parent_gini - child, -np.inf)
    k = int(np.argmax(decrease))
    if decrease[k] <= 0.0:
        return None
    thr = 0.5 * (xs[boundary[k]] + xs[boundary[k] + 1])
    return float(decrease[k]), thr


def train_tree(X: np.ndarray, y: np.ndarray, sample_weight: np.ndarray,
               max_depth: int, feature_subset_size: int,
               rng: np.random.Generator) -> TreeArrays:
    """Grow a CART tree by greedy weighted-Gini minimization.

    Stops at max_depth, node purity, or when no split reduces impurity.
    Mixed labels on identical rows degrade to a leaf, not an error. Ties
    between splits break toward the lowest feature index, then the lowest
    threshold (the per-node feature subset is scanned in sorted order).
    """
    n, d = X.shape
    if n == 0:
        raise EmptyTrainingSet("cannot grow a tree on zero rows")
    y = y.astype(np.float64)
    sample_weight = np.asarray(sample_weight, dtype=np.float64)
    if (sample_weight < 0).any() or sample_weight.sum() <= 0:
        raise ValueError("weights must be non-negative and not all zero")

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    n_samples: list[int] = []
    weighted_n: list[float] = []
    impurity: list[float] = []

    def new_node(idx, depth) -> int:
        node = len(feature)
        w = sample_weight[idx]
        total_w = float(w.sum())
        wp = float((w * y[idx]).sum())
        g = _gini(wp, total_w - wp)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(wp / total_w if total_w > 0 else 0.0)
        n_samples.append(len(idx))
        weighted_n.append(total_w)
        impurity.append(g)
        if depth >= max_depth or g <= 0.0 or total_w <= 0:
            return node
        if feature_subset_size >= d:
            subset = np.arange(d)
        else:
            subset = np.sort(rng.choice(d, size=feature_subset_size, replace=False))
        best = None
        for f in subset:
            cand = _best_split_for_feature(X[idx, f], y[idx], w, g, total_w, wp)
            if cand is not None and (best is None or cand[0] > best[0]):
                best = (cand[0], int(f), cand[1])
        if best is None:
            return node
        _, f, thr = best
        feature[node] = f
        threshold[node] = thr
        mask = X[idx, f] <= thr
        left[node] = new_node(idx[mask], depth + 1)
        right[node] = new_node(idx[~mask], depth + 1)
        return node

    new_node(np.arange(n), 0)
    return TreeArrays(
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        value=np.array(value, dtype=np.float64),
        n_samples=np.array(n_samples, dtype=np.int64),
        weighted_n=np.array(weighted_n, dtype=np.float64),
        impurity=np.array(impurity, dtype=np.float64),
    )


def _class_weights(y: np.ndarray, mode: ClassWeighting) -> np.ndarray:
    """Per-sample weights; BALANCED gives each class equal total mass."""
    n = len(y)
    if mode is ClassWeighting.NONE:
        return np.ones(n)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        return np.ones(n)
    w_pos = n / (2.0 * n_pos)
    w_neg = n / (2.0 * n_neg)
    return np.where(y, w_pos, w_neg)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 5
    class_weighting: ClassWeighting = ClassWeighting.BALANCED

    def feature_subset_size(self, d: int) -> int:
        return max(1, int(math.isqrt(d)))


@dataclass
class ForestModel:
    trees: list[TreeArrays]
    feature_names: tuple[str, ...]
    seed: int
    config: ForestConfig
    meta: dict = field(default_factory=dict)
    version: int = MODEL_FORMAT_VERSION
    _flat: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return "random_forest"

    def tree_weights(self) -> np.ndarray:
        return np.full(len(self.trees), 1.0 / len(self.trees))


@dataclass
class BoostModel:
    stumps: list[TreeArrays]
    alphas: list[float]
    feature_names: tuple[str, ...]
    seed: int
    n_rounds: int
    max_depth: int = 5
    class_weighting: ClassWeighting = ClassWeighting.BALANCED
    meta: dict = field(default_factory=dict)
    version: int = MODEL_FORMAT_VERSION
    _flat: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return "adaboost"

    @property
    def trees(self) -> list[TreeArrays]:
        return self.stumps

    def tree_weights(self) -> np.ndarray:
        total = float(sum(self.alphas))
        if total <= 0:
            return np.zeros(len(self.alphas))
        return np.asarray(self.alphas) / total


Model = Union[ForestModel, BoostModel]


def train_forest(X: np.ndarray, y: np.ndarray,
                 cfg: ForestConfig = ForestConfig(), seed: int = 0,
                 feature_names: Sequence[str] = FEATURE_NAMES,
                 meta: Optional[dict] = None) -> ForestModel:
    """Bagged forest: each tree sees a bootstrap resample (n draws with
    replacement) and a fresh feature subset of floor(sqrt(d)) per split."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    n, d = X.shape if X.ndim == 2 else (0, 0)
    if n == 0:
        raise EmptyTrainingSet("forest needs at least one row")
    if d != len(feature_names):
        raise FeatureDimensionMismatch(f"{d} columns vs {len(feature_names)} names")
    base_w = _class_weights(y, cfg.class_weighting)
    subset = cfg.feature_subset_size(d)
    trees = []
    for ss in np.random.SeedSequence(seed).spawn(cfg.n_trees):
        rng = np.random.Generator(np.random.PCG64(ss))
        idx = rng.integers(0, n, size=n)
        trees.append(train_tree(X[idx], y[idx], base_w[idx],
                                cfg.max_depth, subset, rng))
    return ForestModel(trees=trees, feature_names=tuple(feature_names),
                       seed=seed, config=cfg, meta=meta or {})


def train_adaboost(X: np.ndarray, y: np.ndarray, n_rounds: int = 50,
                   seed: int = 0, max_depth: int = 5,
                   class_weighting: ClassWeighting = ClassWeighting.BALANCED,
                   feature_names: Sequence[str] = FEATURE_NAMES,
                   meta: Optional[dict] = None) -> BoostModel:
    """Discrete SAMME boosting of depth-limited trees.

    Per round: fit a tree on the current weights, err = weighted error,
    alpha = ln((1-err)/err), multiply misclassified weights by exp(alpha),
    renormalize. Stops early on err >= 0.5; a perfect learner keeps a
    single tree with alpha capped at ALPHA_MAX.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    n, d = X.shape if X.ndim == 2 else (0, 0)
    if n == 0:
        raise EmptyTrainingSet("boosting needs at least one row")
    if d != len(feature_names):
        raise FeatureDimensionMismatch(f"{d} columns vs {len(feature_names)} names")
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")

    w = _class_weights(y, class_weighting)
    w = w / w.sum()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    stumps: list[TreeArrays] = []
    alphas: list[float] = []
    for _ in range(n_rounds):
        tree = train_tree(X, y, w, max_depth, d, rng)
        pred = _tree_votes(tree, X)
        mis = pred != y
        err = float(w[mis].sum())
        if err >= 0.5:
            if not stumps:
                stumps.append(tree)
                alphas.append(0.0)
            break
        if err <= 0.0:
            stumps.append(tree)
            alphas.append(ALPHA_MAX)
            break
        alpha = math.log((1.0 - err) / err)
        stumps.append(tree)
        alphas.append(alpha)
        w = np.where(mis, w * math.exp(alpha), w)
        w = w / w.sum()
    return BoostModel(stumps=stumps, alphas=alphas,
                      feature_names=tuple(feature_names), seed=seed,
                      n_rounds=n_rounds, max_depth=max_depth,
                      class_weighting=class_weighting, meta=meta or {})


def _tree_votes(tree: TreeArrays, X: np.ndarray) -> np.ndarray:
    node = np.zeros(len(X), dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        nd = node[idx]
        go_left = X[idx, tree.feature[nd]] <= tree.threshold[nd]
        node[idx] = np.where(go_left, tree.left[nd], tree.right[nd])
        active = tree.feature[node] >= 0
    return tree.value[node] >= 0.5


def _flatten(model: Model) -> tuple:
    if model._flat is None:
        trees = model.trees
        roots = np.zeros(len(trees), dtype=np.int64)
        off = 0
        feats, thrs, lefts, rights, leaves = [], [], [], [], []
        for t, tree in enumerate(trees):
            roots[t] = off
            feats.append(tree.feature)
            thrs.append(tree.threshold)
            lefts.append(np.where(tree.left >= 0, tree.left + off, -1))
            rights.append(np.where(tree.right >= 0, tree.right + off, -1))
            leaves.append(tree.value)
            off += len(tree)
        model._flat = (
            np.concatenate(feats).astype(np.int32),
            np.concatenate(thrs).astype(np.float64),
            np.concatenate(lefts).astype(np.int32),
            np.concatenate(rights).astype(np.int32),
            np.concatenate(leaves).astype(np.float64),
            roots,
        )
    return model._flat


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    """Score rows in [0, 1]: fraction of trees voting positive (forest) or
    normalized weighted vote (boost). A tree/leaf votes positive when its
    positive fraction is >= 0.5; the decision boundary is score >= 0.5."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != len(model.feature_names):
        raise FeatureDimensionMismatch(
            f"got {X.shape[1]} features, model wants {len(model.feature_names)}")
    weights = model.tree_weights()
    if len(weights) == 0 or weights.sum() <= 0:
        scores = np.full(len(X), 0.5)
    else:
        feat, thr, left, right, leaf, roots = _flatten(model)
        scores = kernels.ensemble_score(feat, thr, left, right, leaf, roots,
                                        np.ascontiguousarray(weights, dtype=np.float64), X)
    return scores[0] if single else scores


def gini_importance(model: ForestModel) -> dict[str, float]:
    """Mean decrease in weighted Gini impurity per feature, normalized to
    sum to 1 (per-tree normalization first, as is conventional)."""
    d = len(model.feature_names)
    acc = np.zeros(d)
    for tree in model.trees:
        imp = np.zeros(d)
        total_w = tree.weighted_n[0]
        internal = np.nonzero(tree.feature >= 0)[0]
        for node in internal:
            l, r = tree.left[node], tree.right[node]
            drop = (tree.weighted_n[node] * tree.impurity[node]
                    - tree.weighted_n[l] * tree.impurity[l]
                    - tree.weighted_n[r] * tree.impurity[r]) / total_w
            imp[tree.feature[node]] += drop
        s = imp.sum()
        if s > 0:
            imp /= s
        acc += imp
    acc /= len(model.trees)
    total = acc.sum()
    if total > 0:
        acc /= total
    return {name: float(v) for name, v in zip(model.feature_names, acc)}


# ---------------------------------------------------------------------------
# Precision-recall threshold selection


@dataclass(frozen=True)
class PRCurve:
    """One point per distinct score value; classification rule is
    `score > threshold` (strictly), matching the threshold detector."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def f1(self) -> np.ndarray:
        p, r = self.precision, self.recall
        with np.errstate(divide="ignore", invalid="ignore"):
            f = 2 * p * r / (p + r)
        return np.where(p + r > 0, f, 0.0)


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    precision: float
    recall: float
    curve: PRCurve


def pr_threshold_select(scores: np.ndarray, labels: np.ndarray,
                        policy: str = "f1",
                        floor: float = 0.0) -> ThresholdChoice:
    """Pick an operating threshold from the precision-recall curve.

    policy "f1" maximizes F1; "precision_floor" maximizes recall subject to
    precision >= floor; "recall_floor" maximizes precision subject to
    recall >= floor. Ties break toward the lowest threshold. A threshold
    with no positive predictions scores precision 1, recall 0.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise SingleClassInput("need at least one positive and one negative label")

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = labels[order]
    # suffix counts strictly above each distinct value
    distinct_idx = np.nonzero(np.append(s_sorted[:-1] != s_sorted[1:], True))[0]
    thresholds = s_sorted[distinct_idx]
    pos_cum = np.cumsum(y_sorted)
    tp = n_pos - pos_cum[distinct_idx]
    predicted = len(scores) - (distinct_idx + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, tp / np.maximum(predicted, 1), 1.0)
    recall = tp / n_pos
    curve = PRCurve(thresholds=thresholds, precision=precision, recall=recall)

    if policy == "f1":
        objective = curve.f1()
        eligible = np.ones(len(thresholds), dtype=bool)
    elif policy == "precision_floor":
        objective = recall
        eligible = precision >= floor
    elif policy == "recall_floor":
        objective = precision
        eligible = recall >= floor
    else:
        raise ValueError(f"unknown policy {policy!r}")
    if not eligible.any():
        raise ValueError(f"no threshold satisfies {policy} >= {floor}")
    masked = np.where(eligible, objective, -np.inf)
    k = int(np.argmax(masked))  # argmax takes the first (lowest threshold) tie
    return ThresholdChoice(threshold=float(thresholds[k]),
                           precision=float(precision[k]),
                           recall=float(recall[k]), curve=curve)


# ---------------------------------------------------------------------------
# Serialization: versioned, self-describing JSON. Training determinism plus
# canonical encoding make equal (data, seed) runs byte-identical.


def _tree_to_dict(tree: TreeArrays) -> dict:
    return {
        "feature": tree.feature.tolist(),
        "threshold": tree.threshold.tolist(),
        "left": tree.left.tolist(),
        "right": tree.right.tolist(),
        "value": tree.value.tolist(),
        "n_samples": tree.n_samples.tolist(),
        "weighted_n": tree.weighted_n.tolist(),
        "impurity": tree.impurity.tolist(),
    }


def _tree_from_dict(d: dict) -> TreeArrays:
    return TreeArrays(
        feature=np.array(d["feature"], dtype=np.int32),
        threshold=np.array(d["threshold"], dtype=np.float64),
        left=np.array(d["left"], dtype=np.int32),
        right=np.array(d["right"], dtype=np.int32),
        value=np.array(d["value"], dtype=np.float64),
        n_samples=np.array(d["n_samples"], dtype=np.int64),
        weighted_n=np.array(d["weighted_n"], dtype=np.float64),
        impurity=np.array(d["impurity"], dtype=np.float64),
    )


def model_to_json(model: Model) -> str:
    d = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "seed": model.seed,
        "meta": model.meta,
        "trees": [_tree_to_dict(t) for t in model.trees],
    }
    if isinstance(model, ForestModel):
        d["config"] = {
            "n_trees": model.config.n_trees,
            "max_depth": model.config.max_depth,
            "class_weighting": model.config.class_weighting.value,
        }
    else:
        d["alphas"] = model.alphas
        d["n_rounds"] = model.n_rounds
        d["max_depth"] = model.max_depth
        d["class_weighting"] = model.class_weighting.value
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def model_from_json(text: str) -> Model:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from exc
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ModelFormatError("missing pumpwatch-model header")
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"model format version {d.get('format_version')} != {MODEL_FORMAT_VERSION}")
    trees = [_tree_from_dict(t) for t in d["trees"]]
    names = tuple(d["feature_names"])
    if d["kind"] == "random_forest":
        cfg = ForestConfig(
            n_trees=d["config"]["n_trees"],
            max_depth=d["config"]["max_depth"],
            class_weighting=ClassWeighting(d["config"]["class_weighting"]),
        )
        return ForestModel(trees=trees, feature_names=names, seed=d["seed"],
                           config=cfg, meta=d.get("meta", {}))
    if d["kind"] == "adaboost":
        return BoostModel(stumps=trees, alphas=[float(a) for a in d["alphas"]],
                          feature_names=names, seed=d["seed"],
                          n_rounds=d["n_rounds"], max_depth=d["max_depth"],
                          class_weighting=ClassWeighting(d["class_weighting"]),
                          meta=d.get("meta", {}))
    raise ModelFormatError(f"unknown model kind {d['kind']!r}")


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_json(fh.read())
