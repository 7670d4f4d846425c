"""Information probes: classifiers, verification, Diff, feature ablation and PCA."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, VerificationPair
from .errors import ConfigError, DataError, NumericError, RankError, ShapeError, UndefinedMetricError
from .tasks import TaskSpec

PROBE_KINDS = ("mlp", "linear_hinge", "random_forest")


@dataclass
class ProbeConfig:
    hidden: int = 128
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    trees: int = 50
    max_depth: int = 8
    min_samples_split: int = 2
    max_features: int | None = None  # None means round(sqrt(N))
    bootstrap: bool = True

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = nn.TrainConfig(**self.train)
        if self.hidden < 1 or self.trees < 1 or self.max_depth < 0 or self.min_samples_split < 2:
            raise ConfigError("probe sizes must be positive (min_samples_split >= 2)")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features must be positive")


# ---------------------------------------------------------------------------
# random forest


@dataclass
class DecisionTree:
    """Array-backed binary tree. ``feature[i] < 0`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # per-node class distribution

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=int)
        for i in range(len(self.feature)):  # children always come after parents
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def predict_proba(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        while True:
            inner = self.feature[node] >= 0
            if not inner.any():
                return self.value[node]
            r, n = rows[inner], node[inner]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])


def _best_split(Xn, yn, num_classes, features):
    """Best Gini split of one node over the candidate features, or None."""
    n = len(yn)
    onehot = np.eye(num_classes)[yn]
    parent = np.sum(onehot.sum(0) ** 2) / n
    order = np.argsort(Xn[:, features], axis=0, kind="stable")  # (n, m)
    v = np.take_along_axis(Xn[:, features], order, axis=0)
    left = np.cumsum(onehot[order], axis=0)[:-1]  # (n-1, m, C)
    right = onehot.sum(0) - left
    nl = np.arange(1, n)[:, None]
    # maximising sum c^2/n on each side is minimising weighted Gini
    score = (left ** 2).sum(-1) / nl + (right ** 2).sum(-1) / (n - nl) - parent
    score[v[1:] <= v[:-1]] = -np.inf
    i, j = np.unravel_index(np.argmax(score), score.shape)
    if not score[i, j] > 1e-12:
        return None
    return features[j], 0.5 * (v[i, j] + v[i + 1, j])


def grow_tree(X, y, num_classes, max_depth=8, max_features=None, min_samples_split=2, rng=None) -> DecisionTree:
    rng = rng if rng is not None else np.random.default_rng(0)
    N = X.shape[1]
    m = min(N, max_features or max(1, int(round(math.sqrt(N)))))
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(y[idx], minlength=num_classes) / len(idx))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if depth >= max_depth or len(idx) < min_samples_split or value[node].max() == 1.0:
            continue
        split = _best_split(X[idx], y[idx], num_classes, rng.choice(N, size=m, replace=False))
        if split is None:
            continue
        f, t = split
        mask = X[idx, f] <= t
        feature[node], threshold[node] = int(f), float(t)
        left[node] = new_node(idx[mask])
        right[node] = new_node(idx[~mask])
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))
    return DecisionTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value))


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    num_classes: int
    in_dim: int

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.predict_proba(X) for t in self.trees], axis=0)


def train_forest(X, y, num_classes, config: ProbeConfig, seed=0) -> RandomForest:
    rng = np.random.default_rng([seed, 20])
    trees = []
    for _ in range(config.trees):
        idx = rng.integers(0, len(y), size=len(y)) if config.bootstrap else np.arange(len(y))
        trees.append(grow_tree(X[idx], y[idx], num_classes, config.max_depth, config.max_features,
                               config.min_samples_split, rng))
    return RandomForest(trees, num_classes, X.shape[1])


# ---------------------------------------------------------------------------
# probes


@dataclass
class ProbeModel:
    kind: str
    task: TaskSpec
    params: object  # DenseNet or RandomForest
    train_accuracy: float = float("nan")
    test_accuracy: float = float("nan")

    @property
    def in_dim(self) -> int:
        return self.params.in_dim

    def scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.in_dim:
            raise ShapeError(f"probe expects {self.in_dim} features, got {X.shape[1]}")
        if isinstance(self.params, RandomForest):
            return self.params.predict_proba(X)
        return nn.predict(self.params, X)

    def predict(self, X) -> np.ndarray:
        return self.scores(X).argmax(axis=1)


@dataclass
class ProbeResult:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class
    predictions: np.ndarray


def _represent(ds: Dataset, representation):
    return ds.X if representation is None else np.asarray(representation(ds.X), dtype=np.float64)


def _check_labels(y, task: TaskSpec):
    if len(y) and (y.min() < 0 or y.max() >= task.num_classes):
        raise DataError(f"{task.name} labels must lie in [0, {task.num_classes})")


def fit_probe(X, y, task: TaskSpec, kind="mlp", config: ProbeConfig | None = None, seed=0) -> ProbeModel:
    """Train a probe on arrays ``X``, ``y``."""
    cfg = config or ProbeConfig()
    if kind not in PROBE_KINDS:
        raise ConfigError(f"unknown probe kind {kind!r}; expected one of {PROBE_KINDS}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DataError("cannot train a probe on an empty split")
    _check_labels(y, task)
    if len(np.unique(y)) < 2:
        raise DataError(f"training split for {task.name} holds a single class")
    N, C = X.shape[1], task.num_classes
    if kind == "random_forest":
        model = ProbeModel(kind, task, train_forest(X, y, C, cfg, seed=seed))
    elif kind == "mlp":
        net = nn.init_net([N, cfg.hidden, C], ["relu", "softmax"], seed=seed, name=f"probe:{task.name}")
        nn.fit(net, X, y, cfg.train, loss="ce", seed=seed)
        model = ProbeModel(kind, task, net)
    else:
        net = nn.init_net([N, C], ["linear"], seed=seed, name=f"svm:{task.name}")
        nn.fit(net, X, y, cfg.train, loss="hinge", seed=seed)
        model = ProbeModel(kind, task, net)
    model.train_accuracy = float(np.mean(model.predict(X) == y))
    return model


def train_probe(train: Dataset, test: Dataset | None, task: TaskSpec, kind="mlp", representation=None,
                config: ProbeConfig | None = None, seed=0) -> ProbeModel:
    """Train on ``train`` only; ``test`` (if given) sets the held-out accuracy.

    ``representation`` is an optional callable applied to both splits, such
    as a trained suppressor.
    """
    model = fit_probe(_represent(train, representation), train.labels(task.name), task, kind, config, seed)
    if test is not None:
        model.test_accuracy = evaluate_probe(model, test, representation).accuracy
    return model


def evaluate_arrays(probe: ProbeModel, X, y) -> ProbeResult:
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise DataError("cannot evaluate a probe on an empty sample set")
    _check_labels(y, probe.task)
    pred = probe.predict(X)
    C = probe.task.num_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y, pred), 1)
    return ProbeResult(float(np.trace(confusion) / len(y)), confusion, pred)


def evaluate_probe(probe: ProbeModel, samples: Dataset, representation=None) -> ProbeResult:
    if len(samples) == 0:
        raise DataError("cannot evaluate a probe on an empty sample set")
    return evaluate_arrays(probe, _represent(samples, representation), samples.labels(probe.task.name))


def diff_metric(before, after, chance) -> float:
    """Accuracy drop relative to the gap between ``before`` and chance, in percent."""
    if before <= chance:
        raise UndefinedMetricError(f"Diff undefined: accuracy before ({before}) does not exceed chance ({chance})")
    return 100.0 * (before - after) / (before - chance)


# ---------------------------------------------------------------------------
# verification


def pair_similarities(X, pairs: list[VerificationPair]) -> np.ndarray:
    """Cosine similarity of each pair; zero-norm rows raise NumericError."""
    X = np.asarray(X, dtype=np.float64)
    a = np.array([p.sample_a for p in pairs], dtype=int)
    b = np.array([p.sample_b for p in pairs], dtype=int)
    norms = np.linalg.norm(X, axis=1)
    for i in np.concatenate([a, b]):
        if not norms[i] > 0:
            raise NumericError(f"sample {i} has a zero-norm embedding")
    return np.einsum("ij,ij->i", X[a], X[b]) / (norms[a] * norms[b])


def best_threshold(sims, same) -> tuple[float, float]:
    """Threshold maximizing accuracy of ``sim >= t``; returns ``(t, accuracy)``."""
    sims = np.asarray(sims, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    s = np.sort(np.unique(sims))
    cands = np.concatenate([[s[0] - 1e-9], 0.5 * (s[1:] + s[:-1]), [s[-1] + 1e-9]])
    accs = np.array([np.mean((sims >= t) == same) for t in cands])
    i = int(np.argmax(accs))
    return float(cands[i]), float(accs[i])


def _check_pairs(pairs, label):
    if len(pairs) < 2:
        raise DataError(f"{label} needs at least two pairs")
    kinds = {p.same_identity for p in pairs}
    if kinds != {True, False}:
        raise DataError(f"{label} needs both genuine and impostor pairs")


def verification_accuracy(dev: Dataset, dev_pairs, test: Dataset, test_pairs, representation=None):
    """Cosine verification: threshold chosen on ``dev`` pairs, accuracy on ``test`` pairs.

    Returns ``(accuracy, threshold)``.
    """
    _check_pairs(dev_pairs, "dev pair set")
    _check_pairs(test_pairs, "test pair set")
    used = lambda ds, pairs: {int(ds.sample_id[i]) for p in pairs for i in (p.sample_a, p.sample_b)}
    if dev is test or used(dev, dev_pairs) & used(test, test_pairs):
        raise DataError("dev and test pairs share samples")
    t, _ = best_threshold(pair_similarities(_represent(dev, representation), dev_pairs),
                          [p.same_identity for p in dev_pairs])
    sims = pair_similarities(_represent(test, representation), test_pairs)
    acc = float(np.mean((sims >= t) == np.array([p.same_identity for p in test_pairs])))
    return acc, t


# ---------------------------------------------------------------------------
# feature ablation


@dataclass
class AblationCurve:
    task: str
    fractions: list[float]
    accuracies: np.ndarray  # (len(fractions), repeats)

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return [(f, float(a.mean()), float(a.std())) for f, a in zip(self.fractions, self.accuracies)]

    @property
    def repeats(self) -> int:
        return self.accuracies.shape[1]


def ablation_mask(N, fraction, seed, fraction_index, repeat) -> np.ndarray:
    """Boolean keep-mask with ceil(fraction * N) coordinates switched off."""
    k = math.ceil(fraction * N - 1e-9)
    if k >= N:
        raise DataError(f"suppressing a fraction {fraction} of {N} features leaves none")
    keep = np.ones(N, dtype=bool)
    keep[np.random.default_rng([seed, fraction_index, repeat, 30]).choice(N, size=k, replace=False)] = False
    return keep


def feature_ablation_curve(train: Dataset, test: Dataset, task: TaskSpec, fractions=(0.0, 0.5, 0.9), repeats=5,
                           config: ProbeConfig | None = None, seed=0, representation=None) -> AblationCurve:
    """Retrain an MLP probe with random coordinate subsets zeroed in both splits.

    Cell (fraction i, repeat r) uses a mask seeded by (seed, i, r) and probe
    seed ``seed + r``, so every cell is independent of evaluation order.
    """
    fractions = [float(f) for f in fractions]
    if not fractions or any(f < 0 or f > 1 for f in fractions):
        raise ConfigError("ablation fractions must lie in [0, 1]")
    if any(b <= a for a, b in zip(fractions, fractions[1:])):
        raise ConfigError("ablation fractions must be strictly increasing")
    if repeats < 1:
        raise ConfigError("ablation needs at least one repeat")
    Xtr, Xte = _represent(train, representation), _represent(test, representation)
    ytr, yte = train.labels(task.name), test.labels(task.name)
    acc = np.zeros((len(fractions), repeats))
    for i, f in enumerate(fractions):
        for r in range(repeats):
            keep = ablation_mask(Xtr.shape[1], f, seed, i, r)
            probe = fit_probe(Xtr * keep, ytr, task, "mlp", config, seed=seed + r)
            acc[i, r] = evaluate_arrays(probe, Xte * keep, yte).accuracy
    return AblationCurve(task.name, fractions, acc)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PCAResult:
    coords: np.ndarray
    components: np.ndarray  # (dims, N), orthonormal rows
    explained_variance: np.ndarray
    mean: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components.T


def pca_project(X, dims=2) -> PCAResult:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < dims:
        raise DataError(f"PCA to {dims} dimensions needs at least {dims} samples")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    if S.size == 0 or S[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise RankError("data is constant; no principal direction")
    comps = Vt[:dims]
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(len(comps)), np.abs(comps).argmax(axis=1)])
    comps = comps * signs[:, None]
    return PCAResult(Xc @ comps.T, comps, S[:dims] ** 2 / max(len(X) - 1, 1), mean)


def centroid_separation(coords, labels) -> float:
    """Mean pairwise distance between class centroids over the RMS spread of ``coords``."""
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("centroid separation needs at least two classes")
    cents = np.array([coords[labels == c].mean(axis=0) for c in classes])
    d = np.linalg.norm(cents[:, None] - cents[None], axis=-1)
    spread = math.sqrt(np.mean(np.sum((coords - coords.mean(0)) ** 2, axis=1)))
    if spread == 0:
        raise RankError("projection has no spread")
    return float(d[np.triu_indices(len(classes), 1)].mean() / spread)


# ---------------------------------------------------------------------------
# tables


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def confusion_csv(confusion, class_names=None) -> str:
    C = len(confusion)
    names = list(class_names) if class_names is not None else [str(i) for i in range(C)]
    return _csv(["true"] + names, [[names[i]] + [int(v) for v in confusion[i]] for i in range(C)])


def curve_csv(curve: AblationCurve) -> str:
    """Suppressed share and accuracy (mean, std over repeats), all in percent."""
    return _csv(["suppressed_pct", "mean_accuracy_pct", "std_pct"],
                [[f"{100 * f:.2f}", f"{100 * m:.2f}", f"{100 * s:.2f}"] for f, m, s in curve.points])


def pca_csv(result: PCAResult, sample_ids, labels) -> str:
    return _csv(["sample_id", "label", "c1", "c2"],
                [[int(i), int(l), f"{c[0]:.2f}", f"{c[1]:.2f}" if len(c) > 1 else ""]
                 for i, l, c in zip(sample_ids, labels, result.coords)])
