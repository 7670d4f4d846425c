"""Equality of opportunity for an attractiveness classifier trained on smiling-biased data."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset
from .errors import ConfigError, DataError, UndefinedMetricError


@dataclass
class BiasSpec:
    positive_class_smiling_rate: float = 0.70
    negative_class_smiling_rate: float = 0.30
    balance_gender: bool = True
    seed: int = 0
    test_identity_fraction: float = 0.5
    min_class_size: int = 20

    def __post_init__(self):
        for name in ("positive_class_smiling_rate", "negative_class_smiling_rate", "test_identity_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.min_class_size < 1:
            raise ConfigError("min_class_size must be positive")


@dataclass
class FairnessConfig:
    hidden: int | None = None  # None means min(1024, 4N)
    threshold: float = 0.5
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=25))

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = nn.TrainConfig(**self.train)
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("decision threshold must lie in (0, 1)")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError("hidden width must be positive")


@dataclass
class FairnessReport:
    accuracy: float
    tpr_smiling: float
    tpr_not_smiling: float
    eq_opp: float
    representation: str = "x"
    repeats: int = 1
    per_repeat: list = field(default_factory=list)

    @property
    def tpr_gap(self) -> float:
        return self.tpr_smiling - self.tpr_not_smiling

    def as_row(self) -> dict:
        return {"method": self.representation, "accuracy": self.accuracy, "tpr_smiling": self.tpr_smiling,
                "tpr_not_smiling": self.tpr_not_smiling, "eq_opp": self.eq_opp}


def eq_opp_from_tprs(tpr_smiling, tpr_not_smiling) -> float:
    """100 - (TPR_smiling - TPR_not_smiling), all in percent."""
    return 100.0 - (tpr_smiling - tpr_not_smiling)


def equality_of_opportunity(predictions, attractive, smiling, representation="x") -> FairnessReport:
    """Per-group true-positive rates over attractive = 1 samples, in percent."""
    pred = np.asarray(predictions).astype(int)
    att = np.asarray(attractive).astype(int)
    smi = np.asarray(smiling).astype(int)
    if not (len(pred) == len(att) == len(smi)):
        raise DataError("predictions, attractive and smiling labels differ in length")
    if len(pred) == 0:
        raise DataError("no samples to score")
    tprs = {}
    for group, name in ((1, "smiling"), (0, "not smiling")):
        pos = (att == 1) & (smi == group)
        if not pos.any():
            raise UndefinedMetricError(f"no attractive samples in the {name} group; TPR undefined")
        tprs[group] = 100.0 * float(np.mean(pred[pos] == 1))
    acc = 100.0 * float(np.mean(pred == att))
    return FairnessReport(acc, tprs[1], tprs[0], eq_opp_from_tprs(tprs[1], tprs[0]), representation)


# ---------------------------------------------------------------------------
# splits


def _take(rng, idx, k):
    return np.sort(rng.choice(idx, size=k, replace=False)) if k else np.array([], dtype=int)


def build_biased_split(ds: Dataset, spec: BiasSpec | None = None):
    """Return ``(train, test)``: a smiling-biased train split and an unbiased test split.

    Identities are divided between the two pools, so the splits share no
    samples (and no people). Train holds equally many attractive and
    unattractive samples with the requested smiling rate in each class;
    test holds 50% smiling within each attractiveness class.
    """
    spec = spec or BiasSpec()
    rng = np.random.default_rng([spec.seed, 40])
    ids = np.unique(ds.identity)
    ids = ids[rng.permutation(len(ids))]
    n_test = int(round(spec.test_identity_fraction * len(ids)))
    test_pool = np.isin(ds.identity, ids[:n_test])
    train_pool = ~test_pool
    for a in (0, 1):
        for s in (0, 1):
            if not np.any((ds.attractive == a) & (ds.smiling == s)):
                raise DataError(f"no samples with attractive={a}, smiling={s}")

    rates = {1: spec.positive_class_smiling_rate, 0: spec.negative_class_smiling_rate}
    genders = (0, 1) if spec.balance_gender else (None,)
    share = 1.0 / len(genders)

    def cell(pool, a, s, g):
        m = pool & (ds.attractive == a) & (ds.smiling == s)
        if g is not None:
            m &= ds.gender == g
        return np.flatnonzero(m)

    # largest per-class size every (class, smiling, gender) cell can supply
    n_class = np.inf
    for a in (0, 1):
        for s, r in ((1, rates[a]), (0, 1.0 - rates[a])):
            for g in genders:
                if r > 0:
                    n_class = min(n_class, len(cell(train_pool, a, s, g)) / (r * share))
    n_class = int(n_class)
    if n_class < spec.min_class_size:
        ranges = []
        for a in (1, 0):
            smile = min(len(cell(train_pool, a, 1, g)) for g in genders) / share
            plain = min(len(cell(train_pool, a, 0, g)) for g in genders) / share
            m = spec.min_class_size
            ranges.append(f"class {a}: [{max(0.0, 1 - plain / m):.2f}, {min(1.0, smile / m):.2f}]")
        raise DataError(f"cannot reach smiling rates ({rates[1]}, {rates[0]}) with {spec.min_class_size} "
                        f"samples per class; achievable rates are " + ", ".join(ranges))

    train_idx = []
    for a in (0, 1):
        n_smile = int(round(n_class * rates[a]))
        for s, k in ((1, n_smile), (0, n_class - n_smile)):
            per = [k // len(genders)] * len(genders)
            for i in range(k - sum(per)):
                per[i] += 1
            for g, kg in zip(genders, per):
                train_idx.append(_take(rng, cell(train_pool, a, s, g), kg))

    n_cell = min(len(cell(test_pool, a, s, None)) for a in (0, 1) for s in (0, 1))
    if n_cell == 0:
        raise DataError("test pool lacks an (attractive, smiling) combination")
    test_idx = [_take(rng, cell(test_pool, a, s, None), n_cell) for a in (0, 1) for s in (0, 1)]
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))


def smiling_rates(ds: Dataset) -> dict[int, float]:
    """Fraction of smiling samples within each attractiveness class."""
    return {a: float(ds.smiling[ds.attractive == a].mean()) for a in (0, 1) if np.any(ds.attractive == a)}


# ---------------------------------------------------------------------------
# classifier


@dataclass
class AttractivenessHead:
    net: nn.DenseNet
    threshold: float = 0.5

    def probability(self, X) -> np.ndarray:
        return nn.predict(self.net, X)[:, 0]

    def predict(self, X) -> np.ndarray:
        return (self.probability(X) >= self.threshold).astype(np.int64)


def train_attractiveness_head(train: Dataset, representation=None, config: FairnessConfig | None = None,
                              seed=0) -> AttractivenessHead:
    """One relu hidden layer and a sigmoid unit, trained with binary cross-entropy."""
    cfg = config or FairnessConfig()
    X = train.X if representation is None else representation(train.X)
    y = train.attractive
    if len(np.unique(y)) < 2:
        raise DataError("attractiveness training split holds a single class")
    N = X.shape[1]
    hidden = cfg.hidden or min(1024, 4 * N)
    net = nn.init_net([N, hidden, 1], ["relu", "sigmoid"], seed=seed, name="attractive")
    nn.fit(net, X, y, cfg.train, loss="bce", seed=seed)
    return AttractivenessHead(net, cfg.threshold)


# ---------------------------------------------------------------------------
# experiment


def aggregate(reports: list[FairnessReport], representation: str) -> FairnessReport:
    """Average accuracy and TPRs over repeats; eq_opp follows from the mean TPRs."""
    if not reports:
        raise DataError("nothing to aggregate")
    acc = float(np.mean([r.accuracy for r in reports]))
    ts = float(np.mean([r.tpr_smiling for r in reports]))
    tn = float(np.mean([r.tpr_not_smiling for r in reports]))
    per = [{"accuracy": r.accuracy, "tpr_smiling": r.tpr_smiling, "tpr_not_smiling": r.tpr_not_smiling,
            "eq_opp": r.eq_opp} for r in reports]
    return FairnessReport(acc, ts, tn, eq_opp_from_tprs(ts, tn), representation, len(reports), per)


def run_fairness_experiment(ds: Dataset, spec: BiasSpec | None = None, representations=None, repeats=5,
                            config: FairnessConfig | None = None, seed=0) -> list[FairnessReport]:
    """One aggregated report per representation.

    ``representations`` maps a tag to a callable (or None for raw
    embeddings). Repeat ``r`` draws its split with seed ``(spec.seed, r)``
    and trains heads with seed ``seed + r``.
    """
    spec = spec or BiasSpec()
    representations = representations or {"x": None}
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    per_rep = {name: [] for name in representations}
    for r in range(repeats):
        rspec = BiasSpec(**{**spec.__dict__, "seed": spec.seed * 1000 + r})
        train, test = build_biased_split(ds, rspec)
        for name, rep in representations.items():
            head = train_attractiveness_head(train, rep, config, seed=seed + r)
            Xt = test.X if rep is None else rep(test.X)
            per_rep[name].append(equality_of_opportunity(head.predict(Xt), test.attractive, test.smiling, name))
    return [aggregate(per_rep[name], name) for name in representations]


def table_csv(reports: list[FairnessReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "accuracy", "tpr_smiling", "tpr_not_smiling", "eq_opp"])
    for r in reports:
        w.writerow([r.representation] + [f"{v:.2f}" for v in (r.accuracy, r.tpr_smiling, r.tpr_not_smiling, r.eq_opp)])
    return buf.getvalue()
