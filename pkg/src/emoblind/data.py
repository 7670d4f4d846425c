"""Synthetic face-embedding generator, splits, triplets, pairs and the dataset file format.

Every sample is built from a latent vector

    [ identity code | expression | gender | ethnicity | attractive | smile ]

and mapped to the embedding space by a seeded matrix with orthonormal
columns, so each factor is smeared over all N output coordinates. The
expression block holds one of six simplex-vertex prototypes plus a small
per-(identity, emotion) jitter. The Happy prototype also loads on the smile
coordinate: a smile is part of the happy expression, which is what ties the
smiling annotation to the emotion information a blinding map removes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

EMOTIONS = ("Neutral", "Happy", "Sad", "Disgusted", "Angry", "Surprised")
NEUTRAL, HAPPY = 0, 1
LABELS = ("identity", "emotion", "gender", "ethnicity", "attractive", "smiling")
HEADER_TASKS = ",".join(LABELS)


@dataclass
class GenConfig:
    num_identities: int = 240
    images_per_identity: int = 6
    N: int = 256
    identity_dim: int = 64
    emotion_dim: int = 8
    identity_scale: float = 2.0
    emotion_scale: float = 1.0
    emotion_jitter: float = 0.1
    gender_scale: float = 1.0
    ethnicity_scale: float = 1.0
    attractive_scale: float = 0.5
    attractive_jitter: float = 0.6
    smile_scale: float = 0.3
    happy_smile_loading: float = 0.6
    smile_happy_corr: float = 0.6
    noise_sigma: float = 0.05
    seed: int = 0
    mixing_seed: int | None = None

    def __post_init__(self):
        if self.N < self.identity_dim + self.emotion_dim + 4:
            raise ConfigError(
                f"N={self.N} is smaller than identity_dim + emotion_dim + 4 = {self.identity_dim + self.emotion_dim + 4}"
            )
        if self.emotion_dim < len(EMOTIONS) - 1:
            raise ConfigError("emotion_dim must be >= 5 to hold six separable prototypes")
        if self.num_identities < 1 or self.images_per_identity < 1 or self.identity_dim < 1:
            raise ConfigError("counts and dimensions must be positive")
        for name in ("identity_scale", "emotion_scale", "gender_scale", "ethnicity_scale",
                     "attractive_scale", "smile_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("emotion_jitter", "attractive_jitter", "noise_sigma", "happy_smile_loading"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.smile_happy_corr <= 1:
            raise ConfigError("smile_happy_corr must lie in [0, 1]")

    @property
    def latent_dim(self) -> int:
        return self.identity_dim + self.emotion_dim + 4

    @property
    def resolved_mixing_seed(self) -> int:
        return self.seed if self.mixing_seed is None else self.mixing_seed


@dataclass(frozen=True)
class LabeledSample:
    embedding: np.ndarray
    identity_id: int
    emotion: int
    gender: int
    ethnicity: int
    attractive: int
    smiling: int

    @property
    def emotion_name(self) -> str:
        return EMOTIONS[self.emotion]


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class VerificationPair:
    sample_a: int
    sample_b: int
    same_identity: bool


@dataclass
class Dataset:
    """Column-oriented sample store. Rows of ``X`` are embeddings."""

    X: np.ndarray
    identity: np.ndarray
    emotion: np.ndarray
    gender: np.ndarray
    ethnicity: np.ndarray
    attractive: np.ndarray
    smiling: np.ndarray
    sample_id: np.ndarray | None = None
    provenance: object = None
    mixing_seed: int | None = None
    latent: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError("embeddings must form a 2-D array")
        n = len(self.X)
        for name in LABELS:
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.shape != (n,):
                raise DataError(f"label column {name!r} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if self.sample_id is None:
            self.sample_id = np.arange(n)
        self.sample_id = np.asarray(self.sample_id, dtype=np.int64)

    def __len__(self):
        return len(self.X)

    @property
    def N(self) -> int:
        return self.X.shape[1]

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.X[i], *(int(getattr(self, name)[i]) for name in LABELS))

    @property
    def samples(self) -> list[LabeledSample]:
        return [self[i] for i in range(len(self))]

    def labels(self, task: str) -> np.ndarray:
        if task not in LABELS:
            raise DataError(f"unknown label column {task!r}")
        return getattr(self, task)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.X[idx],
            *(getattr(self, name)[idx] for name in LABELS),
            sample_id=self.sample_id[idx],
            provenance=self.provenance,
            mixing_seed=self.mixing_seed,
            latent=None if self.latent is None else self.latent[idx],
        )

    def with_embeddings(self, X) -> Dataset:
        """Same labels over a transformed representation."""
        out = self.subset(np.arange(len(self)))
        out.X = np.asarray(X, dtype=np.float64)
        if len(out.X) != len(self):
            raise DataError("representation changed the sample count")
        out.latent = None
        return out


def mixing_matrix(N, latent_dim, seed) -> np.ndarray:
    """N x latent_dim matrix with orthonormal columns (QR of a Gaussian draw)."""
    rng = np.random.default_rng([seed, 1])
    Q, R = np.linalg.qr(rng.normal(size=(N, latent_dim)))
    return Q * np.sign(np.diag(R))


def emotion_prototypes(emotion_dim, scale, seed) -> np.ndarray:
    """Vertices of a regular 6-simplex, randomly rotated into ``emotion_dim``, each of norm ``scale``."""
    k = len(EMOTIONS)
    simplex = np.eye(k) - 1.0 / k
    simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
    # orthonormal basis of the sum-zero plane, then a random rotation into emotion_dim
    basis = np.linalg.svd(simplex, full_matrices=False)[2][: k - 1]
    coords = simplex @ basis.T
    rng = np.random.default_rng([seed, 2])
    rot, _ = np.linalg.qr(rng.normal(size=(emotion_dim, emotion_dim)))
    return scale * coords @ rot[: k - 1]


def smile_rates(corr, p_happy=1.0 / len(EMOTIONS)) -> tuple[float, float]:
    """P(smiling | Happy) and P(smiling | other) whose phi coefficient with Happy equals ``corr``.

    P(smiling | Happy) is fixed at 0.5 + corr / 2; phi falls monotonically as
    the other rate rises towards it, so bisection finds the other rate.
    """
    a = 0.5 + corr / 2
    sd_h = math.sqrt(p_happy * (1 - p_happy))

    def phi(b):
        ps = p_happy * a + (1 - p_happy) * b
        return (a - b) * sd_h / math.sqrt(ps * (1 - ps))

    if phi(0.0) < corr - 1e-12:
        raise ConfigError(f"no smiling rates reach correlation {corr} with Happy")
    lo, hi = 0.0, a
    for _ in range(200):
        mid = (lo + hi) / 2
        if phi(mid) > corr:
            lo = mid
        else:
            hi = mid
    return a, (lo + hi) / 2


def generate_dataset(config: GenConfig | None = None) -> Dataset:
    cfg = config or GenConfig()
    mseed = cfg.resolved_mixing_seed
    Q = mixing_matrix(cfg.N, cfg.latent_dim, mseed)
    protos = emotion_prototypes(cfg.emotion_dim, cfg.emotion_scale, mseed)
    rng = np.random.default_rng([cfg.seed, 3])

    n_id, per = cfg.num_identities, cfg.images_per_identity
    n = n_id * per
    z_id = rng.normal(size=(n_id, cfg.identity_dim)) * (cfg.identity_scale / math.sqrt(cfg.identity_dim))
    id_gender = rng.integers(0, 2, size=n_id)
    id_ethnicity = rng.integers(0, 3, size=n_id)
    jitter = rng.normal(0.0, cfg.emotion_jitter, size=(n_id, len(EMOTIONS), cfg.emotion_dim))

    identity = np.repeat(np.arange(n_id), per)
    emotion = np.tile(np.arange(per) % len(EMOTIONS), n_id)
    attractive = rng.integers(0, 2, size=n)
    happy = emotion == HAPPY
    p_smile = np.where(happy, *smile_rates(cfg.smile_happy_corr))
    smiling = (rng.random(n) < p_smile).astype(np.int64)
    attr_noise = rng.normal(0.0, cfg.attractive_jitter, size=n)

    d0 = cfg.identity_dim
    d1 = d0 + cfg.emotion_dim
    latent = np.zeros((n, cfg.latent_dim))
    latent[:, :d0] = z_id[identity]
    latent[:, d0:d1] = protos[emotion] + jitter[identity, emotion]
    latent[:, d1] = cfg.gender_scale * (2 * id_gender[identity] - 1)
    latent[:, d1 + 1] = cfg.ethnicity_scale * (id_ethnicity[identity] - 1)
    latent[:, d1 + 2] = cfg.attractive_scale * (2 * attractive - 1) + attr_noise
    latent[:, d1 + 3] = cfg.smile_scale * (2 * smiling - 1) + cfg.happy_smile_loading * happy

    X = latent @ Q.T
    if cfg.noise_sigma > 0:
        X = X + rng.normal(0.0, cfg.noise_sigma, size=X.shape)
    return Dataset(
        X, identity, emotion, id_gender[identity], id_ethnicity[identity], attractive, smiling,
        provenance=cfg, mixing_seed=mseed, latent=latent,
    )


def split_by_identity(ds: Dataset, fractions=(0.8, 0.0, 0.2), seed=0, mode="identity"):
    """Partition into (train, dev, test).

    ``mode="identity"`` keeps every identity inside one split (needed for
    verification); ``mode="sample"`` splits individual samples.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = np.random.default_rng([seed, 4])
    if mode == "identity":
        units = np.unique(ds.identity)
    elif mode == "sample":
        units = np.arange(len(ds))
    else:
        raise ConfigError(f"unknown split mode {mode!r}")
    units = units[rng.permutation(len(units))]
    n_train = int(round(fractions[0] * len(units)))
    n_dev = int(round(fractions[1] * len(units)))
    n_dev = min(n_dev, len(units) - n_train)
    bounds = [0, n_train, n_train + n_dev, len(units)]
    parts = []
    for k in range(3):
        chosen = units[bounds[k] : bounds[k + 1]]
        if fractions[k] > 0 and len(chosen) == 0:
            raise ConfigError(f"split {k} would be empty (fraction {fractions[k]}, {len(units)} units)")
        if mode == "identity":
            idx = np.flatnonzero(np.isin(ds.identity, chosen))
        else:
            idx = np.sort(chosen)
        parts.append(ds.subset(idx))
    return tuple(parts)


def _groups(ds: Dataset):
    order = np.argsort(ds.identity, kind="stable")
    ids, starts = np.unique(ds.identity[order], return_index=True)
    return ids, np.split(order, starts[1:])


def triplet_indices(ds: Dataset, count, rng) -> np.ndarray:
    """(count, 3) array of anchor/positive/negative row indices."""
    ids, members = _groups(ds)
    if len(ids) < 2:
        raise DataError("triplets need at least two identities")
    eligible = [k for k, m in enumerate(members) if len(m) >= 2]
    if not eligible:
        raise DataError("no identity has two or more samples")
    out = np.empty((count, 3), dtype=np.int64)
    n = len(ds)
    for t in range(count):
        group = members[eligible[rng.integers(len(eligible))]]
        a, p = rng.choice(len(group), size=2, replace=False)
        anchor = group[a]
        neg = rng.integers(n)
        while ds.identity[neg] == ds.identity[anchor]:
            neg = rng.integers(n)
        out[t] = (anchor, group[p], neg)
    return out


def sample_triplets(ds: Dataset, count, seed=0) -> list[Triplet]:
    if count == 0:
        return []
    rows = triplet_indices(ds, count, np.random.default_rng([seed, 5]))
    return [Triplet(int(a), int(p), int(n)) for a, p, n in rows]


def build_verification_pairs(ds: Dataset, count, seed=0) -> list[VerificationPair]:
    """Balanced genuine/impostor pairs; indices refer to rows of ``ds``."""
    ids, members = _groups(ds)
    if len(ids) < 2:
        raise DataError("verification pairs need at least two identities")
    eligible = [m for m in members if len(m) >= 2]
    if not eligible:
        raise DataError("no identity has two samples for a genuine pair")
    rng = np.random.default_rng([seed, 6])
    n_genuine = (count + 1) // 2
    pairs = []
    for _ in range(n_genuine):
        group = eligible[rng.integers(len(eligible))]
        a, b = rng.choice(len(group), size=2, replace=False)
        pairs.append(VerificationPair(int(group[a]), int(group[b]), True))
    for _ in range(count - n_genuine):
        i, j = rng.choice(len(members), size=2, replace=False)
        a = members[i][rng.integers(len(members[i]))]
        b = members[j][rng.integers(len(members[j]))]
        pairs.append(VerificationPair(int(a), int(b), False))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


# ---------------------------------------------------------------------------
# file format


def write_dataset(ds: Dataset, path) -> None:
    if not np.all(np.isfinite(ds.X)):
        raise DataError("refusing to write non-finite embeddings")
    lines = [f"N={ds.N} tasks={HEADER_TASKS}"]
    cols = [getattr(ds, name) for name in LABELS]
    for i in range(len(ds)):
        labels = " ".join(str(int(c[i])) for c in cols)
        values = " ".join(repr(float(v)) for v in ds.X[i])
        lines.append(f"{labels} {values}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    header = lines[0].split()
    if len(header) != 2 or not header[0].startswith("N=") or header[1] != f"tasks={HEADER_TASKS}":
        raise ParseError(f"header must read 'N=<int> tasks={HEADER_TASKS}'", 1)
    try:
        N = int(header[0][2:])
    except ValueError:
        raise ParseError("N is not an integer", 1) from None
    if N < 1:
        raise ParseError("N must be positive", 1)
    width = len(LABELS) + N
    labels = np.empty((len(lines) - 1, len(LABELS)), dtype=np.int64)
    X = np.empty((len(lines) - 1, N))
    for row, line in enumerate(lines[1:]):
        lineno = row + 2
        parts = line.split(" ")
        if len(parts) != width:
            raise ParseError(f"expected {len(LABELS)} labels and {N} values, found {len(parts)} fields", lineno)
        try:
            labels[row] = [int(p) for p in parts[: len(LABELS)]]
        except ValueError:
            raise ParseError("labels must be integers", lineno) from None
        try:
            X[row] = [float(p) for p in parts[len(LABELS) :]]
        except ValueError:
            raise ParseError("embedding values must be decimal numbers", lineno) from None
        if not np.all(np.isfinite(X[row])):
            raise ParseError("non-finite embedding value", lineno)
        lab = labels[row]
        if not (0 <= lab[1] < len(EMOTIONS) and lab[2] in (0, 1) and 0 <= lab[3] < 3 and lab[4] in (0, 1) and lab[5] in (0, 1)):
            raise ParseError("label outside its class range", lineno)
    return Dataset(X, *labels.T, provenance=str(path))


def config_fields(cls) -> list[str]:
    return [f.name for f in fields(cls)]
