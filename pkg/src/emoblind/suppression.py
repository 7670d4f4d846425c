"""Emotion-blinding maps: adversarial suppression (SN) and Learning-not-to-Learn (LnL).

SN learns a stack of linear layers phi(x) while a freshly retrained emotion
head acts as the adversary. The suppressor minimises a triplet loss on
identity triplets plus the Delta penalty, which drives the adversary's
Neutral probability towards ``delta_target`` for anchor, positive and
negative alike.

LnL retrains an encoder adapter feeding a main-task head and an emotion
head. The emotion head learns normally on detached features; the encoder
gets the reversed emotion gradient plus a posterior-entropy term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import nn
from .data import EMOTIONS, NEUTRAL, Dataset, build_verification_pairs, triplet_indices
from .errors import ConfigError, DataError, NumericError, ParseError, ShapeError
from .tasks import TaskSpec


class UnsupportedTaskError(ConfigError):
    pass


@dataclass
class SuppressionConfig:
    outer_iterations: int = 30
    adversary_epochs: int = 30
    suppressor_steps: int = 15
    triplet_batch: int | None = 512
    adversary_hidden: int = 128
    pretrain_epochs: int = 30
    margin: float = 0.8
    normalize_triplets: bool = True
    adversary_shrink: float | None = 0.1
    adversary_memory: int = 10
    renormalize: bool = True
    delta_target: float = 0.9
    delta_weight: float = 1.0
    sn_depth: int = 3
    sn_width: int | None = None
    init_noise: float = 0.01
    suppressor_learning_rate: float | None = 0.003
    emotion_ceiling: float | None = 0.3
    keep_best: bool = True
    verification_floor: float | None = None
    lnl_lambda: float = 1.0
    reversal_scale: float = 0.01
    lnl_epochs: int = 60
    lnl_head_steps: int = 1
    lnl_fresh_heads: int = 10
    encoder_width: int | None = 32
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = nn.TrainConfig(**self.train)
        if self.outer_iterations < 1:
            raise ConfigError("outer_iterations must be >= 1")
        if not 0 < self.delta_target <= 1:
            raise ConfigError("delta_target must lie in (0, 1]")
        if self.lnl_lambda < 0 or self.reversal_scale < 0:
            raise ConfigError("lnl_lambda and reversal_scale must be >= 0")
        if self.adversary_epochs < 0 or self.suppressor_steps < 0 or self.lnl_epochs < 0:
            raise ConfigError("epoch and step counts must be >= 0")
        if self.margin < 0 or self.delta_weight < 0:
            raise ConfigError("margin and delta_weight must be >= 0")
        if self.adversary_memory < 1 or self.lnl_head_steps < 1 or self.lnl_fresh_heads < 0:
            raise ConfigError("adversary_memory and lnl_head_steps must be >= 1, lnl_fresh_heads >= 0")
        if self.triplet_batch is not None and self.triplet_batch < 1:
            raise ConfigError("triplet_batch must be positive")
        for name in ("emotion_ceiling", "verification_floor"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.adversary_shrink is not None and self.adversary_shrink < 0:
            raise ConfigError("adversary_shrink must be >= 0")
        for name in ("sn_width", "encoder_width"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")
        if self.sn_depth < 1:
            raise ConfigError("sn_depth must be >= 1")


@dataclass
class Suppressor:
    kind: str  # "SN" or "LnL"
    network: nn.DenseNet
    history: list[dict] = field(default_factory=list)
    config: SuppressionConfig | None = None

    def __post_init__(self):
        if self.kind not in ("SN", "LnL"):
            raise ConfigError(f"unknown suppressor kind {self.kind!r}")

    def __call__(self, X):
        return apply(self, X)

    @property
    def in_dim(self) -> int:
        return self.network.in_dim

    @property
    def out_dim(self) -> int:
        return self.network.out_dim


def apply(s: Suppressor, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.in_dim:
        raise ShapeError(f"suppressor expects dimension {s.in_dim}, got {x.shape[-1]}")
    out = nn.predict(s.network, x)
    return out[0] if x.ndim == 1 else out


# ---------------------------------------------------------------------------
# Delta penalty


def neutral_probability(emotion_head: nn.DenseNet, phi_x):
    """P(Neutral) under ``emotion_head``; scalar for one vector, array for a batch."""
    if emotion_head.out_dim != len(EMOTIONS):
        raise ShapeError(f"emotion head must emit {len(EMOTIONS)} classes, emits {emotion_head.out_dim}")
    phi_x = np.asarray(phi_x, dtype=np.float64)
    trace = nn.forward(emotion_head, phi_x)
    probs = trace.output if emotion_head.layers[-1].activation == "softmax" else nn.softmax(trace.logits)
    p = probs[:, NEUTRAL]
    return float(p[0]) if phi_x.ndim == 1 else p


def delta_regularizer(p_neutral, target=0.9):
    """log(1 + |target - p|) and its derivative in p (0 at the kink)."""
    p = float(p_neutral)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"p_neutral must lie in [0, 1], got {p_neutral}")
    gap = target - p
    return math.log1p(abs(gap)), -float(np.sign(gap)) / (1.0 + abs(gap))


def _delta_batch(p, target):
    gap = target - p
    return np.log1p(np.abs(gap)), -np.sign(gap) / (1.0 + np.abs(gap))


def delta_input_gradient(head: nn.DenseNet, phi, target=0.9):
    """Batch-mean Delta at ``phi`` and its gradient with respect to ``phi``."""
    trace = nn.forward(head, phi)
    probs = nn.softmax(trace.logits)
    p = probs[:, NEUTRAL]
    value, dp = _delta_batch(p, target)
    # d p_neutral / d logits = p_n * (onehot_n - probs)
    g_logits = -probs * p[:, None]
    g_logits[:, NEUTRAL] += p
    g_logits *= (dp / len(p))[:, None]
    _, g_in = nn.backward(head, trace, g_logits, from_logits=True, params=False)
    return float(value.mean()), g_in


# ---------------------------------------------------------------------------
# helpers


def emotion_head(in_dim, hidden, seed) -> nn.DenseNet:
    return nn.init_net([in_dim, hidden, len(EMOTIONS)], ["relu", "softmax"], seed=seed, name="w_3")


def whitening_layer(X, shrink=0.1) -> nn.Layer:
    """Affine layer mapping ``X`` to roughly identity covariance.

    Eigenvalues are floored at ``shrink`` times their mean so that
    near-empty directions are not blown up into pure noise.
    """
    mu = X.mean(axis=0)
    cov = np.cov(X, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None) + shrink * max(evals.mean(), 1e-12)
    W = (evecs / np.sqrt(evals)) @ evecs.T
    return nn.Layer(W, -W @ mu, "linear")


def train_adversary(X, y, hidden, config: nn.TrainConfig, epochs, seed, shrink=0.1) -> nn.DenseNet:
    """Fresh emotion head trained on ``X``.

    Unless ``shrink`` is None, the head sees whitened inputs and the frozen
    whitening becomes its first layer.
    """
    head = emotion_head(X.shape[1], hidden, seed=seed)
    if shrink is None:
        nn.fit(head, X, y, config, seed=seed, epochs=epochs)
        return head
    pre = whitening_layer(X, shrink)
    nn.fit(head, X @ pre.W.T + pre.b, y, config, seed=seed, epochs=epochs)
    # fold the whitening into the first layer; both are affine before the activation
    first = head.layers[0]
    folded = nn.Layer(first.W @ pre.W, first.W @ pre.b + first.b, first.activation)
    return nn.DenseNet([folded] + head.layers[1:], "w_3")


def _accuracy(net, X, y):
    return float(np.mean(nn.predict(net, X).argmax(axis=1) == y))


def _cosine_verification(X, pairs):
    """Best-threshold pair accuracy on the pairs themselves; a training-time monitor only."""
    a = X[[p.sample_a for p in pairs]]
    b = X[[p.sample_b for p in pairs]]
    sims = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-12)
    same = np.array([p.same_identity for p in pairs])
    order = np.argsort(-sims)
    # predicting "same" for the top-k similarities, k = 0..n
    tp = np.concatenate([[0], np.cumsum(same[order])])
    fp = np.arange(len(order) + 1) - tp
    correct = tp + (len(same) - same.sum() - fp)
    return float(correct.max() / len(same))


def _split_holdout(n, frac, rng):
    order = rng.permutation(n)
    k = max(1, int(round(frac * n)))
    return order[k:], order[:k]


# ---------------------------------------------------------------------------
# SensitiveNets-style suppression


def train_sensitivenets(sp: Dataset, se: Dataset, config: SuppressionConfig | None = None, seed=0) -> Suppressor:
    """Alternate adversary retraining on ``se`` with suppressor updates on ``sp`` triplets.

    Each outer iteration records the triplet loss, mean Delta, adversary
    accuracy on a held-out fifth of ``se`` and a verification monitor on
    ``sp`` pairs.
    """
    cfg = config or SuppressionConfig()
    if len(sp) == 0 or len(se) == 0:
        raise DataError("SensitiveNets needs non-empty suppression sets")
    if sp.N != se.N:
        raise ShapeError("sp and se embeddings differ in dimension")
    N = sp.N
    tc = cfg.train
    rng = np.random.default_rng([seed, 10])

    width = cfg.sn_width or N
    if width == N:
        net = nn.identity_net(N, depth=cfg.sn_depth, noise=cfg.init_noise, seed=seed, name="w_E")
    else:
        net = nn.init_net([N] + [width] * (cfg.sn_depth - 1) + [N], ["linear"] * cfg.sn_depth, seed=seed, name="w_E")
    state = nn.AdamState.zeros(net)
    sup_tc = tc
    if cfg.suppressor_learning_rate is not None:
        sup_tc = replace(tc, learning_rate=cfg.suppressor_learning_rate)

    adv_train, adv_hold = _split_holdout(len(se), 0.2, rng)
    Xe, ye = se.X, se.emotion
    in_var = Xe.var(axis=0).sum()
    monitor_pairs = build_verification_pairs(sp, min(400, 4 * len(sp)), seed=seed)

    head = None
    if cfg.delta_weight > 0:
        # pre-trained emotion classifier on the unmodified embeddings
        try:
            head = train_adversary(Xe[adv_train], ye[adv_train], cfg.adversary_hidden, tc, cfg.pretrain_epochs,
                                   seed=seed, shrink=cfg.adversary_shrink)
        except NumericError as exc:
            raise NumericError(f"iteration 0 (adversary pretraining): {exc}") from None

    history = []
    heads = []
    best, best_acc = None, math.inf
    for it in range(cfg.outer_iterations):
        phi_e = nn.predict(net, Xe)
        if cfg.adversary_epochs > 0:
            try:
                head = train_adversary(phi_e[adv_train], ye[adv_train], cfg.adversary_hidden, tc,
                                       cfg.adversary_epochs, seed=seed * 1000 + it + 1, shrink=cfg.adversary_shrink)
            except NumericError as exc:
                raise NumericError(f"iteration {it} (adversary step): {exc}") from None
        if head is not None:
            heads = (heads + [head])[-cfg.adversary_memory:]
        # both monitors describe the network entering this iteration
        adv_acc = _accuracy(head, phi_e[adv_hold], ye[adv_hold]) if head is not None else float("nan")
        verif = _cosine_verification(nn.predict(net, sp.X), monitor_pairs)
        entry = {"iteration": it, "adversary_accuracy": adv_acc, "verification_monitor": verif}
        usable = cfg.verification_floor is None or verif >= cfg.verification_floor
        if cfg.keep_best and usable and adv_acc < best_acc:
            best, best_acc = (it, net.copy()), adv_acc
        if cfg.emotion_ceiling is not None and usable and adv_acc <= cfg.emotion_ceiling:
            entry.update(triplet_loss=None, mean_delta=None, stopped="emotion_ceiling")
            history.append(entry)
            best = (it, net.copy())
            break

        t_losses, d_losses = [], []
        for _ in range(cfg.suppressor_steps):
            rows = triplet_indices(sp, cfg.triplet_batch or tc.batch_size, rng)
            B = len(rows)
            # anchors, positives and negatives share one pass through w_E
            trace = nn.forward(net, sp.X[rows.T.ravel()])
            outs = [trace.output[k * B:(k + 1) * B] for k in range(3)]
            if cfg.normalize_triplets:
                units = [nn.l2_normalize(o) for o in outs]
                t_loss, t_grads = nn.triplet_loss(*(u for u, _ in units), margin=cfg.margin)
                g_out = np.concatenate([back(g) for (_, back), g in zip(units, t_grads)])
            else:
                t_loss, t_grads = nn.triplet_loss(*outs, margin=cfg.margin)
                g_out = np.concatenate(t_grads)
            d_total = 0.0
            if heads and cfg.delta_weight > 0:
                # earlier adversaries stay in force as constraints; the stacked
                # batch mean is rescaled to the sum of the three per-role means
                for h in heads:
                    d_val, g_phi = delta_input_gradient(h, trace.output, cfg.delta_target)
                    d_total += 3.0 * d_val / len(heads)
                    g_out = g_out + (3.0 * cfg.delta_weight / len(heads)) * g_phi
            if not (math.isfinite(t_loss) and math.isfinite(d_total)):
                raise NumericError(f"non-finite suppression loss at iteration {it}")
            grads, _ = nn.backward(net, trace, g_out)
            nn.adam_update(net, grads, state, sup_tc)
            t_losses.append(t_loss)
            d_losses.append(d_total / 3.0)
        if cfg.renormalize:
            # both losses ignore overall scale, so pin it to the input variance
            out_var = nn.predict(net, Xe).var(axis=0).sum()
            if out_var > 0:
                last = net.layers[-1]
                c = math.sqrt(in_var / out_var)
                last.W *= c
                last.b *= c
        entry["triplet_loss"] = float(np.mean(t_losses)) if t_losses else 0.0
        entry["mean_delta"] = float(np.mean(d_losses)) if d_losses else 0.0
        history.append(entry)

    if best is not None:
        history[best[0]]["selected"] = True
        net = best[1]
    return Suppressor("SN", net, history, cfg)


def adversary_tail_nonincreasing(history, tol=0.05) -> bool:
    """True when held-out adversary accuracy never rises by more than ``tol`` over the last quartile."""
    accs = [h["adversary_accuracy"] for h in history]
    tail = accs[len(accs) - max(1, len(accs) // 4) :]
    return all(b <= a + tol for a, b in zip(tail, tail[1:]))


# ---------------------------------------------------------------------------
# Learning not to Learn

LNL_TASKS = ("identity", "gender", "ethnicity")


def _entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _neg_entropy_grad(probs):
    """Batch mean of sum p log p and its gradient with respect to the logits."""
    logp = np.log(np.clip(probs, 1e-300, None))
    neg_h = np.sum(probs * logp, axis=1)
    g = probs * (logp - neg_h[:, None])
    return float(neg_h.mean()), g / len(probs)


def lnl_encoder_gradient(encoder, main_head, emo_head, X, y_main, y_emo, lam, mu, adversaries=()):
    """Encoder gradients for one batch plus the quantities the trainer logs.

    The encoder receives the main-task gradient, the emotion-head gradient
    through a reversal layer of scale ``mu`` and ``lam`` times the gradient of
    the negative posterior entropy. With ``adversaries`` (frozen emotion
    heads) the entropy term is averaged over them and the online head; the
    reversal acts through the online head only. Returns a dict with encoder, main-head and emotion-head parameter
    gradients.
    """
    tr_enc = nn.forward(encoder, X)
    h = tr_enc.output
    tr_main = nn.forward(main_head, h)
    main_loss, g_main_logits = nn.cross_entropy(tr_main.logits, y_main)
    main_grads, g_h_main = nn.backward(main_head, tr_main, g_main_logits, from_logits=True)

    tr_emo = nn.forward(emo_head, h)
    emo_loss, g_emo_logits = nn.cross_entropy(tr_emo.logits, y_emo)
    emo_grads, g_h_emo = nn.backward(emo_head, tr_emo, g_emo_logits, from_logits=True)

    probs = nn.softmax(tr_emo.logits)
    neg_h, g_negh_logits = _neg_entropy_grad(probs)
    _, g_h_negh = nn.backward(emo_head, tr_emo, g_negh_logits, from_logits=True)

    # the entropy term is averaged over the online head and the frozen ones
    g_ent = g_h_negh
    for head in adversaries:
        tr = nn.forward(head, h)
        _, g_logits = _neg_entropy_grad(nn.softmax(tr.logits))
        g_ent = g_ent + nn.backward(head, tr, g_logits, from_logits=True, params=False)[1]
    g_h = g_h_main + nn.gradient_reversal(g_h_emo, mu) + lam * g_ent / (1 + len(adversaries))
    enc_grads, _ = nn.backward(encoder, tr_enc, g_h)
    return {
        "encoder": enc_grads,
        "main_head": main_grads,
        "emotion_head": emo_grads,
        "main_loss": main_loss,
        "emotion_loss": emo_loss,
        "entropy": -neg_h,
        "main_correct": int(np.sum(tr_main.logits.argmax(axis=1) == y_main)),
        "emotion_correct": int(np.sum(tr_emo.logits.argmax(axis=1) == y_emo)),
        "posterior_sum": probs.sum(axis=0),
    }


def train_lnl(train: Dataset, main_task: TaskSpec | str, config: SuppressionConfig | None = None, seed=0) -> Suppressor:
    cfg = config or SuppressionConfig()
    name = main_task if isinstance(main_task, str) else main_task.name
    if name not in LNL_TASKS:
        raise UnsupportedTaskError(
            f"LnL supports closed-set tasks {LNL_TASKS}, not {name!r}; it needs a bounded class count"
        )
    if len(train) == 0:
        raise DataError("empty training set")
    y_main = train.labels(name)
    if name == "identity":
        _, y_main = np.unique(y_main, return_inverse=True)
    n_main = int(y_main.max()) + 1
    if n_main < 2:
        raise DataError("main task has a single class")
    y_emo = train.emotion
    N = train.N
    width = cfg.encoder_width or N
    tc = cfg.train

    if width == N:
        encoder = nn.identity_net(N, depth=1, noise=cfg.init_noise, seed=seed, name="lnl-encoder")
    else:
        encoder = nn.init_net([N, width], ["linear"], seed=seed, name="lnl-encoder")
    main_head = nn.init_net([width, n_main], ["softmax"], seed=seed + 1, name=f"w_{name}")
    emo = emotion_head(width, cfg.adversary_hidden, seed=seed + 2)

    def emotion_view():
        # the head reads whitened encoder output; the whitening is frozen per epoch
        if cfg.adversary_shrink is None:
            return emo, 0
        white = whitening_layer(nn.predict(encoder, train.X), cfg.adversary_shrink)
        return nn.DenseNet([white] + emo.layers, "w_3"), 1

    # start from heads trained on the initial encoder output
    h0 = nn.predict(encoder, train.X)
    nn.fit(main_head, h0, y_main, tc, seed=seed + 3, epochs=cfg.pretrain_epochs)
    view, skip = emotion_view()
    if skip:
        h0 = h0 @ view.layers[0].W.T + view.layers[0].b
    nn.fit(emo, h0, y_emo, tc, seed=seed + 4, epochs=cfg.pretrain_epochs)

    states = {k: nn.AdamState.zeros(net) for k, net in (("encoder", encoder), ("main_head", main_head), ("emotion_head", emo))}
    nets = {"encoder": encoder, "main_head": main_head, "emotion_head": emo}
    rng = np.random.default_rng([seed, 11])
    history = []
    n = len(train)
    enc_tc = tc if cfg.suppressor_learning_rate is None else replace(tc, learning_rate=cfg.suppressor_learning_rate)
    fresh = []
    for epoch in range(cfg.lnl_epochs):
        view, skip = emotion_view()
        if cfg.lnl_fresh_heads > 0 and cfg.lnl_lambda > 0:
            head = train_adversary(nn.predict(encoder, train.X), y_emo, cfg.adversary_hidden, tc,
                                   cfg.adversary_epochs, seed=seed * 1000 + epoch + 7, shrink=cfg.adversary_shrink)
            fresh = (fresh + [head])[-cfg.lnl_fresh_heads:]
        order = rng.permutation(n)
        sums = dict(main_loss=0.0, emotion_loss=0.0, entropy=0.0, main_correct=0, emotion_correct=0)
        mean_post = np.zeros(len(EMOTIONS))
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            # extra emotion-head updates keep the adversary close to optimal
            for _ in range(cfg.lnl_head_steps - 1):
                extra = rng.integers(0, n, size=len(idx))
                tr_emo = nn.forward(view, nn.predict(encoder, train.X[extra]))
                _, g = nn.cross_entropy(tr_emo.logits, y_emo[extra])
                nn.adam_update(emo, nn.backward(view, tr_emo, g, from_logits=True)[0][skip:], states["emotion_head"], tc)
            step = lnl_encoder_gradient(encoder, main_head, view, train.X[idx], y_main[idx], y_emo[idx],
                                        cfg.lnl_lambda, cfg.reversal_scale, fresh)
            step["emotion_head"] = step["emotion_head"][skip:]
            if not (math.isfinite(step["main_loss"]) and math.isfinite(step["emotion_loss"])):
                raise NumericError(f"non-finite LnL loss at epoch {epoch}")
            for key in nets:
                nn.adam_update(nets[key], step[key], states[key], enc_tc if key == "encoder" else tc)
            for key in ("main_loss", "emotion_loss", "entropy"):
                sums[key] += step[key] * len(idx)
            sums["main_correct"] += step["main_correct"]
            sums["emotion_correct"] += step["emotion_correct"]
            mean_post += step["posterior_sum"]
        history.append({
            "epoch": epoch,
            "main_loss": sums["main_loss"] / n,
            "emotion_loss": sums["emotion_loss"] / n,
            "posterior_entropy": sums["entropy"] / n,
            "main_accuracy": sums["main_correct"] / n,
            "emotion_accuracy": sums["emotion_correct"] / n,
            "mean_posterior_entropy": _entropy(mean_post / n),
        })
    return Suppressor("LnL", encoder, history, cfg)


# ---------------------------------------------------------------------------
# persistence


def _config_to_dict(cfg: SuppressionConfig):
    return asdict(cfg)


def save_suppressor(s: Suppressor, path) -> None:
    header = {"kind": s.kind, "config": _config_to_dict(s.config) if s.config else None, "history": s.history}
    text = "suppressor " + json.dumps(header, sort_keys=True) + "\n" + nn.dumps_net(s.network)
    Path(path).write_text(text, encoding="utf-8")


def load_suppressor(path) -> Suppressor:
    text = Path(path).read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    if not first.startswith("suppressor "):
        raise ParseError("missing suppressor header", 1)
    try:
        header = json.loads(first[len("suppressor "):])
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad suppressor header: {exc}", 1) from None
    cfg = SuppressionConfig(**header["config"]) if header.get("config") else None
    return Suppressor(header["kind"], nn.loads_net(rest, first_line=2), header.get("history", []), cfg)


def config_keys() -> list[str]:
    return [f.name for f in fields(SuppressionConfig)]
