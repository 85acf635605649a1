"""Pairwise linear ranker over one-hot encoded, discretized features.

A page's score is beta(x) = w . onehot(x); the probability that page A beats
page B (A is reused sooner) is sigmoid(beta_A - beta_B), the Bradley-Terry
model. High score means reused soon (worth keeping), so the eviction policy
drops the lowest-scoring candidates. Training minimizes binary cross-entropy
over sampled pairs with Adam, early-stopping on validation loss.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .discretizer import FeatureBins, discretize
from .errors import ConfigurationError, InternalError, SamplingError, SingleClassError
from .features import N_FEATURES, DatasetRow

PAIR_BUDGET_CAP = 500_000
PAIRS_PER_ROW = 50


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bt_probability(beta_a: float, beta_b: float) -> float:
    """Bradley-Terry win probability in its exponential-ratio form."""
    z = beta_a - beta_b
    if z > 700.0:
        return 1.0
    e = math.exp(z)
    return e / (1.0 + e)


class RankPair(NamedTuple):
    xa: tuple[int, ...]  # one active flattened bin index per feature
    xb: tuple[int, ...]
    label: int  # 1 if row a is reused strictly sooner than row b


def bin_offsets(bins: Sequence[FeatureBins]) -> tuple[int, ...]:
    offs = []
    total = 0
    for b in bins:
        offs.append(total)
        total += b.n_bins
    return tuple(offs)


def encode(features: Sequence[int], bins: Sequence[FeatureBins]) -> tuple[int, ...]:
    """Flattened one-hot indices: feature j activates offset_j + bin_j."""
    if len(features) != len(bins):
        raise ConfigurationError(f"expected {len(bins)} features, got {len(features)}")
    offs = bin_offsets(bins)
    return tuple(offs[j] + discretize(v, bins[j]) for j, v in enumerate(features))


@dataclass
class LinearRanker:
    bins: tuple[FeatureBins, ...]
    weights: np.ndarray  # float64, one weight per (feature, bin)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        dim = sum(b.n_bins for b in self.bins)
        if self.weights.shape != (dim,):
            raise ConfigurationError(f"weights must have shape ({dim},), got {self.weights.shape}")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]


def zero_ranker(bins: Sequence[FeatureBins]) -> LinearRanker:
    bins = tuple(bins)
    return LinearRanker(bins, np.zeros(sum(b.n_bins for b in bins)))


def score(ranker: LinearRanker, encoded: Sequence[int]) -> float:
    total = 0.0
    w = ranker.weights
    d = ranker.dim
    for idx in encoded:
        if not 0 <= idx < d:
            raise InternalError(f"one-hot index {idx} outside weight vector of size {d}")
        total += w[idx]
    return float(total)


def predict_prob(ranker: LinearRanker, xa: Sequence[int], xb: Sequence[int]) -> float:
    """P(page a reused sooner than page b) = sigmoid(score a - score b)."""
    return sigmoid(score(ranker, xa) - score(ranker, xb))


def default_pair_budget(n_rows: int) -> int:
    return min(PAIR_BUDGET_CAP, PAIRS_PER_ROW * n_rows)


def _encode_matrix(rows: Sequence[DatasetRow], bins: Sequence[FeatureBins]) -> np.ndarray:
    """Vectorized encode() over a dataset; one row of flat indices per entry."""
    offs = bin_offsets(bins)
    raw = np.array([r.features for r in rows], dtype=np.uint64)
    out = np.empty((len(rows), len(bins)), dtype=np.int64)
    for j, b in enumerate(bins):
        edges = np.asarray(b.edges, dtype=np.uint64)
        out[:, j] = np.searchsorted(edges, raw[:, j], side="right") + offs[j]
    return out


def sample_pairs(
    rows: Sequence[DatasetRow],
    bins: Sequence[FeatureBins],
    n_pairs: int,
    seed: int,
) -> list[RankPair]:
    """Uniformly sample encoded row pairs with distinct reuse times.

    The sooner-reused row of a pair is the winner (label 1 when row a wins).
    MISSING (2**64 - 1) compares greater than any finite reuse time, so a
    never-reused page loses to everything; pairs whose reuse times are equal
    are rejected and redrawn.
    """
    if n_pairs < 1:
        raise ConfigurationError("n_pairs must be >= 1")
    if not rows:
        raise SamplingError("empty dataset")
    reuse = np.array([r.reuse_time_ns for r in rows], dtype=np.uint64)
    if np.unique(reuse).size < 2:
        raise SamplingError("need at least two distinct reuse times to form pairs")

    enc = _encode_matrix(rows, bins)
    rng = np.random.default_rng(seed)
    picked_a: list[np.ndarray] = []
    picked_b: list[np.ndarray] = []
    got = 0
    while got < n_pairs:
        m = max(1024, int((n_pairs - got) * 1.5))
        a = rng.integers(0, len(rows), size=m)
        b = rng.integers(0, len(rows), size=m)
        keep = reuse[a] != reuse[b]
        a, b = a[keep], b[keep]
        picked_a.append(a)
        picked_b.append(b)
        got += a.size
    ia = np.concatenate(picked_a)[:n_pairs]
    ib = np.concatenate(picked_b)[:n_pairs]
    labels = (reuse[ia] < reuse[ib]).astype(np.int64)

    ea, eb = enc[ia], enc[ib]
    return [
        RankPair(tuple(int(v) for v in ea[i]), tuple(int(v) for v in eb[i]), int(labels[i]))
        for i in range(n_pairs)
    ]


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    batch_size: int = 512
    patience: int = 5
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 0.0
    seed: int = 0
    # train:test protocol is 4:1 split by trace file; recorded for provenance
    split_ratio: tuple[int, int] = (4, 1)

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ConfigurationError("max_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")


class EpochStats(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float
    val_auc: float  # nan when the validation pairs are single-class
    val_f1: float


@dataclass
class TrainResult:
    ranker: LinearRanker
    history: list[EpochStats]
    best_epoch: int


def _pairs_to_arrays(pairs: Sequence[RankPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xa = np.array([p.xa for p in pairs], dtype=np.int64)
    xb = np.array([p.xb for p in pairs], dtype=np.int64)
    y = np.array([p.label for p in pairs], dtype=np.float64)
    return xa, xb, y


def _logits(w: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    return w[xa].sum(axis=1) - w[xb].sum(axis=1)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    # -y*log(p) - (1-y)*log(1-p) in the overflow-safe logit form
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def bce_loss(w: np.ndarray, xa: np.ndarray, xb: np.ndarray, y: np.ndarray) -> float:
    """Mean binary cross-entropy of the pairwise model; used by tests too."""
    return _bce(_logits(w, xa, xb), y)


def bce_grad(w: np.ndarray, xa: np.ndarray, xb: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Analytic gradient of bce_loss with respect to w."""
    s = _logits(w, xa, xb)
    coef = (1.0 / (1.0 + np.exp(-s)) - y) / len(y)
    g = np.zeros_like(w)
    np.add.at(g, xa.ravel(), np.repeat(coef, xa.shape[1]))
    np.add.at(g, xb.ravel(), np.repeat(-coef, xb.shape[1]))
    return g


def train(
    train_pairs: Sequence[RankPair],
    val_pairs: Sequence[RankPair],
    bins: Sequence[FeatureBins],
    config: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Adam + early stopping; returns the best-validation-loss weights."""
    if not train_pairs or not val_pairs:
        raise ConfigurationError("need non-empty train and validation pair sets")
    bins = tuple(bins)
    dim = sum(b.n_bins for b in bins)
    xa, xb, y = _pairs_to_arrays(train_pairs)
    xa_v, xb_v, y_v = _pairs_to_arrays(val_pairs)
    for arr in (xa, xb, xa_v, xb_v):
        if arr.size and (arr.min() < 0 or arr.max() >= dim):
            raise InternalError("pair encoding outside the bin index space")

    w = np.zeros(dim)
    m = np.zeros(dim)
    v = np.zeros(dim)
    step = 0
    rng = np.random.default_rng(config.seed)
    n = len(train_pairs)

    best_loss = math.inf
    best_w = w.copy()
    best_epoch = 0
    bad = 0
    history: list[EpochStats] = []

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            ba, bb, by = xa[idx], xb[idx], y[idx]
            s = _logits(w, ba, bb)
            loss_sum += float(np.sum(np.logaddexp(0.0, s) - by * s))

            coef = (1.0 / (1.0 + np.exp(-s)) - by) / len(idx)
            g = np.zeros(dim)
            np.add.at(g, ba.ravel(), np.repeat(coef, ba.shape[1]))
            np.add.at(g, bb.ravel(), np.repeat(-coef, bb.shape[1]))
            if config.l2:
                g += config.l2 * w

            step += 1
            m = config.beta1 * m + (1.0 - config.beta1) * g
            v = config.beta2 * v + (1.0 - config.beta2) * g * g
            m_hat = m / (1.0 - config.beta1**step)
            v_hat = v / (1.0 - config.beta2**step)
            w -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)

        s_val = _logits(w, xa_v, xb_v)
        val_loss = _bce(s_val, y_v)
        try:
            val_auc = auc_score(s_val, y_v)
        except SingleClassError:
            val_auc = math.nan
        val_f1 = f1_score(s_val >= 0.0, y_v)
        history.append(EpochStats(epoch, loss_sum / n, val_loss, val_auc, val_f1))

        if val_loss < best_loss:
            best_loss = val_loss
            best_w = w.copy()
            best_epoch = epoch
            bad = 0
        else:
            bad += 1
            if bad >= config.patience:
                break

    return TrainResult(LinearRanker(bins, best_w), history, best_epoch)


def auc_score(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based ROC AUC with half credit for score ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC undefined for a single-class sample")
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    boundaries = np.nonzero(sorted_scores[1:] != sorted_scores[:-1])[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(scores)]))
    avg_rank = (starts + ends + 1) / 2.0  # 1-based average rank per tie group
    ranks = np.empty(len(scores))
    ranks[order] = np.repeat(avg_rank, ends - starts)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def f1_score(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions).astype(bool)
    actual = np.asarray(labels) == 1
    tp = int(np.sum(predictions & actual))
    fp = int(np.sum(predictions & ~actual))
    fn = int(np.sum(~predictions & actual))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


class EvalMetrics(NamedTuple):
    auc: float | None  # None when the pair set is single-class
    f1: float


def evaluate(ranker: LinearRanker, pairs: Sequence[RankPair]) -> EvalMetrics:
    if not pairs:
        raise ConfigurationError("cannot evaluate on an empty pair set")
    xa, xb, y = _pairs_to_arrays(pairs)
    s = _logits(ranker.weights, xa, xb)
    try:
        auc = auc_score(s, y)
    except SingleClassError:
        auc = None
    return EvalMetrics(auc, f1_score(s >= 0.0, y))


def write_history_csv(history: Sequence[EpochStats], path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "val_auc", "val_f1"])
        for row in history:
            w.writerow([row.epoch, repr(row.train_loss), repr(row.val_loss),
                        repr(row.val_auc), repr(row.val_f1)])
