"""Non-visual reference scorers: popularity ranking and pairwise MF.

Both expose the same (user, items) -> scores callable shape as the trained
model so evaluate() treats them identically.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Split
from .errors import ConfigError, DivergenceError

log = logging.getLogger(__name__)


@dataclass
class PopModel:
    counts: np.ndarray  # training interaction count per item


def poprank_train(split: Split) -> PopModel:
    counts = np.zeros(split.dataset.N, dtype=np.float64)
    for items in split.train:
        for i in items:
            counts[i] += 1.0
    return PopModel(counts)


def poprank_scorer(model: PopModel):
    counts = model.counts

    def scorer(u: int, items) -> np.ndarray:
        return counts[np.asarray(items, dtype=np.int64)]

    return scorer


@dataclass
class BprParams:
    P: np.ndarray  # (M, K) user factors
    Q: np.ndarray  # (N, K) item factors


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def bpr_triple_loss(p_u, q_i, q_j, l2: float) -> float:
    """-ln sigmoid(p_u . (q_i - q_j)) + (l2/2) * sum of squared norms."""
    x = float(p_u @ (q_i - q_j))
    reg = 0.5 * l2 * (p_u @ p_u + q_i @ q_i + q_j @ q_j)
    return _softplus(-x) + float(reg)


def bpr_triple_grads(p_u, q_i, q_j, l2: float):
    """Gradients of bpr_triple_loss w.r.t. (p_u, q_i, q_j)."""
    x = float(p_u @ (q_i - q_j))
    s = 1.0 / (1.0 + math.exp(x)) if x >= 0 else 1.0 - 1.0 / (1.0 + math.exp(-x))
    dp = -s * (q_i - q_j) + l2 * p_u
    dqi = -s * p_u + l2 * q_i
    dqj = s * p_u + l2 * q_j
    return dp, dqi, dqj


def bprmf_train(
    split: Split,
    K: int = 20,
    lr: float = 0.05,
    l2: float = 0.01,
    epochs: int = 100,
    seed: int = 0,
) -> tuple[BprParams, list[float]]:
    """SGD over (user, pos, sampled neg) triples; one pass per positive per
    epoch. Returns the factors and the per-epoch mean triple loss."""
    if K < 1 or epochs < 0:
        raise ConfigError("K must be >= 1 and epochs nonnegative")
    dataset = split.dataset
    rng = np.random.default_rng(seed)
    P = rng.normal(0.0, 0.1, size=(dataset.M, K))
    Q = rng.normal(0.0, 0.1, size=(dataset.N, K))
    positives = [(u, i) for u in range(dataset.M) for i in split.train[u]]
    interactions = [dataset.interaction_set(u) for u in range(dataset.M)]
    history: list[float] = []
    for epoch in range(epochs):
        total = 0.0
        n_steps = 0
        for idx in rng.permutation(len(positives)):
            u, i = positives[int(idx)]
            if len(interactions[u]) >= dataset.N:
                continue
            j = int(rng.integers(0, dataset.N))
            while j in interactions[u]:
                j = int(rng.integers(0, dataset.N))
            p_u, q_i, q_j = P[u].copy(), Q[i].copy(), Q[j].copy()
            total += bpr_triple_loss(p_u, q_i, q_j, l2)
            n_steps += 1
            dp, dqi, dqj = bpr_triple_grads(p_u, q_i, q_j, l2)
            P[u] -= lr * dp
            Q[i] -= lr * dqi
            Q[j] -= lr * dqj
        if n_steps == 0:
            raise ConfigError("no trainable positives for BPR-MF")
        mean_loss = total / n_steps
        if not math.isfinite(mean_loss):
            raise DivergenceError(f"non-finite BPR loss at epoch {epoch + 1}")
        history.append(mean_loss)
    return BprParams(P, Q), history


def bpr_scorer(params: BprParams):
    P, Q = params.P, params.Q

    def scorer(u: int, items) -> np.ndarray:
        return Q[np.asarray(items, dtype=np.int64)] @ P[u]

    return scorer
