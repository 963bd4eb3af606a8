"""Negative-sampled NLL training with hand-derived gradients and Adam.

Stage 1 trains everything except the extractor head (frozen at its
initialization); stage 2 (ete only) unfreezes the head and switches the L2
strength. Batch gradients are computed example-parallel with fixed-order
reductions; the Adam step is the single writer over ModelParams.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, FeatureStore, Split
from .errors import ConfigError, DivergenceError, InputError
from .evaluate import auc_user
from .model import (
    Mode,
    ModelConfig,
    ModelParams,
    extract_batch_with_cache,
    init_params,
    make_scorer,
    sigmoid,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_stage2: float | None = None  # None: reuse lr in stage 2
    l2_stage1: float = 0.1
    l2_stage2: float = 5e-5
    neg_per_pos: int = 1
    batch_size: int = 256
    epochs_stage1: int = 100
    epochs_stage2: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 10  # <= 0 disables early stopping
    stage2_restart_patience: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.lr_stage2 is not None and self.lr_stage2 <= 0:
            raise ConfigError("lr_stage2 must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.l2_stage1 < 0 or self.l2_stage2 < 0:
            raise ConfigError("l2 strengths must be nonnegative")
        if self.neg_per_pos < 1:
            raise ConfigError("neg_per_pos must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts must be nonnegative")

    @classmethod
    def defaults(cls, mode) -> "TrainConfig":
        """Best-known hyperparameters per mode (lr 1e-4; L2 0.1 for dir/ft,
        1e-6 then 5e-5 for the two ete stages)."""
        mode = Mode.parse(mode)
        l2_stage1 = 1e-6 if mode == Mode.ETE else 0.1
        return cls(l2_stage1=l2_stage1)


@dataclass
class TrainState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    stage: int
    best_val_auc: float
    epochs_since_best: int
    rng: np.random.Generator


def init_state(params: ModelParams, seed: int) -> TrainState:
    return TrainState(
        m={name: np.zeros_like(arr) for name, arr in params.named_tensors()},
        v={name: np.zeros_like(arr) for name, arr in params.named_tensors()},
        t=0,
        stage=1,
        best_val_auc=-math.inf,
        epochs_since_best=0,
        rng=np.random.default_rng(seed),
    )


@dataclass
class HistoryRow:
    epoch: int
    stage: int
    train_loss: float
    val_auc: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[HistoryRow]
    stage1_best: ModelParams
    stage2_best: ModelParams | None = None


def sample_training_batch(
    split: Split, dataset: Dataset, neg_per_pos: int, rng: np.random.Generator
) -> list[tuple[int, int, int]]:
    """One epoch pass: every train positive once, shuffled, each followed by
    neg_per_pos uniform negatives from the user's non-interacted items."""
    positives = [
        (u, i) for u in range(dataset.M) for i in split.train[u]
    ]
    interactions = [dataset.interaction_set(u) for u in range(dataset.M)]
    skipped: set[int] = set()
    out: list[tuple[int, int, int]] = []
    order = rng.permutation(len(positives))
    for idx in order:
        u, i = positives[int(idx)]
        if len(interactions[u]) >= dataset.N:
            if u not in skipped:
                skipped.add(u)
                log.warning("user %d interacted with every item; skipped", u)
            continue
        out.append((u, i, 1))
        for _ in range(neg_per_pos):
            j = int(rng.integers(0, dataset.N))
            while j in interactions[u]:
                j = int(rng.integers(0, dataset.N))
            out.append((u, j, 0))
    return out


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + e^t) without overflow on either tail
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _l2_penalty(params: ModelParams, l2: float) -> float:
    if l2 == 0.0:
        return 0.0
    names = set(params.weight_matrix_names())
    return l2 * sum(
        float(np.sum(arr * arr))
        for name, arr in params.named_tensors()
        if name in names
    )


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(batch) == 0:
        raise InputError("empty training batch")
    u = np.fromiter((b[0] for b in batch), dtype=np.int64, count=len(batch))
    i = np.fromiter((b[1] for b in batch), dtype=np.int64, count=len(batch))
    y = np.fromiter((b[2] for b in batch), dtype=np.float64, count=len(batch))
    return u, i, y


def _forward(u, i, params: ModelParams, store: FeatureStore):
    X = store.matrix[i].astype(np.float64)
    f, cache = extract_batch_with_cache(X, params)
    z_u = params.W_user[u] + params.b_user
    z_i = params.W_item[i] + f @ params.feature_block + params.b_item
    logits = np.einsum("bk,bk->b", z_u, z_i)
    return f, cache, z_u, z_i, logits


def _bce_and_grads(
    u: np.ndarray,
    i: np.ndarray,
    y: np.ndarray,
    params: ModelParams,
    store: FeatureStore,
    l2: float,
    stage: int,
    want_grads: bool,
):
    """Shared forward/backward. Returns (bce_sum, grads-or-None).

    Overflow is tolerated here: a diverging model produces inf/nan sums and
    the train loop turns those into DivergenceError.
    """
    cfg = params.config
    with np.errstate(over="ignore", invalid="ignore"):
        f, cache, z_u, z_i, logits = _forward(u, i, params, store)
        bce = float(np.sum(_softplus(logits) - y * logits))
        if not want_grads:
            return bce, None

        grads = {name: np.zeros_like(arr) for name, arr in params.named_tensors()}
        g = sigmoid(logits) - y  # dL/dlogit per example
        gz_i = g[:, None] * z_i  # dL/dz_u
        gz_u = g[:, None] * z_u  # dL/dz_i
        np.add.at(grads["W_user"], u, gz_i)
        grads["b_user"] += gz_i.sum(axis=0)
        np.add.at(grads["W_item"], i, gz_u)
        grads["b_item"] += gz_u.sum(axis=0)
        grads["W_item"][params.N :] += f.T @ gz_u
        dF = gz_u @ params.feature_block.T  # (B, F_in)

        if cfg.normalize_features:
            # f = f_raw / ||f_raw||; rows with zero norm pass through unchanged.
            norms = cache["norms"]
            nonzero = (norms > 0.0)[:, 0]
            row_dot = np.sum(f * dF, axis=1, keepdims=True)
            dF = np.where(
                nonzero[:, None],
                (dF - f * row_dot) / np.where(norms > 0.0, norms, 1.0),
                dF,
            )

        if cfg.mode != Mode.DIR:
            d_pre = dF * (cache["ft_pre"] > 0.0)  # ReLU subgradient 0 at 0
            grads["W_ft"] += cache["ft_in"].T @ d_pre
            grads["b_ft"] += d_pre.sum(axis=0)
            if cfg.mode == Mode.ETE:
                dH = d_pre @ params.W_ft.T
                for layer in reversed(range(len(params.head))):
                    d_layer = dH * (cache["head_pre"][layer] > 0.0)
                    grads[f"head.{layer}.W"] += cache["head_act"][layer].T @ d_layer
                    grads[f"head.{layer}.b"] += d_layer.sum(axis=0)
                    dH = d_layer @ params.head[layer][0].T

        if l2 != 0.0:
            tensors = dict(params.named_tensors())
            for name in params.weight_matrix_names():
                grads[name] += 2.0 * l2 * tensors[name]

    if stage == 1:
        for name in list(grads):
            if name.startswith("head."):
                grads[name][:] = 0.0
    return bce, grads


def loss(batch, params: ModelParams, store: FeatureStore, l2: float) -> float:
    """Summed binary cross-entropy over the batch plus the L2 penalty."""
    u, i, y = _batch_arrays(batch)
    bce, _ = _bce_and_grads(u, i, y, params, store, l2, stage=2, want_grads=False)
    return bce + _l2_penalty(params, l2)


def gradients(
    batch, params: ModelParams, store: FeatureStore, l2: float, stage: int = 2
) -> dict[str, np.ndarray]:
    """Exact analytic gradients of loss(); head frozen (zeroed) in stage 1."""
    u, i, y = _batch_arrays(batch)
    _, grads = _bce_and_grads(u, i, y, params, store, l2, stage, want_grads=True)
    return grads


def adam_update(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: TrainState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, TrainState]:
    """Standard bias-corrected Adam; updates params in place."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, theta in params.named_tensors():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        theta -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def validation_auc(params: ModelParams, store: FeatureStore, split: Split) -> float:
    """Mean per-user AUC of the held-out validation item against the split's
    frozen negatives; NaN when no user is evaluable."""
    scorer = make_scorer(params, store)
    aucs = []
    for u in range(split.dataset.M):
        if split.val[u] is None or not split.eval_negatives[u]:
            continue
        scores = scorer(u, [split.val[u]] + split.eval_negatives[u])
        aucs.append(auc_user(float(scores[0]), scores[1:]))
    return float(np.mean(aucs)) if aucs else math.nan


def _run_stage(
    stage: int,
    n_epochs: int,
    lr: float,
    l2: float,
    params: ModelParams,
    state: TrainState,
    config: TrainConfig,
    split: Split,
    store: FeatureStore,
    rows: list[HistoryRow],
) -> ModelParams:
    """Train one stage in place; returns the best-validation params.

    Best tracking carries state.best_val_auc across stages so stage 2 can
    only improve on the stage-1 restore point; the patience counter is the
    caller's to reset.
    """
    state.stage = stage
    best_params = params.copy()  # restore point if no epoch improves
    dataset = split.dataset
    for epoch in range(1, n_epochs + 1):
        epoch_examples = sample_training_batch(
            split, dataset, config.neg_per_pos, state.rng
        )
        if not epoch_examples:
            raise InputError("no trainable positives in split")
        u_all, i_all, y_all = _batch_arrays(epoch_examples)
        bce_total = 0.0
        for lo in range(0, len(epoch_examples), config.batch_size):
            sel = slice(lo, lo + config.batch_size)
            bce, grads = _bce_and_grads(
                u_all[sel], i_all[sel], y_all[sel], params, store, l2,
                stage, want_grads=True,
            )
            if not math.isfinite(bce):
                raise DivergenceError(
                    f"non-finite loss at stage {stage} epoch {epoch}"
                )
            bce_total += bce
            adam_update(
                params, grads, state, lr,
                config.adam_beta1, config.adam_beta2, config.adam_eps,
            )
        # mean per-example BCE over the epoch plus the penalty at epoch end
        train_loss = bce_total / len(epoch_examples) + _l2_penalty(params, l2)
        val = validation_auc(params, store, split)
        rows.append(HistoryRow(epoch, stage, train_loss, val))
        if math.isnan(val):
            best_params = params  # no validation signal: keep the last epoch
            continue
        if val > state.best_val_auc:
            state.best_val_auc = val
            state.epochs_since_best = 0
            best_params = params.copy()
        else:
            state.epochs_since_best += 1
            if 0 < config.early_stop_patience <= state.epochs_since_best:
                log.info(
                    "stage %d stopped at epoch %d (no val AUC gain in %d epochs)",
                    stage, epoch, state.epochs_since_best,
                )
                break
    return best_params


def train(
    config: TrainConfig,
    model_config: ModelConfig,
    split: Split,
    store: FeatureStore,
) -> TrainResult:
    """Full protocol: stage 1 with the head frozen, then for ete a second
    joint stage with fresh Adam moments and the stage-2 L2 strength."""
    dataset = split.dataset
    if store.F != model_config.F_raw:
        raise ConfigError(
            f"feature store width {store.F} != model F_raw {model_config.F_raw}"
        )
    params = init_params(model_config, (dataset.M, dataset.N), store.F)
    state = init_state(params, config.seed)
    rows: list[HistoryRow] = []

    stage1_best = _run_stage(
        1, config.epochs_stage1, config.lr, config.l2_stage1,
        params, state, config, split, store, rows,
    )
    if model_config.mode != Mode.ETE or config.epochs_stage2 == 0:
        return TrainResult(stage1_best.copy(), rows, stage1_best)

    params = stage1_best.copy()
    state.m = {n: np.zeros_like(a) for n, a in params.named_tensors()}
    state.v = {n: np.zeros_like(a) for n, a in params.named_tensors()}
    state.t = 0
    if config.stage2_restart_patience:
        state.epochs_since_best = 0
    lr2 = config.lr if config.lr_stage2 is None else config.lr_stage2
    stage2_best = _run_stage(
        2, config.epochs_stage2, lr2, config.l2_stage2,
        params, state, config, split, store, rows,
    )
    return TrainResult(stage2_best.copy(), rows, stage1_best, stage2_best)


def export_history(rows: list[HistoryRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,stage,train_loss,val_auc\n")
        for r in rows:
            fh.write(f"{r.epoch},{r.stage},{r.train_loss:.12g},{r.val_auc:.12g}\n")
