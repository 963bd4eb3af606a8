"""Sampled per-user AUC on the leave-one-out test items.

A scorer is any callable (user_id, item_ids) -> array of scores, so trained
models and popularity/pairwise baselines all evaluate through the same path.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Split, _sample_negatives
from .errors import ConfigError, ProtocolError


def auc_user(pos_score: float, neg_scores) -> float:
    """Fraction of negatives scored strictly below the positive.

    Ties contribute zero, so a constant scorer earns 0, not 0.5.
    """
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if neg_scores.size == 0:
        raise ConfigError("AUC needs at least one negative")
    return float(np.count_nonzero(pos_score > neg_scores)) / neg_scores.size


@dataclass
class EvalReport:
    mean_auc: float
    trial_aucs: list[float]
    n_negatives: int
    n_users_evaluated: int
    trial_seeds: list[int] = field(default_factory=list)

    @property
    def n_trials(self) -> int:
        return len(self.trial_aucs)


def _check_feasible(split: Split, users: list[int], n_negatives: int) -> None:
    bad = []
    dataset = split.dataset
    for u in users:
        free = dataset.N - len(dataset.interaction_set(u))
        if free < n_negatives:
            bad.append((u, free))
    if bad:
        shown = ", ".join(
            f"{dataset.user_keys[u]} (only {free} candidates)"
            for u, free in bad[:10]
        )
        more = f" and {len(bad) - 10} more" if len(bad) > 10 else ""
        raise ProtocolError(
            f"cannot sample {n_negatives} evaluation negatives for "
            f"{len(bad)} user(s): {shown}{more}"
        )


def evaluate(
    scorer,
    split: Split,
    trials: int = 5,
    n_negatives: int = 100,
    seed: int = 0,
) -> EvalReport:
    """Mean over `trials` resamplings of the per-user test AUC.

    Trial t draws its negatives with seed + t, uniformly without replacement
    from each user's non-interacted items, then averages auc_user uniformly
    over all users that own a test item.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if n_negatives < 1:
        raise ConfigError("n_negatives must be >= 1")
    users = split.eligible_users
    if not users:
        raise ProtocolError("no users hold a test item; nothing to evaluate")
    _check_feasible(split, users, n_negatives)

    dataset = split.dataset
    trial_aucs = []
    trial_seeds = []
    for t in range(trials):
        trial_seed = seed + t
        rng = np.random.default_rng(trial_seed)
        total = 0.0
        for u in users:
            negs = _sample_negatives(
                rng, dataset.N, dataset.interaction_set(u), n_negatives
            )
            scores = scorer(u, [split.test[u]] + negs)
            scores = np.asarray(scores, dtype=np.float64)
            total += auc_user(float(scores[0]), scores[1:])
        trial_aucs.append(total / len(users))
        trial_seeds.append(trial_seed)
    return EvalReport(
        mean_auc=float(np.mean(trial_aucs)),
        trial_aucs=trial_aucs,
        n_negatives=n_negatives,
        n_users_evaluated=len(users),
        trial_seeds=trial_seeds,
    )


def training_set_auc(
    scorer, split: Split, n_negatives: int = 100, seed: int = 0
) -> float:
    """Mean per-user AUC of train positives against sampled negatives.

    Diagnostic only (e.g. checking that a model can overfit); negatives are
    drawn once per user from their non-interacted items.
    """
    dataset = split.dataset
    rng = np.random.default_rng(seed)
    user_aucs = []
    for u in range(dataset.M):
        if not split.train[u]:
            continue
        interacted = dataset.interaction_set(u)
        count = min(n_negatives, dataset.N - len(interacted))
        if count < 1:
            continue
        negs = _sample_negatives(rng, dataset.N, interacted, count)
        scores = scorer(u, split.train[u] + negs)
        scores = np.asarray(scores, dtype=np.float64)
        n_pos = len(split.train[u])
        aucs = [auc_user(float(scores[k]), scores[n_pos:]) for k in range(n_pos)]
        user_aucs.append(float(np.mean(aucs)))
    if not user_aucs:
        raise ProtocolError("no users hold train items")
    return float(np.mean(user_aucs))


def export_report(report: EvalReport, path) -> None:
    """CSV with one row per trial plus a trailing mean row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,seed,auc\n")
        for t, (s, a) in enumerate(zip(report.trial_seeds, report.trial_aucs)):
            fh.write(f"{t},{s},{a:.12g}\n")
        fh.write(f"mean,,{report.mean_auc:.12g}\n")


def format_report(report: EvalReport) -> str:
    lines = [
        f"users evaluated: {report.n_users_evaluated}",
        f"negatives per user: {report.n_negatives}",
        f"trials: {report.n_trials}",
    ]
    for t, a in enumerate(report.trial_aucs):
        lines.append(f"  trial {t}: AUC {a:.4f}")
    lines.append(f"mean AUC: {report.mean_auc:.4f}")
    return "\n".join(lines)
