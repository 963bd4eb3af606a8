"""Synthetic corpora for tests, calibration, and the `synth` subcommand.

planted_corpus hides a low-dimensional style signal inside item features
and makes preferences depend on it nonlinearly, so feature transforms that
can learn the dependence (ft, ete) have headroom over a raw linear readout
(dir). random_corpus carries no signal at all and pins the chance-level
behaviour of untrained models.
"""

from dataclasses import dataclass

import numpy as np

from .data import (
    Dataset,
    FeatureStore,
    InteractionRecord,
    Split,
    build_dataset,
    leave_one_out_split,
)
from .ifv1 import write_ifv1


def _user_key(u: int) -> str:
    return f"u{u:05d}"


def _item_key(i: int) -> str:
    return f"i{i:05d}"


@dataclass
class SynthCorpus:
    records: list[InteractionRecord]
    item_keys: list[str]
    features: np.ndarray  # (n_items, F) float

    def splits(self, n_eval_negatives: int, seed: int) -> tuple[Split, FeatureStore]:
        dataset = build_dataset(self.records)
        split = leave_one_out_split(dataset, n_eval_negatives, seed)
        rows = {k: self.features[idx] for idx, k in enumerate(self.item_keys)}
        matrix = np.stack([rows[k] for k in dataset.item_keys]).astype(np.float32)
        store = FeatureStore(
            F=self.features.shape[1], matrix=matrix, item_keys=list(dataset.item_keys)
        )
        return split, store


def _records_from_choices(choices: dict[int, list[tuple[int, int]]]):
    """choices: user -> [(item, timestamp)]."""
    records = []
    for u in sorted(choices):
        for i, ts in choices[u]:
            records.append(InteractionRecord(_user_key(u), _item_key(i), ts))
    return records


def overfit_corpus(
    seed: int = 0, n_users: int = 50, n_items: int = 100, n_pos: int = 5, F: int = 16
) -> SynthCorpus:
    """Small random corpus a sufficiently wide model should memorize."""
    rng = np.random.default_rng(seed)
    choices = {}
    for u in range(n_users):
        items = rng.choice(n_items, size=n_pos, replace=False)
        order = rng.permutation(n_pos)
        choices[u] = [(int(items[k]), int(order[k])) for k in range(n_pos)]
    features = rng.normal(0.0, 1.0, size=(n_items, F))
    return SynthCorpus(
        _records_from_choices(choices),
        [_item_key(i) for i in range(n_items)],
        features,
    )


def random_corpus(
    seed: int = 0, n_users: int = 250, n_items: int = 400, n_pos: int = 5, F: int = 16
) -> SynthCorpus:
    """No planted signal; evaluation of any untrained scorer should sit at
    chance."""
    return overfit_corpus(seed, n_users, n_items, n_pos, F)


def planted_corpus(
    seed: int = 0,
    n_users: int = 100,
    n_items: int = 700,
    n_pos: int = 12,
    d: int = 4,
    F: int = 12,
    signal_width: int = 8,
    temperature: float = 0.3,
    noise: float = 0.05,
) -> SynthCorpus:
    """Interactions driven by a latent signal hidden in the item features.

    Item styles S live in a d-dim space and reach the features only through
    a fixed linear embedding plus noise, so the style is linearly
    recoverable. The signal that actually drives choices is even in S
    (psi = |S @ C| / sqrt(d)): each user's preference is a fixed linear
    functional of psi, and interactions are the n_pos top-preference items
    under Gumbel noise. A linear readout of the features carries none of
    psi, so models that learn a feature transform (ft, ete) have genuine
    headroom over dir. Every item is guaranteed at least one early
    train-only interaction so the item universe never shrinks.
    """
    rng = np.random.default_rng(seed)
    S = rng.normal(0.0, 1.0, size=(n_items, d))
    C = rng.normal(0.0, 1.0, size=(d, signal_width))
    psi = np.abs(S @ C) / np.sqrt(d)
    W = rng.normal(0.0, 1.0, size=(n_users, signal_width))
    E = rng.normal(0.0, 1.0, size=(d, F)) / np.sqrt(d)
    features = S @ E + noise * rng.normal(size=(n_items, F))

    choices: dict[int, list[tuple[int, int]]] = {}
    covered = np.zeros(n_items, dtype=bool)
    for u in range(n_users):
        scores = psi @ W[u] / temperature + rng.gumbel(size=n_items)
        top = np.argpartition(-scores, n_pos)[:n_pos]
        order = rng.permutation(n_pos)
        choices[u] = [(int(top[k]), int(order[k])) for k in range(n_pos)]
        covered[top] = True

    # park uncovered items on rotating users as early train-only extras
    held = {u: {i for i, _ in choices[u]} for u in choices}
    uncovered = np.flatnonzero(~covered)
    rng.shuffle(uncovered)
    u = 0
    for k, i in enumerate(uncovered):
        while int(i) in held[u % n_users]:
            u += 1
        target = u % n_users
        choices[target].append((int(i), -1000 - k))
        held[target].add(int(i))
        u += 1

    return SynthCorpus(
        _records_from_choices(choices),
        [_item_key(i) for i in range(n_items)],
        features,
    )


_KINDS = {
    "overfit": overfit_corpus,
    "random": random_corpus,
    "planted": planted_corpus,
}


def make_corpus(kind: str, seed: int = 0) -> SynthCorpus:
    if kind not in _KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; pick from {sorted(_KINDS)}")
    if kind == "random":
        return random_corpus(seed, n_users=250, n_items=400)
    return _KINDS[kind](seed)


def write_demo_files(out_dir, kind: str = "planted", seed: int = 0):
    """Write interactions.csv and features.ifv1 for CLI experiments.

    Returns (interactions_path, features_path).
    """
    import os

    corpus = make_corpus(kind, seed)
    os.makedirs(out_dir, exist_ok=True)
    inter_path = os.path.join(out_dir, "interactions.csv")
    feat_path = os.path.join(out_dir, "features.ifv1")
    with open(inter_path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            fh.write(f"{r.user_key},{r.item_key},1,{r.timestamp}\n")
    write_ifv1(feat_path, corpus.item_keys, corpus.features.astype(np.float32))
    return inter_path, feat_path
