"""Interaction ingestion, id mapping, leave-one-out splitting, feature stores.

All construction here is single-threaded and pure; the resulting structures
are treated as immutable afterwards, so training and evaluation may read them
concurrently.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CoverageError, InputError, ProtocolError
from .ifv1 import read_ifv1, write_ifv1

log = logging.getLogger(__name__)

_DELIMITERS = {"csv": ",", "tsv": "\t"}

# Users need train + val + test, i.e. at least 3 interactions, to be evaluable.
MIN_EVAL_INTERACTIONS = 3


@dataclass
class InteractionRecord:
    user_key: str
    item_key: str
    timestamp: int | None = None


@dataclass
class InteractionLog:
    """Raw parsed interactions, order preserved, malformed lines counted."""

    records: list[InteractionRecord]
    n_malformed: int = 0
    source: str = ""


@dataclass
class Dataset:
    """Id-mapped users/items with a sparse binary interaction structure.

    R[u] is the sorted list of item ids user u interacted with (deduplicated).
    times[u] maps item id -> timestamp for the interactions that carried one.
    """

    M: int
    N: int
    user_keys: list[str]
    item_keys: list[str]
    user_index: dict[str, int]
    item_index: dict[str, int]
    R: list[list[int]]
    times: list[dict[int, int]] = field(default_factory=list)

    @property
    def n_interactions(self) -> int:
        return sum(len(items) for items in self.R)

    def interaction_set(self, u: int) -> set[int]:
        return set(self.R[u])


@dataclass
class Split:
    """Per-user leave-one-out partition plus frozen evaluation negatives.

    Users with fewer than MIN_EVAL_INTERACTIONS interactions keep everything
    in train and get val = test = None.
    """

    dataset: Dataset
    train: list[list[int]]
    val: list[int | None]
    test: list[int | None]
    eval_negatives: list[list[int]]
    n_eval_negatives: int
    seed: int
    excluded_users: list[int]

    @property
    def eligible_users(self) -> list[int]:
        return [u for u in range(len(self.test)) if self.test[u] is not None]


@dataclass
class FeatureStore:
    """Dense item feature vectors aligned with dataset item ids.

    The matrix is kept in float32 (the IFV1 storage precision); model code
    promotes to float64 at the point of use.
    """

    F: int
    matrix: np.ndarray
    item_keys: list[str]

    def get(self, item_id: int) -> np.ndarray:
        return self.matrix[item_id]


def load_interactions(path, format: str = "csv") -> InteractionLog:
    """Parse a delimited interaction file into an InteractionLog.

    Accepted line shapes: user,item | user,item,rating | user,item,rating,ts.
    Ratings are ignored (implicit feedback); a 4th field must be an integer
    timestamp. Malformed lines are skipped and counted.
    """
    if format not in _DELIMITERS:
        raise InputError(f"unknown interaction format {format!r}")
    delim = _DELIMITERS[format]
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read interaction file {path}: {exc}") from exc

    records: list[InteractionRecord] = []
    n_malformed = 0
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(delim)]
        if len(fields) < 2 or len(fields) > 4 or not fields[0] or not fields[1]:
            n_malformed += 1
            continue
        timestamp = None
        if len(fields) == 4:
            try:
                timestamp = int(fields[3])
            except ValueError:
                n_malformed += 1
                continue
        records.append(InteractionRecord(fields[0], fields[1], timestamp))
    if n_malformed:
        log.warning("%s: skipped %d malformed line(s)", path, n_malformed)
    if not records:
        raise InputError(f"no valid interaction records in {path}")
    return InteractionLog(records, n_malformed, source=str(path))


def build_dataset(log_: "InteractionLog | list[InteractionRecord]") -> Dataset:
    """Assign contiguous ids in first-appearance order and deduplicate pairs.

    Accepts an InteractionLog or a bare record list. Duplicate (user, item)
    pairs collapse to a single binary interaction; the kept timestamp is the
    latest one among duplicates that carried one.
    """
    if isinstance(log_, list):
        log_ = InteractionLog(log_, n_malformed=0, source="<memory>")
    if not log_.records:
        raise InputError("empty interaction log")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    user_keys: list[str] = []
    item_keys: list[str] = []
    pairs: dict[tuple[int, int], int | None] = {}
    for rec in log_.records:
        u = user_index.setdefault(rec.user_key, len(user_index))
        if u == len(user_keys):
            user_keys.append(rec.user_key)
        i = item_index.setdefault(rec.item_key, len(item_index))
        if i == len(item_keys):
            item_keys.append(rec.item_key)
        prev = pairs.get((u, i))
        if (u, i) not in pairs:
            pairs[(u, i)] = rec.timestamp
        elif rec.timestamp is not None and (prev is None or rec.timestamp > prev):
            pairs[(u, i)] = rec.timestamp

    M, N = len(user_keys), len(item_keys)
    R: list[list[int]] = [[] for _ in range(M)]
    times: list[dict[int, int]] = [{} for _ in range(M)]
    for (u, i), ts in pairs.items():
        R[u].append(i)
        if ts is not None:
            times[u][i] = ts
    for items in R:
        items.sort()
    return Dataset(M, N, user_keys, item_keys, user_index, item_index, R, times)


def _sample_negatives(
    rng: np.random.Generator, n_items: int, interacted: set[int], count: int
) -> list[int]:
    """Uniform sample without replacement from the non-interacted items."""
    n_candidates = n_items - len(interacted)
    if n_candidates > 4 * count:
        # Rejection sampling: cheap when the candidate pool dominates.
        chosen: list[int] = []
        taken = set(interacted)
        while len(chosen) < count:
            draw = int(rng.integers(0, n_items))
            if draw not in taken:
                taken.add(draw)
                chosen.append(draw)
        return chosen
    candidates = np.setdiff1d(np.arange(n_items), np.fromiter(interacted, dtype=np.int64))
    return [int(x) for x in rng.choice(candidates, size=count, replace=False)]


def leave_one_out_split(dataset: Dataset, n_eval_negatives: int, seed: int) -> Split:
    """Hold out one test and one validation item per eligible user.

    When every interaction of a user carries a timestamp, the latest item
    becomes test and the second-latest validation (ties broken by item id);
    otherwise the two held-out items are drawn uniformly under the seed.
    Frozen evaluation negatives are sampled from the user's non-interacted
    items, also under the seed.
    """
    if n_eval_negatives < 1:
        raise ProtocolError("n_eval_negatives must be >= 1")
    if dataset.M == 0 or dataset.n_interactions == 0:
        raise InputError("empty dataset")
    rng = np.random.default_rng(seed)
    train: list[list[int]] = []
    val: list[int | None] = []
    test: list[int | None] = []
    negatives: list[list[int]] = []
    excluded: list[int] = []
    infeasible: list[tuple[int, int]] = []
    for u in range(dataset.M):
        items = dataset.R[u]
        if len(items) < MIN_EVAL_INTERACTIONS:
            train.append(list(items))
            val.append(None)
            test.append(None)
            negatives.append([])
            excluded.append(u)
            continue
        if len(dataset.times[u]) == len(items):
            ordered = sorted(items, key=lambda i: (dataset.times[u][i], i))
            test_item, val_item = ordered[-1], ordered[-2]
        else:
            picks = rng.choice(len(items), size=2, replace=False)
            test_item, val_item = items[int(picks[0])], items[int(picks[1])]
        train.append(sorted(i for i in items if i not in (test_item, val_item)))
        val.append(val_item)
        test.append(test_item)
        n_candidates = dataset.N - len(items)
        if n_eval_negatives > n_candidates:
            infeasible.append((u, n_candidates))
            negatives.append([])
            continue
        negatives.append(
            _sample_negatives(rng, dataset.N, set(items), n_eval_negatives)
        )
    if infeasible:
        shown = ", ".join(
            f"user {u} has only {c} non-interacted items" for u, c in infeasible[:10]
        )
        more = "" if len(infeasible) <= 10 else f" (+{len(infeasible) - 10} more)"
        raise ProtocolError(
            f"cannot sample {n_eval_negatives} evaluation negatives: {shown}{more}"
        )
    if excluded:
        log.info(
            "%d user(s) with < %d interactions excluded from val/test",
            len(excluded),
            MIN_EVAL_INTERACTIONS,
        )
    return Split(
        dataset=dataset,
        train=train,
        val=val,
        test=test,
        eval_negatives=negatives,
        n_eval_negatives=n_eval_negatives,
        seed=seed,
        excluded_users=excluded,
    )


def load_feature_store(path, dataset: Dataset) -> FeatureStore:
    """Load an IFV1 file and align its vectors with dataset item ids."""
    keys, matrix = read_ifv1(path)
    by_key = {k: idx for idx, k in enumerate(keys)}
    missing = [k for k in dataset.item_keys if k not in by_key]
    if missing:
        shown = ", ".join(repr(k) for k in missing[:10])
        more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
        raise CoverageError(
            f"{path}: no feature vector for {len(missing)} item(s): {shown}{more}"
        )
    rows = np.array([by_key[k] for k in dataset.item_keys], dtype=np.int64)
    return FeatureStore(
        F=matrix.shape[1],
        matrix=matrix[rows],
        item_keys=list(dataset.item_keys),
    )


def save_feature_store(path, store: FeatureStore) -> None:
    write_ifv1(path, store.item_keys, store.matrix)


# --- run-directory artifacts -------------------------------------------------
#
# prepare writes users.tsv / items.tsv (id -> key) plus split.tsv in the
# specced `user_id<TAB>role<TAB>item_id` form; train/evaluate reload them.


def export_split(split: Split, path) -> None:
    lines = []
    for u in range(len(split.train)):
        for i in split.train[u]:
            lines.append(f"{u}\ttrain\t{i}")
        if split.val[u] is not None:
            lines.append(f"{u}\tval\t{split.val[u]}")
        if split.test[u] is not None:
            lines.append(f"{u}\ttest\t{split.test[u]}")
        for i in split.eval_negatives[u]:
            lines.append(f"{u}\tneg\t{i}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_key_map(path, keys: list[str]) -> None:
    Path(path).write_text(
        "".join(f"{idx}\t{key}\n" for idx, key in enumerate(keys)), encoding="utf-8"
    )


def _read_key_map(path) -> list[str]:
    keys: list[str] = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    for line in text.splitlines():
        idx, _, key = line.partition("\t")
        if int(idx) != len(keys):
            raise InputError(f"{path}: non-contiguous ids")
        keys.append(key)
    return keys


def save_artifacts(split: Split, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_key_map(out / "users.tsv", split.dataset.user_keys)
    _write_key_map(out / "items.tsv", split.dataset.item_keys)
    export_split(split, out / "split.tsv")


def load_artifacts(run_dir) -> Split:
    """Reconstruct the Dataset + Split written by save_artifacts.

    Timestamps are not persisted: they only matter while splitting.
    """
    run = Path(run_dir)
    user_keys = _read_key_map(run / "users.tsv")
    item_keys = _read_key_map(run / "items.tsv")
    M, N = len(user_keys), len(item_keys)
    train: list[list[int]] = [[] for _ in range(M)]
    val: list[int | None] = [None] * M
    test: list[int | None] = [None] * M
    negatives: list[list[int]] = [[] for _ in range(M)]
    split_path = run / "split.tsv"
    try:
        text = split_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {split_path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        try:
            u_s, role, i_s = line.split("\t")
            u, i = int(u_s), int(i_s)
        except ValueError as exc:
            raise InputError(f"{split_path}:{lineno}: bad split line") from exc
        if not (0 <= u < M and 0 <= i < N):
            raise InputError(f"{split_path}:{lineno}: id out of range")
        if role == "train":
            train[u].append(i)
        elif role == "val":
            val[u] = i
        elif role == "test":
            test[u] = i
        elif role == "neg":
            negatives[u].append(i)
        else:
            raise InputError(f"{split_path}:{lineno}: unknown role {role!r}")
    R = []
    times: list[dict[int, int]] = []
    for u in range(M):
        items = set(train[u])
        if val[u] is not None:
            items.add(val[u])
        if test[u] is not None:
            items.add(test[u])
        R.append(sorted(items))
        times.append({})
    dataset = Dataset(
        M, N, user_keys, item_keys,
        {k: idx for idx, k in enumerate(user_keys)},
        {k: idx for idx, k in enumerate(item_keys)},
        R, times,
    )
    n_neg = max((len(n) for n in negatives), default=0)
    excluded = [u for u in range(M) if test[u] is None]
    return Split(
        dataset=dataset,
        train=train,
        val=val,
        test=test,
        eval_negatives=negatives,
        n_eval_negatives=n_neg,
        seed=-1,
        excluded_users=excluded,
    )
