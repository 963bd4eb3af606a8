import numpy as np
import pytest

from imgrec.baselines import (
    BprParams,
    bpr_scorer,
    bpr_triple_grads,
    bpr_triple_loss,
    bprmf_train,
    poprank_scorer,
    poprank_train,
)
from imgrec.data import InteractionRecord, build_dataset, leave_one_out_split
from imgrec.errors import ConfigError
from imgrec.evaluate import evaluate
from imgrec.synthetic import planted_corpus


# --- popularity --------------------------------------------------------------


def test_poprank_counts_train_interactions_only():
    records = [InteractionRecord(f"u{k}", "a", k) for k in range(4)]
    records += [
        InteractionRecord("u0", "b", 10),
        InteractionRecord("u0", "c", 20),
        InteractionRecord("v", "b", 1),
        InteractionRecord("w1", "d", 1),  # keep negatives sampleable for u0
        InteractionRecord("w2", "e", 1),
    ]
    ds = build_dataset(records)
    split = leave_one_out_split(ds, n_eval_negatives=1, seed=0)
    model = poprank_train(split)
    a = ds.item_index["a"]
    # u0 holds (a, b, c); its two latest (c, b) are held out, so only u0's
    # "a" plus the sub-threshold users' items stay in train
    train_count_a = sum(1 for items in split.train for i in items if i == a)
    assert model.counts[a] == train_count_a
    scorer = poprank_scorer(model)
    got = scorer(0, [a, ds.item_index["b"], ds.item_index["c"]])
    assert got[0] == model.counts[a]


def test_poprank_unseen_item_scores_zero():
    ds = build_dataset(
        [InteractionRecord("u", "a", 1), InteractionRecord("v", "b", 1)]
    )
    split = leave_one_out_split(ds, n_eval_negatives=1, seed=0)
    model = poprank_train(split)
    assert poprank_scorer(model)(0, [ds.item_index["b"]])[0] == 1.0
    assert np.all(model.counts >= 0)


def test_poprank_perfect_when_test_item_dominates_training():
    """Donor users park many train interactions on one hot item; every
    evaluated user has that item as their held-out test positive."""
    records = []
    for d in range(30):  # 2 interactions: excluded from eval, train keeps both
        records.append(InteractionRecord(f"donor{d}", "hot", 1))
        records.append(InteractionRecord(f"donor{d}", f"filler{d}", 2))
    for e in range(5):
        records.append(InteractionRecord(f"eval{e}", "hot", 100))
        records.append(InteractionRecord(f"eval{e}", f"mid{e}", 50))
        records.append(InteractionRecord(f"eval{e}", f"old{e}", 10))
    ds = build_dataset(records)
    split = leave_one_out_split(ds, n_eval_negatives=5, seed=0)
    hot = ds.item_index["hot"]
    assert all(split.test[u] == hot for u in split.eligible_users)
    model = poprank_train(split)
    assert model.counts[hot] == 30.0
    report = evaluate(
        poprank_scorer(model), split, trials=3, n_negatives=5, seed=0
    )
    assert report.mean_auc == 1.0


# --- BPR-MF ------------------------------------------------------------------


def test_bpr_triple_loss_frozen_value():
    p = np.array([1.0, 0.0])
    qi = np.array([1.0, 0.0])
    qj = np.array([0.0, 0.0])
    # x = 1, loss = ln(1 + e^-1) + (l2/2) * (1 + 1 + 0)
    got = bpr_triple_loss(p, qi, qj, l2=0.5)
    assert got == pytest.approx(0.31326168751822286 + 0.5, rel=1e-14)


def test_bpr_triple_grads_match_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(10):
        p, qi, qj = rng.normal(size=(3, 4))
        l2 = float(rng.uniform(0, 0.3))
        analytic = bpr_triple_grads(p, qi, qj, l2)
        h = 1e-6
        for which, vec in enumerate((p, qi, qj)):
            for k in range(4):
                orig = vec[k]
                vec[k] = orig + h
                lp = bpr_triple_loss(p, qi, qj, l2)
                vec[k] = orig - h
                lm = bpr_triple_loss(p, qi, qj, l2)
                vec[k] = orig
                fd = (lp - lm) / (2 * h)
                assert analytic[which][k] == pytest.approx(fd, rel=1e-5, abs=1e-9)


@pytest.fixture(scope="module")
def planted_split():
    corpus = planted_corpus(0, n_users=40, n_items=200, n_pos=10)
    split, _ = corpus.splits(n_eval_negatives=20, seed=0)
    return split


def test_bpr_zero_lr_keeps_factors_at_init(planted_split):
    trained, _ = bprmf_train(planted_split, K=4, lr=0.0, l2=0.1, epochs=2, seed=3)
    M, N = planted_split.dataset.M, planted_split.dataset.N
    rng = np.random.default_rng(3)
    assert np.array_equal(trained.P, rng.normal(0.0, 0.1, size=(M, 4)))
    assert np.array_equal(trained.Q, rng.normal(0.0, 0.1, size=(N, 4)))


def test_bpr_zero_epochs_empty_history(planted_split):
    _, history = bprmf_train(planted_split, K=4, lr=0.05, epochs=0, seed=0)
    assert history == []


def test_bpr_bad_config_rejected(planted_split):
    with pytest.raises(ConfigError):
        bprmf_train(planted_split, K=0)


def test_bpr_loss_decreases_and_model_ranks_well(planted_split):
    params, history = bprmf_train(
        planted_split, K=8, lr=0.05, l2=0.01, epochs=120, seed=0
    )
    assert history[4] < history[0]
    assert history[-1] < 0.5 * history[0]
    report = evaluate(
        bpr_scorer(params), planted_split, trials=2, n_negatives=50, seed=0
    )
    assert report.mean_auc > 0.7


def test_bpr_training_deterministic(planted_split):
    a, ha = bprmf_train(planted_split, K=4, lr=0.05, epochs=3, seed=11)
    b, hb = bprmf_train(planted_split, K=4, lr=0.05, epochs=3, seed=11)
    assert np.array_equal(a.P, b.P) and np.array_equal(a.Q, b.Q)
    assert ha == hb


def test_bpr_scorer_is_dot_product():
    params = BprParams(
        P=np.array([[1.0, 2.0]]), Q=np.array([[0.5, 0.5], [1.0, -1.0]])
    )
    got = bpr_scorer(params)(0, [0, 1])
    assert np.allclose(got, [1.5, -1.0])
