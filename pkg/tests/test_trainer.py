import math

import numpy as np
import pytest

from agnn.autodiff import Tape, grad_check
from agnn.data import Split, generate_sbm, make_split
from agnn.errors import NumericError
from agnn.graph import normalize
from agnn.trainer import (
    RunHistory,
    TrainConfig,
    accuracy,
    cross_entropy,
    evaluate,
    forward,
    init_model,
    load_model,
    mad,
    one_hot,
    save_model,
    scores,
    train,
)

from _instances import full_loss_instance, kink_free, random_dataset


@pytest.fixture(scope="module")
def sbm():
    ds = generate_sbm(400, 4, 0.10, 0.01, 16, 0.8, seed=0)
    split = make_split(ds.labels, 20, 100, 220, seed=0)
    return ds, split, normalize(ds.graph)


class TestCrossEntropy:
    def test_matching_one_hot(self):
        assert cross_entropy(np.array([[0.0, 1.0]]), one_hot([1], 2), [0]) == 0.0

    def test_uniform_binary(self):
        assert cross_entropy(np.full((1, 2), 0.5), one_hot([0], 2), [0]) == pytest.approx(math.log(2))

    def test_additive(self):
        s = np.tile([[0.3, 0.7]], (4, 1))
        y = one_hot([0, 0, 0, 0], 2)
        assert cross_entropy(s, y, [0, 1, 2, 3]) == pytest.approx(2 * cross_entropy(s, y, [0, 1]))

    def test_floor(self):
        assert cross_entropy(np.array([[1.0, 0.0]]), one_hot([1], 2), [0]) == pytest.approx(-math.log(1e-12))

    def test_empty(self):
        with pytest.raises(ValueError):
            cross_entropy(np.ones((1, 2)) / 2, one_hot([0], 2), [])

    def test_tape_version_agrees(self):
        rng = np.random.default_rng(0)
        e = np.exp(rng.standard_normal((6, 3)))
        s = e / e.sum(1, keepdims=True)
        labels = np.array([0, 1, 2, 2, 1, 0])
        tape = Tape()
        node = tape.cross_entropy(tape.const(s), labels, np.array([1, 3, 5]))
        assert float(node.value) == pytest.approx(cross_entropy(s, one_hot(labels, 3), [1, 3, 5]), rel=1e-15)


class TestMad:
    def test_identical_rows(self):
        assert mad(np.tile([[1.0, 2.0, -1.0]], (5, 1))) == pytest.approx(0.0, abs=1e-15)

    def test_orthogonal(self):
        assert mad(np.array([[1.0, 0.0], [0.0, 3.0]])) == pytest.approx(1.0)

    def test_opposite(self):
        assert mad(np.array([[1.0, -2.0], [-1.0, 2.0]])) == pytest.approx(2.0)

    def test_zero_row_is_cosine_zero(self):
        assert mad(np.array([[0.0, 0.0], [1.0, 1.0]])) == pytest.approx(1.0)

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            mad(np.ones((1, 3)))

    def test_sampled_pairs_distinct_and_valid(self):
        from agnn.trainer import _pair_from_flat

        n = 200
        flat = np.arange(n * (n - 1) // 2)
        i, j = _pair_from_flat(flat, n)
        ri, rj = np.triu_indices(n, k=1)
        np.testing.assert_array_equal(i, ri)
        np.testing.assert_array_equal(j, rj)

    def test_sampled_close_to_exact(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((300, 4))
        exact = mad(emb, max_pairs=10**6)
        assert mad(emb) == pytest.approx(exact, abs=0.02)
        assert 0.0 <= mad(emb) <= 2.0


class TestAccuracy:
    def test_perfect(self):
        labels = np.array([0, 2, 1])
        assert accuracy(one_hot(labels, 3), labels, [0, 1, 2]) == 1.0

    def test_random_binary(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 2, 1000)
        scores_ = rng.random((1000, 2))
        # binomial(1000, 0.5): sd ~ 0.016
        assert abs(accuracy(scores_, labels, np.arange(1000)) - 0.5) < 0.05

    def test_disjoint_sets_combine_by_weighted_mean(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 3, 50)
        s = rng.random((50, 3))
        a, b = np.arange(0, 20), np.arange(20, 50)
        whole = accuracy(s, labels, np.arange(50))
        assert whole == pytest.approx((20 * accuracy(s, labels, a) + 30 * accuracy(s, labels, b)) / 50)

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy(np.ones((2, 2)), np.array([0, 1]), [])


class TestModel:
    def test_layer_counts(self):
        cfg = TrainConfig(hidden=8)
        assert init_model(5, 3, 6, cfg).num_layers == 6
        assert init_model(5, 3, 6, cfg).t == 3
        assert init_model(5, 3, 5, cfg, plain_gcn=True).num_layers == 5
        with pytest.raises(ValueError):
            init_model(5, 3, 3, cfg)

    def test_shapes(self):
        model = init_model(5, 3, 4, TrainConfig(hidden=8))
        b1, b2 = model.blocks
        assert b1.w_g.shape == (5, 8) and b2.w_g.shape == (8, 8)
        assert b1.w_e1.shape == (8, 8) and b1.w_e2.shape == (5, 8)
        assert b1.w_c_gcl.shape == (8, 3) and b1.b_gel.shape == (1, 3)
        assert not b1.b_gcl.decay and b1.w_g.decay
        assert np.all(b1.b_gcl.value == 0.0)

    def test_plain_gcn_matches_two_matmul_reference(self):
        rng = np.random.default_rng(3)
        ds = random_dataset(rng, n=10, m=6, r_classes=3)
        ops = normalize(ds.graph)
        model = init_model(6, 3, 2, TrainConfig(hidden=5, seed=4), plain_gcn=True)
        w1, w2 = (b.w_g.value for b in model.blocks)
        a = ops.a_hat.toarray()
        logits = a @ np.maximum(a @ ds.features @ w1, 0.0) @ w2
        ref = np.exp(logits - logits.max(1, keepdims=True))
        ref /= ref.sum(1, keepdims=True)
        tape = Tape()
        out = forward(model, ops, ds.features, tape).predictions[0].value
        assert np.max(np.abs(out - ref)) <= 1e-10

    def test_classifier_order_and_count(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(rng)
        model = init_model(ds.m, 3, 6, TrainConfig(hidden=4))
        fwd = forward(model, normalize(ds.graph), ds.features, Tape())
        assert len(fwd.predictions) == 6 and len(fwd.embeddings) == 6
        assert all(p.shape == (12, 3) for p in fwd.predictions)

    def test_full_loss_gradient(self):
        f, params = kink_free(full_loss_instance, seed=3)
        assert grad_check(f, params, h=1e-5) < 1e-4

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        ds = random_dataset(rng)
        ops = normalize(ds.graph)
        for plain in (False, True):
            model = init_model(ds.m, 3, 4, TrainConfig(hidden=4, seed=9), plain_gcn=plain)
            save_model(model, tmp_path)
            loaded = load_model(tmp_path)
            s1, _, _ = scores(model, ops, ds, [0, 1, 2])
            s2, _, _ = scores(loaded, ops, ds, [0, 1, 2])
            np.testing.assert_array_equal(s1, s2)


class TestTrain:
    def test_zero_epochs(self):
        rng = np.random.default_rng(0)
        ds = random_dataset(rng)
        cfg = TrainConfig(max_epochs=0, hidden=4)
        model = init_model(ds.m, 3, 2, cfg)
        before = model.snapshot()
        model, hist = train(model, normalize(ds.graph), ds, Split([0, 1, 2], [3, 4], [5, 6]), cfg)
        assert len(hist) == 0
        for a, b in zip(before, model.snapshot()):
            np.testing.assert_array_equal(a, b)

    def test_deterministic(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=15, hidden=16, seed=2)
        runs = []
        for _ in range(2):
            model = init_model(ds.m, ds.r_classes, 4, cfg)
            _, hist = train(model, ops, ds, split, cfg)
            runs.append(hist.to_csv())
        assert runs[0] == runs[1]

    def test_history_contents(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=5, hidden=8)
        _, hist = train(init_model(ds.m, ds.r_classes, 4, cfg), ops, ds, split, cfg)
        assert len(hist) == 5 and len(hist.mad_final) == 5
        assert all(abs(sum(w) - 1.0) < 1e-12 and len(w) == 4 for w in hist.weights)
        assert all(np.isfinite(hist.loss))
        assert hist.to_csv().splitlines()[0].startswith("epoch,loss,val_loss")

    def test_lr_halves_on_plateau(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=60, hidden=8, patience=1, lr=0.05, min_lr=0.01)
        _, hist = train(init_model(ds.m, ds.r_classes, 2, cfg), ops, ds, split, cfg)
        lrs = np.array(hist.lr)
        assert lrs[0] == 0.05 and lrs.min() == 0.01
        ratios = lrs[1:] / lrs[:-1]
        assert set(np.round(ratios, 12)) <= {1.0, 0.5, 0.8}

    def test_divergence_reports_epoch(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=3, hidden=8)
        model = init_model(ds.m, ds.r_classes, 2, cfg)
        model.blocks[0].w_g.value[:] = np.nan
        with pytest.raises(NumericError, match="epoch 0"):
            train(model, ops, ds, split, cfg)

    @pytest.mark.slow
    def test_easy_sbm_regression(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=200, hidden=32, seed=0)
        model, hist = train(init_model(ds.m, ds.r_classes, 4, cfg), ops, ds, split, cfg)
        assert evaluate(model, ops, ds, split.train, split.test) >= 0.9

    @pytest.mark.slow
    def test_deep_gcn_smooths_more_than_agnn(self, sbm):
        ds, split, ops = sbm
        cfg = TrainConfig(max_epochs=100, hidden=32, seed=0)
        out = {}
        for plain in (True, False):
            model, _ = train(init_model(ds.m, ds.r_classes, 16, cfg, plain_gcn=plain), ops, ds, split, cfg)
            _, fwd, _ = scores(model, ops, ds, split.train)
            out[plain] = mad(fwd.final_embedding)
        assert out[True] < out[False]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(theta1=0.05, theta2=0.01)
    with pytest.raises(ValueError):
        TrainConfig(rho=1.5)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    cfg = TrainConfig()
    assert (cfg.theta1, cfg.theta2, cfg.weight_decay, cfg.epsilon, cfg.lr) == (0.02, 0.04, 5e-4, 1e-4, 0.01)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_run_history_len():
    assert len(RunHistory()) == 0
