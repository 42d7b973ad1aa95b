import numpy as np
import pytest

from lenscoder import classifiers as cl
from lenscoder.errors import DimensionMismatch


class TestCrossEntropy:
    def test_uniform_scores(self):
        loss, _ = cl.cross_entropy(np.zeros(10), 3)
        assert loss == pytest.approx(np.log(10.0), abs=1e-12)

    def test_saturated_correct_class(self):
        scores = np.zeros(10)
        scores[4] = 30.0
        loss, _ = cl.cross_entropy(scores, 4)
        assert loss < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=10)
        _, grad = cl.cross_entropy(scores, 7)
        eps = 1e-6
        for i in range(10):
            sp, sm = scores.copy(), scores.copy()
            sp[i] += eps
            sm[i] -= eps
            fd = (cl.cross_entropy(sp, 7)[0] - cl.cross_entropy(sm, 7)[0]) / (2 * eps)
            assert grad[i] == pytest.approx(fd, abs=1e-6)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(16, 10)) * 5
        labels = rng.integers(0, 10, size=16)
        _, grad = cl.cross_entropy(scores, labels)
        assert np.abs(grad.sum(axis=1)).max() < 1e-14


class TestForward:
    def test_zero_weights_uniform_scores(self):
        params = {"w": np.zeros((12, 10)), "b": np.zeros(10)}
        scores = cl.forward_classifier(params, np.random.default_rng(2).random((4, 12)))
        assert np.all(scores == 0)
        loss, _ = cl.cross_entropy(scores[0], 0)
        assert loss == pytest.approx(np.log(10.0))

    def test_batchnorm_train_statistics(self):
        rng = np.random.default_rng(3)
        params = cl.init_fcnn(12, rng, hidden=16)
        running = cl.init_running(16)
        x = rng.normal(size=(64, 12)) * 2 + 3
        pre = x @ params["w1"] + params["b1"]
        xhat = (pre - pre.mean(axis=0)) / np.sqrt(pre.var(axis=0) + cl.BN_EPS)
        assert np.allclose(xhat.mean(axis=0), 0.0, atol=1e-6)
        assert np.allclose(xhat.var(axis=0), 1.0, atol=1e-4)
        cl.forward_classifier(params, x, mode="train", running=running)
        assert not np.allclose(running["mean"], 0.0)  # stats were updated

    def test_eval_mode_deterministic(self):
        rng = np.random.default_rng(4)
        params = cl.init_fcnn(8, rng, hidden=16)
        running = cl.init_running(16)
        x = rng.normal(size=(5, 8))
        a = cl.forward_classifier(params, x, mode="eval", running=running)
        b = cl.forward_classifier(params, x, mode="eval", running=running)
        assert np.array_equal(a, b)

    def test_dimension_mismatch(self):
        params = {"w": np.zeros((12, 10)), "b": np.zeros(10)}
        with pytest.raises(DimensionMismatch):
            cl.forward_classifier(params, np.zeros((2, 13)))


class TestAdam:
    def test_first_step_magnitude(self):
        state = cl.AdamState(lr=1e-3)
        params = {"p": np.array([1.0, -2.0])}
        grads = {"p": np.array([0.5, -3.0])}
        new = state.step(params, grads)
        delta = new["p"] - params["p"]
        # bias-corrected first step is ~ -lr * sign(g)
        assert np.allclose(np.abs(delta), 1e-3, rtol=1e-6)
        assert np.all(np.sign(delta) == -np.sign(grads["p"]))

    def test_zero_grads_keep_params(self):
        state = cl.AdamState()
        params = {"p": np.array([1.0, 2.0])}
        state.step(params, {"p": np.zeros(2)})
        new = state.step(params, {"p": np.zeros(2)})
        assert np.array_equal(new["p"], params["p"])
        assert state.t == 2

    def test_identical_trajectories(self):
        rng = np.random.default_rng(5)
        grads_seq = [
            {"p": rng.normal(size=3)} for _ in range(10)
        ]
        p1 = {"p": np.ones(3)}
        p2 = {"p": np.ones(3)}
        s1, s2 = cl.AdamState(), cl.AdamState()
        for g in grads_seq:
            p1 = s1.step(p1, g)
            p2 = s2.step(p2, g)
        assert np.array_equal(p1["p"], p2["p"])

    def test_shape_mismatch(self):
        state = cl.AdamState()
        with pytest.raises(DimensionMismatch):
            state.step({"p": np.zeros(3)}, {"p": np.zeros(4)})
