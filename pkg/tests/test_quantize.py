import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optlab.federated import partition
from optlab.problems import make_logistic, reference_solution, synthetic_classification
from optlab.quantize import (
    alpha_p,
    bit_cost,
    deserialize_message,
    diana_default_params,
    diana_run,
    expected_nnz,
    psi,
    quant_block,
    quant_block_samples,
    quant_p,
    serialize_message,
    terngrad_run,
)
from optlab.rng import RngStream

PS = [1, 2, np.inf]


def _exact_moments(delta, p, blocks):
    # oracle: enumerate every keep pattern with its probability
    d = len(delta)
    edges = np.concatenate([[0], np.cumsum(blocks)])
    scale = np.concatenate([np.full(b - a, np.linalg.norm(delta[a:b], ord=p)) for a, b in zip(edges[:-1], edges[1:])])
    prob = np.where(scale > 0, np.abs(delta) / np.where(scale > 0, scale, 1), 0)
    mean, sq, nnz = np.zeros(d), 0.0, 0.0
    for keep in itertools.product([0, 1], repeat=d):
        keep = np.array(keep)
        w = np.prod(np.where(keep, prob, 1 - prob))
        out = scale * np.sign(delta) * keep
        mean += w * out
        sq += w * np.sum((out - delta) ** 2)
        nnz += w * np.count_nonzero(out)
    return mean, sq, nnz


class TestQuantizer:
    @pytest.mark.parametrize("p", PS)
    @pytest.mark.parametrize("blocks", [[5], [2, 3], [1] * 5])
    def test_exact_moments(self, p, blocks):
        delta = RngStream(1, "qm").normal(5)
        mean, sq, nnz = _exact_moments(delta, p, blocks)
        np.testing.assert_allclose(mean, delta, atol=1e-12)
        assert sq == pytest.approx(psi(delta, p, blocks), abs=1e-12)
        if len(blocks) == 1:
            assert nnz == pytest.approx(expected_nnz(delta, p), abs=1e-12)

    def test_samples_equal_sequential_calls(self):
        delta = RngStream(2, "qs").normal(6)
        X, nnz = quant_block_samples(delta, 2, [3, 3], RngStream(5, "q"), 7)
        rng = RngStream(5, "q")
        for s in range(7):
            msg = quant_block(delta, 2, [3, 3], rng)
            np.testing.assert_array_equal(X[s], msg.decode())
            assert nnz[s] == msg.nnz

    def test_zero_block(self):
        delta = np.array([0.0, 0.0, 1.0, -2.0])
        msg = quant_block(delta, 1, [2, 2], 0)
        assert msg.norms[0] == 0 and np.all(msg.signs[:2] == 0)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            quant_p(np.array([np.nan, 1.0]), 2, 0)

    def test_bad_blocks(self):
        with pytest.raises(ValueError):
            quant_block(np.ones(4), 2, [3, 2], 0)

    def test_bad_p(self):
        with pytest.raises(ValueError):
            quant_p(np.ones(3), 3, 0)

    def test_inf_norm_always_keeps_the_max(self):
        delta = np.array([0.1, -4.0, 2.0])
        for s in range(20):
            assert quant_p(delta, np.inf, s).signs[1] == -1


class TestBits:
    def test_bit_cost_values(self):
        assert bit_cost(0) == 32
        assert bit_cost(4) == pytest.approx(2 * (2 + 2) + 32)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.sampled_from(PS))
    def test_wire_round_trip(self, d, seed, p):
        rng = RngStream(seed, "wire")
        delta = rng.normal(d)
        cut = 1 + int(rng.integers(d))
        blocks = [cut, d - cut] if cut < d else [d]
        msg = quant_block(delta, p, blocks, rng)
        back = deserialize_message(serialize_message(msg), msg.sizes, p)
        np.testing.assert_array_equal(back.decode(), msg.decode())
        assert back.bits == msg.bits

    def test_trailing_bytes(self):
        msg = quant_p(np.ones(3), 2, 0)
        with pytest.raises(ValueError):
            deserialize_message(serialize_message(msg) + b"\x00", msg.sizes, 2)


class TestAlpha:
    @pytest.mark.parametrize("p", PS)
    @pytest.mark.parametrize("d", [1, 2, 4, 16])
    def test_lower_bound(self, p, d):
        X = RngStream(d, "alpha").normal((5000, d))
        r = np.sum(X**2, 1) / (np.abs(X).sum(1) * np.linalg.norm(X, ord=p, axis=1))
        assert r.min() >= alpha_p(p, d) - 1e-9

    @pytest.mark.parametrize("p, x", [(1, np.ones(9)), (2, np.ones(9))])
    def test_constant_vector_attains(self, p, x):
        r = x @ x / (np.abs(x).sum() * np.linalg.norm(x, ord=p))
        assert r == pytest.approx(alpha_p(p, len(x)), abs=1e-12)

    def test_inf_witness(self):
        # one unit entry, the others equal to (sqrt(d) - 1) / (d - 1)
        d = 16
        x = np.full(d, (np.sqrt(d) - 1) / (d - 1))
        x[0] = 1.0
        r = x @ x / (np.abs(x).sum() * np.abs(x).max())
        assert r == pytest.approx(alpha_p(np.inf, d), abs=1e-9)


class TestDiana:
    def setup_method(self):
        ds = synthetic_classification(40, 5, RngStream(3, "diana"))
        self.f = make_logistic(ds, 0.1)
        self.fp = partition(self.f, 4, "contiguous")
        self.xs, self.fs = reference_solution(self.fp.f)

    @pytest.mark.parametrize("p", PS)
    @pytest.mark.parametrize("M", [1, 4, 16])
    def test_default_params_condition(self, p, M):
        alpha, c, gamma = diana_default_params(2.0, 0.1, M, p, [8])
        assert (1 + M * c * alpha**2) / (1 + M * c * alpha) <= alpha_p(p, 8) + 1e-12
        assert gamma <= alpha / 0.1

    def test_needs_strong_convexity(self):
        with pytest.raises(ValueError):
            diana_default_params(1.0, 0.0, 2, 2, [4])

    def test_linear_convergence(self):
        alpha, _, gamma = diana_default_params(self.fp.f.L, self.fp.f.mu, 4, 2, [5])
        tr = diana_run(self.fp, 2, None, alpha, gamma, K=800, rng=1, x_star=self.xs)
        assert tr.column("dist_sq")[-1] < 1e-10
        # memories approach the local gradients at the optimum
        G = np.array([s.grad(self.xs) for s in self.fp.shards])
        np.testing.assert_allclose(tr.memory, G, atol=1e-4)

    def test_alpha_zero_is_terngrad(self):
        a = diana_run(self.fp, np.inf, None, 0.0, 0.1, K=20, rng=3)
        b = terngrad_run(self.fp, np.inf, None, 0.1, K=20, rng=3)
        assert a.same_metrics(b)

    def test_dense_baseline_is_gradient_descent(self):
        tr = diana_run(self.fp, None, None, 0.0, 0.5, K=30, rng=0)
        x = np.zeros(5)
        for _ in range(30):
            x = x - 0.5 * self.fp.f.grad(x)
        np.testing.assert_allclose(tr.x, x, atol=1e-13)
        assert tr.column("bits")[-1] == 30 * 4 * 5 * 32

    def test_compressed_uses_fewer_bits(self):
        dense = diana_run(self.fp, None, None, 0.0, 0.1, K=10, rng=0).column("bits")[-1]
        tern = terngrad_run(self.fp, np.inf, [1] * 5, 0.1, K=10, rng=0).column("bits")[-1]
        q = terngrad_run(self.fp, np.inf, None, 0.1, K=10, rng=0).column("bits")[-1]
        assert q < dense and tern > q

    def test_momentum_and_schedule(self):
        sched = lambda k: 1.0 / (1 + 0.1 * k)
        tr = diana_run(self.fp, 2, None, 0.1, sched, beta=0.3, K=50, rng=0, x_star=self.xs)
        assert np.isfinite(tr.column("dist_sq")[-1])
        with pytest.raises(ValueError):
            diana_run(self.fp, 2, None, 0.1, 0.1, beta=1.0)
