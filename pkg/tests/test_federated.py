import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optlab.federated import (
    SyncSchedule,
    fed_rr,
    fed_variances,
    local_sgd,
    minibatch_sgd,
    partition,
)
from optlab.problems import make_least_squares, make_logistic, reference_solution, synthetic_classification
from optlab.prox import ProxTerm
from optlab.rng import RngStream
from optlab.shuffle import PermutationSchedule, StepsizeSchedule, run_prox_rr


def _ls(n=24, d=3, seed=0):
    rng = RngStream(seed, "fedls")
    return make_least_squares(rng.normal((n, d)), rng.normal(n), 0.1)


class TestPartition:
    def test_contiguous(self):
        fp = partition(_ls(10), 3)
        assert [ix.tolist() for ix in fp.indices] == [[0, 1, 2, 3], [4, 5, 6], [7, 8, 9]]

    def test_shuffled_covers_everything(self):
        fp = partition(_ls(10), 3, "shuffled", rng=4)
        assert sorted(np.concatenate(fp.indices).tolist()) == list(range(10))

    def test_replicate(self):
        fp = partition(_ls(6), 4, "replicate")
        assert fp.N == 24 and all(len(ix) == 6 for ix in fp.indices)

    def test_too_many_workers(self):
        with pytest.raises(ValueError):
            partition(_ls(3), 4)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            partition(_ls(6), 2, "random")

    def test_dataset_becomes_logistic(self):
        fp = partition(synthetic_classification(12, 3, 1), 3, lambda2=0.2)
        assert fp.parent.mu == 0.2 and fp.M == 3

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_objectives(self, M, seed):
        f = _ls(15, 3, 2)
        fp = partition(f, M, "shuffled", rng=seed)
        x = RngStream(seed, "x").normal(3)
        # f is the mean of the shard averages, pooled the mean over all samples
        want = np.mean([s.value(x) for s in fp.shards])
        assert fp.f.value(x) == pytest.approx(want, rel=1e-12)
        assert fp.pooled.value(x) == pytest.approx(f.value(x), rel=1e-12)


class TestSync:
    def test_constant_gap(self):
        s = SyncSchedule(H=3)
        assert [t for t in range(1, 10) if s.is_sync(t)] == [3, 6, 9]

    def test_explicit_times(self):
        s = SyncSchedule(times=[2, 5])
        assert [t for t in range(1, 7) if s.is_sync(t)] == [2, 5]

    @pytest.mark.parametrize("kw", [{}, {"H": 0}, {"times": [3, 3]}, {"H": 2, "times": [1]}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SyncSchedule(**kw)


class TestLocalSGD:
    def test_h1_is_minibatch_sgd(self):
        fp = partition(_ls(), 4, "shuffled", rng=1)
        a = local_sgd(fp, SyncSchedule(H=1), 0.05, 40, batch=2, rng=3)
        b = minibatch_sgd(fp, 0.05, 40, batch=2, rng=3)
        assert np.array_equal(a.x, b.x) and a.same_metrics(b)

    def test_single_worker_is_sgd(self):
        # oracle: hand-written SGD on the same sample stream
        f = _ls()
        fp = partition(f, 1)
        tr = local_sgd(fp, SyncSchedule(H=5), 0.05, 23, rng=8)
        stream = RngStream(8, "local_sgd").child("worker/0")
        x = np.zeros(3)
        for _ in range(23):
            i = stream.integers(f.n, size=1)[0]
            x = x - 0.05 * f.component_grad(i, x)
        np.testing.assert_allclose(tr.x, x, atol=1e-13)

    def test_deviation_vanishes_at_sync(self):
        fp = partition(_ls(), 4, "contiguous")
        tr = local_sgd(fp, SyncSchedule(H=4), 0.05, 20, rng=2)
        V = tr.extra("V")
        steps = tr.column("step")
        assert np.all(V[steps % 4 == 0] == 0)
        assert np.all(V[steps % 4 != 0] > 0)

    def test_bits_count_syncs(self):
        fp = partition(_ls(), 4)
        tr = local_sgd(fp, SyncSchedule(H=5), 0.05, 20, rng=2)
        assert tr.column("bits")[-1] == 4 * 4 * 3 * 32

    def test_converges_on_homogeneous_data(self):
        f = _ls(40, 3, 5)
        xs, _ = reference_solution(f)
        fp = partition(f, 4, "replicate")
        tr = local_sgd(fp, SyncSchedule(H=1), 0.02, 3000, batch=4, rng=1, x_star=xs)
        assert tr.column("dist_sq")[-1] < 0.05 * tr.column("dist_sq")[0]


class TestFedRR:
    def test_single_worker_is_prox_rr(self):
        f = _ls(12, 3, 6)
        psi = ProxTerm.l1(0.05)
        fp = partition(f, 1, R=psi)
        tr = fed_rr(fp, 0.02, 15, rng=4)
        sched = PermutationSchedule("RR", 12, RngStream(4, "fed_rr").child("worker/0"))
        ref = run_prox_rr(f, psi, sched, StepsizeSchedule.constant(0.02), 15, np.zeros(3))
        np.testing.assert_allclose(tr.x, ref.x, atol=1e-13)

    def test_prox_parameter(self):
        fp = partition(_ls(12), 3, R=ProxTerm.l1(0.1))
        assert fed_rr(fp, 0.01, 1).metadata["prox_param"] == pytest.approx(0.01 * 12 / 3)

    def test_large_step_warns(self):
        fp = partition(_ls(12), 3)
        with pytest.warns(UserWarning):
            fed_rr(fp, 10.0, 1)

    def test_so_variant(self):
        fp = partition(_ls(12), 3)
        a, b = fed_rr(fp, 0.01, 3, rng=1, variant="SO"), fed_rr(fp, 0.01, 3, rng=1, variant="SO")
        assert a.same_metrics(b)
        with pytest.raises(ValueError):
            fed_rr(fp, 0.01, 3, variant="IG")

    def test_neighbourhood_shrinks_with_step(self):
        f = make_logistic(synthetic_classification(40, 3, 9, sort_labels=True), 0.1)
        xs, fs = reference_solution(f)
        fp = partition(f, 4, "contiguous")
        g = 0.2 / f.L_i.max()
        big = fed_rr(fp, g, 300, rng=0, x_star=xs).column("dist_sq")[-1]
        small = fed_rr(fp, g / 4, 1200, rng=0, x_star=xs).column("dist_sq")[-1]
        assert big < 1e-3 and small < big / 4


class TestVariances:
    def test_batch_one_against_enumeration(self):
        f = _ls(12, 2, 3)
        fp = partition(f, 3, "shuffled", rng=2)
        xs, _ = reference_solution(fp.f)
        opt, dif, sig_m = fed_variances(fp, xs)
        G = [s.all_grads(xs) for s in fp.shards]
        assert opt == pytest.approx(np.mean([np.mean(np.sum(g**2, 1)) for g in G]), rel=1e-10)
        assert dif == pytest.approx(opt, rel=1e-10)
        np.testing.assert_allclose(sig_m, [np.mean(np.sum((g - g.mean(0)) ** 2, 1)) for g in G])

    def test_batch_two_against_enumeration(self):
        f = _ls(8, 2, 4)
        fp = partition(f, 2)
        x = np.array([0.3, -0.2])
        _, dif, _ = fed_variances(fp, x, batch=2)
        # with-replacement pairs on every shard
        vals = []
        for s in fp.shards:
            G = s.all_grads(x)
            vals.append(np.mean([np.sum(((G[i] + G[j]) / 2) ** 2)
                                 for i, j in itertools.product(range(s.n), repeat=2)]))
        assert dif == pytest.approx(np.mean(vals), rel=1e-12)

    def test_full_batch(self):
        fp = partition(_ls(12, 2, 5), 3)
        x = np.ones(2)
        opt, dif, _ = fed_variances(fp, x, batch=np.inf)
        gbar = np.mean([s.grad(x) for s in fp.shards], 0)
        assert opt == pytest.approx(gbar @ gbar)
        assert dif == pytest.approx(np.mean([s.grad(x) @ s.grad(x) for s in fp.shards]))
