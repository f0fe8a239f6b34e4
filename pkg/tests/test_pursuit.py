import numpy as np
import pytest

from bbsc import beta_process as bp
from bbsc import likelihood as lk
from bbsc import nn, pursuit
from conftest import small_net


class ModularEvaluator:
    """score(z) = w . z (+ base); greedy is provably optimal for these."""

    def __init__(self, w, base=0.0):
        self.w = np.asarray(w, dtype=np.float64)
        self.base = base

    def score_many(self, Z):
        return self.base + np.asarray(Z, dtype=np.float64) @ self.w

    def score(self, z):
        return float(self.score_many(np.asarray(z)[None, :])[0])


def bern_instance(rng, k=8, d=6, hidden=(5,)):
    net = small_net(rng, k=k, hidden=hidden, out=d)
    x = (rng.random(d) < 0.5).astype(float)
    return lk.BernoulliEvaluator(x, net)


class TestEncode:
    def test_every_bit_hurts_terminates_immediately(self):
        k = 5
        result = pursuit.encode(ModularEvaluator(-np.ones(k)), k)
        np.testing.assert_array_equal(result.code, 0.0)
        assert result.active_set == []
        assert result.trace == []
        assert result.evaluations == k

    def test_hand_simulated_modular_objective(self):
        result = pursuit.encode(ModularEvaluator([3.0, -1.0, 2.0, -5.0]), 4)
        np.testing.assert_array_equal(result.code, [1.0, 0.0, 1.0, 0.0])
        assert result.active_set == [0, 2]
        assert result.trace == [3.0, 5.0]
        # rounds of 4, 3, then 2 rejected candidates
        assert result.evaluations == 4 + 3 + 2

    def test_local_optimality_on_random_instances(self, rng):
        for _ in range(20):
            evaluator = bern_instance(rng)
            result = pursuit.encode(evaluator, 8)
            assert pursuit.is_locally_optimal(evaluator, result)

    def test_trace_strictly_increasing(self, rng):
        for _ in range(20):
            evaluator = bern_instance(rng)
            result = pursuit.encode(evaluator, 8)
            trace = [result.base_score] + result.trace
            assert all(b > a for a, b in zip(trace, trace[1:]))

    def test_code_matches_active_set(self, rng):
        result = pursuit.encode(bern_instance(rng), 8)
        active = np.flatnonzero(result.code == 1.0)
        assert sorted(result.active_set) == active.tolist()

    def test_evaluation_budget(self, rng):
        for _ in range(10):
            result = pursuit.encode(bern_instance(rng), 8)
            assert result.evaluations <= (len(result.active_set) + 1) * 8

    def test_max_active_cap(self):
        result = pursuit.encode(ModularEvaluator(np.ones(6)), 6, max_active=2)
        assert len(result.active_set) == 2

    def test_early_termination_when_second_bit_decreases_bound(self):
        # nonlinear 2-bit instance: one bit helps, the second saturates the
        # decoder past the data and drops the bound
        W = np.array([[3.0, 3.0], [-1.0, 3.0]])
        b = np.array([-1.0, -3.0])
        net = nn.DecoderNetwork([nn.DenseLayer(W, b, nn.Activation.SIGMOID)])
        x = np.array([1.0, 0.0])
        evaluator = lk.BernoulliEvaluator(x, net)

        first = pursuit.encode(evaluator, 2)
        assert first.active_set == [0]
        # the rejected second addition really does decrease the bound
        both = evaluator.score(np.array([1.0, 1.0]))
        assert both < first.final_score


class TestExhaustive:
    def test_modular_argmax(self):
        code, score = pursuit.exhaustive_encode(ModularEvaluator([3.0, -1.0, 2.0, -5.0]), 4)
        np.testing.assert_array_equal(code, [1.0, 0.0, 1.0, 0.0])
        assert score == 5.0

    def test_all_minus_inf_returns_empty_code(self):
        class Sentinel:
            def score_many(self, Z):
                Z = np.asarray(Z)
                out = np.full(Z.shape[0], -np.inf)
                out[Z.sum(axis=1) == 0] = -1.0
                return out

            def score(self, z):
                return float(self.score_many(np.asarray(z)[None, :])[0])

        code, score = pursuit.exhaustive_encode(Sentinel(), 5)
        np.testing.assert_array_equal(code, 0.0)
        assert score == -1.0

    def test_greedy_equals_exhaustive_on_modular_objectives(self, rng):
        for _ in range(100):
            w = rng.normal(size=8)
            evaluator = ModularEvaluator(w)
            greedy = pursuit.encode(evaluator, 8)
            exact_code, exact_score = pursuit.exhaustive_encode(evaluator, 8)
            np.testing.assert_array_equal(greedy.code, exact_code)
            assert greedy.final_score == pytest.approx(exact_score, abs=1e-12)

    def test_greedy_never_beats_exhaustive(self, rng):
        for _ in range(25):
            evaluator = bern_instance(rng, k=6)
            greedy = pursuit.encode(evaluator, 6)
            _, exact_score = pursuit.exhaustive_encode(evaluator, 6)
            assert greedy.final_score <= exact_score + 1e-12

    def test_tie_breaks_toward_smaller_codes(self):
        code, score = pursuit.exhaustive_encode(ModularEvaluator(np.zeros(4)), 4)
        np.testing.assert_array_equal(code, 0.0)
        assert score == 0.0

    def test_large_k_refused(self):
        with pytest.raises(ValueError):
            pursuit.exhaustive_encode(ModularEvaluator(np.zeros(17)), 17)


class TestBatchEncode:
    def test_singleton_equals_encode(self, rng):
        net = small_net(rng, k=5, hidden=(4,), out=6)
        x = (rng.random(6) < 0.5).astype(float)
        single = pursuit.encode(lk.BernoulliEvaluator(x, net), 5)
        batch = pursuit.batch_encode(
            x[None, :], lambda i, row: lk.BernoulliEvaluator(row, net), 5)
        assert len(batch) == 1
        np.testing.assert_array_equal(batch[0].code, single.code)
        assert batch[0].trace == single.trace

    def test_permuted_batch_gives_permuted_results(self, rng):
        net = small_net(rng, k=4, hidden=(4,), out=5)
        X = (rng.random((6, 5)) < 0.5).astype(float)
        perm = rng.permutation(6)

        def factory(i, row):
            return lk.BernoulliEvaluator(row, net)

        plain = pursuit.batch_encode(X, factory, 4)
        shuffled = pursuit.batch_encode(X[perm], factory, 4)
        for out_pos, in_pos in enumerate(perm):
            np.testing.assert_array_equal(shuffled[out_pos].code, plain[in_pos].code)

    def test_empty_batch(self):
        out = pursuit.batch_encode(np.zeros((0, 3)), lambda i, r: ModularEvaluator(np.zeros(4)), 4)
        assert out == []

    def test_worker_count_does_not_change_results(self, rng):
        net = small_net(rng, k=6, hidden=(5,), out=7)
        X = (rng.random((12, 7)) < 0.5).astype(float)

        def factory(i, row):
            return lk.BernoulliEvaluator(row, net)

        seq = pursuit.batch_encode(X, factory, 6, workers=1)
        par = pursuit.batch_encode(X, factory, 6, workers=4)
        for a, b in zip(seq, par):
            np.testing.assert_array_equal(a.code, b.code)
            assert a.trace == b.trace
            assert a.evaluations == b.evaluations


class TestSparsityPressure:
    def test_strong_prior_shrinks_codes_and_evaluations(self, rng):
        k, d = 8, 10
        net = small_net(rng, k=k, hidden=(6,), out=d)
        X = (rng.random((30, d)) < 0.5).astype(float)

        sparse_post = bp.BetaPosterior(np.full(k, 0.05), np.full(k, 20.0))
        flat_post = bp.BetaPosterior(np.ones(k), np.ones(k))

        def run(post):
            prior = bp.CodeLogPrior(post)
            results = pursuit.batch_encode(
                X, lambda i, row: lk.BernoulliEvaluator(row, net, prior), k)
            sizes = np.mean([len(r.active_set) for r in results])
            evals = np.mean([r.evaluations for r in results])
            return sizes, evals

        sparse_sizes, sparse_evals = run(sparse_post)
        flat_sizes, flat_evals = run(flat_post)
        assert sparse_sizes <= flat_sizes
        assert sparse_evals <= flat_evals

    def test_incremental_prior_scoring_matches_full_recomputation(self, rng):
        # the tie-in to the expected-log-prior linearity property: scoring a
        # candidate code through the precomputed tables must equal calling
        # expected_log_prior from scratch
        k = 8
        post = bp.BetaPosterior(rng.uniform(0.1, 3.0, k), rng.uniform(0.1, 3.0, k))
        prior = bp.CodeLogPrior(post)
        net = small_net(rng, k=k, hidden=(4,), out=5)
        x = (rng.random(5) < 0.5).astype(float)
        ev = lk.BernoulliEvaluator(x, net, prior)
        for _ in range(10):
            z = (rng.random(k) < 0.4).astype(float)
            via_tables = ev.score(z)
            from_scratch = lk.bern_loglik(x, net.forward(z)) + bp.expected_log_prior(z, post)
            assert via_tables == pytest.approx(from_scratch, abs=1e-12)
