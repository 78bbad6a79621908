import math

import numpy as np
import pytest

from lyapnet import lorenz, lyapunov, network, training
from lyapnet import vector_ad as va
from lyapnet.training import TrainConfig


def tiny_traj(seed=0, n=60):
    return training.default_trajectory(seed, n_per_regime=n, transient=100)


def constant_traj(n=400, c=(0.2, -0.1, 0.3)):
    states = np.tile(np.asarray(c), (n, 1))
    return lorenz.Trajectory(states, dt=1.0, shift_index=n // 2)


SMALL = TrainConfig(layer_sizes=(3, 8, 3), lyap_horizon=5)


class TestConfig:
    def test_defaults_valid(self):
        TrainConfig().validate()

    @pytest.mark.parametrize("kw", [
        {"regularizer": "ridge"}, {"alpha": -1.0}, {"dropout_p": 1.0},
        {"lyap_horizon": 0}, {"learning_rate": 0.0}, {"optimizer": "lbfgs"},
        {"layer_sizes": (3,)}, {"layer_sizes": (3, 0, 3)},
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw).validate()

    def test_all_problems_reported_at_once(self):
        with pytest.raises(ValueError) as e:
            TrainConfig(alpha=-1, learning_rate=0).validate()
        assert "alpha" in str(e.value) and "learning_rate" in str(e.value)


class TestTrainOnline:
    def test_constant_trajectory_fits(self):
        cfg = TrainConfig(layer_sizes=(3, 8, 3), seed=0)
        res = training.train_online(cfg, constant_traj())
        assert res.per_step_mse[-1] < 1e-6
        late = res.per_step_mse[100:]
        # losses trend down after warmup
        assert np.mean(late[-50:]) < np.mean(late[:50])

    def test_alpha_zero_bit_identical_to_vanilla(self):
        traj = tiny_traj()
        a = training.train_online(
            TrainConfig(regularizer="none", layer_sizes=(3, 8, 3), seed=4), traj)
        b = training.train_online(
            TrainConfig(regularizer="lyapunov", alpha=0.0,
                        layer_sizes=(3, 8, 3), seed=4), traj)
        assert np.array_equal(a.per_step_mse, b.per_step_mse)
        for (Wa, ba), (Wb, bb) in zip(a.final_params, b.final_params):
            assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)

    def test_deterministic(self):
        traj = tiny_traj()
        cfg = TrainConfig(regularizer="lyapunov", alpha=0.5,
                          layer_sizes=(3, 8, 3), lyap_horizon=5, seed=1)
        a = training.train_online(cfg, traj)
        b = training.train_online(cfg, traj)
        assert np.array_equal(a.per_step_mse, b.per_step_mse)

    def test_result_invariants(self):
        traj = tiny_traj()
        cfg = TrainConfig(regularizer="l2", alpha=1e-3,
                          layer_sizes=(3, 8, 3), seed=2)
        res = training.train_online(cfg, traj)
        assert len(res.per_step_mse) == len(traj) - 1
        assert len(res.per_step_reg) == len(res.per_step_mse)
        assert res.shift_index == traj.shift_index
        assert res.post_shift_mse_sum == pytest.approx(
            float(np.sum(res.per_step_mse[res.shift_index:])), abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            training.train_online(TrainConfig(layer_sizes=(2, 4, 2)),
                                  tiny_traj())

    def test_too_short_trajectory(self):
        t = lorenz.Trajectory(np.zeros((1, 3)), dt=1.0)
        with pytest.raises(ValueError):
            training.train_online(TrainConfig(layer_sizes=(3, 4, 3)), t)

    def test_dropout_uses_separate_stream(self):
        # dropout draws must not perturb the shared init
        traj = tiny_traj()
        a = training.train_online(
            TrainConfig(regularizer="none", layer_sizes=(3, 8, 3), seed=6), traj)
        b = training.train_online(
            TrainConfig(regularizer="dropout", dropout_p=0.3,
                        layer_sizes=(3, 8, 3), seed=6), traj)
        # same initial network: first-step loss identical iff the first
        # forward with dropout differs but the underlying weights match
        net_a = network.init((3, 8, 3), training.stream_seeds(6)["init"])
        net_b = network.init((3, 8, 3), training.stream_seeds(6)["init"])
        assert net_a.weights == net_b.weights
        assert not np.array_equal(a.per_step_mse, b.per_step_mse)

    def test_skipped_reg_accounting(self, monkeypatch):
        traj = tiny_traj()
        calls = {"n": 0}
        real = training._lyap_term

        def flaky(wvars, x, horizon):
            calls["n"] += 1
            if calls["n"] % 7 == 0:
                raise lyapunov.RankDeficiencyError(0, 0, 0.0)
            return real(wvars, x, horizon)

        monkeypatch.setattr(training, "_lyap_term", flaky)
        cfg = TrainConfig(regularizer="lyapunov", alpha=0.3,
                          layer_sizes=(3, 8, 3), lyap_horizon=3, seed=0)
        res = training.train_online(cfg, traj)
        n_nan = int(np.sum(np.isnan(res.per_step_reg)))
        assert res.skipped_reg_steps == n_nan
        assert res.skipped_reg_steps == calls["n"] // 7


class TestGradients:
    def test_vector_matches_scalar_engine(self):
        net = network.init([3, 4, 3], 1)
        x = [0.1, 0.2, -0.1]
        tgt = [0.05, 0.15, -0.2]
        alpha, H = 0.7, 5
        tape, loss, pnodes = training.composite_loss_tape(net, x, tgt, alpha, H)
        tape.backward(loss)
        g_scalar = np.array([p.grad for p in pnodes])
        params = [(np.array(W), np.array(b)) for W, b in net.weights]
        wv = training._wrap_params(params)
        y, _ = training._forward_graph(wv, np.array(x))
        mse = va.sumsq(va.add_const(y, -np.array(tgt)))
        lam = training._lyap_term(wv, np.array(x), H)
        L = va.add(mse, va.scale(va.absval(lam), alpha))
        va.backward(L)
        g_vec = np.concatenate([np.concatenate([W.grad.ravel(), b.grad.ravel()])
                                for W, b in wv])
        assert abs(loss.value - L.data) < 1e-12
        assert np.max(np.abs(g_scalar - g_vec)) < 1e-12

    def test_composite_loss_matches_finite_differences(self):
        from lyapnet import scalar_ad as ad
        values_net = network.init([3, 6, 3], 3)
        x = [0.3, -0.2, 0.1]
        tgt = [0.25, -0.1, 0.12]
        alpha, H = 0.8, 5

        def f(p):
            tape, loss, nodes = training.composite_loss_tape(
                values_net, x, tgt, alpha, H)
            for node, v in zip(nodes, p):
                tape.values[node.idx] = v
            # rebuild with the new parameter values
            tape2, loss2, nodes2 = training.composite_loss_tape(
                values_net, x, tgt, alpha, H)
            for node, v in zip(nodes2, p):
                tape2.values[node.idx] = v
            raise NotImplementedError

        # simpler: perturb the float network directly
        def g(p):
            import copy
            net = copy.deepcopy(values_net)
            flat = []
            for W, b in net.weights:
                for row in W:
                    flat.append(row)
                flat.append(b)
            k = 0
            for seq in flat:
                for i in range(len(seq)):
                    seq[i] = p[k]
                    k += 1
            tape, loss, nodes = training.composite_loss_tape(net, x, tgt,
                                                             alpha, H)
            tape.backward(loss)
            return loss.value, [n.grad for n in nodes]

        p0 = []
        for W, b in values_net.weights:
            for row in W:
                p0.extend(row)
            p0.extend(b)
        assert ad.finite_diff_check(g, p0, 1e-6) < 1e-4


class TestLossRatio:
    def run_pair(self, seed=0):
        traj = tiny_traj(seed)
        v = training.train_online(
            TrainConfig(layer_sizes=(3, 8, 3), seed=seed), traj)
        l = training.train_online(
            TrainConfig(regularizer="lyapunov", alpha=0.5, lyap_horizon=3,
                        layer_sizes=(3, 8, 3), seed=seed), traj)
        return v, l

    def test_self_ratio_is_one(self):
        v, _ = self.run_pair()
        rep = training.loss_ratio(v, v)
        assert rep.ratio == 1.0
        assert np.all(rep.ratio_series == 1.0)

    def test_direct_quotient(self):
        v, l = self.run_pair(1)
        rep = training.loss_ratio(v, l)
        assert rep.ratio == pytest.approx(
            v.post_shift_mse_sum / l.post_shift_mse_sum)

    def test_symmetry(self):
        v, l = self.run_pair(2)
        a = training.loss_ratio(v, l).ratio
        b = training.loss_ratio(l, v).ratio
        assert a * b == pytest.approx(1.0, abs=1e-12)

    def test_zero_denominator(self):
        v, _ = self.run_pair(3)
        z = training.ExperimentResult(v.per_step_mse, v.per_step_reg, 0.0,
                                      v.shift_index, 0, 0, v.config)
        with pytest.raises(ZeroDivisionError):
            training.loss_ratio(v, z)

    def test_mismatched_shift(self):
        v, l = self.run_pair(4)
        bad = training.ExperimentResult(l.per_step_mse, l.per_step_reg,
                                        l.post_shift_mse_sum,
                                        l.shift_index + 1, 0, 0, l.config)
        with pytest.raises(ValueError):
            training.loss_ratio(v, bad)


class TestBenchmark:
    def test_single_seed_quartiles_degenerate(self):
        bench = training.run_benchmark(
            SMALL, [("l2", 1e-3)], 1, traj_factory=lambda s: tiny_traj(s))
        row = bench.rows[0]
        assert row.q1 == row.median == row.q3 == row.mean_ratio

    def test_matched_seed_fairness(self):
        bench = training.run_benchmark(
            SMALL, [("l1", 1e-4), ("l2", 1e-3)], 2,
            traj_factory=lambda s: tiny_traj(s))
        # every variant saw the identical trajectory and initial params:
        # the first-step MSE (before any update differs) must coincide
        for s in range(2):
            v = bench.vanilla_results[s]
            for key, per_seed in bench.variant_results.items():
                assert per_seed[s].per_step_mse[0] == v.per_step_mse[0]

    def test_rows_sorted_descending(self):
        bench = training.run_benchmark(
            SMALL, [("l1", 1e-4), ("l2", 1e-3), ("dropout", 0.2)], 2,
            traj_factory=lambda s: tiny_traj(s))
        means = [r.mean_ratio for r in bench.rows]
        assert means == sorted(means, reverse=True)

    def test_none_vs_vanilla_ratio_one(self):
        bench = training.run_benchmark(
            SMALL, [("none", None)], 3, traj_factory=lambda s: tiny_traj(s))
        assert bench.rows[0].mean_ratio == pytest.approx(1.0)

    def test_bad_seeds(self):
        with pytest.raises(ValueError):
            training.run_benchmark(SMALL, [], 0)


class TestSweep:
    def test_alpha_zero_point_is_vanilla(self):
        curve = training.sweep_alpha(SMALL, [0.0], 2,
                                     traj_factory=lambda s: tiny_traj(s))
        a, mean, q1, med, q3 = curve[0]
        assert a == 0.0
        assert mean == pytest.approx(1.0)

    def test_curve_order_follows_input(self):
        curve = training.sweep_alpha(SMALL, [0.5, 0.0], 1,
                                     traj_factory=lambda s: tiny_traj(s))
        assert [c[0] for c in curve] == [0.5, 0.0]

    def test_bad_alphas(self):
        with pytest.raises(ValueError):
            training.sweep_alpha(SMALL, [], 1)
        with pytest.raises(ValueError):
            training.sweep_alpha(SMALL, [-0.1], 1)


class TestSynthesis:
    def test_rejects_bad_target(self):
        with pytest.raises(ValueError):
            training.synthesize_attractor(0.0)

    def test_nonconvergence_carries_spectrum(self):
        cfg = TrainConfig(layer_sizes=(3, 4, 3), seed=0)
        with pytest.raises(training.NonConvergenceError):
            training.synthesize_attractor(0.15, cfg, max_steps=4,
                                          max_restarts=1, check_every=2)

    @pytest.mark.slow
    def test_synthesizes_small_target(self):
        net, traj, spec = training.synthesize_attractor(
            0.15, max_steps=8000, max_restarts=3)
        ok, _ = lyapunov.is_chaotic_attractor(spec)
        assert ok
        assert abs(spec.values()[0] - 0.15) < 0.05
        assert np.max(np.abs(traj.states)) < 100


class TestStreams:
    def test_streams_deterministic_and_distinct(self):
        a = training.stream_seeds(0)
        b = training.stream_seeds(0)
        assert a == b
        assert len({a["data"], a["init"], a["dropout"]}) == 3

    def test_different_roots_differ(self):
        assert training.stream_seeds(0) != training.stream_seeds(1)
