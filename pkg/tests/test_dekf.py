import numpy as np
import pytest

from partkf.benchmarks import (
    LINEAR_GUESS,
    LINEAR_X0,
    REACTOR_C_S,
    REACTOR_T_S,
    get_benchmark,
    linear_subsystems,
    reactor_subsystems,
)
from partkf.dekf import dekf_gain_cov, dekf_predict, dekf_update, run_dekf
from partkf.dkf import (
    EstimatorDesign,
    ExchangeSnapshot,
    FilterError,
    gain,
    covariance,
    predict,
    run_dkf,
    update,
)
from partkf.model import (
    aggregate_nonlinear,
    assemble_global,
    linear_as_nonlinear,
    linearize,
    make_partition,
)
from partkf.simulate import NoiseSpec, simulate

from conftest import noise_for

REACTOR_STEADY = np.column_stack([REACTOR_T_S, REACTOR_C_S]).ravel()


def four_state_models():
    part = make_partition([2, 2], [1, 1])
    lin = assemble_global(linear_subsystems(), part)
    nl = aggregate_nonlinear([linear_as_nonlinear(s) for s in lin.subsystems], part)
    return lin, nl


class TestDekfPredict:
    def test_affine_model_matches_linear_prediction(self):
        lin, nl = four_state_models()
        snap = ExchangeSnapshot(k=1, posteriors=(LINEAR_X0[:2], LINEAR_X0[2:]))
        for i in range(2):
            assert np.array_equal(dekf_predict(i, snap, nl), predict(i, snap, lin))

    def test_steady_state_is_fixed_point(self, reactor_bench):
        p = reactor_bench.model.partition
        posts = tuple(REACTOR_STEADY[p.state_slice(i)] for i in range(4))
        snap = ExchangeSnapshot(k=1, posteriors=posts)
        for i in range(4):
            out = dekf_predict(i, snap, reactor_bench.model)
            assert np.allclose(out, posts[i], rtol=0, atol=1e-9)

    def test_offset_guess_prediction_stays_in_box(self, reactor_bench):
        p = reactor_bench.model.partition
        guess = reactor_bench.design.x0_guess
        posts = tuple(guess[p.state_slice(i)] for i in range(4))
        snap = ExchangeSnapshot(k=1, posteriors=posts)
        lo, hi = reactor_bench.model.state_box()
        for i in range(4):
            out = dekf_predict(i, snap, reactor_bench.model)
            assert np.all(np.isfinite(out))
            sl = p.state_slice(i)
            assert np.all(out >= lo[sl]) and np.all(out <= hi[sl])

    def test_missing_neighbor(self, reactor_bench):
        snap = ExchangeSnapshot(k=1, posteriors=(np.zeros(2), None,
                                                 np.zeros(2), np.zeros(2)))
        with pytest.raises(FilterError):
            dekf_predict(0, snap, reactor_bench.model)


class TestDekfGainCov:
    def test_affine_model_matches_linear_gain_and_covariance(self):
        lin, nl = four_state_models()
        design = EstimatorDesign.from_model(lin, P0=[100.0 * np.eye(2)] * 2,
                                            x0_guess=LINEAR_GUESS)
        blocks = linearize(nl.subsystems, LINEAR_X0, mode="analytic")
        rng = np.random.default_rng(0)
        M = rng.normal(size=(2, 2))
        P = M @ M.T + np.eye(2)
        for i in range(2):
            L_nl, P_nl, floored = dekf_gain_cov(
                P, blocks.a_cols[i], blocks.a_blocks[(i, i)], blocks.C,
                blocks.c_cols[i], design.Q[i], design.R)
            L_lin = gain(i, P, lin, design)
            P_lin = covariance(i, P, L_lin, lin, design)
            assert not floored
            assert np.array_equal(L_nl, L_lin)
            assert np.array_equal(P_nl, P_lin)

    def test_analytic_and_fd_blocks_give_close_gains(self, reactor_bench):
        model = reactor_bench.model
        design = reactor_bench.design
        x = REACTOR_STEADY + np.tile([2.0, 0.1], 4)
        ba = linearize(model.subsystems, x, mode="analytic")
        bf = linearize(model.subsystems, x, mode="fd")
        P = 5.0 * np.eye(2)
        for i in range(4):
            L_a, _, _ = dekf_gain_cov(P, ba.a_cols[i], ba.a_blocks[(i, i)],
                                      ba.C, ba.c_cols[i], design.Q[i], design.R)
            L_f, _, _ = dekf_gain_cov(P, bf.a_cols[i], bf.a_blocks[(i, i)],
                                      bf.C, bf.c_cols[i], design.Q[i], design.R)
            assert np.all(np.abs(L_a - L_f) <= 1e-4 * (1.0 + np.abs(L_f)))

    def test_covariance_spd_over_500_steps(self, reactor_bench):
        traj = simulate(reactor_bench.model, reactor_bench.x0, 500,
                        reactor_bench.noise(seed=17))
        rec = run_dekf(reactor_bench.model, reactor_bench.design, traj)
        assert rec.floor_events == 0
        for k in range(0, 501, 25):
            for i in range(4):
                np.linalg.cholesky(rec.covs[k][i])


class TestDekfUpdate:
    def test_perfect_prediction_keeps_posterior(self, reactor_bench):
        model = reactor_bench.model
        p = model.partition
        preds = tuple(REACTOR_STEADY[p.state_slice(i)] for i in range(4))
        y = model.h(REACTOR_STEADY)
        snap = ExchangeSnapshot(k=1, posteriors=preds, predictions=preds,
                                measurement=y)
        L = np.ones((2, p.ny))
        for i in range(4):
            assert np.array_equal(dekf_update(i, preds[i], snap, L, model), preds[i])

    def test_affine_model_matches_linear_update(self):
        lin, nl = four_state_models()
        preds = (LINEAR_X0[:2] + 0.1, LINEAR_X0[2:] - 0.2)
        y = np.array([1.0, -2.0])
        snap = ExchangeSnapshot(k=1, posteriors=preds, predictions=preds,
                                measurement=y)
        L = np.array([[0.5, 0.1], [-0.2, 0.3]])
        for i in range(2):
            assert np.array_equal(dekf_update(i, preds[i], snap, L, nl),
                                  update(i, preds[i], snap, L, lin))

    def test_single_partition_step_matches_hand_assembled_ekf(self):
        # One full instant on the monolithic benchmark against a from-scratch
        # EKF step written inline.
        bm = get_benchmark("reactor-chain-mono")
        subs4 = get_benchmark("reactor-chain").model.subsystems
        traj = simulate(bm.model, bm.x0, 1, bm.noise(seed=5))
        rec = run_dekf(bm.model, bm.design, traj)

        inv = np.linalg.inv
        guess = bm.design.x0_guess
        C0 = linearize(subs4, guess, mode="analytic").C
        P0 = bm.design.P0[0]
        S0 = C0 @ P0 @ C0.T + bm.design.R
        K0 = P0 @ C0.T @ inv(S0)
        x = guess + K0 @ (traj.ys[0] - bm.model.h(guess))
        P = (np.eye(8) - K0 @ C0) @ P0
        A0 = linearize(subs4, x, mode="analytic").A
        x_pred = bm.model.f(x)
        P_pred = A0 @ P @ A0.T + bm.design.Q[0]
        C1 = linearize(subs4, x_pred, mode="analytic").C
        S1 = C1 @ P_pred @ C1.T + bm.design.R
        K1 = P_pred @ C1.T @ inv(S1)
        x1 = x_pred + K1 @ (traj.ys[1] - bm.model.h(x_pred))
        assert np.linalg.norm(rec.xhat_post[1] - x1) <= 1e-9 * (1 + np.linalg.norm(x1))


class TestRunDekf:
    def test_linear_wrapped_model_reproduces_dkf_record(self):
        lin, nl = four_state_models()
        design = EstimatorDesign.from_model(lin, P0=[100.0 * np.eye(2)] * 2,
                                            x0_guess=LINEAR_GUESS)
        traj = simulate(lin, LINEAR_X0, 100, noise_for(lin, 0.05, seed=9))
        rec_lin = run_dkf(lin, design, traj)
        rec_nl = run_dekf(nl, design, traj)
        assert np.array_equal(rec_lin.xhat_post, rec_nl.xhat_post)
        assert np.array_equal(rec_lin.xhat_pred, rec_nl.xhat_pred)
        for k in range(101):
            for i in range(2):
                assert np.array_equal(rec_lin.covs[k][i], rec_nl.covs[k][i])
                assert np.array_equal(rec_lin.gains[k][i], rec_nl.gains[k][i])

    def test_benchmark_error_bounded_after_transient(self, reactor_run):
        bench, traj, rec = reactor_run
        err = np.linalg.norm(rec.xs - rec.xhat_post, axis=1)
        assert err[0] > 20.0          # deliberately poor initial guess
        assert np.all(err[30:] < 3.0)  # bounded once the transient settles
        assert rec.floor_events == 0

    def test_relinearization_points_recorded(self, reactor_run):
        _, _, rec = reactor_run
        # Dynamics blocks are evaluated at posteriors, output blocks at the
        # stacked predictions (the prior guess at instant 0).
        assert np.array_equal(rec.a_points, rec.xhat_post[:-1])
        assert np.array_equal(rec.c_points, rec.xhat_pred)

    def test_zero_noise_exact_prior_tracks_exactly(self, reactor_bench):
        spec = NoiseSpec(w_std=np.zeros(8), v_std=np.zeros(8), seed=0)
        traj = simulate(reactor_bench.model, reactor_bench.x0, 100, spec)
        design = EstimatorDesign(Q=reactor_bench.design.Q, R=reactor_bench.design.R,
                                 P0=reactor_bench.design.P0,
                                 x0_guess=reactor_bench.x0.copy())
        rec = run_dekf(reactor_bench.model, design, traj)
        assert np.max(np.abs(rec.xs - rec.xhat_post)) <= 1e-8

    def test_agent_order_is_irrelevant_bitwise(self, reactor_bench):
        traj = simulate(reactor_bench.model, reactor_bench.x0, 25,
                        reactor_bench.noise(seed=13))
        a = run_dekf(reactor_bench.model, reactor_bench.design, traj,
                     order=[0, 1, 2, 3])
        b = run_dekf(reactor_bench.model, reactor_bench.design, traj,
                     order=[3, 1, 0, 2])
        assert np.array_equal(a.xhat_post, b.xhat_post)
        assert np.array_equal(a.xhat_pred, b.xhat_pred)
        for k in range(26):
            for i in range(4):
                assert np.array_equal(a.covs[k][i], b.covs[k][i])

    def test_fd_mode_close_to_analytic_mode(self, reactor_bench):
        traj = simulate(reactor_bench.model, reactor_bench.x0, 30,
                        reactor_bench.noise(seed=19))
        rec_a = run_dekf(reactor_bench.model, reactor_bench.design, traj,
                         mode="analytic")
        rec_f = run_dekf(reactor_bench.model, reactor_bench.design, traj, mode="fd")
        diff = np.abs(rec_a.xhat_post - rec_f.xhat_post)
        assert np.max(diff / (1.0 + np.abs(rec_f.xhat_post))) <= 1e-4
