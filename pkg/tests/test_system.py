"""Plant, Kalman predictor, and LQR synthesis tests.

Independent oracles: scipy's discrete Riccati solver for LQR, and a
brute-force joint-Gaussian Bayesian update for the predictor recursion.
"""

import numpy as np
import pytest
import scipy.linalg

from safeloop import (
    ConfigurationError,
    FilterSchedule,
    LinearSystem,
    NominalController,
    build_filter_schedule,
    dynamics_step,
    kalman_gain,
    lqr_value_matrix,
    measure,
    predictor_update,
    riccati_step,
    solve_dlqr,
)

HALFPLANE_A = np.array([[1.0, 0.05], [0.0, 1.0]])
HALFPLANE_B = np.array([[0.0125], [0.05]])
HALFPLANE_Q = np.array([[7.66e-5, 3.06e-3], [3.06e-3, 1.23e-1]])


def _scalar_sys(a=1.0, b=0.0, c=1.0, q=1.0, r=1.0) -> LinearSystem:
    return LinearSystem(
        A_sched=[[a]], B_sched=[[b]], C_sched=[[c]], Q_sched=[[q]], R_sched=[[r]]
    )


class TestDynamicsAndMeasure:
    def test_identity_dynamics(self):
        sys = LinearSystem(np.eye(2), np.zeros((2, 1)), [[0.0, 1.0]],
                           np.eye(2), [[1.0]])
        out = dynamics_step(sys, 0, [1.0, 2.0], [3.0], [0.0, 0.0])
        np.testing.assert_allclose(out, [1.0, 2.0])

    def test_halfplane_step(self):
        sys = LinearSystem(HALFPLANE_A, HALFPLANE_B, [[0.0, 1.0]],
                           HALFPLANE_Q, [[0.09]])
        out = dynamics_step(sys, 0, [7.0, 0.0], [-105.0], [0.0, 0.0])
        np.testing.assert_allclose(out, [5.6875, -5.25], atol=1e-12)

    def test_pure_noise(self):
        sys = LinearSystem(np.zeros((2, 2)), np.zeros((2, 1)), [[0.0, 1.0]],
                           np.eye(2), [[1.0]])
        out = dynamics_step(sys, 0, [0.0, 0.0], [0.0], [0.1, -0.2])
        np.testing.assert_allclose(out, [0.1, -0.2])

    def test_dimension_mismatch(self):
        sys = _scalar_sys()
        with pytest.raises(ConfigurationError):
            dynamics_step(sys, 0, [1.0, 2.0], [0.0], [0.0])

    def test_measure_examples(self):
        sys = LinearSystem(np.eye(2), np.zeros((2, 1)), [[0.0, 1.0]],
                           np.eye(2), [[1.0]])
        assert measure(sys, 0, [7.0, 3.0], [0.0]) == pytest.approx(3.0)
        assert measure(sys, 0, [7.0, 3.0], [0.5]) == pytest.approx(3.5)
        pend = LinearSystem(np.eye(2), np.zeros((2, 1)), [[1.0, 0.0]],
                            np.eye(2), [[1.0]])
        assert measure(pend, 0, [0.1, -0.2], [-0.01]) == pytest.approx(0.09)

    def test_measure_dimension_mismatch(self):
        sys = _scalar_sys()
        with pytest.raises(ConfigurationError):
            measure(sys, 0, [1.0], [0.0, 0.0])


class TestLinearSystemValidation:
    def test_r_must_be_positive_definite(self):
        with pytest.raises(ConfigurationError):
            LinearSystem([[1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]])

    def test_q_must_be_psd(self):
        with pytest.raises(ConfigurationError):
            LinearSystem([[1.0]], [[1.0]], [[1.0]], [[-1.0]], [[1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            LinearSystem(np.eye(2), np.zeros((2, 1)), [[1.0, 0.0]],
                         np.eye(3), [[1.0]])

    def test_constant_broadcast(self):
        sys = LinearSystem(HALFPLANE_A, HALFPLANE_B, [[0.0, 1.0]],
                           HALFPLANE_Q, [[0.09]])
        np.testing.assert_array_equal(sys.A(0), sys.A(57))

    def test_per_step_schedule(self):
        A_sched = np.stack([np.eye(2) * (1 + 0.1 * k) for k in range(5)])
        sys = LinearSystem(A_sched, np.zeros((2, 1)), [[0.0, 1.0]],
                           np.eye(2), [[1.0]])
        np.testing.assert_allclose(sys.A(3), np.eye(2) * 1.3)


class TestRiccatiStep:
    def test_no_uncertainty_stays_none(self):
        out = riccati_step(0.0, 1.0, 1.0, 0.0, 1.0)
        np.testing.assert_allclose(out, [[0.0]], atol=1e-15)

    def test_scalar_example(self):
        # 1 + 1 - 1/(1+1) = 1.5
        out = riccati_step(1.0, 1.0, 1.0, 1.0, 1.0)
        np.testing.assert_allclose(out, [[1.5]], atol=1e-14)

    def test_no_measurement_open_loop(self):
        out = riccati_step(1.0, 1.0, 0.0, 0.5, 1.0)
        np.testing.assert_allclose(out, [[1.5]], atol=1e-14)

    def test_psd_preserved_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = rng.integers(1, 5)
            n_y = rng.integers(1, 4)
            L = rng.standard_normal((n, n))
            P = L @ L.T
            A = rng.standard_normal((n, n))
            C = rng.standard_normal((n_y, n))
            Lq = rng.standard_normal((n, n))
            Q = Lq @ Lq.T
            R = np.diag(rng.uniform(0.1, 2.0, n_y))
            out = riccati_step(P, A, C, Q, R)
            assert np.abs(out - out.T).max() < 1e-12
            assert np.linalg.eigvalsh(out).min() > -1e-9

    def test_singular_innovation_rejected(self):
        from safeloop import NumericError

        with pytest.raises(NumericError):
            riccati_step(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2),
                         np.diag([1.0, 1e-30]))


class TestKalmanGain:
    def test_scalar_example(self):
        np.testing.assert_allclose(kalman_gain(1.0, 1.0, 1.0, 1.0), [[0.5]])

    def test_zero_covariance_zero_gain(self):
        np.testing.assert_allclose(kalman_gain(0.0, 2.0, 3.0, 1.0), [[0.0]])

    def test_zero_c_zero_gain(self):
        np.testing.assert_allclose(kalman_gain(1.0, 2.0, 0.0, 1.0), [[0.0]])

    def test_consistency_with_dense_solve(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            n, n_y = rng.integers(1, 5), rng.integers(1, 4)
            L = rng.standard_normal((n, n))
            P = L @ L.T
            A = rng.standard_normal((n, n))
            C = rng.standard_normal((n_y, n))
            R = np.diag(rng.uniform(0.1, 2.0, n_y))
            K = kalman_gain(P, A, C, R)
            S = C @ P @ C.T + R
            expected = np.linalg.solve(S.T, (A @ P @ C.T).T).T
            assert np.abs(K - expected).max() < 1e-10


class TestPredictorUpdate:
    def _sched_with_gain(self, k_val: float) -> FilterSchedule:
        return FilterSchedule(P=np.ones((2, 1, 1)), K=np.full((1, 1, 1), k_val))

    def test_zero_gain_open_loop(self):
        sys = _scalar_sys(a=2.0, b=1.0)
        sched = self._sched_with_gain(0.0)
        out = predictor_update([3.0], [4.0], [100.0], 0, sys, sched)
        np.testing.assert_allclose(out, [10.0])

    def test_zero_innovation(self):
        sys = _scalar_sys(a=2.0, b=1.0)
        sched = self._sched_with_gain(0.7)
        xhat = np.array([3.0])
        out = predictor_update(xhat, [4.0], [3.0], 0, sys, sched)  # y = C xhat
        np.testing.assert_allclose(out, [10.0])

    def test_scalar_example(self):
        sys = _scalar_sys(a=1.0, b=0.0)
        sched = self._sched_with_gain(0.5)
        out = predictor_update([0.0], [0.0], [2.0], 0, sys, sched)
        np.testing.assert_allclose(out, [1.0])

    def test_step_beyond_schedule(self):
        sys = _scalar_sys()
        sched = self._sched_with_gain(0.5)
        with pytest.raises(ConfigurationError):
            predictor_update([0.0], [0.0], [1.0], 1, sys, sched)


class TestBuildFilterSchedule:
    def test_zero_horizon(self):
        sys = _scalar_sys()
        sched = build_filter_schedule(sys, [[2.0]], 0)
        assert sched.P.shape == (1, 1, 1)
        assert sched.K.shape == (0, 1, 1)
        np.testing.assert_allclose(sched.P[0], [[2.0]])

    def test_scalar_chain(self):
        sys = _scalar_sys()
        sched = build_filter_schedule(sys, [[1.0]], 2)
        np.testing.assert_allclose(sched.P[:, 0, 0], [1.0, 1.5, 1.6], atol=1e-12)
        np.testing.assert_allclose(sched.K[:, 0, 0], [0.5, 0.6], atol=1e-12)

    def test_halfplane_first_step_matches_one_riccati_step(self):
        sys = LinearSystem(HALFPLANE_A, HALFPLANE_B, [[0.0, 1.0]],
                           HALFPLANE_Q, [[0.09]])
        sched = build_filter_schedule(sys, HALFPLANE_Q, 1)
        expected = riccati_step(HALFPLANE_Q, HALFPLANE_A, [[0.0, 1.0]],
                                HALFPLANE_Q, [[0.09]])
        np.testing.assert_allclose(sched.P[1], expected, atol=1e-14)

    def test_estimator_matches_batch_bayesian_posterior(self):
        # The predictor estimate xhat_k = E[x_k | y_{0:k-1}] must equal the
        # mean of the exact joint-Gaussian posterior, computed independently
        # by conditioning the full (x_{0:5}, y_{0:4}) Gaussian on y_{0:4}.
        rng = np.random.default_rng(3)
        a, b, c = 0.9, 0.5, 1.3
        q, r, p0, m0 = 0.4, 0.3, 0.8, 2.0
        T = 5
        sys = _scalar_sys(a=a, b=b, c=c, q=q, r=r)
        sched = build_filter_schedule(sys, [[p0]], T)
        u_seq = rng.standard_normal(T)

        # run the recursion on one random y realization
        x = m0 + rng.standard_normal() * np.sqrt(p0)
        xhat = np.array([m0])
        y_seq = []
        for k in range(T):
            y = c * x + rng.standard_normal() * np.sqrt(r)
            y_seq.append(y)
            xhat = predictor_update(xhat, [u_seq[k]], [y], k, sys, sched)
            x = a * x + b * u_seq[k] + rng.standard_normal() * np.sqrt(q)

        # oracle: joint Gaussian of (x_T, y_0..y_{T-1}) as linear images of
        # the independent latents (x_0, w_0..w_{T-1}, v_0..v_{T-1})
        n_lat = 1 + 2 * T
        cov_lat = np.diag([p0] + [q] * T + [r] * T)
        mean_lat = np.zeros(n_lat)
        mean_lat[0] = m0
        # x_k = a^k x_0 + sum_j a^{k-1-j} (b u_j + w_j)
        rows_x = np.zeros((T + 1, n_lat))
        det_x = np.zeros(T + 1)
        rows_x[0, 0] = 1.0
        for k in range(T):
            rows_x[k + 1] = a * rows_x[k]
            rows_x[k + 1, 1 + k] += 1.0
            det_x[k + 1] = a * det_x[k] + b * u_seq[k]
        rows_y = c * rows_x[:T]
        for k in range(T):
            rows_y[k, 1 + T + k] += 1.0
        det_y = c * det_x[:T]
        lin = np.vstack([rows_x[T], rows_y])
        mean = lin @ mean_lat + np.concatenate([[det_x[T]], det_y])
        cov = lin @ cov_lat @ lin.T
        cov_xy = cov[0, 1:]
        cov_yy = cov[1:, 1:]
        posterior = mean[0] + cov_xy @ np.linalg.solve(
            cov_yy, np.array(y_seq) - mean[1:]
        )
        assert abs(xhat[0] - posterior) < 1e-8


class TestSolveDlqr:
    def test_deadbeat_plant(self):
        K = solve_dlqr([[0.0]], [[1.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(K, [[0.0]], atol=1e-12)

    def test_uncontrolled_stable_plant(self):
        K = solve_dlqr([[0.5]], [[0.0]], [[1.0]], [[1.0]])
        np.testing.assert_allclose(K, [[0.0]], atol=1e-12)

    def test_scalar_golden_ratio(self):
        # P solves P^2 - P - 1 = 0 -> P = (1+sqrt(5))/2, K = P/(1+P)
        K = solve_dlqr([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        phi = (1.0 + np.sqrt(5.0)) / 2.0
        np.testing.assert_allclose(K, [[phi / (1.0 + phi)]], atol=1e-9)

    def test_matches_scipy_dare(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n, m = rng.integers(1, 4), rng.integers(1, 3)
            A = rng.standard_normal((n, n)) * 0.9
            B = rng.standard_normal((n, m))
            Lq = rng.standard_normal((n, n))
            Q = Lq @ Lq.T + 0.1 * np.eye(n)
            R = np.diag(rng.uniform(0.1, 2.0, m))
            P = scipy.linalg.solve_discrete_are(A, B, Q, R)
            K_ref = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
            K = solve_dlqr(A, B, Q, R)
            assert np.abs(K - K_ref).max() < 1e-7

    def test_gain_is_fixed_point(self):
        A = np.array([[1.0, 0.05], [0.0, 1.0]])
        B = np.array([[0.0125], [0.05]])
        Q = np.diag([1.0, 0.5])
        R = np.array([[0.1]])
        K = solve_dlqr(A, B, Q, R)
        P = lqr_value_matrix(A, B, Q, R, K)
        K_again = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        assert np.abs(K - K_again).max() < 1e-8

    def test_closed_loop_stable(self):
        A = np.array([[1.0, 0.05], [0.05, 1.0]])
        B = np.array([[0.0], [0.05]])
        K = solve_dlqr(A, B, np.diag([12.0, 1.0]), [[0.2]])
        rho = np.abs(np.linalg.eigvals(A - B @ K)).max()
        assert rho < 1.0


class TestNominalController:
    def test_static_gain(self):
        ctrl = NominalController(K_fb=[[15.0, 5.0]], target=[0.0, 0.0])
        np.testing.assert_allclose(ctrl([7.0, 0.0]), [-105.0])

    def test_target_offset(self):
        ctrl = NominalController(K_fb=[[2.0]], target=[1.0], offset=[0.5])
        np.testing.assert_allclose(ctrl([3.0]), [-4.0 + 0.5])

    def test_from_lqr_resolves_to_static_gain(self):
        A, B = [[1.0, 0.1], [0.0, 1.0]], [[0.0], [0.1]]
        ctrl = NominalController.from_lqr(A, B, np.eye(2), [[1.0]], [0.0, 0.0])
        expected = -solve_dlqr(A, B, np.eye(2), [[1.0]]) @ np.array([2.0, 1.0])
        np.testing.assert_allclose(ctrl([2.0, 1.0]), expected)
