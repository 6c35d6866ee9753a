import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, signal

from apexlqg.control import (
    ControllerVariant,
    DiscreteLqg,
    LinearModel,
    LqgWeights,
    SynthesisError,
    ScaledController,
    apex_time_constant,
    build_augmented_model,
    build_error_model,
    care_residual,
    discretize,
    estimator_matrix,
    export_controller,
    kalman_gain,
    load_controller,
    lqr_gain,
    lqr_weights,
    normalize_model,
    project_estimate,
    quantization_report,
    solve_care,
    synthesize,
)

V = ControllerVariant


def kleinman(A, B, Q, R, K0, iters=60):
    """Newton iteration on Lyapunov equations from a stabilizing gain (u = -K x)."""
    K = K0
    for _ in range(iters):
        Ac = A - B @ K
        P = linalg.solve_continuous_lyapunov(Ac.T, -(Q + K.T @ R @ K))
        K = np.linalg.solve(R, B.T @ P)
    return P


def backward_error(A, B, Q, R, P):
    """Riccati residual relative to the size of its terms."""
    S = B @ np.linalg.solve(np.atleast_2d(R), B.T)
    terms = sum(np.linalg.norm(T) for T in (A.T @ P, P @ A, P @ S @ P, Q))
    return care_residual(A, B, Q, R, P) / terms


def random_system(rng, n=4, m=1):
    A = rng.standard_normal((n, n))
    B = rng.standard_normal((n, m))
    M = rng.standard_normal((n, n))
    Q = M @ M.T + 1e-3 * np.eye(n)
    R = np.eye(m) * rng.uniform(0.1, 10)
    return A, B, Q, R


def lyap_kron(A, W):
    """Solve A S + S A^T + W = 0 by vectorization (independent of scipy's solver)."""
    n = A.shape[0]
    I = np.eye(n)
    M = np.kron(I, A) + np.kron(A, I)
    return np.linalg.solve(M, -W.reshape(-1, order="F")).reshape(n, n, order="F")


# Riccati


def test_care_scalar_analytic():
    P = solve_care([[1.0]], [[1.0]], [[1.0]], [[1.0]])
    assert P[0, 0] == pytest.approx(1 + np.sqrt(2), rel=1e-14)


def test_care_zero_weight_on_stable_system():
    A = np.array([[-1.0, 2.0], [0.0, -3.0]])
    P = solve_care(A, np.array([[0.0], [1.0]]), np.zeros((2, 2)), np.eye(1))
    np.testing.assert_allclose(P, 0.0, atol=1e-14)


def test_care_random_systems():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        A, B, Q, R = random_system(rng)
        P = solve_care(A, B, Q, R)
        assert care_residual(A, B, Q, R, P) < 1e-10 * np.linalg.norm(P)
        K = np.linalg.solve(R, B.T @ P)
        assert np.max(np.linalg.eigvals(A - B @ K).real) < 0
        np.testing.assert_allclose(P, P.T, atol=1e-12 * np.linalg.norm(P))
        assert np.min(np.linalg.eigvalsh(P)) > -1e-10 * np.linalg.norm(P)


def test_care_matches_newton_iteration():
    rng = np.random.default_rng(7)
    for _ in range(10):
        A, B, Q, R = random_system(rng)
        K0 = signal.place_poles(A, B, -np.arange(1.0, 5.0) - np.max(np.abs(np.linalg.eigvals(A)))).gain_matrix
        np.testing.assert_allclose(solve_care(A, B, Q, R), kleinman(A, B, Q, R, K0), rtol=1e-8, atol=1e-10)


def test_care_rejects_unstabilizable_pair():
    A = np.diag([1.0, -1.0])
    with pytest.raises(SynthesisError, match="not stabilizable"):
        solve_care(A, np.array([[0.0], [1.0]]), np.eye(2), np.eye(1), names=("apex", "v"))


def test_care_residual_on_plant_weights(cal):
    em = build_error_model(cal)
    Q, R = lqr_weights(cal, LqgWeights(r=3e9, qz=1.0))
    P = solve_care(em.A, em.B, Q, R)
    assert backward_error(em.A, em.B, Q, R, P) < 1e-12


def test_filter_care_residual(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    W = m.G @ m.Qw @ m.G.T
    _, P = kalman_gain(m)
    assert backward_error(m.A.T, m.C.T, W, m.R, P) < 1e-12


# linear models


def test_error_model_blocks(cal):
    em = build_error_model(cal)
    ex = np.linalg.eigvals(em.A[:2, :2])
    ez = np.linalg.eigvals(em.A[2:, 2:])
    assert np.sum(ex.real > 0) == 1
    assert np.all(ez.real < 0)
    ctrb = np.hstack([np.linalg.matrix_power(em.A, i) @ em.B for i in range(4)])
    sv = np.linalg.svd(ctrb / np.linalg.norm(ctrb, axis=0), compute_uv=False)
    assert sv[-1] / sv[0] > 1e-8


def test_augmented_apex_column(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    col = m.A[:, 2]
    assert col[1] == cal.k_over_m
    assert np.count_nonzero(col) == 1


def test_variant_dimensions(cal):
    dims = {V.NON_ADAPTIVE_1D: 2, V.ADAPTIVE_1D: 3, V.ADAPTIVE_2D: 5}
    for v, n in dims.items():
        m = build_augmented_model(cal, v)
        assert m.A.shape == (n, n) and m.C.shape[1] == n
    na = build_augmented_model(cal, V.NON_ADAPTIVE_1D)
    np.testing.assert_array_equal(na.A, [[0.0, 1.0], [-cal.k_over_m, -cal.Gamma]])
    a1 = build_augmented_model(cal, V.ADAPTIVE_1D)
    assert a1.C.shape == (1, 3)


def obsv_rank(A, C):
    O = np.vstack([C @ np.linalg.matrix_power(A, i) for i in range(A.shape[0])])
    sv = np.linalg.svd(O / np.linalg.norm(O, axis=1, keepdims=True), compute_uv=False)
    return int(np.sum(sv > 1e-10 * sv[0]))


def test_observability(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    # scale states to comparable magnitudes before the rank test
    D = np.diag([1e-8, 1e-3, 1e-8, 1e-8, 1e-3])
    assert obsv_rank(np.linalg.solve(D, m.A @ D), m.C @ D) == 5


def test_apex_unobservable_without_curvature(cal):
    flat = replace(cal, k_over_m=-1e-300)
    m = build_augmented_model(flat, V.ADAPTIVE_1D)
    m = LinearModel(m.A * (np.abs(m.A) > 1e-200), m.B, m.G, m.Qw, m.C, m.R, m.names)
    with pytest.raises(SynthesisError, match="apex"):
        kalman_gain(m)


# LQR


def test_lqr_zero_z_weight_decouples(cal):
    k = lqr_gain(cal, LqgWeights(r=3e9, qz=0.0), states=4)
    assert np.all(k[2:] == 0.0) or np.max(np.abs(k[2:])) < 1e-12 * np.max(np.abs(k[:2]))


def test_lqr_x_block_matches_isolated_subsystem(cal):
    k4 = lqr_gain(cal, LqgWeights(r=3e9, qz=0.0), states=4)
    k2 = lqr_gain(cal, LqgWeights(r=3e9, qz=0.0), states=2)
    np.testing.assert_allclose(k4[:2], k2, rtol=1e-9)


def test_lqr_gain_shrinks_with_input_weight(cal):
    k1 = lqr_gain(cal, LqgWeights(r=3e9, qz=1.0))
    k2 = lqr_gain(cal, LqgWeights(r=3e11, qz=1.0))
    assert np.linalg.norm(k2) < np.linalg.norm(k1)


def test_lqr_closed_loop_stable(cal):
    em = build_error_model(cal)
    k = lqr_gain(cal, LqgWeights(r=3e9, qz=1.0))
    assert np.max(np.linalg.eigvals(em.A + em.B @ k[None, :]).real) < 0


# Kalman filter


def test_kalman_estimator_hurwitz(cal):
    for v in V:
        m = build_augmented_model(cal, v)
        L, _ = kalman_gain(m)
        assert np.max(np.linalg.eigvals(m.A - L @ m.C).real) < 0


def test_uninformative_channel_gets_no_gain(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    L_ref, _ = kalman_gain(m)
    # the z channel observes only stable states, so its gain must vanish
    noisy = LinearModel(m.A, m.B, m.G, m.Qw, m.C, np.diag([m.R[0, 0], m.R[1, 1] * 1e12]), m.names)
    L, _ = kalman_gain(noisy)
    nz = np.abs(L_ref[:, 1]) > 0
    assert np.max(np.abs(L[nz, 1]) / np.abs(L_ref[nz, 1])) < 1e-4


def test_filter_lqr_duality(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_1D)
    W = m.G @ m.Qw @ m.G.T
    L, _ = kalman_gain(m)
    P = solve_care(m.A.T, m.C.T, W, m.R)
    K_dual = np.linalg.solve(m.R, m.C @ P)
    np.testing.assert_allclose(L, K_dual.T, rtol=1e-9)


def test_apex_time_constant_default(default_scenario):
    for v in (V.ADAPTIVE_1D, V.ADAPTIVE_2D):
        tau = apex_time_constant(default_scenario.design(v.value))
        assert 0.3e-3 <= tau <= 0.9e-3
    assert apex_time_constant(default_scenario.design(V.NON_ADAPTIVE_1D.value)) is None


# discretization


def test_discretize_integrator():
    m = LinearModel(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2), ("a", "b"))
    d = discretize(m, 0.25)
    np.testing.assert_allclose(d.Ad, np.eye(2), atol=0)
    np.testing.assert_allclose(d.Bd, 0.25 * np.eye(2), rtol=1e-15)
    np.testing.assert_allclose(d.Rd, np.eye(2) / 0.25)


def test_discretize_oscillator_closed_form():
    w, dt = 2 * np.pi * 46e3, 32e-9
    A = np.array([[0.0, 1.0], [-(w**2), 0.0]])
    m = LinearModel(A, np.array([[0.0], [1.0]]), np.array([[0.0], [1.0]]), np.eye(1), np.eye(2), np.eye(2), ("z", "v"))
    d = discretize(m, dt)
    c, s = np.cos(w * dt), np.sin(w * dt)
    np.testing.assert_allclose(d.Ad, [[c, s / w], [-w * s, c]], rtol=1e-12, atol=1e-12 * w)
    np.testing.assert_allclose(d.Bd.ravel(), [(1 - c) / w**2, s / w], rtol=1e-9)


def test_discretize_fine_step_product(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    dt, n = 32e-9, 1000
    d = discretize(m, dt)
    E = np.linalg.matrix_power(np.eye(5) + m.A * dt / n, n)
    rel = np.abs(d.Ad - E) / np.abs(d.Ad).max(axis=1, keepdims=True)
    assert rel.max() < 1e-6


def test_process_noise_first_order(cal):
    m = build_augmented_model(cal, V.ADAPTIVE_2D)
    dt = 32e-9
    d = discretize(m, dt)
    W = m.G @ m.Qw @ m.G.T
    np.testing.assert_allclose(d.Qd, d.Qd.T, rtol=0, atol=0)
    assert np.min(np.linalg.eigvalsh(d.Qd / np.abs(d.Qd).max())) > -1e-12
    for i in (1, 2, 4):
        assert d.Qd[i, i] == pytest.approx(W[i, i] * dt, rel=1e-3)


def test_discretize_rejects_bad_step():
    m = LinearModel(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)),
                    np.ones((1, 1)), ("a",))
    with pytest.raises(ValueError):
        discretize(m, 0.0)


# projection


def test_projection_example():
    v = project_estimate(np.array([1.0, 2.0, 0.15, 3.0]), 2, 0.1)
    np.testing.assert_array_equal(v, [1.0, 2.0, 0.1, 3.0])
    np.testing.assert_array_equal(project_estimate(np.array([0.0, -0.3]), 1, 0.1), [0.0, -0.1])
    np.testing.assert_array_equal(project_estimate(np.array([5.0]), -1, 0.1), [5.0])


def test_projection_non_expansive_random_pairs():
    rng = np.random.default_rng(11)
    a = rng.normal(0, 0.2, size=(10_000, 5))
    b = rng.normal(0, 0.2, size=(10_000, 5))
    # boundary cases: points exactly on and straddling the box faces
    a[:100, 2] = 0.1
    b[:100, 2] = -0.1
    b[100:200, 2] = a[100:200, 2]
    pa, pb = project_estimate(a, 2, 0.1), project_estimate(b, 2, 0.1)
    assert np.all(np.linalg.norm(pa - pb, axis=1) <= np.linalg.norm(a - b, axis=1) + 1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(0.0, 0.5))
def test_projection_non_expansive_property(a, b, amax):
    a, b = np.array(a), np.array(b)
    pa, pb = project_estimate(a, 1, amax), project_estimate(b, 1, amax)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-15
    assert abs(pa[1]) <= amax


def test_projection_is_nearest_feasible_point():
    rng = np.random.default_rng(5)
    grid = np.linspace(-0.1, 0.1, 20001)
    for _ in range(200):
        v = rng.normal(0, 0.2, size=3)
        p = project_estimate(v, 0, 0.1)
        best = grid[np.argmin((grid - v[0]) ** 2)]
        assert abs(p[0] - best) <= 1e-5
        np.testing.assert_array_equal(p[1:], v[1:])


def test_controller_projects_apex(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_1D.value)
    for _ in range(2000):
        c.step([1.0, 0.0])
    assert abs(c.xhat[c.apex_idx]) == pytest.approx(c.apex_max, rel=1e-15)


# separation


def linear_loop(c, gain_scale, n=400, seed=0):
    """Linear plant equal to the controller model; returns estimation errors."""
    rng = np.random.default_rng(seed)
    Ad, Bd, C, L = c.Ad, c.Bd, c.C, c.L
    x = np.zeros(c.n)
    xh = np.zeros(c.n)
    u = 0.0
    errs = []
    scale = np.sqrt(np.abs(np.diag(Ad)))
    for _ in range(n):
        x = Ad @ x + Bd * u + 1e-9 * scale * rng.standard_normal(c.n)
        y = C @ x + 1e-3 * rng.standard_normal(C.shape[0])
        xp = Ad @ xh + Bd * u
        xh = xp + L @ (y - C @ xp)
        errs.append(x - xh)
        u = gain_scale * float(c.kaug @ xh)
    return np.array(errs)


def test_separation_error_independent_of_gain(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    e1 = linear_loop(c, 1.0)
    e0 = linear_loop(c, 0.0)
    np.testing.assert_allclose(e1, e0, rtol=0, atol=1e-10 * np.abs(e0).max())


def test_separation_cost_trace_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A, B, Q, R = random_system(rng)
        C = rng.standard_normal((2, 4))
        M = rng.standard_normal((4, 4))
        W = M @ M.T + 1e-2 * np.eye(4)
        Vn = np.diag(rng.uniform(0.1, 2.0, 2))
        Pc = solve_care(A, B, Q, R)
        Pf = solve_care(A.T, C.T, W, Vn)
        K = np.linalg.solve(R, B.T @ Pc)
        L = Pf @ C.T @ np.linalg.inv(Vn)
        j1 = np.trace(Pc @ W) + np.trace(Pf @ K.T @ R @ K)
        j2 = np.trace(Q @ Pf) + np.trace(Pc @ L @ Vn @ L.T)
        # direct stationary cost of the closed loop in (x, e) coordinates
        Acl = np.block([[A - B @ K, B @ K], [np.zeros((4, 4)), A - L @ C]])
        Wcl = np.block([[W, W], [W, W + L @ Vn @ L.T]])
        S = lyap_kron(Acl, Wcl)
        Sx, Sxe, Se = S[:4, :4], S[:4, 4:], S[4:, 4:]
        Su = K @ (Sx - Sxe - Sxe.T + Se) @ K.T
        j3 = np.trace(Q @ Sx) + np.trace(R @ Su)
        assert j1 == pytest.approx(j2, rel=1e-10)
        assert j1 == pytest.approx(j3, rel=1e-8)


# controller stepping


def test_estimator_converges_noise_free(default_scenario):
    c = replace(default_scenario.design(V.ADAPTIVE_2D.value), delay_samples=0)
    x = np.array([30e-9, 0.0, 10e-9, 50e-9, 0.0])
    u = 0.0
    err0 = None
    for i in range(250_000):
        x = c.Ad @ x + c.Bd * u
        chi = np.zeros(2)
        chi[c.ysel] = c.C @ x
        u = c.step(chi)
        if i == 0:
            err0 = np.abs(c.xhat - x) / np.array([1e-9, 1e-3, 1e-9, 1e-9, 1e-3])
    err = np.abs(c.xhat - x) / np.array([1e-9, 1e-3, 1e-9, 1e-9, 1e-3])
    assert np.max(err) < 1e-6 * np.max(err0)


def test_non_adaptive_static_force_on_slope(default_scenario, cal):
    """Noise-free NonAdaptive loop around a shifted apex settles to a nonzero command."""
    c = replace(default_scenario.design(V.NON_ADAPTIVE_1D.value), delay_samples=0)
    delta = 20e-9
    # exact sampled plant with the apex at delta: x_ddot = km (x - delta) + b u
    km = -cal.k_over_m
    Ac = np.array([[0.0, 1.0, 0.0, 0.0], [km, -cal.Gamma, cal.cfx / cal.m, -km], [0.0] * 4, [0.0] * 4])
    E = linalg.expm(Ac * c.dt)
    Phi, Gu, Gd = E[:2, :2], E[:2, 2], E[:2, 3]
    # joint fixed point of plant (x), estimate (xh) and command u
    n = 2
    M = np.zeros((5, 5))
    rhs = np.zeros(5)
    # x = Phi x + Gu u + Gd delta
    M[:2, :2] = np.eye(2) - Phi
    M[:2, 4] = -Gu
    rhs[:2] = Gd * delta
    # xh = (I - L C) (Ad xh + Bd u) + L C x
    ILC = np.eye(n) - c.L @ c.C
    M[2:4, 2:4] = np.eye(2) - ILC @ c.Ad
    M[2:4, 4] = -ILC @ c.Bd
    M[2:4, :2] = -c.L @ c.C
    # u = kaug xh
    M[4, 2:4] = -c.kaug
    M[4, 4] = 1.0
    sol = np.linalg.solve(M, rhs)
    u_star = sol[4]
    # simulate the sampled loop
    x = np.zeros(2)
    u = 0.0
    for _ in range(200_000):
        x = Phi @ x + Gu * u + Gd * delta
        u = c.step([c.C[0] @ x, 0.0])
    assert u == pytest.approx(u_star, rel=1e-6)
    assert abs(u_star) > 0
    # the static command balances the slope force at the settled position
    assert cal.cfx * u_star == pytest.approx(-cal.m * km * (sol[0] - delta), rel=1e-9)


def test_nonfinite_measurement_holds_input(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    for _ in range(50):
        c.step([0.01, 0.0])
    xh = c.xhat.copy()
    u = c.u_applied[0]
    assert c.step([np.nan, 0.0]) == u
    np.testing.assert_array_equal(c.xhat, xh)
    assert c.faults == 1


def test_delay_buffer(default_scenario):
    c = default_scenario.design(V.NON_ADAPTIVE_1D.value)
    d = c.delay_samples
    assert d == 13
    outs = [c.step([1e-3 if i == 0 else 0.0, 0.0]) for i in range(d + 3)]
    assert all(o == 0.0 for o in outs[:d])
    assert outs[d] != 0.0


def test_spectral_radius_below_one(default_scenario):
    for v in V:
        c = default_scenario.design(v.value)
        assert c.spectral_radius() < 1.0
        assert np.max(np.abs(np.linalg.eigvals(estimator_matrix(c)))) < 1.0


def test_unstable_sampled_design_is_rejected(default_scenario):
    sc = default_scenario.updated(controller=replace(default_scenario.controller, r_lqr=1e3))
    with pytest.raises(SynthesisError):
        sc.design()


# normalization and artifacts


def test_normalized_controller_equivalent(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    s = ScaledController(normalize_model(c, default_scenario.calibrated_model()))
    rng = np.random.default_rng(1)
    ys = rng.normal(0, 0.05, size=(1000, 2))
    c.reset()
    s.reset()
    a = np.array([c.step(y) for y in ys])
    b = np.array([s.step(y) for y in ys])
    rms = np.sqrt(np.mean(a**2))
    assert np.max(np.abs(a - b)) < 1e-9 * rms


def test_normalized_position_unit_std(default_scenario, cal):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    sc = normalize_model(c, cal)
    em = build_error_model(cal)
    Acl = em.A + em.B @ c.k[None, :]
    S = lyap_kron(Acl, em.G @ em.Qw @ em.G.T)
    # the scaled position has unit stationary std
    assert np.sqrt(S[0, 0]) / sc.scaling.state[0] == pytest.approx(1.0, rel=1e-6, abs=0)


def test_identity_scaling_is_transparent(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_1D.value)
    c2 = replace(c)
    rng = np.random.default_rng(2)
    ys = rng.normal(0, 0.05, size=(200, 2))
    np.testing.assert_array_equal([c.step(y) for y in ys], [c2.step(y) for y in ys])


def test_quantization_report_shrinks_with_bits(default_scenario):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    lo, hi = quantization_report(c, 12), quantization_report(c, 24)
    for k in lo:
        assert hi[k] <= lo[k]
        assert hi[k] <= 2.0**-23


def test_controller_artifact_round_trip(default_scenario, tmp_path):
    c = default_scenario.design(V.ADAPTIVE_2D.value)
    p = tmp_path / "ctrl.json"
    export_controller(c, p)
    d = load_controller(p)
    for name in ("Ad", "Bd", "L", "C", "k", "kaug"):
        np.testing.assert_array_equal(getattr(c, name), getattr(d, name))
    assert (d.apex_max, d.delay_samples, d.variant) == (c.apex_max, c.delay_samples, c.variant)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="version"):
        load_controller(p)


def test_synthesize_variants_shapes(cal):
    for v, n in ((V.NON_ADAPTIVE_1D, 2), (V.ADAPTIVE_1D, 3), (V.ADAPTIVE_2D, 5)):
        c = synthesize(cal, v, LqgWeights(r=3e9, qz=1.0), 32e-9, 13, 37e-9)
        assert isinstance(c, DiscreteLqg)
        assert c.n == n and c.kaug.size == n
        if v is not V.NON_ADAPTIVE_1D:
            assert c.kaug[2] == -c.kaug[0]
