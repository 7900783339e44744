import math

import numpy as np
import pytest

from qubit_observer.model_builder import (AugmentedModel, ObserverSpec,
                                          build_augmented, steady_state_mean)
from qubit_observer.sde_engine import (MeasurementRecord, SimConfig,
                                       ensemble_mean_cov, exact_lti_step,
                                       sample_initial, simulate_paths,
                                       time_grid, two_point_law,
                                       write_paths_csv)
from qubit_observer.spin_algebra import PlantSpec

MIXED = PlantSpec(r_p=np.zeros(3), c_p=[1.0, 0.0, 0.0], rho_p=np.eye(2) / 2)
PINNED = PlantSpec(r_p=np.zeros(3), c_p=[1.0, 0.0, 0.0],
                   rho_p=0.5 * np.array([[1.0, 1.0], [1.0, 1.0]]))  # z_p = +1 surely
OBS = ObserverSpec(omega_o=1.0, kappa=4.0, beta=np.array([1.0, 0.0]))


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0, t_final=1.0, n_paths=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_final=0.05, n_paths=1, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=1e-9, t_final=1e3, n_paths=1, seed=0)  # step guard
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_final=1.0, n_paths=0, seed=0)
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_final=1.0, n_paths=1, seed=0, scheme="heun")
    with pytest.raises(ValueError):
        SimConfig(dt=0.1, t_final=1.0, n_paths=1, seed=0, record_noise="independent")


def test_exact_lti_step_trivial():
    transition, drift, cov = exact_lti_step(np.zeros((2, 2)), np.eye(2), 0.25)
    np.testing.assert_allclose(transition, np.eye(2), atol=1e-14)
    np.testing.assert_array_equal(drift, np.zeros(2))
    np.testing.assert_allclose(cov, 0.25 * np.eye(2), atol=1e-14)


def test_exact_lti_step_scalar_decay():
    transition, _, _ = exact_lti_step(-2.0 * np.eye(2), np.zeros((2, 2)), 0.1)
    np.testing.assert_allclose(transition, math.exp(-0.2) * np.eye(2), atol=1e-14)


def test_exact_lti_step_covariance_against_quadrature():
    """Noise covariance vs Simpson quadrature of exp(As) B B^T exp(A^T s)."""
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 2))
    dt = 0.3
    _, _, cov = exact_lti_step(a, b, dt)
    from scipy.linalg import expm
    n_quad = 2000
    s_grid = np.linspace(0.0, dt, n_quad + 1)
    vals = np.array([expm(a * s) @ b @ b.T @ expm(a.T * s) for s in s_grid])
    weights = np.ones(n_quad + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    quad = (dt / n_quad / 3.0) * np.einsum("k,kij->ij", weights, vals)
    np.testing.assert_allclose(cov, quad, atol=1e-9)


def test_exact_affine_drift():
    a = np.array([[-1.0, 0.0], [0.0, -2.0]])
    u = np.array([3.0, 4.0])
    _, drift, _ = exact_lti_step(a, np.zeros((2, 2)), 0.5, u=u)
    expected = np.array([3.0 * (1 - math.exp(-0.5)) / 1.0, 4.0 * (1 - math.exp(-1.0)) / 2.0])
    np.testing.assert_allclose(drift, expected, atol=1e-13)


def test_em_and_exact_means_converge_first_order():
    """Euler mean recursion approaches the exact one at O(dt)."""
    model = build_augmented(PINNED, OBS)
    a_oo = model.A[1:, 1:]
    forcing = model.A[1:, 0]
    errs = []
    for dt in (0.02, 0.01, 0.005):
        n = int(round(2.0 / dt))
        transition, drift, _ = exact_lti_step(a_oo, model.B[1:, :], dt, u=forcing)
        m_exact = np.zeros(2)
        m_euler = np.zeros(2)
        for _ in range(n):
            m_exact = transition @ m_exact + drift
            m_euler = m_euler + (a_oo @ m_euler + forcing) * dt
        errs.append(np.linalg.norm(m_euler - m_exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(ratios > 1.7) and np.all(ratios < 2.3)


def test_two_point_law():
    support, p_plus = two_point_law(0.0, 1.0)
    assert support == 1.0 and p_plus == 0.5
    support, p_plus = two_point_law(1.0, 0.0)
    assert support == 1.0 and p_plus == 1.0
    support, p_plus = two_point_law(0.0, 0.0)
    assert support == 0.0
    with pytest.raises(ValueError):
        two_point_law(0.0, -1e-6)


def test_sample_initial_deterministic_case():
    plant = PlantSpec(r_p=np.zeros(3), c_p=[0.0, 0.0, 1.0], rho_p=np.diag([1.0, 0.0]))
    rng = np.random.default_rng(0)
    for _ in range(50):
        z_p, _ = sample_initial(plant, OBS, rng)
        assert z_p == 1.0


def test_sample_initial_reproduces_moments():
    """Empirical mean/variance of 1e5 draws within 4 standard errors."""
    rng = np.random.default_rng(99)
    n = 100_000
    draws = np.array([sample_initial(MIXED, OBS, rng)[0] for _ in range(n)])
    se_mean = 1.0 / math.sqrt(n)
    assert abs(draws.mean() - 0.0) < 4 * se_mean
    se_var = math.sqrt(2.0 / n)
    assert abs(draws.var() - 1.0) < 4 * se_var
    assert set(np.unique(draws)) == {-1.0, 1.0}


def test_paths_z_p_on_spectrum_and_constant():
    model = build_augmented(MIXED, OBS)
    config = SimConfig(dt=0.05, t_final=1.0, n_paths=64, seed=5)
    for traj, record in simulate_paths(model, config):
        assert traj.z_p_true in (-1.0, 1.0)
        assert record.z_p_true == traj.z_p_true
        assert record.dz.shape == (config.n_steps,)
        assert traj.x_o_path.shape == (config.n_steps + 1, 2)


def test_zero_input_model_keeps_zero_mean():
    """Degenerate z_p = 0 and x_o(0) = 0: the ensemble mean stays at zero."""
    model = build_augmented(MIXED, OBS)
    degenerate = AugmentedModel(A=model.A, B=model.B, C=model.C, D=model.D,
                                x0_mean=np.zeros(3), sigma0=np.zeros((3, 3)))
    config = SimConfig(dt=0.05, t_final=3.0, n_paths=400, seed=21)
    results = simulate_paths(degenerate, config)
    terminal = np.array([traj.x_o_path[-1] for traj, _ in results])
    assert all(traj.z_p_true == 0.0 for traj, _ in results)
    mean, cov = ensemble_mean_cov(terminal)
    se = np.sqrt(np.diag(cov) / len(results))
    assert np.all(np.abs(mean) < 4 * se)


def test_ensemble_mean_matches_steady_state():
    """Settled quadrature mean (-0.5, -0.5) within 4 SE over 2000 paths."""
    model = build_augmented(PINNED, OBS)
    config = SimConfig(dt=0.1, t_final=10.0, n_paths=2000, seed=11)
    results = simulate_paths(model, config)
    terminal = np.array([traj.x_o_path[-1] for traj, _ in results])
    mean, cov = ensemble_mean_cov(terminal)
    se = np.sqrt(np.diag(cov) / len(results))
    target = steady_state_mean(OBS) @ OBS.beta
    np.testing.assert_array_less(np.abs(mean - target), 4 * se)


def test_stationary_covariance_is_identity():
    """Centered quadrature covariance solves the stationary Lyapunov equation."""
    model = build_augmented(MIXED, OBS)
    config = SimConfig(dt=0.25, t_final=10.0, n_paths=4000, seed=29)
    results = simulate_paths(model, config)
    terminal = np.array([traj.x_o_path[-1] for traj, _ in results])
    z_true = np.array([traj.z_p_true for traj, _ in results])
    settled = steady_state_mean(OBS) @ OBS.beta
    centered = terminal - np.outer(z_true, settled)
    _, cov = ensemble_mean_cov(centered)
    tol = 4.0 * math.sqrt(2.0 / len(results))
    np.testing.assert_allclose(cov, np.eye(2), atol=tol)


def test_record_variance_matches_gain_norm():
    """Per-step record variance approaches |K|^2 dt at steady state."""
    model = build_augmented(PINNED, OBS)
    dt = 0.002
    config = SimConfig(dt=dt, t_final=4.0, n_paths=200, seed=13)
    results = simulate_paths(model, config)
    norm_k_sq = float((model.D @ model.D.T)[0, 0])
    steady = []
    for _, record in results:
        window = record.dz[record.times[:-1] > 2.0]
        steady.append(window - window.mean())
    pooled = np.concatenate(steady)
    ratio = pooled.var(ddof=1) / dt / norm_k_sq
    assert abs(ratio - 1.0) < 0.03


def test_determinism_and_thread_invariance():
    model = build_augmented(MIXED, OBS)
    config = SimConfig(dt=0.02, t_final=1.0, n_paths=300, seed=123)
    base = simulate_paths(model, config)
    again = simulate_paths(model, config)
    threaded = simulate_paths(model, config, threads=4)
    for (t0, r0), (t1, r1), (t2, r2) in zip(base, again, threaded):
        np.testing.assert_array_equal(r0.dz, r1.dz)
        np.testing.assert_array_equal(r0.dz, r2.dz)
        np.testing.assert_array_equal(t0.x_o_path, t1.x_o_path)
        np.testing.assert_array_equal(t0.x_o_path, t2.x_o_path)


def test_euler_scheme_runs_and_shares_noise():
    """With shared noise the EM record is correlated with the state increments."""
    model = build_augmented(PINNED, OBS)
    config = SimConfig(dt=0.001, t_final=0.5, n_paths=50, seed=3,
                       scheme="euler_maruyama")
    results = simulate_paths(model, config)
    corrs = []
    for traj, record in results:
        dx = np.diff(traj.x_o_path, axis=0) @ model.D[0] * -1.0  # -(K . dx_o)
        corrs.append(np.corrcoef(dx, record.dz)[0, 1])
    # dz = ... + K dw while dx_o = ... - sqrt(kappa) dw, so -K.dx_o ~ +sqrt(k) K dw
    assert np.mean(corrs) > 0.9

    independent = SimConfig(dt=0.001, t_final=0.5, n_paths=50, seed=3,
                            scheme="euler_maruyama", record_noise="independent")
    results_ind = simulate_paths(model, independent)
    corrs_ind = []
    for traj, record in results_ind:
        dx = np.diff(traj.x_o_path, axis=0) @ model.D[0] * -1.0
        corrs_ind.append(np.corrcoef(dx, record.dz)[0, 1])
    assert abs(np.mean(corrs_ind)) < 0.2


def test_ensemble_mean_cov_order_insensitive():
    rng = np.random.default_rng(8)
    data = rng.normal(size=(500, 3))
    mean_a, cov_a = ensemble_mean_cov(data)
    perm = rng.permutation(500)
    mean_b, cov_b = ensemble_mean_cov(data[perm])
    np.testing.assert_allclose(mean_a, mean_b, atol=1e-15)
    np.testing.assert_allclose(cov_a, cov_b, atol=1e-13)


def test_time_grid_and_csv_roundtrip(tmp_path):
    model = build_augmented(MIXED, OBS)
    config = SimConfig(dt=0.1, t_final=0.5, n_paths=2, seed=0)
    grid = time_grid(config)
    assert grid.shape == (6,) and grid[0] == 0.0
    results = simulate_paths(model, config)
    out = tmp_path / "paths.csv"
    write_paths_csv(out, results)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "path_id,t,dz,x_o_1,x_o_2,z_p_true"
    assert len(lines) == 1 + 2 * (config.n_steps + 1)
    first = lines[1].split(",")
    assert float(first[1]) == 0.0
    np.testing.assert_allclose(float(first[2]), results[0][1].dz[0])


def test_record_validation():
    with pytest.raises(ValueError):
        MeasurementRecord(times=np.array([0.0, 0.1, 0.1]), dz=np.zeros(2), z_p_true=1.0)
    with pytest.raises(ValueError):
        MeasurementRecord(times=np.array([0.0, 0.1]), dz=np.zeros(2), z_p_true=1.0)
