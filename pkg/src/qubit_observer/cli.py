"""Batch front end: analyze / simulate / filter / oracle.

Every command is a pure function of (config, seed): artifacts are written
with fixed float formatting and contain no timestamps, so reruns are
byte-identical.  Exit code 0 means every embedded pass/fail check passed;
1 means a check failed or a run aborted; 2 means the configuration was
rejected.
"""

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .export import ensure_dir, write_json
from .fock_oracle import (FockTruncationError, build_operators, evolve,
                          expectations, joint_initial_state,
                          reduced_mean_trajectory, write_oracle_csv)
from .kalman_filter import (LinearModel, run_filter_ensemble, solve_riccati,
                            specialize_plant_observer, write_riccati_csv)
from .model_builder import (build_augmented, closed_loop_transfer,
                            hurwitz_check, optimal_gain, output_bias,
                            steady_state_mean)
from .sde_engine import SimConfig, ensemble_mean_cov, simulate_paths, time_grid, write_paths_csv

ENV_OUT_DIR = "QUBIT_OBSERVER_OUT_DIR"

ALLPASS_TOL = 1e-10
GAIN_CONSTRAINT_TOL = 1e-12
ZSCORE_LIMIT = 4.0
SELF_TEST_TOL = 1e-8
ORACLE_MEAN_TOL = 1e-4
ORACLE_DRIFT_TOL = 1e-6


def _check(report: dict, name: str, passed: bool, detail) -> None:
    report["checks"][name] = {"passed": bool(passed), "detail": detail}


def _finish(report: dict) -> bool:
    ok = all(c["passed"] for c in report["checks"].values())
    report["passed"] = ok
    return ok


def cmd_analyze(config: ExperimentConfig) -> dict:
    """Static analysis: bias vector, optimal quadrature, all-pass and Hurwitz checks."""
    obs = config.observer
    e = output_bias(obs)
    gain = optimal_gain(e)
    mean_map = steady_state_mean(obs)
    is_hurwitz, eigs = hurwitz_check(obs)
    expected = np.array([-0.5 * obs.kappa - 2j * obs.omega_o,
                         -0.5 * obs.kappa + 2j * obs.omega_o])
    eig_err = float(np.max(np.abs(eigs - expected)))
    omega_grid = np.round(np.arange(0.0, 50.0 + 1e-9, 0.1), 10)
    residual = 0.0
    for w in omega_grid:
        t_jw = closed_loop_transfer(obs, 1j * w)
        residual = max(residual, float(np.linalg.norm(
            t_jw @ t_jw.conj().T - np.eye(2), ord=np.inf)))
    ke = float((gain @ e)[0])

    report = {
        "command": "analyze",
        "observer": {"omega_o": obs.omega_o, "kappa": obs.kappa,
                     "beta": obs.beta.tolist()},
        "output_bias_e": e.tolist(),
        "homodyne_row_K": gain[0].tolist(),
        "norm_K": float(np.linalg.norm(gain)),
        "K_dot_e": ke,
        "steady_state_map": mean_map.tolist(),
        "x_o_settled_per_unit_zp": (mean_map @ obs.beta).tolist(),
        "drift_eigenvalues": [[z.real, z.imag] for z in eigs],
        "allpass_max_residual": residual,
        "checks": {},
    }
    _check(report, "allpass", residual <= ALLPASS_TOL,
           {"max_residual": residual, "tolerance": ALLPASS_TOL})
    _check(report, "hurwitz", is_hurwitz and eig_err <= 1e-12,
           {"eigenvalue_error": eig_err})
    _check(report, "gain_constraint", abs(ke - 1.0) <= GAIN_CONSTRAINT_TOL,
           {"K_dot_e_minus_1": ke - 1.0})
    _finish(report)
    return report


def cmd_simulate(config: ExperimentConfig, threads: int = 1) -> tuple:
    """Monte Carlo run: paths plus ensemble-vs-steady-state comparison."""
    model = build_augmented(config.plant, config.observer)
    results = simulate_paths(model, config.sim, threads=threads)
    mean_map = steady_state_mean(config.observer) @ config.observer.beta

    terminal = np.array([traj.x_o_path[-1] for traj, _ in results])
    z_true = np.array([traj.z_p_true for traj, _ in results])
    report = {
        "command": "simulate",
        "n_paths": len(results),
        "t_final": float(results[0][0].times[-1]),
        "scheme": config.sim.scheme,
        "seed": config.sim.seed,
        "groups": {},
        "checks": {},
    }

    z_limit = 0.0
    for label, mask in (("z_plus", z_true > 0), ("z_minus", z_true < 0)):
        count = int(mask.sum())
        if count < 2:
            continue
        mean, cov = ensemble_mean_cov(terminal[mask])
        theory = mean_map * z_true[mask][0]
        se = np.sqrt(np.diag(cov) / count)
        zscores = (mean - theory) / se
        z_limit = max(z_limit, float(np.max(np.abs(zscores))))
        report["groups"][label] = {
            "count": count,
            "empirical_mean": mean.tolist(),
            "steady_state_mean": theory.tolist(),
            "z_scores": zscores.tolist(),
        }

    centered = terminal - np.outer(z_true, mean_map)
    n = centered.shape[0]
    if n >= 2:
        _, cov = ensemble_mean_cov(centered)
        cov_z = np.empty((2, 2))
        for i in range(2):
            for j in range(2):
                products = centered[:, i] * centered[:, j]
                se = max(float(np.std(products, ddof=1) / math.sqrt(n)), 1e-300)
                cov_z[i, j] = (cov[i, j] - (1.0 if i == j else 0.0)) / se
        z_limit = max(z_limit, float(np.max(np.abs(cov_z))))
        report["centered_terminal_covariance"] = cov.tolist()
        report["covariance_z_scores"] = cov_z.tolist()
    _check(report, "steady_state_agreement", z_limit <= ZSCORE_LIMIT,
           {"max_abs_z": z_limit, "limit": ZSCORE_LIMIT})
    _finish(report)
    return report, results


def _filter_self_test() -> dict:
    """Closed-form scalar regression: covariance must follow 1/(1+t)."""
    model = LinearModel(A=np.zeros((1, 1)), B=np.zeros((1, 2)),
                        C=np.array([[1.0], [0.0]]), D=np.array([[1.0, 0.0]]),
                        x0_mean=np.zeros(1), sigma0=np.eye(1))
    grid = np.arange(0, 10001) * 1e-3
    ricc = solve_riccati(model, grid)
    exact = 1.0 / (1.0 + grid)
    max_dev = float(np.max(np.abs(ricc.sigma_star[:, 0, 0] - exact)))
    report = {"command": "filter", "mode": "self_test",
              "max_abs_deviation": max_dev, "checks": {}}
    _check(report, "scalar_regression_closed_form", max_dev <= SELF_TEST_TOL,
           {"max_abs_deviation": max_dev, "tolerance": SELF_TEST_TOL})
    _finish(report)
    return report


def cmd_filter(config: ExperimentConfig, threads: int = 1, self_test: bool = False):
    """Riccati solve, record simulation and filter run with MC-vs-Riccati table.

    The simulation is regenerated on the filter grid so record and Riccati
    grids coincide.
    """
    if self_test:
        return _filter_self_test(), None

    model = specialize_plant_observer(config.plant, config.observer)
    reduced = build_augmented(config.plant, config.observer)
    sim = replace(config.sim, dt=config.filter.dt, t_final=config.filter.t_final)
    grid = time_grid(sim)
    ricc = solve_riccati(model, grid)
    results = simulate_paths(reduced, sim, threads=threads)
    records = [rec for _, rec in results]
    x_hat = run_filter_ensemble(model, ricc, records)

    n_paths = len(results)
    n_steps = grid.size - 1
    states = np.empty((n_paths, grid.size, 3))
    for i, (traj, _) in enumerate(results):
        states[i, :, 0] = traj.z_p_true
        states[i, :, 1:] = traj.x_o_path
    errors = states - x_hat

    checkpoints = np.unique(np.round(np.linspace(n_steps / 10.0, n_steps, 10)).astype(int))
    table = []
    max_bias_z = 0.0
    max_cov_z = 0.0
    for idx in checkpoints:
        err = errors[:, idx, :]
        mean, cov = ensemble_mean_cov(err)
        se_mean = np.maximum(np.sqrt(np.diag(cov) / n_paths), 1e-300)
        bias_z = mean / se_mean
        sigma_ref = ricc.sigma_star[idx]
        cov_z = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                products = err[:, i] * err[:, j]
                se = float(np.std(products, ddof=1) / math.sqrt(n_paths))
                se = max(se, 1e-300)
                cov_z[i, j] = (cov[i, j] - sigma_ref[i, j]) / se
        max_bias_z = max(max_bias_z, float(np.max(np.abs(bias_z))))
        max_cov_z = max(max_cov_z, float(np.max(np.abs(cov_z))))
        table.append({
            "t": float(grid[idx]),
            "bias_z_scores": bias_z.tolist(),
            "sigma_star_diag": np.diag(sigma_ref).tolist(),
            "empirical_error_cov_diag": np.diag(cov).tolist(),
            "covariance_z_scores": cov_z.tolist(),
        })

    terminal_errors = (states[:, -1, 0] - x_hat[:, -1, 0]).tolist()
    report = {
        "command": "filter",
        "mode": "monte_carlo",
        "n_paths": n_paths,
        "grid_dt": sim.dt,
        "t_final": float(grid[-1]),
        "seed": sim.seed,
        "homodyne_row_K": model.D[0].tolist(),
        "sigma_star_terminal": ricc.sigma_star[-1].tolist(),
        "mc_vs_riccati": table,
        "terminal_zp_errors": terminal_errors,
        "terminal_zp_error_variance": float(np.var(terminal_errors, ddof=1)),
        "checks": {},
    }
    _check(report, "unbiasedness", max_bias_z <= ZSCORE_LIMIT,
           {"max_abs_z": max_bias_z, "limit": ZSCORE_LIMIT})
    _check(report, "covariance_consistency", max_cov_z <= ZSCORE_LIMIT,
           {"max_abs_z": max_cov_z, "limit": ZSCORE_LIMIT})
    _finish(report)
    return report, ricc


def cmd_oracle(config: ExperimentConfig) -> tuple:
    """Master-equation oracle vs reduced linear model at the mean level."""
    plant, obs, fock = config.plant, config.observer, config.oracle
    ops = build_operators(plant.c_p, obs.beta, obs.omega_o, obs.kappa, fock.n_trunc)
    state = joint_initial_state(plant.rho_p, fock.n_trunc)
    times, rhos = evolve(state, ops, fock)
    traces = expectations(rhos, ops)
    reference = reduced_mean_trajectory(
        obs.omega_o, obs.kappa, obs.beta, traces.exp_zp[0],
        (traces.exp_q[0], traces.exp_p[0]), times)
    mean_dev = float(np.max(np.abs(
        np.column_stack([traces.exp_q, traces.exp_p]) - reference)))
    zp_drift = float(np.max(np.abs(traces.exp_zp - traces.exp_zp[0])))
    zp_sq_drift = float(np.max(np.abs(traces.exp_zp_sq - traces.exp_zp_sq[0])))
    report = {
        "command": "oracle",
        "n_trunc": fock.n_trunc,
        "dt": fock.dt,
        "t_final": fock.t_final,
        "initial_exp_zp": float(traces.exp_zp[0]),
        "max_mean_deviation": mean_dev,
        "max_zp_drift": zp_drift,
        "max_zp_sq_drift": zp_sq_drift,
        "max_leakage": float(np.max(traces.leakage)),
        "checks": {},
    }
    _check(report, "mean_agreement", mean_dev <= ORACLE_MEAN_TOL,
           {"max_deviation": mean_dev, "tolerance": ORACLE_MEAN_TOL})
    _check(report, "qnd_invariance", max(zp_drift, zp_sq_drift) <= ORACLE_DRIFT_TOL,
           {"max_drift": max(zp_drift, zp_sq_drift), "tolerance": ORACLE_DRIFT_TOL})
    _finish(report)
    return report, (times, traces)


def _print_checks(report: dict) -> None:
    for name, chk in report["checks"].items():
        tag = "PASS" if chk["passed"] else "FAIL"
        print(f"[{tag}] {report['command']}:{name}: {chk['detail']}")


def _resolve_out_dir(cli_out, config: ExperimentConfig) -> str:
    if cli_out:
        return cli_out
    env = os.environ.get(ENV_OUT_DIR)
    if env:
        return env
    return config.outputs.directory


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qubit-observer",
        description="Coherent quantum observer toolkit: analysis, simulation, "
                    "filtering and operator-level validation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "bias vector, optimal quadrature, all-pass/Hurwitz checks"),
        ("simulate", "sample homodyne records and compare with steady state"),
        ("filter", "Riccati solve plus Monte-Carlo filter validation"),
        ("oracle", "truncated-Fock master equation vs reduced model"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="JSON experiment configuration")
        cmd.add_argument("--out", default=None, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override sim seed")
        cmd.add_argument("--threads", type=int, default=1, help="worker thread cap")
        if name == "filter":
            cmd.add_argument("--self-test", action="store_true",
                             help="run the closed-form scalar regression check only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        try:
            config = replace(config, sim=replace(config.sim, seed=args.seed))
        except ValueError as exc:
            print(f"configuration error: sim.seed: {exc}", file=sys.stderr)
            return 2
    out_dir = ensure_dir(_resolve_out_dir(args.out, config))
    want_csv = "csv" in config.outputs.formats

    try:
        if args.command == "analyze":
            report = cmd_analyze(config)
        elif args.command == "simulate":
            report, results = cmd_simulate(config, threads=args.threads)
            if want_csv:
                write_paths_csv(os.path.join(out_dir, "paths.csv"), results)
        elif args.command == "filter":
            report, ricc = cmd_filter(config, threads=args.threads,
                                      self_test=args.self_test)
            if ricc is not None and want_csv:
                write_riccati_csv(os.path.join(out_dir, "riccati.csv"), ricc)
        else:
            report, (times, traces) = cmd_oracle(config)
            if want_csv:
                write_oracle_csv(os.path.join(out_dir, "oracle.csv"), times, traces)
    except FockTruncationError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1

    write_json(os.path.join(out_dir, "report.json"), report)
    _print_checks(report)
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{status}: report written to {os.path.join(out_dir, 'report.json')}")
    return 0 if report["passed"] else 1


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
