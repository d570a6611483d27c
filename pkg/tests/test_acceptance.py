"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test prints a single PASS/FAIL line; the same lines are repeated in
the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from probetherm.cli import main
from probetherm.detector import DetectorConfig, DetectorRecord, ks_filter, noisy_posterior, sample_record
from probetherm.fisher import fisher_discrete_recursion, fisher_finite_time
from probetherm.harness import (
    McConfig,
    default_bias_temperatures,
    run_bias_sweep,
    run_bvm_check,
    run_error_curve,
)
from probetherm.inference import (
    TemperatureGrid,
    bayes_update,
    estimate_log,
    estimate_mean,
    estimate_ml,
    estimate_relative,
    flat_prior,
    numeric_ml,
    posterior_absolute_cost,
    posterior_log_cost,
    posterior_relative_cost,
)
from probetherm.jump_process import BathModel, InitMode, Trajectory, rates, sample_trajectory, sufficient_stats
from probetherm.strategy import (
    Mode,
    adaptive_bound,
    bound_prior,
    optimal_adaptive_ratio,
    optimize_gap_nonadaptive,
)

import mc_oracles

BOS, FER = BathModel.bosonic(), BathModel.fermionic()
Z95 = 1.6448536269514722


def _constants(model):
    t0 = time.perf_counter()
    prior = bound_prior(0.1, 10.0)
    omega, bound = optimize_gap_nonadaptive(model, prior)
    x, c = optimal_adaptive_ratio(model)
    ad = adaptive_bound(model, prior)
    return omega, bound, x, c, ad, time.perf_counter() - t0


def test_criterion_01_bosonic_constants(criterion):
    omega, bound, x, c, ad, dt = _constants(BOS)
    checks = [abs(omega - 0.4595) <= 1e-3, abs(bound - 0.4133) <= 1e-3, abs(x - 2.4750) <= 1e-3,
              abs(c - 1.5430) <= 1e-3, abs(ad - 0.3015) <= 1e-3, dt < 1.0]
    detail = f"omega*={omega:.5f} bound={bound:.5f} x*={x:.5f} c*={c:.5f} adaptive={ad:.5f} t={dt:.2f}s"
    assert criterion(1, "bosonic optimal gaps and bounds", all(checks), detail)


def test_criterion_02_fermionic_constants(criterion):
    omega, bound, x, c, ad, dt = _constants(FER)
    checks = [abs(omega - 1.5401) <= 1e-3, abs(bound - 132.79) <= 0.1, abs(x - 2.6672) <= 1e-3,
              abs(c - 0.3795) <= 1e-3, abs(ad - 2.6350) <= 5e-3, dt < 1.0]
    detail = f"omega*={omega:.5f} bound={bound:.4f} x*={x:.5f} c*={c:.5f} adaptive={ad:.5f} t={dt:.2f}s"
    assert criterion(2, "fermionic optimal gaps and bounds", all(checks), detail)


def test_criterion_03_fisher_triangle(criterion):
    cases = [(BOS, 1.0, 1.0, 5.0, InitMode.THERMAL), (FER, 1.5, 0.7, 3.0, InitMode.FIXED)]
    ok, parts = True, []
    for i, (model, w, T, tau, init) in enumerate(cases):
        closed = fisher_finite_time(model, w, T, tau, init=init).total
        dt = 1e-4 / float(rates(model, w, T).total)
        N = int(round(tau / dt))
        rec = fisher_discrete_recursion(model, w, T, tau / N, N, init=init)
        mc, _ = mc_oracles.score_variance(model, w, T, tau, 100_000, seed=300 + i, init=init)
        e_rec, e_mc = abs(rec - closed) / closed, abs(mc - closed) / closed
        ok &= e_rec <= 1e-3 and e_mc <= 0.05
        parts.append(f"{model.kind.value}: F={closed:.5f} rec_err={e_rec:.1e} mc_err={e_mc:.3f}")
    assert criterion(3, "Fisher closed form vs discrete recursion vs score variance", ok, "; ".join(parts))


def test_criterion_04_ml_closed_form(criterion):
    rng = np.random.default_rng(400)
    worst, n = 0.0, 0
    while n < 100:
        tr = sample_trajectory(BOS, 0.46, rng.uniform(0.1, 10), rng.uniform(5, 200), n0=0, rng=rng)
        s = sufficient_stats(tr)
        if s.k == 0:
            continue
        a, b = estimate_ml(s, BOS, 0.46), numeric_ml(s, BOS, 0.46)
        worst = max(worst, abs(a - b) / b)
        n += 1
    assert criterion(4, "bosonic ML closed form vs numeric argmax", worst <= 1e-6, f"max rel diff {worst:.2e}")


def test_criterion_05_estimator_optimality(criterion):
    rng = np.random.default_rng(500)
    scan = np.linspace(0.1, 10.0, 200_001)
    pairs = [("relative", estimate_relative, posterior_relative_cost),
             ("mean", estimate_mean, posterior_absolute_cost),
             ("log", estimate_log, posterior_log_cost)]
    worst = {name: -np.inf for name, _, _ in pairs}
    grid = TemperatureGrid.log_uniform(0.1, 10.0, 200)
    T, m = grid.nodes, None
    for _ in range(100):
        tr = sample_trajectory(BOS, 0.46, rng.uniform(0.2, 8), rng.uniform(2, 200), rng=rng)
        post = bayes_update(flat_prior(grid), tr, BOS, 0.46, InitMode.THERMAL)
        m = post.masses
        # vectorized dense scans of each cost
        e1, e2 = m @ (1 / T), m @ (1 / T**2)
        rel_scan = 1 - 2 * scan * e1 + scan**2 * e2
        abs_scan = m @ T**2 - 2 * scan * (m @ T) + scan**2
        lg = np.log(T)
        log_scan = np.log(scan) ** 2 - 2 * np.log(scan) * (m @ lg) + m @ lg**2
        for (name, est, cost), sc in zip(pairs, (rel_scan, abs_scan, log_scan)):
            worst[name] = max(worst[name], cost(post, est(post)) - sc.min())
    ok = all(v <= 1e-8 for v in worst.values())
    detail = " ".join(f"{k}:{v:.1e}" for k, v in worst.items())
    assert criterion(5, "estimators attain their posterior cost minima", ok, f"cost(est) - scan min: {detail}")


@pytest.fixture(scope="module")
def ideal_curves():
    base = dict(bath=BOS, n_trajectories=1000, tau_max=100.0, master_seed=600)
    non = run_error_curve(McConfig(mode=Mode.NON_ADAPTIVE, **base))
    ad = run_error_curve(McConfig(mode=Mode.ADAPTIVE, **base))
    return non, ad


def test_criterion_06_ideal_error_curves(criterion, ideal_curves):
    non, ad = ideal_curves
    target = 0.4133 / 100
    ratio = non.mean_DR[-1] / target
    in_band = 1.0 <= ratio <= 1.25
    assert np.array_equal(non.T_true, ad.T_true)
    d = non.presumed[:, -1] - ad.presumed[:, -1]
    z = d.mean() / (d.std(ddof=1) / math.sqrt(d.size))
    better = z > Z95
    detail = (f"non-adaptive D_R/(0.4133/100)={ratio:.4f} (se {non.stderr_DR[-1] / target:.4f}), "
              f"adaptive D_R/(0.3015/100)={ad.mean_DR[-1] / (0.3015 / 100):.4f}, paired z={z:.2f}, "
              f"valid={non.valid and ad.valid}")
    assert criterion(6, "ideal error curves near the bounds, adaptive below fixed gap",
                     in_band and better and non.valid and ad.valid, detail)


def test_criterion_07_posterior_width(criterion):
    rep = run_bvm_check(BOS, T_true=1.0, n_runs=100, master_seed=700)
    ok = rep.status == "asymptotic" and 0.9 <= rep.variance_ratio <= 1.1
    detail = f"variance*F={rep.variance_ratio:.4f} relaxations={rep.relaxations:.0f} offset={rep.mean_offset:.3f}"
    assert criterion(7, "long-time posterior variance times Fisher information", ok, detail)


def test_criterion_08_register_increment_variance(criterion):
    cfg = DetectorConfig(25.0, 10.0, 1e-4)
    rec = sample_record(Trajectory(0, (), 1e6 * cfg.dt), cfg, np.random.default_rng(800), D0=0.0)
    dD = np.diff(rec.samples)
    ratio = np.var(dD) / cfg.dt / (cfg.gamma**2 / (4 * cfg.lam))
    assert criterion(8, "register increment variance", dD.size == 10**6 and abs(ratio - 1) <= 0.02,
                     f"Var(dD)/dt / (gamma^2/4lam) = {ratio:.4f} over {dD.size} steps")


def test_criterion_09_filter_cross_validation(criterion):
    lam, gamma = 5.0, 10.0
    fine = 1.25e-5
    factors = (32, 16, 8, 4, 2)
    grid = TemperatureGrid.log_uniform(0.1, 10.0, 100)
    rng = np.random.default_rng(900)
    errs = np.zeros((8, len(factors)))
    for i in range(8):
        traj = sample_trajectory(BOS, 0.46, rng.uniform(0.3, 5.0), 10.0, rng=rng)
        rec = sample_record(traj, DetectorConfig(lam, gamma, fine), rng)
        for j, k in enumerate(factors):
            cfg = DetectorConfig(lam, gamma, fine * k)
            sub = DetectorRecord(cfg.dt, rec.samples[::k])
            a = noisy_posterior(sub, BOS, 0.46, grid, cfg)
            b = ks_filter(sub, BOS, 0.46, grid, cfg)
            errs[i, j] = np.max(abs(a.density - b.density))
    dts = fine * np.array(factors)
    mean = errs.mean(axis=0)
    slope = np.polyfit(np.log(dts), np.log(mean), 1)[0]
    at_default = mean[list(factors).index(8)]  # dt = 1e-3 / gamma
    worst_default = errs[:, list(factors).index(8)].max()
    ok = worst_default <= 1e-2 and 0.75 <= slope <= 1.5
    detail = f"sup-norm at dt=1e-4: mean {at_default:.2e}, max {worst_default:.2e}; fitted order {slope:.2f}"
    assert criterion(9, "discrete measurement filter vs continuous filter", ok, detail)


NOISY_DT = 1e-3
LAMBDAS = (1.0, 5.0, 25.0)


@pytest.fixture(scope="module")
def noisy_curves():
    out = {}
    for lam in LAMBDAS:
        cfg = McConfig(BOS, n_trajectories=200, tau_max=100.0, sample_times=np.array([10.0, 100.0]),
                       master_seed=1000, grid_nodes=100, detector=DetectorConfig(lam, 10.0, NOISY_DT))
        out[lam] = run_error_curve(cfg)
    return out


def test_criterion_10_noisy_regime(criterion, noisy_curves):
    parts, ok = [], True
    # error falls with measurement strength
    for lo, hi in zip(LAMBDAS[:-1], LAMBDAS[1:]):
        a, b = noisy_curves[lo], noisy_curves[hi]
        z = (a.mean_DR[-1] - b.mean_DR[-1]) / math.hypot(a.stderr_DR[-1], b.stderr_DR[-1])
        ok &= z > Z95
        parts.append(f"D_R(lam={lo:g})-D_R(lam={hi:g}) z={z:.1f}")
    strongest = noisy_curves[LAMBDAS[-1]]
    gap_z = (strongest.mean_DR[-1] - strongest.crb_nonadaptive[-1]) / strongest.stderr_DR[-1]
    ok &= gap_z > Z95
    parts.append(f"lam=25 D_R/CRB={strongest.mean_DR[-1] / strongest.crb_nonadaptive[-1]:.2f} z={gap_z:.1f}")
    ok &= all(r.valid for r in noisy_curves.values())

    # bias direction: interior low and high temperature sets of the 35-point sweep
    temps = default_bias_temperatures(0.1, 10.0, 35)
    cfg = McConfig(BOS, n_trajectories=100, tau_max=100.0, master_seed=1001, grid_nodes=100,
                   detector=DetectorConfig(25.0, 10.0, NOISY_DT))
    rows = run_bias_sweep(cfg, temps).rows
    low = [r for r in rows if 0.1 < r.T_true <= 0.3]
    high = [r for r in rows if 3.0 <= r.T_true < 10.0]

    def pooled(rs):
        m = np.mean([r.mean_ratio for r in rs])
        se = math.sqrt(np.sum([r.std_ratio**2 / (cfg.n_trajectories - r.n_failed) for r in rs])) / len(rs)
        return m, se

    lo_m, lo_se = pooled(low)
    hi_m, hi_se = pooled(high)
    ok &= lo_m < 1 and hi_m > 1
    parts.append(f"low-T ratio {lo_m:.4f}+-{lo_se:.4f} (n={len(low)}), high-T ratio {hi_m:.4f}+-{hi_se:.4f} "
                 f"(n={len(high)})")
    assert criterion(10, "noisy measurements: ordering, bound gap, bias signs", ok, "; ".join(parts))


STOCHASTIC_RUNS = {
    "simulate": ["--gap", "0.46", "--temperature", "1.0", "--tau", "30"],
    "montecarlo": ["--n-trajectories", "5", "--tau", "10", "--mode", "adaptive"],
    "noisy": ["--lambda", "25", "--gamma", "10", "--dt", "1e-3", "--tau", "3", "--gap", "0.46",
              "--temperature", "1.0", "--nodes", "40"],
    "bias-sweep": ["--n-trajectories", "3", "--n-temperatures", "4", "--tau", "10"],
    "bvm-check": ["--n-runs", "4", "--tau", "50"],
}


def test_criterion_11_cli_determinism(criterion, tmp_path, capsys):
    mismatched = []
    for cmd, args in STOCHASTIC_RUNS.items():
        dirs = []
        for rep in ("a", "b"):
            out = tmp_path / cmd / rep
            assert main([cmd, "--seed", "11", *args, "--out", str(out)]) == 0
            capsys.readouterr()
            dirs.append(out)
        files = sorted(p.name for p in dirs[0].iterdir())
        if not files or files != sorted(p.name for p in dirs[1].iterdir()):
            mismatched.append(cmd)
            continue
        if any((dirs[0] / f).read_bytes() != (dirs[1] / f).read_bytes() for f in files):
            mismatched.append(cmd)
    assert criterion(11, "stochastic subcommands reproduce byte-identical files", not mismatched,
                     f"checked {', '.join(STOCHASTIC_RUNS)}" + (f"; mismatched {mismatched}" if mismatched else ""))
