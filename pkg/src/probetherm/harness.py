"""Monte-Carlo experiments: error-vs-time curves, bias sweeps, posterior-shape checks.

Every trajectory i draws from its own RNG stream derived from
(master_seed, i), so results do not depend on scheduling or worker count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .detector import DetectorConfig, FilterInstabilityError, run_noisy_strategy
from .fisher import fisher_finite_time
from .inference import (
    Posterior,
    PosteriorUnderflowError,
    TemperatureGrid,
    estimate_relative,
    flat_prior,
    posterior_relative_cost,
)
from .jump_process import BathModel, InitMode, ValidationError, rates
from .strategy import (
    Mode,
    StrategyConfig,
    adaptive_bound,
    bound_prior,
    optimal_adaptive_ratio,
    optimize_gap_nonadaptive,
    run_strategy,
)

FAILURE_TOLERANCE = 0.01
BVM_MIN_RELAXATIONS = 1e3


def stream(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)))


def log_sample_times(tau_max: float, decades: int = 3, per_decade: int = 30) -> np.ndarray:
    return np.geomspace(tau_max / 10**decades, tau_max, decades * per_decade + 1)


def worker_count(requested: int | None = None) -> int:
    cap = os.environ.get("THERMO_THREADS")
    n = requested if requested is not None else 1
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass
class McConfig:
    bath: BathModel
    t_min: float = 0.1
    t_max: float = 10.0
    mode: Mode = Mode.NON_ADAPTIVE
    n_trajectories: int = 1000
    tau_max: float = 100.0
    sample_times: np.ndarray | None = None
    detector: DetectorConfig | None = None
    master_seed: int = 0
    grid_nodes: int = 400
    update_interval: float | None = None
    initial_gap: float | None = None
    workers: int | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.n_trajectories < 1:
            raise ValidationError("n_trajectories must be >= 1")
        if not 0 < self.t_min < self.t_max:
            raise ValidationError("need 0 < t_min < t_max")
        if not self.tau_max > 0:
            raise ValidationError("tau_max must be > 0")
        if self.sample_times is None:
            self.sample_times = log_sample_times(self.tau_max)
        st = np.asarray(self.sample_times, dtype=float)
        if st.size == 0 or np.any(np.diff(st) <= 0) or st[-1] > self.tau_max * (1 + 1e-12) or st[0] <= 0:
            raise ValidationError("sample times must be increasing, positive, and <= tau_max")
        self.sample_times = st

    @property
    def grid(self) -> TemperatureGrid:
        return TemperatureGrid.log_uniform(self.t_min, self.t_max, self.grid_nodes)

    def resolved_gap(self) -> float:
        if self.initial_gap is not None:
            return float(self.initial_gap)
        return optimize_gap_nonadaptive(self.bath, bound_prior(self.t_min, self.t_max))[0]


@dataclass
class TrajectoryOutcome:
    T_true: float
    presumed: np.ndarray  # posterior relative cost at each sample time
    estimates: np.ndarray
    final_gap: float
    failed: bool = False
    error: str = ""


@dataclass
class McResult:
    sample_times: np.ndarray
    mean_DR: np.ndarray
    stderr_DR: np.ndarray
    crb_nonadaptive: np.ndarray
    crb_adaptive: np.ndarray
    n_failed: int
    n_total: int
    T_true: np.ndarray
    presumed: np.ndarray  # (n_ok, n_times)
    true_error: np.ndarray  # (n_ok, n_times)
    final_gaps: np.ndarray
    errors: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.n_failed <= FAILURE_TOLERANCE * self.n_total

    def rows(self):
        for i, t in enumerate(self.sample_times):
            yield (float(t), float(self.mean_DR[i]), float(self.stderr_DR[i]),
                   float(self.crb_nonadaptive[i]), float(self.crb_adaptive[i]), int(self.n_failed))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("tau,mean_DR,stderr_DR,crb_nonadaptive,crb_adaptive,n_failed\n")
            for row in self.rows():
                fh.write(",".join(repr(v) for v in row) + "\n")


def _checkpoint_values(times, checkpoint_times, values):
    # nearest checkpoint: noisy runs snap sample times to the time step
    idx = np.abs(np.asarray(checkpoint_times)[None, :] - np.asarray(times)[:, None]).argmin(axis=1)
    return [values[i] for i in idx]


def simulate_one(cfg: McConfig, index: int, gap: float, T_true: float | None = None) -> TrajectoryOutcome:
    rng = stream(cfg.master_seed, index)
    drawn = rng.uniform(cfg.t_min, cfg.t_max)
    T_true = drawn if T_true is None else float(T_true)
    prior = flat_prior(cfg.grid)
    try:
        if cfg.detector is None:
            run = run_strategy(
                cfg.bath, prior, T_true, cfg.tau_max,
                StrategyConfig(mode=cfg.mode, initial_gap=gap, update_interval=cfg.update_interval),
                rng=rng, sample_times=cfg.sample_times,
            )
        else:
            run = run_noisy_strategy(
                cfg.bath, prior, T_true, cfg.tau_max, cfg.detector, gap, rng,
                adaptive=cfg.mode is Mode.ADAPTIVE, update_interval=cfg.update_interval,
                sample_times=cfg.sample_times,
            )
    except (PosteriorUnderflowError, FilterInstabilityError) as exc:
        n = cfg.sample_times.size
        return TrajectoryOutcome(T_true, np.full(n, np.nan), np.full(n, np.nan), gap, True, str(exc))
    posts = _checkpoint_values(cfg.sample_times, run.checkpoint_times, run.posteriors)
    ests = np.array([estimate_relative(p) for p in posts])
    presumed = np.array([posterior_relative_cost(p, e) for p, e in zip(posts, ests)])
    return TrajectoryOutcome(T_true, presumed, ests, run.schedule.gaps[-1])


def _simulate_batch(args):
    cfg, indices, gap, temps = args
    return [simulate_one(cfg, i, gap, t) for i, t in zip(indices, temps)]


def simulate_ensemble(cfg: McConfig, gap: float, temperatures=None) -> list[TrajectoryOutcome]:
    n = cfg.n_trajectories
    temps = [None] * n if temperatures is None else list(temperatures)
    workers = worker_count(cfg.workers)
    if workers == 1:
        return [simulate_one(cfg, i, gap, t) for i, t in enumerate(temps)]
    chunks = np.array_split(np.arange(n), workers * 4)
    jobs = [(cfg, list(c), gap, [temps[i] for i in c]) for c in chunks if c.size]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = []
        for part in pool.map(_simulate_batch, jobs):
            out.extend(part)
    return out


def bounds_at(cfg: McConfig, times):
    prior = bound_prior(cfg.t_min, cfg.t_max)
    _, non_ad = optimize_gap_nonadaptive(cfg.bath, prior)
    ad = adaptive_bound(cfg.bath, prior)
    times = np.asarray(times, dtype=float)
    return non_ad / times, ad / times


def aggregate(cfg: McConfig, outcomes: list[TrajectoryOutcome]) -> McResult:
    ok = [o for o in outcomes if not o.failed]
    n_failed = len(outcomes) - len(ok)
    times = cfg.sample_times
    if ok:
        presumed = np.array([o.presumed for o in ok])
        T = np.array([o.T_true for o in ok])
        est = np.array([o.estimates for o in ok])
        true_err = ((est - T[:, None]) / T[:, None]) ** 2
        mean = presumed.mean(axis=0)
        se = presumed.std(axis=0, ddof=1) / math.sqrt(len(ok)) if len(ok) > 1 else np.zeros(times.size)
    else:
        presumed = true_err = np.empty((0, times.size))
        T = np.empty(0)
        mean = se = np.full(times.size, np.nan)
    crb_n, crb_a = bounds_at(cfg, times)
    return McResult(
        sample_times=times, mean_DR=mean, stderr_DR=se, crb_nonadaptive=crb_n, crb_adaptive=crb_a,
        n_failed=n_failed, n_total=len(outcomes), T_true=T, presumed=presumed, true_error=true_err,
        final_gaps=np.array([o.final_gap for o in ok]), errors=[o.error for o in outcomes if o.failed],
    )


def run_error_curve(cfg: McConfig) -> McResult:
    """Prior-averaged presumed relative error of the relative estimator versus time."""
    gap = cfg.resolved_gap()
    return aggregate(cfg, simulate_ensemble(cfg, gap))


@dataclass
class BiasRow:
    T_true: float
    mean_ratio: float
    std_ratio: float
    true_rel_err: float
    presumed_over_true: float
    n_failed: int


@dataclass
class BiasResult:
    rows: list[BiasRow]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("T_true,mean_ratio,std_ratio,true_rel_err,presumed_over_true\n")
            for r in self.rows:
                fh.write(f"{r.T_true!r},{r.mean_ratio!r},{r.std_ratio!r},{r.true_rel_err!r},{r.presumed_over_true!r}\n")


def default_bias_temperatures(t_min: float, t_max: float, n: int = 35) -> np.ndarray:
    return np.geomspace(t_min, t_max, n)


def run_bias_sweep(cfg: McConfig, temperatures=None) -> BiasResult:
    """Per true temperature: mean and spread of estimate/T*, true error, presumed/true error.

    Statistics use the final sample time. Each temperature gets its own
    block of stream indices.
    """
    temps = default_bias_temperatures(cfg.t_min, cfg.t_max) if temperatures is None else np.asarray(temperatures)
    gap = cfg.resolved_gap()
    one = replace(cfg, sample_times=np.array([cfg.tau_max]))
    rows = []
    for b, T in enumerate(temps):
        block = replace(one, master_seed=_block_seed(cfg.master_seed, b))
        outs = simulate_ensemble(block, gap, [T] * cfg.n_trajectories)
        ok = [o for o in outs if not o.failed]
        ratio = np.array([o.estimates[-1] / T for o in ok])
        true_err = (ratio - 1) ** 2
        presumed = np.array([o.presumed[-1] for o in ok])
        rows.append(BiasRow(
            T_true=float(T),
            mean_ratio=float(ratio.mean()) if ok else math.nan,
            std_ratio=float(ratio.std(ddof=1)) if len(ok) > 1 else math.nan,
            true_rel_err=float(true_err.mean()) if ok else math.nan,
            presumed_over_true=float(presumed.mean() / true_err.mean()) if ok else math.nan,
            n_failed=len(outs) - len(ok),
        ))
    return BiasResult(rows)


def _block_seed(master_seed: int, block: int) -> int:
    return int(np.random.SeedSequence(entropy=master_seed, spawn_key=(1 << 20, block)).generate_state(1)[0])


@dataclass
class BvmReport:
    status: str  # "asymptotic" or "pre-asymptotic"
    relaxations: float
    fisher: float
    variance_ratio: float
    variance_ratios: np.ndarray
    mean_offset: float  # mean of (posterior mean - T*) / posterior sd
    n_runs: int


def run_bvm_check(
    bath: BathModel,
    T_true: float = 1.0,
    tau: float | None = None,
    omega: float | None = None,
    n_runs: int = 100,
    master_seed: int = 0,
    t_min: float = 0.1,
    t_max: float = 10.0,
    grid_nodes: int = 400,
) -> BvmReport:
    """Compare long-time posteriors with N(T*, 1/F) at a fixed gap (default x* T*)."""
    if omega is None:
        omega = optimal_adaptive_ratio(bath)[0] * T_true
    total = float(rates(bath, omega, T_true).total)
    if tau is None:
        tau = BVM_MIN_RELAXATIONS / total
    relax = tau * total
    fisher = fisher_finite_time(bath, omega, T_true, tau, init=InitMode.THERMAL).total
    prior = flat_prior(TemperatureGrid.log_uniform(t_min, t_max, grid_nodes))
    cfg = StrategyConfig(mode=Mode.NON_ADAPTIVE, initial_gap=omega, init=InitMode.THERMAL)
    ratios, offsets = [], []
    for i in range(n_runs):
        run = run_strategy(bath, prior, T_true, tau, cfg, rng=stream(master_seed, i))
        post: Posterior = run.final_posterior
        var = post.variance()
        ratios.append(var * fisher)
        offsets.append((post.expect(post.grid.nodes) - T_true) / math.sqrt(var))
    ratios = np.array(ratios)
    status = "asymptotic" if relax >= BVM_MIN_RELAXATIONS * (1 - 1e-9) else "pre-asymptotic"
    return BvmReport(status, relax, fisher, float(ratios.mean()), ratios, float(np.mean(offsets)), n_runs)
