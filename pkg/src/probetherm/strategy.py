"""Choice of the probe gap: prior-optimized fixed gap and the greedy adaptive rule."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .fisher import crb_integral
from .inference import (
    Posterior,
    TemperatureGrid,
    estimate_relative,
    flat_prior,
    update_with_stats,
)
from .jump_process import (
    BathKind,
    BathModel,
    GapSchedule,
    InitMode,
    Trajectory,
    ValidationError,
    concatenate,
    sample_trajectory,
    sufficient_stats,
)

BOUND_NODES = 4001
"""Grid resolution for prior-averaged bounds; the low-T integrand is steep for fermionic baths."""


class ConvergenceError(RuntimeError):
    pass


class Mode(str, enum.Enum):
    NON_ADAPTIVE = "nonadaptive"
    ADAPTIVE = "adaptive"


def fisher_shape(kind: BathKind, x):
    """T^2 F / (rate * tau) as a function of x = omega/T (rate is kappa'T or Gamma)."""
    x = np.asarray(x, dtype=float)
    if BathKind(kind) is BathKind.BOSONIC:
        return x**3 * np.cosh(x) / (8 * np.sinh(x / 2) ** 3 * np.cosh(x / 2))
    return x**2 * np.cosh(x) / (8 * np.cosh(x / 2) ** 4)


def optimal_adaptive_ratio(model: BathModel) -> tuple[float, float]:
    """(x*, c*): the gap-to-temperature ratio maximizing T^2 F and the maximum value."""
    res = minimize_scalar(
        lambda x: -fisher_shape(model.kind, x),
        bounds=(1e-3, 50.0),
        method="bounded",
        options={"xatol": 1e-10, "maxiter": 500},
    )
    if not res.success:
        raise ConvergenceError(f"adaptive ratio search failed: {res.message}")
    return float(res.x), float(-res.fun)


def bound_prior(t_min: float, t_max: float, n: int = BOUND_NODES) -> Posterior:
    if t_min == t_max:
        return flat_prior(TemperatureGrid.point(t_min))
    return flat_prior(TemperatureGrid.log_uniform(t_min, t_max, n))


def optimize_gap_nonadaptive(model: BathModel, prior: Posterior, tol: float = 1e-6) -> tuple[float, float]:
    """Fixed gap minimizing the prior-averaged asymptotic bound.

    Returns (omega*, tau * bound). Searches ln(omega) over
    [1e-3 T_min, 1e2 T_max] with a coarse scan followed by bounded Brent.
    """
    g = prior.grid
    lo, hi = math.log(1e-3 * g.nodes[0]), math.log(1e2 * g.nodes[-1])

    def objective(log_omega):
        return crb_integral(model, math.exp(log_omega), 1.0, prior)

    scan = np.linspace(lo, hi, 121)
    vals = np.array([objective(s) for s in scan])
    i = int(np.argmin(vals))
    if i in (0, scan.size - 1):
        raise ConvergenceError("optimal gap lies on the search boundary")
    res = minimize_scalar(objective, bounds=(scan[i - 1], scan[i + 1]), method="bounded",
                          options={"xatol": tol, "maxiter": 500})
    if not res.success:
        raise ConvergenceError(f"gap search failed: {res.message}")
    return float(math.exp(res.x)), float(res.fun)


def adaptive_bound(model: BathModel, prior: Posterior) -> float:
    """tau * prior average of 1/max_omega(T^2 F)."""
    _, c_star = optimal_adaptive_ratio(model)
    T = prior.grid.nodes
    rate = model.coupling * T if model.kind is BathKind.BOSONIC else model.coupling * np.ones_like(T)
    return prior.expect(1.0 / (c_star * rate))


def adaptive_gap(x_star: float, estimate: float, t_min: float | None = None) -> float:
    """x* times the current estimate; a non-positive estimate falls back to x* t_min."""
    if not estimate > 0:
        if t_min is None or not t_min > 0:
            raise ValidationError("estimate must be > 0 (or give t_min as a floor)")
        estimate = t_min
    elif t_min is not None:
        estimate = max(estimate, t_min)
    return x_star * estimate


def default_update_interval(model: BathModel) -> float:
    return 0.5 / model.coupling


@dataclass
class StrategyRun:
    trajectory: Trajectory
    schedule: GapSchedule
    checkpoint_times: np.ndarray
    posteriors: list[Posterior]
    estimates: np.ndarray
    mode: Mode
    x_star: float | None = None

    @property
    def final_posterior(self) -> Posterior:
        return self.posteriors[-1]


@dataclass
class StrategyConfig:
    mode: Mode = Mode.NON_ADAPTIVE
    initial_gap: float | None = None
    update_interval: float | None = None
    estimator: str = "relative"
    init: InitMode = InitMode.THERMAL
    n0: int = 0  # starting state when init is FIXED

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.init = InitMode(self.init)
        if self.estimator not in ("relative", "mp"):
            raise ValidationError("estimator must be 'relative' or 'mp'")
        if self.update_interval is not None and not self.update_interval > 0:
            raise ValidationError("update_interval must be > 0")


def _checkpoints(tau, interval, sample_times):
    pts = set()
    if interval is not None and math.isfinite(interval):
        n = int(math.floor(tau / interval + 1e-9))
        pts.update(interval * i for i in range(1, n + 1))
    if sample_times is not None:
        pts.update(float(t) for t in sample_times)
    pts = sorted(t for t in pts if 0 < t < tau)
    return pts + [float(tau)]


def run_strategy(
    model: BathModel,
    prior: Posterior,
    T_true: float,
    tau: float,
    config: StrategyConfig | None = None,
    rng: np.random.Generator | None = None,
    sample_times=None,
) -> StrategyRun:
    """Simulate the probe under a (possibly adaptive) gap and track the posterior.

    The posterior is updated at every checkpoint (update times, requested
    sample times, and tau). In adaptive mode the gap is retuned to x* times
    the current estimate at each update time; the probe state carries over
    across segment boundaries.
    """
    config = config or StrategyConfig()
    rng = rng if rng is not None else np.random.default_rng()
    if config.initial_gap is None:
        raise ValidationError("initial_gap is required (use optimize_gap_nonadaptive)")
    adaptive = config.mode is Mode.ADAPTIVE
    x_star = optimal_adaptive_ratio(model)[0] if adaptive else None
    interval = None
    if adaptive:
        interval = config.update_interval or default_update_interval(model)
    update_times = set(_checkpoints(tau, interval, None)[:-1]) if adaptive else set()
    checkpoints = _checkpoints(tau, interval, sample_times)

    # on a flat prior the MP estimate is the posterior's grid argmax
    estimator: Callable[[Posterior], float] = (
        estimate_relative if config.estimator == "relative" else Posterior.mode
    )

    gap = float(config.initial_gap)
    starts, gaps = [0.0], [gap]
    pieces: list[Trajectory] = []
    post = prior
    posts, ests = [], []
    t_prev = 0.0
    state = "thermal" if config.init is InitMode.THERMAL else config.n0
    for t in checkpoints:
        piece = sample_trajectory(model, gap, T_true, t, n0=state, rng=rng, start=t_prev)
        stats = sufficient_stats(piece)
        init = config.init if t_prev == 0.0 else InitMode.FIXED
        post = update_with_stats(post, stats, model, gap, init)
        est = estimator(post)
        pieces.append(piece)
        posts.append(post)
        ests.append(est)
        state = piece.n_final
        t_prev = t
        if adaptive and t in update_times:
            new_gap = adaptive_gap(x_star, est, prior.grid.nodes[0])
            if new_gap != gap:
                gap = new_gap
                starts.append(t)
                gaps.append(gap)
    traj = concatenate(pieces)
    schedule = GapSchedule(tuple(starts), tuple(gaps), end=tau)
    return StrategyRun(traj, schedule, np.array(checkpoints), posts, np.array(ests), config.mode, x_star)

