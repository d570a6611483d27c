"""Grid posterior over temperature, Bayes updates, estimators and posterior costs."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .jump_process import (
    BathKind,
    BathModel,
    InitMode,
    SufficientStats,
    Trajectory,
    ValidationError,
    as_schedule,
    log_likelihood_stats,
    schedule_log_likelihood,
    sufficient_stats,
)

DEFAULT_NODES = 400


class Spacing(str, enum.Enum):
    LOG_UNIFORM = "log"
    UNIFORM = "uniform"
    POINT = "point"


class PosteriorUnderflowError(RuntimeError):
    """Every grid node lost its weight; ``stats`` holds the offending data summary."""

    def __init__(self, message, stats=None):
        super().__init__(message if stats is None else f"{message} ({stats})")
        self.stats = stats


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    if nodes.size == 1:
        return np.ones(1)
    h = np.diff(nodes)
    w = np.zeros_like(nodes)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True)
class TemperatureGrid:
    t_min: float
    t_max: float
    nodes: np.ndarray = field(repr=False)
    spacing: Spacing = Spacing.LOG_UNIFORM

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "spacing", Spacing(self.spacing))
        if self.spacing is Spacing.POINT:
            if nodes.size != 1 or not nodes[0] > 0:
                raise ValidationError("a point grid holds one positive temperature")
            return
        if not 0 < self.t_min < self.t_max:
            raise ValidationError(f"need 0 < t_min < t_max, got [{self.t_min}, {self.t_max}]")
        if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
            raise ValidationError("grid nodes must be strictly increasing (>= 2 nodes)")
        if nodes[0] != self.t_min or nodes[-1] != self.t_max:
            raise ValidationError("grid must start at t_min and end at t_max")

    @classmethod
    def log_uniform(cls, t_min: float, t_max: float, n: int = DEFAULT_NODES) -> "TemperatureGrid":
        if not 0 < t_min < t_max:
            raise ValidationError(f"need 0 < t_min < t_max, got [{t_min}, {t_max}]")
        nodes = np.geomspace(t_min, t_max, n)
        nodes[0], nodes[-1] = t_min, t_max
        return cls(t_min, t_max, nodes, Spacing.LOG_UNIFORM)

    @classmethod
    def uniform(cls, t_min: float, t_max: float, n: int = DEFAULT_NODES) -> "TemperatureGrid":
        nodes = np.linspace(t_min, t_max, n)
        return cls(t_min, t_max, nodes, Spacing.UNIFORM)

    @classmethod
    def point(cls, T0: float) -> "TemperatureGrid":
        return cls(T0, T0, np.array([T0]), Spacing.POINT)

    @property
    def is_point(self) -> bool:
        return self.spacing is Spacing.POINT

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.nodes)

    def __len__(self):
        return self.nodes.size


@dataclass(frozen=True)
class Posterior:
    """Temperature density on a grid, stored as log values. Immutable."""

    grid: TemperatureGrid
    log_weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != self.grid.nodes.shape:
            raise ValidationError("log_weights must match the grid")
        object.__setattr__(self, "log_weights", lw)

    def log_norm(self) -> float:
        lw = self.log_weights
        if not np.any(np.isfinite(lw)) or np.any(np.isnan(lw)):
            return -math.inf
        return float(logsumexp(lw, b=self.grid.weights))

    def normalize(self, stats=None) -> "Posterior":
        z = self.log_norm()
        if not math.isfinite(z):
            raise PosteriorUnderflowError("posterior has no mass on the grid", stats)
        return Posterior(self.grid, self.log_weights - z)

    @property
    def density(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def masses(self) -> np.ndarray:
        """Quadrature weight times density at each node (sums to 1 when normalized)."""
        return self.grid.weights * self.density

    def expect(self, values) -> float:
        return float(np.sum(self.masses * np.asarray(values, dtype=float)))

    def integral(self) -> float:
        return float(np.sum(self.masses))

    def add_log_likelihood(self, loglik, stats=None) -> "Posterior":
        return Posterior(self.grid, self.log_weights + loglik).normalize(stats)

    def variance(self) -> float:
        m = estimate_mean(self)
        return self.expect((self.grid.nodes - m) ** 2)

    def mode(self) -> float:
        return float(self.grid.nodes[int(np.argmax(self.log_weights))])


def flat_prior(grid: TemperatureGrid) -> Posterior:
    if grid.is_point:
        return Posterior(grid, np.zeros(1))
    lw = np.full(grid.nodes.shape, -math.log(grid.t_max - grid.t_min))
    return Posterior(grid, lw)


def bayes_update(
    post: Posterior,
    traj: Trajectory,
    model: BathModel,
    schedule,
    init=InitMode.FIXED,
) -> Posterior:
    """Condition ``post`` on ``traj`` recorded under ``schedule`` (a gap or a GapSchedule)."""
    schedule = as_schedule(schedule)
    if traj.start < schedule.starts[0]:
        raise ValidationError("gap schedule does not cover the trajectory")
    ll = schedule_log_likelihood(traj, model, schedule, post.grid.nodes, init)
    return post.add_log_likelihood(ll, stats=sufficient_stats(traj))


def update_with_stats(post: Posterior, stats: SufficientStats, model, omega, init=InitMode.FIXED) -> Posterior:
    ll = log_likelihood_stats(stats, model, omega, post.grid.nodes, init)
    return post.add_log_likelihood(ll, stats=stats)


def estimate_relative(post: Posterior) -> float:
    """Minimizer of the posterior relative cost: E[1/T] / E[1/T^2]."""
    T = post.grid.nodes
    return post.expect(1 / T) / post.expect(1 / T**2)


def estimate_mean(post: Posterior) -> float:
    return post.expect(post.grid.nodes) / post.integral()


def estimate_log(post: Posterior) -> float:
    return math.exp(post.expect(np.log(post.grid.nodes)) / post.integral())


def posterior_relative_cost(post: Posterior, estimate: float) -> float:
    T = post.grid.nodes
    return post.expect(((estimate - T) / T) ** 2)


def posterior_absolute_cost(post: Posterior, estimate: float) -> float:
    return post.expect((estimate - post.grid.nodes) ** 2)


def posterior_log_cost(post: Posterior, estimate: float) -> float:
    return post.expect(np.log(estimate / post.grid.nodes) ** 2)


def _as_stats(data) -> SufficientStats:
    return data if isinstance(data, SufficientStats) else sufficient_stats(data)


def ml_occupation_bosonic(stats: SufficientStats, kappa: float) -> float:
    """Maximum-likelihood Bose occupation; tau1 drops out of the stationarity condition."""
    s = stats.k + stats.l - kappa * stats.duration
    kt = kappa * stats.duration
    return (s + math.sqrt(s * s + 4 * stats.k * kt)) / (2 * kt)


def estimate_ml(traj, model: BathModel, omega: float) -> float:
    """Maximum-likelihood temperature (fixed, temperature-independent initial state).

    Returns 0.0 when no upward jump was observed; clamp with :func:`estimate_mp`.
    """
    stats = _as_stats(traj)
    if stats.k == 0:
        return 0.0
    if model.kind is BathKind.BOSONIC:
        n = ml_occupation_bosonic(stats, float(model.spectral_rate(omega)))
        return omega / math.log1p(1.0 / n)
    return numeric_ml(stats, model, omega)


def numeric_ml(stats: SufficientStats, model: BathModel, omega: float, span: float = 1e4) -> float:
    """Bounded maximization of the log-likelihood over ln T in omega*[1/span, span]."""

    def neg(logT):
        return -log_likelihood_stats(stats, model, omega, math.exp(logT))

    lo, hi = math.log(omega / span), math.log(omega * span)
    # coarse scan guards the bounded search against the flat high-T tail
    grid = np.linspace(lo, hi, 401)
    vals = -log_likelihood_stats(stats, model, omega, np.exp(grid))
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": 1e-12, "maxiter": 500})
    return math.exp(res.x)


def estimate_mp(traj, model: BathModel, omega: float, grid: TemperatureGrid) -> float:
    """Maximum-posterior estimate for a flat prior: the ML clamped to the prior support."""
    return max(min(estimate_ml(traj, model, omega), grid.t_max), grid.t_min)


ESTIMATORS = {
    "relative": estimate_relative,
    "mean": estimate_mean,
    "log": estimate_log,
}


def write_posterior_csv(post: Posterior, path) -> None:
    with open(path, "w") as fh:
        fh.write("T,density\n")
        for T, d in zip(post.grid.nodes, post.density):
            fh.write(f"{T!r},{d!r}\n")
