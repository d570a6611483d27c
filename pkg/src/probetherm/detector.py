"""Noisy, finite-bandwidth readout of the probe and temperature filtering from it.

The detector register relaxes towards the probe occupation,

    dD = gamma (n(t) - D) dt + gamma / (2 sqrt(lam)) dW,

so it fluctuates around 0 in the ground state and 1 in the excited state.
Two filters turn a register into a temperature posterior: the exact
discrete filter built from the Gaussian measurement matrix, and a first-order
Kushner-Stratonovich integration. Both carry per-node log weights.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numba
import numpy as np

from .inference import Posterior, TemperatureGrid, estimate_relative, flat_prior
from .jump_process import (
    BathModel,
    GapSchedule,
    InitMode,
    TransitionRates,
    Trajectory,
    ValidationError,
    as_schedule,
    concatenate,
    propagator,
    rates,
    sample_trajectory,
)

STABILITY_LIMIT = 0.05


class FilterInstabilityError(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"filter unstable at step {step}: {reason}; reduce dt")
        self.step = step


@dataclass(frozen=True)
class DetectorConfig:
    lam: float
    gamma: float
    dt: float

    def __post_init__(self):
        for name in ("lam", "gamma", "dt"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be > 0")
        if self.gamma * self.dt > STABILITY_LIMIT:
            raise ValidationError(f"gamma*dt = {self.gamma * self.dt:g} exceeds {STABILITY_LIMIT}")
        if self.lam * self.dt > STABILITY_LIMIT:
            raise ValidationError(f"lam*dt = {self.lam * self.dt:g} exceeds {STABILITY_LIMIT}")

    @classmethod
    def with_default_dt(cls, lam: float, gamma: float) -> "DetectorConfig":
        return cls(lam, gamma, min(1e-3 / gamma, STABILITY_LIMIT / lam))

    @property
    def noise_std(self) -> float:
        """Standard deviation of one register increment."""
        return self.gamma * math.sqrt(self.dt / (4 * self.lam))

    @property
    def precision(self) -> float:
        """2 lam / (gamma^2 dt): coefficient of the Gaussian measurement exponent."""
        return 2 * self.lam / (self.gamma**2 * self.dt)


@dataclass(frozen=True)
class DetectorRecord:
    dt: float
    samples: np.ndarray
    underlying: Trajectory | None = None
    start: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        object.__setattr__(self, "samples", s)
        if s.ndim != 1 or s.size < 1 or not np.all(np.isfinite(s)):
            raise ValidationError("samples must be a finite 1-d series")

    @property
    def n_steps(self) -> int:
        return self.samples.size - 1

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.samples.size)

    @property
    def tau(self) -> float:
        return self.start + self.dt * self.n_steps


def n_steps_for(duration: float, dt: float) -> int:
    # tolerate float noise in duration/dt before taking the ceiling
    return int(math.ceil(duration / dt - 1e-9))


def sample_record(
    traj: Trajectory,
    cfg: DetectorConfig,
    rng: np.random.Generator,
    D0: float | None = None,
) -> DetectorRecord:
    """Euler-Maruyama register driven by ``traj``; D(start) = n(start) unless ``D0`` is given.

    Step j -> j+1 uses the probe state at the end of the step, matching the
    order (propagate, then measure) of the discrete filter.
    """
    n = n_steps_for(traj.duration, cfg.dt)
    t = traj.start + cfg.dt * np.arange(1, n + 1)
    states = traj.state_at(np.minimum(t, traj.tau)).astype(float)
    xi = rng.standard_normal(n)
    out = np.empty(n + 1)
    out[0] = float(traj.n0) if D0 is None else float(D0)
    _euler_register(out, states, xi, cfg.gamma * cfg.dt, cfg.noise_std)
    return DetectorRecord(cfg.dt, out, traj, traj.start)


@numba.njit(cache=True)
def _euler_register(out, states, xi, gdt, sigma):
    for j in range(states.size):
        out[j + 1] = out[j] + gdt * (states[j] - out[j]) + sigma * xi[j]


def measurement_log_weights(D, D_prev, cfg: DetectorConfig):
    """Log of the diagonal measurement weights (ground, excited).

    The common prefactor sqrt(2 lam / (pi gamma^2 dt)) is dropped; it cancels
    on normalization over temperature.
    """
    mu0 = D_prev * math.exp(-cfg.gamma * cfg.dt)
    mu1 = mu0 + cfg.gamma * cfg.dt
    c = cfg.precision
    return -c * (D - mu0) ** 2, -c * (D - mu1) ** 2


def measurement_matrix(D, D_prev, cfg: DetectorConfig) -> np.ndarray:
    lw0, lw1 = measurement_log_weights(D, D_prev, cfg)
    return np.diag([math.exp(lw0), math.exp(lw1)])


@dataclass(frozen=True)
class FilterState:
    """Joint (state, record) weights per temperature node.

    ``probs[:, j]`` is the conditional occupation of state j and
    ``log_scale`` the log of the total joint weight, so the joint weight of
    state j is ``probs[:, j] * exp(log_scale)``.
    """

    probs: np.ndarray
    log_scale: np.ndarray

    @classmethod
    def thermal(cls, r: TransitionRates) -> "FilterState":
        p1 = np.atleast_1d(np.asarray(r.steady_excited, dtype=float))
        return cls(np.stack([1 - p1, p1], axis=1), np.zeros_like(p1))

    @property
    def log_joint(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.probs) + self.log_scale[:, None]

    @property
    def log_likelihood(self) -> np.ndarray:
        """ln of (1,1) . P for every node."""
        return self.log_scale.copy()


def filter_step(state: FilterState, D, D_prev, r: TransitionRates, cfg: DetectorConfig) -> FilterState:
    """One propagate-then-measure update (numpy reference for the compiled chain)."""
    p10, p01 = propagator(r, cfg.dt)
    p0, p1 = state.probs[:, 0], state.probs[:, 1]
    q0 = p0 * (1 - p10) + p1 * p01
    q1 = p0 * p10 + p1 * (1 - p01)
    lw0, lw1 = measurement_log_weights(D, D_prev, cfg)
    m = max(lw0, lw1)
    w0, w1 = q0 * math.exp(lw0 - m), q1 * math.exp(lw1 - m)
    s = w0 + w1
    with np.errstate(divide="ignore", invalid="ignore"):
        log_scale = np.where(s > 0, state.log_scale + m + np.log(s), -np.inf)
        probs = np.where(s[:, None] > 0, np.stack([w0, w1], axis=1) / s[:, None], state.probs)
    return FilterState(probs, log_scale)


@numba.njit(cache=True)
def _mmatrix_chain(D, j0, j1, decay, gdt, c, p10, p01, probs, log_scale):
    for j in range(j0, j1):
        mu0 = D[j] * decay
        d0 = D[j + 1] - mu0
        d1 = d0 - gdt
        lw0 = -c * d0 * d0
        lw1 = -c * d1 * d1
        m = max(lw0, lw1)
        e0 = math.exp(lw0 - m)
        e1 = math.exp(lw1 - m)
        for i in range(p10.size):
            a0 = probs[i, 0]
            a1 = probs[i, 1]
            q0 = a0 * (1.0 - p10[i]) + a1 * p01[i]
            q1 = a0 * p10[i] + a1 * (1.0 - p01[i])
            w0 = q0 * e0
            w1 = q1 * e1
            s = w0 + w1
            if s > 0.0:
                probs[i, 0] = w0 / s
                probs[i, 1] = w1 / s
                log_scale[i] += m + math.log(s)
            else:
                log_scale[i] = -math.inf


def advance_filter(state: FilterState, record: DetectorRecord, j0: int, j1: int,
                   r: TransitionRates, cfg: DetectorConfig) -> FilterState:
    """Apply steps j0..j1-1 of ``record`` with constant rates ``r``."""
    p10, p01 = propagator(r, cfg.dt)
    probs = np.array(state.probs, dtype=float, copy=True)
    log_scale = np.array(state.log_scale, dtype=float, copy=True)
    _mmatrix_chain(record.samples, j0, j1, math.exp(-cfg.gamma * cfg.dt), cfg.gamma * cfg.dt,
                   cfg.precision, np.ascontiguousarray(np.broadcast_to(p10, log_scale.shape), dtype=float),
                   np.ascontiguousarray(np.broadcast_to(p01, log_scale.shape), dtype=float),
                   probs, log_scale)
    return FilterState(probs, log_scale)


def _step_segments(record: DetectorRecord, schedule: GapSchedule):
    """(j0, j1, gap) step ranges; step j uses the gap in force at its start time."""
    n = record.n_steps
    t = record.start + record.dt * np.arange(n)
    gaps = np.array([schedule.gap_at(x) for x in t]) if len(schedule.gaps) > 1 else np.full(n, schedule.gaps[0])
    out = []
    j = 0
    while j < n:
        k = j
        while k < n and gaps[k] == gaps[j]:
            k += 1
        out.append((j, k, float(gaps[j])))
        j = k
    return out


def noisy_posterior(
    record: DetectorRecord,
    model: BathModel,
    schedule,
    grid: TemperatureGrid,
    cfg: DetectorConfig,
    prior: Posterior | None = None,
) -> Posterior:
    """Temperature posterior from a detector register via the discrete measurement filter."""
    schedule = as_schedule(schedule)
    prior = prior if prior is not None else flat_prior(grid)
    _check_dt(record, cfg)
    state = FilterState.thermal(rates(model, schedule.gap_at(record.start), grid.nodes))
    for j0, j1, gap in _step_segments(record, schedule):
        state = advance_filter(state, record, j0, j1, rates(model, gap, grid.nodes), cfg)
    return Posterior(grid, prior.log_weights + state.log_scale).normalize()


def _check_dt(record, cfg):
    if not math.isclose(record.dt, cfg.dt, rel_tol=1e-12):
        raise ValidationError("record dt does not match detector config")


@numba.njit(cache=True)
def _ks_chain(D, j0, j1, dt, gamma, lam, gin, gout, p1, logw, milstein):
    gain = 4.0 * lam / gamma
    var = gamma * gamma * dt / (4.0 * lam)
    n = p1.size
    for j in range(j0, j1):
        Dj = D[j]
        dD = D[j + 1] - Dj
        # posterior mean occupation at the start of the step
        m = -math.inf
        for i in range(n):
            if logw[i] > m:
                m = logw[i]
        tot = 0.0
        pbar = 0.0
        for i in range(n):
            w = math.exp(logw[i] - m)
            tot += w
            pbar += w * p1[i]
        pbar /= tot
        innov_bar = dD - gamma * (pbar - Dj) * dt
        for i in range(n):
            x = p1[i]
            a = gain * (x - pbar)
            innov = dD - gamma * (x - Dj) * dt
            g = gain * x * (1.0 - x)
            dlw = a * innov_bar - 2.0 * lam * (x - pbar) ** 2 * dt
            x = x + (gin[i] * (1.0 - x) - gout[i] * x) * dt + g * innov
            if milstein:
                corr = 0.5 * (innov * innov - var)
                dlw += gain * g * corr
                x += g * gain * (1.0 - 2.0 * p1[i]) * corr
            logw[i] += dlw
            if not (x >= 0.0 and x <= 1.0):
                return j
            p1[i] = x
        # keep log weights bounded
        m = -math.inf
        for i in range(n):
            if logw[i] > m:
                m = logw[i]
        for i in range(n):
            logw[i] -= m
    return -1


def ks_filter(
    record: DetectorRecord,
    model: BathModel,
    schedule,
    grid: TemperatureGrid,
    cfg: DetectorConfig,
    prior: Posterior | None = None,
    return_occupation: bool = False,
    scheme: str = "milstein",
):
    """Kushner-Stratonovich (continuous filtering) posterior, integrated to first order in dt.

    Per node, the conditioned excited population follows the Wonham equation
    with innovation dD - gamma (p1 - D) dt; the log posterior weight moves by
    a dI - a^2 sigma^2 dt / 2 with a = (4 lam / gamma)(p1 - mean p1) and dI
    the innovation of the posterior-mean prediction. ``scheme="milstein"``
    adds the (dI^2 - sigma^2 dt) corrections to both updates; "euler" is the
    plain first-order integration.
    """
    if scheme not in ("euler", "milstein"):
        raise ValidationError("scheme must be 'euler' or 'milstein'")
    schedule = as_schedule(schedule)
    prior = prior if prior is not None else flat_prior(grid)
    _check_dt(record, cfg)
    p1 = np.atleast_1d(np.asarray(rates(model, schedule.gap_at(record.start), grid.nodes).steady_excited,
                                  dtype=float)).copy()
    logw = prior.log_weights + np.log(grid.weights)
    logw = logw - logw.max()
    for j0, j1, gap in _step_segments(record, schedule):
        r = rates(model, gap, grid.nodes)
        bad = _ks_chain(record.samples, j0, j1, cfg.dt, cfg.gamma, cfg.lam,
                        np.atleast_1d(np.asarray(r.gamma_in, dtype=float)),
                        np.atleast_1d(np.asarray(r.gamma_out, dtype=float)), p1, logw,
                        scheme == "milstein")
        if bad >= 0:
            raise FilterInstabilityError(bad, "conditioned occupation left [0, 1]")
    if not np.all(np.isfinite(logw)):
        raise FilterInstabilityError(record.n_steps, "non-finite posterior weight")
    post = Posterior(grid, logw - np.log(grid.weights)).normalize()
    return (post, p1) if return_occupation else post


def innovations(record: DetectorRecord, model: BathModel, omega: float, T: float, cfg: DetectorConfig) -> np.ndarray:
    """Standardized one-step prediction errors of the register under temperature T."""
    r = rates(model, omega, T)
    p10, p01 = (float(v) for v in propagator(r, cfg.dt))
    p1 = float(r.steady_excited)
    D = record.samples
    out = np.empty(record.n_steps)
    var0 = cfg.noise_std**2
    decay = math.exp(-cfg.gamma * cfg.dt)
    gdt = cfg.gamma * cfg.dt
    c = cfg.precision
    for j in range(record.n_steps):
        q1 = (1 - p1) * p10 + p1 * (1 - p01)
        mean = D[j] * decay + gdt * q1
        out[j] = (D[j + 1] - mean) / math.sqrt(var0 + gdt**2 * q1 * (1 - q1))
        d0 = D[j + 1] - D[j] * decay
        w0 = (1 - q1) * math.exp(-c * d0**2)
        w1 = q1 * math.exp(-c * (d0 - gdt) ** 2)
        p1 = w1 / (w0 + w1) if w0 + w1 > 0 else q1
    return out


def write_record_csv(record: DetectorRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "D"])
        for t, d in zip(record.times, record.samples):
            w.writerow([repr(float(t)), repr(float(d))])


def read_record_csv(path) -> DetectorRecord:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time", "D"] or len(rows) < 3:
        raise ValidationError(f"{path}: not a record CSV")
    t = np.array([float(r[0]) for r in rows[1:]])
    D = np.array([float(r[1]) for r in rows[1:]])
    return DetectorRecord(float(t[1] - t[0]), D, None, float(t[0]))


@dataclass
class NoisyRun:
    trajectory: Trajectory
    record: DetectorRecord
    schedule: GapSchedule
    checkpoint_times: np.ndarray
    posteriors: list[Posterior]
    estimates: np.ndarray


def run_noisy_strategy(
    model: BathModel,
    prior: Posterior,
    T_true: float,
    tau: float,
    cfg: DetectorConfig,
    initial_gap: float,
    rng: np.random.Generator,
    adaptive: bool = False,
    update_interval: float | None = None,
    x_star: float | None = None,
    sample_times=None,
) -> NoisyRun:
    """Simulate probe, register and discrete filter together, segment by segment.

    Checkpoints (update times, sample times, tau) are snapped to the time
    step. In adaptive mode the gap becomes x* times the relative estimate at
    every update time.
    """
    from .strategy import default_update_interval, optimal_adaptive_ratio, adaptive_gap

    grid = prior.grid
    n_total = n_steps_for(tau, cfg.dt)
    marks = set()
    if adaptive:
        interval = update_interval or default_update_interval(model)
        if x_star is None:
            x_star = optimal_adaptive_ratio(model)[0]
        k = 1
        while k * interval < tau - 1e-12:
            marks.add(int(round(k * interval / cfg.dt)))
            k += 1
    update_steps = set(marks)
    if sample_times is not None:
        marks.update(int(round(t / cfg.dt)) for t in sample_times)
    steps = sorted(s for s in marks if 0 < s < n_total) + [n_total]

    gap = float(initial_gap)
    starts, gaps = [0.0], [gap]
    state = FilterState.thermal(rates(model, gap, grid.nodes))
    pieces, chunks = [], []
    posts, ests = [], []
    n_state: int | str = "thermal"
    D_last = None
    prev = 0
    samples = np.empty(n_total + 1)
    for s in steps:
        t0, t1 = prev * cfg.dt, s * cfg.dt
        piece = sample_trajectory(model, gap, T_true, t1, n0=n_state, rng=rng, start=t0)
        chunk = sample_record(piece, cfg, rng, D0=D_last)
        samples[prev : s + 1] = chunk.samples
        r = rates(model, gap, grid.nodes)
        full = DetectorRecord(cfg.dt, samples[: s + 1], None, 0.0)
        state = advance_filter(state, full, prev, s, r, cfg)
        post = Posterior(grid, prior.log_weights + state.log_scale).normalize()
        est = estimate_relative(post)
        pieces.append(piece)
        posts.append(post)
        ests.append(est)
        n_state = piece.n_final
        D_last = chunk.samples[-1]
        prev = s
        if adaptive and s in update_steps:
            new_gap = adaptive_gap(x_star, est, grid.nodes[0])
            if new_gap != gap:
                gap = new_gap
                starts.append(t1)
                gaps.append(gap)
    traj = concatenate(pieces)
    record = DetectorRecord(cfg.dt, samples, traj, 0.0)
    return NoisyRun(traj, record, GapSchedule(tuple(starts), tuple(gaps), end=tau),
                    np.array(steps) * cfg.dt, posts, np.array(ests))
