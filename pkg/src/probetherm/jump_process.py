"""Two-level probe coupled to a thermal bath: rates, relaxation, jump trajectories.

Units: energies and temperatures in units of a reference energy, times in its
inverse, k_B = hbar = 1.  State 0 is the ground state, 1 the excited state.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised for physically invalid parameters (exit code 2 at the CLI)."""


class BathKind(str, enum.Enum):
    BOSONIC = "bosonic"
    FERMIONIC = "fermionic"


class Direction(enum.IntEnum):
    DOWN = -1
    UP = 1


class InitMode(str, enum.Enum):
    """How the initial probe state enters the likelihood.

    FIXED: the preparation is known and temperature independent (p_{n0} = 1).
    THERMAL: n0 is drawn from the steady state at the (candidate) temperature.
    """

    FIXED = "fixed"
    THERMAL = "thermal"


@dataclass(frozen=True)
class BathModel:
    """Bosonic Ohmic bath (kappa(w) = coupling * w) or fermionic flat bath (rate = coupling)."""

    kind: BathKind
    coupling: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BathKind(self.kind))
        if not (self.coupling > 0 and math.isfinite(self.coupling)):
            raise ValidationError(f"coupling must be > 0, got {self.coupling}")

    @classmethod
    def bosonic(cls, coupling: float = 1.0) -> "BathModel":
        return cls(BathKind.BOSONIC, coupling)

    @classmethod
    def fermionic(cls, coupling: float = 1.0) -> "BathModel":
        return cls(BathKind.FERMIONIC, coupling)

    def spectral_rate(self, omega):
        """kappa(omega) for bosonic baths, the flat rate for fermionic ones."""
        if self.kind is BathKind.BOSONIC:
            return self.coupling * np.asarray(omega, dtype=float)
        return self.coupling * np.ones_like(np.asarray(omega, dtype=float))


@dataclass(frozen=True)
class ProbeConfig:
    gap: float
    initial_excited_prob: float = 0.0

    def __post_init__(self):
        if not self.gap > 0:
            raise ValidationError(f"gap must be > 0, got {self.gap}")
        if not 0.0 <= self.initial_excited_prob <= 1.0:
            raise ValidationError("initial_excited_prob must lie in [0, 1]")


@dataclass(frozen=True)
class TransitionRates:
    """Jump rates 0->1 (gamma_in) and 1->0 (gamma_out) with their T-derivatives.

    Fields may be scalars or arrays (broadcast over a temperature grid).
    ``log_gamma_in``/``log_gamma_out`` are computed without forming the
    rates first, so they stay finite deep in the frozen regime.
    """

    gamma_in: np.ndarray
    gamma_out: np.ndarray
    dgamma_in_dT: np.ndarray
    dgamma_out_dT: np.ndarray
    log_gamma_in: np.ndarray
    log_gamma_out: np.ndarray
    dlog_gamma_in_dT: np.ndarray
    dlog_gamma_out_dT: np.ndarray

    @property
    def total(self):
        return self.gamma_in + self.gamma_out

    @property
    def steady_excited(self):
        """Steady-state excited population gamma_in / (gamma_in + gamma_out)."""
        return self.gamma_in / self.total


def _check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite and > 0")
    return arr


def rates(model: BathModel, omega, T) -> TransitionRates:
    """Detailed-balance rates for a probe of gap ``omega`` at temperature ``T``.

    Bosonic: gamma_in = kappa n_B, gamma_out = kappa (n_B + 1), kappa = coupling*omega.
    Fermionic: gamma_in = G n_F, gamma_out = G (1 - n_F).
    """
    omega = _check_positive("omega", omega)
    T = _check_positive("T", T)
    x = omega / T
    ex = np.exp(-x)
    kappa = model.spectral_rate(omega)
    if model.kind is BathKind.BOSONIC:
        # n_B + 1 = 1/(1 - e^-x), n_B = e^-x/(1 - e^-x)
        one_minus = -np.expm1(-x)
        occ_out = 1.0 / one_minus
        occ_in = ex * occ_out
        log_occ_out = -np.log(one_minus)
        log_occ_in = -x + log_occ_out
        docc = (x / T) * occ_in * occ_out
        d_in, d_out = docc, docc
        dlog_in, dlog_out = (x / T) * occ_out, (x / T) * occ_in
    else:
        occ_out = 1.0 / (1.0 + ex)
        occ_in = ex * occ_out
        log_occ_out = -np.log1p(ex)
        log_occ_in = -x + log_occ_out
        docc = (x / T) * occ_in * occ_out
        d_in, d_out = docc, -docc
        dlog_in, dlog_out = (x / T) * occ_out, -(x / T) * occ_in
    log_kappa = np.log(kappa)
    return TransitionRates(
        gamma_in=kappa * occ_in,
        gamma_out=kappa * occ_out,
        dgamma_in_dT=kappa * d_in,
        dgamma_out_dT=kappa * d_out,
        log_gamma_in=log_kappa + log_occ_in,
        log_gamma_out=log_kappa + log_occ_out,
        dlog_gamma_in_dT=dlog_in,
        dlog_gamma_out_dT=dlog_out,
    )


def occupation(p1_0, r: TransitionRates, t):
    """Excited-state population p_1(t) relaxing from ``p1_0`` under rates ``r``."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("t must be >= 0")
    p_ss = r.steady_excited
    return np.exp(-r.total * t) * (p1_0 - p_ss) + p_ss


def propagator(r: TransitionRates, dt):
    """Transition probabilities (p(1|0), p(0|1)) over an interval ``dt``."""
    total = np.asarray(r.total, dtype=float)
    # (1 - e^{-total dt}) / total, with its dt limit when both rates vanish
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(total > 0, -np.expm1(-total * dt) / total, dt)
    if frac.ndim == 0:
        frac = float(frac)
    return r.gamma_in * frac, r.gamma_out * frac


@dataclass(frozen=True)
class Trajectory:
    """Telegraph trajectory n(t) on [start, tau].

    ``jump_times`` are strictly increasing and lie in (start, tau]; the jump
    directions alternate starting from ``n0`` and are therefore implied.
    """

    n0: int
    jump_times: np.ndarray
    tau: float
    start: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float).reshape(-1)
        object.__setattr__(self, "jump_times", times)
        if self.n0 not in (0, 1):
            raise ValidationError("n0 must be 0 or 1")
        if not self.tau > self.start:
            raise ValidationError("tau must exceed the start time")
        if times.size:
            if np.any(np.diff(times) <= 0):
                raise ValidationError("jump times must be strictly increasing")
            if times[0] <= self.start or times[-1] > self.tau:
                raise ValidationError("jump times must lie in (start, tau]")

    @property
    def duration(self) -> float:
        return self.tau - self.start

    @property
    def n_final(self) -> int:
        return (self.n0 + self.jump_times.size) % 2

    @property
    def events(self) -> list[tuple[float, Direction]]:
        out = []
        state = self.n0
        for t in self.jump_times:
            out.append((float(t), Direction.UP if state == 0 else Direction.DOWN))
            state = 1 - state
        return out

    def state_at(self, t):
        """n(t); right-continuous, so a jump at t is already counted."""
        count = np.searchsorted(self.jump_times, t, side="right")
        return (self.n0 + count) % 2

    def slice(self, t0: float, t1: float) -> "Trajectory":
        """The sub-trajectory on [t0, t1], keeping absolute times."""
        if not (self.start <= t0 < t1 <= self.tau):
            raise ValidationError("slice bounds outside trajectory")
        n_start = int(self.state_at(t0))
        times = self.jump_times
        inner = times[(times > t0) & (times <= t1)]
        return Trajectory(n_start, inner, t1, start=t0)


@dataclass(frozen=True)
class SufficientStats:
    k: int
    l: int
    tau1: float
    duration: float
    n0: int


def sufficient_stats(traj: Trajectory) -> SufficientStats:
    """Up-jump count k, down-jump count l, time tau1 spent in the excited state."""
    m = traj.jump_times.size
    edges = np.concatenate(([traj.start], traj.jump_times, [traj.tau]))
    dwell = np.diff(edges)
    # dwell[i] is spent in state n0 + i (mod 2)
    excited = dwell[1 - traj.n0 :: 2]
    tau1 = float(math.fsum(excited))
    up = (m + 1) // 2 if traj.n0 == 0 else m // 2
    return SufficientStats(k=up, l=m - up, tau1=tau1, duration=traj.duration, n0=traj.n0)


def sample_trajectory(
    model: BathModel,
    omega: float,
    T: float,
    tau: float,
    n0: int | str | InitMode = InitMode.THERMAL,
    rng: np.random.Generator | None = None,
    start: float = 0.0,
) -> Trajectory:
    """Exact event-driven sample of the two-state jump process on [start, tau].

    ``n0`` is either a fixed state (0 or 1) or ``InitMode.THERMAL``/"thermal"
    for a draw from the steady state at ``T``.
    """
    if rng is None:
        rng = np.random.default_rng()
    if not tau > start:
        raise ValidationError("tau must be > 0")
    r = rates(model, omega, T)
    if isinstance(n0, (str, InitMode)):
        if InitMode(n0) is not InitMode.THERMAL:
            raise ValidationError("n0 must be a state or 'thermal'")
        state = int(rng.random() < float(r.steady_excited))
    else:
        state = int(n0)
    out_rate = (float(r.gamma_in), float(r.gamma_out))
    first = state
    times = []
    t = start
    while True:
        rate = out_rate[state]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t > tau:
            break
        times.append(t)
        state = 1 - state
    return Trajectory(first, np.array(times, dtype=float), tau, start=start)


def _log_p_n0(n0: int, r: TransitionRates, init: InitMode):
    if init is InitMode.FIXED:
        return 0.0
    total = r.gamma_in + r.gamma_out
    return (r.log_gamma_in if n0 == 1 else r.log_gamma_out) - np.log(total)


def log_likelihood_stats(stats: SufficientStats, model: BathModel, omega, T, init=InitMode.FIXED):
    """Log trajectory density from sufficient statistics, vectorized over ``T``.

    Non-positive temperatures map to -inf.
    """
    init = InitMode(init)
    T = np.asarray(T, dtype=float)
    valid = T > 0
    Tv = np.where(valid, T, 1.0)
    r = rates(model, omega, Tv)
    ll = (
        _log_p_n0(stats.n0, r, init)
        + stats.k * r.log_gamma_in
        + stats.l * r.log_gamma_out
        - r.gamma_in * (stats.duration - stats.tau1)
        - r.gamma_out * stats.tau1
    )
    ll = np.where(valid, ll, -np.inf)
    return ll if ll.ndim else float(ll)


def log_likelihood(traj: Trajectory, model: BathModel, omega, T, init=InitMode.FIXED):
    """ln rho(traj | T) = ln p_{n0} + k ln G_in + l ln G_out - G_in (tau - tau1) - G_out tau1."""
    return log_likelihood_stats(sufficient_stats(traj), model, omega, T, init)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """CSV with header ``time,state``: start row, one row per jump, final row at tau."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "state"])
        w.writerow([repr(float(traj.start)), traj.n0])
        state = traj.n0
        for t in traj.jump_times:
            state = 1 - state
            w.writerow([repr(float(t)), state])
        w.writerow([repr(float(traj.tau)), state])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["time", "state"] or len(rows) < 3:
        raise ValidationError(f"{path}: not a trajectory CSV")
    body = [(float(t), int(s)) for t, s in rows[1:]]
    start, n0 = body[0]
    tau, n_last = body[-1]
    jumps = body[1:-1]
    state = n0
    for _, s in jumps:
        if s != 1 - state:
            raise ValidationError(f"{path}: states must alternate")
        state = s
    if n_last != state:
        raise ValidationError(f"{path}: final row state mismatch")
    return Trajectory(n0, np.array([t for t, _ in jumps], dtype=float), tau, start=start)


def concatenate(parts: Sequence[Trajectory]) -> Trajectory:
    """Join consecutive trajectory pieces that share their boundary states."""
    for a, b in zip(parts, parts[1:]):
        if a.tau != b.start or a.n_final != b.n0:
            raise ValidationError("trajectory pieces are not contiguous")
    times = np.concatenate([p.jump_times for p in parts]) if parts else np.empty(0)
    return Trajectory(parts[0].n0, times, parts[-1].tau, start=parts[0].start)


@dataclass(frozen=True)
class GapSchedule:
    """Piecewise-constant gap: ``gaps[i]`` applies on [starts[i], starts[i+1])."""

    starts: tuple[float, ...]
    gaps: tuple[float, ...]
    end: float = field(default=math.inf)

    def __post_init__(self):
        starts = tuple(float(s) for s in self.starts)
        gaps = tuple(float(g) for g in self.gaps)
        object.__setattr__(self, "starts", starts)
        object.__setattr__(self, "gaps", gaps)
        if len(starts) != len(gaps) or not starts:
            raise ValidationError("schedule needs matching, non-empty starts and gaps")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValidationError("segment start times must be strictly increasing")
        if any(not g > 0 for g in gaps):
            raise ValidationError("all gaps must be > 0")

    @classmethod
    def constant(cls, omega: float, start: float = 0.0) -> "GapSchedule":
        return cls((start,), (omega,))

    def gap_at(self, t: float) -> float:
        i = int(np.searchsorted(self.starts, t, side="right")) - 1
        return self.gaps[max(i, 0)]

    def segments(self, t0: float, t1: float) -> list[tuple[float, float, float]]:
        """(seg_start, seg_end, gap) pieces covering [t0, t1]."""
        if t0 < self.starts[0]:
            raise ValidationError("schedule does not cover the trajectory start")
        bounds = list(self.starts[1:]) + [math.inf]
        out = []
        for s, e, g in zip(self.starts, bounds, self.gaps):
            lo, hi = max(s, t0), min(e, t1)
            if hi > lo:
                out.append((lo, hi, g))
        return out


def as_schedule(omega) -> GapSchedule:
    if isinstance(omega, GapSchedule):
        return omega
    return GapSchedule.constant(float(omega))


def schedule_log_likelihood(traj: Trajectory, model: BathModel, schedule, T, init=InitMode.FIXED):
    """Log-likelihood of a trajectory recorded under a piecewise-constant gap.

    The first segment uses ``init``; later segments condition on the observed
    boundary state.
    """
    schedule = as_schedule(schedule)
    total = 0.0
    for i, (lo, hi, gap) in enumerate(schedule.segments(traj.start, traj.tau)):
        piece = traj.slice(lo, hi) if (lo, hi) != (traj.start, traj.tau) else traj
        mode = InitMode(init) if (i == 0 and lo == traj.start) else InitMode.FIXED
        total = total + log_likelihood(piece, model, gap, T, mode)
    return total
