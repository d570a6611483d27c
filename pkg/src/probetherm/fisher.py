"""Fisher information of two-level jump trajectories with respect to temperature."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jump_process import BathKind, BathModel, InitMode, TransitionRates, ValidationError, rates


@dataclass(frozen=True)
class FisherBreakdown:
    initial_term: float
    transient_term: float
    linear_term: float

    @property
    def total(self) -> float:
        return self.initial_term + self.transient_term + self.linear_term


def _rate_fisher_coefficient(r: TransitionRates):
    """Growth rate of the Fisher information per unit time in the steady state."""
    return r.gamma_in * (1 - r.steady_excited) * (r.dlog_gamma_in_dT**2 + r.dlog_gamma_out_dT**2)


def initial_state_fisher_rates(r: TransitionRates):
    """Fisher information of a steady-state initial population, for generic rates."""
    num = (r.dgamma_out_dT * r.gamma_in - r.gamma_out * r.dgamma_in_dT) ** 2
    return num / (r.gamma_out * r.gamma_in * r.total**2)


def fisher_initial_state(model: BathModel, omega, T):
    return initial_state_fisher_rates(rates(model, omega, T))


def thermal_state_fisher(omega, T):
    """omega^2 / (2 T^4 (1 + cosh(omega/T))); equals the steady-state value under detailed balance."""
    omega = np.asarray(omega, dtype=float)
    T = np.asarray(T, dtype=float)
    return omega**2 / (2 * T**4) / (1 + np.cosh(omega / T))


def fisher_finite_time(
    model: BathModel,
    omega: float,
    T: float,
    tau: float,
    p1_0: float = 0.0,
    init=InitMode.FIXED,
) -> FisherBreakdown:
    """Exact Fisher information of a trajectory of length ``tau``.

    With ``init="thermal"`` the initial population is the steady state at
    ``T`` (``p1_0`` is ignored) and contributes its own Fisher term.
    """
    init = InitMode(init)
    if not tau >= 0:
        raise ValidationError("tau must be >= 0")
    r = rates(model, omega, T)
    total = r.total
    if init is InitMode.THERMAL:
        p1 = r.steady_excited
        f0 = initial_state_fisher_rates(r)
    else:
        if not 0 <= p1_0 <= 1:
            raise ValidationError("p1_0 must lie in [0, 1]")
        p1 = p1_0
        f0 = 0.0
    p0 = 1 - p1
    decay = -np.expm1(-total * tau)
    transient = (
        decay * (r.gamma_in * p0 - r.gamma_out * p1) / total**2
        * (r.dgamma_in_dT**2 / r.gamma_in - r.dgamma_out_dT**2 / r.gamma_out)
    )
    linear = _rate_fisher_coefficient(r) * tau
    return FisherBreakdown(float(f0), float(transient), float(linear))


def fisher_finite_time_main_text(model, omega, T, tau, p1_0=0.0, init=InitMode.FIXED) -> float:
    """Same quantity written with the symmetric occupation-weighted bracket.

    Kept as an independent transcription; it is algebraically identical to
    :func:`fisher_finite_time`.
    """
    init = InitMode(init)
    r = rates(model, omega, T)
    total = r.total
    if init is InitMode.THERMAL:
        p1 = r.steady_excited
        f0 = initial_state_fisher_rates(r)
    else:
        p1, f0 = p1_0, 0.0
    p0 = 1 - p1
    w = -np.expm1(-total * tau) / total
    bracket = p0 * r.dgamma_in_dT**2 / r.gamma_in + p1 * r.dgamma_out_dT**2 / r.gamma_out
    return float(f0 + bracket * w + _rate_fisher_coefficient(r) * (tau - w))


def fisher_long_time(model: BathModel, omega, T, tau):
    """Part of the Fisher information that grows linearly with ``tau``. Broadcasts over T."""
    return _rate_fisher_coefficient(rates(model, omega, T)) * tau


def fisher_long_time_closed_form(model: BathModel, omega, T, tau):
    """Bath-specific closed forms of :func:`fisher_long_time`."""
    omega = np.asarray(omega, dtype=float)
    T = np.asarray(T, dtype=float)
    x = omega / T
    pref = omega**2 / (8 * T**4)
    if model.kind is BathKind.BOSONIC:
        shape = np.cosh(x) / (np.sinh(x / 2) ** 3 * np.cosh(x / 2))
    else:
        shape = np.cosh(x) / np.cosh(x / 2) ** 4
    return model.spectral_rate(omega) * tau * pref * shape


def _transition_probs_and_derivs(r: TransitionRates, dt):
    total = r.total
    dtotal = r.dgamma_in_dT + r.dgamma_out_dT
    decay = -np.expm1(-total * dt)
    ddecay = dt * dtotal * np.exp(-total * dt)
    a_in = r.gamma_in / total
    a_out = r.gamma_out / total
    da_in = (r.dgamma_in_dT * total - r.gamma_in * dtotal) / total**2
    da_out = -da_in
    p10 = a_in * decay
    p01 = a_out * decay
    dp10 = da_in * decay + a_in * ddecay
    dp01 = da_out * decay + a_out * ddecay
    return p10, p01, dp10, dp01


def transition_fisher(r: TransitionRates, dt):
    """Fisher information of one step out of state 0 and out of state 1."""
    p10, p01, dp10, dp01 = _transition_probs_and_derivs(r, dt)
    return dp10**2 / (p10 * (1 - p10)), dp01**2 / (p01 * (1 - p01))


def _initial_fisher(r: TransitionRates, p1_0, init: InitMode):
    if init is InitMode.THERMAL:
        return r.steady_excited, initial_state_fisher_rates(r)
    return p1_0, 0.0


def fisher_discrete_recursion(
    model: BathModel, omega: float, T: float, dt: float, N: int, p1_0: float = 0.0, init=InitMode.FIXED
) -> float:
    """Fisher information of the chain sampled at N steps of ``dt`` (closed-form geometric sum)."""
    init = InitMode(init)
    if not dt > 0 or N < 0:
        raise ValidationError("need dt > 0 and N >= 0")
    r = rates(model, omega, T)
    p1, f0 = _initial_fisher(r, p1_0, init)
    p0 = 1 - p1
    if N == 0:
        return float(f0)
    j0, j1 = transition_fisher(r, dt)
    total = r.total
    # sum_{j<N} lam^j, written to stay accurate when lam -> 1
    geo = np.expm1(-total * dt * N) / np.expm1(-total * dt)
    v1_term = N * (j0 * r.gamma_out + j1 * r.gamma_in)
    v2_term = geo * (r.gamma_in * p0 - r.gamma_out * p1) * (j0 - j1)
    return float((v1_term + v2_term) / total + f0)


def fisher_discrete_iterative(
    model: BathModel, omega: float, T: float, dt: float, N: int, p1_0: float = 0.0, init=InitMode.FIXED
) -> float:
    """Step-by-step accumulation of (1,1) J K^j p; O(N) reference for the closed form."""
    init = InitMode(init)
    r = rates(model, omega, T)
    p1, f = _initial_fisher(r, p1_0, init)
    p10, p01, _, _ = _transition_probs_and_derivs(r, dt)
    j0, j1 = transition_fisher(r, dt)
    p = np.array([1 - p1, p1], dtype=float)
    K = np.array([[1 - p10, p01], [p10, 1 - p01]], dtype=float)
    jrow = np.array([j0, j1], dtype=float)
    acc = 0.0
    for _ in range(N):
        acc += jrow @ p
        p = K @ p
    return float(acc + f)


def crb_integral(model: BathModel, omega: float, tau: float, prior, finite_time: bool = False, init=InitMode.THERMAL):
    """Prior average of 1/(T^2 F) by trapezoidal quadrature on the prior's grid.

    ``prior`` is a normalized :class:`~probetherm.inference.Posterior`. The
    tau-linear Fisher information is used unless ``finite_time`` is set.
    """
    nodes = prior.grid.nodes
    if nodes.size < 2 and not prior.grid.is_point:
        raise ValidationError("quadrature needs at least 2 grid nodes")
    if not tau > 0:
        raise ValidationError("tau must be > 0")
    if finite_time:
        F = np.array([fisher_finite_time(model, omega, t, tau, init=init).total for t in nodes])
    else:
        F = fisher_long_time(model, omega, nodes, tau)
    with np.errstate(divide="ignore", over="ignore"):
        return prior.expect(1.0 / (nodes**2 * F))
