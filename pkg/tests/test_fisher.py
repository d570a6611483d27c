
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probetherm.fisher import (
    fisher_discrete_iterative,
    fisher_discrete_recursion,
    fisher_finite_time,
    fisher_finite_time_main_text,
    fisher_initial_state,
    fisher_long_time,
    fisher_long_time_closed_form,
    initial_state_fisher_rates,
    thermal_state_fisher,
)
from probetherm.jump_process import BathModel, InitMode, rates
from probetherm.strategy import fisher_shape

import mc_oracles
import oracles

BOS, FER = BathModel.bosonic(), BathModel.fermionic()
BATHS = [BOS, FER]

# frozen from tests/oracles.py (time integral of rate * (d ln rate)^2, 30 digits)
ORACLE_FIXED = [
    (BOS, 0.46, 1.0, 10.0, 0.0, 10.5949033773295895603),
    (FER, 1.5, 0.7, 3.0, 1.0, 1.55373665685119932263),
]
ORACLE_THERMAL = [
    (BOS, 0.46, 1.0, 10.0, 10.5591572121383048410),
    (FER, 1.5, 0.7, 3.0, 3.02605342934659848653),
]


@pytest.mark.parametrize("model,w,T,tau,p1,want", ORACLE_FIXED)
def test_finite_time_fixed_start_matches_oracle(model, w, T, tau, p1, want):
    assert fisher_finite_time(model, w, T, tau, p1_0=p1).total == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("model,w,T,tau,want", ORACLE_THERMAL)
def test_finite_time_thermal_start_matches_oracle(model, w, T, tau, want):
    assert fisher_finite_time(model, w, T, tau, init=InitMode.THERMAL).total == pytest.approx(want, rel=1e-12)


def test_oracle_recomputation_agrees():
    got = oracles.fisher_fixed_start("bosonic", 0.8, 2.0, 1.5, 0.3)
    assert fisher_finite_time(BOS, 0.8, 2.0, 1.5, p1_0=0.3).total == pytest.approx(float(got), rel=1e-12)


def test_zero_duration():
    assert fisher_finite_time(BOS, 1.0, 1.0, 0.0).total == 0.0
    f = fisher_finite_time(FER, 1.3, 0.8, 0.0, init="thermal").total
    assert f == pytest.approx(float(thermal_state_fisher(1.3, 0.8)), rel=1e-12)


@pytest.mark.parametrize("model", BATHS, ids=["bos", "fer"])
def test_transcriptions_of_transient_term_agree(model):
    # the symmetric bracket and the steady-state-difference form are the same function
    for w in (0.3, 1.0, 2.5):
        for T in (0.4, 1.0, 3.0):
            for tau in (0.1, 1.0, 10.0):
                for init, p1 in ((InitMode.FIXED, 0.0), (InitMode.FIXED, 1.0), (InitMode.THERMAL, 0.0)):
                    a = fisher_finite_time(model, w, T, tau, p1_0=p1, init=init).total
                    b = fisher_finite_time_main_text(model, w, T, tau, p1_0=p1, init=init)
                    assert a == pytest.approx(b, rel=1e-12)


def test_adaptive_ratio_constants():
    T = np.array([0.3, 1.0, 4.0])
    F = fisher_long_time(BOS, 2.4750 * T, T, 1.0)
    assert np.allclose(T**2 * F / T, 1.5430, rtol=1e-4)
    F = fisher_long_time(FER, 2.6672 * T, T, 1.0)
    assert np.allclose(T**2 * F, 0.3795, rtol=1e-4)


@pytest.mark.parametrize("model", BATHS, ids=["bos", "fer"])
def test_long_time_closed_form_identity(model):
    w, T = np.meshgrid(np.geomspace(0.05, 20, 6), np.geomspace(0.1, 10, 5))
    a = fisher_long_time(model, w, T, 1.0)
    b = fisher_long_time_closed_form(model, w, T, 1.0)
    assert np.allclose(a, b, rtol=1e-10, atol=0)
    coupling = model.coupling * (T if model.kind.value == "bosonic" else 1.0)
    assert np.allclose(T**2 * a / coupling, fisher_shape(model.kind, w / T), rtol=1e-10)


def test_initial_state_fisher_forms_agree():
    for model in BATHS:
        for w in np.geomspace(0.1, 10, 6):
            for T in np.geomspace(0.1, 10, 5):
                a = fisher_initial_state(model, w, T)
                assert a == pytest.approx(float(thermal_state_fisher(w, T)), rel=1e-10)


def test_thermal_state_fisher_limits():
    assert float(thermal_state_fisher(200.0, 1.0)) < 1e-80
    w, T = 1e-4, 1.3
    assert float(thermal_state_fisher(w, T)) == pytest.approx(w**2 / (4 * T**4), rel=1e-7)


def test_discrete_widely_spaced_samples_are_independent_probes():
    r = rates(FER, 1.0, 1.0)
    dt = 60.0 / float(r.total)
    feq = float(thermal_state_fisher(1.0, 1.0))
    for N in (0, 1, 5):
        got = fisher_discrete_recursion(FER, 1.0, 1.0, dt, N, init="thermal")
        assert got == pytest.approx((N + 1) * feq, rel=1e-10)


def test_discrete_empty_product():
    assert fisher_discrete_recursion(BOS, 1.0, 1.0, 0.1, 0, init="thermal") == pytest.approx(
        float(thermal_state_fisher(1.0, 1.0)))
    assert fisher_discrete_recursion(BOS, 1.0, 1.0, 0.1, 0) == 0.0


@pytest.mark.parametrize("init,p1", [(InitMode.FIXED, 0.0), (InitMode.FIXED, 1.0), (InitMode.THERMAL, 0.0)])
def test_discrete_closed_form_matches_iteration(init, p1):
    for model in BATHS:
        for dt, N in ((0.05, 37), (0.5, 11), (2.0, 4)):
            a = fisher_discrete_recursion(model, 0.9, 1.4, dt, N, p1_0=p1, init=init)
            b = fisher_discrete_iterative(model, 0.9, 1.4, dt, N, p1_0=p1, init=init)
            assert a == pytest.approx(b, rel=1e-10)


PARAM_GRID = [(m, w, T, tau) for m in BATHS for (w, T, tau) in
              [(0.46, 1.0, 5.0), (2.0, 0.5, 20.0), (0.2, 5.0, 1.0), (1.5, 1.5, 3.0), (4.0, 2.0, 8.0)]]


@pytest.mark.parametrize("model,w,T,tau", PARAM_GRID)
def test_discretization_converges_to_continuous_fisher(model, w, T, tau):
    total = float(rates(model, w, T).total)
    f = fisher_finite_time(model, w, T, tau).total
    scales = np.array([2e-3, 1e-3, 5e-4, 2.5e-4])
    errs = []
    for scale in scales:
        N = int(round(tau * total / scale))
        errs.append(abs(fisher_discrete_recursion(model, w, T, tau / N, N) - f))
    # first order in dt: fitted log-log slope near 1
    slope = np.polyfit(np.log(scales), np.log(errs), 1)[0]
    assert 0.9 < slope < 1.2
    dt = 1e-4 / total
    N = int(round(tau / dt))
    assert fisher_discrete_recursion(model, w, T, tau / N, N) == pytest.approx(f, rel=1e-3)


@settings(max_examples=50, deadline=None)
@given(w=st.floats(0.05, 10), T=st.floats(0.1, 10), tau=st.floats(0.0, 50), fermi=st.booleans(),
       p1=st.floats(0, 1), thermal=st.booleans())
def test_monotone_and_nonnegative(w, T, tau, fermi, p1, thermal):
    model = BATHS[int(fermi)]
    init = InitMode.THERMAL if thermal else InitMode.FIXED
    a = fisher_finite_time(model, w, T, tau, p1_0=p1, init=init).total
    b = fisher_finite_time(model, w, T, tau * 1.1 + 0.01, p1_0=p1, init=init).total
    assert a >= 0
    assert b >= a * (1 - 1e-12)


@pytest.mark.parametrize("model", BATHS, ids=["bos", "fer"])
def test_long_time_ratio(model):
    for w, T in ((0.46, 1.0), (2.0, 3.0)):
        total = float(rates(model, w, T).total)
        tau = 1e3 / total
        ratio = fisher_finite_time(model, w, T, tau).total / fisher_long_time(model, w, T, tau)
        assert ratio == pytest.approx(1.0, abs=0.01)


def test_generic_rate_initial_fisher_positive():
    r = rates(BOS, np.array([0.1, 1.0, 10.0]), 1.0)
    assert np.all(initial_state_fisher_rates(r) > 0)


@pytest.mark.parametrize(
    "model,w,T,tau,init",
    [(BOS, 1.0, 1.0, 5.0, InitMode.THERMAL), (FER, 1.5, 0.7, 3.0, InitMode.FIXED)],
)
def test_score_variance_matches_fisher(model, w, T, tau, init):
    var, se = mc_oracles.score_variance(model, w, T, tau, 20_000, seed=17, init=init)
    f = fisher_finite_time(model, w, T, tau, init=init).total
    assert var == pytest.approx(f, rel=0.05)
    assert abs(var - f) < 4 * se
