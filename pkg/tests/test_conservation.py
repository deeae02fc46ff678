import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import FD2_RESOLUTIONS, INV_SQRT2, killing_fields, random_map, spectral_map
from polyharmonic.chart_geometry import linear_field, rotation_field_stereographic
from polyharmonic.conservation import (
    UnsupportedModeError,
    biharmonic_current,
    conservation_residual,
    current_covector,
    harmonic_current,
    lie_tension_sq_residual,
    noether_current,
    refine,
    stress_energy,
    stress_energy_residual,
)
from polyharmonic.grid import DomainGrid
from polyharmonic.map_calculus import BITENSION_SIGN, SIGMA, k_tension
from polyharmonic.maps import constant_map, great_circle, random_sphere_map, small_circle, to_stereographic
from polyharmonic.sphere_extrinsic import killing_from_generator, random_generator

ROT_E3 = killing_from_generator(np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
SPEC1 = DomainGrid((64,), backend="spectral")


def _orders(build, check):
    return refine(build, check, FD2_RESOLUTIONS, order_range=(1.7, 2.3))


@pytest.mark.parametrize("k", [1, 2])
def test_current_identity_order_two(k):
    X = killing_fields()[0]
    rep = _orders(lambda N: random_map(N, 0), lambda u: conservation_residual(u, X, k))
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_current_identity_spectral(k):
    X = killing_fields()[1]
    assert conservation_residual(spectral_map(2), X, k).finest.linf < 1e-8


@pytest.mark.parametrize("k", [5, 6, 7])
def test_current_identity_higher_orders_spectral(k):
    u = random_map(64, 0, "spectral", precision="extended", dealias=True)
    rep = conservation_residual(u, killing_fields()[2], k)
    assert rep.finest.linf < 1e-6 * max(1.0, rep.meta["tau_k_linf"])


def test_stress_energy_identity_order_two():
    rep = _orders(lambda N: random_map(N, 1), lambda u: stress_energy_residual(u, 2))
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("k", [2, 3, 4])
def test_stress_energy_identity_spectral(k):
    assert stress_energy_residual(spectral_map(0), k).finest.linf < 1e-8


def test_great_circle_current_is_constant():
    u = great_circle(SPEC1)
    J = noether_current(u, ROT_E3, 1)
    # oriented so that div J^1 = -<tau, X>; the harmonic current keeps the other orientation
    assert np.max(np.abs(J.values + 1)) < 1e-12
    assert np.max(np.abs(harmonic_current(u, ROT_E3).values - 1)) < 1e-12
    assert np.max(np.abs(J.divergence())) < 1e-12


def test_small_circle_biharmonic_current_conserved():
    u = small_circle(SPEC1, INV_SQRT2)
    assert np.max(np.abs(noether_current(u, ROT_E3, 2).divergence())) < 1e-9
    X = killing_from_generator(random_generator(3, 4))
    assert np.max(np.abs(noether_current(u, X, 2).divergence())) < 1e-9


def test_constant_map_has_no_current():
    u = constant_map(DomainGrid((16, 16)), [0.0, 0.0, 1.0, 0.0])
    for k in (1, 2, 3):
        assert np.all(noether_current(u, killing_fields()[0], k).values == 0)
    for k in (2, 3):
        assert np.all(stress_energy(u, k).values == 0)


def test_harmonic_map_both_sides_small():
    u = great_circle(DomainGrid((64,)))
    rep = conservation_residual(u, ROT_E3, 1)
    assert rep.passed
    assert rep.meta["tau_k_linf"] < rep.tolerance


def test_even_current_matches_biharmonic_current():
    u = random_map(32, 3, "spectral")
    X = killing_fields()[0]
    even = noether_current(u, X, 2).values
    direct = biharmonic_current(u, X).values
    # J^2 from the even family is -1 times the k=2 current paired with the bitension
    assert np.max(np.abs(even + direct)) < 1e-12
    div_direct = u.domain.divergence(direct)
    pairing = np.sum(k_tension(u, 2).values * u.calc.field_along(X), -1)
    assert np.max(np.abs(div_direct - BITENSION_SIGN * SIGMA * pairing)) < 1e-8


@settings(max_examples=10, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), k=st.integers(1, 4))
def test_current_is_linear_in_X(a, b, k):
    u = random_map(16, 4, "spectral")
    A1, A2 = random_generator(4, 0), random_generator(4, 1)
    lhs = current_covector(u, killing_from_generator(a * A1 + b * A2), k)
    rhs = a * current_covector(u, killing_from_generator(A1), k) + b * current_covector(u, killing_from_generator(A2), k)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * (1 + np.max(np.abs(rhs)))


@pytest.mark.parametrize("k", [2, 3, 4])
def test_stress_energy_exactly_symmetric(k):
    S = stress_energy(random_map(16, 2, "spectral"), k).values
    assert np.array_equal(S, np.swapaxes(S, -1, -2))


def test_small_circle_stress_energy_by_hand():
    """s = 1 on a circle: S_11 = -1/2 |tau|^2 - <dphi, nabla tau> + 2 <dphi(e_1), nabla_1 tau>."""
    u = small_circle(SPEC1, INV_SQRT2)
    x = u.domain.coords()[0]
    r = INV_SQRT2
    du = np.stack([-r * np.sin(x), r * np.cos(x), 0 * x], -1)
    tau = np.stack([-np.cos(x), -np.sin(x), np.ones_like(x)], -1) / (2 * math.sqrt(2))
    dtau = np.stack([np.sin(x), -np.cos(x), 0 * x], -1) / (2 * math.sqrt(2))
    dtau = dtau - np.sum(dtau * u.values, -1, keepdims=True) * u.values
    pair = np.sum(du * dtau, -1)
    hand = -0.5 * np.sum(tau * tau, -1) - pair + 2 * pair
    S = stress_energy(u, 2).values[..., 0, 0]
    for i in (0, 17, 40):
        assert S[i] == pytest.approx(hand[i], abs=1e-10)
    rep = stress_energy_residual(u, 2)
    assert rep.finest.linf < 1e-10
    assert rep.meta["tau_k_linf"] < 1e-10


def test_orders_below_one_rejected():
    u = great_circle(SPEC1)
    with pytest.raises(ValueError):
        noether_current(u, ROT_E3, 0)
    with pytest.raises(ValueError):
        stress_energy(u, 1)


def test_non_killing_field_breaks_conservation():
    X = linear_field(np.diag([1.0, 0.5, 0.25, 0.0]))
    rep = refine(lambda N: random_map(N, 0), lambda u: conservation_residual(u, X, 1), FD2_RESOLUTIONS)
    linf = [lv.linf for lv in rep.levels]
    assert min(linf) > 1e-4
    assert linf[-1] > 0.5 * linf[0]  # bounded below, no decay
    assert rep.meta["killing_residual"] > 0.1


def test_odd_term_placement_adjudication():
    """The hoisted placement satisfies the identity at k = 3; the in-sum placement drops the term."""
    u = spectral_map(1)
    X = killing_fields()[0]
    hoisted = conservation_residual(u, X, 3).finest.linf
    in_sum = conservation_residual(u, X, 3, odd_term_placement="in-sum").finest.linf
    flipped = conservation_residual(u, X, 3, odd_term_sign=-1).finest.linf
    assert hoisted < 1e-10
    assert in_sum > 1e4 * hoisted and flipped > 1e4 * hoisted


def test_lie_tension_identity_killing():
    X = rotation_field_stereographic(random_generator(3, 0))
    build = lambda b: lambda N: to_stereographic(random_sphere_map(DomainGrid((N,), backend=b), 2, 2, 1, 0.1))
    rep = refine(build("fd2"), lambda u: lie_tension_sq_residual(u, X), (32, 64, 128), order_range=(1.7, 2.3))
    assert rep.passed, rep.summary()
    assert lie_tension_sq_residual(build("spectral")(64), X).finest.linf < 1e-8
    assert rep.meta["lxh_tau_linf"] < 1e-10


def test_lie_tension_identity_non_killing_gap_is_lxh():
    X = linear_field(np.diag([1.0, 0.5]))
    u = to_stereographic(random_sphere_map(SPEC1, 2, 2, 1, 0.1))
    rep = lie_tension_sq_residual(u, X)
    assert rep.meta["gap_vs_lxh"] < 1e-8
    assert rep.finest.linf > 1e-2


def test_lie_tension_identity_needs_chart():
    with pytest.raises(UnsupportedModeError):
        lie_tension_sq_residual(great_circle(SPEC1), ROT_E3)


def test_constant_map_lie_identity_trivial():
    u = to_stereographic(constant_map(DomainGrid((16,)), [0.6, 0.0, -0.8]))
    assert lie_tension_sq_residual(u, linear_field(np.eye(2))).finest.linf == 0
