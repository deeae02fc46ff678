import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import INV_SQRT2, MAP_SEEDS, random_map, small_circle_tension_sq
from polyharmonic.chart_geometry import killing_residual, rotation_field_stereographic, sphere_stereographic
from polyharmonic.grid import DomainGrid
from polyharmonic.map_calculus import tension
from polyharmonic.maps import clifford, clifford_lift, constant_map, great_circle, random_sphere_map, small_circle
from polyharmonic.sphere_extrinsic import (
    DimensionError,
    GeneratorError,
    biharmonic_extrinsic_residual,
    generator_from_json,
    killing_from_generator,
    lambda_identity_residual,
    random_generator,
    tension_extrinsic,
    wedge,
    wedge_current,
    wedge_equivalence_check,
    zero_curvature_residual,
)

SPEC1 = DomainGrid((64,), backend="spectral")
SPEC2 = DomainGrid((32, 32), backend="spectral")


def test_generator_examples():
    assert np.all(killing_from_generator(np.zeros((3, 3)))(np.array([0.0, 0.6, 0.8])) == 0)
    A = np.zeros((4, 4))
    A[1, 0], A[0, 1] = 1.0, -1.0
    assert np.array_equal(killing_from_generator(A)(np.eye(4)[0]), np.eye(4)[1])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6))
def test_generator_fields_are_tangent(seed, n):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((100, n))
    u /= np.linalg.norm(u, axis=-1, keepdims=True)
    X = killing_from_generator(random_generator(n, seed))
    assert np.max(np.abs(np.sum(X(u) * u, -1))) < 1e-12


def test_non_antisymmetric_generator_rejected():
    with pytest.raises(GeneratorError):
        killing_from_generator(np.eye(3))
    with pytest.raises(GeneratorError):
        generator_from_json("[[0, 1], [1, 0]]")
    assert np.array_equal(generator_from_json(json.dumps({"generator": [[0, -2], [2, 0]]})), [[0, -2], [2, 0]])


def test_generator_is_killing_in_the_chart():
    A = random_generator(3, 5)
    x = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    assert np.max(np.abs(killing_residual(sphere_stereographic(2), rotation_field_stereographic(A), x))) < 1e-6


def test_tension_extrinsic_matches_intrinsic():
    u = random_map(32, 0, "spectral")
    E = tension_extrinsic(u)
    assert np.max(np.abs(E - tension(u).values)) < 1e-10
    assert np.max(np.abs(np.sum(E * u.values, -1))) < 1e-10
    s = small_circle(SPEC1, INV_SQRT2)
    assert np.max(np.abs(np.sum(tension_extrinsic(s) ** 2, -1) - small_circle_tension_sq(INV_SQRT2))) < 1e-12


@pytest.mark.parametrize("seed", MAP_SEEDS)
def test_lambda_identity(seed):
    assert np.max(np.abs(lambda_identity_residual(random_map(32, seed, "spectral")))) < 1e-10


def test_biharmonic_extrinsic_examples():
    for u in (small_circle(SPEC1, INV_SQRT2), great_circle(SPEC1), clifford_lift(SPEC2)):
        assert biharmonic_extrinsic_residual(u).passed
    not_bi = [biharmonic_extrinsic_residual(small_circle(DomainGrid((N,), backend="fd2"), 0.9)).finest.linf for N in (32, 64, 128)]
    assert min(not_bi) > 0.1
    assert not_bi[-1] > 0.9 * not_bi[0]


def test_scalar_identities_hold_for_any_map():
    rep = biharmonic_extrinsic_residual(random_map(32, 2, "spectral"))
    assert rep.checks == {"scalar_identity_1": True, "scalar_identity_2": True}
    assert rep.finest.linf > 1e-4


def test_wedge_antisymmetry_and_examples():
    u = great_circle(SPEC1)
    W = wedge_current(u, 1)
    assert W.antisymmetry_error() == 0
    assert np.max(np.abs(W.values[..., 0, 0, 1] - 1)) < 1e-12
    assert np.max(np.abs(W.values[..., 0, 2, :])) < 1e-12
    assert np.max(np.abs(W.divergence())) < 1e-12
    for order in (1, 2):
        assert wedge_current(random_sphere_map(SPEC2, 3, 2, 1, 0.1), order).antisymmetry_error() == 0
        assert np.all(wedge_current(constant_map(SPEC2, [0.0, 1.0, 0.0]), order).values == 0)
    assert np.max(np.abs(wedge_current(small_circle(SPEC1, INV_SQRT2), 2).divergence())) < 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_wedge_is_antisymmetric_bilinear(seed):
    a, b, c = np.random.default_rng(seed).standard_normal((3, 5))
    assert np.array_equal(wedge(a, b), -wedge(b, a))
    assert np.allclose(wedge(a + c, b), wedge(a, b) + wedge(c, b))


def test_wedge_order_rejected():
    with pytest.raises(ValueError):
        wedge_current(great_circle(SPEC1), 3)


def test_equivalence_on_non_harmonic_map():
    reports = [wedge_equivalence_check(random_sphere_map(DomainGrid((N, N), backend="fd2"), 3, 2, 0, 0.1), 1) for N in (32, 64)]
    for rep in reports:
        assert rep.meta["div_wedge_linf"] > 1e-2 and rep.meta["euler_lagrange_linf"] > 1e-2
        assert rep.checks["vanish_together"]
    ratios = [r.meta["ratio"] for r in reports]
    assert abs(ratios[1] / ratios[0] - 1) < 0.05
    assert wedge_equivalence_check(random_map(32, 0, "spectral"), 2).passed


def test_zero_curvature_examples():
    assert zero_curvature_residual(clifford(SPEC2), 1).passed
    assert zero_curvature_residual(constant_map(SPEC2, [1.0, 0.0, 0.0]), 1).finest.linf == 0
    lifted = zero_curvature_residual(clifford_lift(SPEC2), 2)
    assert lifted.tolerance is None and lifted.finest.linf > 0.1
    with pytest.raises(DimensionError):
        zero_curvature_residual(great_circle(SPEC1), 1)
