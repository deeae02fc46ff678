import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from polyharmonic.chart_geometry import (
    ChartMetric,
    SingularMetricError,
    builtin_chart,
    chart_from_json,
    christoffel,
    christoffel_fd,
    constant_field,
    curvature_killing_residual,
    euclidean,
    hyperbolic_halfplane,
    killing_residual,
    lie_christoffel,
    linear_field,
    lower_riemann,
    riemann,
    rotation_field_stereographic,
    sphere_stereographic,
    stereographic,
    stereographic_inverse,
    stereographic_pullback,
    stereographic_pushforward,
)
from polyharmonic.sphere_extrinsic import random_generator

points = arrays(float, 2, elements=st.floats(-1.5, 1.5))


def test_flat_christoffel_and_curvature_vanish():
    man = euclidean(3)
    x = np.array([0.3, -0.2, 1.0])
    assert np.all(christoffel(man, x) == 0)
    assert np.max(np.abs(riemann(man, x))) == 0


def test_stereographic_christoffel_example():
    G = christoffel_fd(sphere_stereographic(2), np.array([1.0, 0.0]))
    assert G[0, 0, 0] == pytest.approx(-1.0, abs=1e-7)


def test_halfplane_christoffel_example():
    G = christoffel_fd(hyperbolic_halfplane(), np.array([0.0, 2.0]))
    assert G[0, 0, 1] == pytest.approx(-0.5, abs=1e-7)
    assert G[0, 1, 0] == pytest.approx(-0.5, abs=1e-7)


@pytest.mark.parametrize("man", [sphere_stereographic(2), hyperbolic_halfplane()], ids=["sphere", "halfplane"])
def test_closed_form_matches_fd_on_100_points(man):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1.0, 1.0, (100, 2))
    if man.name.startswith("hyperbolic"):
        x[:, 1] = rng.uniform(0.5, 2.0, 100)
    gap = np.max(np.abs(christoffel(man, x) - christoffel_fd(man, x)))
    assert gap < 50 * man.fd_step**2


@settings(max_examples=30, deadline=None)
@given(x=points)
def test_stereographic_sectional_curvature_one(x):
    man = sphere_stereographic(2).with_fd_step(1e-3)
    R = lower_riemann(man, x)
    assert R[0, 1, 0, 1] == pytest.approx(np.linalg.det(man.metric(x)), rel=1e-4)


@settings(max_examples=30, deadline=None)
@given(x=points)
def test_riemann_symmetries(x):
    R = lower_riemann(sphere_stereographic(2).with_fd_step(1e-3), x)
    scale = 1 + np.max(np.abs(R))
    assert np.max(np.abs(R + np.swapaxes(R, 2, 3))) < 1e-4 * scale
    bianchi = R + np.einsum("abcd->acdb", R) + np.einsum("abcd->adbc", R)
    assert np.max(np.abs(bianchi)) < 1e-4 * scale


def test_chart_curvature_matches_embedded_formula():
    man = sphere_stereographic(2).with_fd_step(1e-3)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, 2)
    Y, Z, W = rng.standard_normal((3, 2))
    R = riemann(man, x)
    chart = np.einsum("abcd,b,c,d->a", R, W, Y, Z)  # R(Y, Z) W
    p = stereographic_inverse(x)
    amb = [stereographic_pullback(x, v) for v in (Y, Z, W)]
    Ya, Za, Wa = amb
    embedded = np.dot(Za, Wa) * Ya - np.dot(Ya, Wa) * Za
    assert np.max(np.abs(stereographic_pushforward(p, embedded) - chart)) < 1e-4


def test_stereographic_roundtrip():
    x = np.array([[0.3, -1.2], [2.0, 0.1]])
    p = stereographic_inverse(x)
    assert np.allclose(np.linalg.norm(p, axis=-1), 1)
    assert np.allclose(stereographic(p), x)


def test_singular_metric_rejected():
    man = ChartMetric(2, lambda x: np.zeros(x.shape[:-1] + (2, 2)))
    with pytest.raises(SingularMetricError):
        christoffel(man, np.zeros(2))


def test_killing_residual_examples():
    assert np.all(killing_residual(euclidean(2), constant_field([1.0, 2.0]), np.zeros(2)) == 0)
    sphere = sphere_stereographic(2)
    x = np.array([1.0, 0.0])
    rot = rotation_field_stereographic(random_generator(3, 0))
    L = killing_residual(sphere, rot, x)
    assert np.max(np.abs(L)) < 1e-6
    coord = killing_residual(sphere, constant_field([1.0, 0.0]), x)
    assert np.max(np.abs(coord)) > 0.1
    assert np.array_equal(coord, coord.T)


def test_curvature_killing_flat_and_control():
    x = np.array([0.2, 0.4])
    Y, Z = np.eye(2)
    assert np.max(np.abs(curvature_killing_residual(euclidean(2), constant_field([1.0, 0.0]), Y, Z, x))) == 0
    sphere = sphere_stereographic(2)
    rot = rotation_field_stereographic(random_generator(3, 1))
    assert np.max(np.abs(curvature_killing_residual(sphere, rot, Y, Z, x))) < 10 * 1e-3
    position = linear_field(np.eye(2))
    res = [np.max(np.abs(curvature_killing_residual(sphere.with_fd_step(h), position, Y, Z, x))) for h in (1e-2, 1e-3)]
    assert min(res) > 0.1


def test_lie_christoffel_flat_rotation_vanishes():
    rot = linear_field(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert np.max(np.abs(lie_christoffel(euclidean(2), rot, np.array([0.5, -0.3])))) < 1e-6


def test_lie_christoffel_matches_flow_transport():
    """L_X Gamma = d/dt (pullback of Gamma by the flow of X) at t = 0."""
    man = sphere_stereographic(2)
    A = random_generator(3, 2)
    X = rotation_field_stereographic(A)
    x = np.array([1.0, 0.0])

    def flow(t, y):
        return stereographic(expm(t * A) @ stereographic_inverse(y))

    def pulled_back(t):
        y = flow(t, x)
        h = 1e-5
        J = np.stack([(flow(t, x + h * e) - flow(t, x - h * e)) / (2 * h) for e in np.eye(2)], -1)
        Jinv = np.linalg.inv(J)
        H = np.stack(
            [
                np.stack([(flow(t, x + h * (ei + ej)) - flow(t, x + h * (ei - ej)) - flow(t, x - h * (ei - ej))
                           + flow(t, x - h * (ei + ej))) / (4 * h * h) for ej in np.eye(2)], -1)
                for ei in np.eye(2)
            ],
            -1,
        )  # H[a, c, b] = d_b d_c flow^a
        G = christoffel(man, y)
        return np.einsum("ad,def,eb,fc->abc", Jinv, G, J, J) + np.einsum("ad,dcb->abc", Jinv, H)

    t = 1e-3
    transport = (pulled_back(t) - pulled_back(-t)) / (2 * t)
    assert np.max(np.abs(lie_christoffel(man, X, x) - transport)) < 1e-3


def test_builtin_registry_and_json():
    assert builtin_chart("euclidean:3").dim == 3
    assert builtin_chart("hyperbolic-halfplane").dim == 2
    with pytest.raises(KeyError):
        builtin_chart("torus:2")
    spec = {
        "dim": 2,
        "components": {
            "0,0": {"num": [[4.0, [0, 0]]], "den": [[1, [0, 0]], [2, [2, 0]], [2, [0, 2]], [1, [4, 0]], [2, [2, 2]], [1, [0, 4]]]},
            "1,1": {"num": [[4.0, [0, 0]]], "den": [[1, [0, 0]], [2, [2, 0]], [2, [0, 2]], [1, [4, 0]], [2, [2, 2]], [1, [0, 4]]]},
        },
    }
    man = chart_from_json(json.dumps(spec))
    x = np.array([0.4, -0.7])
    assert np.allclose(man.metric(x), sphere_stereographic(2).metric(x))
    assert np.allclose(christoffel(man, x), christoffel(sphere_stereographic(2), x), atol=1e-7)
