import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import FD2_RESOLUTIONS, INV_SQRT2, hypersphere_constants
from polyharmonic import hypersurface as hyp
from polyharmonic.grid import DomainGrid
from polyharmonic.report import ResidualReport
from polyharmonic.sphere_extrinsic import killing_from_generator, random_generator

ORDER = (1.7, 2.3)


def spectral(m, N=64):
    return DomainGrid((N,) * m, backend="spectral")


def killing(m, seed=7):
    return killing_from_generator(random_generator(m + 2, seed))


PERTURBED = {
    "circle": lambda N: hyp.perturbed_hypersphere(DomainGrid((N,)), 0.6, 0.1, 2),
    "torus": lambda N: hyp.perturbed_torus(DomainGrid((N, N)), 0.6, 0.15, 1),
}


def _study(build, check):
    return ResidualReport.merge([check(build(N)) for N in FD2_RESOLUTIONS], tolerance=None, order_range=ORDER)


@pytest.mark.parametrize("m", [1, 2])
def test_normal_frame_invariants(m):
    imm = hyp.perturbed_hypersphere(spectral(m), 0.6, 0.1, 2)
    nu = imm.normal
    assert np.max(np.abs(np.sum(nu * imm.values, -1))) < 1e-10
    assert max(np.max(np.abs(np.sum(nu * d, -1))) for d in imm.dphi) < 1e-10
    assert np.max(np.abs(np.linalg.norm(nu, axis=-1) - 1)) < 1e-12
    assert hyp.self_adjointness_error(imm) < 1e-8


@pytest.mark.parametrize("m", [1, 2])
def test_equator_totally_geodesic(m):
    imm = hyp.equator(spectral(m))
    s = hyp.shape_operator(imm)
    assert np.max(np.abs(s.A[imm.mask])) < 1e-10
    first, second = hyp.biharmonic_system_residual(imm)
    assert first.finest.linf < 1e-10 and second.finest.linf < 1e-10
    assert np.max(np.abs(hyp.hypersurface_current(imm, killing(m))[imm.mask])) < 1e-10


@pytest.mark.parametrize("m", [1, 2])
def test_biharmonic_hypersphere_shape(m):
    imm = hyp.small_hypersphere(spectral(m), INV_SQRT2)
    s = hyp.shape_operator(imm)
    assert np.max(np.abs(s.A[imm.mask] - np.eye(m))) < 1e-9
    assert np.max(np.abs(s.f[imm.mask] - 1)) < 1e-9
    assert np.max(np.abs(s.norm_sq[imm.mask] - m)) < 1e-9


def test_hypersphere_constants_r06():
    c = hypersphere_constants(2, Fraction(3, 5))
    assert c["f_sq"] == Fraction(16, 9) and c["norm_sq"] == Fraction(32, 9)
    imm = hyp.small_hypersphere(spectral(2), 0.6)
    s = hyp.shape_operator(imm)
    assert np.max(np.abs(s.f[imm.mask] - 4 / 3)) < 1e-9
    assert np.max(np.abs(s.norm_sq[imm.mask] - 32 / 9)) < 1e-9
    levels = [hyp.biharmonic_system_residual(hyp.small_hypersphere(spectral(2, N), 0.6))[0].finest.linf for N in (32, 64)]
    assert levels == pytest.approx([56 / 27] * 2, abs=1e-6)


def test_second_fundamental_form_symmetric():
    imm = hyp.perturbed_torus(spectral(2), 0.6, 0.15, 1)
    s = hyp.shape_operator(imm)
    II = s.second_fundamental_form(imm.normal)
    assert np.max(np.abs(II - np.swapaxes(II, -2, -3))[imm.mask]) < 1e-8


@pytest.mark.parametrize("name", sorted(PERTURBED))
def test_codazzi_order_two(name):
    rep = _study(PERTURBED[name], hyp.codazzi_trace_residual)
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("m", [1, 2])
def test_codazzi_spectral(m):
    imm = hyp.perturbed_hypersphere(spectral(m), 0.6, 0.1, 2)
    assert hyp.codazzi_trace_residual(imm).finest.linf < 1e-8


@pytest.mark.parametrize("m", [1, 2])
def test_tension_is_mean_curvature_vector(m):
    imm = hyp.perturbed_hypersphere(spectral(m), 0.6, 0.1, 2)
    assert hyp.tension_normal_residual(imm).finest.linf < 1e-8


@pytest.mark.parametrize("name", sorted(PERTURBED))
def test_complete_current_identity_order_two(name):
    build = PERTURBED[name]
    X = killing(build(8).m)
    rep = _study(build, lambda imm: hyp.hypersurface_current_residual(imm, X, against="complete"))
    assert rep.passed, rep.summary()


@pytest.mark.parametrize("m", [1, 2])
def test_complete_current_identity_spectral(m):
    for imm in (hyp.perturbed_hypersphere(spectral(m), 0.6, 0.1, 2), hyp.small_hypersphere(spectral(m), 0.6)):
        rep = hyp.hypersurface_current_residual(imm, killing(m), against="complete")
        assert rep.finest.linf < 1e-8


def test_reduced_identity_misses_the_normal_terms():
    imm = hyp.small_hypersphere(spectral(2), 0.6)
    reduced = hyp.hypersurface_current_residual(imm, killing(2))
    assert reduced.finest.linf > 1.0
    assert reduced.finest.linf == pytest.approx(reduced.meta["normal_term_linf"], rel=1e-6)


def test_normal_block_closed_form():
    for imm in (hyp.perturbed_torus(spectral(2), 0.6, 0.15, 1), hyp.perturbed_hypersphere(spectral(1), 0.6, 0.1, 2)):
        nb = hyp.normal_block(imm, killing(imm.m))
        assert np.max(np.abs(nb["block"] - nb["closed_form"])[imm.mask]) < 1e-8
        rep = hyp.normal_block_residual(imm, killing(imm.m))
        assert rep.meta["closed_form_gap"] < 1e-8
        assert rep.finest.linf > 0.1


@settings(max_examples=6, deadline=None)
@given(seed=st.integers(0, 1000), m=st.sampled_from([1, 2]))
def test_flip_invariance(seed, m):
    rng = np.random.default_rng(seed)
    grid = spectral(m, 32)
    if m == 1:
        imm = hyp.perturbed_hypersphere(grid, rng.uniform(0.4, 0.8), rng.uniform(0, 0.1), int(rng.integers(1, 4)))
    else:
        imm = hyp.perturbed_torus(grid, rng.uniform(0.4, 1.0), rng.uniform(0, 0.15), int(rng.integers(1, 3)))
    flip = imm.flipped()
    assert np.allclose(flip.normal, -imm.normal)
    s, t = hyp.shape_operator(imm), hyp.shape_operator(flip)
    assert np.allclose(t.f, -s.f) and np.allclose(t.A, -s.A)
    for a, b in zip(hyp.biharmonic_system_residual(imm), hyp.biharmonic_system_residual(flip)):
        assert a.finest.linf == pytest.approx(b.finest.linf, rel=1e-9, abs=1e-12)


def test_degenerate_and_malformed_immersions():
    with pytest.raises(ValueError):
        hyp.HypersurfaceImmersion(DomainGrid((16,)), np.ones((16, 3)))
    with pytest.raises(ValueError):
        hyp.small_hypersphere(DomainGrid((16,)), 1.5)
    with pytest.raises(ValueError):
        hyp.perturbed_torus(DomainGrid((16,)), 0.6, 0.1, 1)
    point = np.zeros((16, 3))
    point[:, 2] = 1.0
    with pytest.raises(hyp.DegenerateImmersionError):
        hyp.HypersurfaceImmersion(DomainGrid((16,)), point).normal


def test_immersion_from_spec_builtins():
    imm = hyp.immersion_from_spec({"immersion": "small-hypersphere:2:0.7071", "resolution": 32, "backend": "spectral"})
    assert imm.m == 2 and imm.grid.backend == "spectral"
    assert hyp.immersion_from_spec("perturbed-torus:0.6:0.1:1", 16).values.shape == (16, 16, 4)
    assert hyp.immersion_from_spec("equator:1", 16).m == 1
