"""Discrete maps from periodic grids into Riemannian targets.

A :class:`GridMap` lives either in a chart of the target (``ChartTarget``) or
in the unit sphere of a Euclidean space (``SphereTarget``), where values are
unit ambient vectors and sections are ambient vectors tangent to the sphere.

Sign conventions: the Laplacian is positive (``Delta f = -f''``), the rough
Laplacian is ``-Tr(nabla nabla - nabla_nabla)``, and the tension field is
``Tr nabla dphi`` so that ``tau = -Delta phi + Gamma <dphi, dphi>`` in a chart.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .chart_geometry import ChartMetric, VectorFieldOnTarget, _real, christoffel, riemann
from .grid import DomainGrid

#: Sign relating the first variation of E_k to the canonical k-tension field:
#: d/de E_k(phi_e) = SIGMA[k] * int <tau_k, V>.
SIGMA = -1
#: Sign s with bitension(phi) = s * k_tension(phi, 2), measured on every tested map.
BITENSION_SIGN = -1

SPHERE_TOL = 1e-12


class OutOfChartError(ValueError):
    pass


class TangencyError(ValueError):
    pass


@dataclass(frozen=True)
class SphereTarget:
    """Unit sphere S^n inside R^{n+1}; values are ambient unit vectors."""

    n: int

    @property
    def ambient_dim(self) -> int:
        return self.n + 1

    @property
    def components(self) -> int:
        return self.n + 1

    @property
    def name(self) -> str:
        return f"sphere:{self.n}"


@dataclass(frozen=True, eq=False)
class ChartTarget:
    chart: ChartMetric

    @property
    def components(self) -> int:
        return self.chart.dim

    @property
    def name(self) -> str:
        return self.chart.name


Target = Union[SphereTarget, ChartTarget]


def sphere_curvature(X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """R(X, Y)Z = <Y, Z> X - <X, Z> Y on the unit sphere."""
    return np.sum(Y * Z, -1)[..., None] * X - np.sum(X * Z, -1)[..., None] * Y


@dataclass(frozen=True, eq=False)
class GridMap:
    domain: DomainGrid
    target: Target
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=self.domain.dtype)
        expected = self.domain.shape + (self.target.components,)
        if vals.shape != expected:
            raise ValueError(f"values have shape {vals.shape}, expected {expected}")
        if isinstance(self.target, SphereTarget):
            err = np.max(np.abs(np.linalg.norm(vals, axis=-1) - 1))
            if err > SPHERE_TOL:
                raise ValueError(f"sphere-mode values are not unit vectors (max error {err:.2e})")
        else:
            try:
                self.target.chart.check_domain(vals)
            except ValueError as exc:
                raise OutOfChartError(str(exc)) from exc
        object.__setattr__(self, "values", vals)

    @property
    def sphere(self) -> bool:
        return isinstance(self.target, SphereTarget)

    @cached_property
    def calc(self) -> "PullbackCalculus":
        return PullbackCalculus(self)

    def section(self, values) -> "Section":
        return Section(self, np.asarray(values, dtype=self.domain.dtype))

    def with_values(self, values) -> "GridMap":
        return GridMap(self.domain, self.target, values)


@dataclass(frozen=True, eq=False)
class Section:
    """A vector field along a GridMap (a section of the pulled-back tangent bundle)."""

    base: GridMap
    values: np.ndarray

    def _wrap(self, v):
        return Section(self.base, v)

    def _other(self, other):
        return other.values if isinstance(other, Section) else other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __mul__(self, a):
        a = np.asarray(a)
        if a.ndim == self.base.domain.dim:
            a = a[..., None]
        return self._wrap(self.values * a)

    __rmul__ = __mul__

    def inner(self, other: "Section") -> np.ndarray:
        return self.base.calc.inner(self.values, self._other(other))

    def norm_sq(self) -> np.ndarray:
        return self.inner(self)

    def tangency_error(self) -> float:
        if not self.base.sphere:
            return 0.0
        return float(np.max(np.abs(np.sum(self.values * self.base.values, -1))))


class PullbackCalculus:
    """Differential calculus on the pull-back bundle of one GridMap.

    Everything works on raw arrays of shape ``(*grid, d)``; results for
    powers of the rough Laplacian and their derivatives are cached.
    """

    def __init__(self, phi: GridMap):
        self.phi = phi
        self.grid = phi.domain
        self.m = phi.domain.dim
        self.sphere = phi.sphere
        self.u = phi.values
        self.flat = phi.domain.flat
        self.ginv = None if self.flat else phi.domain.inverse_metric
        self.dom_gamma = phi.domain.christoffel
        if not self.sphere:
            chart = phi.target.chart
            self.h = chart.metric(self.u)
            self.gamma = christoffel(chart, self.u)
        self.du = [self.D(self.u, i) for i in range(self.m)]
        self._powers = []
        self._grads = {}

    # -- primitive operations -------------------------------------------

    def D(self, V: np.ndarray, i: int) -> np.ndarray:
        return self.grid.diff(V, i)

    @cached_property
    def R(self) -> np.ndarray:
        return riemann(self.phi.target.chart, self.u)

    def inner(self, V: np.ndarray, W: np.ndarray) -> np.ndarray:
        if self.sphere:
            return np.sum(V * W, axis=-1)
        return np.einsum("...a,...ab,...b->...", V, self.h, W)

    def project(self, V: np.ndarray) -> np.ndarray:
        if not self.sphere:
            return V
        return V - np.sum(V * self.u, -1)[..., None] * self.u

    def covd(self, V: np.ndarray, i: int) -> np.ndarray:
        """Pull-back covariant derivative along the i-th coordinate direction."""
        dV = self.D(V, i)
        if self.sphere:
            return self.project(dV)
        return dV + np.einsum("...abc,...b,...c->...a", self.gamma, self.du[i], V)

    def covds(self, V: np.ndarray) -> list[np.ndarray]:
        return [self.covd(V, i) for i in range(self.m)]

    def curvature(self, X: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
        """R^N(X, Y)Z evaluated along the map."""
        if self.sphere:
            return sphere_curvature(X, Y, Z)
        return np.einsum("...abcd,...b,...c,...d->...a", self.R, Z, X, Y)

    def ftrace(self, A: list, B: list, f) -> np.ndarray:
        """Frame trace sum_j f(A(e_j), B(e_j)) = g^{ij} f(A_i, B_j)."""
        if self.flat:
            return sum(f(A[i], B[i]) for i in range(self.m))
        out = 0.0
        for i in range(self.m):
            for j in range(self.m):
                r = f(A[i], B[j])
                w = self.ginv[..., i, j]
                out = out + (w if r.ndim == self.m else w[..., None]) * r
        return out

    def raise_index(self, omega: np.ndarray) -> np.ndarray:
        """Musical isomorphism on a covector field omega[..., i]."""
        if self.flat:
            return omega
        return np.einsum("...ij,...j->...i", self.ginv, omega)

    def rough_laplacian(self, V: np.ndarray) -> np.ndarray:
        first = self.covds(V)
        if self.flat:
            return -sum(self.covd(first[i], i) for i in range(self.m))
        out = 0.0
        for i in range(self.m):
            for j in range(self.m):
                second = self.covd(first[j], i) - sum(
                    self.dom_gamma[..., k, i, j][..., None] * first[k] for k in range(self.m)
                )
                out = out - self.ginv[..., i, j][..., None] * second
        return out

    # -- derived fields ---------------------------------------------------

    @cached_property
    def energy_density(self) -> np.ndarray:
        return 0.5 * self.ftrace(self.du, self.du, self.inner)

    @cached_property
    def tension(self) -> np.ndarray:
        """tau = Tr nabla dphi = g^{ij}(nabla_i dphi_j - Gamma^k_ij dphi_k)."""
        if self.flat:
            return sum(self.covd(self.du[i], i) for i in range(self.m))
        out = 0.0
        for i in range(self.m):
            for j in range(self.m):
                t = self.covd(self.du[j], i) - sum(
                    self.dom_gamma[..., k, i, j][..., None] * self.du[k] for k in range(self.m)
                )
                out = out + self.ginv[..., i, j][..., None] * t
        return out

    def power(self, j: int) -> np.ndarray:
        """P_j = (rough Laplacian)^j tau, by literal composition; P_{-1} = 0."""
        if j < 0:
            return np.zeros_like(self.u)
        if not self._powers:
            self._powers.append(self.tension)
        while len(self._powers) <= j:
            self._powers.append(self.rough_laplacian(self._powers[-1]))
        return self._powers[j]

    def grad_power(self, j: int) -> list[np.ndarray]:
        """[nabla_{e_i} P_j for each axis i]."""
        if j < 0:
            return [np.zeros_like(self.u)] * self.m
        if j not in self._grads:
            self._grads[j] = self.covds(self.power(j))
        return self._grads[j]

    # -- Killing fields along the map ------------------------------------

    def field_along(self, X: VectorFieldOnTarget) -> np.ndarray:
        """X o phi as a section."""
        if self.sphere and X.generator is not None:
            return self.u @ np.asarray(X.generator).T
        return X(self.u)

    def nabla_field(self, X: VectorFieldOnTarget, W: np.ndarray) -> np.ndarray:
        """Target covariant derivative nabla_W X along the map."""
        if self.sphere:
            if X.generator is not None:
                AW = W @ np.asarray(X.generator).T
            else:
                AW = np.einsum("...ab,...b->...a", X.jacobian(self.u), W)
            return self.project(AW)
        J = self._field_jacobian(X)
        return np.einsum("...ab,...b->...a", J, W) + np.einsum(
            "...abc,...b,...c->...a", self.gamma, W, X(self.u)
        )

    def _field_jacobian(self, X: VectorFieldOnTarget) -> np.ndarray:
        cache = self.__dict__.setdefault("_jac_cache", {})
        key = id(X)
        if key not in cache:
            cache[key] = (X, X.jacobian(self.u))
        return cache[key][1]


def _frame_curvature(calc: PullbackCalculus, A, B, C) -> np.ndarray:
    """sum_j R(A, B) C with e_j in one of A/B and in C; lists carry e_j."""
    m = calc.m
    a_list, b_list = isinstance(A, list), isinstance(B, list)
    if a_list == b_list:
        raise ValueError("exactly one of A, B must depend on the frame")
    if calc.flat:
        return sum(
            calc.curvature(A[i] if a_list else A, B[i] if b_list else B, C[i]) for i in range(m)
        )
    out = 0.0
    for i in range(m):
        for j in range(m):
            w = calc.ginv[..., i, j][..., None]
            out = out + w * calc.curvature(A[i] if a_list else A, B[i] if b_list else B, C[j])
    return out


# -- public operations ------------------------------------------------------


def differential(phi: GridMap) -> tuple[list[Section], np.ndarray]:
    """Return ([dphi(d_i) per axis], energy density 1/2 |dphi|^2)."""
    c = phi.calc
    return [phi.section(v) for v in c.du], c.energy_density


def energy(phi: GridMap) -> float:
    return phi.domain.integrate(phi.calc.energy_density)


def tension(phi: GridMap) -> Section:
    return phi.section(phi.calc.tension)


def pullback_derivative(phi: GridMap, V: Section | np.ndarray, i: int) -> Section:
    return phi.section(phi.calc.covd(_values(V), i))


def rough_laplacian(phi: GridMap, V: Section | np.ndarray) -> Section:
    return phi.section(phi.calc.rough_laplacian(_values(V)))


def _values(V) -> np.ndarray:
    return V.values if isinstance(V, Section) else _real(V)


def _check_order(k: int, minimum: int = 1) -> int:
    if int(k) != k or k < minimum:
        raise ValueError(f"order k must be an integer >= {minimum}, got {k}")
    return int(k)


def k_energy_density(phi: GridMap, k: int) -> np.ndarray:
    k = _check_order(k)
    c = phi.calc
    if k == 1:
        return c.energy_density
    s = k // 2
    if k % 2 == 0:
        P = c.power(s - 1)
        return 0.5 * c.inner(P, P)
    G = c.grad_power(s - 1)
    return 0.5 * c.ftrace(G, G, c.inner)


def k_energy(phi: GridMap, k: int) -> float:
    """E_1 = 1/2 int |dphi|^2, E_2s = 1/2 int |P_{s-1}|^2, E_2s+1 = 1/2 int |nabla P_{s-1}|^2."""
    return phi.domain.integrate(k_energy_density(phi, k))


def _tension_array(c: PullbackCalculus, k: int) -> np.ndarray:
    if k == 1:
        return c.tension
    s = k // 2
    du = c.du
    if k % 2 == 0:
        out = c.power(2 * s - 1) - _frame_curvature(c, c.power(2 * s - 2), du, du)
        for l in range(1, s):
            a, b = s + l - 2, s - l - 1
            out = out - (
                _frame_curvature(c, c.grad_power(a), c.power(b), du)
                - _frame_curvature(c, c.power(a), c.grad_power(b), du)
            )
        return out
    out = c.power(2 * s) - _frame_curvature(c, c.power(2 * s - 1), du, du)
    for l in range(1, s):
        a, b = s + l - 1, s - l - 1
        out = out - (
            _frame_curvature(c, c.grad_power(a), c.power(b), du)
            - _frame_curvature(c, c.power(a), c.grad_power(b), du)
        )
    out = out - _frame_curvature(c, c.grad_power(s - 1), c.power(s - 1), du)
    return out


def k_tension(phi: GridMap, k: int) -> Section:
    """Canonical k-tension field tau_k (tau_1 = tau), curvature sums taken verbatim."""
    k = _check_order(k)
    return phi.section(_tension_array(phi.calc, k))


def bitension(phi: GridMap) -> Section:
    """Alternate k=2 evaluator: -rough_laplacian(tau) - sum_j R(dphi_j, tau) dphi_j."""
    c = phi.calc
    tau = c.tension
    return phi.section(-c.rough_laplacian(tau) - _frame_curvature(c, c.du, tau, c.du))


def retract(phi: GridMap, V: np.ndarray, eps: float) -> GridMap:
    """phi moved by eps V; sphere mode renormalizes onto the sphere."""
    w = phi.values + eps * V
    if phi.sphere:
        w = w / np.linalg.norm(w, axis=-1, keepdims=True)
    return phi.with_values(w)


def first_variation(phi: GridMap, V: Section | np.ndarray, k: int, eps: float) -> tuple[float, float]:
    """(central difference of E_k along V, int <tau_k, V>)."""
    if eps == 0:
        raise ValueError("eps must be nonzero")
    V = _values(V)
    if phi.sphere:
        V = phi.calc.project(V)
    plus = k_energy(retract(phi, V, eps), k)
    minus = k_energy(retract(phi, V, -eps), k)
    fd = (plus - minus) / (2 * eps)
    c = phi.calc
    pairing = phi.domain.integrate(c.inner(_tension_array(c, _check_order(k)), V))
    return fd, pairing


def first_variation_residual(phi: GridMap, V: Section | np.ndarray, k: int, eps: float, sigma: int = SIGMA) -> float:
    """|dE_k/de (central difference) - sigma * int <tau_k, V>|."""
    fd, pairing = first_variation(phi, V, k, eps)
    return abs(fd - sigma * pairing)
