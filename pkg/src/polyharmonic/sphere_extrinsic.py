"""Sphere targets in ambient coordinates: rotation Killing fields, the extrinsic
tension and biharmonic equations, wedge-product currents and the zero-curvature test.

Here ``Delta`` is the positive Laplacian, ``Delta f = -div grad f``, and
``nabla(F grad u)`` is the divergence ``sum_i d_i (F d^i u)`` taken componentwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .chart_geometry import VectorFieldOnTarget
from .grid import DomainGrid, tolerance as default_tolerance
from .map_calculus import GridMap
from .report import ResidualReport

ANTISYMMETRY_TOL = 1e-12


class GeneratorError(ValueError):
    pass


class DimensionError(ValueError):
    pass


# -- Killing fields -------------------------------------------------------------


def killing_from_generator(A, tol: float = ANTISYMMETRY_TOL) -> VectorFieldOnTarget:
    """X(u) = A u for an antisymmetric (n+1)x(n+1) matrix A."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise GeneratorError(f"generator must be square, got shape {A.shape}")
    if np.max(np.abs(A + A.T), initial=0.0) > tol:
        raise GeneratorError("generator is not antisymmetric")
    return VectorFieldOnTarget(
        lambda u: u @ A.T,
        lambda u: np.broadcast_to(A, u.shape + (A.shape[0],)).copy(),
        generator=A,
        name="rotation",
    )


def random_generator(n_ambient: int, seed: int) -> np.ndarray:
    """Seeded antisymmetric matrix B - B^T with standard normal B."""
    B = np.random.default_rng(seed).standard_normal((n_ambient, n_ambient))
    return B - B.T


def generator_from_json(spec: Any) -> np.ndarray:
    """Generator from JSON text or an already parsed row-major nested list.

    ``{"generator": [[...], ...]}`` is accepted as well as the bare matrix.
    """
    if isinstance(spec, (str, bytes)):
        spec = json.loads(spec)
    if isinstance(spec, dict):
        spec = spec["generator"]
    A = np.asarray(spec, dtype=float)
    killing_from_generator(A)  # validation
    return A


# -- wedge fields -------------------------------------------------------------


def wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(a ^ b)[..., al, be] = a^al b^be - a^be b^al."""
    outer = a[..., :, None] * b[..., None, :]
    return outer - np.swapaxes(outer, -1, -2)


@dataclass(frozen=True, eq=False)
class WedgeField:
    """Per-axis antisymmetric matrices ``values[..., i, al, be]`` (covariant index i)."""

    domain: DomainGrid
    values: np.ndarray

    def component(self, i: int) -> np.ndarray:
        return self.values[..., i, :, :]

    def divergence(self) -> np.ndarray:
        """Metric divergence of the matrix-valued 1-form, index raised by g^{ij}."""
        grid = self.domain
        W = self.values
        if not grid.flat:
            W = np.einsum("...ij,...jab->...iab", grid.inverse_metric, W)
        rho = grid.volume_density[..., None, None]
        total = sum(grid.diff(rho * W[..., i, :, :], i) for i in range(grid.dim))
        return total if grid.flat else total / rho

    def contract(self, A) -> np.ndarray:
        """1/2 sum_{al,be} A_{al be} W_i^{al be}, a covector on the domain."""
        return 0.5 * np.einsum("ab,...iab->...i", np.asarray(A), self.values)

    def antisymmetry_error(self) -> float:
        return float(np.max(np.abs(self.values + np.swapaxes(self.values, -1, -2))))


# -- ambient calculus -----------------------------------------------------------


def _require_sphere(u: GridMap) -> None:
    if not u.sphere:
        raise ValueError("expected a sphere-mode map")


class _Ambient:
    """Cached ambient derivatives of a sphere-valued map."""

    def __init__(self, u: GridMap):
        _require_sphere(u)
        self.grid = u.domain
        self.u = u.values
        self.du = [self.grid.diff(self.u, i) for i in range(self.grid.dim)]
        self.raised = self._raise(self.du)

    def _raise(self, parts: list[np.ndarray]) -> list[np.ndarray]:
        if self.grid.flat:
            return parts
        gi = self.grid.inverse_metric
        return [sum(gi[..., i, j, None] * parts[j] for j in range(len(parts))) for i in range(len(parts))]

    def div(self, parts: list[np.ndarray]) -> np.ndarray:
        """sum_i d_i V^i (metric divergence) for per-axis ambient vectors V^i."""
        grid = self.grid
        rho = grid.volume_density[..., None]
        total = sum(grid.diff(rho * parts[i], i) for i in range(grid.dim))
        return total if grid.flat and grid.density is None else total / rho

    def grad(self, f: np.ndarray) -> list[np.ndarray]:
        return [self.grid.diff(f, i) for i in range(self.grid.dim)]

    def lap(self, f: np.ndarray) -> np.ndarray:
        """Analyst Laplacian div grad f = -Delta f (f scalar or ambient vector)."""
        scalar = f.ndim == self.grid.dim
        F = f[..., None] if scalar else f
        out = self.div(self._raise(self.grad(F)))
        return out[..., 0] if scalar else out

    def pair(self, A: list[np.ndarray], B: list[np.ndarray]) -> np.ndarray:
        """g^{ij} <A_i, B_j>."""
        Braised = self._raise(B)
        return sum(np.sum(A[i] * Braised[i], axis=-1) for i in range(self.grid.dim))

    @property
    def energy_density2(self) -> np.ndarray:
        """|grad u|^2."""
        return self.pair(self.du, self.du)

    @property
    def Delta(self) -> np.ndarray:
        return -self.lap(self.u)


def tension_extrinsic(u: GridMap) -> np.ndarray:
    """-Delta u + |grad u|^2 u, the tension field in ambient coordinates."""
    a = _Ambient(u)
    return -a.Delta + a.energy_density2[..., None] * a.u


def lambda_identity_residual(u: GridMap) -> np.ndarray:
    """<u, Delta u> - |grad u|^2, which vanishes because |u| = 1."""
    a = _Ambient(u)
    return np.sum(a.u * a.Delta, axis=-1) - a.energy_density2


def _biharmonic_terms(a: _Ambient) -> dict[str, np.ndarray]:
    e2 = a.energy_density2
    Du = a.Delta
    D2u = -a.lap(Du)
    gradDu = a.grad(Du)
    cross = a.pair(a.du, gradDu)  # <grad u, grad Delta u>
    Delta_e2 = -a.lap(e2)
    flux = a.div([e2[..., None] * r for r in a.raised])  # nabla(|grad u|^2 grad u)
    absDu2 = np.sum(Du * Du, axis=-1)
    coeff = -absDu2 + Delta_e2 + 2 * cross - 2 * e2**2
    return {
        "e2": e2,
        "Du": Du,
        "D2u": D2u,
        "gradDu": gradDu,
        "cross": cross,
        "Delta_e2": Delta_e2,
        "flux": flux,
        "absDu2": absDu2,
        "residual": D2u - coeff[..., None] * a.u + 2 * flux,
    }


def biharmonic_extrinsic_field(u: GridMap) -> np.ndarray:
    """Delta^2 u - (-|Delta u|^2 + Delta|grad u|^2 + 2<grad u, grad Delta u> - 2|grad u|^4) u + 2 nabla(|grad u|^2 grad u)."""
    return _biharmonic_terms(_Ambient(u))["residual"]


def _tol(grid: DomainGrid, tol, C):
    return default_tolerance(grid.backend, grid.h, C) if tol is None else tol


def biharmonic_extrinsic_residual(
    u: GridMap, tol: Optional[float] = None, C: float = 50.0, order_range=None
) -> ResidualReport:
    """Extrinsic biharmonic equation residual with its two scalar sub-identities.

    ``meta["scalar_identity_1"]`` is max |<Delta^2 u, u> - Delta|grad u|^2 + |Delta u|^2 - 2<grad u, grad Delta u>|
    and ``meta["scalar_identity_2"]`` is max |<nabla(|grad u|^2 grad u), u> + |grad u|^4|; both
    hold for every sphere-valued map and are required by ``checks``.
    """
    a = _Ambient(u)
    t = _biharmonic_terms(a)
    s1 = np.sum(t["D2u"] * a.u, -1) - (t["Delta_e2"] - t["absDu2"] + 2 * t["cross"])
    s2 = np.sum(t["flux"] * a.u, -1) + t["e2"] ** 2
    tolerance = _tol(u.domain, tol, C)
    s1n, s2n = float(np.max(np.abs(s1))), float(np.max(np.abs(s2)))
    return ResidualReport.single(
        "extrinsic biharmonic equation",
        u.domain,
        t["residual"],
        tolerance=None if order_range else tolerance,
        order_range=order_range,
        meta={"scalar_identity_1": s1n, "scalar_identity_2": s2n, "sub_tolerance": tolerance},
        checks={"scalar_identity_1": s1n <= tolerance, "scalar_identity_2": s2n <= tolerance},
    )


# -- wedge currents ---------------------------------------------------------


def wedge_current(u: GridMap, order: int) -> WedgeField:
    """order 1: u ^ grad u; order 2: -grad Delta u ^ u + Delta u ^ grad u + 2|grad u|^2 grad u ^ u."""
    if order not in (1, 2):
        raise ValueError(f"wedge currents exist for orders 1 and 2, got {order}")
    a = _Ambient(u)
    if order == 1:
        parts = [wedge(a.u, d) for d in a.du]
    else:
        e2 = a.energy_density2[..., None]
        Du = a.Delta
        gradDu = a.grad(Du)
        parts = [
            -wedge(gradDu[i], a.u) + wedge(Du, a.du[i]) + 2 * wedge(e2 * a.du[i], a.u)
            for i in range(a.grid.dim)
        ]
    return WedgeField(u.domain, np.stack(parts, axis=-3))


def wedge_equivalence_check(
    u: GridMap, order: int, C: float = 10.0, tol: Optional[float] = None, C_tol: float = 50.0
) -> ResidualReport:
    """div of the wedge current versus the corresponding Euler-Lagrange expression.

    Order 1 compares div(u ^ grad u) with the extrinsic tension, order 2 compares
    div J^2-wedge with the extrinsic biharmonic residual E.  The residual field
    is the bridging identity div W = u ^ tau (order 1) or div W = E ^ u
    (order 2, the general form of Delta^2 u ^ u = -2 nabla(|grad u|^2 grad u ^ u)),
    which holds for every map.  ``checks["vanish_together"]`` asserts each
    side is at most C times the other plus the tolerance.
    """
    W = wedge_current(u, order)
    divW = W.divergence()
    if order == 1:
        E = tension_extrinsic(u)
        bridge = wedge(u.values, E)
    else:
        E = biharmonic_extrinsic_field(u)
        bridge = wedge(E, u.values)
    tolerance = _tol(u.domain, tol, C_tol)
    a = float(np.max(np.abs(divW)))
    b = float(np.max(np.abs(E)))
    together = a <= C * b + tolerance and b <= C * a + tolerance
    return ResidualReport.single(
        f"order-{order} wedge equivalence",
        u.domain,
        divW - bridge,
        tolerance=tolerance,
        meta={"div_wedge_linf": a, "euler_lagrange_linf": b, "ratio": a / b if b > 0 else None, "C": C},
        checks={"vanish_together": together},
    )


# -- zero curvature ---------------------------------------------------------------


def _endomorphism(W: np.ndarray) -> np.ndarray:
    """Matrix of v -> <a, v> b - <b, v> a for the stored components of a ^ b."""
    return np.swapaxes(W, -1, -2)


def zero_curvature_terms(u: GridMap, order: int) -> tuple[np.ndarray, np.ndarray]:
    """(curl, commutator) of the current endomorphisms, stacked over axis pairs i < j."""
    grid = u.domain
    if grid.dim < 2:
        raise DimensionError("the zero-curvature equation needs a domain of dimension >= 2")
    W = wedge_current(u, order)
    curls, comms = [], []
    for i in range(grid.dim):
        for j in range(i + 1, grid.dim):
            Ji, Jj = _endomorphism(W.component(i)), _endomorphism(W.component(j))
            curls.append(grid.diff(Jj, i) - grid.diff(Ji, j))
            comms.append(Ji @ Jj - Jj @ Ji)
    return np.stack(curls, -3), np.stack(comms, -3)


def zero_curvature_residual(
    u: GridMap, order: int, tol: Optional[float] = None, C: float = 50.0, expect_zero: Optional[bool] = None
) -> ResidualReport:
    """Residual of d_i J_j - d_j J_i - 2[J_i, J_j] for every axis pair.

    J_i acts as the endomorphism v -> <a, v> b - <b, v> a of a ^ b, the
    transpose of the stored component matrix; read with the component matrices
    themselves the identity holds with -2 instead.  The least-squares
    coefficient c in d_i J_j - d_j J_i ~ c[J_i, J_j] is recorded as a diagnostic.
    ``expect_zero`` (default: order == 1) attaches the tolerance; for order 2 the
    report only records the measured value, whose positive limit is the point.
    """
    curl, comm = zero_curvature_terms(u, order)
    residual = curl - 2 * comm
    denom = float(np.sum(comm * comm))
    fit = float(np.sum(curl * comm) / denom) if denom > 0 else None
    if expect_zero is None:
        expect_zero = order == 1
    return ResidualReport.single(
        f"order-{order} zero curvature",
        u.domain,
        residual,
        tolerance=_tol(u.domain, tol, C) if expect_zero else None,
        meta={
            "commutator_coefficient_fit": fit,
            "curl_linf": float(np.max(np.abs(curl))),
            "commutator_linf": float(np.max(np.abs(comm))),
        },
    )
