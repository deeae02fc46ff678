"""Noether currents J^k and stress-energy tensors S_k with their divergence identities.

For every smooth map phi and Killing field X on the target

    div J^k + <tau_k, X o phi> = 0,        (div S_k)_j + <tau_k, dphi(e_j)> = 0,

with tau_k the canonical k-tension field of :mod:`map_calculus`.  The
residuals below evaluate the left-hand sides on a grid; they vanish at the
order of the differentiation backend for arbitrary maps, critical or not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .chart_geometry import VectorFieldOnTarget, killing_residual, lie_christoffel
from .grid import DomainGrid, tolerance as default_tolerance
from .map_calculus import (
    BITENSION_SIGN,
    SIGMA,
    GridMap,
    PullbackCalculus,
    _frame_curvature,
    _tension_array,
    bitension,
)
from .report import ResidualReport

#: Sign of the l-independent term <nabla_{nabla P_{s-1}} X, P_{s-1}> in J^{2s+1}.
#: The divergence identity fixes it to +1.
ODD_TERM_SIGN = +1
#: The same term sits outside the l-sum (it does not depend on l).
ODD_TERM_PLACEMENT = "hoisted"


class UnsupportedModeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TangentField:
    """Contravariant vector field V^i on the domain."""

    domain: DomainGrid
    values: np.ndarray

    def divergence(self) -> np.ndarray:
        return self.domain.divergence(self.values)


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Symmetric covariant 2-tensor S_ij on the domain."""

    domain: DomainGrid
    values: np.ndarray

    def divergence(self) -> np.ndarray:
        """(div S)_j = g^{ik} nabla_i S_kj."""
        grid = self.domain
        S = self.values
        m = grid.dim
        dS = np.stack([grid.diff(S, i) for i in range(m)], axis=-3)  # [..., i, k, j]
        if grid.flat:
            return np.einsum("...iij->...j", dS)
        G = grid.christoffel
        cov = (
            dS
            - np.einsum("...lik,...lj->...ikj", G, S)
            - np.einsum("...lij,...kl->...ikj", G, S)
        )
        return np.einsum("...ik,...ikj->...j", grid.inverse_metric, cov)


# -- currents -----------------------------------------------------------------


def _check_k(k: int, minimum: int) -> int:
    if int(k) != k or k < minimum:
        raise ValueError(f"order k must be an integer >= {minimum}, got {k}")
    return int(k)


def current_covector(
    phi: GridMap,
    X: VectorFieldOnTarget,
    k: int,
    odd_term_sign: int = ODD_TERM_SIGN,
    odd_term_placement: str = ODD_TERM_PLACEMENT,
) -> np.ndarray:
    """omega_i = J^k(phi) evaluated on d_i (before raising the index)."""
    k = _check_k(k, 1)
    c = phi.calc
    Xphi = c.field_along(X)
    if k == 1:
        # oriented like the higher currents: div J^1 = -<tau, X o phi>
        return -np.stack([c.inner(c.du[i], Xphi) for i in range(c.m)], -1)
    s = k // 2
    dX = c.covds(Xphi)

    def nX(W):
        return c.nabla_field(X, W)

    def cross(a: int, b: int) -> list[np.ndarray]:
        """[<nabla_{nabla_i P_a} X, P_b>]_i"""
        return [c.inner(nX(G), c.power(b)) for G in c.grad_power(a)]

    top = 2 * s - 2 if k % 2 == 0 else 2 * s - 1
    P = c.power(top)
    gP = c.grad_power(top)
    omega = [c.inner(gP[i], Xphi) - c.inner(dX[i], P) for i in range(c.m)]

    def add(terms, sign=1):
        for i in range(c.m):
            omega[i] = omega[i] + sign * terms[i]

    if k % 2 == 0:
        for l in range(1, s):
            add(cross(s + l - 2, s - l - 1))
            add(cross(s - l - 1, s + l - 2))
    else:
        if odd_term_placement == "hoisted":
            add(cross(s - 1, s - 1), odd_term_sign)
        elif odd_term_placement != "in-sum":
            raise ValueError(f"unknown placement {odd_term_placement!r}")
        for l in range(1, s):
            if odd_term_placement == "in-sum":
                add(cross(s - 1, s - 1), odd_term_sign)
            add(cross(s + l - 1, s - l - 1))
            add(cross(s - l - 1, s + l - 1))
    return np.stack(omega, -1)


def noether_current(phi: GridMap, X: VectorFieldOnTarget, k: int, **kw) -> TangentField:
    """J^k(phi) with the musical isomorphism applied (contravariant components)."""
    omega = current_covector(phi, X, k, **kw)
    return TangentField(phi.domain, phi.calc.raise_index(omega))


def harmonic_current(phi: GridMap, X: VectorFieldOnTarget) -> TangentField:
    """<dphi, X o phi> with the musical isomorphism; equals -J^1, so div = +<tau, X o phi>."""
    c = phi.calc
    Xphi = c.field_along(X)
    omega = np.stack([c.inner(c.du[i], Xphi) for i in range(c.m)], -1)
    return TangentField(phi.domain, c.raise_index(omega))


def biharmonic_current(phi: GridMap, X: VectorFieldOnTarget) -> TangentField:
    """J^2 = <nabla(X o phi), tau> - <X o phi, nabla tau>, the k=2 current paired with the bitension."""
    c = phi.calc
    Xphi = c.field_along(X)
    tau = c.tension
    dX = c.covds(Xphi)
    dtau = c.grad_power(0)
    omega = np.stack([c.inner(dX[i], tau) - c.inner(Xphi, dtau[i]) for i in range(c.m)], -1)
    return TangentField(phi.domain, c.raise_index(omega))


def killing_defect(phi: GridMap, X: VectorFieldOnTarget) -> float:
    """Max |L_X h| over the image points of phi (0 for antisymmetric generators)."""
    if phi.sphere:
        if X.generator is not None:
            A = np.asarray(X.generator)
            return float(np.max(np.abs(A + A.T)))
        c = phi.calc
        J = X.jacobian(c.u)
        sym = J + np.swapaxes(J, -1, -2)
        # restrict the symmetric part to the tangent space of the sphere
        Pm = np.eye(c.u.shape[-1]) - c.u[..., :, None] * c.u[..., None, :]
        return float(np.max(np.abs(Pm @ sym @ Pm)))
    return float(np.max(np.abs(killing_residual(phi.target.chart, X, phi.values))))


def _report_kw(phi: GridMap, tol, order_range, C) -> dict:
    if tol is None and order_range is None:
        tol = default_tolerance(phi.domain.backend, phi.domain.h, C)
    return {"tolerance": tol, "order_range": order_range}


def conservation_residual(
    phi: GridMap,
    X: VectorFieldOnTarget,
    k: int,
    tol: Optional[float] = None,
    order_range=None,
    C: float = 50.0,
    **kw,
) -> ResidualReport:
    """Residual of div J^k + <tau_k, X o phi> at one resolution."""
    c = phi.calc
    J = noether_current(phi, X, k, **kw)
    pairing = c.inner(_tension_array(c, _check_k(k, 1)), c.field_along(X))
    residual = J.divergence() + pairing
    meta = {
        "k": k,
        "sigma_k": SIGMA,
        "bitension_sign": BITENSION_SIGN,
        "odd_term": {
            "sign": kw.get("odd_term_sign", ODD_TERM_SIGN),
            "placement": kw.get("odd_term_placement", ODD_TERM_PLACEMENT),
        },
        "killing_residual": killing_defect(phi, X),
        "tau_k_linf": float(np.max(np.abs(_tension_array(c, k)))),
    }
    return ResidualReport.single(
        f"div J^{k} + <tau_{k}, X>", phi.domain, residual, meta=meta, **_report_kw(phi, tol, order_range, C)
    )


# -- stress-energy tensors --------------------------------------------------


def _sym_pair(c: PullbackCalculus, A: list, B: list) -> np.ndarray:
    """M_ij = <A_i, B_j> + <A_j, B_i>."""
    m = c.m
    M = np.empty(c.u.shape[:-1] + (m, m))
    for i in range(m):
        for j in range(m):
            M[..., i, j] = c.inner(A[i], B[j]) + c.inner(A[j], B[i])
    return M


def stress_energy(phi: GridMap, k: int) -> SymTensorField:
    """Stress-energy tensor S_k (k >= 2) on coordinate pairs (d_i, d_j)."""
    k = _check_k(k, 2)
    c = phi.calc
    s = k // 2
    du = c.du
    P, G = c.power, c.grad_power
    top = 2 * s - 2 if k % 2 == 0 else 2 * s - 1
    shift = 2 if k % 2 == 0 else 1  # index offset of the partner power in the l-sums

    if k % 2 == 0:
        scalar = 0.5 * c.inner(P(s - 1), P(s - 1))
    else:
        scalar = 0.5 * c.ftrace(G(s - 1), G(s - 1), c.inner)
    scalar = scalar - c.inner(P(0), P(top)) - c.ftrace(du, G(top), c.inner)
    bilinear = _sym_pair(c, du, G(top))
    for l in range(1, s):
        a, b = s - l - 1, s + l - shift
        scalar = scalar - c.inner(P(s - l), P(b)) + c.ftrace(G(a), G(b), c.inner)
        bilinear = bilinear - _sym_pair(c, G(a), G(b))
    if k % 2 == 1:
        bilinear = bilinear - 0.5 * _sym_pair(c, G(s - 1), G(s - 1))
    g = phi.domain.metric_field
    return SymTensorField(phi.domain, g * scalar[..., None, None] + bilinear)


def stress_energy_residual(
    phi: GridMap, k: int, tol: Optional[float] = None, order_range=None, C: float = 50.0
) -> ResidualReport:
    """Residual of (div S_k)_j + <tau_k, dphi(d_j)> at one resolution."""
    c = phi.calc
    S = stress_energy(phi, k)
    tk = _tension_array(c, k)
    pairing = np.stack([c.inner(tk, c.du[j]) for j in range(c.m)], -1)
    residual = S.divergence() + pairing
    meta = {"k": k, "sigma_k": SIGMA, "tau_k_linf": float(np.max(np.abs(tk)))}
    return ResidualReport.single(
        f"div S_{k} + <tau_{k}, dphi>", phi.domain, residual, meta=meta, **_report_kw(phi, tol, order_range, C)
    )


# -- Lie derivative of |tau|^2 -------------------------------------------------


def lie_tension_sq_terms(phi: GridMap, X: VectorFieldOnTarget) -> dict[str, np.ndarray]:
    """Both sides of the Lie-derivative identity for |tau|^2, chart mode only.

    ``lhs`` = (L_X h)(tau, tau) + 2 h(L_X tau, tau) with
    (L_X tau)^a = <dphi^b, dphi^c> (L_X Gamma)^a_bc, and ``rhs`` the
    three-term expression built from the canonical tau_2.  ``lxh_tau`` is
    (L_X h)(tau, tau); for non-Killing X, LHS - RHS = -(L_X h)(tau, tau).
    """
    if phi.sphere:
        raise UnsupportedModeError("the Lie derivative of |tau|^2 needs a chart representation")
    c = phi.calc
    chart = phi.target.chart
    tau = c.tension
    LXh = killing_residual(chart, X, c.u)
    lxh_tau = np.einsum("...a,...ab,...b->...", tau, LXh, tau)
    LG = lie_christoffel(chart, X, c.u)
    dd = np.zeros(c.u.shape + (c.u.shape[-1],))
    for i in range(c.m):
        for j in range(c.m):
            w = 1.0 if c.flat else c.ginv[..., i, j][..., None, None]
            if c.flat and i != j:
                continue
            dd = dd + w * c.du[i][..., :, None] * c.du[j][..., None, :]
    LXtau = np.einsum("...bc,...abc->...a", dd, LG)
    lhs = lxh_tau + 2 * c.inner(LXtau, tau)

    Xphi = c.field_along(X)
    dX = c.covds(Xphi)
    dtau = c.grad_power(0)
    omega = np.stack([c.inner(dX[i], tau) - c.inner(Xphi, dtau[i]) for i in range(c.m)], -1)
    div = phi.domain.divergence(c.raise_index(omega))
    # the identity pairs X with the canonical tau_2, i.e. BITENSION_SIGN times the alternate evaluator
    tau2 = BITENSION_SIGN * bitension(phi).values
    rhs = lxh_tau - 2 * c.inner(Xphi, tau2) + 2 * div
    return {"lhs": lhs, "rhs": rhs, "lxh_tau": lxh_tau}


def lie_tension_sq_residual(
    phi: GridMap, X: VectorFieldOnTarget, tol: Optional[float] = None, order_range=None, C: float = 50.0
) -> ResidualReport:
    """LHS - RHS of the |tau|^2 Lie-derivative identity.

    ``meta["gap_vs_lxh"]`` records max |LHS - RHS + (L_X h)(tau, tau)|: for
    non-Killing X the difference LHS - RHS is -(L_X h)(tau, tau), not zero.
    """
    t = lie_tension_sq_terms(phi, X)
    residual = t["lhs"] - t["rhs"]
    meta = {
        "killing_residual": killing_defect(phi, X),
        "gap_vs_lxh": float(np.max(np.abs(residual + t["lxh_tau"]))),
        "lxh_tau_linf": float(np.max(np.abs(t["lxh_tau"]))),
    }
    return ResidualReport.single(
        "L_X|tau|^2 - RHS", phi.domain, residual, meta=meta, **_report_kw(phi, tol, order_range, C)
    )


# -- refinement studies ------------------------------------------------------


def refine(
    build: Callable[[int], GridMap],
    check: Callable[[GridMap], ResidualReport],
    resolutions: Iterable[int],
    **report_kw,
) -> ResidualReport:
    """Run ``check`` on ``build(N)`` for each N and merge into one multi-level report."""
    reports = [check(build(int(N))) for N in resolutions]
    return ResidualReport.merge(reports, **report_kw)
