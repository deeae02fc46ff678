"""Hypersurfaces of S^{m+1}: unit normal, shape operator, mean curvature, the
biharmonic hypersurface system and the hypersurface current J^{2,hyp}.

An immersion is sampled on a flat periodic grid; every operator then uses the
induced metric g_ij = <d_i phi, d_j phi> as the domain metric.  Laplacians are
positive (Delta f = -div grad f) and tangent-vector residuals are pushed
forward to ambient coordinates, so their norms are the geometric ones.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Mapping, Optional

import numpy as np

from .chart_geometry import VectorFieldOnTarget
from .grid import DomainGrid, tolerance as default_tolerance
from .map_calculus import GridMap, SphereTarget
from .maps import grid_from_spec, trig_polynomial
from .report import ResidualReport

#: Points whose |volume density| is below this fraction of the maximum are
#: excluded from residual norms (coordinate singularities such as poles).
DEGENERATE_FRACTION = 0.3


class DegenerateImmersionError(ValueError):
    pass


class OrientationError(ValueError):
    pass


def _cofactor_normal(phi: np.ndarray, dphi: list[np.ndarray]) -> np.ndarray:
    """n_a = det[e_a, phi, d_1 phi, ..., d_m phi]: orthogonal to phi and every d_i phi."""
    cols = np.stack([phi] + dphi, axis=-1)  # [..., m+2, m+1]
    n_amb = phi.shape[-1]
    out = np.empty(phi.shape)
    for a in range(n_amb):
        minor = np.delete(cols, a, axis=-2)
        out[..., a] = (-1) ** a * np.linalg.det(minor)
    return out


def _orient(n: np.ndarray, seed_sign: float) -> np.ndarray:
    """Flip unit vectors so neighbours agree (breadth-first from the first grid point)."""
    shape = n.shape[:-1]
    flat = n.reshape(-1, n.shape[-1])
    sign = np.zeros(flat.shape[0])
    sign[0] = seed_sign
    idx = np.arange(flat.shape[0]).reshape(shape)
    neighbours = [np.roll(idx, s, axis=a).ravel() for a in range(len(shape)) for s in (1, -1)]
    queue = deque([0])
    while queue:
        p = queue.popleft()
        for nb in neighbours:
            q = nb[p]
            if sign[q] == 0:
                sign[q] = sign[p] if flat[p] @ flat[q] >= 0 else -sign[p]
                queue.append(q)
    oriented = flat * sign[:, None]
    for a in range(len(shape)):
        agree = np.sum(oriented.reshape(n.shape) * np.roll(oriented.reshape(n.shape), -1, axis=a), axis=-1)
        if np.any(agree <= 0):
            raise OrientationError("no continuous unit normal on this grid (non-orientable or under-resolved)")
    return oriented.reshape(n.shape)


@dataclass(frozen=True, eq=False)
class HypersurfaceImmersion:
    """Immersion of an m-torus grid into S^{m+1} (values in R^{m+2}).

    ``orientation`` = +1 picks the normal with nonnegative last coordinate at
    the first grid point; -1 flips it.
    """

    grid: DomainGrid
    values: np.ndarray
    orientation: int = 1
    name: str = "immersion"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.dim + 2,):
            raise ValueError(f"embedding has shape {v.shape}, expected {self.grid.shape + (self.grid.dim + 2,)}")
        if np.max(np.abs(np.linalg.norm(v, axis=-1) - 1)) > 1e-12:
            raise ValueError("embedding values must be unit vectors")
        if self.grid.metric is not None:
            raise ValueError("supply the immersion on a flat parameter grid; the induced metric is computed")
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.grid.dim

    @cached_property
    def dphi(self) -> list[np.ndarray]:
        return [self.grid.diff(self.values, i) for i in range(self.m)]

    @cached_property
    def metric(self) -> np.ndarray:
        d = self.dphi
        return np.stack([np.stack([np.sum(d[i] * d[j], -1) for j in range(self.m)], -1) for i in range(self.m)], -2)

    @cached_property
    def normal(self) -> np.ndarray:
        n = _cofactor_normal(self.values, self.dphi)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        if np.min(norm) == 0:
            raise DegenerateImmersionError("immersion is degenerate at a grid point")
        n = n / norm
        first = n.reshape(-1, n.shape[-1])[0]
        seed = 1.0 if first[-1] >= 0 else -1.0
        return _orient(n, seed * self.orientation)

    @cached_property
    def density(self) -> np.ndarray:
        """Signed volume density det[phi, d_1 phi, ..., d_m phi, nu] (= +-sqrt(det g))."""
        cols = np.stack([self.values] + self.dphi + [self.normal], axis=-1)
        return np.linalg.det(cols)

    @cached_property
    def mask(self) -> np.ndarray:
        r = np.abs(self.density)
        return r > DEGENERATE_FRACTION * np.max(r)

    @cached_property
    def induced_grid(self) -> DomainGrid:
        g = self.metric
        det = np.linalg.det(g)
        if np.any(det <= 0):
            raise DegenerateImmersionError("induced metric is not positive definite")
        return self.grid.with_metric(g, self.density)

    def flipped(self) -> "HypersurfaceImmersion":
        return HypersurfaceImmersion(self.grid, self.values, -self.orientation, self.name)

    def as_map(self) -> GridMap:
        """The immersion as a sphere-mode map on the induced-metric torus."""
        return GridMap(self.induced_grid, SphereTarget(self.m + 1), self.values)

    def push(self, V: np.ndarray) -> np.ndarray:
        """Ambient vector V^j d_j phi of a tangent field V[..., j]."""
        return sum(V[..., j, None] * self.dphi[j] for j in range(self.m))


# -- shape operator ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShapeData:
    """A[..., j, i] = A^j_i with A(d_i) = A^j_i d_j; ``b`` the second fundamental form b_ij."""

    A: np.ndarray
    b: np.ndarray
    f: np.ndarray
    norm_sq: np.ndarray

    def second_fundamental_form(self, nu: np.ndarray) -> np.ndarray:
        """II(d_i, d_j) = b_ij nu in ambient coordinates, shape (..., m, m, m+2)."""
        return self.b[..., None] * nu[..., None, None, :]


def shape_operator(imm: HypersurfaceImmersion) -> ShapeData:
    """A from nabla_Z nu = -A(Z), f = Tr A / m and |A|^2."""
    grid = imm.induced_grid
    m = imm.m
    dnu = [grid.diff(imm.normal, i) for i in range(m)]
    b = np.stack([np.stack([-np.sum(dnu[i] * imm.dphi[j], -1) for j in range(m)], -1) for i in range(m)], -2)
    ginv = grid.inverse_metric
    A = np.einsum("...jk,...ki->...ji", ginv, b)
    f = np.einsum("...ii->...", A) / m
    norm_sq = np.einsum("...ij,...ji->...", A, A)
    return ShapeData(A, b, f, norm_sq)


def self_adjointness_error(imm: HypersurfaceImmersion) -> float:
    b = shape_operator(imm).b
    return float(np.max(np.abs(b - np.swapaxes(b, -1, -2))[imm.mask]))


def _grad(grid: DomainGrid, f: np.ndarray) -> np.ndarray:
    """Contravariant gradient g^{ij} d_j f."""
    df = np.stack([grid.diff(f, j) for j in range(grid.dim)], -1)
    return np.einsum("...ij,...j->...i", grid.inverse_metric, df)


def _report(imm, identity, residual, tol, C, order_range=None, meta=None) -> ResidualReport:
    grid = imm.induced_grid
    if tol is None and order_range is None:
        tol = default_tolerance(grid.backend, grid.h, C)
    return ResidualReport.single(
        identity, grid, residual, mask=imm.mask, tolerance=tol, order_range=order_range, meta=meta or {}
    )


def biharmonic_system_residual(
    imm: HypersurfaceImmersion, tol: Optional[float] = None, C: float = 50.0, order_range=None
) -> tuple[ResidualReport, ResidualReport]:
    """Residuals of Delta f - (m - |A|^2) f and A(grad f) + (m/2) f grad f."""
    grid = imm.induced_grid
    s = shape_operator(imm)
    m = imm.m
    grad_f = _grad(grid, s.f)
    lap_f = -grid.divergence(grad_f)
    first = lap_f - (m - s.norm_sq) * s.f
    second = imm.push(np.einsum("...ji,...i->...j", s.A, grad_f) + 0.5 * m * s.f[..., None] * grad_f)
    meta = {"f_mean": float(np.mean(s.f[imm.mask])), "A_norm_sq_mean": float(np.mean(s.norm_sq[imm.mask]))}
    return (
        _report(imm, "Delta f - (m - |A|^2) f", first, tol, C, order_range, meta),
        _report(imm, "A(grad f) + (m/2) f grad f", second, tol, C, order_range, meta),
    )


def codazzi_trace_residual(
    imm: HypersurfaceImmersion, tol: Optional[float] = None, C: float = 50.0, order_range=None
) -> ResidualReport:
    """Residual of Tr_g(nabla A) - m grad f (contracted Codazzi equation).

    Since A(U) = -d nu(U), the trace Tr(nabla A) is the tangential part of
    minus the Laplace-Beltrami operator applied to the components of nu.  This
    only differentiates smooth ambient quantities, unlike the chart components
    of A, which blow up at coordinate singularities.
    """
    grid = imm.induced_grid
    s = shape_operator(imm)
    m = imm.m
    nu = imm.normal
    lb = np.stack([grid.divergence(_grad(grid, nu[..., a])) for a in range(nu.shape[-1])], -1)
    trace = -lb
    for e in (imm.values, nu):
        trace = trace - np.sum(trace * e, -1, keepdims=True) * e
    residual = trace - imm.push(m * _grad(grid, s.f))
    return _report(imm, "Tr(nabla A) - m grad f", residual, tol, C, order_range)


def tension_normal_residual(imm: HypersurfaceImmersion, tol: Optional[float] = None, C: float = 50.0) -> ResidualReport:
    """tau(phi) - m f nu, the tension of the immersion against its mean curvature vector."""
    tau = imm.as_map().calc.tension
    s = shape_operator(imm)
    return _report(imm, "tau - m f nu", tau - imm.m * s.f[..., None] * imm.normal, tol, C)


# -- hypersurface current -----------------------------------------------------------


def hypersurface_current(imm: HypersurfaceImmersion, X: VectorFieldOnTarget) -> np.ndarray:
    """J^{2,hyp} = m f <nabla(X o phi), nu>^# + m f <X o phi, A(.)>^#, contravariant components."""
    grid = imm.induced_grid
    s = shape_operator(imm)
    m = imm.m
    Xphi = X(imm.values)
    dX = [grid.diff(Xphi, i) for i in range(m)]  # the normal part of the ambient derivative is the covariant one
    A_frame = [imm.push(s.A[..., :, i]) for i in range(m)]  # A(d_i) in ambient coordinates
    omega = np.stack(
        [m * s.f * (np.sum(dX[i] * imm.normal, -1) + np.sum(Xphi * A_frame[i], -1)) for i in range(m)], -1
    )
    return np.einsum("...ij,...j->...i", grid.inverse_metric, omega)


def hypersurface_current_terms(imm: HypersurfaceImmersion, X: VectorFieldOnTarget) -> dict[str, np.ndarray]:
    """div J^{2,hyp} with independently evaluated right-hand sides.

    ``rhs`` is 2m<X o phi, A(grad f) + (m/2) f grad f>.  With w = <X o phi, nu>,
    ``normal_term`` is m <grad f, grad w> + m f (|A|^2 - m) w.  It collects
    three contributions that a shortcut evaluation drops:
    <nabla_U (X o phi), nu> = U(w) + <X o phi, A U> rather than <X o phi, A U>;
    the normal block <Tr nabla^2 (X o phi), nu> equals -m w rather than 0;
    and nabla_{e_i}(A e_i) has the normal part |A|^2 nu.  For every immersion
    div J^{2,hyp} = rhs + normal_term.
    """
    grid = imm.induced_grid
    s = shape_operator(imm)
    m = imm.m
    div = grid.divergence(hypersurface_current(imm, X))
    grad_f = _grad(grid, s.f)
    W = imm.push(np.einsum("...ji,...i->...j", s.A, grad_f) + 0.5 * m * s.f[..., None] * grad_f)
    Xphi = X(imm.values)
    rhs = 2 * m * np.sum(Xphi * W, -1)
    w = np.sum(Xphi * imm.normal, -1)
    grad_w = np.stack([grid.diff(w, j) for j in range(m)], -1)
    normal_term = m * np.sum(grad_f * grad_w, -1) + m * s.f * (s.norm_sq - m) * w
    return {"div": div, "rhs": rhs, "normal_term": normal_term}


def hypersurface_current_residual(
    imm: HypersurfaceImmersion,
    X: VectorFieldOnTarget,
    tol: Optional[float] = None,
    C: float = 50.0,
    order_range=None,
    against: str = "reduced",
) -> ResidualReport:
    """div J^{2,hyp} minus a right-hand side.

    ``against`` = "reduced": 2m<X, A(grad f) + (m/2) f grad f>;
    "complete": the same plus m<grad f, grad w> + m f (|A|^2 - m) w (see
    :func:`hypersurface_current_terms`); "zero": div J^{2,hyp} alone.
    """
    t = hypersurface_current_terms(imm, X)
    rhs = {"reduced": t["rhs"], "complete": t["rhs"] + t["normal_term"], "zero": 0.0}[against]
    residual = t["div"] - rhs
    name = {"reduced": "div J^2hyp - 2m<X, A grad f + m/2 f grad f>",
            "complete": "div J^2hyp - 2m<X, A grad f + m/2 f grad f> - m<grad f, grad w> - m f (|A|^2 - m) w",
            "zero": "div J^2hyp"}[against]
    meta = {
        "against": against,
        "rhs_linf": float(np.max(np.abs(t["rhs"][imm.mask]))),
        "div_linf": float(np.max(np.abs(t["div"][imm.mask]))),
        "normal_term_linf": float(np.max(np.abs(t["normal_term"][imm.mask]))),
    }
    return _report(imm, name, residual, tol, C, order_range, meta)


def normal_block(imm: HypersurfaceImmersion, X: VectorFieldOnTarget) -> dict[str, np.ndarray]:
    """<Tr nabla nabla (X o phi), nu> next to its closed form -m<X o phi, nu> for Killing X."""
    calc = imm.as_map().calc
    Xphi = X(imm.values)
    trace = -calc.rough_laplacian(Xphi)  # the rough Laplacian is positive
    return {"block": np.sum(trace * imm.normal, -1), "closed_form": -imm.m * np.sum(Xphi * imm.normal, -1)}


def normal_block_residual(
    imm: HypersurfaceImmersion, X: VectorFieldOnTarget, tol: Optional[float] = None, C: float = 50.0
) -> ResidualReport:
    """<Tr nabla nabla (X o phi), nu> measured against 0.

    For Killing X it equals -m<X o phi, nu>, so it only vanishes where X o phi
    is tangent to the hypersurface; ``closed_form_gap`` in the metadata is the
    L-infinity distance to that closed form.
    """
    nb = normal_block(imm, X)
    gap = float(np.max(np.abs(nb["block"] - nb["closed_form"])[imm.mask]))
    return _report(imm, "<Tr nabla^2 (X o phi), nu>", nb["block"], tol, C, meta={"closed_form_gap": gap})


# -- built-in immersions ------------------------------------------------------------


def _sphere_param(grid: DomainGrid) -> np.ndarray:
    """Unit-sphere parametrization of the torus grid: m=1 circle; m=2 doubled polar angle.

    For m = 2, theta runs over [0, 2 pi) (covering the sphere twice) and is
    shifted by half a step so no grid point sits on a pole.
    """
    if grid.dim == 1:
        x = grid.coords()[0]
        return np.stack([np.cos(x), np.sin(x)], -1)
    if grid.dim == 2:
        th, ph = grid.coords()
        th = th + grid.steps[0] / 2
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1)
    raise ValueError("built-in hyperspheres are provided for m = 1 and m = 2")


def small_hypersphere(grid: DomainGrid, r: float) -> HypersurfaceImmersion:
    """S^m(r) = {(r psi, sqrt(1 - r^2))} in S^{m+1}; biharmonic iff r = 1/sqrt(2)."""
    if not 0 < r <= 1:
        raise ValueError("radius must lie in (0, 1]")
    psi = _sphere_param(grid)
    vals = np.concatenate([r * psi, np.full(psi.shape[:-1] + (1,), np.sqrt(1 - r * r))], -1)
    return HypersurfaceImmersion(grid, vals, name=f"small-hypersphere:{grid.dim}:{r}")


def equator(grid: DomainGrid) -> HypersurfaceImmersion:
    imm = small_hypersphere(grid, 1.0)
    return HypersurfaceImmersion(grid, imm.values, name=f"equator:{grid.dim}")


def perturbed_hypersphere(grid: DomainGrid, r: float, amplitude: float, frequency: int) -> HypersurfaceImmersion:
    """Radial graph over S^m(r): radius r (1 + amplitude * P(psi)).

    P = cos(frequency x) for m = 1 and Re((psi_1 + i psi_2)^frequency) + psi_3 for m = 2,
    smooth functions on the round sphere.
    """
    psi = _sphere_param(grid)
    if grid.dim == 1:
        P = np.cos(frequency * grid.coords()[0])
    else:
        P = np.real((psi[..., 0] + 1j * psi[..., 1]) ** frequency) + psi[..., 2]
    rho = r * (1 + amplitude * P)
    if np.any(rho >= 1) or np.any(rho <= 0):
        raise ValueError("perturbed radius leaves (0, 1)")
    vals = np.concatenate([rho[..., None] * psi, np.sqrt(1 - rho**2)[..., None]], -1)
    return HypersurfaceImmersion(grid, vals, name=f"perturbed-hypersphere:{grid.dim}:{r}:{amplitude}:{frequency}")


def perturbed_torus(grid: DomainGrid, angle: float, amplitude: float, frequency: int) -> HypersurfaceImmersion:
    """Torus (cos a cos x, cos a sin x, sin a cos y, sin a sin y) in S^3 with
    a(x, y) = angle + amplitude sin(frequency x) cos(y)."""
    if grid.dim != 2:
        raise ValueError("tori in S^3 need a 2-dimensional grid")
    x, y = grid.coords()
    a = angle + amplitude * np.sin(frequency * x) * np.cos(y)
    vals = np.stack([np.cos(a) * np.cos(x), np.cos(a) * np.sin(x), np.sin(a) * np.cos(y), np.sin(a) * np.sin(y)], -1)
    return HypersurfaceImmersion(grid, vals, name=f"perturbed-torus:{angle}:{amplitude}:{frequency}")


BUILTIN_IMMERSIONS = (
    "small-hypersphere:m:r",
    "equator:m",
    "perturbed-hypersphere:m:r:amplitude:frequency",
    "perturbed-torus:angle:amplitude:frequency",
)


def immersion_from_spec(spec: Mapping[str, Any] | str, resolution=None, backend: Optional[str] = None) -> HypersurfaceImmersion:
    """Build an immersion from a builtin name or a JSON table.

    ``{"immersion": "small-hypersphere:2:0.7071", "resolution": 64, "backend": "spectral"}``
    or ``{"domain": {...}, "terms": [...]}`` (trig polynomial with m+2 components,
    normalized onto S^{m+1}).
    """
    if isinstance(spec, (str, bytes)):
        spec = json.loads(spec) if str(spec).lstrip().startswith("{") else {"immersion": spec}
    spec = dict(spec)
    name = spec.get("immersion")
    if name is not None:
        kind, *args = str(name).split(":")
        dim = 2 if kind == "perturbed-torus" else (int(args[0]) if args else 1)
        dom = dict(spec.get("domain", {}))
        dom.setdefault("dim", dim)
        dom.setdefault("resolution", spec.get("resolution", 64))
        dom.setdefault("backend", spec.get("backend", "fd2"))
        if backend is not None:
            dom["backend"] = backend
        grid = grid_from_spec(dom, resolution)
        if kind == "small-hypersphere":
            return small_hypersphere(grid, float(args[1]))
        if kind == "equator":
            return equator(grid)
        if kind == "perturbed-hypersphere":
            return perturbed_hypersphere(grid, float(args[1]), float(args[2]), int(args[3]))
        if kind == "perturbed-torus":
            return perturbed_torus(grid, float(args[0]), float(args[1]), int(args[2]))
        raise ValueError(f"unknown immersion {name!r}; known: {BUILTIN_IMMERSIONS}")
    dom = dict(spec.get("domain", {}))
    if backend is not None:
        dom["backend"] = backend
    grid = grid_from_spec(dom, resolution)
    comps = grid.dim + 2
    p = trig_polynomial(grid, spec["terms"], comps)
    return HypersurfaceImmersion(grid, p / np.linalg.norm(p, axis=-1, keepdims=True), name="table")
