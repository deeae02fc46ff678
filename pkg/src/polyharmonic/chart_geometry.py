"""Riemannian structure of target charts.

Index conventions (0-based arrays):

* ``christoffel(...)[..., a, b, c]`` is Gamma^a_{bc}.
* ``riemann(...)[..., a, b, c, d]`` is the a-component of R(d_c, d_d) d_b with
  R(X, Y)Z = [nabla_X, nabla_Y]Z - nabla_{[X,Y]}Z.  Lowering the first index
  gives R_{abcd} = <R(d_c, d_d) d_b, d_a>, so R_{0101} = K det g in 2D.

All evaluators are vectorized: a point argument of shape ``(..., n)`` yields
arrays with the same leading shape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

DEFAULT_FD_STEP = 1e-4
DEFAULT_TOL_CONSTANT = 50.0


def _real(x) -> np.ndarray:
    """Float array, keeping extended precision when the input already has it."""
    x = np.asarray(x)
    return x if x.dtype == np.longdouble else x.astype(float, copy=False)


class SingularMetricError(ValueError):
    pass


class ChartDomainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ChartMetric:
    """A chart of a Riemannian manifold given by its metric components."""

    dim: int
    metric_at: Callable[[np.ndarray], np.ndarray]
    fd_step: float = DEFAULT_FD_STEP
    christoffel_at: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    in_domain: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")

    def metric(self, x) -> np.ndarray:
        x = _real(x)
        return _real(self.metric_at(x))

    def with_fd_step(self, fd_step: float, closed_form: bool = True) -> "ChartMetric":
        return ChartMetric(
            self.dim,
            self.metric_at,
            fd_step,
            self.christoffel_at if closed_form else None,
            self.name,
            self.in_domain,
        )

    def check_domain(self, x) -> None:
        if self.in_domain is not None and not np.all(self.in_domain(_real(x))):
            raise ChartDomainError(f"points outside the domain of chart {self.name!r}")


def _partials(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float) -> list[np.ndarray]:
    """Central differences of ``fn`` along every chart axis."""
    out = []
    for k in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[k] = step
        out.append((fn(x + e) - fn(x - e)) / (2 * step))
    return out


def _inverse(g: np.ndarray) -> np.ndarray:
    det = np.linalg.det(g)
    scale = np.max(np.abs(g), axis=(-2, -1))
    if np.any(np.abs(det) <= 1e-14 * np.maximum(scale, 1e-300) ** g.shape[-1]):
        raise SingularMetricError("metric is singular at a queried point")
    return np.linalg.inv(g)


def christoffel_fd(man: ChartMetric, x) -> np.ndarray:
    """Levi-Civita symbols from central differences of the metric."""
    x = _real(x)
    g = man.metric(x)
    ginv = _inverse(g)
    dg = np.stack(_partials(man.metric, x, man.fd_step), axis=-3)  # [..., k, i, j] = d_k g_ij
    lowered = 0.5 * (
        np.einsum("...ijl->...lij", dg) + np.einsum("...jil->...lij", dg) - dg
    )
    return np.einsum("...al,...lbc->...abc", ginv, lowered)


def christoffel(man: ChartMetric, x) -> np.ndarray:
    """Gamma^a_{bc} at ``x``; closed form when the chart supplies one."""
    x = _real(x)
    if man.christoffel_at is not None:
        _inverse(man.metric(x))
        return _real(man.christoffel_at(x))
    return christoffel_fd(man, x)


def riemann(man: ChartMetric, x) -> np.ndarray:
    """R^a_{bcd} = component a of R(d_c, d_d) d_b (see module docstring)."""
    x = _real(x)
    G = christoffel(man, x)
    dG = _partials(lambda y: christoffel(man, y), x, man.fd_step)
    dG = np.stack(dG, axis=-4)  # [..., c, a, b, d] = d_c Gamma^a_{bd}
    # R^a_{bcd} = d_c G^a_{db} - d_d G^a_{cb} + G^a_{ce} G^e_{db} - G^a_{de} G^e_{cb}
    term = np.einsum("...cadb->...abcd", dG)
    R = term - np.einsum("...abcd->...abdc", term)
    quad = np.einsum("...ace,...edb->...abcd", G, G)
    R += quad - np.einsum("...abcd->...abdc", quad)
    return R


def lower_riemann(man: ChartMetric, x) -> np.ndarray:
    x = _real(x)
    return np.einsum("...ae,...ebcd->...abcd", man.metric(x), riemann(man, x))


# -- vector fields on the target ------------------------------------------


@dataclass(frozen=True, eq=False)
class VectorFieldOnTarget:
    """Tangent vector field on a target, in chart or ambient components.

    ``jacobian_at`` returns ``J[..., a, b] = d_b X^a``; when missing it is
    taken by central differences with step ``fd_step``.  In ambient sphere
    mode ``generator`` holds the antisymmetric matrix A with X(u) = A u.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    jacobian_at: Optional[Callable[[np.ndarray], np.ndarray]] = None
    generator: Optional[np.ndarray] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = "X"

    def __call__(self, x) -> np.ndarray:
        return _real(self.evaluate(_real(x)))

    def jacobian(self, x) -> np.ndarray:
        x = _real(x)
        if self.jacobian_at is not None:
            return _real(self.jacobian_at(x))
        return np.stack(_partials(self, x, self.fd_step), axis=-1)

    def __add__(self, other: "VectorFieldOnTarget") -> "VectorFieldOnTarget":
        return combine([(1.0, self), (1.0, other)])

    def __rmul__(self, a: float) -> "VectorFieldOnTarget":
        return combine([(float(a), self)])


def combine(terms: list[tuple[float, VectorFieldOnTarget]]) -> VectorFieldOnTarget:
    """Linear combination sum_i a_i X_i, keeping closed forms when available."""

    def evaluate(x):
        return sum(a * X(x) for a, X in terms)

    jac = None
    if all(X.jacobian_at is not None for _, X in terms):
        def jac(x):
            return sum(a * X.jacobian(x) for a, X in terms)

    gen = None
    if all(X.generator is not None for _, X in terms):
        gen = sum(a * X.generator for a, X in terms)
    return VectorFieldOnTarget(evaluate, jac, gen, terms[0][1].fd_step, "combination")


def constant_field(v) -> VectorFieldOnTarget:
    v = np.asarray(v, dtype=float)
    return VectorFieldOnTarget(
        lambda x: np.broadcast_to(v, x.shape).copy(),
        lambda x: np.zeros(x.shape + (v.size,)),
        name="constant",
    )


def linear_field(M) -> VectorFieldOnTarget:
    """X(x) = M x in chart components (affine fields are Killing in flat space iff M is antisymmetric)."""
    M = np.asarray(M, dtype=float)
    return VectorFieldOnTarget(
        lambda x: x @ M.T,
        lambda x: np.broadcast_to(M, x.shape + (M.shape[0],)).copy(),
        name="linear",
    )


def covariant_derivative(man: ChartMetric, X: VectorFieldOnTarget, x) -> np.ndarray:
    """(nabla X)[..., a, b] = nabla_b X^a = d_b X^a + Gamma^a_{bc} X^c."""
    x = _real(x)
    return X.jacobian(x) + np.einsum("...abc,...c->...ab", christoffel(man, x), X(x))


def second_covariant_derivative(man: ChartMetric, X: VectorFieldOnTarget, x) -> np.ndarray:
    """H[..., a, b, c] = (nabla^2 X)^a_{bc}, i.e. nabla^2_{d_b, d_c} X."""
    x = _real(x)
    G = christoffel(man, x)
    dNX = np.stack(
        _partials(lambda y: covariant_derivative(man, X, y), x, man.fd_step), axis=-1
    )  # [..., a, c, b] = d_b (nabla_c X^a)
    NX = covariant_derivative(man, X, x)
    H = np.einsum("...acb->...abc", dNX)
    H += np.einsum("...abe,...ec->...abc", G, NX)
    H -= np.einsum("...ae,...ebc->...abc", NX, G)
    return H


def killing_residual(man: ChartMetric, X: VectorFieldOnTarget, x) -> np.ndarray:
    """(L_X h)_{bc} = <nabla_b X, d_c> + <nabla_c X, d_b>; symmetric by construction."""
    x = _real(x)
    low = np.einsum("...ad,...ab->...db", man.metric(x), covariant_derivative(man, X, x))
    # low[..., c, b] = <nabla_b X, d_c>
    return low + np.swapaxes(low, -1, -2)


def is_killing(man: ChartMetric, X: VectorFieldOnTarget, samples, tol: float) -> bool:
    return float(np.max(np.abs(killing_residual(man, X, samples)))) < tol


def curvature_killing_residual(man: ChartMetric, X: VectorFieldOnTarget, Y, Z, x) -> np.ndarray:
    """nabla^2_{Y,Z} X + R(X, Y) Z, which vanishes for Killing X."""
    x = _real(x)
    Y = _real(Y)
    Z = _real(Z)
    H = second_covariant_derivative(man, X, x)
    R = riemann(man, x)
    hess = np.einsum("...abc,...b,...c->...a", H, Y, Z)
    curv = np.einsum("...abcd,...b,...c,...d->...a", R, Z, X(x), Y)
    return hess + curv


def lie_christoffel(man: ChartMetric, X: VectorFieldOnTarget, x) -> np.ndarray:
    """Lie derivative of the Levi-Civita connection, L_X Gamma^a_{bc}.

    Evaluated as nabla^2_{d_b, d_c} X + R(X, d_b) d_c, i.e. the curvature term
    R^a_{bcd} X^d read with the X slot second in R(d_b, X) d_c.  This is the
    reading under which the result is symmetric in (b, c).
    """
    x = _real(x)
    H = second_covariant_derivative(man, X, x)
    R = riemann(man, x)
    return H + np.einsum("...acdb,...d->...abc", R, X(x))


# -- built-in charts ------------------------------------------------------


def euclidean(n: int) -> ChartMetric:
    def metric_at(x):
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    def christoffel_at(x):
        return np.zeros(x.shape[:-1] + (n, n, n))

    return ChartMetric(n, metric_at, christoffel_at=christoffel_at, name=f"euclidean:{n}")


def _conformal_christoffel(x: np.ndarray, dlog: np.ndarray) -> np.ndarray:
    """Gamma for g = e^{2w} delta given grad w: G^a_bc = d_b w d^a_c + d_c w d^a_b - d_a w d_bc."""
    n = x.shape[-1]
    eye = np.eye(n)
    return (
        np.einsum("...b,ac->...abc", dlog, eye)
        + np.einsum("...c,ab->...abc", dlog, eye)
        - np.einsum("...a,bc->...abc", dlog, eye)
    )


def sphere_stereographic(n: int) -> ChartMetric:
    """Stereographic chart of the unit n-sphere from the north pole, g = 4 delta/(1+|x|^2)^2."""

    def metric_at(x):
        r2 = np.sum(x**2, axis=-1)
        return (4.0 / (1 + r2) ** 2)[..., None, None] * np.eye(n)

    def christoffel_at(x):
        r2 = np.sum(x**2, axis=-1)
        return _conformal_christoffel(x, -2 * x / (1 + r2)[..., None])

    return ChartMetric(n, metric_at, christoffel_at=christoffel_at, name=f"sphere-stereographic:{n}")


def hyperbolic_halfplane() -> ChartMetric:
    """Upper half-plane model g = delta / y^2 on {y > 0}."""

    def metric_at(x):
        return (1.0 / x[..., 1] ** 2)[..., None, None] * np.eye(2)

    def christoffel_at(x):
        dlog = np.zeros_like(x)
        dlog[..., 1] = -1.0 / x[..., 1]
        return _conformal_christoffel(x, dlog)

    return ChartMetric(
        2,
        metric_at,
        christoffel_at=christoffel_at,
        name="hyperbolic-halfplane",
        in_domain=lambda x: x[..., 1] > 0,
    )


def stereographic_inverse(x: np.ndarray) -> np.ndarray:
    """Chart point -> unit vector in R^{n+1}."""
    x = _real(x)
    r2 = np.sum(x**2, axis=-1, keepdims=True)
    return np.concatenate([2 * x, r2 - 1], axis=-1) / (1 + r2)


def stereographic(p: np.ndarray) -> np.ndarray:
    """Unit vector in R^{n+1} (away from the north pole) -> chart point."""
    p = _real(p)
    return p[..., :-1] / (1 - p[..., -1:])


def stereographic_pushforward(p: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Differential of the stereographic projection at p applied to ambient v."""
    denom = 1 - p[..., -1:]
    return v[..., :-1] / denom + p[..., :-1] * v[..., -1:] / denom**2


def stereographic_pullback(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Differential of the inverse projection at chart point x applied to chart vector w."""
    x = _real(x)
    r2 = np.sum(x**2, axis=-1, keepdims=True)
    xw = np.sum(x * w, axis=-1, keepdims=True)
    top = 2 * w / (1 + r2) - 4 * x * xw / (1 + r2) ** 2
    last = 4 * xw / (1 + r2) ** 2
    return np.concatenate([top, last], axis=-1)


def rotation_field_stereographic(A, fd_step: float = DEFAULT_FD_STEP) -> VectorFieldOnTarget:
    """Chart expression of the Killing field u -> A u of S^n in the stereographic chart."""
    A = np.asarray(A, dtype=float)

    def evaluate(x):
        p = stereographic_inverse(x)
        return stereographic_pushforward(p, p @ A.T)

    return VectorFieldOnTarget(evaluate, generator=A, fd_step=fd_step, name="stereographic-rotation")


_REGISTRY: dict[str, Callable[..., ChartMetric]] = {
    "euclidean": euclidean,
    "sphere-stereographic": sphere_stereographic,
    "hyperbolic-halfplane": hyperbolic_halfplane,
}


def builtin_chart(name: str) -> ChartMetric:
    """Look up ``euclidean:n``, ``sphere-stereographic:n`` or ``hyperbolic-halfplane``."""
    base, _, arg = name.partition(":")
    if base not in _REGISTRY:
        raise KeyError(f"unknown chart {name!r}; known: {sorted(_REGISTRY)}")
    if base == "hyperbolic-halfplane":
        if arg:
            raise KeyError("hyperbolic-halfplane takes no dimension")
        return hyperbolic_halfplane()
    if not arg:
        raise KeyError(f"chart {base!r} needs a dimension, e.g. {base}:2")
    return _REGISTRY[base](int(arg))


def list_charts() -> list[str]:
    return ["euclidean:n", "sphere-stereographic:n", "hyperbolic-halfplane"]


# -- JSON metrics ---------------------------------------------------------


def _polynomial(terms):
    """terms: list of [coefficient, [exponent per coordinate]]."""
    coeffs = np.array([float(c) for c, _ in terms])
    exps = np.array([list(map(int, e)) for _, e in terms], dtype=float)

    def evaluate(x):
        return np.sum(coeffs * np.prod(x[..., None, :] ** exps, axis=-1), axis=-1)

    return evaluate


def chart_from_json(data) -> ChartMetric:
    """Rational metric from a coefficient table.

    Format::

        {"dim": 2,
         "components": {"0,0": {"num": [[4.0, [0, 0]]], "den": [[1, [0, 0]], ...]}, ...},
         "fd_step": 1e-4}

    Each component is num/den with polynomial numerator and denominator given
    as ``[coefficient, exponents]`` pairs; ``den`` defaults to 1.  Missing
    components are zero and ``"i,j"`` also fills ``"j,i"``.
    """
    if isinstance(data, (str, bytes)):
        data = json.loads(data)
    n = int(data["dim"])
    comps = {}
    for key, spec in data["components"].items():
        i, j = (int(s) for s in key.split(","))
        num = _polynomial(spec["num"])
        den = _polynomial(spec.get("den", [[1.0, [0] * n]]))
        comps[(i, j)] = comps[(j, i)] = (num, den)

    def metric_at(x):
        g = np.zeros(x.shape[:-1] + (n, n))
        for (i, j), (num, den) in comps.items():
            g[..., i, j] = num(x) / den(x)
        return g

    return ChartMetric(n, metric_at, float(data.get("fd_step", DEFAULT_FD_STEP)), name=data.get("name", "json"))
