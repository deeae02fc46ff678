"""Built-in and generated GridMaps, plus the map-spec JSON reader."""

from __future__ import annotations

import itertools
import json
from typing import Any, Mapping

import numpy as np

from .chart_geometry import builtin_chart, stereographic
from .grid import DomainGrid
from .map_calculus import ChartTarget, GridMap, SphereTarget


def _normalize(p: np.ndarray) -> np.ndarray:
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def great_circle(grid: DomainGrid, k: int = 1) -> GridMap:
    """u(x) = (cos kx, sin kx, 0) in S^2, x the first domain coordinate."""
    x = grid.coords()[0]
    vals = np.stack([np.cos(k * x), np.sin(k * x), np.zeros_like(x)], -1)
    return GridMap(grid, SphereTarget(2), vals)


def small_circle(grid: DomainGrid, r: float = 2**-0.5) -> GridMap:
    """u(x) = (r cos x, r sin x, sqrt(1 - r^2)) in S^2; biharmonic iff r = 1/sqrt(2)."""
    x = grid.coords()[0]
    r = grid.dtype(r)
    vals = np.stack([r * np.cos(x), r * np.sin(x), np.full_like(x, np.sqrt(1 - r * r))], -1)
    return GridMap(grid, SphereTarget(2), vals)


def clifford(grid: DomainGrid) -> GridMap:
    """Harmonic Clifford torus T^2 -> S^3."""
    x, y = grid.coords()[:2]
    vals = np.stack([np.cos(x), np.sin(x), np.cos(y), np.sin(y)], -1) / np.sqrt(grid.dtype(2))
    return GridMap(grid, SphereTarget(3), vals)


def clifford_lift(grid: DomainGrid) -> GridMap:
    """Proper biharmonic T^2 -> S^4, u = (cos x, sin x, cos y, sin y, sqrt 2)/2."""
    x, y = grid.coords()[:2]
    vals = np.stack([np.cos(x), np.sin(x), np.cos(y), np.sin(y), np.full_like(x, np.sqrt(grid.dtype(2)))], -1) / 2
    return GridMap(grid, SphereTarget(4), vals)


def constant_map(grid: DomainGrid, point) -> GridMap:
    point = np.asarray(point, dtype=grid.dtype)
    vals = np.broadcast_to(point, grid.shape + point.shape).copy()
    return GridMap(grid, SphereTarget(point.size - 1), vals)


def wavevectors(dim: int, bandwidth: int) -> list[tuple[int, ...]]:
    """Nonzero integer wavevectors with |k|_inf <= bandwidth, one of each +-k pair."""
    out = []
    for k in itertools.product(range(-bandwidth, bandwidth + 1), repeat=dim):
        if any(k) and k > tuple(-c for c in k):
            out.append(k)
    return out


def trig_polynomial(grid: DomainGrid, terms: list[Mapping[str, Any]], components: int) -> np.ndarray:
    """Evaluate sum_k a_k cos(k.x) + b_k sin(k.x) per component.

    ``terms`` entries: ``{"k": [k1, ...], "cos": [per component], "sin": [...]}``;
    wavevector entries are scaled by 2*pi/period so they are integers on any torus.
    """
    X = grid.points
    dt = grid.dtype
    scale = np.array([grid.two_pi / p for p in grid.exact_periods], dtype=dt)
    out = np.zeros(grid.shape + (components,), dtype=dt)
    for t in terms:
        k = np.asarray(t["k"], dtype=dt) * scale
        phase = X @ k
        out += np.cos(phase)[..., None] * np.asarray(t.get("cos", 0.0), dtype=dt)
        out += np.sin(phase)[..., None] * np.asarray(t.get("sin", 0.0), dtype=dt)
    return out


def random_trig_terms(dim: int, components: int, bandwidth: int, seed: int, amplitude: float = 1.0) -> list[dict]:
    """Seeded coefficient table: a random unit constant term plus
    amplitude * N(0, 1) / |k|^2 coefficients on every wavevector up to the bandwidth."""
    rng = np.random.default_rng(seed)
    c0 = rng.standard_normal(components)
    terms = [{"k": [0] * dim, "cos": (c0 / np.linalg.norm(c0)).tolist()}]
    for k in wavevectors(dim, bandwidth):
        w = amplitude / float(np.dot(k, k))
        terms.append(
            {
                "k": list(k),
                "cos": (w * rng.standard_normal(components)).tolist(),
                "sin": (w * rng.standard_normal(components)).tolist(),
            }
        )
    return terms


def random_sphere_map(grid: DomainGrid, n: int, bandwidth: int = 2, seed: int = 0, amplitude: float = 0.1) -> GridMap:
    """Normalized random trig polynomial map T^m -> S^n (reproducible from the seed)."""
    p = trig_polynomial(grid, random_trig_terms(grid.dim, n + 1, bandwidth, seed, amplitude), n + 1)
    if np.min(np.linalg.norm(p, axis=-1)) < 1e-3:
        raise ValueError(f"seed {seed} gives a polynomial too close to zero to normalize")
    return GridMap(grid, SphereTarget(n), _normalize(p))


def _orthogonal(rng: np.random.Generator, n: int, dtype) -> np.ndarray:
    """Haar-random orthogonal matrix, polished to the working precision."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = (q * np.sign(np.diag(r))).astype(dtype)
    eye = np.eye(n, dtype=dtype)
    for _ in range(2):
        q = q @ (3 * eye - q.T @ q) / 2  # Newton-Schulz step towards the polar factor
    return q


def unit_rotation_generator(rng: np.random.Generator, n: int, dtype=float) -> np.ndarray:
    """Random antisymmetric A = Q J Q^T whose rotation planes all turn at unit speed.

    exp(tA) = I + sin(t) A + (1 - cos t) A^2 is then 2*pi-periodic with bandwidth 1.
    """
    J = np.zeros((n, n), dtype=dtype)
    for p in range(n // 2):
        J[2 * p, 2 * p + 1], J[2 * p + 1, 2 * p] = -1, 1
    Q = _orthogonal(rng, n, dtype)
    return Q @ J @ Q.T


def random_band_limited_map(grid: DomainGrid, n: int, bandwidth: int = 2, seed: int = 0) -> GridMap:
    """u = prod_f prod_i exp(x_i A_{f,i}) v0 with ``bandwidth`` unit-speed factors per axis.

    Unlike a normalized polynomial, u is itself a trigonometric polynomial of
    the given bandwidth and lies exactly on S^n, so spectral derivatives of
    every polynomial expression in u are exact once the resolution exceeds
    the degree times the bandwidth.
    """
    dt = grid.dtype
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n + 1).astype(dt)
    u = np.broadcast_to(v0 / np.sqrt(np.sum(v0 * v0)), grid.shape + (n + 1,))
    scale = [grid.two_pi / p for p in grid.exact_periods]
    eye = np.eye(n + 1, dtype=dt)
    for _ in range(bandwidth):
        for i in reversed(range(grid.dim)):
            A = unit_rotation_generator(rng, n + 1, dt)
            t = (grid.coords()[i] * scale[i])[..., None, None]
            R = eye + np.sin(t) * A + (1 - np.cos(t)) * (A @ A)
            u = np.einsum("...ab,...b->...a", R, u)
    return GridMap(grid, SphereTarget(n), u)


def resample(u: GridMap, resolution) -> GridMap:
    """Fourier interpolation of a sphere-mode map onto another resolution, renormalized.

    The top retained mode is dropped so no Nyquist ambiguity enters.
    """
    if not u.sphere:
        raise ValueError("expected a sphere-mode map")
    grid = u.domain.with_resolution(resolution)
    axes = tuple(range(u.domain.dim))
    src, dst = u.domain.resolution, grid.resolution
    keep = [min(a, b) // 2 for a, b in zip(src, dst)]
    spec = np.fft.fftn(u.values, axes=axes)
    out = np.zeros(dst + (u.values.shape[-1],), dtype=complex)
    for idx in itertools.product(*(range(-kp + 1, kp) for kp in keep)):
        out[idx] = spec[idx]
    vals = np.real(np.fft.ifftn(out, axes=axes)) * (np.prod(dst) / np.prod(src))
    return GridMap(grid, u.target, _normalize(vals))


def to_stereographic(u: GridMap) -> GridMap:
    """Sphere-mode map -> the same map in the stereographic chart from the north pole."""
    if not u.sphere:
        raise ValueError("expected a sphere-mode map")
    chart = builtin_chart(f"sphere-stereographic:{u.target.n}")
    return GridMap(u.domain, ChartTarget(chart), stereographic(u.values))


# -- map-spec JSON ----------------------------------------------------------

BUILTIN_MAPS = (
    "great-circle:k",
    "small-circle:r",
    "clifford",
    "clifford-lift",
    "random:n:bandwidth:seed[:amplitude]",
    "banded:n:bandwidth:seed",
)


def grid_from_spec(spec: Mapping[str, Any], resolution=None) -> DomainGrid:
    dim = int(spec.get("dim", 1))
    res = spec.get("resolution", 64) if resolution is None else resolution
    res = (int(res),) * dim if np.isscalar(res) else tuple(int(r) for r in res)
    if len(res) != dim:
        raise ValueError(f"resolution {res} does not match dim {dim}")
    periods = spec.get("periods", [2 * np.pi] * dim)
    periods = [float(periods)] * dim if np.isscalar(periods) else periods
    return DomainGrid(
        res,
        tuple(periods),
        spec.get("backend", "fd2"),
        precision=spec.get("precision", "double"),
        dealias=bool(spec.get("dealias", False)),
    )


def map_from_spec(spec: Mapping[str, Any] | str, resolution=None) -> GridMap:
    """Build a GridMap from a map-spec (dict or JSON text).

    ``{"domain": {"dim", "resolution", "periods", "backend"}, "target": "sphere:n" | chart,
    "map": builtin name | {"terms": [...], "normalize": true}}``.  A chart target
    with a sphere-valued map is converted through the stereographic chart.
    """
    if isinstance(spec, (str, bytes)):
        spec = json.loads(spec)
    grid = grid_from_spec(spec.get("domain", {}), resolution)
    target = spec.get("target", "sphere:2")
    m = spec["map"]
    if isinstance(m, str):
        name, _, arg = m.partition(":")
        if name == "great-circle":
            u = great_circle(grid, int(arg or 1))
        elif name == "small-circle":
            u = small_circle(grid, float(arg) if arg else 2**-0.5)
        elif name == "clifford":
            u = clifford(grid)
        elif name == "clifford-lift":
            u = clifford_lift(grid)
        elif name == "random":
            n, bw, seed, *amp = arg.split(":")
            u = random_sphere_map(grid, int(n), int(bw), int(seed), *(float(a) for a in amp))
        elif name == "banded":
            n, bw, seed = (int(a) for a in arg.split(":"))
            u = random_band_limited_map(grid, n, bw, seed)
        else:
            raise ValueError(f"unknown builtin map {m!r}; known: {BUILTIN_MAPS}")
    else:
        comps = int(m.get("components", 0)) or len(m["terms"][0].get("cos", m["terms"][0].get("sin")))
        p = trig_polynomial(grid, m["terms"], comps)
        if target.startswith("sphere"):
            if not m.get("normalize", False):
                raise ValueError("sphere targets need unit values; set \"normalize\": true")
            u = GridMap(grid, SphereTarget(comps - 1), _normalize(p))
        else:
            return GridMap(grid, ChartTarget(builtin_chart(target)), p)
    if target.startswith("sphere"):
        if f"sphere:{u.target.n}" != target:
            raise ValueError(f"map lands in sphere:{u.target.n}, spec says {target}")
        return u
    if target.startswith("sphere-stereographic"):
        return to_stereographic(u)
    raise ValueError(f"cannot place a sphere-valued map into chart {target!r}")
