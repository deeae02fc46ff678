"""Uniform periodic grids on tori and their differentiation backends.

Fields on a grid are stored with the grid axes first, so a vector field on a
2-torus of resolution ``(N1, N2)`` has shape ``(N1, N2, d)``.  Derivatives act
on the leading axes only and broadcast over trailing component axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.fft

BACKENDS = ("fd2", "fd4", "spectral")
PRECISIONS = {"double": np.float64, "extended": np.longdouble}
TWO_PI_EXT = 2 * np.longdouble("3.14159265358979323846264338327950288")

MetricSpec = Union[None, Callable[[np.ndarray], np.ndarray], np.ndarray]


class GridError(ValueError):
    pass


def tolerance(backend: str, h: float, C: float = 50.0) -> float:
    """Default pass threshold ``C * h**p`` for a backend of formal order p.

    The spectral backend has no algebraic order; its default is a flat 1e-8.
    """
    if backend == "fd2":
        return C * h**2
    if backend == "fd4":
        return C * h**4
    return 1e-8


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Periodic grid on ``prod_i [0, period_i)`` with optional domain metric.

    ``metric`` may be a callable taking points of shape ``(..., m)`` and
    returning ``(..., m, m)``, or a precomputed array of shape
    ``(*resolution, m, m)``.  ``density`` optionally overrides the volume
    density ``sqrt(det g)`` with a (possibly signed) field; the divergence
    only depends on it up to sign.

    ``precision="extended"`` stores coordinates (and hence every map built on
    the grid) in ``np.longdouble``.  It is meant for high-order spectral
    identities, where the derivative chain amplifies float64 round-off by
    roughly (N/2)^(number of derivatives); it requires a flat metric.
    """

    resolution: tuple[int, ...]
    periods: tuple[float, ...] = ()
    backend: str = "fd2"
    metric: MetricSpec = None
    density: Optional[np.ndarray] = field(default=None, repr=False)
    precision: str = "double"
    dealias: bool = False

    def __post_init__(self):
        res = tuple(int(n) for n in np.atleast_1d(self.resolution))
        if not res or any(n < 3 for n in res):
            raise GridError(f"resolution must be >= 3 per axis, got {res}")
        object.__setattr__(self, "resolution", res)
        periods = tuple(float(p) for p in self.periods) or (2 * np.pi,) * len(res)
        if len(periods) != len(res) or any(p <= 0 for p in periods):
            raise GridError(f"bad periods {periods} for resolution {res}")
        object.__setattr__(self, "periods", periods)
        if self.backend not in BACKENDS:
            raise GridError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.precision not in PRECISIONS:
            raise GridError(f"unknown precision {self.precision!r}; expected one of {tuple(PRECISIONS)}")
        if self.precision == "extended" and not (self.metric is None and self.density is None):
            raise GridError("extended precision is only supported on flat grids")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @cached_property
    def exact_periods(self) -> tuple:
        """Periods in the grid dtype; a float64 2*pi is promoted to the extended-precision 2*pi."""
        if self.precision == "double":
            return self.periods
        return tuple(TWO_PI_EXT if p == 2 * np.pi else np.longdouble(p) for p in self.periods)

    @property
    def two_pi(self):
        return TWO_PI_EXT if self.precision == "extended" else 2 * np.pi

    @property
    def dim(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple(p / n for p, n in zip(self.periods, self.resolution))

    @property
    def h(self) -> float:
        """Largest grid step; the refinement parameter used in reports."""
        return max(self.steps)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.steps))

    @property
    def flat(self) -> bool:
        return self.metric is None

    def with_resolution(self, resolution: Sequence[int] | int) -> "DomainGrid":
        if np.isscalar(resolution):
            resolution = (int(resolution),) * self.dim
        if self.metric is not None and not callable(self.metric):
            raise GridError("cannot resample a grid whose metric is a fixed array")
        return replace(self, resolution=tuple(resolution), density=None)

    def with_backend(self, backend: str) -> "DomainGrid":
        return replace(self, backend=backend)

    def with_precision(self, precision: str) -> "DomainGrid":
        return replace(self, precision=precision)

    def with_metric(self, metric: MetricSpec, density: Optional[np.ndarray] = None) -> "DomainGrid":
        return replace(self, metric=metric, density=density)

    # -- coordinates -----------------------------------------------------

    @cached_property
    def axes(self) -> list[np.ndarray]:
        dt = self.dtype
        return [np.arange(n, dtype=dt) * (p / n) for n, p in zip(self.resolution, self.exact_periods)]

    @cached_property
    def points(self) -> np.ndarray:
        """Grid coordinates, shape ``(*resolution, m)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(self.points[..., i] for i in range(self.dim))

    # -- differentiation -------------------------------------------------

    @cached_property
    def _wavenumbers(self) -> list[np.ndarray]:
        out = []
        dt = self.dtype
        for n, p in zip(self.resolution, self.exact_periods):
            k = np.arange(n // 2 + 1, dtype=dt) * (self.two_pi / p)
            if self.dealias:
                k[np.arange(k.size) > n // 3] = 0.0  # 2/3 rule
            if n % 2 == 0:
                k[-1] = 0.0  # Nyquist mode has no odd derivative
            out.append(1j * k)
        return out

    def diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Partial derivative along grid axis ``axis`` with the grid backend."""
        h = self.exact_periods[axis] / self.resolution[axis]
        if self.backend == "fd2":
            return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2 * h)
        if self.backend == "fd4":
            return (
                -np.roll(f, -2, axis)
                + 8 * np.roll(f, -1, axis)
                - 8 * np.roll(f, 1, axis)
                + np.roll(f, 2, axis)
            ) / (12 * h)
        n = self.resolution[axis]
        ik = self._wavenumbers[axis]
        bshape = [1] * f.ndim
        bshape[axis] = ik.size
        fh = scipy.fft.rfft(f, axis=axis)
        return scipy.fft.irfft(fh * ik.reshape(bshape), n=n, axis=axis)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """All partials, stacked on a new trailing axis: shape ``f.shape + (m,)``."""
        return np.stack([self.diff(f, i) for i in range(self.dim)], axis=-1)

    # -- metric data -----------------------------------------------------

    @cached_property
    def metric_field(self) -> np.ndarray:
        m = self.dim
        if self.metric is None:
            return np.broadcast_to(np.eye(m), self.resolution + (m, m))
        if callable(self.metric):
            g = np.asarray(self.metric(self.points), dtype=float)
        else:
            g = np.asarray(self.metric, dtype=float)
        if g.shape != self.resolution + (m, m):
            raise GridError(f"metric has shape {g.shape}, expected {self.resolution + (m, m)}")
        return g

    @cached_property
    def inverse_metric(self) -> np.ndarray:
        if self.flat:
            return self.metric_field
        return np.linalg.inv(self.metric_field)

    @cached_property
    def volume_density(self) -> np.ndarray:
        """Signed density used by divergence; ``sqrt(det g)`` unless overridden."""
        if self.density is not None:
            return np.asarray(self.density, dtype=float)
        if self.flat:
            return np.ones(self.resolution, dtype=self.dtype)
        det = np.linalg.det(self.metric_field)
        if np.any(det <= 0):
            raise GridError("domain metric is not positive definite")
        return np.sqrt(det)

    @cached_property
    def christoffel(self) -> Optional[np.ndarray]:
        """Domain Levi-Civita symbols ``G[..., k, i, j]`` or None when flat."""
        if self.flat:
            return None
        g = self.metric_field
        dg = np.stack([self.diff(g, a) for a in range(self.dim)], axis=-3)  # [..., a, i, j] = d_a g_ij
        lowered = 0.5 * (
            np.einsum("...ijl->...lij", dg)
            + np.einsum("...jil->...lij", dg)
            - dg
        )
        # lowered[..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
        return np.einsum("...kl,...lij->...kij", self.inverse_metric, lowered)

    # -- integrals and divergence ----------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        """Trapezoid rule (spectrally accurate on periodic grids) w.r.t. dv_g."""
        w = np.abs(self.volume_density)
        return float(np.sum(f * w) * self.cell_volume)

    def divergence(self, V: np.ndarray) -> np.ndarray:
        """Metric divergence of a contravariant field ``V[..., i]``."""
        rho = self.volume_density
        total = sum(self.diff(rho * V[..., i], i) for i in range(self.dim))
        if self.flat and self.density is None:
            return total
        return total / rho

    def l2_norm(self, f: np.ndarray) -> float:
        f = np.asarray(f)
        sq = f**2 if f.ndim == self.dim else np.sum(f.reshape(self.resolution + (-1,)) ** 2, axis=-1)
        return float(np.sqrt(self.integrate(sq)))
