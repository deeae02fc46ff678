"""Projected gradient descent on the k-energy of sphere-valued maps.

The flow is a factory for near-critical maps: each step moves along the
L2-gradient of E_k (the k-tension field with the pinned variation sign) and
renormalizes onto the sphere.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .chart_geometry import VectorFieldOnTarget
from .map_calculus import SIGMA, GridMap, first_variation, k_energy, k_tension
from .report import ResidualReport

#: Default step sizes; stability of the explicit scheme needs dt ~ h^(2k).
DEFAULT_DT = {1: 1e-3, 2: 1e-5}
TRAJECTORY_COLUMNS = ("step", "E_k", "tau_k_linf", "dt")


class FlowInstabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowConfig:
    """Settings for :func:`gradient_flow`.

    With ``step_halving`` a step that raises the energy is retried with half
    the step size, at most ``max_halvings`` times in a row.
    """

    k: int = 1
    dt: Optional[float] = None
    max_steps: int = 10_000
    tau_tol: float = 1e-8
    energy_tol: Optional[float] = None
    step_halving: bool = True
    max_halvings: int = 30
    check_descent: bool = False
    descent_eps: float = 1e-6

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"order k must be a positive integer, got {self.k}")
        if self.dt is None:
            object.__setattr__(self, "dt", DEFAULT_DT.get(self.k, 1e-5 * 10.0 ** (2 - self.k)))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.tau_tol > 0:
            raise ValueError("stop tolerance must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")


@dataclass
class FlowRecord:
    step: int
    energy: float
    tau_linf: float
    dt: float


@dataclass
class FlowResult:
    """Trajectory summary: one record per accepted step (record 0 is the start)."""

    final: GridMap
    records: list[FlowRecord] = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    descent_pairings: list[float] = field(default_factory=list)

    @property
    def energies(self) -> list[float]:
        return [r.energy for r in self.records]

    @property
    def final_tau_linf(self) -> float:
        return self.records[-1].tau_linf

    @property
    def steps(self) -> int:
        return self.records[-1].step

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.step, f"{r.energy:.12g}", f"{r.tau_linf:.12g}", f"{r.dt:.12g}"])
        return buf.getvalue()


def _tau(u: GridMap, k: int) -> np.ndarray:
    return k_tension(u, k).values


def _step(u: GridMap, tau: np.ndarray, dt: float) -> GridMap:
    w = u.values - dt * SIGMA * tau
    return u.with_values(w / np.linalg.norm(w, axis=-1, keepdims=True))


def gradient_flow(u0: GridMap, cfg: FlowConfig) -> FlowResult:
    """Run the projected descent from ``u0`` until ``tau_tol``, ``energy_tol`` or ``max_steps``.

    Raises :class:`FlowInstabilityError` when the energy exceeds ten times
    its initial value or a step cannot be made to decrease the energy.
    """
    if not u0.sphere:
        raise ValueError("gradient_flow needs a sphere-mode map")
    k = cfg.k
    u = u0
    E0 = E = k_energy(u, k)
    tau = _tau(u, k)
    res = FlowResult(u, [FlowRecord(0, E, float(np.max(np.abs(tau))), cfg.dt)])
    dt = cfg.dt
    step = 0

    def done() -> Optional[str]:
        if res.records[-1].tau_linf <= cfg.tau_tol:
            return "tau_tol"
        if cfg.energy_tol is not None and E <= cfg.energy_tol:
            return "energy_tol"
        return None

    while (reason := done()) is None and step < cfg.max_steps:
        for _ in range(cfg.max_halvings + 1):
            trial = _step(u, tau, dt)
            E_trial = k_energy(trial, k)
            if not math.isfinite(E_trial) or E_trial > 10 * max(E0, np.finfo(float).tiny):
                if not cfg.step_halving:
                    raise FlowInstabilityError(f"energy grew to {E_trial:.3e} (start {E0:.3e}); reduce dt below {dt:g}")
            elif E_trial <= E or not cfg.step_halving:
                break
            dt /= 2
        else:
            raise FlowInstabilityError(f"no energy-decreasing step down to dt = {dt:g}; reduce dt")
        if cfg.check_descent:
            fd, _ = first_variation(u, -SIGMA * tau, k, cfg.descent_eps)
            res.descent_pairings.append(fd)
        step += 1
        u, E = trial, E_trial
        tau = _tau(u, k)
        res.records.append(FlowRecord(step, E, float(np.max(np.abs(tau))), dt))
    res.final = u
    res.converged = reason is not None
    res.reason = reason or "max_steps"
    return res


def flow_conservation_check(
    u: GridMap,
    X: VectorFieldOnTarget,
    k: int,
    check_resolution: int = 64,
    tol: float = 1e-8,
    resolutions=None,
    order_range=(1.7, 2.3),
    exact_below: float = 1e-11,
) -> ResidualReport:
    """Conservation checks on a (near-critical) flow output.

    The map is Fourier-resampled onto a spectral grid of ``check_resolution``
    points per axis.  There the identity div J^k + <tau_k, X> must hold to
    ``tol``, and div J^k itself must sit at the level of the achieved
    tension: |div J^k| <= |tau_k| |X o phi| + tol pointwise.  With
    ``resolutions`` the resampled map must also pass the fd2 order window.
    """
    from .conservation import conservation_residual, noether_current
    from .maps import resample

    grid = u.domain.with_resolution(check_resolution).with_backend("spectral")
    v = GridMap(grid, u.target, resample(u, check_resolution).values)
    base = conservation_residual(v, X, k, tol=tol)
    div = noether_current(v, X, k).divergence()
    bound = np.linalg.norm(k_tension(v, k).values, axis=-1) * np.linalg.norm(v.calc.field_along(X), axis=-1)
    excess = float(np.max(np.abs(div) - bound - tol))
    checks = {"div_at_tau_level": excess <= 0}
    meta = dict(base.meta, div_linf=float(np.max(np.abs(div))), tau_level_excess=excess)
    if resolutions:
        fd = u.domain.with_backend("fd2")
        study = [
            conservation_residual(GridMap(fd.with_resolution(N), u.target, resample(u, N).values), X, k,
                                  order_range=order_range)
            for N in resolutions
        ]
        merged = ResidualReport.merge(study, tolerance=None, order_range=order_range, exact_below=exact_below)
        meta["fd2_levels"] = [lv.linf for lv in merged.levels]
        meta["fd2_orders"] = merged.orders
        checks["fd2_order"] = merged.passed
    return ResidualReport(base.identity, base.levels, tol, meta=meta, checks=checks)
