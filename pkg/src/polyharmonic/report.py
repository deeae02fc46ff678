"""Residual reports: per-level norms, observed convergence orders, JSON/CSV."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

CSV_COLUMNS = ("identity", "h", "linf", "l2", "order", "pass")


@dataclass
class Level:
    h: float
    resolution: tuple[int, ...]
    linf: float
    l2: float


def _finite(x: float) -> Optional[float]:
    return None if x is None or not math.isfinite(x) else x


@dataclass
class ResidualReport:
    """Residual norms of one identity over one or more grid resolutions.

    ``tolerance`` bounds the L-infinity residual at the finest level;
    ``order_range`` (lo, hi) bounds every observed order log2(r(h)/r(h/2)).
    ``exact_below`` marks levels already at round-off, which are excluded
    from the order check and reported as ``"exact"``.  ``checks`` holds extra
    named pass/fail conditions that ``passed`` also requires.
    """

    identity: str
    levels: list[Level] = field(default_factory=list)
    tolerance: Optional[float] = None
    order_range: Optional[tuple[float, float]] = None
    exact_below: Optional[float] = None
    meta: dict[str, Any] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def single(cls, identity: str, grid, residual: np.ndarray, **kw) -> "ResidualReport":
        residual = np.asarray(residual, dtype=float)
        mask = kw.pop("mask", None)
        linf, l2 = residual_norms(grid, residual, mask)
        return cls(identity, [Level(grid.h, grid.resolution, linf, l2)], **kw)

    @classmethod
    def merge(cls, reports: Sequence["ResidualReport"], **kw) -> "ResidualReport":
        first = reports[0]
        levels = sorted((lv for r in reports for lv in r.levels), key=lambda lv: -lv.h)
        meta = dict(first.meta)
        meta.update(kw.pop("meta", {}))
        checks: dict[str, bool] = {}
        for r in reports:
            for name, ok in r.checks.items():
                checks[name] = checks.get(name, True) and bool(ok)
        checks.update(kw.pop("checks", {}))
        opts = dict(
            tolerance=first.tolerance,
            order_range=first.order_range,
            exact_below=first.exact_below,
        )
        opts.update(kw)
        return cls(first.identity, levels, meta=meta, checks=checks, **opts)

    @property
    def finest(self) -> Level:
        return self.levels[-1]

    @property
    def orders(self) -> list[Optional[float]]:
        """Observed orders between consecutive levels (None for round-off levels)."""
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            if self._exact(a) or self._exact(b) or a.linf == 0 or b.linf == 0:
                out.append(None)
            else:
                out.append(math.log(a.linf / b.linf) / math.log(a.h / b.h))
        return out

    def _exact(self, lv: Level) -> bool:
        return self.exact_below is not None and lv.linf < self.exact_below

    @property
    def passed(self) -> bool:
        ok = True
        if self.tolerance is not None:
            ok &= self.finest.linf <= self.tolerance
        if self.order_range is not None:
            lo, hi = self.order_range
            orders = [o for o in self.orders if o is not None]
            if len(self.levels) < 2:
                ok = False
            elif orders:
                ok &= all(lo <= o <= hi for o in orders)
            else:
                ok &= all(self._exact(lv) for lv in self.levels)
        return bool(ok and all(self.checks.values()))

    def summary(self) -> str:
        parts = [f"{lv.resolution[0]}:{lv.linf:.3e}" for lv in self.levels]
        orders = ", ".join("exact" if o is None else f"{o:.2f}" for o in self.orders)
        return f"{self.identity}: linf [{' '.join(parts)}] orders [{orders}] {'PASS' if self.passed else 'FAIL'}"

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "identity": self.identity,
            "levels": [
                {"h": lv.h, "resolution": list(lv.resolution), "linf": _finite(lv.linf), "l2": _finite(lv.l2)}
                for lv in self.levels
            ],
            "orders": self.orders if len(self.levels) >= 2 else [],
            "tolerance": self.tolerance,
            "order_range": list(self.order_range) if self.order_range else None,
            "checks": {k: bool(v) for k, v in self.checks.items()},
            "passed": self.passed,
            "meta": _jsonable(self.meta),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    def csv_rows(self) -> list[dict[str, Any]]:
        orders = [None] + self.orders
        rows = []
        for lv, o in zip(self.levels, orders):
            if o is None and self._exact(lv):
                order = "exact"
            else:
                order = "" if o is None else f"{o:.6g}"
            rows.append(
                {
                    "identity": self.identity,
                    "h": f"{lv.h:.12g}",
                    "linf": f"{lv.linf:.12g}",
                    "l2": f"{lv.l2:.12g}",
                    "order": order,
                    "pass": int(self.passed),
                }
            )
        return rows


def reports_to_csv(reports: Sequence[ResidualReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerows(r.csv_rows())
    return buf.getvalue()


def residual_norms(grid, residual: np.ndarray, mask: Optional[np.ndarray] = None) -> tuple[float, float]:
    """(max-norm, L2 norm w.r.t. dv_g) of a scalar, vector or matrix field."""
    r = np.asarray(residual, dtype=float).reshape(grid.shape + (-1,))
    sq = np.sum(r**2, axis=-1)
    if mask is not None:
        sq = np.where(mask, sq, 0.0)
        r = np.where(mask[..., None], r, 0.0)
    linf = float(np.max(np.abs(r))) if r.size else 0.0
    return linf, float(np.sqrt(max(grid.integrate(sq), 0.0)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dataclass_dict(obj) -> dict:
    return _jsonable(asdict(obj))
