"""Command-line front end: suite runner, convergence studies, flows and hypersurface checks.

A suite file is JSON, either a single check entry or ``{"checks": [entry, ...]}``.
A map check entry looks like::

    {"name": "circle", "kind": "conservation",
     "domain": {"dim": 1, "backend": "spectral"}, "target": "sphere:2",
     "map": "small-circle:0.7071", "orders": [1, 2], "resolutions": [64, 128],
     "generators": {"random": 2, "seed": 0}}

Exit codes: 0 every check passed, 1 some check failed, 2 usage error,
3 numerical instability.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import conservation as cons
from . import hypersurface as hyp
from . import sphere_extrinsic as sx
from .chart_geometry import list_charts, rotation_field_stereographic
from .flow import FlowConfig, FlowInstabilityError, flow_conservation_check, gradient_flow
from .grid import BACKENDS
from .map_calculus import BITENSION_SIGN, SIGMA, GridMap
from .maps import BUILTIN_MAPS, map_from_spec
from .report import ResidualReport, reports_to_csv

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_UNSTABLE = 0, 1, 2, 3
KILLING_GATE = 1e-8

MAP_KINDS = ("conservation", "stress-energy", "biharmonic-extrinsic", "wedge-equivalence", "zero-curvature")
HYPERSURFACE_KINDS = ("system", "codazzi", "tension", "current", "current-complete", "normal-block")


class UsageError(ValueError):
    pass


class InstabilityError(RuntimeError):
    pass


def conventions() -> dict[str, Any]:
    """Sign and placement constants embedded in every report."""
    return {
        "sigma_k": SIGMA,
        "bitension_sign": BITENSION_SIGN,
        "odd_term": {"sign": cons.ODD_TERM_SIGN, "placement": cons.ODD_TERM_PLACEMENT},
    }


# -- spec handling ----------------------------------------------------------------


def load_suite(path: str) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read spec: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed JSON in {path}: {exc}") from exc
    entries = data
    if isinstance(data, dict):
        # a hypersurface entry also has "checks", but as a list of check names
        wrapped = isinstance(data.get("checks"), list) and all(isinstance(e, dict) for e in data["checks"])
        entries = data["checks"] if wrapped else [data]
    if not isinstance(entries, list) or not entries or not all(isinstance(e, dict) for e in entries):
        raise UsageError("spec must be a check object, a list of them, or {\"checks\": [...]}")
    return entries


def _resolutions(entry: Mapping[str, Any], minimum: int = 1) -> list[int]:
    res = entry.get("resolutions", [entry.get("resolution", 64)])
    if not isinstance(res, list) or not all(isinstance(r, int) and r >= 3 for r in res):
        raise UsageError(f"resolutions must be a list of integers >= 3, got {res!r}")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise UsageError(f"resolutions must be strictly increasing, got {res}")
    if len(res) < minimum:
        raise UsageError(f"need at least {minimum} resolutions, got {len(res)}")
    return res


def _domain(entry: Mapping[str, Any]) -> dict:
    dom = dict(entry.get("domain", {}))
    if "backend" in entry:
        dom["backend"] = entry["backend"]
    if dom.get("backend", "fd2") not in BACKENDS:
        raise UsageError(f"unknown backend {dom['backend']!r}; expected one of {BACKENDS}")
    return dom


def _map_builder(entry: Mapping[str, Any]) -> Callable[[int], GridMap]:
    if "map" not in entry:
        raise UsageError("check entry needs a \"map\"")
    spec = {"domain": _domain(entry), "target": entry.get("target", "sphere:2"), "map": entry["map"]}

    def build(N: int) -> GridMap:
        try:
            return map_from_spec(spec, N)
        except (KeyError, ValueError, TypeError) as exc:
            raise UsageError(f"bad map spec: {exc}") from exc

    return build


def _generators(entry: Mapping[str, Any], n_ambient: int, seed: int) -> list[np.ndarray]:
    g = entry.get("generators", {"random": 1})
    try:
        if isinstance(g, dict):
            s = int(g.get("seed", seed))
            return [sx.random_generator(n_ambient, s + i) for i in range(int(g.get("random", 1)))]
        mats = [sx.generator_from_json(m) for m in g]
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"bad generator: {exc}") from exc
    for A in mats:
        if A.shape != (n_ambient, n_ambient):
            raise UsageError(f"generator has shape {A.shape}, target needs {(n_ambient, n_ambient)}")
    return mats


def _killing_fields(u: GridMap, mats: Sequence[np.ndarray]):
    if u.sphere:
        fields = [sx.killing_from_generator(A) for A in mats]
    elif u.target.name.startswith("sphere-stereographic"):
        fields = [rotation_field_stereographic(A) for A in mats]
    else:
        raise UsageError(f"no Killing generators known for target {u.target.name}")
    for X in fields:
        defect = cons.killing_defect(u, X)
        if defect > KILLING_GATE:
            raise UsageError(f"vector field fails the Killing gate (|L_X h| = {defect:.2e})")
    return fields


def _target_ambient(u: GridMap) -> int:
    return u.target.ambient_dim if u.sphere else u.target.chart.dim + 1


# -- checks -------------------------------------------------------------------------


def _tol_kw(entry: Mapping[str, Any], study: bool, backend: str) -> dict:
    kw: dict[str, Any] = {}
    if "tolerance" in entry:
        kw["tolerance"] = float(entry["tolerance"])
    if study:
        kw.setdefault("order_range", tuple(entry.get("order_range", (1.7, 2.3))) if backend != "spectral" else None)
        kw["exact_below"] = float(entry.get("exact_below", 1e-9 if backend == "spectral" else 1e-11))
        if backend != "spectral":
            kw.setdefault("tolerance", None)
    return kw


def _merge(per_level: list[ResidualReport], entry, study: bool, backend: str, name: str) -> ResidualReport:
    kw = {"tolerance": per_level[-1].tolerance}
    kw.update(_tol_kw(entry, study, backend))
    rep = ResidualReport.merge(per_level, **kw)
    rep.meta.update(conventions())
    rep.meta["check"] = name
    rep.identity = f"{name} | {rep.identity}"
    return rep


def run_map_check(entry: Mapping[str, Any], seed: int = 0, study: bool = False) -> list[ResidualReport]:
    """All reports of one map-based check entry, merged over its resolutions."""
    kind = entry.get("kind", "conservation")
    if kind not in MAP_KINDS:
        raise UsageError(f"unknown check kind {kind!r}; expected one of {MAP_KINDS}")
    res = _resolutions(entry, 3 if study else 1)
    build = _map_builder(entry)
    maps = [build(N) for N in res]
    backend = maps[0].domain.backend
    name = entry.get("name", kind)
    orders = entry.get("orders", [1])
    if not isinstance(orders, list) or not all(isinstance(k, int) and k >= 1 for k in orders):
        raise UsageError(f"orders must be a list of positive integers, got {orders!r}")
    C = float(entry.get("C", 50.0))
    out: list[ResidualReport] = []

    def collect(fn: Callable[[GridMap], ResidualReport], label: str) -> None:
        out.append(_merge([fn(u) for u in maps], entry, study, backend, f"{name}:{label}"))

    if kind == "conservation":
        mats = _generators(entry, _target_ambient(maps[0]), seed)
        fields = [_killing_fields(u, mats) for u in maps]
        for k in orders:
            for g in range(len(mats)):
                per = [cons.conservation_residual(u, fields[i][g], k, C=C) for i, u in enumerate(maps)]
                out.append(_merge(per, entry, study, backend, f"{name}:k={k}:X={g}"))
    elif kind == "stress-energy":
        for k in orders:
            collect(lambda u, k=k: cons.stress_energy_residual(u, k, C=C), f"k={k}")
    elif kind == "biharmonic-extrinsic":
        collect(lambda u: sx.biharmonic_extrinsic_residual(u, C=C), "bitension")
    elif kind == "wedge-equivalence":
        for k in orders:
            collect(lambda u, k=k: sx.wedge_equivalence_check(u, k), f"order={k}")
    else:
        expect = entry.get("expect_zero")
        for k in orders:
            collect(lambda u, k=k: sx.zero_curvature_residual(u, k, C=C, expect_zero=expect), f"order={k}")
    return out


def run_hypersurface_check(entry: Mapping[str, Any], seed: int = 0, study: bool = False) -> list[ResidualReport]:
    if "immersion" not in entry and "terms" not in entry:
        raise UsageError("hypersurface entry needs an \"immersion\" or \"terms\"")
    res = _resolutions(entry, 3 if study else 1)
    kinds = entry.get("checks", ["system", "codazzi", "tension", "current"])
    bad = [k for k in kinds if k not in HYPERSURFACE_KINDS]
    if bad:
        raise UsageError(f"unknown hypersurface checks {bad}; expected some of {HYPERSURFACE_KINDS}")
    spec = dict(entry)
    spec["domain"] = _domain(entry)
    try:
        imms = [hyp.immersion_from_spec(spec, N) for N in res]
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        raise UsageError(f"bad immersion spec: {exc}") from exc
    backend = imms[0].grid.backend
    name = entry.get("name", imms[0].name)
    C = float(entry.get("C", 50.0))
    mats = _generators(entry, imms[0].m + 2, seed)
    out: list[ResidualReport] = []

    def collect(per: list[ResidualReport], label: str) -> None:
        out.append(_merge(per, entry, study, backend, f"{name}:{label}"))

    for kind in kinds:
        if kind == "system":
            pairs = [hyp.biharmonic_system_residual(i, C=C) for i in imms]
            collect([p[0] for p in pairs], "system-1")
            collect([p[1] for p in pairs], "system-2")
        elif kind == "codazzi":
            collect([hyp.codazzi_trace_residual(i, C=C) for i in imms], "codazzi")
        elif kind == "tension":
            collect([hyp.tension_normal_residual(i, C=C) for i in imms], "tension")
        else:
            for g, A in enumerate(mats):
                X = sx.killing_from_generator(A)
                if kind == "normal-block":
                    per = [hyp.normal_block_residual(i, X, C=C) for i in imms]
                else:
                    against = "complete" if kind == "current-complete" else "reduced"
                    per = [hyp.hypersurface_current_residual(i, X, C=C, against=against) for i in imms]
                collect(per, f"{kind}:X={g}")
    return out


def _run_entry(entry: Mapping[str, Any], seed: int, study: bool) -> list[ResidualReport]:
    if "immersion" in entry or "terms" in entry:
        reps = run_hypersurface_check(entry, seed, study)
    else:
        reps = run_map_check(entry, seed, study)
    for r in reps:
        if any(not math.isfinite(lv.linf) for lv in r.levels):
            raise InstabilityError(f"non-finite residual in {r.identity}")
    return reps


def run_suite(entries: Sequence[Mapping[str, Any]], seed: int = 0, study: bool = False, jobs: int = 1) -> list[ResidualReport]:
    """Run every entry (optionally concurrently) and return reports in spec order."""
    with np.errstate(all="ignore"):
        if jobs > 1:
            with ThreadPoolExecutor(jobs) as pool:
                chunks = list(pool.map(lambda e: _run_entry(e, seed, study), entries))
        else:
            chunks = [_run_entry(e, seed, study) for e in entries]
    return [r for chunk in chunks for r in chunk]


def run_flow(entry: Mapping[str, Any], seed: int = 0) -> tuple[dict, list[ResidualReport], str]:
    """Gradient flow from the entry's map, then conservation checks on the output.

    Returns the run summary, the conservation reports and the trajectory CSV.
    """
    res = _resolutions(entry, 1)
    u0 = _map_builder(entry)(res[-1])
    if not u0.sphere:
        raise UsageError("flows need a sphere target")
    try:
        cfg = FlowConfig(**entry.get("flow", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad flow config: {exc}") from exc
    with np.errstate(all="ignore"):
        try:
            result = gradient_flow(u0, cfg)
        except FlowInstabilityError as exc:
            raise InstabilityError(str(exc)) from exc
    reports = []
    if entry.get("conservation", True):
        mats = _generators(entry, u0.target.ambient_dim, seed)
        for g, A in enumerate(mats):
            rep = flow_conservation_check(
                result.final, sx.killing_from_generator(A), cfg.k, resolutions=entry.get("check_resolutions")
            )
            rep.meta.update(conventions())
            rep.meta["check"] = f"{entry.get('name', 'flow')}:conservation:X={g}"
            rep.identity = f"{rep.meta['check']} | {rep.identity}"
            reports.append(rep)
    summary = {
        "steps": result.steps,
        "reason": result.reason,
        "initial_energy": result.energies[0],
        "final_energy": result.energies[-1],
        "initial_tau_linf": result.records[0].tau_linf,
        "final_tau_linf": result.final_tau_linf,
    }
    return summary, reports, result.to_csv()


# -- output ---------------------------------------------------------------------------


def _emit(reports: Sequence[ResidualReport], fmt: str, out: Optional[str], extra: Optional[dict] = None) -> None:
    if fmt == "csv":
        text = reports_to_csv(reports)
    else:
        doc = {"conventions": conventions(), "reports": [r.to_dict() for r in reports]}
        if extra:
            doc.update(extra)
        text = json.dumps(doc, sort_keys=True, indent=2) + "\n"
    if out:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"reports.{fmt}").write_text(text)
    else:
        sys.stdout.write(text)


def _exit_code(reports: Sequence[ResidualReport]) -> int:
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


def list_builtins() -> dict[str, list[str]]:
    return {
        "maps": list(BUILTIN_MAPS),
        "immersions": list(hyp.BUILTIN_IMMERSIONS),
        "charts": list_charts(),
        "backends": list(BACKENDS),
        "check_kinds": list(MAP_KINDS),
        "hypersurface_checks": list(HYPERSURFACE_KINDS),
    }


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polyharmonic", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("verify", "run the checks of a suite at their resolutions"),
        ("convergence", "estimate convergence orders (needs >= 3 resolutions per check)"),
        ("flow", "run a gradient flow and check conservation on its output"),
        ("hypersurface", "run hypersurface checks"),
    ):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--spec", required=True, help="suite JSON file")
        sp.add_argument("--out", help="output directory (default: stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=int, default=0, help="seed for random generators without their own")
        sp.add_argument("--jobs", type=int, default=1, help="checks run concurrently")
    sub.add_parser("list-builtins", help="list built-in maps, immersions, charts and backends")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    if args.command == "list-builtins":
        sys.stdout.write(json.dumps(list_builtins(), indent=2) + "\n")
        return EXIT_PASS
    try:
        entries = load_suite(args.spec)
        if args.command == "flow":
            reports, summaries = [], []
            for e in entries:
                summary, reps, trajectory = run_flow(e, args.seed)
                if args.out:
                    d = Path(args.out)
                    d.mkdir(parents=True, exist_ok=True)
                    (d / f"trajectory-{e.get('name', len(summaries))}.csv").write_text(trajectory)
                summaries.append(summary)
                reports.extend(reps)
            _emit(reports, args.format, args.out, {"flows": summaries})
            return _exit_code(reports)
        if args.command == "hypersurface" and not all("immersion" in e or "terms" in e for e in entries):
            raise UsageError("hypersurface entries need an \"immersion\" or \"terms\"")
        reports = run_suite(entries, args.seed, study=args.command == "convergence", jobs=args.jobs)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    _emit(reports, args.format, args.out)
    return _exit_code(reports)


if __name__ == "__main__":
    sys.exit(main())
