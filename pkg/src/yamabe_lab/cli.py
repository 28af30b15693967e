"""Command-line front end.

    yamabe-lab <verify|solve|energy|flux|sharp> [config.json] [flags]

A config is one JSON document; flags override its scalar fields. Reports
go to JSON (stdout unless a path is given) and to a CSV table. Exit codes:
0 all declared assertions pass, 2 config error, 3 a numerical assertion
failed, 4 the solver did not converge.

Set YAMABE_LAB_THREADS to pin the thread count of the numeric libraries.
"""

from __future__ import annotations

import os

THREAD_ENV = "YAMABE_LAB_THREADS"
if os.environ.get(THREAD_ENV):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[_var] = os.environ[THREAD_ENV]

import argparse  # noqa: E402
import csv  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

SCHEMA_VERSION = 1
KINDS = ("verify", "solve", "energy", "flux", "sharp")
EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_SOLVER = 0, 2, 3, 4

# assertion name -> kinds it applies to
ASSERTIONS = {
    "bubble_identities": "verify",
    "killing_kernel": "verify",
    "second_variation": "verify",
    "delta_psi": "verify",
    "weak_residual": "solve",
    "kernel_dimension": "solve",
    "gap_negative": "energy",
    "gap_exponent": "energy",
    "monotone": "energy",
    "flat_exact": "energy",
    "flux_zero": "flux",
    "sharp_closed_form": "sharp",
    "trace_ratio": "sharp",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    dim: int
    epsilon: tuple[float, ...]
    delta: float
    metric: object  # FermiTensor
    degree: int = 3
    quad_level: int = 2
    seed: int = 0
    points: int = 100
    radius: float | None = None
    exact_bubble: bool = False
    green: str = "flat"
    deltas: tuple[float, ...] = ()
    assertions: tuple[str, ...] = ()
    outputs: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "kind": self.kind,
            "dim": self.dim,
            "epsilon": list(self.epsilon),
            "delta": self.delta,
            "metric": self.metric.to_json(),
            "degree": self.degree,
            "quad_level": self.quad_level,
            "seed": self.seed,
            "points": self.points,
            "radius": self.radius,
            "exact_bubble": self.exact_bubble,
            "green": self.green,
            "deltas": list(self.deltas),
            "assertions": list(self.assertions),
        }


def _metric(spec, n: int, base: Path):
    from .fermi_metric import FermiConstraintError, fermi_from_json, make_fermi_tensor, xn2_example

    try:
        if spec is None or spec == "zero":
            return make_fermi_tensor(n)
        if spec == "xn2":
            return xn2_example(n)
        if isinstance(spec, dict) and "example" in spec:
            if spec["example"] != "xn2":
                raise ConfigError(f"unknown metric example {spec['example']!r}")
            return xn2_example(n, float(spec.get("scale", 1.0)))
        if isinstance(spec, str):
            path = (base / spec) if not Path(spec).is_absolute() else Path(spec)
            if not path.is_file():
                raise ConfigError(f"metric file {spec} does not exist")
            spec = json.loads(path.read_text())
        if isinstance(spec, dict):
            H = fermi_from_json(spec)
            if H.n != n:
                raise ConfigError(f"metric has n={H.n} but dim={n}")
            return H
    except FermiConstraintError as exc:
        raise ConfigError(f"metric violates the gauge constraints: {exc}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad metric entry: {exc}") from exc
    raise ConfigError("metric must be 'zero', 'xn2', an example dict, a tensor dict or a file path")


def _floats(x, name: str) -> tuple[float, ...]:
    vals = x if isinstance(x, (list, tuple)) else [x]
    try:
        out = tuple(float(v) for v in vals)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number or a list of numbers") from None
    if not all(math.isfinite(v) and v > 0 for v in out):
        raise ConfigError(f"{name} entries must be positive")
    return out


def build_config(doc: dict, overrides: dict | None = None, base: Path | None = None) -> ExperimentConfig:
    """Validate a config document; ``overrides`` holds flag values (None = unset)."""
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    schema = doc.get("schema", SCHEMA_VERSION)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {', '.join(KINDS)}")
    try:
        n = int(doc.get("dim", 6))
        degree = int(doc.get("degree", 3))
        level = int(doc.get("quad_level", 2))
        seed = int(doc.get("seed", 0))
        points = int(doc.get("points", 100))
    except (TypeError, ValueError):
        raise ConfigError("dim, degree, quad_level, seed and points must be integers") from None
    if n < 3:
        raise ConfigError("dim must be >= 3")
    if degree < 1 or level < 0 or points < 1:
        raise ConfigError("need degree >= 1, quad_level >= 0 and points >= 1")
    eps = _floats(doc.get("epsilon", [0.05, 0.025, 0.0125]), "epsilon")
    delta = _floats(doc.get("delta", 0.5), "delta")[0]
    deltas = _floats(doc["deltas"], "deltas") if doc.get("deltas") else ()
    radius = doc.get("radius")
    radius = None if radius is None else _floats(radius, "radius")[0]
    if kind == "energy" and 2 * min(eps) > delta:
        raise ConfigError("energy runs need 2 * min(epsilon) <= delta")
    if kind == "energy" and 2 * max(eps) > delta:
        raise ConfigError("energy runs need 2 * epsilon <= delta for every epsilon")
    asserts = tuple(doc.get("assertions", ()))
    for a in asserts:
        if ASSERTIONS.get(a) != kind:
            raise ConfigError(f"assertion {a!r} does not apply to kind {kind!r}")
    green = doc.get("green", "flat")
    if green not in ("flat", "perturbative"):
        raise ConfigError("green must be 'flat' or 'perturbative'")
    outputs = doc.get("outputs", {}) or {}
    if not isinstance(outputs, dict) or set(outputs) - {"json", "csv"}:
        raise ConfigError("outputs takes only 'json' and 'csv' paths")
    return ExperimentConfig(
        kind=kind,
        dim=n,
        epsilon=eps,
        delta=delta,
        metric=_metric(doc.get("metric"), n, base or Path.cwd()),
        degree=degree,
        quad_level=level,
        seed=seed,
        points=points,
        radius=radius,
        exact_bubble=bool(doc.get("exact_bubble", False)),
        green=green,
        deltas=deltas,
        assertions=asserts,
        outputs=outputs,
    )


# --- experiments -------------------------------------------------------------------------


@dataclass
class Outcome:
    results: dict
    checks: dict  # name -> {"passed", "value", "bound"}
    rows: list[list] = field(default_factory=list)
    header: tuple[str, ...] = ()


def _check(value: float, bound: float, passed: bool | None = None) -> dict:
    ok = bool(value <= bound) if passed is None else bool(passed)
    return {"passed": ok, "value": float(value), "bound": float(bound)}


def _checks_table(checks: dict):
    header = ("check", "value", "bound", "passed")
    return header, [[k, c["value"], c["bound"], int(c["passed"])] for k, c in checks.items()]


def _half_space_points(rng, n: int, count: int, boundary: bool = False) -> np.ndarray:
    X = rng.normal(size=(count, n)) * rng.uniform(0.1, 3.0, size=(count, 1))
    X[:, -1] = 0.0 if boundary else np.abs(X[:, -1]) + 1e-3
    return X


def run_verify(cfg: ExperimentConfig) -> Outcome:
    from .conformal_deficit import boundary_identity_arrays, conformal_killing_fields, interior_identity_arrays, killing_image
    from .model_bubble import identity_residual_arrays
    from .tensor_core import MonomialSpace
    from .weighted_solver import build_basis

    n = cfg.dim
    rng = np.random.default_rng(cfg.seed)
    bubble = 0.0
    for e in cfg.epsilon:
        X = _half_space_points(rng, n, cfg.points)
        Xb = _half_space_points(rng, n, cfg.points, boundary=True)
        r = identity_residual_arrays(e, n, X)
        rb = identity_residual_arrays(e, n, Xb)
        bubble = max(bubble, r["laplacian"].max(), r["hessian_identity"].max(), rb["boundary_identity"].max())

    X = _half_space_points(rng, n, cfg.points)
    killing = 0.0
    for fields in conformal_killing_fields(n).values():
        for V in fields:
            S = killing_image(V)
            polys = [S[i][k] for i in range(n) for k in range(n)]
            space = MonomialSpace.for_polys(polys, n)
            vals = space.monomials(X) @ space.coefficients(polys).T
            killing = max(killing, float(np.abs(vals).max()))

    basis = build_basis(n, cfg.degree)
    V = basis.field_from_coefficients(0.1 * rng.normal(size=basis.size))
    H = cfg.metric
    second = dpsi = 0.0
    for e in cfg.epsilon:
        X = _half_space_points(rng, n, cfg.points)
        ident = interior_identity_arrays(e, H, V, X)
        second = max(second, float(ident["second_variation"].max()))
        dpsi = max(dpsi, float(ident["delta_psi"].max()))
    Xb = _half_space_points(rng, n, cfg.points, boundary=True)
    bdy = {k: float(rel.max()) for k, (_, rel) in boundary_identity_arrays(cfg.epsilon[0], H, V, Xb).items()}

    checks = {
        "bubble_identities": _check(bubble, 1e-9),
        "killing_kernel": _check(killing, 1e-13),
        "second_variation": _check(second, 1e-8),
        "delta_psi": _check(dpsi, 1e-8),
    }
    header, rows = _checks_table(checks)
    return Outcome({"boundary_relations_random_field": bdy}, checks, rows, header)


def run_solve(cfg: ExperimentConfig) -> Outcome:
    from .weighted_solver import build_basis, solve_system, symbolic_kernel_dimension

    basis = build_basis(cfg.dim, cfg.degree, cfg.radius)
    try:
        rep = solve_system(cfg.metric, cfg.delta, basis, level=cfg.quad_level)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    expected = symbolic_kernel_dimension(basis)
    checks = {
        "weak_residual": _check(rep.weak_residual, 1e-8),
        "kernel_dimension": _check(abs(rep.kernel_dim_detected - expected), 0, rep.kernel_dim_detected == expected),
    }
    header, rows = _checks_table(checks)
    results = rep.to_json()
    results["kernel_dim_expected"] = expected
    return Outcome(results, checks, rows, header)


def run_energy(cfg: ExperimentConfig) -> Outcome:
    from .energy_lab import CSV_COLUMNS, GapConfig, energy_gap_experiment

    ex = energy_gap_experiment(
        GapConfig(cfg.metric, cfg.delta, cfg.epsilon, cfg.degree, cfg.quad_level, exact_bubble=cfg.exact_bubble)
    )
    n = cfg.dim
    small = min(ex.reports, key=lambda r: r.epsilon)
    checks = {
        "gap_negative": _check(small.sharp_gap + 2 * small.mc_sigma, 0.0, small.sharp_gap + 2 * small.mc_sigma < 0),
        "gap_exponent": _check(abs(ex.curvature_exponent - (n - 2)), 0.7),
        "monotone": _check(float(ex.monotone), 1.0, ex.monotone),
        "flat_exact": _check(
            max(abs(r.sharp_gap) - 2 * r.mc_sigma for r in ex.reports),
            0.0,
            all(abs(r.sharp_gap) <= 2 * r.mc_sigma for r in ex.reports),
        ),
    }
    return Outcome(ex.to_json(), checks, [r.row() for r in ex.reports], CSV_COLUMNS)


def run_flux(cfg: ExperimentConfig) -> Outcome:
    from .energy_lab import flux_integral, greens_function

    rows = []
    worst = -math.inf
    for d in cfg.deltas or (cfg.delta,):
        if cfg.green == "perturbative":
            G = greens_function(cfg.metric, "perturbative", (d / 2, 2 * d), level=cfg.quad_level)
        else:
            G = greens_function(cfg.metric, "flat", n=cfg.dim)
        f = flux_integral(G, cfg.metric, d, level=cfg.quad_level)
        rows.append([d, f.value, f.green_term, f.h_term, f.error_estimate, G.residual])
        worst = max(worst, abs(f.value) - f.error_estimate)
    values = [r[1] for r in rows]
    results = {
        "rows": [dict(zip(("delta", "value", "green_term", "h_term", "error_estimate", "green_residual"), r)) for r in rows],
        "spread": float(max(values) - min(values)),
    }
    checks = {"flux_zero": _check(worst, 0.0)}
    header = ("delta", "value", "green_term", "h_term", "error_estimate", "green_residual")
    return Outcome(results, checks, rows, header)


def run_sharp(cfg: ExperimentConfig) -> Outcome:
    from .model_bubble import sharp_constant, sharp_constant_closed_form
    from .quadrature import make_quadrature
    from .tensor_core import Dim

    n = cfg.dim
    rules = (
        make_quadrature("half-space", n, 1.0, cfg.quad_level, cfg.seed, method="product"),
        make_quadrature("boundary-plane", n, 1.0, cfg.quad_level, cfg.seed, method="product"),
    )
    num = sharp_constant(Dim(n), rules)
    exact = sharp_constant_closed_form(n)
    rel_q = abs(num["Q"] - exact) / exact
    rel_t = abs(num["trace_ratio"] - (n - 2)) / (n - 2)
    checks = {"sharp_closed_form": _check(rel_q, 0.01), "trace_ratio": _check(rel_t, 0.01)}
    header, rows = _checks_table(checks)
    return Outcome({**num, "Q_closed_form": exact}, checks, rows, header)


RUNNERS = {"verify": run_verify, "solve": run_solve, "energy": run_energy, "flux": run_flux, "sharp": run_sharp}


def run_experiment(cfg: ExperimentConfig) -> tuple[int, dict, str]:
    """Dispatch; returns (exit code, JSON report, CSV text)."""
    from .weighted_solver import SolverError

    try:
        out = RUNNERS[cfg.kind](cfg)
    except SolverError as exc:
        return EXIT_SOLVER, {"schema": SCHEMA_VERSION, "kind": cfg.kind, "error": str(exc)}, ""
    declared = {k: v for k, v in out.checks.items() if k in cfg.assertions}
    failed = [k for k, v in declared.items() if not v["passed"]]
    report = {
        "schema": SCHEMA_VERSION,
        "kind": cfg.kind,
        "config": cfg.to_json(),
        "results": out.results,
        "checks": out.checks,
        "failed": failed,
    }
    return (EXIT_ASSERT if failed else EXIT_OK), report, write_csv(out.header, out.rows)


def write_csv(header, rows) -> str:
    from .energy_lab import fmt

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(header)
    for r in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def write_report(report: dict, fmt: str = "json") -> str:
    from .energy_lab import stable_json

    if fmt != "json":
        raise ValueError("reports are JSON; tables go through write_csv")
    return stable_json(report) + "\n"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="yamabe-lab", description="Batch experiments on the half-space model.")
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("config", nargs="?", help="JSON config file")
    ap.add_argument("--epsilon", type=float, action="append", help="repeat for a sweep")
    ap.add_argument("--delta", type=float)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--degree", type=int)
    ap.add_argument("--quad-level", type=int, dest="quad_level")
    ap.add_argument("--dim", type=int)
    ap.add_argument("--metric", help="'zero', 'xn2' or a tensor JSON file")
    ap.add_argument("--assert", dest="assertions", action="append", help="declare an assertion (repeatable)")
    ap.add_argument("--json-out", help="JSON report path (default stdout)")
    ap.add_argument("--csv-out", help="CSV table path")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    try:
        doc: dict = {}
        base = Path.cwd()
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise ConfigError(f"config file {args.config} does not exist")
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
            base = path.parent
            if doc.get("kind", args.kind) != args.kind:
                raise ConfigError(f"config kind {doc['kind']!r} does not match subcommand {args.kind!r}")
        overrides = {
            "kind": args.kind,
            "epsilon": args.epsilon,
            "delta": args.delta,
            "seed": args.seed,
            "degree": args.degree,
            "quad_level": args.quad_level,
            "dim": args.dim,
            "metric": args.metric,
            "assertions": args.assertions,
        }
        cfg = build_config(doc, overrides, base)
    except ConfigError as exc:
        print(f"yamabe-lab: config error: {exc}", file=sys.stderr)
        ap.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        code, report, table = run_experiment(cfg)
    except ConfigError as exc:
        print(f"yamabe-lab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = write_report(report)
    json_out = args.json_out or cfg.outputs.get("json")
    csv_out = args.csv_out or cfg.outputs.get("csv")
    try:
        if json_out:
            Path(json_out).write_text(text)
        else:
            sys.stdout.write(text)
        if csv_out and table:
            Path(csv_out).write_text(table)
    except OSError as exc:
        print(f"yamabe-lab: cannot write report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if code == EXIT_ASSERT:
        print("yamabe-lab: failed checks: " + ", ".join(report["failed"]), file=sys.stderr)
    elif code == EXIT_SOLVER:
        print(f"yamabe-lab: solver did not converge: {report['error']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
