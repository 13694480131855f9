"""Command-line front end.

Exit codes: 0 success, 1 a check failed, 2 input error, 3 solver divergence.
"""
from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .expr import EvaluationError, ExprError, ExprSyntaxError, parse, to_text
from .kform import (EULER_TOL, HOMOGENEITY_TOL, KawaguchiForm, homogeneity_report,
                    sample_points)
from .models import KillingVector, ModelCatalogEntry, builtin, list_models, reference_solutions
from .multivector import PluckerVector, check_index, plucker_residual
from .noether import BTerm, VectorField, GeneralizedVectorField, conservation_divergence, \
    killing_check, noether_current
from .surface import SingularCellError, Surface, discrete_action, read_surface, write_surface
from .variational import (SolveOptions, SolverDivergence, el_residual, el_residual_expanded,
                          solve_el)

PLUCKER_TOL = 1e-12


class InputError(Exception):
    """Bad model file, surface file or argument; reported with exit code 2."""


# ---------------------------------------------------------------- model files

@dataclass
class ModelFile:
    N: int
    n: int
    coord_names: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    K: str = ""
    K_line: int = 0
    vectors: dict = field(default_factory=dict)   # name -> [(line, mu, text)]
    bterms: dict = field(default_factory=dict)    # name -> [(line, idx, text)]


_SECTION = re.compile(r"^\[\s*(\w+)(?:\s+(\w+))?\s*\]$")


def parse_model_file(text: str, source: str = "<model>") -> ModelFile:
    """Sections: [dimensions] N=, n=; [coordinates]; [parameters]; [K]; [vector NAME]; [B NAME]."""
    dims: dict = {}
    coords: list = []
    params: dict = {}
    K_lines: list = []
    K_line = 0
    vectors: dict = {}
    bterms: dict = {}
    section, name = None, None

    def fail(msg, line):
        raise InputError(f"{source}:{line}: {msg}")

    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section, name = m.group(1).lower(), m.group(2)
            if section not in ("dimensions", "coordinates", "parameters", "k", "vector", "b"):
                fail(f"unknown section [{m.group(1)}]", ln)
            if section in ("vector", "b") and not name:
                fail(f"section [{section}] needs a name", ln)
            if section == "vector":
                vectors.setdefault(name, [])
            if section == "b":
                bterms.setdefault(name, [])
            continue
        if section is None:
            fail("content before the first section", ln)
        if section in ("dimensions", "parameters"):
            if "=" not in line:
                fail("expected 'name = value'", ln)
            key, val = (s.strip() for s in line.split("=", 1))
            try:
                if section == "dimensions":
                    if key not in ("N", "n"):
                        fail(f"unknown dimension {key!r}", ln)
                    dims[key] = int(val)
                else:
                    params[key] = float(val)
            except ValueError:
                fail(f"bad number {val!r}", ln)
        elif section == "coordinates":
            coords.extend(t for t in re.split(r"[\s,]+", line) if t)
        elif section == "k":
            if not K_lines:
                K_line = ln
            K_lines.append(line)
        else:
            if ":" not in line:
                fail("expected 'index: expression'", ln)
            key, expr = (s.strip() for s in line.split(":", 1))
            if section == "vector":
                try:
                    mu = int(key)
                except ValueError:
                    fail(f"bad component index {key!r}", ln)
                vectors[name].append((ln, mu, expr))
            else:
                body = key.strip("[]() ")
                try:
                    idx = tuple(int(t) for t in body.split(",") if t.strip())
                except ValueError:
                    fail(f"bad index tuple {key!r}", ln)
                bterms[name].append((ln, idx, expr))
    if set(dims) != {"N", "n"}:
        raise InputError(f"{source}: [dimensions] must set both N and n")
    if not K_lines:
        raise InputError(f"{source}: missing [K] section")
    if coords and len(coords) != dims["N"] + 1:
        raise InputError(f"{source}: {len(coords)} coordinate names for N = {dims['N']}")
    return ModelFile(dims["N"], dims["n"], {c: i for i, c in enumerate(coords)}, params,
                     " ".join(K_lines), K_line, vectors, bterms)


def build_model(mf: ModelFile, source: str = "<model>") -> ModelCatalogEntry:
    def p(text, line):
        try:
            return parse(text, mf.N, mf.n, mf.params, mf.coord_names)
        except ExprSyntaxError as exc:
            raise InputError(f"{source}:{line}: {exc}") from None
        except (ExprError, IndexError) as exc:
            raise InputError(f"{source}:{line}: {exc}") from None

    try:
        form = KawaguchiForm(mf.N, mf.n, p(mf.K, mf.K_line), mf.params, Path(source).stem)
    except ValueError as exc:
        raise InputError(f"{source}:{mf.K_line}: {exc}") from None
    killing = []
    for name, comps in mf.vectors.items():
        exprs = {}
        for ln, mu, text in comps:
            if not 0 <= mu <= mf.N:
                raise InputError(f"{source}:{ln}: component {mu} outside 0..{mf.N}")
            exprs[mu] = p(text, ln)
        generalized = any(e.pluckers for e in exprs.values())
        cls = GeneralizedVectorField if generalized else VectorField
        B = None
        if name in mf.bterms:
            coeffs = {}
            for ln, idx, text in mf.bterms[name]:
                try:
                    idx = check_index(idx, mf.N, mf.n)
                except ValueError as exc:
                    raise InputError(f"{source}:{ln}: {exc}") from None
                coeffs[idx] = p(text, ln)
            try:
                B = BTerm(mf.N, mf.n, coeffs)
            except ExprError as exc:
                raise InputError(f"{source}: B term {name}: {exc}") from None
        killing.append(KillingVector(name, cls(mf.N, exprs, name), B))
    for name in mf.bterms:
        if name not in mf.vectors:
            raise InputError(f"{source}: B term {name!r} has no matching [vector {name}]")
    return ModelCatalogEntry(form.name, form, tuple(killing))


def _param_value(key: str, text: str):
    if key in ("N", "D"):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def load_model(spec: str, params=()) -> ModelCatalogEntry:
    """``builtin:NAME`` (with ``key=value`` parameters) or a model file path."""
    kv = {}
    for item in params:
        if "=" not in item:
            raise InputError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        kv[k.strip()] = _param_value(k.strip(), v.strip())
    if spec.startswith("builtin:"):
        try:
            return builtin(spec.split(":", 1)[1], **kv)
        except (KeyError, ValueError, ExprError) as exc:
            raise InputError(str(exc)) from None
    path = Path(spec)
    if not path.exists():
        raise InputError(f"model file {spec} not found")
    mf = parse_model_file(path.read_text(), spec)
    mf.params.update({k: float(v) for k, v in kv.items()})
    return build_model(mf, spec)


def load_surface(path: str, descriptor: str | None = None) -> Surface:
    try:
        return read_surface(path, descriptor)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"surface {path}: {exc}") from None


# ---------------------------------------------------------------- commands

def _emit(report: dict, out=None) -> None:
    text = json.dumps(report, indent=2, default=float)
    print(text)
    if out:
        Path(out).write_text(text)


def _grid_meta(surface: Surface) -> dict:
    return {"nodes": list(surface.nodes), "spacing": list(surface.spacing), "origin": list(surface.origin)}


def cmd_check(args) -> int:
    entry = load_model(args.model, args.param)
    form = entry.form
    hom = homogeneity_report(form, samples=args.samples, rng=args.seed)
    x, P, d = sample_points(form, args.samples, args.seed + 1)
    val, g = form.evaluate(x, d)
    euler = np.abs(val - sum(g[I] * d[I] for I in form.active)) if form.active else np.abs(val)
    euler_max = float(np.max(euler))
    pl = max(plucker_residual(PluckerVector(form.N, form.degree, {I: d[I][j] for I in d}))
             for j in range(min(args.samples, 20)))
    killing = [killing_check(form, k.field, k.B, samples=args.samples, rng=args.seed).as_dict()
               for k in entry.killing]
    report = {
        "model": entry.name, "N": form.N, "n": form.n, "seed": args.seed,
        "homogeneity": hom.as_dict(),
        "euler_identity": {"max_residual": euler_max, "tolerance": EULER_TOL,
                           "passed": euler_max < EULER_TOL},
        "plucker": {"max_residual": pl, "tolerance": PLUCKER_TOL, "passed": pl < PLUCKER_TOL},
        "killing": killing,
    }
    ok = report["euler_identity"]["passed"] and report["plucker"]["passed"] and \
        all(k["passed"] for k in killing)
    ok = ok and (hom.passed or args.allow_inhomogeneous)
    report["passed"] = bool(ok)
    _emit(report, args.report)
    return 0 if ok else 1


def cmd_action(args) -> int:
    entry = load_model(args.model, args.param)
    surface = load_surface(args.surface, args.descriptor)
    _check_dims(entry.form, surface)
    A = discrete_action(entry.form, surface, threads=args.threads)
    _emit({"model": entry.name, "action": A, "grid": _grid_meta(surface)}, args.report)
    return 0


def _check_dims(form, surface):
    if surface.N != form.N or surface.n != form.n:
        raise InputError(f"surface has (N, n) = ({surface.N}, {surface.n}), model needs ({form.N}, {form.n})")


def cmd_residual(args) -> int:
    entry = load_model(args.model, args.param)
    surface = load_surface(args.surface, args.descriptor)
    _check_dims(entry.form, surface)
    if args.expanded:
        R = el_residual_expanded(entry.form, surface, fd_step=args.fd_step)
    else:
        R = el_residual(entry.form, surface, threads=args.threads)
    if args.cells:
        k = surface.n + 1
        idx = np.indices(R.values.shape[1:]).reshape(k, -1) + 1
        table = np.column_stack(list(idx) + list(R.values.reshape(R.values.shape[0], -1)))
        header = ",".join([f"c{a}" for a in range(k)] + [f"R{m}" for m in range(surface.N + 1)])
        np.savetxt(args.cells, table, delimiter=",", header=header, comments="", fmt="%.17g")
    _emit({"model": entry.name, "method": "expanded" if args.expanded else "staggered",
           "norms": R.norms(), "grid": _grid_meta(surface)}, args.report)
    return 0


def _refine(surface: Surface, cells) -> Surface:
    from scipy.interpolate import RegularGridInterpolator

    cells = tuple(int(c) for c in cells)
    if len(cells) != surface.n + 1:
        raise InputError(f"--grid needs {surface.n + 1} cell counts")
    axes = [o + h * np.arange(m) for o, h, m in zip(surface.origin, surface.spacing, surface.nodes)]
    upper = [a[-1] for a in axes]
    new_axes = [np.linspace(o, u, c + 1) for o, u, c in zip(surface.origin, upper, cells)]
    pts = np.stack(np.meshgrid(*new_axes, indexing="ij"), axis=-1)
    vals = np.stack([RegularGridInterpolator(axes, v)(pts) for v in surface.values])
    spacing = tuple((u - o) / c for o, u, c in zip(surface.origin, upper, cells))
    return Surface(vals, spacing, surface.origin, surface.orientation)


def cmd_solve(args) -> int:
    entry = load_model(args.model, args.param)
    surface = load_surface(args.surface, args.descriptor)
    _check_dims(entry.form, surface)
    if args.grid:
        surface = _refine(surface, args.grid.split(","))
    free = tuple(int(c) for c in args.free.split(",")) if args.free else None
    opts = SolveOptions(max_iter=args.max_iter, tol=args.tol, inner_tol=args.inner_tol,
                        krylov=args.krylov, free_components=free, threads=args.threads)
    try:
        solved, report = solve_el(entry.form, surface, opts)
    except SolverDivergence as exc:
        _emit(json.loads(exc.report.to_json()), args.report)
        return 3
    if args.out:
        write_surface(solved, args.out)
    _emit(json.loads(report.to_json()), args.report)
    return 0 if report.converged else 1


def cmd_noether(args) -> int:
    entry = load_model(args.model, args.param)
    surface = load_surface(args.surface, args.descriptor)
    _check_dims(entry.form, surface)
    try:
        kv = entry.vector(args.vector)
    except KeyError as exc:
        raise InputError(str(exc.args[0])) from None
    J = noether_current(entry.form, kv.field, kv.B, check=False)
    omega = J.pullback(surface)
    div = conservation_divergence(J, surface)
    if args.faces:
        rows = []
        k = surface.n + 1
        for a, f in enumerate(omega.faces):
            idx = np.indices(f.shape).reshape(k, -1)
            rows.append(np.column_stack([np.full(idx.shape[1], a)] + list(idx) + [f.ravel()]))
        header = ",".join(["axis"] + [f"i{a}" for a in range(k)] + ["c"])
        np.savetxt(args.faces, np.vstack(rows), delimiter=",", header=header, comments="", fmt="%.17g")
    killing = killing_check(entry.form, kv.field, kv.B, rng=args.seed)
    _emit({"model": entry.name, "vector": kv.name, "killing": killing.as_dict(),
           "coefficients": {",".join(map(str, I)): to_text(e) for I, e in J.coefficients.items()},
           "divergence": div.as_dict(), "grid": _grid_meta(surface)}, args.report)
    return 0


def cmd_models(args) -> int:
    if args.reference:
        sols = reference_solutions(**{k: _param_value(k, v) for k, v in
                                      (p.split("=", 1) for p in args.param)})
        if args.reference not in sols:
            raise InputError(f"unknown reference solution {args.reference!r}; known: {sorted(sols)}")
        sol = sols[args.reference]
        cells = tuple(int(c) for c in args.grid.split(",")) if args.grid else (16,) * len(sol.lower)
        upper = tuple(float(u) for u in args.upper.split(",")) if args.upper else None
        surface = sol.surface(cells, upper=upper)
        if not args.out:
            raise InputError("--out is required with --reference")
        write_surface(surface, args.out)
        _emit({"reference": sol.name, "model": sol.model().name, "order": sol.order,
               "grid": _grid_meta(surface)})
        return 0
    out = {}
    for name, entry in list_models().items():
        out[name] = {"N": entry.form.N, "n": entry.form.n, "K": to_text(entry.form.K),
                     "params": entry.form.params, "vectors": [k.name for k in entry.killing],
                     "references": [r.name for r in entry.references],
                     "description": entry.description}
    _emit({"models": out, "reference_solutions": sorted(reference_solutions())})
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kawaguchi", description="Covariant field theory on Kawaguchi manifolds")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for grid evaluation")
    ap.add_argument("--seed", type=int, default=0, help="sampling seed")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, surface=True):
        p.add_argument("model", help="model file or builtin:NAME")
        p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
        if surface:
            p.add_argument("surface", help="surface CSV")
            p.add_argument("--descriptor", help="surface JSON descriptor (default: CSV name with .json)")
        p.add_argument("--report", help="also write the JSON report here")

    p = sub.add_parser("check", help="homogeneity, Euler identity, Plücker and Killing checks")
    common(p, surface=False)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--allow-inhomogeneous", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("action", help="discrete action of a surface")
    common(p)
    p.set_defaults(func=cmd_action)

    p = sub.add_parser("residual", help="Euler-Lagrange residual norms")
    common(p)
    p.add_argument("--expanded", action="store_true", help="use the second-derivative expansion")
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--cells", help="write per-cell residuals as CSV")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("solve", help="solve the field equations with fixed boundary")
    common(p)
    p.add_argument("--grid", help="resample to these cell counts, e.g. 64,64")
    p.add_argument("--out", help="solved surface CSV (descriptor written alongside)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--inner-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--krylov", choices=("gmres", "minres"), default="gmres")
    p.add_argument("--free", help="comma-separated components to vary (default: fields)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("noether", help="Nöther current and its discrete divergence")
    common(p)
    p.add_argument("--vector", required=True)
    p.add_argument("--faces", help="write face coefficients as CSV")
    p.set_defaults(func=cmd_noether)

    p = sub.add_parser("models", help="list builtin models or write a reference surface")
    p.add_argument("--reference", help="reference solution name")
    p.add_argument("--grid", help="cell counts, comma separated")
    p.add_argument("--upper", help="upper corner of the parameter box")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="surface CSV")
    p.set_defaults(func=cmd_models)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SingularCellError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
