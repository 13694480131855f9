"""Kawaguchi (n+1)-forms K(x, dx): evaluation, homogeneity and Euler-identity
checks, momenta, the Hilbert form, and the lift of a field Lagrangian."""
from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .expr import (Coord, Div, EvalPoint, EvaluationError, ExprError, Expression,
                   Mul, Param, Plucker, d as d_sym, eval_with_gradient, evaluate, parse)
from .multivector import PluckerVector, all_indices, plucker_coordinates

HOMOGENEITY_TOL = 1e-12
EULER_TOL = 1e-12


@dataclass(frozen=True)
class KawaguchiForm:
    """A Kawaguchi form on coordinates x^0..x^N acting on (n+1)-vectors."""

    N: int
    n: int
    K: Expression
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = "K"

    def __post_init__(self):
        if not 0 <= self.n <= self.N:
            raise ValueError(f"need 0 <= n <= N, got N={self.N}, n={self.n}")
        for c in self.K.coords:
            if c > self.N:
                raise ValueError(f"K uses x{c} beyond N={self.N}")
        for idx in self.K.pluckers:
            if len(idx) != self.n + 1 or idx[-1] > self.N:
                raise ValueError(f"K uses d{list(idx)}, inconsistent with (N, n) = ({self.N}, {self.n})")
        missing = set(self.K.params) - set(self.params)
        if missing:
            raise ValueError(f"K has unbound parameters {sorted(missing)}")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def active(self) -> tuple:
        """Sorted multi-indices that K actually depends on."""
        return self.K.pluckers

    @property
    def degree(self) -> int:
        return self.n + 1

    def with_params(self, **values) -> "KawaguchiForm":
        return KawaguchiForm(self.N, self.n, self.K, {**self.params, **values}, self.name)

    def evaluate(self, x, d: Mapping, grad: bool = True, threads: int = 1):
        """Value and sparse gradient of K at (batched) points; see :func:`expr.evaluate`.

        With ``threads > 1`` the batch is split into contiguous chunks evaluated
        concurrently; results are reassembled in order so output does not
        depend on the thread count.
        """
        if threads <= 1 or np.ndim(x) < 2 or np.shape(x)[1] < 2 * threads:
            return evaluate(self.K, x, d, self.params, grad)
        M = np.shape(x)[1]
        bounds = np.linspace(0, M, threads + 1).astype(int)

        def run(k):
            sl = slice(bounds[k], bounds[k + 1])
            try:
                dk = d.chunk(sl) if hasattr(d, "chunk") else {i: np.asarray(v)[sl] for i, v in d.items()}
                return evaluate(self.K, x[:, sl], dk, self.params, grad)
            except EvaluationError as exc:
                exc.where = exc.where + bounds[k]
                raise

        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(threads)))
        val = np.concatenate([np.broadcast_to(p[0], (bounds[k + 1] - bounds[k],))
                              for k, p in enumerate(parts)])
        keys = dict.fromkeys(k for p in parts for k in p[1])  # keep evaluation order
        g = {k: np.concatenate([np.broadcast_to(p[1].get(k, 0.0), (bounds[j + 1] - bounds[j],))
                                for j, p in enumerate(parts)]) for k in keys}
        return val, g

    def at(self, p: EvalPoint):
        return eval_with_gradient(self.K, EvalPoint(p.x, p.dx, {**self.params, **p.params}))


def sample_points(form: KawaguchiForm, count: int, rng=None, scale: float = 0.3,
                  max_rounds: int = 50, check=None):
    """Random non-degenerate evaluation points with decomposable dx.

    Partials are drawn near the conventional parameterisation (identity on the
    first n+1 coordinates, ``scale``-sized elsewhere).  Points where K (or the
    optional ``check`` callable) is singular are redrawn, at most ``max_rounds``
    times.  Returns ``(x, P, d)`` with x of shape (N+1, M), P of shape
    (N+1, n+1, M) and d holding every sorted Plücker component.
    """
    rng = np.random.default_rng(rng)
    N, k = form.N, form.n + 1

    def draw(m):
        x = rng.uniform(-1.0, 1.0, size=(N + 1, m))
        P = scale * rng.standard_normal((N + 1, k, m))
        P[:k] += np.eye(k)[:, :, None] + 0.1 * rng.standard_normal((k, k, m))
        return x, P

    x, P = draw(count)
    indices = all_indices(N, k)
    for _ in range(max_rounds):
        d = plucker_coordinates(P, indices)
        try:
            val, _ = form.evaluate(x, d)
            bad = ~np.isfinite(np.broadcast_to(val, (count,)))
            if check is not None:
                bad |= ~check(x, d)
        except EvaluationError as exc:
            bad = np.zeros(count, dtype=bool)
            bad[exc.where] = True
        if not bad.any():
            return x, P, d
        xn, Pn = draw(int(bad.sum()))
        x[:, bad], P[:, :, bad] = xn, Pn
    raise RuntimeError(f"could not draw {count} non-degenerate points for {form.name}")


@dataclass(frozen=True)
class HomogeneityReport:
    max_relative_error: float
    degree_estimate: float
    tolerance: float
    samples: int
    lambdas: tuple

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def as_dict(self) -> dict:
        return {"max_relative_error": self.max_relative_error, "degree_estimate": self.degree_estimate,
                "tolerance": self.tolerance, "samples": self.samples, "lambdas": list(self.lambdas),
                "passed": self.passed}


def homogeneity_report(form: KawaguchiForm, samples: int = 100, lambdas=(0.5, 2.0, 10.0),
                       rng=0, tol: float = HOMOGENEITY_TOL) -> HomogeneityReport:
    """max |K(x, l dx) - l K(x, dx)| / (|l K(x, dx)| + eps) over samples and lambdas."""
    x, _, d = sample_points(form, samples, rng)
    base, _ = form.evaluate(x, d, grad=False)
    base = np.broadcast_to(base, (samples,))
    worst, degrees = 0.0, []
    for lam in lambdas:
        if lam <= 0:
            raise ValueError("homogeneity is tested for positive lambda only")
        scaled, _ = form.evaluate(x, {k: lam * v for k, v in d.items()}, grad=False)
        scaled = np.broadcast_to(scaled, (samples,))
        err = np.abs(scaled - lam * base) / (np.abs(lam * base) + 1e-300)
        worst = max(worst, float(np.max(err)))
        ok = (base != 0) & (scaled != 0)
        if lam != 1 and ok.any():
            degrees.append(np.median(np.log(np.abs(scaled[ok] / base[ok])) / np.log(lam)))
    deg = float(np.median(degrees)) if degrees else float("nan")
    return HomogeneityReport(worst, deg, tol, samples, tuple(lambdas))


def momenta(form: KawaguchiForm, p: EvalPoint) -> PluckerVector:
    """Canonical momenta p_I = dK/dd[I] for every sorted I (zeros where K is independent)."""
    _, _, grad_d = form.at(p)
    return grad_d


def euler_identity_residual(form: KawaguchiForm, p: EvalPoint) -> float:
    """|K(x, dx) - sum_I p_I dx^I|; zero for degree-1 homogeneous K."""
    val, _, grad_d = form.at(p)
    return abs(val - grad_d.dot(p.dx))


def hilbert_theta(form: KawaguchiForm, x, y: PluckerVector, w: PluckerVector | None = None) -> float:
    """Hilbert-Carathéodory form with momenta taken at direction ``y``, contracted with ``w``.

    ``w`` defaults to ``y``, in which case the result equals K(x, y).
    """
    p = momenta(form, EvalPoint(np.asarray(x, float), y))
    return p.dot(y if w is None else w)


# ---------------------------------------------------------------- lift

def _field_names(n: int, D: int):
    fields = {f"phi{i}": i for i in range(1, D + 1)}
    velocities = {f"dphi{i}_{a}": (i, a) for i in range(1, D + 1) for a in range(n + 1)}
    return fields, velocities


def lift_from_lagrangian(L, n: int, D: int, params: Mapping[str, float] | None = None,
                         name: str = "lifted") -> KawaguchiForm:
    """Kawaguchi form of a field Lagrangian on M = R^{n+1} x R^D.

    ``L`` (text or Expression) may use base coordinates ``x0..xn``, fields
    ``phi1..phiD``, derivatives ``dphi<i>_<a>`` (d phi_i / d x^a) and parameters.
    Each derivative becomes dx^{n+i}_a / dx^{01..n}, where dx^{n+i}_a puts
    x^{n+i} in slot a of dx^{01..n}; the result is multiplied by dx^{01..n}.
    """
    params = dict(params or {})
    fields, velocities = _field_names(n, D)
    if isinstance(L, str):
        L = parse(L, n, n, set(params) | set(fields) | set(velocities))
    if L.pluckers:
        raise ExprError("a Lagrangian may not contain Plücker symbols")
    base = tuple(range(n + 1))
    volume = Plucker(base)

    def substitute(node):
        if isinstance(node, Param):
            if node.name in fields:
                return Coord(n + fields[node.name])
            if node.name in velocities:
                i, a = velocities[node.name]
                raw = base[:a] + (n + i,) + base[a + 1:]
                return Div(d_sym(*raw), volume)
        return None

    K = Mul(L.map(substitute), volume)
    return KawaguchiForm(n + D, n, K, params, name)


def form_from_text(text: str, N: int, n: int, params: Mapping[str, float] | None = None,
                   coord_names=None, name: str = "K") -> KawaguchiForm:
    params = dict(params or {})
    return KawaguchiForm(N, n, parse(text, N, n, params, coord_names), params, name)


def substitute_params(e: Expression, mapping: Mapping[str, Expression]) -> Expression:
    return e.map(lambda node: mapping.get(node.name) if isinstance(node, Param) else None)


_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


def free_names(text: str) -> set[str]:
    """Identifiers in an expression string other than functions, coordinates and d."""
    return {t for t in _IDENT.findall(text)
            if t not in ("sqrt", "abs", "d") and not re.fullmatch(r"x\d+", t)}
