"""Ready-made Kawaguchi forms: Nambu-Goto string, realified complex scalar in 1+1
dimensions, free Maxwell field on R^8, free particles and lifted 1+1 scalars.

Each entry carries its Killing vectors and, where available, closed-form
currents transcribed from their printed index order (signs resolved by
sorting) so they can be compared against the generic current construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .expr import Const, Coord, Expression, Param, Plucker, as_expr, d, parse, sqrt, x
from .kform import KawaguchiForm, lift_from_lagrangian, substitute_params
from .noether import BTerm, VectorField
from .surface import Surface

GOLDEN = (1 + 5 ** 0.5) / 2


@dataclass(frozen=True)
class KillingVector:
    name: str
    field: VectorField
    B: BTerm | None = None


@dataclass(frozen=True)
class ReferenceCurrent:
    """Closed-form current J = sum_I' f_I' dx^I' for the Killing vector ``vector``."""

    name: str
    vector: str
    coefficients: dict
    note: str = ""


@dataclass(frozen=True)
class ModelCatalogEntry:
    name: str
    form: KawaguchiForm
    killing: tuple = ()
    references: tuple = ()
    description: str = ""

    def vector(self, name: str) -> KillingVector:
        for k in self.killing:
            if k.name == name:
                return k
        raise KeyError(f"{self.name} has no vector {name!r}; known: {[k.name for k in self.killing]}")

    def reference(self, name: str) -> ReferenceCurrent:
        for r in self.references:
            if r.name == name:
                return r
        raise KeyError(f"{self.name} has no reference current {name!r}")


class _Collector:
    """Accumulates n-form coefficients from terms written with raw index tuples."""

    def __init__(self):
        self.coeffs: dict = {}

    def add(self, coef: Expression, *raw: int):
        from .multivector import sort_index

        idx, sign = sort_index(raw)
        if sign == 0:
            return
        term = coef if sign > 0 else -coef
        self.coeffs[idx] = self.coeffs[idx] + term if idx in self.coeffs else term


def _digits(s: str) -> tuple:
    return tuple(int(c) for c in s)


def D(s: str) -> Expression:
    """Plücker symbol written as a digit string in printed order, e.g. D('0423')."""
    return d(*_digits(s))


def _translations(N: int, prefix: str = "v") -> list[KillingVector]:
    return [KillingVector(f"{prefix}{mu}", VectorField(N, {mu: Const(1.0)}, f"{prefix}{mu}"))
            for mu in range(N + 1)]


# ---------------------------------------------------------------- Nambu-Goto

def nambu_goto(N: int = 3) -> ModelCatalogEntry:
    """K = sqrt(-1/2 dX_IJ dX^IJ) with eta = diag(-1, 1, ..., 1), over sorted pairs."""
    if N < 1:
        raise ValueError("nambu_goto needs N >= 1")
    arg = None
    for I in range(N + 1):
        for J in range(I + 1, N + 1):
            term = Plucker((I, J)) ** 2
            if I == 0:
                arg = term if arg is None else arg + term
            else:
                arg = arg - term
    K = KawaguchiForm(N, 1, sqrt(arg), {}, f"nambu_goto({N})")
    eta = [-1.0] + [1.0] * N
    killing = _translations(N)
    for I in range(N + 1):
        for J in range(I + 1, N + 1):
            comps = {J: eta[I] * x(I), I: -eta[J] * x(J)}
            killing.append(KillingVector(f"l{I}{J}", VectorField(N, comps, f"l{I}{J}")))
    return ModelCatalogEntry(K.name, K, tuple(killing), (),
                             "free relativistic string in (N+1)-dimensional Minkowski space")


# ---------------------------------------------------------------- complex scalar

def complex_scalar(V: str | Expression = "0", **params) -> ModelCatalogEntry:
    """Realified complex scalar on (t, x, u, v), phi = u + i v.

    K = (d12^2 + d13^2 - d02^2 - d03^2)/d01 - V(rho) d01 with rho = u^2 + v^2.
    """
    params = {k: float(v) for k, v in params.items()}
    if isinstance(V, str):
        V = parse(V, 3, 1, set(params) | {"rho"})
    rho = x(2) ** 2 + x(3) ** 2
    Vx = substitute_params(V, {"rho": rho})
    if any(c < 2 for c in Vx.coords) or Vx.pluckers:
        raise ValueError("V may depend on rho and parameters only")
    d01, d02, d03, d12, d13 = (Plucker(i) for i in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)])
    Q = d12 ** 2 + d13 ** 2 - d02 ** 2 - d03 ** 2
    K = KawaguchiForm(3, 1, Q / d01 - Vx * d01, params, "complex_scalar")
    w = VectorField(3, {2: -x(3), 3: x(2)}, "w")
    killing = (KillingVector("v0", VectorField(3, {0: Const(1.0)}, "v0")),
               KillingVector("v1", VectorField(3, {1: Const(1.0)}, "v1")),
               KillingVector("w", w))
    # printed complex currents, realified via dphi = du + i dv; the -V dx^1 and
    # +V dx^0 pieces are absent from the printed listing and restored here
    S = Q / d01 ** 2
    T0 = {(1,): -S - Vx, (2,): -2 * d02 / d01, (3,): -2 * d03 / d01}
    T1 = {(0,): S + Vx, (2,): 2 * d12 / d01, (3,): 2 * d13 / d01}
    J = {(0,): 2 * (x(2) * d03 - x(3) * d02) / d01, (1,): -2 * (x(2) * d13 - x(3) * d12) / d01}
    note = "realified printed listing; potential term restored"
    refs = (ReferenceCurrent("T0", "v0", T0, note), ReferenceCurrent("T1", "v1", T1, note),
            ReferenceCurrent("J", "w", J, "realified printed listing"))
    return ModelCatalogEntry("complex_scalar", K, killing, refs,
                             "1+1 complex scalar with potential V(|phi|^2), realified")


# ---------------------------------------------------------------- Maxwell

# (first, second, sign) for the six squared differences in K, printed order
_MAXWELL_PAIRS = [("5123", "0423", 1), ("6123", "0143", 1), ("7123", "0124", 1),
                  ("0623", "0153", -1), ("0723", "0125", -1), ("0173", "0126", -1)]


def _maxwell_ratios() -> list[Expression]:
    vol = Plucker((0, 1, 2, 3))
    return [(D(a) - D(b)) / vol for a, b, _ in _MAXWELL_PAIRS]


def _maxwell_references() -> tuple:
    R1, R2, R3, R4, R5, R6 = _maxwell_ratios()
    Sq = -R1 ** 2 - R2 ** 2 - R3 ** 2 + R4 ** 2 + R5 ** 2 + R6 ** 2

    t0 = _Collector()
    t0.add(Const(0.5) * Sq, 1, 2, 3)
    t0.add(R4, 6, 2, 3); t0.add(-R4, 1, 5, 3)
    t0.add(R1, 4, 2, 3)
    t0.add(R5, 7, 2, 3); t0.add(-R5, 1, 2, 5)
    t0.add(R2, 1, 4, 3)
    t0.add(R6, 1, 7, 3); t0.add(-R6, 1, 2, 6)
    t0.add(R3, 1, 2, 4)

    t4 = _Collector()
    t4.add(-R1, 0, 2, 3); t4.add(R2, 0, 1, 3); t4.add(-R3, 0, 1, 2)

    t5 = _Collector()
    t5.add(-R1, 1, 2, 3); t5.add(R4, 0, 1, 3); t5.add(-R5, 0, 1, 2)

    l12 = _Collector()
    x1, x2, x5, x6 = x(1), x(2), x(5), x(6)
    l12.add(x1 * Sq, 0, 1, 3)
    l12.add(-x1 * R1, 5, 1, 3); l12.add(x1 * R1, 0, 4, 3)
    l12.add(-x1 * R2, 6, 1, 3)
    l12.add(-x1 * R3, 7, 1, 3); l12.add(x1 * R3, 0, 1, 4)
    l12.add(x1 * R4, 0, 6, 3)
    l12.add(x1 * R5, 0, 7, 3); l12.add(-x1 * R5, 0, 1, 5)
    l12.add(-x1 * R6, 0, 1, 6)
    l12.add(-x2 * Sq, 0, 2, 3)
    l12.add(-x2 * R1, 5, 2, 3)
    l12.add(-x2 * R2, 6, 2, 3); l12.add(x2 * R2, 0, 4, 3)
    l12.add(-x2 * R3, 7, 2, 3); l12.add(x2 * R3, 0, 2, 4)
    l12.add(-x2 * R4, 0, 5, 3)
    l12.add(-x2 * R5, 0, 2, 5)
    l12.add(x2 * R6, 0, 7, 3); l12.add(-x2 * R6, 0, 2, 6)
    l12.add(-x5 * R2, 1, 2, 3); l12.add(-x5 * R4, 0, 2, 3); l12.add(x5 * R6, 0, 1, 2)
    l12.add(x6 * R1, 1, 2, 3); l12.add(x6 * R4, 0, 1, 3); l12.add(-x6 * R5, 0, 1, 2)

    note = "printed closed form, transcribed term by term"
    return (ReferenceCurrent("T0", "v0", t0.coeffs, note),
            ReferenceCurrent("T4", "v4", t4.coeffs, note),
            ReferenceCurrent("T5", "v5", t5.coeffs, note),
            ReferenceCurrent("L12", "l12", l12.coeffs, note))


def maxwell_lorentz(a: int, b: int) -> VectorField:
    """x_a d_b - x_b d_a + x^{4+a} d/dx_{4+b} - x^{4+b} d/dx_{4+a}, eta = diag(-1, 1, 1, 1)."""
    eta = [-1.0, 1.0, 1.0, 1.0]
    comps: dict = {}

    def put(mu, e):
        comps[mu] = comps[mu] + e if mu in comps else e

    put(b, eta[a] * x(a))
    put(a, -eta[b] * x(b))
    put(4 + b, eta[b] * x(4 + a))
    put(4 + a, -eta[a] * x(4 + b))
    return VectorField(7, comps, f"l{a}{b}")


def maxwell() -> ModelCatalogEntry:
    """Free Maxwell field on R^8 = {(x^0..x^3, A_0..A_3)}."""
    vol = Plucker((0, 1, 2, 3))
    total = None
    for (a, b, s), R in zip(_MAXWELL_PAIRS, _maxwell_ratios()):
        sq = (D(a) - D(b)) ** 2
        term = sq if s > 0 else -sq
        total = term if total is None else total + term
    K = KawaguchiForm(7, 3, total / (2 * vol), {}, "maxwell")
    killing = _translations(7)
    for a in range(4):
        for b in range(a + 1, 4):
            killing.append(KillingVector(f"l{a}{b}", maxwell_lorentz(a, b)))
    return ModelCatalogEntry("maxwell", K, tuple(killing), _maxwell_references(),
                             "free electromagnetic field with potentials as coordinates")


# ---------------------------------------------------------------- particles, lifted scalars

def free_particle(D: int = 1, kind: str = "relativistic", m: float = 1.0) -> ModelCatalogEntry:
    """n = 0 forms on (t, q^1..q^D): m d0 sqrt(1 - |v|^2) style or m |v|^2 / 2 lifted."""
    if kind == "relativistic":
        arg = Plucker((0,)) ** 2
        for i in range(1, D + 1):
            arg = arg - Plucker((i,)) ** 2
        K = KawaguchiForm(D, 0, Param("m") * sqrt(arg), {"m": m}, "free_particle")
    elif kind == "galilean":
        L = " + ".join(f"dphi{i}_0^2" for i in range(1, D + 1))
        K = lift_from_lagrangian(f"m*({L})/2", 0, D, {"m": m}, "free_particle")
    else:
        raise ValueError(f"unknown free particle kind {kind!r}")
    return ModelCatalogEntry("free_particle", K, tuple(_translations(D)), (), f"{kind} free particle")


def scalar_1p1(L: str = "(dphi1_0^2 - dphi1_1^2)/2", **params) -> ModelCatalogEntry:
    """Lift of a real scalar Lagrangian L(x0, x1, phi1, dphi1_0, dphi1_1)."""
    params = {k: float(v) for k, v in params.items()}
    K = lift_from_lagrangian(L, 1, 1, params, "scalar_1p1")
    killing = [KillingVector(f"v{mu}", VectorField(2, {mu: Const(1.0)}, f"v{mu}"))
               for mu in range(3) if mu not in K.K.coords]
    return ModelCatalogEntry("scalar_1p1", K, tuple(killing), (), "lifted real scalar in 1+1 dimensions")


_BUILDERS: dict[str, Callable[..., ModelCatalogEntry]] = {
    "nambu_goto": nambu_goto,
    "complex_scalar": complex_scalar,
    "maxwell": maxwell,
    "free_particle": free_particle,
    "scalar_1p1": scalar_1p1,
}


def builtin(name: str, **params) -> ModelCatalogEntry:
    try:
        build = _BUILDERS[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(_BUILDERS)}") from None
    try:
        return build(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {exc}") from None


def list_models() -> dict[str, ModelCatalogEntry]:
    """Every catalog model at its default parameters (massive scalar for complex_scalar)."""
    out = {name: b() for name, b in _BUILDERS.items()}
    out["complex_scalar"] = complex_scalar("m2*rho", m2=1.0)
    return out


# ---------------------------------------------------------------- reference solutions

@dataclass(frozen=True)
class ReferenceSolution:
    name: str
    model: Callable[[], ModelCatalogEntry]
    generator: Callable
    order: float
    lower: tuple
    upper: tuple
    exact: bool = False

    def surface(self, cells, lower=None, upper=None) -> Surface:
        lower = self.lower if lower is None else lower
        upper = self.upper if upper is None else upper
        return Surface.from_function(self.generator, cells, lower, upper)


def _ng_flat(N=3):
    return lambda s: [s[0], s[1]] + [0 * s[0]] * (N - 1)


def _ng_null(N=3):
    r = 1 / math.sqrt(2)
    return lambda s: [r * (s[0] + s[1]), r * (s[1] - s[0])] + [0 * s[0]] * (N - 1)


def _scalar_wave(k=math.pi):
    return lambda s: [s[0], s[1], np.cos(k * (s[1] - s[0])), np.sin(k * (s[1] - s[0]))]


def _scalar_two_waves(k=math.pi):
    """Left- and right-moving waves in u and v; the densities are not phase invariant."""
    return lambda s: [s[0], s[1], np.cos(k * (s[1] - s[0])), 0.5 * np.sin(k * (s[1] + s[0]))]


def _scalar_constant(theta=0.3):
    return lambda s: [s[0], s[1], math.cos(theta) + 0 * s[0], math.sin(theta) + 0 * s[0]]


def _maxwell_wave(k=math.pi):
    def gen(s):
        z = 0 * s[0]
        return [s[0], s[1], s[2], s[3], z, z, np.cos(k * (s[0] - s[1])), z]
    return gen


def _maxwell_two_waves(k=math.pi):
    """A_2 = cos k(x0 - x1) plus A_1 = cos k(x0 - x2): two polarisations, two directions."""
    def gen(s):
        z = 0 * s[0]
        return [s[0], s[1], s[2], s[3], z, np.cos(k * (s[0] - s[2])), np.cos(k * (s[0] - s[1])), z]
    return gen


def _particle_line(D=1, slope=0.4, offset=0.1):
    return lambda s: [s[0]] + [offset * i + slope / i * s[0] for i in range(1, D + 1)]


def reference_solutions(**params) -> dict[str, ReferenceSolution]:
    k = params.get("k", math.pi)
    N = int(params.get("N", 3))
    D = int(params.get("D", 1))
    return {
        "ng_flat": ReferenceSolution("ng_flat", lambda: nambu_goto(N), _ng_flat(N), math.inf,
                                     (0.0, 0.0), (1.0, 1.0), True),
        "ng_null": ReferenceSolution("ng_null", lambda: nambu_goto(N), _ng_null(N), math.inf,
                                     (0.0, 0.0), (1.0, 1.0), True),
        "scalar_wave": ReferenceSolution("scalar_wave", lambda: complex_scalar("0"), _scalar_wave(k),
                                         2.0, (0.0, 0.0), (1.0, GOLDEN)),
        "scalar_two_waves": ReferenceSolution("scalar_two_waves", lambda: complex_scalar("0"),
                                              _scalar_two_waves(k), 2.0, (0.0, 0.0), (1.0, GOLDEN)),
        "scalar_constant": ReferenceSolution(
            "scalar_constant", lambda: complex_scalar("lam*(rho - 1)^2", lam=1.0),
            _scalar_constant(params.get("theta", 0.3)), math.inf, (0.0, 0.0), (1.0, 1.0), True),
        "maxwell_wave": ReferenceSolution("maxwell_wave", maxwell, _maxwell_wave(k), 2.0,
                                          (0.0,) * 4, (1.0,) * 4),
        "maxwell_two_waves": ReferenceSolution("maxwell_two_waves", maxwell, _maxwell_two_waves(k), 2.0,
                                               (0.0,) * 4, (1.0,) * 4),
        "particle_line": ReferenceSolution("particle_line", lambda: free_particle(D), _particle_line(D),
                                           math.inf, (0.0,), (1.0,), True),
    }


def reference_solution(name: str, cells, lower=None, upper=None, **params) -> Surface:
    sols = reference_solutions(**params)
    if name not in sols:
        raise KeyError(f"unknown reference solution {name!r}; known: {sorted(sols)}")
    return sols[name].surface(cells, lower, upper)
