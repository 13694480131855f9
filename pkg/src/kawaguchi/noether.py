"""Lie derivatives of Kawaguchi forms, Killing checks and covariant Nöther currents."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .expr import (Add, Const, Div, EvalPoint, Expression, ExprError, Mul, Neg, Plucker, Sub,
                   as_expr, d as d_sym, diff, evaluate, simplify_const)
from .kform import KawaguchiForm, sample_points
from .multivector import all_indices, check_index, sort_index
from .surface import GridNForm, Surface, discrete_d, pullback_nform

KILLING_TOL = 1e-10
DEGREE0_TOL = 1e-12


def _signed(d: Mapping, raw):
    idx, sign = sort_index(raw)
    if sign == 0:
        return 0.0
    return sign * d[idx]


@dataclass(frozen=True)
class VectorField:
    """v = v^mu(x) d/dx^mu; missing components are zero."""

    N: int
    components: Mapping[int, Expression]
    name: str = "v"

    def __post_init__(self):
        comps = {}
        for mu, e in self.components.items():
            mu = int(mu)
            if not 0 <= mu <= self.N:
                raise ValueError(f"component index {mu} outside 0..{self.N}")
            e = as_expr(e)
            self._check(e)
            comps[mu] = e
        object.__setattr__(self, "components", comps)

    def _check(self, e: Expression):
        if e.pluckers:
            raise ExprError(f"vector field {self.name} depends on dx; use GeneralizedVectorField")

    def __getitem__(self, mu: int) -> Expression:
        return self.components.get(mu, Const(0.0))

    def evaluate(self, x, d, params=None):
        """Component values and their x-gradients: {mu: (value, {nu: dv/dx^nu})}."""
        out = {}
        for mu, e in self.components.items():
            val, g = evaluate(e, x, d, params)
            out[mu] = (val, {k: v for k, v in g.items() if not isinstance(k, tuple)})
        return out


@dataclass(frozen=True)
class GeneralizedVectorField(VectorField):
    """Components may depend on dx, homogeneously of degree 0."""

    def _check(self, e: Expression):
        pass

    def degree0_error(self, n: int, samples: int = 100, rng=0, lambdas=(0.5, 2.0, 10.0)) -> float:
        rng = np.random.default_rng(rng)
        k = n + 1
        P = 0.3 * rng.standard_normal((self.N + 1, k, samples))
        P[:k] += np.eye(k)[:, :, None]
        x = rng.uniform(-1, 1, (self.N + 1, samples))
        from .multivector import plucker_coordinates

        dd = plucker_coordinates(P, all_indices(self.N, k))
        worst = 0.0
        for e in self.components.values():
            base, _ = evaluate(e, x, dd, grad=False)
            for lam in lambdas:
                val, _ = evaluate(e, x, {i: lam * v for i, v in dd.items()}, grad=False)
                worst = max(worst, float(np.max(np.abs(val - base) / (1 + np.abs(base)))))
        return worst

    def check_degree0(self, n: int, **kw) -> None:
        err = self.degree0_error(n, **kw)
        if err > DEGREE0_TOL:
            raise ValueError(f"{self.name} is not degree-0 homogeneous in dx (error {err:.3g})")


@dataclass(frozen=True)
class BTerm:
    """An n-form B = sum_I' b_I'(x) dx^I' whose exterior derivative is compared with L_v K."""

    N: int
    n: int
    coefficients: Mapping[tuple, Expression] = field(default_factory=dict)

    def __post_init__(self):
        comps = {}
        for idx, e in self.coefficients.items():
            idx = check_index(idx, self.N, self.n)
            e = as_expr(e)
            if e.pluckers:
                raise ExprError("B coefficients may depend on x only")
            comps[idx] = e
        object.__setattr__(self, "coefficients", comps)

    def dB(self, x, d, params=None):
        """sum_I' sum_nu db_I'/dx^nu d[nu, I'] at (batched) points."""
        total = 0.0
        for idx, e in self.coefficients.items():
            _, g = evaluate(e, x, d, params)
            for nu, dv in g.items():
                total = total + dv * _signed(d, (nu,) + idx)
        return total


def lie_derivative_values(form: KawaguchiForm, v: VectorField, x, d, grad_K=None):
    """L_v K = v^mu dK/dx^mu + sum_I p_I sum_r dv^{I_r}/dx^nu d[I with slot r -> nu].

    ``d`` must resolve every sorted index (a full dict or a lazy lookup).
    """
    if grad_K is None:
        _, grad_K = form.evaluate(x, d)
    vals = v.evaluate(x, d, form.params)
    total = 0.0
    for key, gk in grad_K.items():
        if isinstance(key, tuple):
            for r, mu in enumerate(key):
                if mu not in vals:
                    continue
                for nu, dv in vals[mu][1].items():
                    total = total + gk * dv * _signed(d, key[:r] + (nu,) + key[r + 1:])
        elif key in vals:
            total = total + vals[key][0] * gk
    return total


def lie_derivative(form: KawaguchiForm, v: VectorField, p: EvalPoint) -> float:
    """Lie derivative of K along v at a single point."""
    comps = dict(p.dx.components)
    for idx in all_indices(form.N, form.degree):
        comps.setdefault(idx, 0.0)
    return float(lie_derivative_values(form, v, np.asarray(p.x, float), comps))


@dataclass(frozen=True)
class KillingReport:
    name: str
    max_error: float
    tolerance: float
    samples: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def as_dict(self) -> dict:
        return {"vector": self.name, "max_error": self.max_error, "tolerance": self.tolerance,
                "samples": self.samples, "passed": self.passed}


def _nondegenerate(v: VectorField, params):
    def check(x, d):
        ok = np.ones(np.shape(x)[1], dtype=bool)
        for e in v.components.values():
            try:
                val, _ = evaluate(e, x, d, params, grad=False)
                ok &= np.isfinite(np.broadcast_to(val, ok.shape))
            except ArithmeticError as exc:
                ok[getattr(exc, "where", slice(None))] = False
        return ok
    return check


def killing_check(form: KawaguchiForm, v: VectorField, B: BTerm | None = None, samples: int = 100,
                  rng=0, tol: float = KILLING_TOL) -> KillingReport:
    """max over random points of |L_v K - dB|."""
    x, _, d = sample_points(form, samples, rng, check=_nondegenerate(v, form.params))
    L = lie_derivative_values(form, v, x, d)
    if B is not None:
        L = L - B.dB(x, d, form.params)
    err = float(np.max(np.abs(np.broadcast_to(L, (samples,)))))
    return KillingReport(v.name, err, tol, samples)


# ---------------------------------------------------------------- currents

@dataclass(frozen=True)
class NoetherCurrent:
    """J = sum_I' f_I' dx^I' with f_I' = sum_mu v^mu sign * p_{sort(mu, I')} - b_I'."""

    form: KawaguchiForm
    vector: VectorField
    coefficients: Mapping[tuple, Expression]

    @property
    def name(self) -> str:
        return self.vector.name

    def evaluate(self, x, d) -> dict:
        out = {}
        for idx, e in self.coefficients.items():
            val, _ = evaluate(e, x, d, self.form.params, grad=False)
            out[idx] = val
        return out

    def pullback(self, surface: Surface) -> GridNForm:
        return pullback_nform(self.evaluate, surface)


def noether_current(form: KawaguchiForm, v: VectorField, B: BTerm | None = None,
                    check: bool = True) -> NoetherCurrent:
    """Assemble the current coefficients symbolically from dK/dd[I]."""
    if check:
        rep = killing_check(form, v, B)
        if not rep.passed:
            warnings.warn(f"{v.name} fails the Killing check (max error {rep.max_error:.3g})",
                          stacklevel=2)
    momenta = {I: diff(form.K, I) for I in form.active}
    coeffs: dict[tuple, Expression] = {}
    for I, pI in momenta.items():
        for r, mu in enumerate(I):
            if mu not in v.components:
                continue
            rest = I[:r] + I[r + 1:]
            term = Mul(v[mu], pI)
            # d[I] = (-1)^r dx^mu ^ dx^rest
            if r % 2:
                term = Neg(term)
            coeffs[rest] = Add(coeffs[rest], term) if rest in coeffs else term
    if B is not None:
        for idx, b in B.coefficients.items():
            coeffs[idx] = Sub(coeffs[idx], b) if idx in coeffs else Neg(b)
    coeffs = {k: simplify_const(e) for k, e in coeffs.items()}
    return NoetherCurrent(form, v, coeffs)


@dataclass(frozen=True)
class DivergenceReport:
    values: np.ndarray
    spacing: tuple

    @property
    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2) * np.prod(self.spacing)))

    def as_dict(self) -> dict:
        return {"max": self.max_norm, "l2": self.l2_norm, "cells": list(self.values.shape),
                "spacing": list(self.spacing)}


def conservation_divergence(J: NoetherCurrent, surface: Surface) -> DivergenceReport:
    """Discrete dJ on the interior cell block."""
    return DivergenceReport(discrete_d(J.pullback(surface)), surface.spacing)


def face_charges(omega: GridNForm, axis: int = 0) -> np.ndarray:
    """Summed flux of c_axis through each face slice normal to ``axis``."""
    f = omega.faces[axis]
    other = tuple(b for b in range(f.ndim) if b != axis)
    area = float(np.prod([omega.spacing[b] for b in other]))
    return np.sum(f, axis=other) * area


def maxwell_gauge_generator(Lambda: Expression, name: str = "gauge") -> GeneralizedVectorField:
    """v^{4+a} = sum_nu dLambda/dx^nu (-1)^a d[nu, 0..(a omitted)..3] / d[0,1,2,3].

    This is the component form of (dLambda ^ i_{d/dx^a} dx^{0123}) / dx^{0123}.
    """
    Lambda = as_expr(Lambda)
    for c in Lambda.coords:
        if c > 7:
            raise ValueError("Lambda may only depend on x0..x7")
    grads = {nu: diff(Lambda, nu) for nu in range(8)}
    vol = Plucker((0, 1, 2, 3))
    comps = {}
    for a in range(4):
        rest = tuple(b for b in range(4) if b != a)
        total = None
        for nu, g in grads.items():
            if isinstance(g, Const) and g.value == 0.0:
                continue
            dn = d_sym(nu, *rest)
            if isinstance(dn, Const) and dn.value == 0.0:
                continue  # repeated index
            term = Mul(g, dn)
            if a % 2:
                term = Neg(term)
            total = term if total is None else Add(total, term)
        if total is not None:
            comps[4 + a] = simplify_const(Div(total, vol))
    return GeneralizedVectorField(7, comps, name)
