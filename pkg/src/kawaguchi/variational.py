"""Covariant Euler-Lagrange residuals, the discrete action gradient and a
damped Newton-Krylov solver for the discrete field equations."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import LinearOperator, gmres, minres, splu

from .expr import EvaluationError
from .multivector import cofactors, sort_index
from .surface import (LazyPlucker, SingularCellError, Surface, _adjoint, _interior, cell_geometry,
                      evaluate_on, face_geometry, momentum_flux, second_derivatives)


class SolverDivergence(RuntimeError):
    def __init__(self, message: str, report: "ConvergenceReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ELResidualField:
    """EL_mu on the interior cell block, shape (N+1, *interior_cells)."""

    values: np.ndarray
    spacing: tuple

    def component_max(self) -> np.ndarray:
        return np.max(np.abs(self.values.reshape(self.values.shape[0], -1)), axis=1)

    @property
    def max_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2) * np.prod(self.spacing)))

    def norms(self) -> dict:
        return {"max": self.max_norm, "l2": self.l2_norm,
                "max_per_component": self.component_max().tolist()}


def el_residual(form, surface: Surface, threads: int = 1) -> ELResidualField:
    """dK/dx^mu at interior cell centres minus the discrete d of omega_mu.

    omega_mu = sum_I' p_{mu I'} dx^I' is evaluated on the faces bounding each
    cell through G[mu, a] = sum_I p_I cof_I(mu, a).
    """
    xc, P = cell_geometry(surface, interior=True)
    _, g, _ = evaluate_on(form, xc, P, threads=threads)
    R = np.zeros(xc.shape)
    for key, v in g.items():
        if not isinstance(key, tuple):
            R[key] += v.reshape(xc.shape[1:])
    for a in range(surface.n + 1):
        xf, Pf = face_geometry(surface, a)
        _, _, G = momentum_flux(form, xf, Pf, columns=[a], location=f"face[{a}]", threads=threads)
        c = G[:, 0]
        lo = [slice(None)] * c.ndim
        hi = [slice(None)] * c.ndim
        lo[1 + a], hi[1 + a] = slice(0, -1), slice(1, None)
        R -= (c[tuple(hi)] - c[tuple(lo)]) / surface.spacing[a]
    return ELResidualField(R, surface.spacing)


def _swap_slot(I: tuple, r: int, nu: int):
    return sort_index(I[:r] + (nu,) + I[r + 1:])


def el_residual_expanded(form, surface: Surface, fd_step: float = 1e-6) -> ELResidualField:
    """EL_mu from the chain-rule expansion of d(p_{mu I'} dx^I').

    EL_mu = dK/dx^mu - sum_I,nu (d p_I / d x^nu) d[I, mu -> nu]
            - sum_I,J (d p_I / d d[J]) sum_a (d_a d^J) cof_I(mu, a)
    with d_a d^J = sum_{r, b} cof_J(r, b) d^2 x^{J_r} / ds^a ds^b.  Mixed second
    derivatives of K are central differences of first derivatives.
    """
    xc, P = cell_geometry(surface, interior=True)
    S = second_derivatives(surface)
    shape = xc.shape[1:]
    C, k = xc.shape[0], surface.n + 1
    M = int(np.prod(shape))
    xs = xc.reshape(C, M)
    Ps = P.reshape(C, k, M)
    Ss = S.reshape(C, k, k, M)
    dd = LazyPlucker(Ps)
    try:
        _, g = form.evaluate(xs, dd)
    except EvaluationError as exc:
        raise SingularCellError(exc.reason, "cell", tuple(np.unravel_index(int(exc.where[0]), shape)))
    active = form.active
    coords = tuple(sorted(c for c in form.K.coords))
    values = {I: dd[I] for I in active}

    def grads_at(xv, dv):
        _, gg = form.evaluate(xv, dv)
        return gg

    # H[I][sym] = d p_I / d sym
    H: dict = {I: {} for I in active}
    for nu in coords:
        eps = fd_step * np.maximum(1.0, np.abs(xs[nu]))
        xp, xm = xs.copy(), xs.copy()
        xp[nu] += eps
        xm[nu] -= eps
        gp, gm = grads_at(xp, values), grads_at(xm, values)
        for I in active:
            H[I][nu] = (gp.get(I, 0.0) - gm.get(I, 0.0)) / (2 * eps)
    for J in active:
        eps = fd_step * np.maximum(1.0, np.abs(values[J]))
        vp, vm = dict(values), dict(values)
        vp[J] = values[J] + eps
        vm[J] = values[J] - eps
        gp, gm = grads_at(xs, vp), grads_at(xs, vm)
        for I in active:
            H[I][J] = (gp.get(I, 0.0) - gm.get(I, 0.0)) / (2 * eps)

    cof = {I: cofactors(Ps[list(I)]) for I in active}
    # d_a d^J
    dJ = {}
    for J in active:
        dJ[J] = np.zeros((k, M))
        for r, mu in enumerate(J):
            for b in range(k):
                dJ[J] += cof[J][r, b] * Ss[mu, :, b]

    R = np.zeros((C, M))
    for key, v in g.items():
        if not isinstance(key, tuple):
            R[key] += v
    for I in active:
        for r, mu in enumerate(I):
            for nu in coords:
                idx, sign = _swap_slot(I, r, nu)
                if sign:
                    R[mu] -= H[I][nu] * sign * dd[idx]
            for J in active:
                R[mu] -= H[I][J] * np.einsum("am,am->m", dJ[J], cof[I][r])
    return ELResidualField(R.reshape((C,) + shape), surface.spacing)


def action_gradient(form, surface: Surface, threads: int = 1) -> np.ndarray:
    """Exact gradient of :func:`surface.discrete_action` at interior nodes, shape (N+1, *interior_nodes)."""
    k = surface.n + 1
    h = surface.spacing
    xc, P = cell_geometry(surface)
    _, dKdx, G = momentum_flux(form, xc, P, location="cell", threads=threads)
    vol = surface.cell_volume
    grad = _adjoint(dKdx * vol, "a" * k, h)
    for a in range(k):
        ops = "a" * a + "d" + "a" * (k - a - 1)
        grad += _adjoint(G[:, a] * vol, ops, h)
    return _interior(grad)


# ---------------------------------------------------------------- solver

@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 30
    tol: float = 1e-10
    damping: tuple = tuple(0.5 ** i for i in range(10))
    inner_tol: float = 1e-8
    inner_maxiter: int = 1000
    fd_step: float = 1e-6
    krylov: str = "gmres"
    preconditioner: str = "colored"
    free_components: tuple | None = None
    threads: int = 1

    def __post_init__(self):
        if self.tol <= 0 or self.inner_tol <= 0 or self.fd_step <= 0:
            raise ValueError("tolerances and step must be positive")
        if not self.damping or any(not 0 < f <= 1 for f in self.damping):
            raise ValueError("damping factors must lie in (0, 1]")
        if self.krylov not in ("gmres", "minres"):
            raise ValueError("krylov must be 'gmres' or 'minres'")
        if self.preconditioner not in ("colored", "none"):
            raise ValueError("preconditioner must be 'colored' or 'none'")


@dataclass
class ConvergenceReport:
    converged: bool = False
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)
    inner_iterations: list = field(default_factory=list)
    final_norms: dict = field(default_factory=dict)
    wall_time: float = 0.0
    tolerance: float = 0.0
    grid: dict = field(default_factory=dict)
    message: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def colored_jacobian(F, z: np.ndarray, ishape: tuple, eps: float) -> csc_matrix:
    """Jacobian of F assembled from 3^k * C finite-difference products.

    A node value influences the gradient only at nodes within one step along
    every axis, so nodes whose indices agree mod 3 can be perturbed together.
    """
    C, nodes = ishape[0], ishape[1:]
    k = len(nodes)
    idx = np.indices(nodes).reshape(k, -1)
    size = idx.shape[1]
    rows_all, cols_all, vals_all = [], [], []
    for color in np.ndindex(*(3,) * k):
        color = np.asarray(color)
        sel = np.all(idx % 3 == color[:, None], axis=0)
        if not sel.any():
            continue
        delta = (color[:, None] - idx + 1) % 3 - 1
        j = idx + delta
        ok = np.all((j >= 0) & (j < np.asarray(nodes)[:, None]), axis=0)
        jflat = np.ravel_multi_index(tuple(j[:, ok]), nodes)
        for mu in range(C):
            m = np.zeros((C, size))
            m[mu, sel] = 1.0
            m = m.ravel()
            col = ((F(z + eps * m) - F(z - eps * m)) / (2 * eps)).reshape(C, size)
            for nu in range(C):
                rows_all.append(nu * size + np.flatnonzero(ok))
                cols_all.append(mu * size + jflat)
                vals_all.append(col[nu, ok])
    n = C * size
    return csc_matrix((np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
                      shape=(n, n))


def solve_el(form, surface: Surface, opts: SolveOptions = SolveOptions()):
    """Damped Newton-Krylov iteration on action_gradient / cell volume = 0.

    Boundary nodes are held fixed.  By default only the components x^{n+1}..x^N
    vary, which fixes the reparameterisation freedom of the base coordinates;
    ``opts.free_components`` overrides the choice.
    Returns (solved surface, ConvergenceReport).
    """
    t0 = time.perf_counter()
    free = opts.free_components
    if free is None:
        free = tuple(range(surface.n + 1, surface.N + 1)) or tuple(range(surface.N + 1))
    free = tuple(int(c) for c in free)
    vol = surface.cell_volume
    base = surface.values.copy()
    inner = (slice(None),) + tuple(slice(1, -1) for _ in surface.nodes)
    ishape = base[inner][list(free)].shape

    def unpack(z):
        vals = base.copy()
        block = vals[inner]
        block[list(free)] = z.reshape(ishape)
        vals[inner] = block
        return surface.with_values(vals)

    def F(z):
        return action_gradient(form, unpack(z), opts.threads)[list(free)].ravel() / vol

    report = ConvergenceReport(tolerance=opts.tol,
                               grid={"nodes": list(surface.nodes), "spacing": list(surface.spacing),
                                     "free_components": list(free)})
    z = base[inner][list(free)].ravel().copy()
    r = F(z)
    rnorm = float(np.max(np.abs(r))) if r.size else 0.0
    report.residual_history.append(rnorm)
    while rnorm >= opts.tol and report.iterations < opts.max_iter:
        scale = max(1.0, float(np.max(np.abs(z)))) if z.size else 1.0

        def matvec(v, z=z):
            nv = float(np.linalg.norm(v))
            if nv == 0.0:
                return np.zeros_like(v)
            eps = opts.fd_step * scale / nv
            return (F(z + eps * v) - F(z - eps * v)) / (2 * eps)

        J = LinearOperator((z.size, z.size), matvec=matvec, dtype=float)
        M = None
        if opts.preconditioner == "colored":
            try:
                lu = splu(colored_jacobian(F, z, ishape, opts.fd_step * scale))
                M = LinearOperator((z.size, z.size), matvec=lu.solve, dtype=float)
            except RuntimeError:
                M = None  # singular assembled Jacobian: fall back to plain Krylov
        count = [0]

        def cb(_):
            count[0] += 1

        if opts.krylov == "minres":
            step, _ = minres(J, -r, rtol=opts.inner_tol, maxiter=opts.inner_maxiter, callback=cb)
        else:
            restart = min(100, z.size)
            step, _ = gmres(J, -r, rtol=opts.inner_tol, restart=restart, M=M,
                            maxiter=max(1, opts.inner_maxiter // restart), callback=cb,
                            callback_type="pr_norm")
        report.inner_iterations.append(count[0])
        accepted = False
        for lam in opts.damping:
            trial = z + lam * step
            try:
                rt = F(trial)
            except SingularCellError:
                continue
            tnorm = float(np.max(np.abs(rt)))
            if np.isfinite(tnorm) and tnorm < rnorm:
                z, r, rnorm, accepted = trial, rt, tnorm, True
                report.damping_history.append(lam)
                break
        report.iterations += 1
        report.residual_history.append(rnorm)
        if not accepted:
            report.wall_time = time.perf_counter() - t0
            report.message = "no decrease after the full damping ladder"
            report.final_norms = {"max_gradient": rnorm}
            raise SolverDivergence(report.message, report)
    out = unpack(z)
    report.converged = rnorm < opts.tol
    report.final_norms = {"max_gradient": rnorm}
    report.message = "converged" if report.converged else "iteration cap reached"
    report.wall_time = time.perf_counter() - t0
    return out, report
