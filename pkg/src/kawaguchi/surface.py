"""Discretised parameterised submanifolds sigma: S -> M on rectangular grids.

Layout
------
Node values live on a grid of shape (m_0+1, ..., m_n+1).  K and its
x-gradient are evaluated at cell centres, using partials averaged over the
2^n cell edges in each direction.  n-form coefficients c_a are evaluated on
faces normal to s^a and differenced by :func:`discrete_d`.  Residuals and
currents are computed on the interior block of cells 1..m_a-2, whose faces
all sit on interior node planes.

An n-form omega is stored through its pulled-back coefficients c_a with
sigma^* omega = sum_a c_a i_{d/ds^a}(ds^0 ^ ... ^ ds^n), so that
d omega = (sum_a dc_a/ds^a) ds^0 ^ ... ^ ds^n.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import EvaluationError, Expression, evaluate
from .multivector import PluckerVector, cofactors, det, plucker_coordinates, sort_index


class SingularCellError(ArithmeticError):
    """K or a current is singular somewhere on the grid."""

    def __init__(self, reason: str, location: str, index: tuple):
        self.reason = reason
        self.location = location
        self.index = index
        super().__init__(f"singular {location} {index}: {reason}")


class LazyPlucker(dict):
    """Plücker components of a batch of Jacobians P (N+1, n+1, *batch), computed on demand."""

    def __init__(self, P: np.ndarray):
        super().__init__()
        self.P = P

    def __missing__(self, idx):
        val = det(self.P[list(idx)])
        self[idx] = val
        return val

    def chunk(self, sl: slice) -> "LazyPlucker":
        """The same lookup restricted to a slice of a flat batch."""
        return LazyPlucker(self.P[..., sl])

    def signed(self, raw):
        idx, sign = sort_index(raw)
        if sign == 0:
            return np.zeros(self.P.shape[2:])
        return sign * self[idx]


@dataclass(frozen=True)
class Surface:
    """Node values x^mu(s) on a box grid.  ``values`` has shape (N+1, *nodes)."""

    values: np.ndarray
    spacing: tuple
    origin: tuple = None
    orientation: int = 1

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        k = vals.ndim - 1
        spacing = tuple(float(h) for h in self.spacing)
        if len(spacing) != k:
            raise ValueError(f"{len(spacing)} spacings for a {k}-parameter grid")
        if any(h <= 0 for h in spacing):
            raise ValueError("grid spacings must be positive")
        object.__setattr__(self, "spacing", spacing)
        origin = (0.0,) * k if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != k:
            raise ValueError("origin length does not match the grid")
        object.__setattr__(self, "origin", origin)
        if any(s < 2 for s in vals.shape[1:]):
            raise ValueError("each grid direction needs at least two nodes")

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n(self) -> int:
        return self.values.ndim - 2

    @property
    def nodes(self) -> tuple:
        return self.values.shape[1:]

    @property
    def cells(self) -> tuple:
        return tuple(s - 1 for s in self.nodes)

    @property
    def interior_cells(self) -> tuple:
        return tuple(m - 2 for m in self.cells)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def parameters(self) -> list[np.ndarray]:
        """Parameter values s^a at every node (ij-indexed meshgrid)."""
        axes = [o + h * np.arange(m) for o, h, m in zip(self.origin, self.spacing, self.nodes)]
        return np.meshgrid(*axes, indexing="ij")

    def with_values(self, values) -> "Surface":
        return Surface(values, self.spacing, self.origin, self.orientation)

    def reversed(self, axis: int = 0) -> "Surface":
        """Same point set with the orientation of parameter ``axis`` reversed."""
        return Surface(np.flip(self.values, axis=axis + 1).copy(), self.spacing, self.origin,
                       -self.orientation)

    @classmethod
    def from_function(cls, fn: Callable, cells: Sequence[int], lower=None, upper=None) -> "Surface":
        """Sample ``fn(s) -> array (N+1, *nodes)`` where ``s`` is the list of parameter grids."""
        k = len(cells)
        lower = np.zeros(k) if lower is None else np.asarray(lower, float)
        upper = np.ones(k) if upper is None else np.asarray(upper, float)
        spacing = tuple((upper - lower) / np.asarray(cells))
        axes = [lower[a] + spacing[a] * np.arange(cells[a] + 1) for a in range(k)]
        s = np.meshgrid(*axes, indexing="ij")
        vals = np.asarray(fn(s), dtype=float)
        vals = np.stack([np.broadcast_to(v, s[0].shape) for v in vals])
        return cls(vals, spacing, tuple(lower))

    @classmethod
    def conventional(cls, fields: Callable, cells: Sequence[int], lower=None, upper=None) -> "Surface":
        """Graph surface x^a = s^a, x^{n+i} = fields(s)[i-1]."""
        return cls.from_function(lambda s: list(s) + list(fields(s)), cells, lower, upper)


# ---------------------------------------------------------------- stencils

def _take(A: np.ndarray, axis: int, start: int, stop: int | None) -> np.ndarray:
    sl = [slice(None)] * A.ndim
    sl[axis] = slice(start, stop)
    return A[tuple(sl)]


def _apply(A: np.ndarray, ops: Sequence[str], spacing: Sequence[float], lead: int = 1) -> np.ndarray:
    """Apply per-axis stencils to the trailing grid axes of ``A``.

    'a' average of neighbours, 'd' forward difference / h (both node -> cell),
    'c' central difference / 2h (interior nodes), 'i' interior nodes,
    '2' second difference centred on interior cells, 'n' keep.
    """
    for a, op in enumerate(ops):
        ax, h = lead + a, spacing[a]
        if op == "a":
            A = 0.5 * (_take(A, ax, 1, None) + _take(A, ax, 0, -1))
        elif op == "d":
            A = (_take(A, ax, 1, None) - _take(A, ax, 0, -1)) / h
        elif op == "c":
            A = (_take(A, ax, 2, None) - _take(A, ax, 0, -2)) / (2 * h)
        elif op == "i":
            A = _take(A, ax, 1, -1)
        elif op == "2":
            A = (_take(A, ax, 3, None) - _take(A, ax, 2, -1)
                 - _take(A, ax, 1, -2) + _take(A, ax, 0, -3)) / (2 * h * h)
        elif op != "n":
            raise ValueError(f"unknown stencil {op!r}")
    return A


def _adjoint(B: np.ndarray, ops: Sequence[str], spacing: Sequence[float], lead: int = 1) -> np.ndarray:
    """Transpose of :func:`_apply` for the node -> cell stencils 'a' and 'd'."""
    for a in reversed(range(len(ops))):
        op, ax, h = ops[a], lead + a, spacing[a]
        shape = list(B.shape)
        shape[ax] += 1
        out = np.zeros(shape)
        hi = [slice(None)] * B.ndim
        lo = [slice(None)] * B.ndim
        hi[ax], lo[ax] = slice(1, None), slice(0, -1)
        if op == "a":
            out[tuple(hi)] += 0.5 * B
            out[tuple(lo)] += 0.5 * B
        elif op == "d":
            out[tuple(hi)] += B / h
            out[tuple(lo)] -= B / h
        else:
            raise ValueError(f"no adjoint for stencil {op!r}")
        B = out
    return B


def _interior(A: np.ndarray, lead: int = 1) -> np.ndarray:
    for ax in range(lead, A.ndim):
        A = _take(A, ax, 1, -1)
    return A


def cell_geometry(surface: Surface, interior: bool = False):
    """Cell-centre points x (N+1, *cells) and partials P (N+1, n+1, *cells)."""
    k = surface.n + 1
    X, h = surface.values, surface.spacing
    xc = _apply(X, "a" * k, h)
    P = np.stack([_apply(X, "a" * a + "d" + "a" * (k - a - 1), h) for a in range(k)], axis=1)
    if interior:
        xc, P = _interior(xc), _interior(P, lead=2)
    return xc, P


def face_geometry(surface: Surface, a: int):
    """Points and partials on faces normal to s^a bounding the interior cell block.

    Face arrays have extent m_a - 1 along a (node planes 1..m_a-1) and
    m_b - 2 along b != a (cells 1..m_b-2).
    """
    k = surface.n + 1
    X, h = surface.values, surface.spacing

    def ops(b_op):
        return ["i" if c == a else "a" for c in range(k)] if b_op is None else b_op

    xf = _apply(X, ops(None), h)
    cols = []
    for b in range(k):
        if b == a:
            o = ["c" if c == a else "a" for c in range(k)]
        else:
            o = ["i" if c == a else ("d" if c == b else "a") for c in range(k)]
        cols.append(_apply(X, o, h))
    P = np.stack(cols, axis=1)

    def trim(A, lead):
        for c in range(k):
            if c != a:
                A = _take(A, lead + c, 1, -1)
        return A

    return trim(xf, 1), trim(P, 2)


def second_derivatives(surface: Surface) -> np.ndarray:
    """d^2 x / ds^a ds^b at interior cell centres, shape (N+1, n+1, n+1, *interior_cells)."""
    k = surface.n + 1
    X, h = surface.values, surface.spacing
    out = np.empty((X.shape[0], k, k) + surface.interior_cells)
    for a in range(k):
        for b in range(a, k):
            if a == b:
                o = ["2" if c == a else "a" for c in range(k)]
                S = _apply(X, o, h)
                for c in range(k):
                    if c != a:
                        S = _take(S, 1 + c, 1, -1)
            else:
                o = ["d" if c in (a, b) else "a" for c in range(k)]
                S = _interior(_apply(X, o, h))
            out[:, a, b] = out[:, b, a] = S
    return out


def cell_jacobian(surface: Surface, cell: Sequence[int]):
    """Centre point and Plücker vector of one cell."""
    cell = tuple(int(c) for c in cell)
    if len(cell) != surface.n + 1 or any(not 0 <= c < m for c, m in zip(cell, surface.cells)):
        raise IndexError(f"cell {cell} outside grid of {surface.cells} cells")
    block = surface.values[(slice(None),) + tuple(slice(c, c + 2) for c in cell)]
    xc, P = cell_geometry(Surface(block, surface.spacing))
    from .multivector import jacobian_multivector

    return xc.reshape(-1), jacobian_multivector(P.reshape(P.shape[:2]))


def _locate(exc: EvaluationError, shape, location: str) -> SingularCellError:
    flat = int(exc.where[0]) if len(exc.where) else 0
    index = tuple(int(i) for i in np.unravel_index(flat, shape)) if shape else ()
    return SingularCellError(exc.reason, location, index)


def evaluate_on(form, x: np.ndarray, P: np.ndarray, grad: bool = True, location: str = "cell",
                threads: int = 1):
    """Evaluate K on a grid block of points; returns (value, grads, plucker cache)."""
    shape = x.shape[1:]
    M = int(np.prod(shape))
    xf = x.reshape(x.shape[0], M)
    Pf = P.reshape(P.shape[0], P.shape[1], M)
    d = LazyPlucker(Pf)
    try:
        val, g = form.evaluate(xf, d, grad=grad, threads=threads)
    except EvaluationError as exc:
        raise _locate(exc, shape, location) from None
    val = np.broadcast_to(val, (M,))
    return val, g, d


def discrete_action(form, surface: Surface, threads: int = 1) -> float:
    """Sum over cells of K(x_cell, J_cell) times the cell volume."""
    xc, P = cell_geometry(surface)
    val, _, _ = evaluate_on(form, xc, P, grad=False, threads=threads)
    return float(np.sum(val) * surface.cell_volume)


# ---------------------------------------------------------------- n-forms

@dataclass(frozen=True)
class GridNForm:
    """Face coefficients c_a of a pulled-back n-form on a block of cells.

    ``faces[a]`` has one more entry than the block along axis a.
    """

    faces: tuple
    spacing: tuple
    offset: tuple = None

    def __post_init__(self):
        faces = tuple(np.asarray(f, dtype=float) for f in self.faces)
        object.__setattr__(self, "faces", faces)
        k = len(faces)
        if len(self.spacing) != k:
            raise ValueError("spacing does not match the number of face families")
        cells = self.cells
        for a, f in enumerate(faces):
            want = tuple(c + 1 if b == a else c for b, c in enumerate(cells))
            if f.shape != want:
                raise ValueError(f"faces[{a}] has shape {f.shape}, expected {want}")

    @property
    def cells(self) -> tuple:
        f0 = self.faces[0]
        return (f0.shape[0] - 1,) + tuple(f0.shape[1:])

    def boundary_flux(self) -> float:
        """sum_a (outflow - inflow) through the block boundary, weighted by face areas."""
        total = 0.0
        for a, f in enumerate(self.faces):
            area = float(np.prod([h for b, h in enumerate(self.spacing) if b != a]))
            total += (np.sum(_take(f, a, -1, None)) - np.sum(_take(f, a, 0, 1))) * area
        return float(total)


def discrete_d(omega: GridNForm) -> np.ndarray:
    """(d omega)_cell = sum_a (c_a(face_a^+) - c_a(face_a^-)) / h_a."""
    out = np.zeros(omega.cells)
    for a, f in enumerate(omega.faces):
        out += (_take(f, a, 1, None) - _take(f, a, 0, -1)) / omega.spacing[a]
    return out


class ExpressionCoefficients:
    """Adapter turning {sorted n-tuple: Expression} into an n-form coefficient callable."""

    def __init__(self, coefficients: Mapping[tuple, Expression], params=None):
        self.coefficients = {tuple(k): v for k, v in coefficients.items()}
        self.params = dict(params or {})

    def __call__(self, x, d):
        out = {}
        for idx, e in self.coefficients.items():
            val, _ = evaluate(e, x, d, self.params, grad=False)
            out[idx] = val
        return out


def nform_minors(P: np.ndarray, idx: tuple, a: int) -> np.ndarray:
    """(-1)^a det of rows ``idx`` and all parameter columns except a."""
    cols = [b for b in range(P.shape[1]) if b != a]
    return (-1) ** a * det(P[list(idx)][:, cols])


def pullback_coefficients(coeffs: Mapping[tuple, np.ndarray], P: np.ndarray, a: int) -> np.ndarray:
    """c_a = sum_I' f_I' (-1)^a minor(I', all columns but a)."""
    total = np.zeros(P.shape[2:])
    for idx, f in coeffs.items():
        if len(idx) == 0:
            total = total + f * (-1) ** a * (a == 0)
            continue
        total = total + f * nform_minors(P, idx, a)
    return total


def pullback_nform(coeff, surface: Surface) -> GridNForm:
    """Pull an n-form with coefficients f_I'(x, dx) back to the interior cell block.

    ``coeff`` is either a mapping {sorted n-tuple: Expression} or a callable
    ``(x, d) -> {n-tuple: values}`` where ``d`` is a lazy Plücker lookup.
    """
    if not callable(coeff):
        coeff = ExpressionCoefficients(coeff)
    faces = []
    for a in range(surface.n + 1):
        xf, P = face_geometry(surface, a)
        shape = xf.shape[1:]
        M = int(np.prod(shape))
        xs = xf.reshape(xf.shape[0], M)
        Ps = P.reshape(P.shape[0], P.shape[1], M)
        try:
            f = coeff(xs, LazyPlucker(Ps))
        except EvaluationError as exc:
            raise _locate(exc, shape, f"face[{a}]") from None
        f = {k: np.broadcast_to(v, (M,)) for k, v in f.items()}
        faces.append(pullback_coefficients(f, Ps, a).reshape(shape))
    return GridNForm(tuple(faces), surface.spacing, (1,) * (surface.n + 1))


def momentum_flux(form, x: np.ndarray, P: np.ndarray, columns=None, location="face", threads=1):
    """K, dK/dx and the flux matrix G[mu, a] = sum_I p_I d(d^I)/dP[mu, a].

    Column a of G holds the face coefficients of the Euler-Lagrange n-form
    omega_mu = sum_I' p_{mu I'} dx^I' for every mu at once.
    """
    k = P.shape[1]
    columns = range(k) if columns is None else columns
    shape = x.shape[1:]
    val, g, dcache = evaluate_on(form, x, P, grad=True, location=location, threads=threads)
    C = x.shape[0]
    M = int(np.prod(shape))
    Pf = dcache.P
    dKdx = np.zeros((C, M))
    G = np.zeros((C, len(columns), M))
    for key, v in g.items():
        if isinstance(key, tuple):
            cof = cofactors(Pf[list(key)])
            for r, mu in enumerate(key):
                for j, a in enumerate(columns):
                    G[mu, j] += v * cof[r, a]
        else:
            dKdx[key] = v
    return val.reshape(shape), dKdx.reshape((C,) + shape), G.reshape((C, len(columns)) + shape)


# ---------------------------------------------------------------- file I/O

def write_surface(surface: Surface, csv_path, json_path=None) -> None:
    """CSV with header s0..sn,x0..xN in row-major node order, plus a JSON descriptor."""
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    s = [p.reshape(-1) for p in surface.parameters()]
    xs = surface.values.reshape(surface.N + 1, -1)
    table = np.column_stack(s + list(xs))
    header = ",".join([f"s{a}" for a in range(surface.n + 1)] + [f"x{m}" for m in range(surface.N + 1)])
    np.savetxt(csv_path, table, delimiter=",", header=header, comments="", fmt="%.17g")
    json_path.write_text(json.dumps({"shape": list(surface.nodes), "spacing": list(surface.spacing),
                                     "origin": list(surface.origin),
                                     "orientation": surface.orientation}, indent=2))


def read_surface(csv_path, json_path=None) -> Surface:
    csv_path = Path(csv_path)
    json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
    meta = json.loads(json_path.read_text())
    shape = tuple(int(s) for s in meta["shape"])
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
    k = len(shape)
    if header[:k] != [f"s{a}" for a in range(k)] or not all(h.startswith("x") for h in header[k:]):
        raise ValueError(f"{csv_path}: header must be s0..s{k - 1},x0..xN")
    table = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[0] != int(np.prod(shape)):
        raise ValueError(f"{csv_path}: {table.shape[0]} rows for a grid of shape {shape}")
    values = table[:, k:].T.reshape((table.shape[1] - k,) + shape)
    return Surface(values, tuple(meta["spacing"]), tuple(meta["origin"]), int(meta.get("orientation", 1)))
