"""Sorted multi-indices and Plücker coordinates of (n+1)-vectors.

Only strictly increasing index tuples are stored.  Every formula that would
otherwise carry a 1/n! or 1/(n+1)! symmetrisation factor is written as a sum
over sorted tuples instead.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MultiIndex = tuple[int, ...]


def sort_index(raw: Iterable[int], N: int | None = None) -> tuple[MultiIndex | None, int]:
    """Canonicalise an antisymmetric index tuple.

    Returns the sorted tuple and the parity of the permutation that sorts
    ``raw``.  A repeated index gives ``(None, 0)``.

    >>> sort_index((2, 0, 1))
    ((0, 1, 2), 1)
    >>> sort_index((1, 0))
    ((0, 1), -1)
    """
    raw = tuple(int(i) for i in raw)
    for i in raw:
        if i < 0 or (N is not None and i > N):
            raise IndexError(f"index {i} out of range [0, {N}]")
    if len(set(raw)) != len(raw):
        return None, 0
    inversions = sum(1 for a, b in itertools.combinations(raw, 2) if a > b)
    return tuple(sorted(raw)), -1 if inversions % 2 else 1


def check_index(idx: Sequence[int], N: int, degree: int) -> MultiIndex:
    """Validate a sorted multi-index and return it as a tuple of ints."""
    idx = tuple(int(i) for i in idx)
    if len(idx) != degree:
        raise ValueError(f"multi-index {idx} has length {len(idx)}, expected {degree}")
    if any(i < 0 or i > N for i in idx):
        raise ValueError(f"multi-index {idx} out of range [0, {N}]")
    if any(a >= b for a, b in zip(idx, idx[1:])):
        raise ValueError(f"multi-index {idx} must be strictly increasing")
    return idx


def all_indices(N: int, degree: int) -> list[MultiIndex]:
    """All sorted multi-indices of the given length over coordinates 0..N."""
    return list(itertools.combinations(range(N + 1), degree))


@dataclass(frozen=True)
class PluckerVector:
    """Components of an antisymmetric (n+1)-vector on an (N+1)-coordinate chart.

    Component values may be floats or equally shaped numpy arrays (a batch of
    vectors).  Missing components read as zero; unsorted keys are accepted on
    lookup and return the appropriately signed value.
    """

    N: int
    degree: int
    components: Mapping[MultiIndex, object] = field(default_factory=dict)

    def __post_init__(self):
        comps = {check_index(k, self.N, self.degree): v for k, v in self.components.items()}
        object.__setattr__(self, "components", comps)

    def __getitem__(self, raw) -> object:
        idx, sign = sort_index(raw, self.N)
        if sign == 0:
            return 0.0
        return sign * self.components.get(idx, 0.0)

    def __neg__(self) -> "PluckerVector":
        return self.scaled(-1.0)

    def scaled(self, lam) -> "PluckerVector":
        return PluckerVector(self.N, self.degree, {k: lam * v for k, v in self.components.items()})

    def dot(self, other: "PluckerVector"):
        """Sorted-index contraction sum_I self_I other_I."""
        return sum(v * other.components.get(k, 0.0) for k, v in self.components.items())

    def indices(self) -> list[MultiIndex]:
        return sorted(self.components)

    def max_abs(self) -> float:
        if not self.components:
            return 0.0
        return float(max(np.max(np.abs(v)) for v in self.components.values()))


def det(A: np.ndarray) -> np.ndarray:
    """Determinant of ``A`` with shape (k, k, *batch).

    Closed forms up to k = 3, LU with partial pivoting (numpy) beyond.
    """
    k = A.shape[0]
    if k == 0:
        return np.ones(A.shape[2:])
    if k == 1:
        return A[0, 0].copy()
    if k == 2:
        return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    if k == 3:
        return (A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
                - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
                + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]))
    return np.linalg.det(np.moveaxis(A, (0, 1), (-2, -1)))


def cofactors(A: np.ndarray) -> np.ndarray:
    """Cofactor matrix C with C[r, c] = d det(A) / d A[r, c]; same shape as A."""
    k = A.shape[0]
    C = np.empty_like(A, dtype=float)
    if k == 1:
        C[0, 0] = 1.0
        return C
    if k == 2:
        C[0, 0], C[0, 1] = A[1, 1], -A[1, 0]
        C[1, 0], C[1, 1] = -A[0, 1], A[0, 0]
        return C
    rows = list(range(k))
    for r in range(k):
        for c in range(k):
            sub = A[[i for i in rows if i != r]][:, [j for j in rows if j != c]]
            C[r, c] = (-1) ** (r + c) * det(sub)
    return C


def plucker_coordinates(partials: np.ndarray, indices: Iterable[Sequence[int]]) -> dict:
    """Selected Plücker components of the columns of ``partials``.

    ``partials`` has shape (N+1, n+1, *batch); raw (unsorted) index tuples are
    allowed and yield the signed minor, repeated indices yield zero.
    """
    out = {}
    for raw in indices:
        raw = tuple(raw)
        idx, sign = sort_index(raw, partials.shape[0] - 1)
        if sign == 0:
            out[raw] = np.zeros(partials.shape[2:])
        else:
            out[raw] = sign * det(partials[list(idx)])
    return out


def jacobian_multivector(partials) -> PluckerVector:
    """Plücker vector of the parameterisation Jacobian ``partials[mu, a] = dx^mu/ds^a``.

    Component I is the determinant of the rows I of ``partials``.
    """
    P = np.asarray(partials, dtype=float)
    if P.ndim < 2:
        raise ValueError("partials must be at least two-dimensional (N+1, n+1)")
    rows, cols = P.shape[:2]
    if cols > rows:
        raise ValueError(f"dimension mismatch: {cols} parameters but only {rows} coordinates")
    comps = plucker_coordinates(P, all_indices(rows - 1, cols))
    if P.ndim == 2:
        comps = {k: float(v) for k, v in comps.items()}
    return PluckerVector(rows - 1, cols, comps)


def plucker_residual(p: PluckerVector) -> float:
    """Largest violation of the quadratic Plücker relations.

    For every sorted (n+2)-tuple A and sorted n-tuple B this evaluates
    sum_k (-1)^k p[A without a_k] p[a_k, B], the expanded form of
    dx^{[mu mu'} dx^{nu] nu'}; decomposable vectors give zero.
    """
    k = p.degree
    worst = 0.0
    for A in itertools.combinations(range(p.N + 1), k + 1):
        for B in itertools.combinations(range(p.N + 1), k - 1):
            total = 0.0
            for pos, a in enumerate(A):
                if a in B:
                    continue
                left = A[:pos] + A[pos + 1:]
                total = total + (-1) ** pos * p[left] * p[(a,) + B]
            worst = max(worst, float(np.max(np.abs(total))))
    return worst
