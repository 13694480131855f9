"""Shared helpers for the test suite."""
import math

import numpy as np

EXACT = 1e-9  # below this on every grid a convergence study counts as exact
ACCEPTANCE_LINES: dict = {}


def observed_order(errors) -> float:
    """log2 ratio of the two finest errors of a halving study."""
    a, b = errors[-2], errors[-1]
    if b == 0:
        return math.inf
    return math.log2(a / b)


def converges(errors, order=1.9, exact=EXACT) -> bool:
    if max(errors) < exact:
        return True
    return observed_order(errors) >= order


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def fmt(errors) -> str:
    return "[" + ", ".join(f"{e:.3e}" for e in errors) + "]"


def random_field(rng, terms=3, amplitude=0.5):
    """A smooth random function of two parameters with analytic derivatives."""
    A = amplitude * rng.normal(size=terms)
    W = rng.uniform(0.5, 2.0, size=(terms, 2))
    P = rng.uniform(0, 2 * math.pi, size=terms)

    def f(t, x):
        return sum(A[j] * np.sin(W[j, 0] * t + W[j, 1] * x + P[j]) for j in range(terms))

    def grad(t, x):
        c = [A[j] * np.cos(W[j, 0] * t + W[j, 1] * x + P[j]) for j in range(terms)]
        return (sum(c[j] * W[j, 0] for j in range(terms)), sum(c[j] * W[j, 1] for j in range(terms)))

    def hess(t, x):
        s = [-A[j] * np.sin(W[j, 0] * t + W[j, 1] * x + P[j]) for j in range(terms)]
        return tuple(sum(s[j] * W[j, a] * W[j, b] for j in range(terms)) for a, b in ((0, 0), (0, 1), (1, 1)))

    return f, grad, hess
