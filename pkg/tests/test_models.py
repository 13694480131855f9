import math

import numpy as np
import pytest

from kawaguchi.expr import EvalPoint
from kawaguchi.kform import sample_points
from kawaguchi.models import (GOLDEN, builtin, complex_scalar, free_particle, list_models, maxwell,
                              nambu_goto, reference_solution, reference_solutions, scalar_1p1)
from kawaguchi.multivector import jacobian_multivector
from kawaguchi.noether import killing_check
from kawaguchi.surface import cell_jacobian, discrete_action


def test_builtin_lookup():
    assert builtin("nambu_goto", N=2).form.N == 2
    with pytest.raises(KeyError, match="unknown model"):
        builtin("yang_mills")
    with pytest.raises(ValueError):
        builtin("maxwell", N=4)


def test_catalog_contents():
    mx = maxwell()
    assert (mx.form.N, mx.form.n) == (7, 3)
    assert len(mx.killing) == 14
    assert [r.name for r in mx.references] == ["T0", "T4", "T5", "L12"]
    cs = complex_scalar("m2*rho", m2=1.0)
    assert [k.name for k in cs.killing] == ["v0", "v1", "w"]
    assert len(cs.references) == 3
    assert len(nambu_goto(3).killing) == 4 + 6
    with pytest.raises(KeyError):
        mx.vector("v9")
    with pytest.raises(KeyError):
        mx.reference("T9")


def test_list_models_are_named_and_homogeneous_forms():
    models = list_models()
    assert set(models) == {"nambu_goto", "complex_scalar", "maxwell", "free_particle", "scalar_1p1"}
    assert models["complex_scalar"].form.params == {"m2": 1.0}


@pytest.mark.parametrize("name", ["nambu_goto", "complex_scalar", "maxwell", "free_particle"])
def test_catalog_killing_vectors_pass(name):
    entry = list_models()[name]
    for k in entry.killing:
        assert killing_check(entry.form, k.field, k.B, samples=30).passed, k.name


def test_complex_scalar_against_complex_arithmetic(rng):
    # graph gauge: K / d01 = |phi_t|^2 - |phi_x|^2 - V(|phi|^2)
    lam = 0.8
    form = complex_scalar("lam*rho^2", lam=lam).form
    for _ in range(20):
        phi = complex(*rng.normal(size=2))
        phi_t = complex(*rng.normal(size=2))
        phi_x = complex(*rng.normal(size=2))
        P = np.array([[1, 0], [0, 1], [phi_t.real, phi_x.real], [phi_t.imag, phi_x.imag]])
        xv = np.array([0.1, 0.2, phi.real, phi.imag])
        val = form.at(EvalPoint(xv, jacobian_multivector(P)))[0]
        rho = (phi * phi.conjugate()).real
        expected = (phi_t * phi_t.conjugate()).real - (phi_x * phi_x.conjugate()).real - lam * rho ** 2
        assert val == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_maxwell_density_is_electric_minus_magnetic(rng):
    # graph gauge over (x0..x3): K / d0123 = (|E|^2 - |B|^2) / 2 with E_i = F_0i
    form = maxwell().form
    for _ in range(10):
        dA = rng.normal(size=(4, 4))  # dA[mu, a] = d A_mu / d x^a
        P = np.vstack([np.eye(4), dA])
        F = dA.T - dA  # F[a, b] = d_a A_b - d_b A_a
        E = F[0, 1:]
        B = np.array([F[2, 3], F[3, 1], F[1, 2]])
        val = form.at(EvalPoint(rng.normal(size=8), jacobian_multivector(P)))[0]
        assert val == pytest.approx(0.5 * (E @ E - B @ B), rel=1e-12, abs=1e-12)


def test_maxwell_lagrangian_is_gauge_invariant(rng):
    form = maxwell().form
    dA = rng.normal(size=(4, 4))
    x0 = rng.normal(size=8)
    a = form.at(EvalPoint(x0, jacobian_multivector(np.vstack([np.eye(4), dA]))))[0]
    # A -> A + d chi changes dA by the symmetric Hessian of chi
    H = rng.normal(size=(4, 4))
    b = form.at(EvalPoint(x0, jacobian_multivector(np.vstack([np.eye(4), dA + H + H.T]))))[0]
    assert a == pytest.approx(b, rel=1e-12)


def test_free_particle_kinds():
    rel = free_particle(2).form
    assert (rel.N, rel.n) == (2, 0)
    gal = free_particle(1, kind="galilean", m=2.0).form
    val, _ = gal.evaluate(np.zeros(2), {(0,): 1.0, (1,): 0.5}, grad=False)
    assert val == pytest.approx(0.25)
    with pytest.raises(ValueError):
        free_particle(1, kind="quantum")


def test_scalar_1p1_killing_vectors_skip_explicit_coordinates():
    e = scalar_1p1("(dphi1_0^2 - dphi1_1^2)/2 - x0*phi1")
    assert [k.name for k in e.killing] == ["v1"]
    assert [k.name for k in scalar_1p1().killing] == ["v0", "v1", "v2"]


def test_complex_scalar_rejects_coordinate_potential():
    with pytest.raises(ValueError):
        complex_scalar("x0*rho")


def test_reference_solution_lookup():
    with pytest.raises(KeyError, match="unknown reference"):
        reference_solution("soliton", (4, 4))
    sols = reference_solutions()
    assert sols["scalar_wave"].upper == (1.0, GOLDEN)
    assert sols["ng_flat"].exact and not sols["maxwell_wave"].exact
    S = reference_solution("maxwell_wave", (2, 3, 2, 2))
    assert S.values.shape == (8, 3, 4, 3, 3)
    assert reference_solution("particle_line", (5,), D=3).values.shape == (4, 6)


def test_ng_null_has_unit_area_density():
    S = reference_solution("ng_null", (6, 6))
    _, p = cell_jacobian(S, (2, 3))
    assert p[(0, 1)] == pytest.approx(1.0)
    assert discrete_action(nambu_goto(3).form, S) == pytest.approx(1.0, abs=1e-14)


def test_reference_solution_parameters():
    a = reference_solution("scalar_wave", (4, 4), k=2 * math.pi)
    b = reference_solution("scalar_wave", (4, 4))
    assert not np.allclose(a.values[2], b.values[2])
    c = reference_solution("scalar_constant", (3, 3), theta=0.0)
    assert np.all(c.values[2] == 1.0) and np.all(c.values[3] == 0.0)


def test_sample_points_for_every_model():
    for entry in list_models().values():
        x, P, d = sample_points(entry.form, 10, rng=0)
        val, _ = entry.form.evaluate(x, d, grad=False)
        assert np.all(np.isfinite(val))
