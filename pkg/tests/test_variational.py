import json

import numpy as np
import pytest

from _util import observed_order, random_field
from kawaguchi.kform import form_from_text
from kawaguchi.models import GOLDEN, complex_scalar, free_particle, nambu_goto, reference_solution
from kawaguchi.surface import SingularCellError, Surface, _apply
from kawaguchi.variational import (SolveOptions, SolverDivergence, action_gradient, el_residual,
                                   el_residual_expanded, solve_el)

GRIDS = (16, 32, 64)
SCALAR = complex_scalar("0").form
MASSIVE = complex_scalar("m2*rho", m2=1.3).form
NG = nambu_goto(3).form


def wave(m, **kw):
    return reference_solution("scalar_wave", (m, m), upper=(1, GOLDEN), **kw)


@pytest.mark.parametrize("name", ["ng_flat", "ng_null"])
def test_nambu_goto_linear_sheets_are_extremal(name):
    S = reference_solution(name, (8, 8))
    assert el_residual(NG, S).max_norm < 1e-12
    assert np.max(np.abs(action_gradient(NG, S))) < 1e-12


def test_residual_field_norms():
    R = el_residual(SCALAR, wave(16))
    assert R.values.shape == (4, 14, 14)
    assert R.max_norm == pytest.approx(float(np.max(R.component_max())))
    norms = R.norms()
    assert set(norms) >= {"max", "l2"} and norms["l2"] > 0


def test_wave_residuals_converge_at_second_order():
    staggered = [el_residual(SCALAR, wave(m)).max_norm for m in GRIDS]
    expanded = [el_residual_expanded(SCALAR, wave(m)).max_norm for m in GRIDS]
    gradient = [float(np.max(np.abs(action_gradient(SCALAR, wave(m))))) / wave(m).cell_volume for m in GRIDS]
    for errs in (staggered, expanded, gradient):
        assert observed_order(errs) >= 1.9


def test_residual_matches_averaged_gradient():
    rng = np.random.default_rng(3)
    f1, _, _ = random_field(rng)
    f2, _, _ = random_field(rng)
    errs = []
    for m in (16, 32, 64):
        S = Surface.conventional(lambda s: [f1(*s), f2(*s)], (m, m))
        R = el_residual(MASSIVE, S).values
        g = action_gradient(MASSIVE, S) / S.cell_volume
        errs.append(float(np.max(np.abs(R - _apply(g, "aa", S.spacing)))))
    assert observed_order(errs) >= 1.9


def test_base_components_follow_from_field_components():
    # sum_mu EL_mu dx^mu/ds^a vanishes identically in the continuum
    rng = np.random.default_rng(4)
    f1, g1, _ = random_field(rng)
    f2, g2, _ = random_field(rng)
    errs = []
    for m in GRIDS:
        S = Surface.conventional(lambda s: [f1(*s), f2(*s)], (m, m))
        R = el_residual(MASSIVE, S).values
        c = [(np.arange(1, m - 1) + 0.5) * h for h in S.spacing]
        T, X = np.meshgrid(*c, indexing="ij")
        d1, d2 = g1(T, X), g2(T, X)
        errs.append(max(float(np.max(np.abs(R[a] + R[2] * d1[a] + R[3] * d2[a]))) for a in (0, 1)))
    assert observed_order(errs) >= 1.9


def test_strong_covariance_under_reparameterisation():
    # the plane wave stays a solution when the parameter grid is warped
    def warped(s):
        u0 = s[0] + 0.05 * np.sin(np.pi * s[0]) * np.cos(s[1])
        u1 = s[1] + 0.05 * np.sin(np.pi * s[1] / GOLDEN) * s[0]
        ph = np.pi * (u1 - u0)
        return [u0, u1, np.cos(ph), np.sin(ph)]

    plain = [el_residual(SCALAR, wave(m)).max_norm for m in GRIDS]
    warp = [el_residual(SCALAR, Surface.from_function(warped, (m, m), (0, 0), (1, GOLDEN))).max_norm
            for m in GRIDS]
    assert observed_order(warp) >= 1.9
    assert all(0.2 < w / p < 5 for w, p in zip(warp, plain))


def test_absent_coordinate_has_zero_residual(rng):
    form = form_from_text("sqrt(d[0,1]^2 + d[0,2]^2 - d[1,2]^2)", 3, 1)
    S = Surface.from_function(lambda s: [s[0], s[1], 0.2 * np.sin(s[0] * s[1]), np.cos(3 * s[0])], (8, 8))
    R = el_residual(form, S)
    assert np.all(R.values[3] == 0)
    assert np.all(action_gradient(form, S)[3] == 0)


def test_expanded_vanishes_on_linear_embeddings(rng):
    A = np.vstack([np.eye(2), np.zeros((2, 2))]) + 0.2 * rng.normal(size=(4, 2))
    S = Surface.from_function(lambda s: [A[i, 0] * s[0] + A[i, 1] * s[1] for i in range(4)], (10, 10))
    for form in (SCALAR, NG):
        assert el_residual_expanded(form, S).max_norm < 1e-9
        assert el_residual(form, S).max_norm < 1e-9


def test_singular_cell_in_residual():
    S = reference_solution("ng_flat", (6, 6))
    vals = S.values.copy()
    vals[:, 2:4, 2:4] = 0.3
    with pytest.raises(SingularCellError):
        el_residual(NG, S.with_values(vals))


def test_thread_count_does_not_change_results():
    S = wave(24)
    a = el_residual(SCALAR, S, threads=1).values
    b = el_residual(SCALAR, S, threads=3).values
    assert np.array_equal(a, b)
    assert np.array_equal(action_gradient(SCALAR, S, threads=1), action_gradient(SCALAR, S, threads=4))


# ---------------------------------------------------------------- solver

def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(tol=0)
    with pytest.raises(ValueError):
        SolveOptions(damping=(1.5,))
    with pytest.raises(ValueError):
        SolveOptions(krylov="cg")
    assert len(SolveOptions().damping) == 10


def test_solver_recovers_plane_wave_from_noise():
    exact = wave(16)
    vals = exact.values.copy()
    vals[2:, 1:-1, 1:-1] += 0.1 * np.random.default_rng(0).uniform(-1, 1, vals[2:, 1:-1, 1:-1].shape)
    out, rep = solve_el(SCALAR, exact.with_values(vals))
    assert rep.converged and rep.residual_history[-1] < 1e-10
    assert np.max(np.abs(out.values - exact.values)) < 0.05
    # boundary data and base coordinates are untouched
    assert np.array_equal(out.values[:2], exact.values[:2])
    assert np.array_equal(out.values[:, 0], exact.values[:, 0])
    data = json.loads(rep.to_json())
    assert data["converged"] and data["grid"]["free_components"] == [2, 3]


def test_solver_flat_sheet_is_fixed_point():
    S = reference_solution("ng_flat", (8, 8))
    out, rep = solve_el(NG, S)
    assert rep.iterations == 0 and rep.converged
    assert np.array_equal(out.values, S.values)


@pytest.mark.parametrize("kind, D", [("relativistic", 1), ("galilean", 2)])
def test_solver_free_particle_straight_line(kind, D):
    form = free_particle(D, kind=kind).form
    exact = reference_solution("particle_line", (20,), D=D)
    vals = exact.values.copy()
    vals[:, 1:-1] += 0.005 * np.random.default_rng(1).normal(size=vals[:, 1:-1].shape)
    out, rep = solve_el(form, exact.with_values(vals))
    assert rep.converged
    p = out.values
    chord = p[:, -1] - p[:, 0]
    for i in range(1, D + 1):
        # every point lies on the chord between the fixed endpoints
        dev = chord[0] * (p[i] - p[i, 0]) - chord[i] * (p[0] - p[0, 0])
        assert np.max(np.abs(dev)) < 1e-8


def test_solver_divergence_on_resonant_grid():
    # on a square box the discrete Dirichlet wave problem is singular
    S = reference_solution("scalar_wave", (16, 16), upper=(1, 1))
    vals = S.values.copy()
    vals[2:, 1:-1, 1:-1] += 0.1 * np.random.default_rng(0).uniform(-1, 1, vals[2:, 1:-1, 1:-1].shape)
    with pytest.raises(SolverDivergence) as info:
        solve_el(SCALAR, S.with_values(vals))
    assert not info.value.report.converged
    assert "damping" in info.value.report.message


def test_solver_minres_option_runs():
    exact = wave(8)
    vals = exact.values.copy()
    vals[2:, 1:-1, 1:-1] += 0.01
    out, rep = solve_el(SCALAR, exact.with_values(vals), SolveOptions(max_iter=3, krylov="minres"))
    assert rep.iterations <= 3
    assert rep.residual_history[-1] < rep.residual_history[0]
