"""Covariant Lagrangian field theory on Kawaguchi manifolds.

A field theory is a Kawaguchi form K(x, dx): a function of points and of
(n+1)-vector components, positively homogeneous of degree one in dx.  Its
integral over an (n+1)-dimensional submanifold does not depend on the
parameterisation, so fields and spacetime coordinates are treated alike.
"""
from .expr import EvalPoint, Expression, eval_with_gradient, parse, to_text
from .kform import (KawaguchiForm, euler_identity_residual, hilbert_theta, homogeneity_report,
                    lift_from_lagrangian, momenta)
from .models import builtin, list_models, reference_solution
from .multivector import PluckerVector, jacobian_multivector, plucker_residual, sort_index
from .noether import (BTerm, GeneralizedVectorField, NoetherCurrent, VectorField,
                      conservation_divergence, killing_check, lie_derivative,
                      maxwell_gauge_generator, noether_current)
from .surface import GridNForm, Surface, cell_jacobian, discrete_action, discrete_d, pullback_nform
from .variational import (ELResidualField, SolveOptions, action_gradient, el_residual,
                          el_residual_expanded, solve_el)

__version__ = "0.1.0"
