"""Numerical twistor methods: from surfaces in CP^3 to conformal foliations of R^3
and harmonic morphisms on R^4, with finite-difference certification."""

from .geom_core import (NullCoords, chordal, direction_to_mu, frame_from_direction,
                        hermitian_from_direction, jperp_rotate, mu_to_direction,
                        null_coords, null_direction_from_U, stereo, stereo_inv)
from .twistor import (SLICE_INFINITY, SliceSpec, TwistorPoint, contact_form,
                      fundamental_map, incidence_residual, n5_value, translate_twistor,
                      twistor_project)
from .surface import (BUILTIN_NAMES, DirectionField, GridSpec, KerrPoly, TwistorSurface,
                      builtin_surface, field_over_grid, kerr_polynomial, load_surface,
                      parse_surface_json, solve_mu)
from .foliation import (Leaf, ResidualSample, associated_field, direction_field_r3,
                        hwc3_residual, shear_residual, trace_leaf)
from .morphism import (BuiltinEvaluator, ResidualSuite, eval_phi_a, mu_residuals,
                       pde_residual, phi_field, solve_superminimal)

__version__ = "0.1.0"
