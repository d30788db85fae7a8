"""Simulation and statistical verification for one-dimensional path-dependent
SDEs with distributional drift, via the harmonic transform Y = h(X)."""
from .coeffs import (CoefficientSet, ExplicitPotential, PiecewiseLinearDrift, SigmaTable,
                     SmoothDrift, brownian_environment, build_sigma_table, check_non_explosion,
                     uniform_grid)
from .errors import *  # noqa: F401,F403
from .htransform import (DomainFunction, HarmonicMap, apply_L, build_h, compact_bump,
                         harmonic, square_in_domain, transfer_operator)
from .pathfunc import (PathFunctional, StoppedPath, ValidationReport, eval_gamma,
                       eval_gamma_bar, eval_gamma_tilde, validate_growth, validate_lipschitz,
                       validate_sigma0_modulus)
from .sim import (PartitionPlan, PathEnsemble, SimConfig, plan_partition, preflight_novikov,
                  simulate_transformed, simulate_weighted)

__version__ = "0.1.0"
