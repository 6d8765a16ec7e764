"""Finite-volume reaction-diffusion simulator with a priori estimate audits."""

from .audit import (
    EstimateAudit,
    UVRegistration,
    audit_all,
    conservation_audit,
    grid_convergence_study,
    key_estimate_audit,
    mass_audit,
    no_sign_audit,
    pierre_l2_audit,
    porous_audit,
    reaction_l1_budget,
    truncation_convergence_study,
)
from .elliptic import (
    DomainConstants,
    LaplacianOperator,
    domain_constants,
    hminus1_norm,
    solve_poisson_dirichlet,
    solve_poisson_neumann,
)
from .errors import BlowUpError, ConfigError, NumericalError, RDAuditError
from .grid import BC, Field, Grid, State, integrate_field, lp_norm, make_grid, mean
from .integrate import StepControls, Trajectory, reaction_ode_oracle, run, step_porous, step_semilinear
from .systems import (
    CustomPolynomial,
    LotkaVolterra,
    SAlphaBetaGamma,
    SAlphaBetaGammaDelta,
    SystemSpec,
    evaluate_reaction,
    truncate,
    verify_assumptions,
)

__version__ = "0.1.0"
