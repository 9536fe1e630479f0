"""Ruelle operators, critical temperatures and KMS states for affine iterated function systems."""

__version__ = "0.1.0"

from .critical import CriticalResult, beta_critical, rho_curve
from .discrete import DiscreteMeasure, GridFunction
from .errors import (
    CompatibilityError,
    ConvergenceError,
    GridResolutionError,
    IfsThermoError,
    InconsistencyError,
    InvalidInputError,
    InvalidPotentialError,
    NotInCographError,
    NumericalInstabilityError,
    PotentialNotAboveOneError,
    RegimeError,
    ResourceError,
    UnsupportedBranchStructureError,
)
from .ifs import (
    IFS,
    AffineMap,
    AttractorGrid,
    BranchData,
    EscapeCertificate,
    attractor_grid,
    branch_sets,
    check_escape_condition,
    evaluate_word,
    multiplicity,
    orbit,
    preset,
)
from .kms import (
    Algebra,
    KmsStateMeasure,
    KmsVerdict,
    Regime,
    RegimeTag,
    classify_regime,
    critical_state,
    extreme_points,
    finite_type_state,
    subcritical_diagnostic,
    verify_K1_K2,
)
from .potential import (
    AffinePotential,
    ConstantPotential,
    HolderPotential,
    PotentialFamily,
    SampledPotential,
    check_compatibility,
    check_margin,
    dini_report,
    eval_h,
)
from .ruelle import (
    RpfSolution,
    RuelleEngine,
    apply_F,
    apply_L,
    apply_S,
    dual_apply,
    eigenmeasure,
    integrate_S,
    interpolation_bound,
    rpf,
    spectral_radius,
    word_sum_Ln,
)
from .suite import TestSuite, default_suite
