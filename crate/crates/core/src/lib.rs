//! Numerical laboratory for two-weight norm inequalities of
//! Calderón–Zygmund operators over a discrete measure model.

pub mod conditions;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod kernels;
pub mod measures;
pub mod operators;
pub mod quadrature;

pub use error::{Error, Result};
pub use geometry::{
    annulus_cover, choose_separation, cube_chain, dyadic_decompose, separated_pair, shrinking_cone_family, Aabb,
    Annulus, AnnulusCover, Ball, BoxClass, Cone, Cube, Direction, DyadicCube, Grid, GridSet, Point, Region,
    SeparationConfig, ShrinkingFamily,
};
pub use measures::{
    directional_doubling_constant, doubling_constant, essinf_limit, essinf_on, lebesgue_decompose, region_measure,
    shrinking_density, Atom, CubeFamily, Density, DoublingReport, Measure, MeasureValue, RegionOptions,
};
pub use kernels::{
    hilbert, perturbation_check, riesz, sign_constancy, truncate, verify_standard_estimates, EstimateReport, Kernel,
    KernelKind, PerturbationReport, Profile, SampleSpec, SignReport, Truncation,
};
pub use operators::{
    abs_integral, avg_apply, avg_norm_exact, avg_sigma_apply, avg_sigma_exact, conjugate, cone_tail_integral, cz_apply,
    integrate_against, lebesgue_tail_total, pointwise_constant, pointwise_lower_bound, singular_cone_integral,
    tail_test_function, tail_weight, weak_norm_lower, AvgNorm, CzOptions, CzValue, NormEstimate, PointwiseReport,
    SingularConeReport, TailRegion, TestFunction, WeakOperator, WeakProblem,
};
pub use conditions::{
    ap_measures, ap_measures_balls, ap_weights, averaging_necessity, necessity_pipeline, pap, pap_pipeline,
    pap_restriction_constant, strong11_density_case, strong11_singular_source, strong11_singular_target,
    AveragingNecessity, ConditionReport, DensityCaseReport, NecessityConfig, NecessityReport, Pairing, PapConfig,
    PapReport, SingularSourceReport, SingularTargetReport, Step, Witness,
};
pub use exact::{ExactConstant, ExactExponent};
