//! Executable checks of the learning/unlearning guarantees.

pub mod bounds;
mod coupling;
mod suite;
mod utility;

pub use bounds::{
    achieved_epsilon, bound_learning_divergence, bound_unlearn_coupling, gaussian_sigma, generalization_bound,
    gradnorm_bound, gradnorm_bound_full_tally, mechanism_factor, noise_term, pl_clean_bound, pl_risk_bound,
};
pub use coupling::{check_coupling, run_coupling, run_coupling_sweep, tube_of, CouplingReport, CouplingRun, StepCheck, BOUND_RTOL};
pub use suite::{run_sweep, CaseResult, SweepConfig, VerificationReport, DEFAULT_ETA_FRACTION};
pub use utility::{
    generalization_report, gradnorm_report, monte_carlo, pl_utility_report, tube_constants, GeneralizationConfig,
    GeneralizationReport, GradNormReport, PlUtilityReport, MC_STANDARD_ERRORS, MIN_GRADNORM_DRAWS,
};
