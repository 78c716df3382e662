//! Finite-length analysis, continuous approximation, Monte Carlo simulation
//! and dynamic-feedback control of frameless ALOHA with successive
//! interference cancellation over several slot types.

pub mod approx;
pub mod error;
pub mod exact;
pub mod feedback;
pub mod model;
pub mod numerics;
pub mod sim;

pub use approx::{
    estimate_pmf_and_per, fit_initial_constants, ripple_release_rate, ApproxCurves, PerEstimate,
    RippleRate,
};
pub use error::{Error, Result};
pub use exact::{
    departure_probability, initial_distribution, run_exact, transition, ExactOptions, ExactResult,
    StageMoments, TransitionLaw,
};
pub use feedback::{
    optimize_access_probability, predicted_per, restart_curves, restart_distribution,
    restart_estimate, run_feedback_campaign, run_static_campaign, AuditRecord, BetaChoice,
    BetaGrid, CampaignResult, Estimator, FeedbackPolicy, RestartState,
};
pub use model::{
    build_degree_spectrum, thinned_degree_spectrum, DecoderState, DegreeSpectrum, SlotType,
    StateDistribution, SystemConfig, ThinningMode,
};
pub use sim::{
    estimate_pmf, peel_pattern, simulate_contention, simulate_irsa, simulate_irsa_trials,
    simulate_trial, simulate_unresolved, trial_rng, Activity, ContentionOutcome, EmpiricalPmf,
    IrsaConfig, TraceStep,
};
