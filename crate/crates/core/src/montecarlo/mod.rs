//! Monte Carlo replica of the counting experiment and its analysis.
//!
//! Every heralded photon is propagated through the (possibly misaligned)
//! stage circuit, lands in a mode, and is then thinned by pre-detector loss
//! and the efficiency of the detector watching that mode. Heralds without a
//! click are discarded, as under fair sampling. The analysis recovers
//! relative efficiencies from the requirement that the corrected click rate
//! is the same for every setting, then estimates correlations, `eps` and the
//! inequality verdict from run-to-run scatter.

mod config;
mod estimate;
mod sim;

pub use config::ExperimentConfig;
pub use estimate::{
    analyze, corrected_probabilities, efficiency_correction, epsilon_from_conditionals,
    estimate_correlations, estimate_epsilon, estimate_stages, evaluate_inequality, ideal_epsilon,
    ideal_terms, run_experiment, CorrelationEstimate, EfficiencyCorrection, EpsilonEstimate,
    Estimate, ExperimentReport, StageEstimate, Verdict, EFFICIENCY_STEP_TOL,
};
pub use sim::{
    expected_singles, landing_probabilities, simulate_experiment, simulate_stage, CountsRecord,
    RunCounts, StageCounts,
};
