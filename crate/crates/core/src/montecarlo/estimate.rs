use serde::Serialize;

use super::{CountsRecord, ExperimentConfig, StageCounts};
use crate::optics::{
    blocking_probabilities, correlation_from_detectors, BlockChoice, DetectorMap, Setup, Stage,
};
use crate::pentagram::Measurement;
use crate::{Error, Result};

/// Convergence threshold on the log-efficiency step.
pub const EFFICIENCY_STEP_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100_000;

/// A mean with its standard error (standard deviation of the mean over
/// runs). The error is NaN when there is only one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

pub type CorrelationEstimate = Estimate;

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_error = if xs.len() < 2 {
            f64::NAN
        } else {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Self {
            value: mean,
            std_error,
        }
    }
}

/// Relative detector efficiencies and the corrected stage probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyCorrection {
    /// `eta_hat` for `D1, D2, D3`, arithmetic mean 1.
    pub eta: [f64; 3],
    /// Delete-one-run jackknife errors.
    pub eta_std_error: [f64; 3],
    /// Pooled corrected `P(D_i | s)` per stage, in stage order.
    pub corrected: Vec<[f64; 3]>,
}

/// `P(D_i | s) = (N_i / eta_i) / sum_j (N_j / eta_j)`.
pub fn corrected_probabilities(singles: &[u64; 3], eta: &[f64; 3]) -> Result<[f64; 3]> {
    let scaled: [f64; 3] = std::array::from_fn(|i| singles[i] as f64 / eta[i]);
    let total: f64 = scaled.iter().sum();
    if total <= 0.0 {
        return Err(Error::UndefinedConditional(
            "no single clicks to normalize".into(),
        ));
    }
    Ok(scaled.map(|x| x / total))
}

fn relative_variance(t: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n / (mean * mean)
}

/// Fits `eta_hat` so that the corrected click rate per herald is the same in
/// every correlation stage. Blocking stages are left out: their totals are
/// reduced by the absorber.
fn fit_efficiencies(record: &CountsRecord) -> Result<[f64; 3]> {
    let stages: Vec<&StageCounts> = Stage::CORRELATION
        .iter()
        .filter_map(|s| record.stage(*s))
        .filter(|s| s.total.heralds > 0)
        .collect();
    for d in 0..3 {
        let seen = stages.iter().filter(|s| s.total.singles[d] > 0).count();
        if seen < 2 {
            return Err(Error::Unidentifiable(format!(
                "detector D{} has counts in {seen} stage(s), need 2",
                d + 1
            )));
        }
    }
    let rates: Vec<[f64; 3]> = stages
        .iter()
        .map(|s| s.total.singles.map(|n| n as f64 / s.total.heralds as f64))
        .collect();
    let n = rates.len() as f64;
    let totals = |x: &[f64; 3]| -> Vec<f64> {
        rates
            .iter()
            .map(|r| r[0] * x[0] + r[1] * x[1] + r[2] * x[2])
            .collect()
    };

    // Work with x = 1 / eta_hat and u = ln eta_hat; x3 stays at 1 and the
    // overall scale is fixed afterwards.
    let mut x = [1.0; 3];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut step = 0.0f64;
        for i in 0..2 {
            let a: Vec<f64> = rates.iter().map(|r| r[i]).collect();
            let b: Vec<f64> = rates
                .iter()
                .map(|r| (0..3).filter(|j| *j != i).map(|j| r[j] * x[j]).sum())
                .collect();
            let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
            let cov = |p: &[f64], mp: f64, q: &[f64], mq: f64| {
                p.iter().zip(q).map(|(u, v)| (u - mp) * (v - mq)).sum::<f64>() / n
            };
            let (va, cab, vb) = (cov(&a, ma, &a, ma), cov(&a, ma, &b, mb), cov(&b, mb, &b, mb));
            // Relative variance along this coordinate is a ratio of a
            // quadratic and a squared linear function of x_i, whose
            // derivative vanishes at a single point.
            let den = va * mb - ma * cab;
            let t = (ma * vb - mb * cab) / den;
            if !(t.is_finite() && t > 0.0) {
                continue;
            }
            let mut trial = x;
            trial[i] = t;
            if relative_variance(&totals(&trial)) <= relative_variance(&totals(&x)) {
                step = step.max((t / x[i]).ln().abs());
                x = trial;
            }
        }
        if step < EFFICIENCY_STEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Unidentifiable(
            "efficiency fit did not converge".into(),
        ));
    }
    let eta = x.map(|v| 1.0 / v);
    let mean = eta.iter().sum::<f64>() / 3.0;
    Ok(eta.map(|e| e / mean))
}

pub fn efficiency_correction(record: &CountsRecord) -> Result<EfficiencyCorrection> {
    let eta = fit_efficiencies(record)?;
    let runs = record.runs();
    let eta_std_error = if runs < 2 {
        [f64::NAN; 3]
    } else {
        let jack: Vec<[f64; 3]> = (0..runs)
            .map(|r| fit_efficiencies(&record.without_run(r)))
            .collect::<Result<_>>()?;
        let k = runs as f64;
        std::array::from_fn(|i| {
            let mean = jack.iter().map(|e| e[i]).sum::<f64>() / k;
            let ss: f64 = jack.iter().map(|e| (e[i] - mean).powi(2)).sum();
            ((k - 1.0) / k * ss).sqrt()
        })
    };
    let corrected = record
        .stages
        .iter()
        .map(|s| corrected_probabilities(&s.total.singles, &eta))
        .collect::<Result<_>>()?;
    Ok(EfficiencyCorrection {
        eta,
        eta_std_error,
        corrected,
    })
}

/// One row of the correlation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageEstimate {
    pub stage: Stage,
    /// Outcome condition of each detector, e.g. `P(A1=1,A2=-1)`.
    pub conditions: [String; 3],
    pub probabilities: [Estimate; 3],
    pub correlation: CorrelationEstimate,
}

fn per_run_probabilities(counts: &StageCounts, eta: &[f64; 3]) -> Result<Vec<[f64; 3]>> {
    counts
        .runs
        .iter()
        .map(|r| corrected_probabilities(&r.singles, eta))
        .collect::<Result<_>>()
        .map_err(|_| {
            Error::UndefinedConditional(format!("a run of stage {} has no single clicks", counts.stage))
        })
}

fn stage_counts(record: &CountsRecord, stage: Stage) -> Result<&StageCounts> {
    record
        .stage(stage)
        .ok_or_else(|| Error::InvalidArgument(format!("record lacks stage {stage}")))
}

pub fn estimate_stages(record: &CountsRecord, eta: &[f64; 3]) -> Result<Vec<StageEstimate>> {
    Stage::CORRELATION
        .iter()
        .map(|&stage| {
            let map = DetectorMap::for_stage(stage);
            let per_run = per_run_probabilities(stage_counts(record, stage)?, eta)?;
            let probabilities = std::array::from_fn(|d| {
                Estimate::from_samples(&per_run.iter().map(|p| p[d]).collect::<Vec<_>>())
            });
            let terms: Vec<f64> = per_run
                .iter()
                .map(|p| correlation_from_detectors(&map, p))
                .collect();
            Ok(StageEstimate {
                stage,
                conditions: map.conditions(),
                probabilities,
                correlation: Estimate::from_samples(&terms),
            })
        })
        .collect()
}

/// The five correlation terms, `<A1 A2>` through `<A5 A1'>`.
pub fn estimate_correlations(record: &CountsRecord, eta: &[f64; 3]) -> Result<[CorrelationEstimate; 5]> {
    let rows = estimate_stages(record, eta)?;
    Ok(std::array::from_fn(|k| rows[k].correlation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub std_error: f64,
    /// `P(A1' = -1 | A1 = +1)`.
    pub minus_given_plus: Estimate,
    /// `P(A1' = +1 | A1 = -1)`.
    pub plus_given_minus: Estimate,
    /// `P(A1 = +1)`.
    pub a1_plus: Estimate,
}

/// `eps = 2 (P(A1'=-1|A1=1) P(A1=1) + P(A1'=1|A1=-1) P(A1=-1))`, with
/// first-order error propagation treating the three inputs as independent.
pub fn epsilon_from_conditionals(
    minus_given_plus: Estimate,
    plus_given_minus: Estimate,
    a1_plus: Estimate,
) -> EpsilonEstimate {
    let (c6, c7, p) = (minus_given_plus.value, plus_given_minus.value, a1_plus.value);
    let epsilon = 2.0 * (c6 * p + c7 * (1.0 - p));
    let grads = [2.0 * p, 2.0 * (1.0 - p), 2.0 * (c6 - c7)];
    let errs = [
        minus_given_plus.std_error,
        plus_given_minus.std_error,
        a1_plus.std_error,
    ];
    let std_error = grads
        .iter()
        .zip(errs)
        .map(|(g, e)| (g * e).powi(2))
        .sum::<f64>()
        .sqrt();
    EpsilonEstimate {
        epsilon,
        std_error,
        minus_given_plus,
        plus_given_minus,
        a1_plus,
    }
}

/// Fraction of corrected singles reporting `A1' = -1`, per run with counts.
fn blocking_fractions(record: &CountsRecord, stage: Stage, eta: &[f64; 3]) -> Result<Vec<f64>> {
    let counts = stage_counts(record, stage)?;
    let det = DetectorMap::for_stage(stage)
        .detector_of(Measurement::A1Prime)
        .expect("A1' is read out in the blocking stages");
    let fractions: Vec<f64> = counts
        .runs
        .iter()
        .filter_map(|r| corrected_probabilities(&r.singles, eta).ok())
        .map(|p| p[det])
        .collect();
    if fractions.is_empty() {
        return Err(Error::UndefinedConditional(format!(
            "no photon survived blocking stage {stage}"
        )));
    }
    Ok(fractions)
}

/// Conditionals from the blocking stages and `P(A1 = +1)` from stage 1.
pub fn estimate_epsilon(record: &CountsRecord, eta: &[f64; 3]) -> Result<EpsilonEstimate> {
    let c6 = blocking_fractions(record, Stage::BLOCK_A1_MODE, eta)?;
    let c7: Vec<f64> = blocking_fractions(record, Stage::BLOCK_OTHER_TWO, eta)?
        .into_iter()
        .map(|f| 1.0 - f)
        .collect();
    let first = Stage::CORRELATION[0];
    let det = DetectorMap::for_stage(first)
        .detector_of(Measurement::A1)
        .expect("A1 is read out in stage 1");
    let p: Vec<f64> = per_run_probabilities(stage_counts(record, first)?, eta)?
        .iter()
        .map(|p| 1.0 - p[det])
        .collect();
    Ok(epsilon_from_conditionals(
        Estimate::from_samples(&c6),
        Estimate::from_samples(&c7),
        Estimate::from_samples(&p),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verdict {
    /// Sum of the five correlation terms.
    pub lhs: Estimate,
    /// `-3 - eps`.
    pub bound: Estimate,
    pub violated: bool,
    /// `(bound - lhs) / sigma`, with both errors combined in quadrature.
    pub significance: f64,
}

pub fn evaluate_inequality(terms: &[CorrelationEstimate; 5], eps: &EpsilonEstimate) -> Verdict {
    let lhs = Estimate {
        value: terms.iter().map(|t| t.value).sum(),
        std_error: terms.iter().map(|t| t.std_error.powi(2)).sum::<f64>().sqrt(),
    };
    let bound = Estimate {
        value: -3.0 - eps.epsilon,
        std_error: eps.std_error,
    };
    let sigma = lhs.std_error.hypot(bound.std_error);
    Verdict {
        lhs,
        bound,
        violated: lhs.value < bound.value,
        significance: (bound.value - lhs.value) / sigma,
    }
}

/// Everything derived from one simulated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub counts: CountsRecord,
    pub efficiency: EfficiencyCorrection,
    pub stages: Vec<StageEstimate>,
    pub epsilon: EpsilonEstimate,
    pub verdict: Verdict,
}

pub fn analyze(record: CountsRecord) -> Result<ExperimentReport> {
    let efficiency = efficiency_correction(&record)?;
    let stages = estimate_stages(&record, &efficiency.eta)?;
    let terms = std::array::from_fn(|k| stages[k].correlation);
    let epsilon = estimate_epsilon(&record, &efficiency.eta)?;
    let verdict = evaluate_inequality(&terms, &epsilon);
    Ok(ExperimentReport {
        counts: record,
        efficiency,
        stages,
        epsilon,
        verdict,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    analyze(super::simulate_experiment(cfg))
}

/// Correlation terms the circuit produces with perfect statistics.
pub fn ideal_terms(setup: &Setup) -> [f64; 5] {
    Stage::CORRELATION.map(|s| {
        correlation_from_detectors(&DetectorMap::for_stage(s), &setup.detector_probabilities(s))
    })
}

/// `eps` the circuit produces with perfect statistics.
pub fn ideal_epsilon(setup: &Setup) -> Result<f64> {
    let c6 = blocking_probabilities(setup, BlockChoice::A1Mode)?.a1_prime_minus;
    let c7 = blocking_probabilities(setup, BlockChoice::OtherTwo)?.a1_prime_plus;
    let first = Stage::CORRELATION[0];
    let map = DetectorMap::for_stage(first);
    let det = map.detector_of(Measurement::A1).expect("A1 in stage 1");
    let p_plus = 1.0 - setup.detector_probabilities(first)[det];
    Ok(epsilon_from_conditionals(Estimate::exact(c6), Estimate::exact(c7), Estimate::exact(p_plus)).epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::{simulate_experiment, RunCounts};
    use crate::pentagram::quantum_optimum;

    fn synthetic(singles: [[u64; 3]; 7], runs: usize) -> CountsRecord {
        CountsRecord {
            stages: Stage::ALL
                .iter()
                .zip(singles)
                .map(|(s, n)| {
                    let run = RunCounts {
                        heralds: 1000,
                        singles: n,
                        discarded: 1000u64.saturating_sub(n.iter().sum::<u64>()),
                        double: 0,
                    };
                    StageCounts::from_runs(*s, vec![run; runs])
                })
                .collect(),
        }
    }

    #[test]
    fn estimate_from_samples() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.value, 2.5);
        // sd = sqrt(5/3), sem = sd / 2
        assert!((e.std_error - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert!(Estimate::from_samples(&[1.0]).std_error.is_nan());
    }

    #[test]
    fn corrected_probabilities_normalize() {
        let p = corrected_probabilities(&[10, 20, 30], &[0.5, 1.0, 1.5]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - p[1]).abs() < 1e-15 && (p[1] - p[2]).abs() < 1e-15);
        assert!(corrected_probabilities(&[0, 0, 0], &[1.0; 3]).is_err());
    }

    #[test]
    fn exact_rates_give_exact_efficiencies() {
        // Noise-free counts with eta = (0.8, 0.6, 0.7) over the five stage
        // probability patterns.
        let eta = [0.8, 0.6, 0.7];
        let setup = Setup::exact();
        let rows: [[u64; 3]; 7] = Stage::ALL.map(|s| {
            let p = setup.detector_probabilities(s);
            std::array::from_fn(|d| (1e9 * p[d] * eta[d]).round() as u64)
        });
        let mut rec = synthetic(rows, 1);
        for s in &mut rec.stages {
            s.total.heralds = 1_000_000_000;
            s.runs[0].heralds = 1_000_000_000;
        }
        let fit = fit_efficiencies(&rec).unwrap();
        for (got, want) in fit.iter().zip([0.8 / 0.7, 0.6 / 0.7, 1.0]) {
            assert!((got - want).abs() < 1e-6, "{fit:?}");
        }
    }

    #[test]
    fn silent_detector_is_unidentifiable() {
        let rec = synthetic([[10, 0, 30]; 7], 2);
        assert!(matches!(efficiency_correction(&rec), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn one_sided_stage_gives_unit_correlation() {
        // Only the both-plus detector of stage 1 fires there.
        let mut rows = [[300, 300, 300]; 7];
        rows[0] = [0, 0, 500];
        let rec = synthetic(rows, 3);
        let terms = estimate_correlations(&rec, &[1.0; 3]).unwrap();
        assert_eq!(terms[0].value, 1.0);
        rows[0] = [500, 0, 0];
        let terms = estimate_correlations(&synthetic(rows, 3), &[1.0; 3]).unwrap();
        assert_eq!(terms[0].value, -1.0);
    }

    #[test]
    fn epsilon_from_measured_conditionals() {
        let e = epsilon_from_conditionals(
            Estimate { value: 0.017, std_error: 0.001 },
            Estimate { value: 0.072, std_error: 0.002 },
            Estimate { value: 0.568, std_error: 0.003 },
        );
        assert!((e.epsilon - 0.081).abs() < 1e-3);
        assert!((e.std_error - 0.002).abs() < 5e-4);
        let e = epsilon_from_conditionals(Estimate::exact(1.0), Estimate::exact(1.0), Estimate::exact(0.3));
        assert!((e.epsilon - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_blocking_stage_is_an_error() {
        let mut rows = [[300, 300, 300]; 7];
        rows[5] = [0, 0, 0];
        let rec = synthetic(rows, 2);
        assert!(matches!(
            estimate_epsilon(&rec, &[1.0; 3]),
            Err(Error::UndefinedConditional(_))
        ));
    }

    #[test]
    fn inequality_verdicts() {
        let measured = [(-0.805, 0.002), (-0.804, 0.003), (-0.709, 0.003), (-0.810, 0.002), (-0.766, 0.003)]
            .map(|(value, std_error)| Estimate { value, std_error });
        let eps = epsilon_from_conditionals(
            Estimate { value: 0.017, std_error: 0.001 },
            Estimate { value: 0.072, std_error: 0.002 },
            Estimate { value: 0.568, std_error: 0.003 },
        );
        let v = evaluate_inequality(&measured, &eps);
        assert!((v.lhs.value + 3.894).abs() < 1e-12);
        assert!((v.lhs.std_error - 0.006).abs() < 5e-4);
        assert!((v.bound.value + 3.081).abs() < 1e-3);
        assert!(v.violated && v.significance > 120.0);

        let flat = [Estimate { value: -0.6, std_error: 0.01 }; 5];
        let v = evaluate_inequality(&flat, &epsilon_from_conditionals(Estimate::exact(0.0), Estimate::exact(0.0), Estimate::exact(0.5)));
        assert!((v.lhs.value + 3.0).abs() < 1e-12);
        assert!(!v.violated);
    }

    #[test]
    fn ideal_limit_values() {
        let terms = ideal_terms(&Setup::exact());
        assert!((terms.iter().sum::<f64>() - quantum_optimum()).abs() < 1e-12);
        assert!(ideal_epsilon(&Setup::exact()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn epsilon_grows_with_fourth_plate_error() {
        for sign in [1.0, -1.0] {
            let mut last = 0.0;
            for k in 0..=60 {
                let off = sign * 0.05 * k as f64;
                let setup = Setup::exact().with_offsets([0.0, 0.0, 0.0, 0.0, 0.0, off]);
                let eps = ideal_epsilon(&setup).unwrap();
                assert!(eps >= last - 1e-15, "offset {off}: {eps} < {last}");
                last = eps;
            }
            assert!(last > 0.01);
        }
    }

    #[test]
    fn noise_free_pipeline() {
        let cfg = ExperimentConfig {
            rng_seed: 17,
            ..Default::default()
        };
        let report = analyze(simulate_experiment(&cfg)).unwrap();
        let v = report.verdict;
        assert!(v.violated);
        assert!((v.lhs.value - quantum_optimum()).abs() < 3.0 * v.lhs.std_error);
        assert_eq!(report.epsilon.epsilon, 0.0);
        for p in &report.efficiency.corrected {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
