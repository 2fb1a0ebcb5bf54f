use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::ExperimentConfig;
use crate::optics::{Stage, DETECTOR_MODES};

/// Counts of one run of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RunCounts {
    pub heralds: u64,
    /// Single clicks at `D1, D2, D3`.
    pub singles: [u64; 3],
    /// Heralds with no measurement click.
    pub discarded: u64,
    pub double: u64,
}

impl RunCounts {
    pub fn total_singles(&self) -> u64 {
        self.singles.iter().sum()
    }

    fn add(&mut self, other: &RunCounts) {
        self.heralds += other.heralds;
        for (a, b) in self.singles.iter_mut().zip(other.singles) {
            *a += b;
        }
        self.discarded += other.discarded;
        self.double += other.double;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageCounts {
    pub stage: Stage,
    /// Sum over runs.
    pub total: RunCounts,
    pub runs: Vec<RunCounts>,
}

impl StageCounts {
    pub fn from_runs(stage: Stage, runs: Vec<RunCounts>) -> Self {
        let mut total = RunCounts::default();
        for r in &runs {
            total.add(r);
        }
        Self { stage, total, runs }
    }
}

/// Counts of all seven stages, in stage order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountsRecord {
    pub stages: Vec<StageCounts>,
}

impl CountsRecord {
    pub fn stage(&self, stage: Stage) -> Option<&StageCounts> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn runs(&self) -> usize {
        self.stages.first().map_or(0, |s| s.runs.len())
    }

    /// The same record with run `skip` removed from every stage.
    pub fn without_run(&self, skip: usize) -> CountsRecord {
        CountsRecord {
            stages: self
                .stages
                .iter()
                .map(|s| {
                    let runs = s
                        .runs
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != skip)
                        .map(|(_, r)| *r)
                        .collect();
                    StageCounts::from_runs(s.stage, runs)
                })
                .collect(),
        }
    }
}

/// Where a heralded photon ends up before detection: probabilities of
/// `D1, D2, D3` in detector order, and of absorption in the apparatus.
pub fn landing_probabilities(cfg: &ExperimentConfig, stage: Stage) -> ([f64; 3], f64) {
    let prop = cfg.setup().propagate(stage);
    let p = prop.probabilities();
    (DETECTOR_MODES.map(|m| p[m.index()]), 1.0 - prop.survival)
}

/// Expected single-click probabilities per herald at `D1, D2, D3`.
pub fn expected_singles(cfg: &ExperimentConfig, stage: Stage) -> [f64; 3] {
    let (land, _) = landing_probabilities(cfg, stage);
    let keep = (1.0 - cfg.pre_detector_loss) * (1.0 - cfg.accidental_rate);
    std::array::from_fn(|d| land[d] * keep * cfg.detector_efficiency[d])
}

fn run_rng(seed: u64, stage: Stage, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stage.number() as u64) << 32) | run);
    rng
}

fn simulate_run(cfg: &ExperimentConfig, land: &[f64; 3], stage: Stage, run: u64) -> RunCounts {
    let mut rng = run_rng(cfg.rng_seed, stage, run);
    let cumulative = [land[0], land[0] + land[1], land[0] + land[1] + land[2]];
    let mut counts = RunCounts {
        heralds: cfg.photons_per_run,
        ..Default::default()
    };
    for _ in 0..cfg.photons_per_run {
        let u: f64 = rng.random();
        let Some(det) = cumulative.iter().position(|c| u < *c) else {
            counts.discarded += 1;
            continue;
        };
        if rng.random::<f64>() < cfg.pre_detector_loss
            || rng.random::<f64>() >= cfg.detector_efficiency[det]
        {
            counts.discarded += 1;
            continue;
        }
        if cfg.accidental_rate > 0.0 && rng.random::<f64>() < cfg.accidental_rate {
            counts.double += 1;
        } else {
            counts.singles[det] += 1;
        }
    }
    counts
}

/// All runs of one stage. Run `r` draws from its own ChaCha stream keyed by
/// `(rng_seed, stage, r)`, so the result does not depend on scheduling.
pub fn simulate_stage(cfg: &ExperimentConfig, stage: Stage) -> StageCounts {
    let (land, _) = landing_probabilities(cfg, stage);
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| simulate_run(cfg, &land, stage, r))
        .collect();
    StageCounts::from_runs(stage, runs)
}

pub fn simulate_experiment(cfg: &ExperimentConfig) -> CountsRecord {
    let landing: Vec<[f64; 3]> = Stage::ALL
        .iter()
        .map(|s| landing_probabilities(cfg, *s).0)
        .collect();
    let jobs: Vec<(usize, u64)> = (0..Stage::ALL.len())
        .flat_map(|s| (0..cfg.runs).map(move |r| (s, r)))
        .collect();
    let results: Vec<RunCounts> = jobs
        .par_iter()
        .map(|&(s, r)| simulate_run(cfg, &landing[s], Stage::ALL[s], r))
        .collect();
    let stages = results
        .chunks(cfg.runs as usize)
        .zip(Stage::ALL)
        .map(|(runs, stage)| StageCounts::from_runs(stage, runs.to_vec()))
        .collect();
    CountsRecord { stages }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial_ok(k: u64, n: u64, p: f64, sigmas: f64) -> bool {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        (k as f64 - n as f64 * p).abs() <= sigmas * sd.max(1.0)
    }

    #[test]
    fn counts_are_consistent() {
        let cfg = ExperimentConfig {
            photons_per_run: 500,
            runs: 3,
            detector_efficiency: [0.9, 0.5, 0.7],
            pre_detector_loss: 0.1,
            accidental_rate: 0.05,
            ..Default::default()
        };
        let rec = simulate_experiment(&cfg);
        assert_eq!(rec.stages.len(), 7);
        for s in &rec.stages {
            let t = s.total;
            assert_eq!(t.heralds, 1500);
            assert_eq!(t.total_singles() + t.discarded + t.double, t.heralds);
            assert_eq!(s.runs.len(), 3);
        }
    }

    #[test]
    fn stage_and_experiment_agree() {
        let cfg = ExperimentConfig {
            photons_per_run: 200,
            runs: 4,
            rng_seed: 5,
            ..Default::default()
        };
        let rec = simulate_experiment(&cfg);
        for s in Stage::ALL {
            assert_eq!(&simulate_stage(&cfg, s), rec.stage(s).unwrap());
        }
    }

    #[test]
    fn seeds_matter() {
        let a = ExperimentConfig {
            photons_per_run: 300,
            runs: 2,
            ..Default::default()
        };
        let b = ExperimentConfig { rng_seed: 1, ..a.clone() };
        assert_eq!(simulate_experiment(&a), simulate_experiment(&a));
        assert_ne!(simulate_experiment(&a), simulate_experiment(&b));
    }

    #[test]
    fn no_accidentals_means_no_doubles() {
        let cfg = ExperimentConfig {
            photons_per_run: 1000,
            runs: 2,
            detector_efficiency: [0.5, 0.6, 0.7],
            ..Default::default()
        };
        assert!(simulate_experiment(&cfg).stages.iter().all(|s| s.total.double == 0));
    }

    #[test]
    fn large_sample_matches_circuit() {
        let cfg = ExperimentConfig {
            photons_per_run: 1_000_000,
            runs: 1,
            rng_seed: 11,
            ..Default::default()
        };
        let s = simulate_stage(&cfg, Stage::new(1).unwrap());
        let both = crate::optics::DetectorMap::for_stage(s.stage).both_plus_detector();
        let p = 1.0 - 2.0 / 5f64.sqrt();
        assert!(binomial_ok(s.total.singles[both], 1_000_000, p, 3.0));
        assert_eq!(s.total.discarded, 0);
    }

    #[test]
    fn thinning_keeps_fractions() {
        let cfg = ExperimentConfig {
            photons_per_run: 200_000,
            runs: 1,
            detector_efficiency: [0.5; 3],
            rng_seed: 3,
            ..Default::default()
        };
        let s = simulate_stage(&cfg, Stage::new(2).unwrap());
        assert!(binomial_ok(s.total.discarded, 200_000, 0.5, 4.0));
        let (land, _) = landing_probabilities(&cfg, s.stage);
        let n = s.total.total_singles();
        for d in 0..3 {
            assert!(binomial_ok(s.total.singles[d], n, land[d], 4.0));
        }
    }

    #[test]
    fn blocking_stage_discards_absorbed_photons() {
        let cfg = ExperimentConfig {
            photons_per_run: 100_000,
            runs: 1,
            ..Default::default()
        };
        let s = simulate_stage(&cfg, Stage::BLOCK_A1_MODE);
        assert!(binomial_ok(s.total.discarded, 100_000, 1.0 / 5f64.sqrt(), 4.0));
        // A1' = -1 never happens when A1 = +1 is selected.
        assert_eq!(s.total.singles[1], 0);
    }

    #[test]
    fn expected_singles_account_for_all_losses() {
        let cfg = ExperimentConfig {
            detector_efficiency: [0.8, 0.6, 0.7],
            pre_detector_loss: 0.2,
            ..Default::default()
        };
        let e = expected_singles(&cfg, Stage::new(1).unwrap());
        let (land, absorbed) = landing_probabilities(&cfg, Stage::new(1).unwrap());
        assert!(absorbed.abs() < 1e-12);
        assert!((e[0] - land[0] * 0.8 * 0.8).abs() < 1e-15);
    }
}
