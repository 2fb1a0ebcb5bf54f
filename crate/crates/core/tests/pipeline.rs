mod common;

use kcbs::montecarlo::{
    efficiency_correction, run_experiment, simulate_experiment, simulate_stage, ExperimentConfig,
};
use kcbs::optics::Stage;

use common::config_path;

fn config(runs: u64, photons: u64, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        runs,
        photons_per_run: photons,
        rng_seed: seed,
        ..ExperimentConfig::default()
    }
}

#[test]
fn fair_sampling_at_one_million() {
    let cfg = config(1, 1_000_000, 3);
    let setup = cfg.setup();
    for stage in Stage::CORRELATION {
        let counts = simulate_stage(&cfg, stage);
        let p = setup.detector_probabilities(stage);
        let n = counts.total.heralds as f64;
        for d in 0..3 {
            let observed = counts.total.singles[d] as f64 / n;
            let sigma = (p[d] * (1.0 - p[d]) / n).sqrt();
            assert!(
                (observed - p[d]).abs() < 3.0 * sigma.max(1e-12),
                "stage {stage} detector {}: {observed} vs {}",
                d + 1,
                p[d]
            );
        }
    }
}

#[test]
fn lhs_unbiased_over_seeds() {
    let exact = 5.0 - 4.0 * 5f64.sqrt();
    let values: Vec<f64> = (0..100)
        .map(|s| run_experiment(&config(10, 1000, 1000 + s)).unwrap().verdict.lhs.value)
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - exact).abs() < 3.0 * sd / n.sqrt(), "mean {mean} sd {sd}");
}

#[test]
fn terms_near_ideal() {
    let cfg = ExperimentConfig::from_path(&config_path("ideal.toml")).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let ideal = 1.0 - 4.0 / 5f64.sqrt();
    for s in &report.stages {
        let c = s.correlation;
        assert!((c.value - ideal).abs() < 3.5 * c.std_error, "stage {}: {c:?}", s.stage);
    }
}

#[test]
fn thread_count_does_not_change_counts() {
    let cfg = ExperimentConfig::from_path(&config_path("calibrated.toml")).unwrap();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| simulate_experiment(&cfg));
    let four = pool(4).install(|| simulate_experiment(&cfg));
    assert_eq!(one, four);
}

#[test]
fn efficiency_standard_errors_cover_truth() {
    let base = ExperimentConfig::from_path(&config_path("efficiency.toml")).unwrap();
    let eta = base.detector_efficiency;
    let mean = eta.iter().sum::<f64>() / 3.0;
    let mut covered = 0;
    let mut total = 0;
    for seed in 0..100 {
        let cfg = ExperimentConfig { rng_seed: 50_000 + seed, ..base.clone() };
        let record = simulate_experiment(&cfg);
        let eff = efficiency_correction(&record).unwrap();
        for i in 0..3 {
            total += 1;
            if (eff.eta[i] - eta[i] / mean).abs() <= 2.0 * eff.eta_std_error[i] {
                covered += 1;
            }
        }
    }
    let rate = covered as f64 / total as f64;
    assert!(rate >= 0.88, "2-sigma coverage {rate}");
}
