//! Batch front end.
//!
//! Each subcommand computes all of its artifacts in memory before anything
//! is written, so a failing run leaves no partial output. Every artifact
//! carries the run manifest: a `manifest` object in JSON files and a leading
//! `# manifest: {...}` comment line in CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::montecarlo::{run_experiment, Estimate, ExperimentConfig, ExperimentReport};
use crate::oracle::{self, FeasibilityResult, DEFAULT_TOL};
use crate::optics::Stage;
use crate::pentagram::{
    max_quantum_violation, optimal_state, quantum_optimum, regular_pentagram, Pentagram,
    STAGE_PAIRS,
};
use crate::qutrit::pair_correlation;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "kcbs", version, about = "KCBS five-cycle contextuality: predictions, simulation, classical oracles")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Directory for output files. Without it, `ideal`, `geometry` and
    /// `oracle` print to stdout and `simulate` writes to the current directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact correlations of the optimal state, the quantum sum and the classical bound.
    Ideal {
        /// Five directions, one `x y z` row each; defaults to the regular pentagram.
        #[arg(long, value_name = "PATH")]
        pentagram: Option<PathBuf>,
    },
    /// Pentagram directions, symmetry axis and overlap matrix.
    Geometry {
        #[arg(long, value_name = "PATH")]
        pentagram: Option<PathBuf>,
    },
    /// Simulate all seven stages and analyze them.
    Simulate,
    /// Joint-distribution feasibility of five correlations.
    Oracle {
        /// Five comma-separated correlations.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "input")]
        correlations: Vec<f64>,
        /// Check the extended inequality with `<A1 A1'> = 1 - epsilon`.
        #[arg(long, allow_negative_numbers = true)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Read terms (and epsilon) from a `results_b.json` written by `simulate`.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ideal { .. } => "ideal",
            Command::Geometry { .. } => "geometry",
            Command::Simulate => "simulate",
            Command::Oracle { .. } => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`, if set. Wall-clock
    /// time is never recorded so that reruns are byte-identical.
    pub timestamp: Option<u64>,
}

/// A file to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// What a subcommand produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

enum Body {
    Json(Value),
    Csv { header: Vec<String>, rows: Vec<Vec<String>> },
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn render(body: Body, manifest: &RunManifest) -> Result<String> {
    let manifest_value = serde_json::to_value(manifest).expect("manifest serializes");
    match body {
        Body::Json(mut v) => {
            if let Value::Object(map) = &mut v {
                map.insert("manifest".into(), manifest_value);
            }
            let mut s = serde_json::to_string_pretty(&v).expect("values serialize");
            s.push('\n');
            Ok(s)
        }
        Body::Csv { header, rows } => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).map_err(csv_err)?;
            for r in rows {
                w.write_record(&r).map_err(csv_err)?;
            }
            let table = String::from_utf8(w.into_inner().map_err(|e| csv_err(e.into_error().into()))?)
                .expect("csv output is utf-8");
            Ok(format!("# manifest: {manifest_value}\n{table}"))
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

fn load_pentagram(path: &Option<PathBuf>) -> Result<(Pentagram, String)> {
    match path {
        None => Ok((regular_pentagram(), "regular".into())),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
            Ok((Pentagram::from_record(&text)?, p.display().to_string()))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

/// Runs the subcommand without touching the filesystem (other than reading
/// inputs).
pub fn run(cli: &Cli) -> Result<RunOutput> {
    let (summary, bodies, seed) = match &cli.command {
        Command::Ideal { pentagram } => {
            let (s, b) = cmd_ideal(pentagram, cli.format)?;
            (s, b, None)
        }
        Command::Geometry { pentagram } => {
            let (s, b) = cmd_geometry(pentagram, cli.format)?;
            (s, b, None)
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            let (s, b) = cmd_simulate(&cfg, cli.format)?;
            (s, b, Some(cfg.rng_seed))
        }
        Command::Oracle {
            correlations,
            epsilon,
            tol,
            input,
        } => {
            let (s, b) = cmd_oracle(correlations, *epsilon, *tol, input.as_deref())?;
            (s, b, None)
        }
    };
    let manifest = RunManifest {
        subcommand: cli.command.name().into(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed,
        outputs: bodies.iter().map(|(n, _)| n.clone()).collect(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: source_date_epoch(),
    };
    let artifacts = bodies
        .into_iter()
        .map(|(name, body)| {
            Ok(Artifact {
                contents: render(body, &manifest)?,
                name,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RunOutput { summary, artifacts })
}

/// Runs the subcommand and writes its artifacts.
pub fn execute(cli: &Cli) -> Result<()> {
    let output = run(cli)?;
    let dir = match (&cli.out, &cli.command) {
        (Some(d), _) => d.clone(),
        (None, Command::Simulate) => PathBuf::from("."),
        (None, _) => {
            for a in &output.artifacts {
                print!("{}", a.contents);
            }
            return Ok(());
        }
    };
    write_artifacts(&dir, &output.artifacts)?;
    print!("{}", output.summary);
    Ok(())
}

fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(io(&path))?;
    }
    Ok(())
}

type Bodies = Vec<(String, Body)>;

fn cmd_ideal(path: &Option<PathBuf>, format: Format) -> Result<(String, Bodies)> {
    let (p, source) = load_pentagram(path)?;
    let state = if path.is_none() {
        optimal_state()
    } else {
        max_quantum_violation(&p)?.0
    };
    let terms: Vec<f64> = (1..=5)
        .map(|i| pair_correlation(&state, p.direction(i), p.direction(i + 1)))
        .collect::<Result<_>>()?;
    let quantum_sum = if path.is_none() {
        quantum_optimum()
    } else {
        terms.iter().sum()
    };
    let per_term = quantum_sum / 5.0;
    let classical_bound = oracle::min_pentagon_sum().0 as f64;
    let extended = oracle::min_extended_sum().0 as f64;

    let mut summary = String::new();
    writeln!(summary, "pentagram: {source}").unwrap();
    for (k, t) in terms.iter().enumerate() {
        let (a, b) = STAGE_PAIRS[k];
        writeln!(summary, "<{a}{b}> = {t:.9}").unwrap();
    }
    writeln!(summary, "quantum sum     = {quantum_sum:.9}").unwrap();
    writeln!(summary, "classical bound = {classical_bound}").unwrap();

    let name = format!("ideal.{}", format.ext());
    let body = match format {
        Format::Json => Body::Json(json!({
            "pentagram": source,
            "terms": terms,
            "per_term": per_term,
            "quantum_sum": quantum_sum,
            "classical_bound": classical_bound,
            "extended_classical_bound": extended,
            "violation": classical_bound - quantum_sum,
        })),
        Format::Csv => {
            let mut rows: Vec<Vec<String>> = terms
                .iter()
                .enumerate()
                .map(|(k, t)| vec![format!("term_{}", k + 1), num(*t)])
                .collect();
            for (k, v) in [
                ("per_term", per_term),
                ("quantum_sum", quantum_sum),
                ("classical_bound", classical_bound),
                ("extended_classical_bound", extended),
                ("violation", classical_bound - quantum_sum),
            ] {
                rows.push(vec![k.into(), num(v)]);
            }
            Body::Csv {
                header: vec!["field".into(), "value".into()],
                rows,
            }
        }
    };
    Ok((summary, vec![(name, body)]))
}

fn cmd_geometry(path: &Option<PathBuf>, format: Format) -> Result<(String, Bodies)> {
    let (p, source) = load_pentagram(path)?;
    let mut vectors: Vec<(String, [f64; 3])> = (1..=5)
        .map(|i| (format!("l{i}"), p.direction(i).components()))
        .collect();
    vectors.push(("axis".into(), p.symmetry_axis().components()));
    let overlaps: Vec<Vec<f64>> = vectors
        .iter()
        .map(|(_, v)| {
            (1..=5)
                .map(|j| {
                    let l = p.direction(j).components();
                    v[0] * l[0] + v[1] * l[1] + v[2] * l[2]
                })
                .collect()
        })
        .collect();
    let summary = format!(
        "pentagram: {source}\nclosure error: {:.3e}\n",
        p.closure_error()
    );
    let name = format!("geometry.{}", format.ext());
    let body = match format {
        Format::Json => Body::Json(json!({
            "pentagram": source,
            "directions": vectors[..5].iter().map(|(_, v)| v.to_vec()).collect::<Vec<_>>(),
            "symmetry_axis": vectors[5].1,
            "overlaps": overlaps[..5],
            "closure_error": p.closure_error(),
        })),
        Format::Csv => {
            let mut header = vec!["row", "x", "y", "z", "norm"];
            header.extend(["overlap_l1", "overlap_l2", "overlap_l3", "overlap_l4", "overlap_l5"]);
            let rows = vectors
                .iter()
                .zip(&overlaps)
                .map(|((label, v), o)| {
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    let mut r = vec![label.clone(), num(v[0]), num(v[1]), num(v[2]), num(norm)];
                    r.extend(o.iter().map(|x| num(*x)));
                    r
                })
                .collect();
            Body::Csv {
                header: header.into_iter().map(String::from).collect(),
                rows,
            }
        }
    };
    Ok((summary, vec![(name, body)]))
}

fn estimate_json(e: &Estimate) -> Value {
    json!({ "value": e.value, "std_error": e.std_error })
}

fn cmd_simulate(cfg: &ExperimentConfig, format: Format) -> Result<(String, Bodies)> {
    let report = run_experiment(cfg)?;
    let ExperimentReport {
        counts,
        efficiency,
        stages,
        epsilon,
        verdict,
    } = &report;

    let a_name = format!("results_a.{}", format.ext());
    let a_body = match format {
        Format::Json => Body::Json(json!({
            "rows": stages.iter().map(|s| {
                let (mi, mj) = s.stage.measured_pair();
                json!({
                    "stage": s.stage,
                    "measurements": format!("{mi}{mj}"),
                    "detectors": s.conditions.iter().zip(&s.probabilities).map(|(c, p)| json!({
                        "condition": c,
                        "probability": p.value,
                        "std_error": p.std_error,
                    })).collect::<Vec<_>>(),
                    "correlation": estimate_json(&s.correlation),
                })
            }).collect::<Vec<_>>(),
        })),
        Format::Csv => {
            let mut header = vec!["stage".to_string(), "measurements".to_string()];
            for d in 1..=3 {
                header.push(format!("condition_d{d}"));
                header.push(format!("p_d{d}"));
                header.push(format!("p_d{d}_err"));
            }
            header.push("correlation".into());
            header.push("correlation_err".into());
            let rows = stages
                .iter()
                .map(|s| {
                    let (mi, mj) = s.stage.measured_pair();
                    let mut r = vec![s.stage.to_string(), format!("{mi}{mj}")];
                    for (c, p) in s.conditions.iter().zip(&s.probabilities) {
                        r.extend([c.clone(), num(p.value), num(p.std_error)]);
                    }
                    r.extend([num(s.correlation.value), num(s.correlation.std_error)]);
                    r
                })
                .collect();
            Body::Csv { header, rows }
        }
    };

    let counts_name = format!("counts.{}", format.ext());
    let counts_body = match format {
        Format::Json => Body::Json(json!({ "stages": counts.stages })),
        Format::Csv => {
            let header = ["stage", "run", "heralds", "d1", "d2", "d3", "discarded", "double"]
                .map(String::from)
                .to_vec();
            let rows = counts
                .stages
                .iter()
                .flat_map(|s| {
                    s.runs.iter().enumerate().map(move |(i, r)| {
                        vec![
                            s.stage.to_string(),
                            (i + 1).to_string(),
                            r.heralds.to_string(),
                            r.singles[0].to_string(),
                            r.singles[1].to_string(),
                            r.singles[2].to_string(),
                            r.discarded.to_string(),
                            r.double.to_string(),
                        ]
                    })
                })
                .collect();
            Body::Csv { header, rows }
        }
    };

    let b_body = Body::Json(json!({
        "config": cfg,
        "eta": efficiency.eta,
        "eta_std_error": efficiency.eta_std_error,
        "conditionals": [
            json!({
                "stage": Stage::BLOCK_A1_MODE,
                "condition": "P(A1'=-1|A1=1)",
                "probability": epsilon.minus_given_plus.value,
                "std_error": epsilon.minus_given_plus.std_error,
            }),
            json!({
                "stage": Stage::BLOCK_OTHER_TWO,
                "condition": "P(A1'=1|A1=-1)",
                "probability": epsilon.plus_given_minus.value,
                "std_error": epsilon.plus_given_minus.std_error,
            }),
        ],
        "a1_plus": estimate_json(&epsilon.a1_plus),
        "epsilon": { "value": epsilon.epsilon, "std_error": epsilon.std_error },
        "terms": stages.iter().map(|s| estimate_json(&s.correlation)).collect::<Vec<_>>(),
        "lhs": estimate_json(&verdict.lhs),
        "bound": estimate_json(&verdict.bound),
        "violated": verdict.violated,
        "significance": verdict.significance,
    }));

    let mut summary = String::new();
    for s in stages {
        let (mi, mj) = s.stage.measured_pair();
        writeln!(
            summary,
            "<{mi}{mj}> = {:.4} +- {:.4}",
            s.correlation.value, s.correlation.std_error
        )
        .unwrap();
    }
    writeln!(
        summary,
        "eta_hat = ({:.4}, {:.4}, {:.4})",
        efficiency.eta[0], efficiency.eta[1], efficiency.eta[2]
    )
    .unwrap();
    writeln!(summary, "epsilon = {:.4} +- {:.4}", epsilon.epsilon, epsilon.std_error).unwrap();
    writeln!(
        summary,
        "lhs = {:.4} +- {:.4}, bound = {:.4} +- {:.4}, {} ({:.1} sigma)",
        verdict.lhs.value,
        verdict.lhs.std_error,
        verdict.bound.value,
        verdict.bound.std_error,
        if verdict.violated { "violated" } else { "not violated" },
        verdict.significance
    )
    .unwrap();

    Ok((
        summary,
        vec![
            (a_name, a_body),
            ("results_b.json".into(), b_body),
            (counts_name, counts_body),
        ],
    ))
}

fn read_results_b(path: &Path) -> Result<(Vec<f64>, Option<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |what: &str| Error::InvalidArgument(format!("{}: {what}", path.display()));
    let v: Value = serde_json::from_str(&text).map_err(|e| bad(&e.to_string()))?;
    let terms = v["terms"]
        .as_array()
        .ok_or_else(|| bad("missing terms"))?
        .iter()
        .map(|t| t["value"].as_f64().ok_or_else(|| bad("term without value")))
        .collect::<Result<_>>()?;
    Ok((terms, v["epsilon"]["value"].as_f64()))
}

fn feasibility_json(r: &FeasibilityResult, n: usize) -> Value {
    json!({
        "feasible": r.feasible,
        "witness": r.witness.as_ref().map(|_| {
            r.support(n).iter().map(|(a, w)| json!({ "assignment": a.to_string(), "weight": w })).collect::<Vec<_>>()
        }),
        "residual": r.residual,
        "separator": r.separator,
    })
}

fn describe(r: &FeasibilityResult, n: usize) -> String {
    if r.feasible {
        let support: Vec<String> = r
            .support(n)
            .iter()
            .map(|(a, w)| format!("{w:.4}*{a}"))
            .collect();
        format!("feasible; witness {}", support.join(" + "))
    } else {
        format!(
            "infeasible; separator {}",
            r.separator.as_ref().expect("infeasible results carry a separator")
        )
    }
}

fn cmd_oracle(
    correlations: &[f64],
    epsilon: Option<f64>,
    tol: f64,
    input: Option<&Path>,
) -> Result<(String, Bodies)> {
    let (terms, epsilon) = match input {
        Some(p) => {
            let (t, e) = read_results_b(p)?;
            (t, epsilon.or(e))
        }
        None => (correlations.to_vec(), epsilon),
    };
    let jpd = oracle::jpd_feasible(&terms, tol)?;
    let extended = epsilon
        .map(|e| oracle::epsilon_adjusted_feasible(&terms, e, tol))
        .transpose()?;
    let sum: f64 = terms.iter().sum();

    let mut summary = format!("sum = {sum:.6}\njpd: {}\n", describe(&jpd, 5));
    if let (Some(e), Some(r)) = (epsilon, &extended) {
        writeln!(summary, "epsilon {e}: {}", describe(r, 6)).unwrap();
    }
    let body = Body::Json(json!({
        "correlations": terms,
        "sum": sum,
        "tol": tol,
        "classical_bound": oracle::min_pentagon_sum().0,
        "jpd": feasibility_json(&jpd, 5),
        "epsilon": epsilon,
        "epsilon_adjusted": extended.as_ref().map(|r| feasibility_json(r, 6)),
    }));
    Ok((summary, vec![("oracle.json".into(), body)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("kcbs").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn ideal_fields() {
        let out = run(&parse(&["ideal", "--format", "json"])).unwrap();
        let v: Value = serde_json::from_str(&out.artifacts[0].contents).unwrap();
        assert!((v["quantum_sum"].as_f64().unwrap() - (5.0 - 4.0 * 5f64.sqrt())).abs() < 1e-12);
        assert_eq!(v["classical_bound"].as_f64(), Some(-3.0));
        assert!((v["per_term"].as_f64().unwrap() + 0.788854).abs() < 1e-6);
        assert_eq!(v["manifest"]["subcommand"], "ideal");
    }

    #[test]
    fn csv_carries_manifest_and_header() {
        let out = run(&parse(&["geometry"])).unwrap();
        let text = &out.artifacts[0].contents;
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# manifest: {"));
        assert_eq!(
            lines.next().unwrap(),
            "row,x,y,z,norm,overlap_l1,overlap_l2,overlap_l3,overlap_l4,overlap_l5"
        );
        let l1: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert!((l1[5].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!(l1[6].parse::<f64>().unwrap().abs() < 1e-12);
        assert!((l1[7].parse::<f64>().unwrap() - 0.61803).abs() < 1e-5);
    }

    #[test]
    fn oracle_arguments() {
        let cli = parse(&["oracle", "--correlations", "-0.6,-0.6,-0.6,-0.6,-0.6"]);
        let out = run(&cli).unwrap();
        assert!(out.summary.contains("jpd: feasible"));
        let cli = parse(&["oracle", "--correlations", "0,0,0"]);
        assert!(matches!(run(&cli), Err(Error::InvalidArgument(_))));
        let cli = parse(&["oracle", "--correlations", "-0.805,-0.804,-0.709,-0.810,-0.766", "--epsilon", "0.081"]);
        let out = run(&cli).unwrap();
        assert!(out.summary.contains("jpd: infeasible"));
        assert!(out.summary.contains("epsilon 0.081: infeasible"));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(f64::NAN), "");
    }
}
