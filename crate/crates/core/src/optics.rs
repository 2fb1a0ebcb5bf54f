//! Three-mode optical circuit of the experiment.
//!
//! A horizontally polarized photon enters in mode 1. Two preparation
//! half-wave plates (`WP_A` on modes 1-2, `WP_B` on modes 2-3) produce the
//! input state; the measurement plates `WP_1..WP_4` then realize the stage
//! transformations `T1..T4` on the mode pairs (1,2), (1,3), (2,3), (1,2).
//!
//! Each measurement plate sits between two compensating plates at 0 degrees,
//! so a measurement plate at setting `theta` acts as `hwp_matrix(-theta)`.
//! At the nominal settings this is exactly `T1` (109.1 deg) and `T4`
//! (-64.1 deg), and at 0 degrees it only flips a sign, which is the "off"
//! position of a transformation.

use std::fmt;

use nalgebra::Matrix2;
use num_complex::Complex64;

use crate::pentagram::{
    alpha, beta, transform_blocks, transform_pairs, Measurement, STAGE_MODES, STAGE_PAIRS,
};
use crate::qutrit::{Mode, ModePair, QutritState, SubnormalizedState};
use crate::{Error, Result};

/// Jones matrix of a half-wave plate with its axis at `angle_deg`:
/// `[[cos 2t, sin 2t], [sin 2t, -cos 2t]]`.
pub fn hwp_matrix(angle_deg: f64) -> Matrix2<f64> {
    let t = 2.0 * angle_deg.to_radians();
    let (s, c) = t.sin_cos();
    Matrix2::new(c, s, s, -c)
}

fn complexify(m: &Matrix2<f64>) -> Matrix2<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn pair(a: Mode, b: Mode) -> ModePair {
    ModePair::new(a, b).expect("distinct modes")
}

/// One element of a circuit.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    HalfWavePlate {
        name: &'static str,
        angle_deg: f64,
        pair: ModePair,
    },
    FixedBlock2x2 {
        name: &'static str,
        matrix: Matrix2<f64>,
        pair: ModePair,
    },
    /// Absorbs the photon in the listed modes.
    Block { modes: Vec<Mode> },
    RelativePhase { phase: f64, mode: Mode },
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Element::HalfWavePlate {
                name,
                angle_deg,
                pair,
            } => write!(f, "hwp {name} angle_deg={angle_deg:.6} pair={pair}"),
            Element::FixedBlock2x2 { name, matrix, pair } => write!(
                f,
                "block2x2 {name} [[{:.6}, {:.6}], [{:.6}, {:.6}]] pair={pair}",
                matrix[(0, 0)],
                matrix[(0, 1)],
                matrix[(1, 0)],
                matrix[(1, 1)]
            ),
            Element::Block { modes } => {
                let list: Vec<String> = modes.iter().map(|m| m.to_string()).collect();
                write!(f, "absorb modes={{{}}}", list.join(","))
            }
            Element::RelativePhase { phase, mode } => {
                write!(f, "phase rad={phase:.6} mode={mode}")
            }
        }
    }
}

/// Ordered list of elements; immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OpticalCircuit {
    elements: Vec<Element>,
}

impl OpticalCircuit {
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        for e in &elements {
            if let Element::FixedBlock2x2 { matrix, name, .. } = e {
                let dev = (matrix.transpose() * matrix - Matrix2::identity()).abs().max();
                if dev > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "fixed block {name} is not orthogonal ({dev:.3e})"
                    )));
                }
            }
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn has_blocks(&self) -> bool {
        self.elements.iter().any(|e| matches!(e, Element::Block { .. }))
    }

    /// Plain-text listing, one element per line.
    pub fn dump(&self) -> String {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{:>2} {e}\n", i + 1))
            .collect()
    }
}

/// Result of pushing a state through a circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub amplitudes: SubnormalizedState,
    /// Probability that the photon reaches the detectors.
    pub survival: f64,
    /// Probability mass removed by each `Block`, in circuit order.
    pub absorbed: Vec<f64>,
}

impl Propagation {
    pub fn probabilities(&self) -> [f64; 3] {
        self.amplitudes.probabilities()
    }
}

pub fn propagate(state: &QutritState, circuit: &OpticalCircuit) -> Propagation {
    let mut s = state.as_subnormalized();
    let mut absorbed = Vec::new();
    for e in &circuit.elements {
        match e {
            Element::HalfWavePlate {
                angle_deg, pair, ..
            } => s.apply_two_mode(*pair, &complexify(&hwp_matrix(*angle_deg))),
            Element::FixedBlock2x2 { matrix, pair, .. } => {
                s.apply_two_mode(*pair, &complexify(matrix))
            }
            Element::Block { modes } => {
                let before = s.norm_sqr();
                for m in modes {
                    s.absorb(*m);
                }
                absorbed.push(before - s.norm_sqr());
            }
            Element::RelativePhase { phase, mode } => s.shift_phase(*mode, *phase),
        }
    }
    Propagation {
        survival: s.norm_sqr(),
        amplitudes: s,
        absorbed,
    }
}

/// Photon state entering the preparation plates.
pub fn input_state() -> QutritState {
    QutritState::basis(Mode::One)
}

/// One of the seven configurations: five correlation stages and two
/// blocking stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct Stage(u8);

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage(1),
        Stage(2),
        Stage(3),
        Stage(4),
        Stage(5),
        Stage(6),
        Stage(7),
    ];
    pub const CORRELATION: [Stage; 5] = [Stage(1), Stage(2), Stage(3), Stage(4), Stage(5)];
    /// Mode of `A1` blocked; yields `P(A1' | A1 = +1)`.
    pub const BLOCK_A1_MODE: Stage = Stage(6);
    /// Other two modes blocked; yields `P(A1' | A1 = -1)`.
    pub const BLOCK_OTHER_TWO: Stage = Stage(7);

    pub fn new(k: usize) -> Result<Self> {
        if (1..=7).contains(&k) {
            Ok(Stage(k as u8))
        } else {
            Err(Error::InvalidArgument(format!("stage {k} not in 1..=7")))
        }
    }

    pub fn number(self) -> usize {
        self.0 as usize
    }

    pub fn is_blocking(self) -> bool {
        self.0 > 5
    }

    /// Number of transformations `T1..T4` switched on.
    pub fn active_transforms(self) -> usize {
        (self.0 as usize - 1).min(4)
    }

    /// Pair of measurements read out at this stage. The blocking stages read
    /// out the stage-5 pair.
    pub fn measured_pair(self) -> (Measurement, Measurement) {
        STAGE_PAIRS[self.number().min(5) - 1]
    }

    pub fn polarizer(self) -> Polarizer {
        match self.0 {
            6 => Polarizer::Deg0,
            7 => Polarizer::Deg90,
            _ => Polarizer::Absent,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Polarizer between `WP_B` and `WP_1`, modeled as a mode block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarizer {
    Absent,
    /// Absorbs the mode of `A1`.
    Deg0,
    /// Absorbs the two other modes.
    Deg90,
}

impl Polarizer {
    pub fn blocked_modes(self) -> Vec<Mode> {
        let a1 = STAGE_MODES[0].0;
        match self {
            Polarizer::Absent => vec![],
            Polarizer::Deg0 => vec![a1],
            Polarizer::Deg90 => Mode::ALL.into_iter().filter(|m| *m != a1).collect(),
        }
    }
}

/// Base wave-plate angles in degrees with all transformations switched on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateSettings {
    pub wp_a: f64,
    pub wp_b: f64,
    pub wp: [f64; 4],
}

impl PlateSettings {
    /// Closed-form angles realizing the regular pentagram exactly.
    pub fn exact() -> Self {
        let s5 = 5f64.sqrt();
        let wp_a = -0.5 * 5f64.powf(-0.25).acos().to_degrees();
        let wp_b =
            -0.5 * (-(1.0 - 2.0 / s5).sqrt() / (1.0 - 1.0 / s5).sqrt()).acos().to_degrees();
        let t13 = 90.0 + 0.5 * alpha().acos().to_degrees();
        let t4 = -90.0 + 0.5 * beta().acos().to_degrees();
        Self {
            wp_a,
            wp_b,
            wp: [t13, t13, t13, t4],
        }
    }

    /// Settings as tabulated, rounded to 0.1 degree.
    pub fn nominal() -> Self {
        Self {
            wp_a: -24.0,
            wp_b: -58.0,
            wp: [109.1, 109.1, 109.1, -64.1],
        }
    }
}

/// Named angle presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnglePreset {
    #[default]
    Exact,
    Nominal,
}

impl AnglePreset {
    pub fn settings(self) -> PlateSettings {
        match self {
            AnglePreset::Exact => PlateSettings::exact(),
            AnglePreset::Nominal => PlateSettings::nominal(),
        }
    }
}

/// Misalignment added to every plate, in degrees, ordered
/// `WP_A, WP_B, WP_1, WP_2, WP_3, WP_4`. Applies to idle plates too.
pub type PlateOffsets = [f64; 6];

/// Wave-plate and polarizer orientation of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub wp_a: f64,
    pub wp_b: f64,
    pub wp: [f64; 4],
    pub polarizer: Polarizer,
    /// Relative phase of mode 3 (the separate spatial mode), radians.
    pub spatial_phase: f64,
}

impl StageConfig {
    /// One row of the settings table.
    pub fn preset(preset: AnglePreset, stage: Stage) -> Self {
        Setup::new(preset.settings()).stage_config(stage)
    }

    pub fn circuit(&self) -> OpticalCircuit {
        let (p12, p13, p23) = (
            pair(Mode::One, Mode::Two),
            pair(Mode::One, Mode::Three),
            pair(Mode::Two, Mode::Three),
        );
        let mut elements = vec![
            Element::HalfWavePlate {
                name: "WP_A",
                angle_deg: self.wp_a,
                pair: p12,
            },
            Element::HalfWavePlate {
                name: "WP_B",
                angle_deg: self.wp_b,
                pair: p23,
            },
        ];
        if self.spatial_phase != 0.0 {
            elements.push(Element::RelativePhase {
                phase: self.spatial_phase,
                mode: Mode::Three,
            });
        }
        let blocked = self.polarizer.blocked_modes();
        if !blocked.is_empty() {
            elements.push(Element::Block { modes: blocked });
        }
        const NAMES: [&str; 4] = ["WP_1", "WP_2", "WP_3", "WP_4"];
        for ((name, angle), p) in NAMES.iter().zip(self.wp).zip([p12, p13, p23, p12]) {
            for (n, a) in [("comp", 0.0), (*name, angle), ("comp", 0.0)] {
                elements.push(Element::HalfWavePlate {
                    name: n,
                    angle_deg: a,
                    pair: p,
                });
            }
        }
        OpticalCircuit { elements }
    }
}

/// A physical configuration of the apparatus: base angles, misalignments
/// and the spatial phase error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setup {
    pub settings: PlateSettings,
    pub offsets: PlateOffsets,
    pub spatial_phase: f64,
}

impl Setup {
    pub fn new(settings: PlateSettings) -> Self {
        Self {
            settings,
            offsets: [0.0; 6],
            spatial_phase: 0.0,
        }
    }

    pub fn exact() -> Self {
        Self::new(PlateSettings::exact())
    }

    pub fn nominal() -> Self {
        Self::new(PlateSettings::nominal())
    }

    pub fn with_offsets(mut self, offsets: PlateOffsets) -> Self {
        self.offsets = offsets;
        self
    }

    pub fn with_spatial_phase(mut self, phase: f64) -> Self {
        self.spatial_phase = phase;
        self
    }

    pub fn stage_config(&self, stage: Stage) -> StageConfig {
        let active = stage.active_transforms();
        let o = self.offsets;
        StageConfig {
            wp_a: self.settings.wp_a + o[0],
            wp_b: self.settings.wp_b + o[1],
            wp: std::array::from_fn(|j| {
                let base = if j < active { self.settings.wp[j] } else { 0.0 };
                base + o[2 + j]
            }),
            polarizer: stage.polarizer(),
            spatial_phase: self.spatial_phase,
        }
    }

    pub fn propagate(&self, stage: Stage) -> Propagation {
        propagate(&input_state(), &self.stage_config(stage).circuit())
    }

    /// Probability at each detector `D1..D3` (unconditioned).
    pub fn detector_probabilities(&self, stage: Stage) -> [f64; 3] {
        let p = self.propagate(stage).probabilities();
        DETECTOR_MODES.map(|m| p[m.index()])
    }
}

/// The idealized stage-`k` circuit (`k` in `1..=5`): exact preparation plates
/// followed by the first `k - 1` transformations as fixed blocks.
pub fn build_stage(k: usize) -> Result<OpticalCircuit> {
    if !(1..=5).contains(&k) {
        return Err(Error::InvalidArgument(format!("stage {k} not in 1..=5")));
    }
    let exact = PlateSettings::exact();
    let mut elements = vec![
        Element::HalfWavePlate {
            name: "WP_A",
            angle_deg: exact.wp_a,
            pair: pair(Mode::One, Mode::Two),
        },
        Element::HalfWavePlate {
            name: "WP_B",
            angle_deg: exact.wp_b,
            pair: pair(Mode::Two, Mode::Three),
        },
    ];
    const NAMES: [&str; 4] = ["T1", "T2", "T3", "T4"];
    for ((name, matrix), p) in NAMES.iter().zip(transform_blocks()).zip(transform_pairs()).take(k - 1) {
        elements.push(Element::FixedBlock2x2 {
            name,
            matrix,
            pair: p,
        });
    }
    OpticalCircuit::new(elements)
}

/// Mode watched by each detector `D1, D2, D3`.
pub const DETECTOR_MODES: [Mode; 3] = [Mode::Three, Mode::One, Mode::Two];

/// Meaning of a heralded single click at one detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OutcomeLabel {
    /// This measurement gave `-1`, its partner `+1`.
    Minus(Measurement),
    /// Both measurements of the stage gave `+1`.
    BothPlus,
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeLabel::Minus(m) => write!(f, "{m}=-1"),
            OutcomeLabel::BothPlus => f.write_str("both=+1"),
        }
    }
}

/// Outcome label of each detector at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorMap {
    pub stage: Stage,
    pub labels: [OutcomeLabel; 3],
}

impl DetectorMap {
    pub fn for_stage(stage: Stage) -> Self {
        let idx = stage.number().min(5) - 1;
        let (mi, mj) = STAGE_PAIRS[idx];
        let (ki, kj) = STAGE_MODES[idx];
        let labels = DETECTOR_MODES.map(|m| {
            if m == ki {
                OutcomeLabel::Minus(mi)
            } else if m == kj {
                OutcomeLabel::Minus(mj)
            } else {
                OutcomeLabel::BothPlus
            }
        });
        Self { stage, labels }
    }

    /// Detector index whose click means `m = -1`.
    pub fn detector_of(&self, m: Measurement) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| *l == OutcomeLabel::Minus(m))
    }

    pub fn both_plus_detector(&self) -> usize {
        self.labels
            .iter()
            .position(|l| *l == OutcomeLabel::BothPlus)
            .expect("every map has a both-plus detector")
    }

    /// Human-readable condition per detector, e.g. `P(A1=1,A2=-1)`.
    pub fn conditions(&self) -> [String; 3] {
        let (mi, mj) = self.stage.measured_pair();
        self.labels.map(|l| {
            let (vi, vj) = match l {
                OutcomeLabel::Minus(m) if m == mi => (-1, 1),
                OutcomeLabel::Minus(_) => (1, -1),
                OutcomeLabel::BothPlus => (1, 1),
            };
            format!("P({mi}={vi},{mj}={vj})")
        })
    }
}

/// `<A_i A_j> = P(both +1) - P(A_i = -1) - P(A_j = -1)` from detector
/// probabilities at a correlation stage.
pub fn correlation_from_detectors(map: &DetectorMap, probs: &[f64; 3]) -> f64 {
    map.labels
        .iter()
        .zip(probs)
        .map(|(l, p)| match l {
            OutcomeLabel::BothPlus => *p,
            OutcomeLabel::Minus(_) => -*p,
        })
        .sum()
}

/// Which modes the blocking stage absorbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockChoice {
    /// Absorb the `A1` mode: survivors had `A1 = +1`.
    A1Mode,
    /// Absorb the other two modes: survivors had `A1 = -1`.
    OtherTwo,
}

impl BlockChoice {
    pub fn stage(self) -> Stage {
        match self {
            BlockChoice::A1Mode => Stage::BLOCK_A1_MODE,
            BlockChoice::OtherTwo => Stage::BLOCK_OTHER_TWO,
        }
    }
}

/// Distribution of `A1'` given the `A1` outcome selected by the block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditional {
    /// `P(A1' = -1 | A1 = a)`.
    pub a1_prime_minus: f64,
    /// `P(A1' = +1 | A1 = a)`.
    pub a1_prime_plus: f64,
    pub survival: f64,
}

/// Propagates the stage-5 circuit with the block inserted after preparation
/// and conditions on survival.
pub fn blocking_probabilities(setup: &Setup, which: BlockChoice) -> Result<Conditional> {
    let prop = setup.propagate(which.stage());
    if prop.survival <= 0.0 {
        return Err(Error::UndefinedConditional(format!(
            "no photon survives blocking stage {}",
            which.stage()
        )));
    }
    let probs = prop.probabilities();
    let a1_prime_mode = STAGE_MODES[4].1;
    let minus = probs[a1_prime_mode.index()] / prop.survival;
    Ok(Conditional {
        a1_prime_minus: minus,
        a1_prime_plus: 1.0 - minus,
        survival: prop.survival,
    })
}

/// Comparison of a circuit stage with the abstract pentagram prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub stage: Stage,
    /// `[P(A_i = -1), P(A_j = -1), P(both +1)]` from the circuit.
    pub circuit: [f64; 3],
    /// The same three probabilities from the lab-frame pentagram and the
    /// optimal state.
    pub expected: [f64; 3],
    pub max_deviation: f64,
    pub passed: bool,
}

/// Checks stage `k` (`1..=5`) of `setup` against the regular pentagram.
pub fn stage_equivalence_check(setup: &Setup, k: usize, tolerance: f64) -> Result<EquivalenceReport> {
    use crate::pentagram::{optimal_state, regular_pentagram};
    use crate::qutrit::click_probability;

    if !(1..=5).contains(&k) {
        return Err(Error::InvalidArgument(format!("stage {k} not in 1..=5")));
    }
    let stage = Stage::new(k)?;
    let probs = setup.propagate(stage).probabilities();
    let (mi, mj) = STAGE_MODES[k - 1];
    let rest = 1.0 - probs[mi.index()] - probs[mj.index()];
    let circuit = [probs[mi.index()], probs[mj.index()], rest];

    let p = regular_pentagram();
    let psi = optimal_state();
    // A1' is ideally A1, so stage 5 pairs l5 with l1.
    let pi = click_probability(&psi, p.direction(k));
    let pj = click_probability(&psi, p.direction(k % 5 + 1));
    let expected = [pi, pj, 1.0 - pi - pj];
    let max_deviation = circuit
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(EquivalenceReport {
        stage,
        circuit,
        expected,
        max_deviation,
        passed: max_deviation <= tolerance,
    })
}
