//! Single-photon, three-mode state algebra.
//!
//! A photon distributed over three orthogonal modes behaves as a spin-1
//! system. The observable attached to a real unit direction `d` is
//! `A = 2 S_d^2 - 1`; it takes the value `-1` exactly when the photon is found
//! in the mode aligned with `d` (the `S_d = 0` eigenspace), so the click
//! probability is `|<d|psi>|^2`.

use std::fmt;

use nalgebra::{Matrix2, Vector3};
use num_complex::Complex64;

use crate::{Error, Result, CONSTRUCTION_TOL};

/// One of the three optical modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];

    /// Zero-based index into amplitude arrays.
    pub fn index(self) -> usize {
        match self {
            Mode::One => 0,
            Mode::Two => 1,
            Mode::Three => 2,
        }
    }

    /// Builds a mode from its one-based label.
    pub fn from_label(label: usize) -> Result<Self> {
        match label {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            3 => Ok(Mode::Three),
            _ => Err(Error::InvalidArgument(format!("mode label {label} not in 1..=3"))),
        }
    }

    pub fn label(self) -> usize {
        self.index() + 1
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// An ordered pair of distinct modes acted on by a two-mode element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModePair {
    first: Mode,
    second: Mode,
}

impl ModePair {
    pub fn new(first: Mode, second: Mode) -> Result<Self> {
        if first == second {
            return Err(Error::InvalidArgument(format!(
                "mode pair must be distinct, got ({first}, {second})"
            )));
        }
        Ok(Self { first, second })
    }

    pub fn first(self) -> Mode {
        self.first
    }

    pub fn second(self) -> Mode {
        self.second
    }

    /// The mode not touched by this pair.
    pub fn spectator(self) -> Mode {
        Mode::ALL
            .into_iter()
            .find(|m| *m != self.first && *m != self.second)
            .expect("three modes, two distinct in the pair")
    }
}

impl fmt::Display for ModePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.first, self.second)
    }
}

/// Measurement outcome of a two-valued observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn value(self) -> i32 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_value(v: i32) -> Result<Self> {
        match v {
            1 => Ok(Outcome::Plus),
            -1 => Ok(Outcome::Minus),
            _ => Err(Error::InvalidArgument(format!("outcome must be +1 or -1, got {v}"))),
        }
    }
}

/// Normalized single-photon state over the three modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QutritState {
    amplitudes: Vector3<Complex64>,
}

impl QutritState {
    pub fn new(amplitudes: [Complex64; 3]) -> Result<Self> {
        let v = Vector3::from(amplitudes);
        let norm_sqr: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        if !norm_sqr.is_finite() || (norm_sqr - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidArgument(format!(
                "state is not normalized: squared norm {norm_sqr}"
            )));
        }
        Ok(Self { amplitudes: v })
    }

    pub fn from_real(amplitudes: [f64; 3]) -> Result<Self> {
        Self::new(amplitudes.map(|a| Complex64::new(a, 0.0)))
    }

    /// Rescales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(amplitudes: [Complex64; 3]) -> Result<Self> {
        let norm = amplitudes.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument("cannot normalize a zero state".into()));
        }
        Ok(Self {
            amplitudes: Vector3::from(amplitudes.map(|c| c / norm)),
        })
    }

    /// The photon with certainty in `mode`.
    pub fn basis(mode: Mode) -> Self {
        let mut a = [Complex64::new(0.0, 0.0); 3];
        a[mode.index()] = Complex64::new(1.0, 0.0);
        Self {
            amplitudes: Vector3::from(a),
        }
    }

    /// The real state pointing along `d`.
    pub fn along(d: &Direction) -> Self {
        Self {
            amplitudes: Vector3::from(d.components().map(|x| Complex64::new(x, 0.0))),
        }
    }

    pub fn amplitudes(&self) -> [Complex64; 3] {
        [self.amplitudes[0], self.amplitudes[1], self.amplitudes[2]]
    }

    pub fn amplitude(&self, mode: Mode) -> Complex64 {
        self.amplitudes[mode.index()]
    }

    /// Probability of finding the photon in each mode.
    pub fn probabilities(&self) -> [f64; 3] {
        self.amplitudes().map(|c| c.norm_sqr())
    }

    pub fn as_subnormalized(&self) -> SubnormalizedState {
        SubnormalizedState {
            amplitudes: self.amplitudes,
        }
    }

    /// Coordinates of the state in an orthonormal real frame.
    pub fn in_frame(&self, frame: &[Direction; 3]) -> [Complex64; 3] {
        frame.each_ref().map(|d| inner(d, &self.amplitudes))
    }

    /// Applies a 2x2 unitary to the amplitudes of `pair`, leaving the third
    /// mode untouched.
    pub fn two_mode_transform(&self, pair: ModePair, block: &Matrix2<Complex64>) -> Result<Self> {
        check_unitary(block, 1e-10)?;
        let mut s = self.as_subnormalized();
        s.apply_two_mode(pair, block);
        Ok(Self {
            amplitudes: s.amplitudes,
        })
    }
}

/// Amplitudes with squared norm at most one, as left behind by absorbing
/// elements. The missing norm is the probability that the photon was blocked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubnormalizedState {
    amplitudes: Vector3<Complex64>,
}

impl SubnormalizedState {
    pub fn amplitudes(&self) -> [Complex64; 3] {
        [self.amplitudes[0], self.amplitudes[1], self.amplitudes[2]]
    }

    pub fn amplitude(&self, mode: Mode) -> Complex64 {
        self.amplitudes[mode.index()]
    }

    pub fn probabilities(&self) -> [f64; 3] {
        self.amplitudes().map(|c| c.norm_sqr())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|c| c.norm_sqr()).sum()
    }

    /// No validation: callers apply blocks they have already checked.
    pub fn apply_two_mode(&mut self, pair: ModePair, block: &Matrix2<Complex64>) {
        let (i, j) = (pair.first().index(), pair.second().index());
        let (a, b) = (self.amplitudes[i], self.amplitudes[j]);
        self.amplitudes[i] = block[(0, 0)] * a + block[(0, 1)] * b;
        self.amplitudes[j] = block[(1, 0)] * a + block[(1, 1)] * b;
    }

    pub fn absorb(&mut self, mode: Mode) {
        self.amplitudes[mode.index()] = Complex64::new(0.0, 0.0);
    }

    pub fn shift_phase(&mut self, mode: Mode, phase: f64) {
        self.amplitudes[mode.index()] *= Complex64::from_polar(1.0, phase);
    }

    /// Renormalizes, i.e. conditions on the photon having survived.
    pub fn conditioned(&self) -> Result<QutritState> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(Error::UndefinedConditional(
                "photon is absorbed with certainty".into(),
            ));
        }
        QutritState::normalized(self.amplitudes())
    }
}

/// Real unit vector labelling a squared-spin measurement. `d` and `-d` label
/// the same measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    v: Vector3<f64>,
}

impl Direction {
    pub fn new(components: [f64; 3]) -> Result<Self> {
        let v = Vector3::from(components);
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > CONSTRUCTION_TOL {
            return Err(Error::InvalidArgument(format!(
                "direction is not a unit vector: norm {n}"
            )));
        }
        Ok(Self { v })
    }

    /// Normalizes any non-zero vector.
    pub fn normalize(components: [f64; 3]) -> Result<Self> {
        let v = Vector3::from(components);
        let n = v.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::InvalidArgument("cannot normalize a zero vector".into()));
        }
        Ok(Self { v: v / n })
    }

    pub(crate) fn from_vector(v: Vector3<f64>) -> Result<Self> {
        Self::normalize([v.x, v.y, v.z])
    }

    pub fn axis(mode: Mode) -> Self {
        let mut c = [0.0; 3];
        c[mode.index()] = 1.0;
        Self { v: Vector3::from(c) }
    }

    pub fn components(&self) -> [f64; 3] {
        [self.v.x, self.v.y, self.v.z]
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.v
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.v.dot(&other.v)
    }

    /// Unit normal of the plane spanned by two orthogonal directions.
    pub fn cross(&self, other: &Direction) -> Result<Direction> {
        Direction::from_vector(self.v.cross(&other.v))
    }
}

impl std::ops::Neg for Direction {
    type Output = Direction;

    fn neg(self) -> Direction {
        Direction { v: -self.v }
    }
}

fn inner(d: &Direction, amplitudes: &Vector3<Complex64>) -> Complex64 {
    d.v.iter().zip(amplitudes.iter()).map(|(x, c)| c * *x).sum()
}

fn check_unitary(block: &Matrix2<Complex64>, tol: f64) -> Result<()> {
    let product = block.adjoint() * block;
    let dev = (product - Matrix2::identity()).iter().map(|c| c.norm()).fold(0.0, f64::max);
    if !(dev <= tol) {
        return Err(Error::InvalidArgument(format!(
            "two-mode block is not unitary: |U^dag U - 1| = {dev:.3e}"
        )));
    }
    Ok(())
}

/// Probability that the detector aligned with `d` clicks, `|<d|psi>|^2`.
pub fn click_probability(state: &QutritState, d: &Direction) -> f64 {
    inner(d, &state.amplitudes).norm_sqr().min(1.0)
}

/// Whether two directions label jointly measurable observables.
pub fn compatible(d1: &Direction, d2: &Direction, tol: f64) -> bool {
    d1.dot(d2).abs() <= tol
}

/// `<A_i A_j>` for a compatible pair. A single photon cannot make both
/// detectors click, so `P(-1,-1) = 0` and the correlation is
/// `1 - 2 p_i - 2 p_j`.
pub fn pair_correlation(state: &QutritState, di: &Direction, dj: &Direction) -> Result<f64> {
    let overlap = di.dot(dj);
    if overlap.abs() > crate::COMPATIBILITY_TOL {
        return Err(Error::Incompatible {
            overlap,
            tol: crate::COMPATIBILITY_TOL,
        });
    }
    let pi = click_probability(state, di);
    let pj = click_probability(state, dj);
    Ok(1.0 - 2.0 * (pi + pj))
}
