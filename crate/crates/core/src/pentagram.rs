//! The five measurement directions of the KCBS test.
//!
//! Directions live in the "lab" frame where the optimal state is the
//! zero-spin eigenstate along `z`. The measurement circuit works in the
//! "mode" frame, whose axes are the three optical modes of stage 1: mode 1
//! carries `l1`, mode 3 carries `l2` and mode 2 carries the remaining axis.

use std::fmt;

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::eigen::symmetric_eigen;
use crate::qutrit::{click_probability, pair_correlation, Direction, Mode, ModePair, QutritState};
use crate::{Error, Result, COMPATIBILITY_TOL};

/// `(sqrt 5 - 1) / 2`, the overlap between next-nearest pentagram directions.
pub fn golden_overlap() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

/// Mixing amplitude `sqrt((sqrt 5 - 1) / 2)` of the stage transformations.
pub fn alpha() -> f64 {
    golden_overlap().sqrt()
}

/// Mixing amplitude `sqrt((3 - sqrt 5) / 2)`; `alpha^2 + beta^2 = 1`.
pub fn beta() -> f64 {
    ((3.0 - 5f64.sqrt()) / 2.0).sqrt()
}

/// The exact quantum optimum `5 - 4 sqrt 5`.
pub fn quantum_optimum() -> f64 {
    5.0 - 4.0 * 5f64.sqrt()
}

/// The six two-outcome observables of the experiment. `A1Prime` is the
/// re-implementation of `A1` measured in the last stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Measurement {
    A1,
    A2,
    A3,
    A4,
    A5,
    A1Prime,
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Measurement::A1 => "A1",
            Measurement::A2 => "A2",
            Measurement::A3 => "A3",
            Measurement::A4 => "A4",
            Measurement::A5 => "A5",
            Measurement::A1Prime => "A1'",
        };
        f.write_str(s)
    }
}

/// The co-measured pair of each of the five correlation stages.
pub const STAGE_PAIRS: [(Measurement, Measurement); 5] = [
    (Measurement::A1, Measurement::A2),
    (Measurement::A2, Measurement::A3),
    (Measurement::A3, Measurement::A4),
    (Measurement::A4, Measurement::A5),
    (Measurement::A5, Measurement::A1Prime),
];

/// Output mode carrying each measurement of [`STAGE_PAIRS`]. Reconstructed
/// from the circuit: every transformation leaves the shared measurement's
/// mode untouched.
pub const STAGE_MODES: [(Mode, Mode); 5] = [
    (Mode::One, Mode::Three),
    (Mode::Three, Mode::Two),
    (Mode::Two, Mode::One),
    (Mode::One, Mode::Three),
    (Mode::Three, Mode::One),
];

/// Mode pairs acted on by the four stage transformations `T1..T4`.
pub fn transform_pairs() -> [ModePair; 4] {
    let p = |a, b| ModePair::new(a, b).expect("distinct modes");
    [
        p(Mode::One, Mode::Two),
        p(Mode::One, Mode::Three),
        p(Mode::Two, Mode::Three),
        p(Mode::One, Mode::Two),
    ]
}

/// Real orthogonal blocks of `T1..T4`.
pub fn transform_blocks() -> [Matrix2<f64>; 4] {
    let (a, b) = (alpha(), beta());
    let t = Matrix2::new(-a, b, b, a);
    let last = Matrix2::new(-b, a, a, b);
    [t, t, t, last]
}

/// Five cyclically compatible measurement directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pentagram {
    directions: [Direction; 5],
    symmetry_axis: Direction,
    closure_error: f64,
}

impl Pentagram {
    /// Builds a pentagram from explicit directions. The symmetry axis is
    /// taken as the principal axis of `sum_i l_i l_i^T`.
    pub fn from_directions(directions: [Direction; 5]) -> Self {
        let (_, top) = symmetric_eigen(&projector_sum(&directions)).top();
        let top = if top.z < 0.0 { -top } else { top };
        let symmetry_axis = Direction::from_vector(top).expect("eigenvector is non-zero");
        Self {
            directions,
            symmetry_axis,
            closure_error: 0.0,
        }
    }

    pub fn directions(&self) -> &[Direction; 5] {
        &self.directions
    }

    /// `l_i` for `i` in `1..=5`.
    pub fn direction(&self, i: usize) -> &Direction {
        &self.directions[(i + 4) % 5]
    }

    pub fn symmetry_axis(&self) -> &Direction {
        &self.symmetry_axis
    }

    /// Angle (radians) by which the Gram-Schmidt `l5` had to be rotated to
    /// close the cycle against `l1`. Zero for exact constructions.
    pub fn closure_error(&self) -> f64 {
        self.closure_error
    }

    /// Overlaps of the five cyclic neighbour pairs `(l_i, l_{i+1})`.
    pub fn adjacent_overlaps(&self) -> [f64; 5] {
        std::array::from_fn(|i| self.directions[i].dot(&self.directions[(i + 1) % 5]))
    }

    /// Fails with the offending overlap if a neighbour pair is not compatible.
    pub fn check_compatible(&self, tol: f64) -> Result<()> {
        match self.adjacent_overlaps().into_iter().find(|o| o.abs() > tol) {
            Some(overlap) => Err(Error::Incompatible { overlap, tol }),
            None => Ok(()),
        }
    }

    /// The frame `(l1, l2, l1 x l2)`.
    pub fn adapted_frame(&self) -> Result<[Direction; 3]> {
        let (l1, l2) = (self.directions[0], self.directions[1]);
        Ok([l1, l2, l1.cross(&l2)?])
    }

    /// Lab-frame axes of the three optical modes at stage 1.
    pub fn mode_frame(&self) -> Result<[Direction; 3]> {
        let (l1, l2) = (self.directions[0], self.directions[1]);
        Ok([l1, l2.cross(&l1)?, l2])
    }

    /// Cyclic relabeling `l_i -> l_{i+shift}`.
    pub fn rotated_labels(&self, shift: usize) -> Self {
        Self {
            directions: std::array::from_fn(|i| self.directions[(i + shift) % 5]),
            ..self.clone()
        }
    }

    /// Plain-text record: five rows of three components, 17 significant digits.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for d in &self.directions {
            let [x, y, z] = d.components();
            out.push_str(&format!("{x:.16e} {y:.16e} {z:.16e}\n"));
        }
        out
    }

    /// Parses [`Pentagram::to_record`] output. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn from_record(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 1)))?;
            let components: [f64; 3] = values.try_into().map_err(|v: Vec<f64>| {
                Error::InvalidArgument(format!(
                    "line {}: expected 3 components, found {}",
                    lineno + 1,
                    v.len()
                ))
            })?;
            rows.push(
                Direction::new(components)
                    .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 1)))?,
            );
        }
        let directions: [Direction; 5] = rows.try_into().map_err(|r: Vec<Direction>| {
            Error::InvalidArgument(format!("expected 5 directions, found {}", r.len()))
        })?;
        Ok(Self::from_directions(directions))
    }
}

fn projector_sum(directions: &[Direction; 5]) -> Matrix3<f64> {
    directions
        .iter()
        .map(|d| d.vector() * d.vector().transpose())
        .fold(Matrix3::zeros(), |acc, m| acc + m)
}

/// Rotation about `z` by 144 degrees as used to generate `l_{i+1}` from `l_i`.
fn pentagram_rotation() -> Matrix3<f64> {
    let c = (-1.0 - 5f64.sqrt()) / 4.0;
    let s = ((5.0 - 5f64.sqrt()) / 8.0).sqrt();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// The regular pentagram with symmetry axis `z`.
pub fn regular_pentagram() -> Pentagram {
    let a = ((5.0 - 5f64.sqrt()) / 10.0).sqrt();
    let c = 5f64.powf(-0.25);
    let r = pentagram_rotation();
    let mut v = Vector3::new(a, a, c);
    let directions = std::array::from_fn(|_| {
        let d = Direction::from_vector(v).expect("unit vector");
        v = r * v;
        d
    });
    Pentagram {
        directions,
        symmetry_axis: Direction::axis(Mode::Three),
        closure_error: 0.0,
    }
}

/// Zero-spin eigenstate along the symmetry axis of the regular pentagram.
pub fn optimal_state() -> QutritState {
    QutritState::basis(Mode::Three)
}

/// `sum_i <A_i A_{i+1}>`, evaluated as `5 - 4 sum_i |<l_i|psi>|^2`.
pub fn kcbs_value(state: &QutritState, p: &Pentagram) -> Result<f64> {
    p.check_compatible(COMPATIBILITY_TOL)?;
    let mut probs = p.directions.map(|d| click_probability(state, &d));
    // Summing in sorted order makes the value independent of labelling.
    probs.sort_by(f64::total_cmp);
    Ok(5.0 - 4.0 * probs.iter().sum::<f64>())
}

/// The same sum computed term by term from the five pair correlations.
pub fn kcbs_value_by_pairs(state: &QutritState, p: &Pentagram) -> Result<f64> {
    (0..5)
        .map(|i| pair_correlation(state, &p.directions[i], &p.directions[(i + 1) % 5]))
        .sum()
}

/// Largest pre-orthogonalization overlap a jittered neighbour pair may have.
pub const MAX_JITTER_OVERLAP: f64 = 0.5;

/// A regular pentagram rigidly tilted about `x` by `axis_tilt` and with each
/// direction's polar angle increased by `jitter[i]` (radians). Cyclic
/// compatibility is re-imposed by Gram-Schmidt along `l1..l4`; `l5` is then
/// closed as the normal of `l4` and `l1`, and the angle that closure moved it
/// by is reported as [`Pentagram::closure_error`].
pub fn perturbed_pentagram(axis_tilt: f64, jitter: [f64; 5]) -> Result<Pentagram> {
    let regular = regular_pentagram();
    let z = Vector3::z();
    let mut raw: [Vector3<f64>; 5] = [Vector3::zeros(); 5];
    for (i, d) in regular.directions.iter().enumerate() {
        let l = *d.vector();
        let away = l * l.dot(&z) - z;
        let away = away
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Construction("direction parallel to the axis".into()))?;
        raw[i] = l * jitter[i].cos() + away * jitter[i].sin();
    }
    let tilt = nalgebra::Rotation3::from_axis_angle(&Vector3::x_axis(), axis_tilt);
    let raw = raw.map(|v| tilt * v);

    let mut out = raw;
    for i in 1..5 {
        let prev = out[i - 1];
        let overlap = raw[i].dot(&prev);
        if overlap.abs() > MAX_JITTER_OVERLAP {
            return Err(Error::Construction(format!(
                "l{} overlaps l{} by {overlap:.3} before re-orthogonalization",
                i + 1,
                i
            )));
        }
        out[i] = (raw[i] - prev * overlap).normalize();
    }
    if raw[4].dot(&out[0]).abs() > MAX_JITTER_OVERLAP {
        return Err(Error::Construction("l5 and l1 too far from orthogonal".into()));
    }
    let closed = out[3]
        .cross(&out[0])
        .try_normalize(1e-9)
        .ok_or_else(|| Error::Construction("l4 and l1 are parallel".into()))?;
    let closed = if closed.dot(&out[4]) < 0.0 { -closed } else { closed };
    let closure_error = closed.dot(&out[4]).clamp(-1.0, 1.0).acos();
    out[4] = closed;

    let directions = out.map(|v| Direction::from_vector(v).expect("normalized"));
    let symmetry_axis = Direction::from_vector(tilt * z).expect("unit");
    Ok(Pentagram {
        directions,
        symmetry_axis,
        closure_error,
    })
}

/// The state maximizing the violation and the corresponding value. Since the
/// sum equals `5 - 4 <psi|M|psi>` with `M = sum_i l_i l_i^T`, this is the top
/// eigenpair of `M`.
pub fn max_quantum_violation(p: &Pentagram) -> Result<(QutritState, f64)> {
    p.check_compatible(COMPATIBILITY_TOL)?;
    let (lambda, v) = symmetric_eigen(&projector_sum(&p.directions)).top();
    let state = QutritState::along(&Direction::from_vector(v)?);
    Ok((state, 5.0 - 4.0 * lambda))
}

/// Coordinate frames of the five measurement stages in the mode frame: the
/// identity followed by the cumulative products of `T1..T4`. Row `m` of stage
/// `k` is the direction measured by the detector on mode `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageMatrixSequence {
    matrices: [Matrix3<f64>; 5],
}

/// A row kept (up to sign) between consecutive stage matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedRow {
    pub before: usize,
    pub after: usize,
    pub sign: f64,
}

impl StageMatrixSequence {
    pub fn matrices(&self) -> &[Matrix3<f64>; 5] {
        &self.matrices
    }

    /// Matrix of stage `k` in `1..=5`.
    pub fn stage(&self, k: usize) -> &Matrix3<f64> {
        &self.matrices[k - 1]
    }

    /// Largest deviation of `M M^T` from the identity over all stages.
    pub fn orthogonality_error(&self) -> f64 {
        self.matrices
            .iter()
            .map(|m| (m * m.transpose() - Matrix3::identity()).abs().max())
            .fold(0.0, f64::max)
    }

    /// The row stage `k` shares with stage `k + 1`, if any.
    pub fn shared_row(&self, k: usize, tol: f64) -> Option<SharedRow> {
        let (a, b) = (&self.matrices[k - 1], &self.matrices[k]);
        for before in 0..3 {
            for after in 0..3 {
                let dot = a.row(before).dot(&b.row(after));
                if (dot.abs() - 1.0).abs() <= tol {
                    return Some(SharedRow {
                        before,
                        after,
                        sign: dot.signum(),
                    });
                }
            }
        }
        None
    }

    /// Overlap between the measurement direction dropped at stage `k` and the
    /// one introduced at stage `k + 1`; `(sqrt 5 - 1)/2` up to sign.
    pub fn exchange_overlap(&self, k: usize) -> f64 {
        let dropped = STAGE_MODES[k - 1].0.index();
        let added = STAGE_MODES[k].1.index();
        self.matrices[k - 1].row(dropped).dot(&self.matrices[k].row(added))
    }

    /// Measured directions of the five stages, `(first, second)`, in the
    /// mode frame.
    pub fn measured_directions(&self, k: usize) -> (Vector3<f64>, Vector3<f64>) {
        let (m1, m2) = STAGE_MODES[k - 1];
        let m = &self.matrices[k - 1];
        (m.row(m1.index()).transpose(), m.row(m2.index()).transpose())
    }

    /// Checks orthogonality, the shared-row property and the exchange
    /// overlaps to within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let ortho = self.orthogonality_error();
        if ortho > tol {
            return Err(Error::Construction(format!("stage matrix not orthogonal: {ortho:.3e}")));
        }
        for k in 1..5 {
            if self.shared_row(k, tol).is_none() {
                return Err(Error::Construction(format!(
                    "stages {k} and {} share no row",
                    k + 1
                )));
            }
            let o = self.exchange_overlap(k);
            if (o.abs() - golden_overlap()).abs() > tol {
                return Err(Error::Construction(format!(
                    "stages {k} -> {}: exchanged directions overlap {o}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

fn embed(block: &Matrix2<f64>, pair: ModePair) -> Matrix3<f64> {
    let (i, j) = (pair.first().index(), pair.second().index());
    let mut m = Matrix3::identity();
    m[(i, i)] = block[(0, 0)];
    m[(i, j)] = block[(0, 1)];
    m[(j, i)] = block[(1, 0)];
    m[(j, j)] = block[(1, 1)];
    m
}

pub fn stage_matrices() -> Result<StageMatrixSequence> {
    let mut current = Matrix3::identity();
    let mut matrices = [current; 5];
    for (k, (block, pair)) in transform_blocks().iter().zip(transform_pairs()).enumerate() {
        current = embed(block, pair) * current;
        matrices[k + 1] = current;
    }
    let seq = StageMatrixSequence { matrices };
    seq.validate(1e-10)?;
    Ok(seq)
}
