//! Classical side of the test: exhaustive bounds over deterministic
//! assignments and joint-distribution feasibility of correlation vectors.
//!
//! A vector of cycle correlations admits a joint distribution iff it is a
//! convex combination of the deterministic points, one per assignment of
//! `+-1` values. Membership is decided with a phase-one simplex; when it
//! fails, the dual of the phase-one problem gives a linear functional that
//! separates the query from every deterministic point.

use std::fmt;

use serde::Serialize;

use crate::qutrit::Outcome;
use crate::{Error, Result};

/// Default half-width of the tolerance band for exact queries.
pub const DEFAULT_TOL: f64 = 1e-9;

const PIVOT_EPS: f64 = 1e-12;
const FEASIBLE_EPS: f64 = 1e-10;

/// Values `a1..an` of a deterministic model, as `+-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAssignment {
    pub values: Vec<Outcome>,
}

impl JointAssignment {
    /// Bit `i` of `index` set means `a_{i+1} = -1`.
    pub fn from_index(n: usize, index: usize) -> Self {
        let values = (0..n)
            .map(|i| {
                if index >> i & 1 == 1 {
                    Outcome::Minus
                } else {
                    Outcome::Plus
                }
            })
            .collect();
        Self { values }
    }

    pub fn from_values(values: &[i32]) -> Result<Self> {
        let values = values
            .iter()
            .map(|v| Outcome::from_value(*v))
            .collect::<Result<_>>()?;
        Ok(Self { values })
    }

    pub fn signs(&self) -> Vec<i32> {
        self.values.iter().map(|o| o.value()).collect()
    }

    /// Products of cyclic neighbours, `a1 a2, a2 a3, ..., an a1`.
    pub fn cycle_products(&self) -> Vec<i32> {
        let s = self.signs();
        let n = s.len();
        (0..n).map(|i| s[i] * s[(i + 1) % n]).collect()
    }
}

impl fmt::Display for JointAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.signs().iter().map(|v| format!("{v:+}")).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `f = a1 a2 + a2 a3 + a3 a4 + a4 a5 + a5 a1`.
pub fn pentagon_sum(a: &JointAssignment) -> i32 {
    assert_eq!(a.values.len(), 5);
    a.cycle_products().iter().sum()
}

/// `g = a1 a2 + a2 a3 + a3 a4 + a4 a5 + a5 a1' - a1 a1'` for the assignment
/// `(a1, ..., a5, a1')`.
pub fn extended_sum(a: &JointAssignment) -> i32 {
    assert_eq!(a.values.len(), 6);
    let p = a.cycle_products();
    p[..5].iter().sum::<i32>() - p[5]
}

fn exhaustive_min(n: usize, f: fn(&JointAssignment) -> i32) -> (i32, Vec<JointAssignment>) {
    let all: Vec<(i32, JointAssignment)> = (0..1usize << n)
        .map(|k| {
            let a = JointAssignment::from_index(n, k);
            (f(&a), a)
        })
        .collect();
    let min = all.iter().map(|(v, _)| *v).min().expect("nonempty");
    let argmin = all.into_iter().filter(|(v, _)| *v == min).map(|(_, a)| a).collect();
    (min, argmin)
}

/// Minimum of the pentagon sum over all 32 assignments, with every minimizer.
pub fn min_pentagon_sum() -> (i32, Vec<JointAssignment>) {
    exhaustive_min(5, pentagon_sum)
}

/// Minimum of the extended sum over all 64 assignments.
pub fn min_extended_sum() -> (i32, Vec<JointAssignment>) {
    exhaustive_min(6, extended_sum)
}

/// A linear functional with `h . v <= bound` at every deterministic point
/// and `h . c > bound` for the query `c`, including its tolerance band.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Separator {
    pub coefficients: Vec<f64>,
    pub bound: f64,
    /// `h . c - bound - tol * |h|_1`, positive.
    pub margin: f64,
}

impl fmt::Display for Separator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .coefficients
            .iter()
            .enumerate()
            .map(|(i, h)| format!("{h:+.6}*c{}", i + 1))
            .collect();
        write!(
            f,
            "{} <= {:.6} violated by {:.6}",
            terms.join(" "),
            self.bound,
            self.margin
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// Weight of each assignment, indexed as in [`JointAssignment::from_index`].
    pub witness: Option<Vec<f64>>,
    pub separator: Option<Separator>,
    /// `max |sum_k w_k v_k - c|` of the witness.
    pub residual: Option<f64>,
}

impl FeasibilityResult {
    /// The assignments carrying weight, strongest first.
    pub fn support(&self, n: usize) -> Vec<(JointAssignment, f64)> {
        let mut out: Vec<(JointAssignment, f64)> = self
            .witness
            .iter()
            .flatten()
            .enumerate()
            .filter(|(_, w)| **w > 1e-12)
            .map(|(k, w)| (JointAssignment::from_index(n, k), *w))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Deterministic correlation points of the `n`-cycle, one per assignment.
fn cycle_vertices(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|k| {
            JointAssignment::from_index(n, k)
                .cycle_products()
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect()
}

/// Dense tableau for `min 1.a` s.t. `A x + a = b`, `x, a >= 0`, `b >= 0`.
struct PhaseOne {
    m: usize,
    n: usize,
    /// `m` constraint rows then the reduced-cost row, each `n + m + 1` wide
    /// (structural, artificial, right-hand side).
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl PhaseOne {
    fn new(a: &[Vec<f64>], b: &[f64]) -> Self {
        let m = a.len();
        let n = a[0].len();
        let w = n + m + 1;
        let mut t = vec![0.0; (m + 1) * w];
        for r in 0..m {
            t[r * w..r * w + n].copy_from_slice(&a[r]);
            t[r * w + n + r] = 1.0;
            t[r * w + w - 1] = b[r];
        }
        for j in 0..n {
            t[m * w + j] = -(0..m).map(|r| a[r][j]).sum::<f64>();
        }
        t[m * w + w - 1] = -b.iter().sum::<f64>();
        Self {
            m,
            n,
            t,
            basis: (n..n + m).collect(),
        }
    }

    fn width(&self) -> usize {
        self.n + self.m + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width() + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.at(pr, pc);
        for c in 0..w {
            self.t[pr * w + c] /= p;
        }
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.at(r, pc);
            if f == 0.0 {
                continue;
            }
            for c in 0..w {
                self.t[r * w + c] -= f * self.t[pr * w + c];
            }
        }
        self.basis[pr] = pc;
    }

    /// Bland's rule: lowest-index improving column, ties in the ratio test
    /// broken by lowest basic index. Terminates without cycling.
    fn solve(&mut self) {
        let w = self.width();
        loop {
            let Some(pc) = (0..w - 1).find(|&c| self.at(self.m, c) < -PIVOT_EPS) else {
                return;
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..self.m {
                let a = self.at(r, pc);
                if a > PIVOT_EPS {
                    let ratio = self.at(r, w - 1) / a;
                    let better = match best {
                        None => true,
                        Some((br, _, bb)) => {
                            ratio < br - PIVOT_EPS || (ratio <= br + PIVOT_EPS && self.basis[r] < bb)
                        }
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            // Phase one is bounded below by 0, so a pivot row always exists.
            let (_, pr, _) = best.expect("bounded phase-one problem");
            self.pivot(pr, pc);
        }
    }

    fn objective(&self) -> f64 {
        -self.at(self.m, self.width() - 1)
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (r, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                x[j] = self.at(r, self.width() - 1);
            }
        }
        x
    }

    /// Optimal dual of the phase-one problem, from the artificial columns.
    fn dual(&self) -> Vec<f64> {
        (0..self.m)
            .map(|r| 1.0 - self.at(self.m, self.n + r))
            .collect()
    }
}

fn check_query(corr: &[f64], n: usize, tol: f64) -> Result<()> {
    if corr.len() != n {
        return Err(Error::InvalidArgument(format!(
            "expected {n} correlations, got {}",
            corr.len()
        )));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad tolerance {tol}")));
    }
    for c in corr {
        if !(c.is_finite() && c.abs() <= 1.0 + tol) {
            return Err(Error::InvalidArgument(format!("correlation {c} outside [-1, 1]")));
        }
    }
    Ok(())
}

/// Phase-one program for `|V w - c| <= band`, `w >= 0`, `sum w = 1`.
/// Columns: weights, then upper slacks, then lower surpluses. Rows with a
/// negative right-hand side are negated; the returned flags record which.
fn band_program(verts: &[Vec<f64>], corr: &[f64], band: f64) -> (PhaseOne, Vec<bool>) {
    let n = corr.len();
    let k = verts.len();
    let cols = k + 2 * n;
    let mut a = Vec::with_capacity(2 * n + 1);
    let mut b = Vec::with_capacity(2 * n + 1);
    for (side, sign) in [(0, 1.0), (n, -1.0)] {
        for i in 0..n {
            let mut row: Vec<f64> = verts.iter().map(|v| v[i]).collect();
            row.resize(cols, 0.0);
            row[k + side + i] = sign;
            a.push(row);
            b.push(corr[i] + sign * band);
        }
    }
    let mut row = vec![1.0; k];
    row.resize(cols, 0.0);
    a.push(row);
    b.push(1.0);

    let flipped: Vec<bool> = b.iter().map(|v| *v < 0.0).collect();
    for (r, f) in flipped.iter().enumerate() {
        if *f {
            a[r].iter_mut().for_each(|x| *x = -*x);
            b[r] = -b[r];
        }
    }
    (PhaseOne::new(&a, &b), flipped)
}

/// Is `corr` within `tol` (sup norm) of the convex hull of the `n`-cycle
/// deterministic points?
fn cycle_feasible(corr: &[f64], tol: f64) -> Result<FeasibilityResult> {
    let n = corr.len();
    let all = cycle_vertices(n);
    // An assignment and its global flip give the same point; only those
    // with a1 = +1 (even indices) enter the program.
    let verts: Vec<Vec<f64>> = all.iter().step_by(2).cloned().collect();
    let k = verts.len();
    // Try the exact equalities first so that interior queries get a witness
    // that does not lean on the tolerance band.
    let (mut lp, mut flipped) = band_program(&verts, corr, 0.0);
    lp.solve();
    if lp.objective() > FEASIBLE_EPS && tol > 0.0 {
        (lp, flipped) = band_program(&verts, corr, tol);
        lp.solve();
    }

    if lp.objective() <= FEASIBLE_EPS {
        let mut w: Vec<f64> = lp.primal()[..k].iter().map(|x| x.max(0.0)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let residual = (0..n)
            .map(|i| {
                let got: f64 = w.iter().zip(&verts).map(|(wk, v)| wk * v[i]).sum();
                (got - corr[i]).abs()
            })
            .fold(0.0, f64::max);
        if residual > tol + 1e-9 {
            return Err(Error::Construction(format!(
                "witness misses the query by {residual:.3e}"
            )));
        }
        let mut full = vec![0.0; all.len()];
        for (j, wj) in w.into_iter().enumerate() {
            full[2 * j] = wj;
        }
        return Ok(FeasibilityResult {
            feasible: true,
            witness: Some(full),
            separator: None,
            residual: Some(residual),
        });
    }

    let y: Vec<f64> = lp
        .dual()
        .into_iter()
        .zip(&flipped)
        .map(|(v, f)| if *f { -v } else { v })
        .collect();
    let h: Vec<f64> = (0..n).map(|i| y[i] + y[n + i]).collect();
    let beta = -y[2 * n];
    let scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h: Vec<f64> = h.iter().map(|v| v / scale).collect();
    let bound = beta / scale;
    let dot: f64 = h.iter().zip(corr).map(|(a, b)| a * b).sum();
    let margin = dot - bound - tol * h.iter().map(|v| v.abs()).sum::<f64>();
    let worst = verts
        .iter()
        .map(|v| h.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > bound + 1e-9 || margin <= 0.0 {
        return Err(Error::Construction(
            "phase-one dual does not separate the query".into(),
        ));
    }
    Ok(FeasibilityResult {
        feasible: false,
        witness: None,
        separator: Some(Separator {
            coefficients: h,
            bound,
            margin,
        }),
        residual: None,
    })
}

/// Joint-distribution feasibility of `(<A1A2>, <A2A3>, <A3A4>, <A4A5>, <A5A1>)`.
/// The witness has 32 weights.
pub fn jpd_feasible(correlations: &[f64], tol: f64) -> Result<FeasibilityResult> {
    check_query(correlations, 5, tol)?;
    cycle_feasible(correlations, tol)
}

/// Feasibility over the 64 assignments of `(a1, ..., a5, a1')` with the
/// sixth correlation `<A1' A1>` fixed to `1 - epsilon`.
pub fn epsilon_adjusted_feasible(
    correlations: &[f64],
    epsilon: f64,
    tol: f64,
) -> Result<FeasibilityResult> {
    check_query(correlations, 5, tol)?;
    if !(0.0..=2.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon {epsilon} outside [0, 2]"
        )));
    }
    let mut six = correlations.to_vec();
    six.push(1.0 - epsilon);
    cycle_feasible(&six, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ideal() -> Vec<f64> {
        vec![1.0 - 4.0 / 5f64.sqrt(); 5]
    }

    fn assignment(v: &[i32]) -> JointAssignment {
        JointAssignment::from_values(v).unwrap()
    }

    #[test]
    fn pentagon_extremes() {
        let (min, argmin) = min_pentagon_sum();
        assert_eq!(min, -3);
        assert_eq!(argmin.len(), 10);
        assert!(argmin.contains(&assignment(&[1, -1, 1, -1, 1])));
        assert_eq!(pentagon_sum(&assignment(&[1, -1, 1, -1, 1])), -3);
        assert_eq!(pentagon_sum(&assignment(&[1; 5])), 5);
    }

    #[test]
    fn extended_extremes() {
        let (min, argmin) = min_extended_sum();
        assert_eq!(min, -4);
        assert_eq!(extended_sum(&assignment(&[1; 6])), 4);
        // With a1' = a1 the last term is -1 and the rest is the pentagon sum.
        let restricted = (0..32)
            .map(|k| {
                let mut s = JointAssignment::from_index(5, k).signs();
                s.push(s[0]);
                (extended_sum(&assignment(&s)), pentagon_sum(&JointAssignment::from_index(5, k)))
            })
            .collect::<Vec<_>>();
        assert!(restricted.iter().all(|(g, f)| *g == f - 1));
        assert_eq!(restricted.iter().map(|(_, f)| *f).min(), Some(-3));
        assert!(argmin.iter().any(|a| a.values[0] == a.values[5]));
    }

    #[test]
    fn display_assignment() {
        assert_eq!(assignment(&[1, -1, 1, -1, 1]).to_string(), "(+1,-1,+1,-1,+1)");
    }

    #[test]
    fn ideal_vector_is_separated_by_the_sum() {
        let r = jpd_feasible(&ideal(), DEFAULT_TOL).unwrap();
        assert!(!r.feasible && r.witness.is_none());
        let sep = r.separator.unwrap();
        for h in &sep.coefficients {
            assert!((h + 1.0).abs() < 1e-9, "{sep}");
        }
        assert!((sep.bound + min_pentagon_sum().0 as f64).abs() < 1e-9);
    }

    #[test]
    fn vertex_query_gets_point_mass() {
        let r = jpd_feasible(&[-1.0, -1.0, -1.0, -1.0, 1.0], DEFAULT_TOL).unwrap();
        assert!(r.feasible);
        let support = r.support(5);
        assert_eq!(support.len(), 1);
        assert_eq!(support[0].0, assignment(&[1, -1, 1, -1, 1]));
        assert!((support[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measured_vector_is_infeasible() {
        let r = jpd_feasible(&[-0.805, -0.804, -0.709, -0.810, -0.766], DEFAULT_TOL).unwrap();
        assert!(!r.feasible);
    }

    #[test]
    fn boundary_and_interior_points() {
        let r = jpd_feasible(&[-0.6; 5], DEFAULT_TOL).unwrap();
        assert!(r.feasible && r.residual.unwrap() <= DEFAULT_TOL);
        let r = jpd_feasible(&[0.0; 5], DEFAULT_TOL).unwrap();
        assert!(r.feasible);
        assert_eq!(r.witness.unwrap().len(), 32);
    }

    #[test]
    fn tolerance_band_admits_near_misses() {
        let c = [-0.6 - 1e-4; 5];
        assert!(!jpd_feasible(&c, 1e-9).unwrap().feasible);
        assert!(jpd_feasible(&c, 2e-4).unwrap().feasible);
    }

    #[test]
    fn bad_queries() {
        assert!(jpd_feasible(&[0.0; 4], DEFAULT_TOL).is_err());
        assert!(jpd_feasible(&[0.0, 0.0, 0.0, 0.0, 1.5], DEFAULT_TOL).is_err());
        assert!(jpd_feasible(&[0.0; 5], -1.0).is_err());
        assert!(epsilon_adjusted_feasible(&[0.0; 5], -0.1, DEFAULT_TOL).is_err());
    }

    #[test]
    fn epsilon_adjusted_queries() {
        let measured = [-0.805, -0.804, -0.709, -0.810, -0.766];
        let r = epsilon_adjusted_feasible(&measured, 0.081, DEFAULT_TOL).unwrap();
        assert!(!r.feasible);
        let r = epsilon_adjusted_feasible(&[-0.616; 5], 0.081, DEFAULT_TOL).unwrap();
        assert!(r.feasible);
        assert_eq!(r.witness.as_ref().unwrap().len(), 64);
        // eps = 0 forces a1' = a1 and reduces to the pentagon.
        assert!(!epsilon_adjusted_feasible(&ideal(), 0.0, DEFAULT_TOL).unwrap().feasible);
        assert!(epsilon_adjusted_feasible(&[-0.6; 5], 0.0, DEFAULT_TOL).unwrap().feasible);
    }

    #[test]
    fn maximal_epsilon() {
        // a1' = -a1 puts the measured and ideal vectors inside the polytope;
        // vectors whose products multiply to +1 at the corners stay outside.
        for c in [ideal(), vec![-0.805, -0.804, -0.709, -0.810, -0.766], vec![0.0; 5], vec![0.3, -0.2, 0.1, 0.5, -0.4]] {
            assert!(epsilon_adjusted_feasible(&c, 2.0, DEFAULT_TOL).unwrap().feasible);
        }
        assert!(!epsilon_adjusted_feasible(&[1.0; 5], 2.0, DEFAULT_TOL).unwrap().feasible);
    }

    proptest! {
        #[test]
        fn sums_below_minus_three_are_infeasible(c in prop::array::uniform5(-1.0f64..1.0)) {
            let r = jpd_feasible(&c, DEFAULT_TOL).unwrap();
            if c.iter().sum::<f64>() < -3.0 - 5.0 * DEFAULT_TOL {
                prop_assert!(!r.feasible);
            }
            if let Some(w) = &r.witness {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(w.iter().all(|x| *x >= 0.0));
            }
            if let Some(s) = &r.separator {
                prop_assert!(s.margin > 0.0);
            }
        }

        #[test]
        fn mixtures_of_vertices_are_feasible(w in prop::collection::vec(0.0f64..1.0, 32)) {
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-6);
            let verts = cycle_vertices(5);
            let c: Vec<f64> = (0..5).map(|i| w.iter().zip(&verts).map(|(a, v)| a * v[i]).sum::<f64>() / total).collect();
            prop_assert!(jpd_feasible(&c, DEFAULT_TOL).unwrap().feasible);
        }
    }
}
