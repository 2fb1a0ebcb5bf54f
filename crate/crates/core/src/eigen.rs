//! Eigen-decomposition of real symmetric 3x3 matrices.
//!
//! Eigenvalues come from the trigonometric solution of the characteristic
//! cubic and eigenvectors from cross products of rows of `M - lambda I`. When
//! two roots are closer than [`DEGENERACY_GAP`] that construction is
//! ill-conditioned and a cyclic Jacobi sweep is used instead.

use nalgebra::{Matrix3, Vector3};
use std::f64::consts::PI;

/// Root separation below which the closed form hands over to Jacobi.
pub const DEGENERACY_GAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    ClosedForm,
    Jacobi,
}

/// Eigenpairs sorted by descending eigenvalue; vectors are orthonormal.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: [f64; 3],
    pub vectors: [Vector3<f64>; 3],
    pub method: Method,
}

impl SymmetricEigen {
    pub fn top(&self) -> (f64, Vector3<f64>) {
        (self.values[0], self.vectors[0])
    }
}

pub fn symmetric_eigen(m: &Matrix3<f64>) -> SymmetricEigen {
    let values = closed_form_eigenvalues(m);
    let gaps = [values[0] - values[1], values[1] - values[2]];
    let scale = m.abs().max().max(1.0);
    if gaps.iter().any(|g| *g < DEGENERACY_GAP * scale) {
        return jacobi_eigen(m);
    }
    let mut vectors = values.map(|l| null_vector(m, l));
    // Re-orthogonalize against rounding in the null-space construction.
    vectors[1] = (vectors[1] - vectors[0] * vectors[0].dot(&vectors[1])).normalize();
    vectors[2] = vectors[0].cross(&vectors[1]);
    SymmetricEigen {
        values,
        vectors,
        method: Method::ClosedForm,
    }
}

/// Roots of the characteristic polynomial, descending.
pub fn closed_form_eigenvalues(m: &Matrix3<f64>) -> [f64; 3] {
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let q = m.trace() / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p == 0.0 {
        return [q; 3];
    }
    let b = (m - Matrix3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    let mut v = [l1, l2, l3];
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn null_vector(m: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let a = m - Matrix3::identity() * lambda;
    let rows = [
        a.row(0).transpose(),
        a.row(1).transpose(),
        a.row(2).transpose(),
    ];
    let candidates = [
        rows[0].cross(&rows[1]),
        rows[0].cross(&rows[2]),
        rows[1].cross(&rows[2]),
    ];
    let best = candidates
        .into_iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
        .expect("three candidates");
    best.normalize()
}

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
pub fn jacobi_eigen(m: &Matrix3<f64>) -> SymmetricEigen {
    let mut a = *m;
    let mut v = Matrix3::<f64>::identity();
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    for _sweep in 0..64 {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq.abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    SymmetricEigen {
        values: order.map(|i| a[(i, i)]),
        vectors: order.map(|i| v.column(i).into_owned()),
        method: Method::Jacobi,
    }
}
