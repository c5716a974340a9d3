//! Small dense solvers for the regression fits: Householder QR least squares
//! and Cholesky for symmetric positive definite systems.
//!
//! Matrices are row-major `Vec<f64>` with an explicit column count. Problem
//! sizes here are a few thousand rows by a handful of columns.

/// Relative threshold on `|R_jj| / max |R_ii|` below which the design is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Ridge used when a system is singular, relative to `trace / p`.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    /// Set when the ridge fallback replaced the QR solve.
    pub ridge_fallback: bool,
}

/// Minimizes `||a b - y||^2` for a row-major `n x p` design `a`.
pub fn least_squares(a: &[f64], p: usize, y: &[f64]) -> LeastSquares {
    let n = y.len();
    debug_assert_eq!(a.len(), n * p);
    if n >= p {
        if let Some(coefficients) = qr_solve(a, p, y) {
            return LeastSquares {
                coefficients,
                ridge_fallback: false,
            };
        }
    }
    LeastSquares {
        coefficients: ridge_normal_equations(a, p, y),
        ridge_fallback: true,
    }
}

fn qr_solve(a: &[f64], p: usize, y: &[f64]) -> Option<Vec<f64>> {
    let n = y.len();
    let mut r = a.to_vec();
    let mut qty = y.to_vec();
    let mut diag = vec![0.0; p];

    for k in 0..p {
        let norm = (k..n).map(|i| r[i * p + k].powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if r[k * p + k] > 0.0 { -norm } else { norm };
        // v = x - alpha e_1, stored in place in column k.
        r[k * p + k] -= alpha;
        let vnorm2: f64 = (k..n).map(|i| r[i * p + k].powi(2)).sum();
        if vnorm2 > 0.0 {
            for j in (k + 1)..p {
                let dot: f64 = (k..n).map(|i| r[i * p + k] * r[i * p + j]).sum();
                let f = 2.0 * dot / vnorm2;
                for i in k..n {
                    r[i * p + j] -= f * r[i * p + k];
                }
            }
            let dot: f64 = (k..n).map(|i| r[i * p + k] * qty[i]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                qty[i] -= f * r[i * p + k];
            }
        }
        diag[k] = alpha;
    }

    let max_diag = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if max_diag == 0.0 || diag.iter().any(|d| d.abs() <= RANK_TOL * max_diag) {
        return None;
    }

    let mut coef = vec![0.0; p];
    for k in (0..p).rev() {
        let mut s = qty[k];
        for j in (k + 1)..p {
            s -= r[k * p + j] * coef[j];
        }
        coef[k] = s / diag[k];
    }
    Some(coef)
}

/// `a^T a` and `a^T y`.
fn normal_equations(a: &[f64], p: usize, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut ata = vec![0.0; p * p];
    let mut aty = vec![0.0; p];
    for (row, &yi) in a.chunks_exact(p).zip(y) {
        for j in 0..p {
            aty[j] += row[j] * yi;
            for k in 0..=j {
                ata[j * p + k] += row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            ata[k * p + j] = ata[j * p + k];
        }
    }
    (ata, aty)
}

fn ridge_normal_equations(a: &[f64], p: usize, y: &[f64]) -> Vec<f64> {
    let (mut ata, aty) = normal_equations(a, p, y);
    add_trace_scaled_ridge(&mut ata, p, RIDGE_FALLBACK);
    // A positive ridge on a PSD matrix is positive definite unless the design
    // is identically zero, in which case zero coefficients are the answer.
    cholesky_solve(&ata, p, &aty).unwrap_or_else(|| vec![0.0; p])
}

/// Adds `scale * max(trace / p, 1)` to the diagonal.
pub fn add_trace_scaled_ridge(m: &mut [f64], p: usize, scale: f64) {
    let trace: f64 = (0..p).map(|j| m[j * p + j]).sum();
    let lambda = scale * (trace / p as f64).max(1.0);
    for j in 0..p {
        m[j * p + j] += lambda;
    }
}

/// Solves `m x = b` for symmetric positive definite `m`; `None` if a pivot
/// is not positive.
pub fn cholesky_solve(m: &[f64], p: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        let mut d = m[j * p + j];
        for k in 0..j {
            d -= l[j * p + k] * l[j * p + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[j * p + j] = djj;
        for i in (j + 1)..p {
            let mut s = m[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            l[i * p + j] = s / djj;
        }
    }
    let mut z = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * z[k];
        }
        z[i] = s / l[i * p + i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = z[i];
        for k in (i + 1)..p {
            s -= l[k * p + i] * x[k];
        }
        x[i] = s / l[i * p + i];
    }
    Some(x)
}
