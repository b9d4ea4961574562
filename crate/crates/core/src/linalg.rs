//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{Complex, DMatrix};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Systems whose 1-norm condition number exceeds this are refused.
pub const MAX_CONDITION: f64 = 1e12;

pub fn identity(p: usize) -> CMatrix {
    CMatrix::identity(p, p)
}

/// Induced 1-norm (max column sum of moduli).
pub fn one_norm(a: &CMatrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max_i sum_{j != i} |a_ij| / |a_ii|`. Infinite when a diagonal entry is zero.
pub fn row_dominance(a: &CMatrix) -> f64 {
    let p = a.nrows();
    (0..p)
        .map(|i| {
            let off: f64 = (0..p).filter(|&j| j != i).map(|j| a[(i, j)].norm()).sum();
            let diag = a[(i, i)].norm();
            if diag == 0.0 {
                f64::INFINITY
            } else {
                off / diag
            }
        })
        .fold(0.0, f64::max)
}

/// Inverse computed by LU with partial pivoting followed by one step of
/// iterative refinement. Returns the inverse and its 1-norm condition number.
/// `Err` carries the condition number when it exceeds [`MAX_CONDITION`]
/// (infinite when the factorization breaks down).
pub fn invert_refined(a: &CMatrix) -> Result<(CMatrix, f64), f64> {
    let p = a.nrows();
    let lu = a.clone().lu();
    let mut x = match lu.try_inverse() {
        Some(x) => x,
        None => return Err(f64::INFINITY),
    };
    let residual = identity(p) - a * &x;
    if let Some(correction) = lu.solve(&residual) {
        x += correction;
    }
    let condition = one_norm(a) * one_norm(&x);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(condition);
    }
    Ok((x, condition))
}
