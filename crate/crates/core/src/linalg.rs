use nalgebra::{DMatrix, DVector};

/// Relative residual norm below which a centered column counts as dependent.
pub const RANK_TOL: f64 = 1e-9;

/// Flags columns of `x` that are linearly independent of the intercept and
/// of the earlier kept columns. Scans left to right with twice-iterated
/// Gram-Schmidt, so for duplicated columns the first copy is kept.
pub fn independent_columns(x: &DMatrix<f64>) -> Vec<bool> {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        let mut v: DVector<f64> = col.map(|a| a - mean);
        let scale = col.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0) * (n as f64).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > RANK_TOL * scale {
            basis.push(v / norm);
            keep.push(true);
        } else {
            keep.push(false);
        }
    }
    keep
}
