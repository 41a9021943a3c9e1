use nalgebra::{DMatrix, DVector};

/// Smallest-to-largest eigenvalue ratio below which a Gram matrix is treated
/// as singular.
const RANK_TOL: f64 = 1e-11;

/// True when the Gram matrix has (numerically) full rank. Columns are scaled
/// to unit diagonal first so the check ignores feature units.
pub fn full_rank(gram: &DMatrix<f64>) -> bool {
    let p = gram.nrows();
    if p == 0 {
        return true;
    }
    let d: Vec<f64> = (0..p).map(|i| gram[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0)) {
        return false;
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| gram[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = scaled.symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    max > 0.0 && min / max > RANK_TOL
}

/// Solve `a * x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// `X^T W X` and `X^T W y` for row-major design rows.
pub fn weighted_normal_equations(rows: &[Vec<f64>], w: &[f64], y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let p = rows.first().map_or(0, Vec::len);
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for ((r, &wi), &yi) in rows.iter().zip(w).zip(y) {
        for i in 0..p {
            let ri = wi * r[i];
            rhs[i] += ri * yi;
            for j in 0..=i {
                gram[(i, j)] += ri * r[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
    }
    (gram, rhs)
}
