//! Thin helpers over nalgebra used across the solver modules: rank and
//! null-space decisions with a shared relative threshold, spectral
//! quantities, pseudoinverse solves, and least-squares line fits.

use nalgebra::{Complex, DMatrix, DVector};

/// Relative singular-value threshold for all rank decisions.
pub const RANK_RTOL: f64 = 1e-8;

pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Max |m_ij - m_ji| normalized by 1 + max |m_ij|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = 1.0 + m.amax();
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_part(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_part(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Max real part over the (complex) eigenvalues of a real square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Numerical rank of a real matrix: count of singular values above
/// `rtol * sigma_max`.
pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Numerical rank of a complex matrix (same threshold convention).
///
/// Computed on the real embedding `[[Re, -Im], [Im, Re]]`, whose
/// singular values are those of the complex matrix with doubled
/// multiplicity; this keeps the decision on the real SVD path.
pub fn rank_complex(m: &DMatrix<Complex<f64>>, rtol: f64) -> usize {
    let (r, c) = m.shape();
    let mut embed = DMatrix::<f64>::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = m[(i, j)];
            embed[(i, j)] = v.re;
            embed[(i, j + c)] = -v.im;
            embed[(i + r, j)] = v.im;
            embed[(i + r, j + c)] = v.re;
        }
    }
    rank(&embed, rtol) / 2
}

/// Orthonormal (Euclidean) basis of the right null space of `m`.
///
/// nalgebra's SVD is thin, so the matrix is padded with zero rows to
/// square shape first; the right singular vectors are unaffected and the
/// full V factor becomes available.
pub fn null_space_basis(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let padded = if rows >= cols {
        m.clone()
    } else {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("svd: V requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let tol = rtol * smax;
    let mut cols_out: Vec<DVector<f64>> = Vec::new();
    for i in 0..v_t.nrows() {
        let below = if smax == 0.0 { true } else { sv[i] <= tol };
        if below {
            cols_out.push(v_t.row(i).transpose());
        }
    }
    // Thin SVD of an r x c matrix with r >= c yields c right vectors, which
    // is all of R^c, so the kernel is fully captured.
    let k = cols_out.len();
    let mut out = DMatrix::zeros(cols, k);
    for (j, col) in cols_out.iter().enumerate() {
        out.set_column(j, col);
    }
    out
}

/// Minimum-norm least-squares solution of `m x = b` via SVD pseudoinverse.
pub fn pinv_solve(m: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    svd.solve(b, rtol * smax).expect("svd solve")
}

/// Ordinary least squares of y against x. Returns (slope, intercept, r2).
pub fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r2)
}

/// Trapezoidal quadrature of uniformly sampled values with spacing `dt`.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let interior: f64 = values[1..values.len() - 1].iter().sum();
    dt * (0.5 * (values[0] + values[values.len() - 1]) + interior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn null_space_of_wide_matrix() {
        // [A B] with A = 0 (1x1), B = 1: kernel of [0 1] is span{(1,0)}.
        let m = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let ns = null_space_basis(&m, RANK_RTOL);
        assert_eq!(ns.ncols(), 1);
        assert_relative_eq!(ns[(0, 0)].abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(ns[(1, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_complex_matches_real_case() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
        let mc = m.map(|x| Complex::new(x, 0.0));
        assert_eq!(rank(&m, RANK_RTOL), 1);
        assert_eq!(rank_complex(&mc, RANK_RTOL), 1);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (slope, intercept, r2) = line_fit(&xs, &ys);
        assert_relative_eq!(slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(intercept, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let vals: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        assert_relative_eq!(trapezoid(&vals, 0.1), 0.5, epsilon = 1e-12);
    }
}
