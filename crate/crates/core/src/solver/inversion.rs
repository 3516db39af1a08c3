use nalgebra::{DMatrix, DVector};

/// Polynomial fit `Σ c_n s^n` to generating-function values.
#[derive(Clone, Debug, PartialEq)]
pub struct PgfFit {
    pub coeffs: Vec<f64>,
    /// Root-mean-square residual on the fit points.
    pub residual: f64,
    /// `1 − Σ c_n`: mass not captured by the fitted degrees.
    pub tail_mass: f64,
}

/// Least-squares fit of degree `degree`; with `nonneg` the coefficients
/// are constrained to be nonnegative (Lawson-Hanson).
pub fn fit_pgf(s: &[f64], values: &[f64], degree: usize, nonneg: bool) -> PgfFit {
    let a = DMatrix::from_fn(s.len(), degree + 1, |r, c| s[r].powi(c as i32));
    let b = DVector::from_column_slice(values);
    let x = if nonneg { nnls(&a, &b) } else { least_squares(&a, &b) };
    let res = &a * &x - &b;
    let residual = (res.norm_squared() / s.len() as f64).sqrt();
    let coeffs: Vec<f64> = x.iter().copied().collect();
    let tail_mass = 1.0 - coeffs.iter().sum::<f64>();
    PgfFit { coeffs, residual, tail_mass }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    a.clone().svd(true, true).solve(b, 1e-14).expect("SVD with both factors")
}

/// Lawson-Hanson active-set solver for `min ‖Ax − b‖, x ≥ 0`.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let tol = 1e-12 * a.norm().max(1.0);
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..3 * n + 10 {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        for _ in 0..3 * n + 10 {
            let cols: Vec<usize> = (0..n).filter(|&c| passive[c]).collect();
            let sub = a.select_columns(&cols);
            let zs = least_squares(&sub, b);
            if zs.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = zs[k];
                }
                break;
            }
            let mut step = 1.0_f64;
            for (k, &c) in cols.iter().enumerate() {
                if zs[k] <= 0.0 {
                    step = step.min(x[c] / (x[c] - zs[k]));
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += step * (zs[k] - x[c]);
                if x[c] <= tol {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::grid::uniform;

    #[test]
    fn recovers_polynomial_masses() {
        let p = [0.1, 0.0, 0.5, 0.0, 0.4];
        let s = uniform(0.0, 1.0, 21);
        let v: Vec<f64> = s.iter().map(|&x| crate::kernel::pgf_of(&p, x)).collect();
        for nonneg in [false, true] {
            let fit = fit_pgf(&s, &v, 8, nonneg);
            for (n, &q) in p.iter().enumerate() {
                assert!((fit.coeffs[n] - q).abs() < 1e-8, "{nonneg} {:?}", fit.coeffs);
            }
            assert!(fit.tail_mass.abs() < 1e-8);
            assert!(fit.residual < 1e-10);
        }
    }

    #[test]
    fn nonnegativity_is_enforced() {
        let s = uniform(0.0, 1.0, 11);
        // exp(s-1) has all-positive Taylor coefficients; add a kink
        let v: Vec<f64> = s.iter().map(|&x| (x - 1.0).exp() + 1e-3 * (x - 0.5).abs()).collect();
        let fit = fit_pgf(&s, &v, 8, true);
        assert!(fit.coeffs.iter().all(|&c| c >= 0.0));
    }
}
