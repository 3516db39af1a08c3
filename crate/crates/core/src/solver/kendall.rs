use crate::quadrature::adaptive_simpson;

const TOL: f64 = 1e-12;

/// `(A(t), B(t))` of the inhomogeneous birth-death generating function
/// for time-only rates, born at time 0.
pub fn kendall_coefficients<B, D>(beta: B, delta: D, t: f64) -> (f64, f64)
where
    B: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let big_d = |u: f64| adaptive_simpson(&|x: f64| delta(x) - beta(x), 0.0, u, TOL);
    let integral = adaptive_simpson(&|u: f64| beta(u) * big_d(u).exp(), 0.0, t, TOL);
    let e = (-big_d(t)).exp();
    let denom = 1.0 + e * integral;
    (1.0 - e / denom, 1.0 - 1.0 / denom)
}

/// `F_0(s; t) = (A + (1 − A − B)s) / (1 − Bs)` for `t > 0`.
pub fn kendall_closed_form<B, D>(beta: B, delta: D, s: f64, t: f64) -> f64
where
    B: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if s == 1.0 {
        return 1.0;
    }
    let (a, b) = kendall_coefficients(beta, delta, t);
    (a + (1.0 - a - b) * s) / (1.0 - b * s)
}
