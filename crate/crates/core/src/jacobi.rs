//! Univariate Jacobi diffusion on [0, 1]: spectral transition density,
//! analytic score, eigenstructure, and forward Euler–Maruyama sampling.
//!
//! The process dx = s/2·[a(1-x) - b·x] dt + sqrt(s·x(1-x)) dw has
//! stationary law Beta(a, b). Its transition density admits the
//! eigenfunction expansion
//!   p(x_t | x_0) = B_{a,b}(x_t) · (1 + Σ_{n≥1} e^{λ_n t} R_n(x_0) R_n(x_t) / d_n)
//! with modified Jacobi polynomials R_n, eigenvalues λ_n, and
//! normalization constants d_n.

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

/// Times below this floor are refused: the truncated series is not
/// validated there and scores grow without bound as t → 0.
pub const MIN_SERIES_TIME: f64 = 1e-3;

/// Parameters of one Jacobi diffusion process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobiParams {
    /// Stationary Beta shape toward x = 1.
    pub a: f64,
    /// Stationary Beta shape toward x = 0.
    pub b: f64,
    /// Speed factor; scales all eigenvalues.
    pub s: f64,
}

impl JacobiParams {
    pub fn new(a: f64, b: f64, s: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) || !(s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Jacobi parameters must be positive finite, got a={a}, b={b}, s={s}"
            )));
        }
        Ok(Self { a, b, s })
    }

    /// Stationary mean a/(a+b).
    pub fn stationary_mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// Score of the stationary Beta(a,b) density at x.
    pub fn stationary_score(&self, x: f64) -> f64 {
        (self.a - 1.0) / x - (self.b - 1.0) / (1.0 - x)
    }
}

/// Truncation configuration for the spectral expansion.
#[derive(Clone, Copy, Debug)]
pub struct SeriesConfig {
    /// Number of series terms beyond the constant n=0 term.
    pub n_terms: usize,
    /// Accumulate the series sums in f64 (true) or f32 (false).
    pub use_double_precision: bool,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        Self { n_terms: 1000, use_double_precision: true }
    }
}

impl SeriesConfig {
    pub fn new(n_terms: usize) -> Result<Self> {
        if n_terms == 0 {
            return Err(Error::InvalidParameter("n_terms must be at least 1".into()));
        }
        Ok(Self { n_terms, ..Self::default() })
    }

    /// Per-time minimum term count: the truncation error of the score is
    /// negligible with 1000 terms for t < 0.01, 100 terms for t < 0.1,
    /// and 20 terms beyond, by the eigenvalue decay e^{λ_n t}.
    pub fn for_time(t: f64) -> Self {
        let n_terms = if t < 0.01 {
            1000
        } else if t < 0.1 {
            100
        } else {
            20
        };
        Self { n_terms, use_double_precision: true }
    }
}

/// Time interval on which diffusion, sampling, and likelihood operate.
#[derive(Clone, Copy, Debug)]
pub struct TimeBounds {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TimeBounds {
    fn default() -> Self {
        Self { t_min: 1e-3, t_max: 4.0 }
    }
}

impl TimeBounds {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < t_min < t_max, got t_min={t_min}, t_max={t_max}"
            )));
        }
        Ok(Self { t_min, t_max })
    }
}

/// Log of the Beta(a,b) density at x ∈ (0,1).
pub fn beta_log_density(x: f64, params: JacobiParams) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("beta_log_density needs x in (0,1), got {x}")));
    }
    let (a, b) = (params.a, params.b);
    Ok((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)))
}

/// Classical Jacobi polynomial P_n^{(alpha,beta)}(z) by the three-term
/// recurrence in n; cost linear in n.
pub fn jacobi_poly(n: usize, alpha: f64, beta: f64, z: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 0.5 * ((alpha + beta + 2.0) * z + (alpha - beta));
    for m in 2..=n {
        let m = m as f64;
        let c = 2.0 * m + alpha + beta;
        let a1 = 2.0 * m * (m + alpha + beta) * (c - 2.0);
        let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
        let a3 = (c - 1.0) * c * (c - 2.0);
        let a4 = 2.0 * (m + alpha - 1.0) * (m + beta - 1.0) * c;
        let next = ((a2 + a3 * z) * cur - a4 * prev) / a1;
        prev = cur;
        cur = next;
    }
    cur
}

/// Modified Jacobi polynomial R_n^{(a,b)}(x) = P_n^{(b-1,a-1)}(2x-1).
pub fn modified_jacobi_poly(n: usize, params: JacobiParams, x: f64) -> f64 {
    jacobi_poly(n, params.b - 1.0, params.a - 1.0, 2.0 * x - 1.0)
}

/// Derivative d/dx R_n^{(a,b)}(x) = (n+a+b-1)·P_{n-1}^{(b,a)}(2x-1).
pub fn modified_jacobi_poly_deriv(n: usize, params: JacobiParams, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (n as f64 + params.a + params.b - 1.0) * jacobi_poly(n - 1, params.b, params.a, 2.0 * x - 1.0)
}

/// Eigenvalue λ_n = -s/2 · n(n-1+a+b); zero at n = 0, strictly decreasing.
pub fn eigenvalue(n: usize, params: JacobiParams) -> f64 {
    let n = n as f64;
    -0.5 * params.s * n * (n - 1.0 + params.a + params.b)
}

/// Log of the spectral constant d_n = a₍ₙ₎b₍ₙ₎ / [(a+b)₍ₙ₋₁₎(2n+a+b-1)·n!],
/// rising factorials in log space to avoid overflow at large n.
pub fn log_spectral_constant(n: usize, params: JacobiParams) -> f64 {
    assert!(n >= 1, "spectral constant defined for n >= 1");
    let (a, b) = (params.a, params.b);
    let n_f = n as f64;
    if n <= 50 {
        // direct iterative products, exactly representable range
        let mut num = 1.0;
        let mut den = 1.0;
        for j in 0..n {
            let jf = j as f64;
            num *= (a + jf) * (b + jf);
            den *= jf + 1.0;
            if j < n - 1 {
                den *= a + b + jf;
            }
        }
        (num / (den * (2.0 * n_f + a + b - 1.0))).ln()
    } else {
        let num = ln_gamma(a + n_f) - ln_gamma(a) + ln_gamma(b + n_f) - ln_gamma(b);
        let den = ln_gamma(a + b + n_f - 1.0) - ln_gamma(a + b)
            + (2.0 * n_f + a + b - 1.0).ln()
            + ln_gamma(n_f + 1.0);
        num - den
    }
}

/// Spectral constant d_n itself; overflows are avoided internally.
pub fn spectral_constant(n: usize, params: JacobiParams) -> f64 {
    log_spectral_constant(n, params).exp()
}

/// Precomputed eigenstructure of one process, shared across evaluations.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub params: JacobiParams,
    /// λ_n for n = 1..=max_terms at index n-1.
    lambda: Vec<f64>,
    /// log d_n for n = 1..=max_terms at index n-1.
    log_dn: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(params: JacobiParams, max_terms: usize) -> Self {
        let lambda = (1..=max_terms).map(|n| eigenvalue(n, params)).collect();
        let log_dn = (1..=max_terms).map(|n| log_spectral_constant(n, params)).collect();
        Self { params, lambda, log_dn }
    }

    pub fn max_terms(&self) -> usize {
        self.lambda.len()
    }

    /// Series coefficients c_n = e^{λ_n t} R_n(x_0) / d_n for n = 1..=n_terms,
    /// reusable across evaluation points x_t at fixed (t, x_0).
    pub fn coefficients(&self, t: f64, x_0: f64, n_terms: usize) -> Result<Vec<f64>> {
        check_series_time(t)?;
        if !(0.0..=1.0).contains(&x_0) {
            return Err(Error::Domain(format!("x_0 must lie in [0,1], got {x_0}")));
        }
        let n_terms = n_terms.min(self.max_terms());
        let p = self.params;
        let (alpha, beta) = (p.b - 1.0, p.a - 1.0);
        let z0 = 2.0 * x_0 - 1.0;
        let mut coefs = Vec::with_capacity(n_terms);
        // recurrence state for R_n(x_0)
        let mut r_prev = 1.0;
        let mut r_cur = 0.5 * ((alpha + beta + 2.0) * z0 + (alpha - beta));
        for n in 1..=n_terms {
            coefs.push((self.lambda[n - 1] * t - self.log_dn[n - 1]).exp() * r_cur);
            // advance recurrence to n+1
            let m = (n + 1) as f64;
            let c = 2.0 * m + alpha + beta;
            let a1 = 2.0 * m * (m + alpha + beta) * (c - 2.0);
            let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
            let a3 = (c - 1.0) * c * (c - 2.0);
            let a4 = 2.0 * (m + alpha - 1.0) * (m + beta - 1.0) * c;
            let next = ((a2 + a3 * z0) * r_cur - a4 * r_prev) / a1;
            r_prev = r_cur;
            r_cur = next;
        }
        Ok(coefs)
    }

    /// Series sums at x: S = 1 + Σ c_n R_n(x), S' = Σ c_n dR_n/dx(x), and
    /// the magnitude sum A = 1 + Σ |c_n R_n(x)| used to separate genuine
    /// truncation failure from floating-point cancellation in dead tails.
    ///
    /// Runs the R_n recurrence and the shifted recurrence for the
    /// derivative identity dR_n/dx = (n+a+b-1)·P_{n-1}^{(b,a)}(2x-1) in a
    /// single pass; cost linear in the coefficient count.
    pub fn series_sums(&self, coefs: &[f64], x: f64, f64_accumulate: bool) -> (f64, f64, f64) {
        let p = self.params;
        let (alpha, beta) = (p.b - 1.0, p.a - 1.0);
        let (da, db) = (p.b, p.a); // derivative-series Jacobi indices
        let z = 2.0 * x - 1.0;
        let mut s_sum = 1.0f64;
        let mut d_sum = 0.0f64;
        let mut a_sum = 1.0f64;
        let mut s_sum32 = 1.0f32;
        let mut d_sum32 = 0.0f32;
        // recurrence state for R_n(x) = P_n^{(alpha,beta)}(z)
        let mut r_prev = 1.0;
        let mut r_cur = 0.5 * ((alpha + beta + 2.0) * z + (alpha - beta));
        // recurrence state for P_m^{(da,db)}(z), m = n-1
        let mut q_prev = 1.0;
        let mut q_cur = 0.5 * ((da + db + 2.0) * z + (da - db));
        for (i, &c_n) in coefs.iter().enumerate() {
            let n = i + 1;
            let r_n = r_cur;
            let q_nm1 = if n == 1 { 1.0 } else { q_cur };
            let deriv = (n as f64 + p.a + p.b - 1.0) * q_nm1;
            if f64_accumulate {
                s_sum += c_n * r_n;
                d_sum += c_n * deriv;
            } else {
                s_sum32 += (c_n * r_n) as f32;
                d_sum32 += (c_n * deriv) as f32;
            }
            a_sum += (c_n * r_n).abs();
            // advance R recurrence to n+1
            let m = (n + 1) as f64;
            let c = 2.0 * m + alpha + beta;
            let a1 = 2.0 * m * (m + alpha + beta) * (c - 2.0);
            let a2 = (c - 1.0) * (alpha * alpha - beta * beta);
            let a3 = (c - 1.0) * c * (c - 2.0);
            let a4 = 2.0 * (m + alpha - 1.0) * (m + beta - 1.0) * c;
            let r_next = ((a2 + a3 * z) * r_cur - a4 * r_prev) / a1;
            r_prev = r_cur;
            r_cur = r_next;
            // advance Q recurrence so that after step n it holds P_n^{(da,db)}
            if n >= 2 {
                let m = n as f64;
                let c = 2.0 * m + da + db;
                let a1 = 2.0 * m * (m + da + db) * (c - 2.0);
                let a2 = (c - 1.0) * (da * da - db * db);
                let a3 = (c - 1.0) * c * (c - 2.0);
                let a4 = 2.0 * (m + da - 1.0) * (m + db - 1.0) * c;
                let q_next = ((a2 + a3 * z) * q_cur - a4 * q_prev) / a1;
                q_prev = q_cur;
                q_cur = q_next;
            }
        }
        if f64_accumulate {
            (s_sum, d_sum, a_sum)
        } else {
            (s_sum32 as f64, d_sum32 as f64, a_sum)
        }
    }

    /// Log transition density and score at x_t given precomputed coefficients.
    ///
    /// A non-positive series value within accumulation roundoff of zero
    /// (relative to the term-magnitude sum) means the true density has
    /// underflowed working precision in a far tail; it is clamped to a
    /// floor there. Values negative beyond roundoff scale signal a genuine
    /// truncation deficit and raise an error.
    pub fn log_density_and_score(&self, coefs: &[f64], x_t: f64, t: f64, cfg: SeriesConfig) -> Result<(f64, f64)> {
        if !(x_t > 0.0 && x_t < 1.0) {
            return Err(Error::Domain(format!("x_t must lie in (0,1), got {x_t}")));
        }
        let (mut s_sum, d_sum, a_sum) = self.series_sums(coefs, x_t, cfg.use_double_precision);
        let cancel_floor = if cfg.use_double_precision { 1e-12 } else { 1e-4 } * a_sum;
        if s_sum <= 0.0 {
            if s_sum >= -cancel_floor {
                s_sum = cancel_floor.max(f64::MIN_POSITIVE);
            } else {
                return Err(Error::NumericalTruncation { t, n_terms: coefs.len(), value: s_sum });
            }
        }
        let log_density = beta_log_density(x_t, self.params)? + s_sum.ln();
        let score = self.params.stationary_score(x_t) + d_sum / s_sum;
        Ok((log_density, score))
    }
}

fn check_series_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= MIN_SERIES_TIME * (1.0 - 1e-9)) {
        return Err(Error::Domain(format!(
            "series evaluation requires t >= {MIN_SERIES_TIME}, got {t}"
        )));
    }
    Ok(())
}

/// Log of the transition density p(x_t | x_0) by the truncated expansion.
pub fn transition_log_density(x_t: f64, x_0: f64, t: f64, params: JacobiParams, cfg: SeriesConfig) -> Result<f64> {
    let basis = SpectralBasis::new(params, cfg.n_terms);
    let coefs = basis.coefficients(t, x_0, cfg.n_terms)?;
    Ok(basis.log_density_and_score(&coefs, x_t, t, cfg)?.0)
}

/// Score ∂/∂x_t log p(x_t | x_0), term-by-term analytic differentiation.
pub fn transition_score(x_t: f64, x_0: f64, t: f64, params: JacobiParams, cfg: SeriesConfig) -> Result<f64> {
    let basis = SpectralBasis::new(params, cfg.n_terms);
    let coefs = basis.coefficients(t, x_0, cfg.n_terms)?;
    Ok(basis.log_density_and_score(&coefs, x_t, t, cfg)?.1)
}

/// Step count giving Euler–Maruyama increments of at most 0.005.
pub fn em_steps_for(t: f64) -> usize {
    ((t / 0.005).ceil() as usize).max(1)
}

/// Forward Euler–Maruyama draw of x_t given x_0.
///
/// Boundary handling: the state is clamped to [0,1] after every step and
/// the diffusion coefficient uses max(x(1-x), 0), since discretization can
/// overshoot the boundary the exact process never crosses.
pub fn forward_sample<R: Rng + ?Sized>(
    x_0: f64,
    t: f64,
    params: JacobiParams,
    em_steps: usize,
    rng: &mut R,
) -> f64 {
    assert!(em_steps >= 1, "em_steps must be at least 1");
    assert!((0.0..=1.0).contains(&x_0), "x_0 must lie in [0,1]");
    let dt = t / em_steps as f64;
    let sqrt_dt = dt.sqrt();
    let (a, b, s) = (params.a, params.b, params.s);
    let mut x = x_0;
    for _ in 0..em_steps {
        let z: f64 = rng.sample(StandardNormal);
        let drift = 0.5 * s * (a * (1.0 - x) - b * x);
        let diff = (s * (x * (1.0 - x)).max(0.0)).sqrt();
        x = (x + drift * dt + diff * sqrt_dt * z).clamp(0.0, 1.0);
    }
    x
}

/// Forward Euler–Maruyama path; returns the state at each requested time.
///
/// Times must be strictly ascending. Steps are sized so no increment
/// exceeds dt_max.
pub fn forward_path<R: Rng + ?Sized>(
    x_0: f64,
    times: &[f64],
    params: JacobiParams,
    dt_max: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(dt_max > 0.0);
    let (a, b, s) = (params.a, params.b, params.s);
    let mut out = Vec::with_capacity(times.len());
    let mut x = x_0;
    let mut t_cur = 0.0;
    for &t_next in times {
        assert!(t_next > t_cur, "times must be strictly ascending");
        let span = t_next - t_cur;
        let n = (span / dt_max).ceil() as usize;
        let dt = span / n as f64;
        let sqrt_dt = dt.sqrt();
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            let drift = 0.5 * s * (a * (1.0 - x) - b * x);
            let diff = (s * (x * (1.0 - x)).max(0.0)).sqrt();
            x = (x + drift * dt + diff * sqrt_dt * z).clamp(0.0, 1.0);
        }
        t_cur = t_next;
        out.push(x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(a: f64, b: f64, s: f64) -> JacobiParams {
        JacobiParams::new(a, b, s).unwrap()
    }

    #[test]
    fn params_reject_nonpositive() {
        assert!(JacobiParams::new(0.0, 1.0, 1.0).is_err());
        assert!(JacobiParams::new(1.0, -2.0, 1.0).is_err());
        assert!(JacobiParams::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn beta_log_density_known_values() {
        assert_abs_diff_eq!(beta_log_density(0.5, p(1.0, 1.0, 1.0)).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            beta_log_density(0.5, p(2.0, 2.0, 1.0)).unwrap(),
            1.5f64.ln(),
            epsilon = 1e-14
        );
        assert!(beta_log_density(0.0, p(1.0, 1.0, 1.0)).is_err());
        assert!(beta_log_density(1.0, p(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn modified_jacobi_low_orders() {
        // n=0 is identically 1; n=1 at (1,1) is z = 2x-1.
        assert_eq!(modified_jacobi_poly(0, p(1.0, 3.0, 1.0), 0.3), 1.0);
        assert_abs_diff_eq!(modified_jacobi_poly(1, p(1.0, 1.0, 1.0), 0.75), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn modified_jacobi_matches_explicit_series() {
        // Explicit finite-sum form of P_n^{(α,β)}:
        // P_n(z) = Σ_m C(n+α, n-m) C(n+β, m) ((z-1)/2)^m ((z+1)/2)^{n-m}
        fn binom(top: f64, k: usize) -> f64 {
            let mut v = 1.0;
            for i in 0..k {
                v *= (top - i as f64) / (k - i) as f64;
            }
            v
        }
        let (n, a, b, x) = (5usize, 1.0f64, 3.0f64, 0.3f64);
        let (alpha, beta) = (b - 1.0, a - 1.0);
        let z = 2.0 * x - 1.0;
        let mut expect = 0.0;
        for m in 0..=n {
            expect += binom(n as f64 + alpha, n - m)
                * binom(n as f64 + beta, m)
                * ((z - 1.0) / 2.0).powi(m as i32)
                * ((z + 1.0) / 2.0).powi((n - m) as i32);
        }
        assert_abs_diff_eq!(modified_jacobi_poly(n, p(a, b, 1.0), x), expect, epsilon = 1e-12);
    }

    #[test]
    fn poly_derivative_matches_finite_difference() {
        let params = p(1.5, 2.5, 1.0);
        let h = 1e-6;
        for n in [1usize, 2, 5, 9] {
            for x in [0.2, 0.5, 0.8] {
                let fd = (modified_jacobi_poly(n, params, x + h) - modified_jacobi_poly(n, params, x - h)) / (2.0 * h);
                let an = modified_jacobi_poly_deriv(n, params, x);
                assert_abs_diff_eq!(an, fd, epsilon = 1e-4 * an.abs().max(1.0));
            }
        }
    }

    #[test]
    fn eigenvalues_known_and_decreasing() {
        assert_eq!(eigenvalue(0, p(1.0, 3.0, 1.0)), 0.0);
        assert_abs_diff_eq!(eigenvalue(1, p(1.0, 3.0, 1.0)), -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eigenvalue(2, p(1.0, 1.0, 0.5)), -1.5, epsilon = 1e-15);
        let params = p(2.0, 2.0, 1.3);
        for n in 1..50 {
            assert!(eigenvalue(n + 1, params) < eigenvalue(n, params));
        }
    }

    #[test]
    fn spectral_constants_known_values() {
        assert_abs_diff_eq!(spectral_constant(1, p(1.0, 1.0, 1.0)), 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(spectral_constant(2, p(1.0, 1.0, 1.0)), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn spectral_constant_log_path_continuous_at_switch() {
        // direct-product branch (n <= 50) and lgamma branch must agree
        let params = p(1.3, 2.7, 1.0);
        for n in [49, 50, 51, 52] {
            let direct = {
                let mut num = 1.0f64;
                let mut den = 1.0f64;
                for j in 0..n {
                    let jf = j as f64;
                    num *= (params.a + jf) * (params.b + jf);
                    den *= jf + 1.0;
                    if j < n - 1 {
                        den *= params.a + params.b + jf;
                    }
                }
                (num / (den * (2.0 * n as f64 + params.a + params.b - 1.0))).ln()
            };
            assert_abs_diff_eq!(log_spectral_constant(n, params), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn orthonormality_of_eigenfunctions() {
        // ∫ B(x) R_n R_m dx = d_n δ_nm, Gauss–Legendre exact for these degrees
        let params = p(1.0, 3.0, 1.0);
        let (xs, ws) = crate::quad::gauss_legendre_unit(128);
        for n in 1..=10usize {
            for m in n..=10usize {
                let mut acc = 0.0;
                for (&x, &w) in xs.iter().zip(&ws) {
                    let bx = beta_log_density(x, params).unwrap().exp();
                    acc += w * bx * modified_jacobi_poly(n, params, x) * modified_jacobi_poly(m, params, x);
                }
                let expect = if n == m { spectral_constant(n, params) } else { 0.0 };
                assert_abs_diff_eq!(acc, expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn density_reaches_stationary_limit() {
        let params = p(1.0, 3.0, 1.0);
        let cfg = SeriesConfig::default();
        let ld = transition_log_density(0.5, 1.0, 100.0, params, cfg).unwrap();
        assert_abs_diff_eq!(ld, beta_log_density(0.5, params).unwrap(), epsilon = 1e-12);
        let sc = transition_score(0.5, 1.0, 100.0, params, cfg).unwrap();
        assert_abs_diff_eq!(sc, -4.0, epsilon = 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let cfg = SeriesConfig::default();
        let (xs, ws) = crate::quad::unit_rule_256();
        for params in [p(1.0, 1.0, 1.0), p(1.0, 3.0, 1.0)] {
            for t in [0.1, 1.0] {
                for x0 in [0.0, 1.0] {
                    let z: f64 = xs
                        .iter()
                        .zip(ws)
                        .map(|(&x, &w)| w * transition_log_density(x, x0, t, params, cfg).unwrap().exp())
                        .sum();
                    assert_abs_diff_eq!(z, 1.0, epsilon = 1e-4);
                }
            }
        }
    }

    #[test]
    fn small_time_mass_stays_near_start() {
        let params = p(1.0, 3.0, 1.0);
        let cfg = SeriesConfig::default();
        let (xs, ws) = crate::quad::unit_rule_256();
        let mut above = 0.0;
        let mut below = 0.0;
        for (&x, &w) in xs.iter().zip(ws) {
            let d = transition_log_density(x, 1.0, 0.01, params, cfg).unwrap().exp();
            if x > 0.5 {
                above += w * d;
            } else {
                below += w * d;
            }
        }
        assert!(above > below, "mass above 0.5 = {above}, below = {below}");
    }

    #[test]
    fn score_matches_finite_difference() {
        // evaluation points drawn from the process itself, so they lie in
        // the transition density's actual support
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let cfg = SeriesConfig::default();
        let h = 1e-6;
        for params in [p(1.0, 3.0, 1.0), p(2.0, 2.0, 0.5)] {
            for t in [0.01, 0.1, 1.0] {
                for x0 in [0.0, 1.0] {
                    for _ in 0..5 {
                        let x = forward_sample(x0, t, params, em_steps_for(t).max(20), &mut rng)
                            .clamp(1e-3, 1.0 - 1e-3);
                        // 4th-order stencil: truncation error stays below
                        // tolerance even where |log p|''' is ~1/x^3
                        let f = |u: f64| transition_log_density(u, x0, t, params, cfg).unwrap();
                        let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
                        let an = transition_score(x, x0, t, params, cfg).unwrap();
                        let rel = (an - fd).abs() / fd.abs().max(1.0);
                        assert!(rel <= 1e-5, "rel err {rel} at t={t}, x0={x0}, x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn refuses_time_below_floor() {
        let params = p(1.0, 1.0, 1.0);
        let cfg = SeriesConfig::default();
        assert!(transition_log_density(0.5, 0.0, 0.0005, params, cfg).is_err());
        assert!(transition_log_density(0.5, 0.0, MIN_SERIES_TIME, params, cfg).is_ok());
    }

    #[test]
    fn truncation_failure_is_reported() {
        // 1 term at small t leaves a negative series value near x = 0
        // when starting from x_0 = 1.
        let params = p(1.0, 1.0, 1.0);
        let cfg = SeriesConfig { n_terms: 1, use_double_precision: true };
        let r = transition_log_density(0.05, 1.0, 0.001, params, cfg);
        assert!(matches!(r, Err(Error::NumericalTruncation { .. })), "got {r:?}");
    }

    #[test]
    fn single_precision_accumulation_is_close_at_moderate_time() {
        let params = p(1.0, 3.0, 1.0);
        let f64_cfg = SeriesConfig::default();
        let f32_cfg = SeriesConfig { use_double_precision: false, ..f64_cfg };
        let a = transition_log_density(0.4, 1.0, 1.0, params, f64_cfg).unwrap();
        let b = transition_log_density(0.4, 1.0, 1.0, params, f32_cfg).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-4);
    }

    #[test]
    fn forward_sample_symmetry_and_concentration() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        // a=b: draws from 0 and 1 mirror about 0.5 in distribution
        let params = p(2.0, 2.0, 1.0);
        let n = 4000;
        let from0: Vec<f64> = (0..n).map(|_| forward_sample(0.0, 0.5, params, 100, &mut rng)).collect();
        let from1: Vec<f64> = (0..n).map(|_| 1.0 - forward_sample(1.0, 0.5, params, 100, &mut rng)).collect();
        let d = crate::stats::ks_statistic_two_sample(&from0, &from1);
        assert!(d < crate::stats::ks_critical_two_sample_001(n, n), "KS {d}");
        // small-time concentration near the start
        let params = p(1.0, 3.0, 1.0);
        let mean: f64 = (0..2000)
            .map(|_| forward_sample(1.0, 0.01, params, em_steps_for(0.01).max(20), &mut rng))
            .sum::<f64>()
            / 2000.0;
        assert!(mean > 0.9, "mean {mean}");
    }

    #[test]
    fn forward_path_visits_requested_times() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let params = p(1.0, 1.0, 1.0);
        let path = forward_path(0.5, &[0.1, 0.5, 2.0], params, 0.005, &mut rng);
        assert_eq!(path.len(), 3);
        assert!(path.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
