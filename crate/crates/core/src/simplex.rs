//! Stick-breaking transforms between simplex coordinates x and stick
//! coordinates v, their Jacobians, and score conversion between spaces.
//!
//! x_1 = v_1, x_i = v_i·Π_{j<i}(1-v_j), x_k = Π_{j<k}(1-v_j). The map
//! restricted to the first k-1 simplex coordinates is lower-triangular in
//! v with log|det ∂x/∂v| = Σ_{j≤k-2} (k-1-j)·log(1-v_j).

use crate::error::{Error, Result};
use crate::jacobi::JacobiParams;

/// Clamp applied to v before score conversions; keeps 1/(1-v_j) and 1/P_j
/// finite at simplex boundaries.
pub const INTERIOR_EPS: f64 = 1e-8;

/// Point on the probability simplex: k nonnegative reals summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexPoint {
    x: Vec<f64>,
}

impl SimplexPoint {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::InvalidParameter("simplex point needs k >= 2 components".into()));
        }
        if x.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::Domain(format!("simplex components must be nonnegative, got {x:?}")));
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("simplex components must sum to 1, got {sum}")));
        }
        Ok(Self { x })
    }

    /// One-hot vertex for category index (0-based).
    pub fn one_hot(k: usize, category: usize) -> Result<Self> {
        if k < 2 || category >= k {
            return Err(Error::InvalidParameter(format!("one_hot needs category < k, got {category} vs k={k}")));
        }
        let mut x = vec![0.0; k];
        x[category] = 1.0;
        Ok(Self { x })
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.x
    }

    pub fn into_components(self) -> Vec<f64> {
        self.x
    }
}

/// Stick coordinates: k-1 values in [0,1] plus a mask of which entries the
/// inverse transform actually determined. Coordinates after the first unit
/// stick of a one-hot input carry no information and are marked false.
#[derive(Clone, Debug, PartialEq)]
pub struct StickPoint {
    v: Vec<f64>,
    determined: Vec<bool>,
}

impl StickPoint {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidParameter("stick point needs at least 1 coordinate".into()));
        }
        if v.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::Domain(format!("stick coordinates must lie in [0,1], got {v:?}")));
        }
        let determined = vec![true; v.len()];
        Ok(Self { v, determined })
    }

    pub fn with_mask(v: Vec<f64>, determined: Vec<bool>) -> Result<Self> {
        if v.len() != determined.len() {
            return Err(Error::ShapeMismatch("mask length must match coordinate count".into()));
        }
        let mut p = Self::new(v)?;
        p.determined = determined;
        Ok(p)
    }

    /// Category count k of the simplex this parameterizes.
    pub fn k(&self) -> usize {
        self.v.len() + 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.v
    }

    pub fn determined(&self) -> &[bool] {
        &self.determined
    }
}

/// Stick-breaking map v → x.
pub fn stick_break(v: &StickPoint) -> SimplexPoint {
    let km1 = v.v.len();
    let mut x = Vec::with_capacity(km1 + 1);
    let mut remaining = 1.0;
    for &vj in &v.v {
        x.push(vj * remaining);
        remaining *= 1.0 - vj;
    }
    x.push(remaining);
    SimplexPoint { x }
}

/// Inverse stick-breaking x → v: v_i = x_i / (1 - Σ_{j<i} x_j).
///
/// Coordinates whose denominator has vanished (at or below 1e-12, as after
/// the unit coordinate of a one-hot input) are set to 0 and masked
/// undetermined.
pub fn inverse_stick_break(x: &SimplexPoint) -> StickPoint {
    let k = x.x.len();
    let mut v = Vec::with_capacity(k - 1);
    let mut determined = Vec::with_capacity(k - 1);
    let mut remaining = 1.0;
    for i in 0..k - 1 {
        if remaining <= 1e-12 {
            v.push(0.0);
            determined.push(false);
        } else {
            v.push((x.x[i] / remaining).clamp(0.0, 1.0));
            determined.push(true);
        }
        remaining -= x.x[i];
    }
    StickPoint { v, determined }
}

/// log|det ∂x/∂v| of the stick-breaking map restricted to the first k-1
/// simplex coordinates: Σ_{j=1}^{k-2} (k-1-j)·log(1-v_j).
pub fn log_det_jacobian(v: &StickPoint) -> Result<f64> {
    let km1 = v.v.len();
    let mut acc = 0.0;
    for j in 0..km1.saturating_sub(1) {
        if v.v[j] >= 1.0 {
            return Err(Error::SingularTransform(format!("v_{} = 1 makes the stick map singular", j + 1)));
        }
        acc += (km1 - 1 - j) as f64 * (1.0 - v.v[j]).ln();
    }
    Ok(acc)
}

fn clamped_interior(v: &StickPoint) -> Result<Vec<f64>> {
    if v.v.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(Error::Domain(format!("stick coordinates must lie in [0,1], got {:?}", v.v)));
    }
    Ok(v.v.iter().map(|&c| c.clamp(INTERIOR_EPS, 1.0 - INTERIOR_EPS)).collect())
}

/// Convert an x-space score (k components) to a v-space score (k-1):
/// sv_j = sx_j·P_j - (Σ_{i>j} sx_i·x_i)/(1-v_j) - (k-1-j)/(1-v_j),
/// with prefix products P_j = Π_{l<j}(1-v_l); cost linear in k.
///
/// The last term is the gradient of log|det ∂x/∂v|, so the result is the
/// score of the pushed-forward density p_v(v) = p_x(x(v))·|det ∂x/∂v|.
pub fn score_v_from_x(score_x: &[f64], v: &StickPoint) -> Result<Vec<f64>> {
    let km1 = v.v.len();
    if score_x.len() != km1 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "score_x has {} components, expected k = {}",
            score_x.len(),
            km1 + 1
        )));
    }
    let vc = clamped_interior(v)?;
    // x and prefix products from the clamped sticks
    let mut x = vec![0.0; km1 + 1];
    let mut prefix = vec![1.0; km1];
    let mut remaining = 1.0;
    for j in 0..km1 {
        prefix[j] = remaining;
        x[j] = vc[j] * remaining;
        remaining *= 1.0 - vc[j];
    }
    x[km1] = remaining;
    // suffix sums T_j = Σ_{i>j} sx_i x_i
    let mut out = vec![0.0; km1];
    let mut suffix = score_x[km1] * x[km1];
    for j in (0..km1).rev() {
        let one_minus = 1.0 - vc[j];
        let det_grad = (km1 - 1 - j) as f64 / one_minus;
        out[j] = score_x[j] * prefix[j] - suffix / one_minus - det_grad;
        suffix += score_x[j] * x[j];
    }
    Ok(out)
}

/// Convert a v-space score (k-1 components) to an x-space score (k).
///
/// The conversion is underdetermined along the simplex normal (1,…,1);
/// the returned representative is the orthogonal tangent-space one
/// (components sum to zero). Solved backward in linear time from
/// t_j := sv_j + (k-1-j)/(1-v_j) = sx_j·P_j - T_j/(1-v_j).
pub fn score_x_from_v(score_v: &[f64], v: &StickPoint) -> Result<Vec<f64>> {
    let km1 = v.v.len();
    if score_v.len() != km1 {
        return Err(Error::ShapeMismatch(format!(
            "score_v has {} components, expected k-1 = {}",
            score_v.len(),
            km1
        )));
    }
    let vc = clamped_interior(v)?;
    let mut x = vec![0.0; km1 + 1];
    let mut prefix = vec![1.0; km1];
    let mut remaining = 1.0;
    for j in 0..km1 {
        prefix[j] = remaining;
        x[j] = vc[j] * remaining;
        remaining *= 1.0 - vc[j];
    }
    x[km1] = remaining;
    let mut sx = vec![0.0; km1 + 1];
    let mut suffix = 0.0; // T_j with gauge sx_k = 0
    for j in (0..km1).rev() {
        let one_minus = 1.0 - vc[j];
        let t_j = score_v[j] + (km1 - 1 - j) as f64 / one_minus;
        sx[j] = (t_j + suffix / one_minus) / prefix[j];
        suffix += sx[j] * x[j];
    }
    let mean = sx.iter().sum::<f64>() / sx.len() as f64;
    for c in &mut sx {
        *c -= mean;
    }
    Ok(sx)
}

/// J·u for the stick-breaking Jacobian J = ∂x/∂v (k × k-1), in O(k):
/// (Ju)_i = u_i·P_i - x_i·Σ_{j<i} u_j/(1-v_j), with the last row
/// (Ju)_k = -x_k·Σ_j u_j/(1-v_j).
pub fn stick_jacobian_times(u: &[f64], v: &StickPoint) -> Result<Vec<f64>> {
    let km1 = v.v.len();
    if u.len() != km1 {
        return Err(Error::ShapeMismatch(format!("u has {} components, expected k-1 = {km1}", u.len())));
    }
    let vc = clamped_interior(v)?;
    let mut out = vec![0.0; km1 + 1];
    let mut prefix_x = 1.0;
    let mut acc = 0.0; // Σ_{j<i} u_j/(1-v_j)
    for i in 0..km1 {
        let x_i = vc[i] * prefix_x;
        out[i] = u[i] * prefix_x - x_i * acc;
        acc += u[i] / (1.0 - vc[i]);
        prefix_x *= 1.0 - vc[i];
    }
    out[km1] = -prefix_x * acc;
    Ok(out)
}

/// Jᵀ·u for the stick-breaking Jacobian, in O(k):
/// (Jᵀu)_j = u_j·P_j - (Σ_{i>j} u_i·x_i)/(1-v_j).
pub fn stick_jacobian_transpose_times(u: &[f64], v: &StickPoint) -> Result<Vec<f64>> {
    let km1 = v.v.len();
    if u.len() != km1 + 1 {
        return Err(Error::ShapeMismatch(format!("u has {} components, expected k = {}", u.len(), km1 + 1)));
    }
    let vc = clamped_interior(v)?;
    let mut x = vec![0.0; km1 + 1];
    let mut prefix = vec![1.0; km1];
    let mut remaining = 1.0;
    for j in 0..km1 {
        prefix[j] = remaining;
        x[j] = vc[j] * remaining;
        remaining *= 1.0 - vc[j];
    }
    x[km1] = remaining;
    let mut out = vec![0.0; km1];
    let mut suffix = u[km1] * x[km1];
    for j in (0..km1).rev() {
        out[j] = u[j] * prefix[j] - suffix / (1.0 - vc[j]);
        suffix += u[j] * x[j];
    }
    Ok(out)
}

/// Speed-factor convention for the flat-Dirichlet process family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeedMode {
    /// s = 1 for every stick.
    Unit,
    /// s = 2/(a+b), equalizing the slowest relaxation rate across sticks.
    TwoOverAPlusB,
}

/// Per-stick Jacobi parameters whose stationary product law is the flat
/// Dirichlet on k categories: Beta(1, k-1), Beta(1, k-2), …, Beta(1, 1).
pub fn flat_dirichlet_params(k: usize, mode: SpeedMode) -> Result<Vec<JacobiParams>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("flat Dirichlet needs k >= 2, got {k}")));
    }
    (1..k)
        .map(|i| {
            let b = (k - i) as f64;
            let s = match mode {
                SpeedMode::Unit => 1.0,
                SpeedMode::TwoOverAPlusB => 2.0 / (1.0 + b),
            };
            JacobiParams::new(1.0, b, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sticks(v: &[f64]) -> StickPoint {
        StickPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn stick_break_known_values() {
        let x = stick_break(&sticks(&[0.5, 0.5, 0.5]));
        assert_eq!(x.components(), &[0.5, 0.25, 0.125, 0.125]);
        let x = stick_break(&sticks(&[1.0, 0.3, 0.9]));
        assert_eq!(x.components(), &[1.0, 0.0, 0.0, 0.0]);
        let x = stick_break(&sticks(&[0.0, 0.0, 0.0]));
        assert_eq!(x.components(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn inverse_marks_undetermined_after_hot_coordinate() {
        let v = inverse_stick_break(&SimplexPoint::one_hot(4, 0).unwrap());
        assert_eq!(v.coords()[0], 1.0);
        assert_eq!(v.determined(), &[true, false, false]);
        let v = inverse_stick_break(&SimplexPoint::one_hot(4, 2).unwrap());
        assert_eq!(v.coords(), &[0.0, 0.0, 1.0]);
        assert_eq!(v.determined(), &[true, true, true]);
    }

    #[test]
    fn log_det_known_values() {
        assert_eq!(log_det_jacobian(&sticks(&[0.3])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            log_det_jacobian(&sticks(&[0.5, 0.5, 0.5])).unwrap(),
            3.0 * 0.5f64.ln(),
            epsilon = 1e-15
        );
        assert!(log_det_jacobian(&sticks(&[1.0, 0.5, 0.5])).is_err());
    }

    /// Numeric log|det| of the (k-1)×(k-1) Jacobian of v ↦ x_{1..k-1}.
    fn numeric_log_det(v: &[f64]) -> f64 {
        let km1 = v.len();
        let h = 1e-6;
        let mut jac = vec![vec![0.0; km1]; km1];
        for j in 0..km1 {
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[j] += h;
            vm[j] -= h;
            let xp = stick_break(&sticks(&vp));
            let xm = stick_break(&sticks(&vm));
            for i in 0..km1 {
                jac[i][j] = (xp.components()[i] - xm.components()[i]) / (2.0 * h);
            }
        }
        // Gaussian elimination with partial pivoting
        let mut logdet = 0.0;
        for col in 0..km1 {
            let piv = (col..km1).max_by(|&r, &s| jac[r][col].abs().partial_cmp(&jac[s][col].abs()).unwrap()).unwrap();
            jac.swap(col, piv);
            logdet += jac[col][col].abs().ln();
            for r in col + 1..km1 {
                let f = jac[r][col] / jac[col][col];
                for c in col..km1 {
                    jac[r][c] -= f * jac[col][c];
                }
            }
        }
        logdet
    }

    #[test]
    fn log_det_matches_numeric_jacobian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for k in [3usize, 4, 5, 9] {
            for _ in 0..5 {
                let v: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.05..0.95)).collect();
                let closed = log_det_jacobian(&sticks(&v)).unwrap();
                assert_abs_diff_eq!(closed, numeric_log_det(&v), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn jacobian_products_match_numeric_jacobian() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for k in [2usize, 3, 5, 8] {
            let v: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(0.05..0.95)).collect();
            // full numeric J: (k rows) x (k-1 cols)
            let mut jac = vec![vec![0.0; k - 1]; k];
            for j in 0..k - 1 {
                let mut vp = v.clone();
                let mut vm = v.clone();
                vp[j] += h;
                vm[j] -= h;
                let xp = stick_break(&sticks(&vp));
                let xm = stick_break(&sticks(&vm));
                for i in 0..k {
                    jac[i][j] = (xp.components()[i] - xm.components()[i]) / (2.0 * h);
                }
            }
            let u: Vec<f64> = (0..k - 1).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ju = stick_jacobian_times(&u, &sticks(&v)).unwrap();
            for i in 0..k {
                let want: f64 = (0..k - 1).map(|j| jac[i][j] * u[j]).sum();
                assert_abs_diff_eq!(ju[i], want, epsilon = 1e-8);
            }
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let jtw = stick_jacobian_transpose_times(&w, &sticks(&v)).unwrap();
            for j in 0..k - 1 {
                let want: f64 = (0..k).map(|i| jac[i][j] * w[i]).sum();
                assert_abs_diff_eq!(jtw[j], want, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn two_category_score_conversions_are_differences() {
        let v = sticks(&[0.4]);
        let sv = score_v_from_x(&[3.0, 1.0], &v).unwrap();
        assert_abs_diff_eq!(sv[0], 2.0, epsilon = 1e-12);
        let sx = score_x_from_v(&[2.0], &v).unwrap();
        assert_abs_diff_eq!(sx[0] - sx[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sx[0] + sx[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn conversions_match_closed_form_density_gradients() {
        // Dirichlet(α) has closed-form scores in both parameterizations:
        // x-space:  ∂/∂x_i Σ (α_j - 1) ln x_j = (α_i - 1)/x_i
        // v-space:  each v_j ~ Beta(α_j, Σ_{l>j} α_l) independently.
        let alpha = [2.0, 3.0, 1.5, 2.5];
        let v = sticks(&[0.3, 0.6, 0.4]);
        let x = stick_break(&v);
        let sx: Vec<f64> = x.components().iter().zip(&alpha).map(|(&xi, &al)| (al - 1.0) / xi).collect();
        let sv = score_v_from_x(&sx, &v).unwrap();
        for j in 0..3 {
            let a = alpha[j];
            let b: f64 = alpha[j + 1..].iter().sum();
            let expect = (a - 1.0) / v.coords()[j] - (b - 1.0) / (1.0 - v.coords()[j]);
            assert_abs_diff_eq!(sv[j], expect, epsilon = 1e-9);
        }
        // and back: x-space representative equals the centered closed form
        let sx_rt = score_x_from_v(&sv, &v).unwrap();
        let mean = sx.iter().sum::<f64>() / 4.0;
        for i in 0..4 {
            assert_abs_diff_eq!(sx_rt[i], sx[i] - mean, epsilon = 1e-9);
        }
    }

    #[test]
    fn flat_dirichlet_param_tables() {
        let ps = flat_dirichlet_params(4, SpeedMode::Unit).unwrap();
        let triples: Vec<(f64, f64, f64)> = ps.iter().map(|p| (p.a, p.b, p.s)).collect();
        assert_eq!(triples, vec![(1.0, 3.0, 1.0), (1.0, 2.0, 1.0), (1.0, 1.0, 1.0)]);
        let ps = flat_dirichlet_params(4, SpeedMode::TwoOverAPlusB).unwrap();
        let speeds: Vec<f64> = ps.iter().map(|p| p.s).collect();
        assert_eq!(speeds, vec![0.5, 2.0 / 3.0, 1.0]);
        let ps = flat_dirichlet_params(2, SpeedMode::TwoOverAPlusB).unwrap();
        assert_eq!((ps[0].a, ps[0].b, ps[0].s), (1.0, 1.0, 1.0));
    }

    proptest! {
        #[test]
        fn stick_break_lands_on_simplex(v in proptest::collection::vec(0.0f64..=1.0, 1..8)) {
            let x = stick_break(&sticks(&v));
            prop_assert!(x.components().iter().all(|&c| c >= 0.0));
            let sum: f64 = x.components().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn interior_roundtrip_is_identity(v in proptest::collection::vec(0.01f64..=0.99, 1..8)) {
            let x = stick_break(&sticks(&v));
            let v_rt = inverse_stick_break(&x);
            prop_assert!(v_rt.determined().iter().all(|&d| d));
            for (orig, rt) in v.iter().zip(v_rt.coords()) {
                prop_assert!((orig - rt).abs() < 1e-12);
            }
        }

        #[test]
        fn score_conversions_are_inverse_on_tangent(
            v in proptest::collection::vec(0.05f64..=0.95, 2..6),
            raw in proptest::collection::vec(-5.0f64..=5.0, 6),
        ) {
            let vp = sticks(&v);
            let k = v.len() + 1;
            let sx: Vec<f64> = raw[..k].to_vec();
            let sv = score_v_from_x(&sx, &vp).unwrap();
            let sx_rt = score_x_from_v(&sv, &vp).unwrap();
            // roundtrip returns the centered (tangent) representative
            let mean = sx.iter().sum::<f64>() / k as f64;
            for i in 0..k {
                prop_assert!((sx_rt[i] - (sx[i] - mean)).abs() < 1e-8, "component {i}");
            }
            // and the v-side roundtrip is exact
            let sv_rt = score_v_from_x(&sx_rt, &vp).unwrap();
            for j in 0..k - 1 {
                prop_assert!((sv_rt[j] - sv[j]).abs() < 1e-8);
            }
        }
    }
}
