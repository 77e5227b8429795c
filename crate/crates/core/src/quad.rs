//! Gauss–Legendre quadrature on a finite interval.

use std::sync::OnceLock;

/// Nodes and weights of the n-point Gauss–Legendre rule on (-1, 1).
///
/// Nodes are the roots of the Legendre polynomial P_n, found by Newton
/// iteration from the Chebyshev-angle initial guess; weights from the
/// standard derivative identity. Exact for polynomials of degree 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess for the i-th positive root.
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence up to degree n at z.
            let mut p0 = 1.0;
            let mut p1 = z;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z); derivative from the standard identity.
            pp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Nodes and weights mapped to the open interval (0, 1).
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|&t| 0.5 * t).collect(),
    )
}

/// Cached 256-node rule on (0, 1), the default for density normalization checks.
pub fn unit_rule_256() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(256))
}

/// Composite Gauss–Legendre rule on (0, 1) with panels refined geometrically
/// toward both endpoints, for integrands concentrated near the boundary.
pub fn unit_rule_refined(panels_per_side: usize, nodes_per_panel: usize, edge: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(edge > 0.0 && edge < 0.5);
    let (xg, wg) = gauss_legendre(nodes_per_panel);
    let mut breaks = Vec::with_capacity(2 * panels_per_side + 1);
    let ratio = (0.5_f64 / edge).powf(1.0 / panels_per_side as f64);
    let mut p = edge;
    breaks.push(0.0);
    for _ in 0..panels_per_side {
        breaks.push(p);
        p *= ratio;
    }
    // mirror about 0.5; breaks ascend from 0 to 1
    let left: Vec<f64> = breaks.clone();
    for i in (0..left.len() - 1).rev() {
        breaks.push(1.0 - left[i + 1]);
    }
    breaks.push(1.0);
    breaks[panels_per_side + 1] = 0.5; // exact midpoint, avoids roundoff overlap
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    for win in breaks.windows(2) {
        let (lo, hi) = (win[0], win[1]);
        let h = 0.5 * (hi - lo);
        let c = 0.5 * (lo + hi);
        for (x, w) in xg.iter().zip(&wg) {
            xs.push(c + h * x);
            ws.push(h * w);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8);
        // degree 15 is the highest exact degree for 8 nodes
        let val: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_abs_diff_eq!(val, 2.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn unit_interval_weights_sum_to_one() {
        for n in [4, 64, 256] {
            let (_, w) = gauss_legendre_unit(n);
            assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn refined_rule_captures_boundary_mass() {
        // Beta(50, 1) density has nearly all mass within 1e-1 of x = 1.
        let (x, w) = unit_rule_refined(24, 16, 1e-10);
        let total: f64 = x.iter().zip(&w).map(|(x, w)| w * 50.0 * x.powi(49)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn legendre_matches_known_5_node_rule() {
        let (x, w) = gauss_legendre(5);
        assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[4], 0.9061798459386640, epsilon = 1e-13);
        assert_abs_diff_eq!(w[2], 0.5688888888888889, epsilon = 1e-13);
    }
}
