//! Built-in invariant suite: density normalization, score consistency,
//! forward stationarity, score-conversion round trips, and dilation
//! variant agreement. Emits a machine-readable CSV report.

use crate::config::RunConfig;
use rand::Rng;
use simplex_diffusion::error::Result;
use simplex_diffusion::jacobi::{
    em_steps_for, forward_sample, transition_log_density, transition_score, JacobiParams,
    SeriesConfig, SpectralBasis,
};
use simplex_diffusion::quad::unit_rule_256;
use simplex_diffusion::rng::substream;
use simplex_diffusion::sampling::{reverse_sample, DilationVariant, SamplerConfig};
use simplex_diffusion::scorefield::ExactMixtureScore;
use simplex_diffusion::simplex::{
    flat_dirichlet_params, score_v_from_x, score_x_from_v, SpeedMode, StickPoint,
};
use simplex_diffusion::stats::{ks_critical_one_sample_001, ks_statistic_one_sample};
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub name: &'static str,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn row(name: &'static str, statistic: f64, threshold: f64) -> CheckRow {
    CheckRow { name, statistic, threshold, pass: statistic <= threshold }
}

const PARAM_GRID: [(f64, f64); 3] = [(1.0, 1.0), (1.0, 3.0), (2.0, 2.0)];
const TIME_GRID: [f64; 4] = [0.01, 0.1, 1.0, 4.0];

/// ∫ p(x_t | x_0) dx over the unit interval must be 1 for every
/// parameter set, start point, and time.
fn normalization_check() -> Result<CheckRow> {
    let (nodes, weights) = unit_rule_256();
    let cfg = SeriesConfig::new(1000)?;
    let mut worst = 0.0f64;
    for &(a, b) in &PARAM_GRID {
        let p = JacobiParams::new(a, b, 1.0)?;
        let basis = SpectralBasis::new(p, cfg.n_terms);
        for x0 in [0.0, 1.0] {
            for &t in &TIME_GRID {
                let coefs = basis.coefficients(t, x0, cfg.n_terms)?;
                let mut integral = 0.0;
                for (&x, &w) in nodes.iter().zip(weights.iter()) {
                    let (lp, _) = basis.log_density_and_score(&coefs, x, t, cfg)?;
                    integral += w * lp.exp();
                }
                worst = worst.max((integral - 1.0).abs());
            }
        }
    }
    Ok(row("density_normalization", worst, 1e-4))
}

/// Spectral score versus a central finite difference of the log-density,
/// at points drawn from the transition law itself (far tails are below
/// roundoff and carry no usable finite difference).
fn score_fd_check() -> Result<CheckRow> {
    let h = 1e-6;
    let mut rng = substream(0xfd, &[1]);
    let mut worst = 0.0f64;
    for &(a, b) in &PARAM_GRID {
        let p = JacobiParams::new(a, b, 1.0)?;
        for x0 in [0.0, 1.0] {
            for &t in &TIME_GRID {
                let cfg = SeriesConfig::for_time(t);
                for _ in 0..8 {
                    let x = forward_sample(x0, t, p, em_steps_for(t), &mut rng)
                        .clamp(1e-4, 1.0 - 1e-4);
                    let s = transition_score(x, x0, t, p, cfg)?;
                    let lp = transition_log_density(x + h, x0, t, p, cfg)?;
                    let lm = transition_log_density(x - h, x0, t, p, cfg)?;
                    let fd = (lp - lm) / (2.0 * h);
                    if fd.abs() >= 5.0 {
                        worst = worst.max((s - fd).abs() / fd.abs());
                    }
                }
            }
        }
    }
    Ok(row("score_finite_difference", worst, 1e-5))
}

/// Forward integration started from the stationary law must stay there.
fn stationarity_check() -> Result<CheckRow> {
    let n = 4000;
    let mut worst_ratio = 0.0f64;
    let crit = ks_critical_one_sample_001(n);
    for &(a, b) in &[(1.0, 1.0), (1.0, 3.0)] {
        let p = JacobiParams::new(a, b, 1.0)?;
        for &t in &[0.5, 2.0] {
            let mut rng = substream(0xc0de, &[a as u64, b as u64, t as u64]);
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let u: f64 = rng.gen();
                let x0 = 1.0 - (1.0 - u).powf(1.0 / b);
                samples.push(forward_sample(x0, t, p, em_steps_for(t), &mut rng));
            }
            let ks = ks_statistic_one_sample(&samples, |v| 1.0 - (1.0 - v).powf(b));
            worst_ratio = worst_ratio.max(ks / crit);
        }
    }
    Ok(row("forward_stationarity", worst_ratio, 1.0))
}

/// Score conversions between simplex and stick coordinates must invert
/// each other. `flip_sign` injects a wrong-sign conversion so tests can
/// see the check fail.
pub fn jacobian_check(flip_sign: bool) -> Result<CheckRow> {
    let mut rng = substream(0xbead, &[1]);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let v = StickPoint::new((0..3).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect())?;
        let sx: Vec<f64> = (0..4).map(|_| 4.0 * rng.gen::<f64>() - 2.0).collect();
        let sv = score_v_from_x(&sx, &v)?;
        let forwarded: Vec<f64> =
            if flip_sign { sv.iter().map(|s| -s).collect() } else { sv.clone() };
        let back = score_x_from_v(&forwarded, &v)?;
        let sv2 = score_v_from_x(&back, &v)?;
        for (t, o) in sv2.iter().zip(sv.iter()) {
            worst = worst.max((t - o).abs());
        }
    }
    Ok(row("score_conversion_roundtrip", worst, 1e-9))
}

/// The two time-dilation implementations must produce matching
/// trajectories under matched noise.
fn dilation_check() -> Result<CheckRow> {
    let params = flat_dirichlet_params(3, SpeedMode::Unit)?;
    let field = ExactMixtureScore::new(&[vec![0, 1], vec![2, 0], vec![1, 2]], 3, &params)?;
    let mut worst = 0.0f64;
    for &c in &[2.0, 4.0, 8.0] {
        let mk = |variant: DilationVariant| SamplerConfig {
            steps: 40,
            t_min: 0.05,
            t_max: 3.0,
            dilation_factor: c,
            dilation_start_fraction: 0.5,
            dilation_variant: variant,
            seed: 77,
            ..SamplerConfig::default()
        };
        let a = reverse_sample(&field, &params, 8, 2, &mk(DilationVariant::SdeAccelerate), None)?;
        let b = reverse_sample(&field, &params, 8, 2, &mk(DilationVariant::TimeRescale), None)?;
        for (x, y) in a.x.iter().zip(b.x.iter()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(row("dilation_variant_agreement", worst, 1e-10))
}

/// Run the complete suite. The sign flip is a test hook for verifying
/// that a broken conversion is caught; production callers pass false.
pub fn run_all(flip_jacobian_sign: bool) -> Result<Vec<CheckRow>> {
    Ok(vec![
        normalization_check()?,
        score_fd_check()?,
        stationarity_check()?,
        jacobian_check(flip_jacobian_sign)?,
        dilation_check()?,
    ])
}

pub fn report_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from("check,statistic,threshold,pass\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.6e},{:.6e},{}", r.name, r.statistic, r.threshold, r.pass);
    }
    s
}

/// Returns whether every check passed.
pub fn run(cfg: &RunConfig, out: Option<PathBuf>) -> Result<bool> {
    let rows = run_all(false)?;
    let csv = report_csv(&rows);
    let path = super::output_path(cfg, "check_report.csv", out);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&path, csv)?;
    cfg.write_resolved("check")?;
    let mut all_pass = true;
    for r in &rows {
        println!(
            "{:<28} stat {:>12.4e}  threshold {:>9.1e}  {}",
            r.name,
            r.statistic,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" }
        );
        all_pass &= r.pass;
    }
    println!("report: {}", path.display());
    Ok(all_pass)
}
