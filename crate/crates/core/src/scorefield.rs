//! Score-function abstraction and the exact Bayes-mixture oracle: the
//! closed-form marginal score of a finite dataset diffused for time t,
//! computed from posterior-weighted conditional transition scores.

use crate::error::{Error, Result};
use crate::jacobi::{JacobiParams, SeriesConfig, SpectralBasis};
use crate::simplex::{inverse_stick_break, score_x_from_v, SimplexPoint, INTERIOR_EPS};
use crate::stats::logsumexp;
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use std::collections::HashMap;

/// A time-indexed score field on sequences of simplex points.
///
/// eval takes a batch of shape (n_seq, len, k) with every position row on
/// the simplex, and returns x-space scores of the same shape, each row the
/// mean-centered tangent representative.
pub trait ScoreField: Send + Sync {
    fn k(&self) -> usize;
    fn seq_len(&self) -> usize;
    fn cond_dim(&self) -> usize {
        0
    }
    fn eval(
        &self,
        x: ArrayView3<f64>,
        t: f64,
        condition: Option<ArrayView2<f64>>,
    ) -> Result<Array3<f64>>;
}

/// Case index per stick relative to a datum's hot category: the stick is
/// determined at 0, determined at 1, or stationary.
const CASE_FROM0: usize = 0;
const CASE_FROM1: usize = 1;
const CASE_STATIONARY: usize = 2;

fn stick_case(stick: usize, hot: usize) -> usize {
    match stick.cmp(&hot) {
        std::cmp::Ordering::Less => CASE_FROM0,
        std::cmp::Ordering::Equal => CASE_FROM1,
        std::cmp::Ordering::Greater => CASE_STATIONARY,
    }
}

/// Exact marginal score of a finite one-hot dataset under independent
/// per-stick diffusion: a Bayes mixture whose posterior weights couple all
/// positions of a sequence.
pub struct ExactMixtureScore {
    /// category index per (datum, position)
    categories: Array2<usize>,
    k: usize,
    params: Vec<JacobiParams>,
    bases: Vec<SpectralBasis>,
    /// condition bit-pattern -> rows of categories it selects
    condition_groups: Option<HashMap<Vec<u64>, Vec<usize>>>,
    cond_dim: usize,
}

/// Per-call cache: spectral coefficients for both boundary starts of every
/// stick process at a fixed time.
struct StickTables {
    t: f64,
    cfg: SeriesConfig,
    coefs0: Vec<Vec<f64>>,
    coefs1: Vec<Vec<f64>>,
    /// Full-term fallback tables. The per-time default term count is tuned
    /// for typical query points; reverse sampling also queries deep tails
    /// (sticks clamped at the interior edge) where a short series cannot
    /// certify the sign of an essentially-zero density. Re-evaluating such
    /// points with the full series either resolves them or lands in the
    /// legitimate roundoff floor. Empty when the default is already full.
    retry_cfg: SeriesConfig,
    retry0: Vec<Vec<f64>>,
    retry1: Vec<Vec<f64>>,
}

impl ExactMixtureScore {
    /// sequences: per datum, the category index at each position.
    pub fn new(sequences: &[Vec<usize>], k: usize, params: &[JacobiParams]) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::InvalidParameter("dataset must be nonempty".into()));
        }
        if k < 2 || params.len() != k - 1 {
            return Err(Error::ShapeMismatch(format!(
                "need k-1={} stick processes, got {}",
                k.max(2) - 1,
                params.len()
            )));
        }
        let len = sequences[0].len();
        if len == 0 || sequences.iter().any(|s| s.len() != len) {
            return Err(Error::ShapeMismatch("sequences must share a nonzero length".into()));
        }
        if sequences.iter().flatten().any(|&c| c >= k) {
            return Err(Error::Domain(format!("category out of range for k={k}")));
        }
        let mut categories = Array2::zeros((sequences.len(), len));
        for (d, seq) in sequences.iter().enumerate() {
            for (l, &c) in seq.iter().enumerate() {
                categories[(d, l)] = c;
            }
        }
        let bases = params
            .iter()
            .map(|&p| SpectralBasis::new(p, SeriesConfig::default().n_terms))
            .collect();
        Ok(Self {
            categories,
            k,
            params: params.to_vec(),
            bases,
            condition_groups: None,
            cond_dim: 0,
        })
    }

    /// Attach per-datum condition vectors; eval then mixes only over data
    /// whose condition matches the query bit-for-bit.
    pub fn with_conditions(mut self, conditions: &[Vec<f64>]) -> Result<Self> {
        if conditions.len() != self.categories.nrows() {
            return Err(Error::ShapeMismatch("one condition vector per datum".into()));
        }
        let dim = conditions[0].len();
        if dim == 0 || conditions.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("conditions must share a nonzero length".into()));
        }
        let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for (d, c) in conditions.iter().enumerate() {
            groups.entry(condition_key(c)).or_default().push(d);
        }
        self.condition_groups = Some(groups);
        self.cond_dim = dim;
        Ok(self)
    }

    /// The unconditional oracle over the sub-dataset selected by a predicate
    /// on the category sequence.
    pub fn subset(&self, keep: impl Fn(&[usize]) -> bool) -> Result<Self> {
        let rows: Vec<Vec<usize>> = self
            .categories
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .filter(|r| keep(r))
            .collect();
        Self::new(&rows, self.k, &self.params)
    }

    pub fn n_data(&self) -> usize {
        self.categories.nrows()
    }

    fn tables(&self, t: f64) -> Result<StickTables> {
        let cfg = SeriesConfig::for_time(t);
        let retry_cfg = SeriesConfig::default();
        let mut coefs0 = Vec::with_capacity(self.params.len());
        let mut coefs1 = Vec::with_capacity(self.params.len());
        let mut retry0 = Vec::new();
        let mut retry1 = Vec::new();
        for basis in &self.bases {
            coefs0.push(basis.coefficients(t, 0.0, cfg.n_terms)?);
            coefs1.push(basis.coefficients(t, 1.0, cfg.n_terms)?);
            if cfg.n_terms < retry_cfg.n_terms {
                retry0.push(basis.coefficients(t, 0.0, retry_cfg.n_terms)?);
                retry1.push(basis.coefficients(t, 1.0, retry_cfg.n_terms)?);
            }
        }
        Ok(StickTables { t, cfg, coefs0, coefs1, retry_cfg, retry0, retry1 })
    }

    /// (log-density, v-score) for one stick value under all three cases.
    fn stick_cases(&self, j: usize, v: f64, tb: &StickTables) -> Result<[(f64, f64); 3]> {
        let p = self.params[j];
        let transition = |coefs: &[f64], retry: &[Vec<f64>]| match self.bases[j]
            .log_density_and_score(coefs, v, tb.t, tb.cfg)
        {
            Err(Error::NumericalTruncation { .. }) if !retry.is_empty() => {
                self.bases[j].log_density_and_score(&retry[j], v, tb.t, tb.retry_cfg)
            }
            r => r,
        };
        let (lp0, sc0) = transition(&tb.coefs0[j], &tb.retry0)?;
        let (lp1, sc1) = transition(&tb.coefs1[j], &tb.retry1)?;
        let lps = crate::jacobi::beta_log_density(v, p)?;
        let scs = p.stationary_score(v);
        Ok([(lp0, sc0), (lp1, sc1), (lps, scs)])
    }

    /// Mixture rows to use for a query condition.
    fn rows_for(&self, condition: Option<&[f64]>) -> Result<Vec<usize>> {
        match (&self.condition_groups, condition) {
            (None, None) => Ok((0..self.categories.nrows()).collect()),
            (Some(groups), Some(c)) => {
                if c.len() != self.cond_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "condition has dim {}, oracle expects {}",
                        c.len(),
                        self.cond_dim
                    )));
                }
                groups
                    .get(&condition_key(c))
                    .cloned()
                    .ok_or_else(|| Error::Domain("condition matches no dataset entry".into()))
            }
            (None, Some(_)) => Err(Error::UnsupportedConfiguration(
                "oracle was built without conditions".into(),
            )),
            (Some(_), None) => Err(Error::UnsupportedConfiguration(
                "conditional oracle requires a condition".into(),
            )),
        }
    }

    /// Per-stick v coordinates of one sequence of simplex points. Points
    /// whose inversion collapses onto a stick boundary (mass below the
    /// representable remainder) are clamped to the interior, matching how
    /// the samplers clamp their own state before score evaluation.
    fn to_sticks(&self, x_seq: &[SimplexPoint]) -> Result<Vec<Vec<f64>>> {
        x_seq
            .iter()
            .map(|x| {
                if x.k() != self.k {
                    return Err(Error::ShapeMismatch(format!(
                        "point has k={}, oracle has k={}",
                        x.k(),
                        self.k
                    )));
                }
                let sticks = inverse_stick_break(x);
                Ok(sticks
                    .coords()
                    .iter()
                    .map(|&vj| vj.clamp(INTERIOR_EPS, 1.0 - INTERIOR_EPS))
                    .collect())
            })
            .collect()
    }

    /// Exact mixture log-density in stick coordinates: log mean over data
    /// of the product of per-stick conditional densities.
    pub fn log_density_v(&self, x_seq: &[SimplexPoint], t: f64) -> Result<f64> {
        let v = self.to_sticks(x_seq)?;
        let tb = self.tables(t)?;
        let rows = self.rows_for(None)?;
        let (logw, _) = self.per_datum_terms(&v, &tb, &rows)?;
        Ok(logsumexp(&logw) - (rows.len() as f64).ln())
    }

    /// Mixture log-density in x coordinates (stick density plus the
    /// inverse-transform volume change).
    pub fn log_density_x(&self, x_seq: &[SimplexPoint], t: f64) -> Result<f64> {
        let mut logp = self.log_density_v(x_seq, t)?;
        for x in x_seq {
            let sticks = inverse_stick_break(x);
            logp -= crate::simplex::log_det_jacobian(&sticks)?;
        }
        Ok(logp)
    }

    /// log-weight per datum and the per-(datum-case) score assembly inputs:
    /// cases[l][j] = [(logp, score); 3].
    #[allow(clippy::type_complexity)]
    fn per_datum_terms(
        &self,
        v: &[Vec<f64>],
        tb: &StickTables,
        rows: &[usize],
    ) -> Result<(Vec<f64>, Vec<Vec<[(f64, f64); 3]>>)> {
        let len = v.len();
        let mut cases = Vec::with_capacity(len);
        for v_l in v {
            let mut row = Vec::with_capacity(self.k - 1);
            for (j, &vj) in v_l.iter().enumerate() {
                row.push(self.stick_cases(j, vj, tb)?);
            }
            cases.push(row);
        }
        let mut logw = Vec::with_capacity(rows.len());
        for &d in rows {
            let mut lw = 0.0;
            for (l, case_row) in cases.iter().enumerate() {
                let hot = self.categories[(d, l)];
                for (j, c3) in case_row.iter().enumerate() {
                    lw += c3[stick_case(j, hot)].0;
                }
            }
            logw.push(lw);
        }
        Ok((logw, cases))
    }

    /// Posterior-weighted conditional v-scores for one sequence:
    /// scores[l][j] = d log p_t(v) / d v_{l,j}.
    pub fn score_v(&self, x_seq: &[SimplexPoint], t: f64, condition: Option<&[f64]>) -> Result<Vec<Vec<f64>>> {
        let v = self.to_sticks(x_seq)?;
        let tb = self.tables(t)?;
        let rows = self.rows_for(condition)?;
        let (logw, cases) = self.per_datum_terms(&v, &tb, &rows)?;
        let lse = logsumexp(&logw);
        let weights: Vec<f64> = logw.iter().map(|&lw| (lw - lse).exp()).collect();
        let mut scores = vec![vec![0.0; self.k - 1]; v.len()];
        for (w, &d) in weights.iter().zip(rows.iter()) {
            for (l, row) in scores.iter_mut().enumerate() {
                let hot = self.categories[(d, l)];
                for (j, s) in row.iter_mut().enumerate() {
                    *s += w * cases[l][j][stick_case(j, hot)].1;
                }
            }
        }
        Ok(scores)
    }
}

fn condition_key(c: &[f64]) -> Vec<u64> {
    c.iter().map(|x| x.to_bits()).collect()
}

impl ScoreField for ExactMixtureScore {
    fn k(&self) -> usize {
        self.k
    }

    fn seq_len(&self) -> usize {
        self.categories.ncols()
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn eval(
        &self,
        x: ArrayView3<f64>,
        t: f64,
        condition: Option<ArrayView2<f64>>,
    ) -> Result<Array3<f64>> {
        let (n_seq, len, k) = x.dim();
        if len != self.seq_len() || k != self.k {
            return Err(Error::ShapeMismatch(format!(
                "batch is ({n_seq},{len},{k}), oracle expects (*,{},{})",
                self.seq_len(),
                self.k
            )));
        }
        let mut out = Array3::zeros((n_seq, len, k));
        for n in 0..n_seq {
            let x_seq: Vec<SimplexPoint> = (0..len)
                .map(|l| SimplexPoint::new(x.slice(ndarray::s![n, l, ..]).to_vec()))
                .collect::<Result<_>>()?;
            let cond_row = condition.as_ref().map(|c| c.row(n).to_vec());
            let sv = self.score_v(&x_seq, t, cond_row.as_deref())?;
            for (l, point) in x_seq.iter().enumerate() {
                let sticks = inverse_stick_break(point);
                let sx = score_x_from_v(&sv[l], &sticks)?;
                for (c, &s) in sx.iter().enumerate() {
                    out[(n, l, c)] = s;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobi::{forward_sample, transition_log_density, transition_score};
    use crate::quad::unit_rule_refined;
    use crate::simplex::{flat_dirichlet_params, stick_break, SpeedMode, StickPoint};
    use ndarray::Array3;
    use rand::SeedableRng;

    fn k2_params() -> Vec<JacobiParams> {
        vec![JacobiParams::new(1.0, 1.0, 3.0).unwrap()]
    }

    fn point(v: &[f64]) -> SimplexPoint {
        SimplexPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn single_datum_reduces_to_transition_density() {
        let oracle = ExactMixtureScore::new(&[vec![0usize]], 2, &k2_params()).unwrap();
        let t = 0.4;
        let x = point(&[0.3, 0.7]);
        // category 0 is hot: the single stick starts at 1
        let expected = transition_log_density(0.3, 1.0, t, k2_params()[0], SeriesConfig::for_time(t)).unwrap();
        assert!((oracle.log_density_v(&[x.clone()], t).unwrap() - expected).abs() < 1e-12);
        // k=2 stick transform has unit Jacobian
        assert!((oracle.log_density_x(&[x.clone()], t).unwrap() - expected).abs() < 1e-12);

        let sv = oracle.score_v(&[x], t, None).unwrap();
        let expected_s =
            transition_score(0.3, 1.0, t, k2_params()[0], SeriesConfig::for_time(t)).unwrap();
        assert!((sv[0][0] - expected_s).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_point_dataset_at_midpoint() {
        let oracle = ExactMixtureScore::new(&[vec![0], vec![1]], 2, &k2_params()).unwrap();
        let t = 0.3;
        let x = point(&[0.5, 0.5]);
        let mix = oracle.log_density_v(&[x], t).unwrap();
        let single =
            transition_log_density(0.5, 1.0, t, k2_params()[0], SeriesConfig::for_time(t)).unwrap();
        let other =
            transition_log_density(0.5, 0.0, t, k2_params()[0], SeriesConfig::for_time(t)).unwrap();
        assert!((single - other).abs() < 1e-10, "a=b symmetry at the midpoint");
        assert!((mix - single).abs() < 1e-10);
    }

    #[test]
    fn mixture_density_normalizes_k3() {
        // integrate exp(log_density_v) over the 2-d stick cube
        let params = flat_dirichlet_params(3, SpeedMode::Unit).unwrap();
        let oracle = ExactMixtureScore::new(&[vec![0], vec![2], vec![2]], 3, &params).unwrap();
        let t = 0.5;
        let (nodes, weights) = unit_rule_refined(12, 8, 1e-6);
        let mut total: f64 = 0.0;
        for (&v1, &w1) in nodes.iter().zip(&weights) {
            for (&v2, &w2) in nodes.iter().zip(&weights) {
                let sticks = StickPoint::new(vec![v1, v2]).unwrap();
                let x = stick_break(&sticks);
                total += w1 * w2 * oracle.log_density_v(&[x], t).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn score_v_matches_finite_difference() {
        let params = flat_dirichlet_params(4, SpeedMode::Unit).unwrap();
        let data = vec![vec![0, 2], vec![1, 1], vec![3, 0], vec![2, 2]];
        let oracle = ExactMixtureScore::new(&data, 4, &params).unwrap();
        let t = 0.4;
        let v_flat = [0.31, 0.42, 0.27, 0.55, 0.18, 0.63];
        let seq = |vf: &[f64]| -> Vec<SimplexPoint> {
            vf.chunks(3)
                .map(|c| stick_break(&StickPoint::new(c.to_vec()).unwrap()))
                .collect()
        };
        let sv = oracle.score_v(&seq(&v_flat), t, None).unwrap();
        let h = 1e-5;
        for i in 0..6 {
            let mut vp = v_flat;
            vp[i] += h;
            let mut vm = v_flat;
            vm[i] -= h;
            let fd = (oracle.log_density_v(&seq(&vp), t).unwrap()
                - oracle.log_density_v(&seq(&vm), t).unwrap())
                / (2.0 * h);
            let got = sv[i / 3][i % 3];
            assert!(
                (fd - got).abs() <= 1e-6 * got.abs().max(1.0),
                "coord {i}: fd {fd} vs score {got}"
            );
        }
    }

    #[test]
    fn score_x_matches_directional_finite_difference() {
        let params = flat_dirichlet_params(3, SpeedMode::Unit).unwrap();
        let oracle = ExactMixtureScore::new(&[vec![0], vec![1]], 3, &params).unwrap();
        let t = 0.6;
        let x = point(&[0.2, 0.5, 0.3]);
        let batch = Array3::from_shape_vec((1, 1, 3), x.components().to_vec()).unwrap();
        let sx = oracle.eval(batch.view(), t, None).unwrap();
        // tangent directions keep the perturbed point on the simplex
        for u in [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [1.0, 1.0, -2.0]] {
            let h = 1e-6;
            let shift = |sign: f64| {
                let p: Vec<f64> = x
                    .components()
                    .iter()
                    .zip(u.iter())
                    .map(|(&xi, &ui)| xi + sign * h * ui)
                    .collect();
                oracle.log_density_x(&[point(&p)], t).unwrap()
            };
            let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
            let dot: f64 = (0..3).map(|c| sx[(0, 0, c)] * u[c]).sum();
            assert!((fd - dot).abs() <= 1e-5 * dot.abs().max(1.0), "dir {u:?}: {fd} vs {dot}");
        }
    }

    #[test]
    fn large_time_score_approaches_stationary() {
        let params = flat_dirichlet_params(3, SpeedMode::Unit).unwrap();
        let oracle = ExactMixtureScore::new(&[vec![0], vec![0], vec![2]], 3, &params).unwrap();
        let x = point(&[0.25, 0.35, 0.4]);
        let sticks = inverse_stick_break(&x);
        let sv_stat: Vec<f64> = sticks
            .coords()
            .iter()
            .zip(params.iter())
            .map(|(&v, p)| p.stationary_score(v))
            .collect();
        let expected = score_x_from_v(&sv_stat, &sticks).unwrap();
        let batch = Array3::from_shape_vec((1, 1, 3), x.components().to_vec()).unwrap();
        let got = oracle.eval(batch.view(), 40.0, None).unwrap();
        for c in 0..3 {
            assert!((got[(0, 0, c)] - expected[c]).abs() < 1e-8, "component {c}");
        }
    }

    #[test]
    fn scores_are_mean_centered_and_finite() {
        let params = flat_dirichlet_params(4, SpeedMode::TwoOverAPlusB).unwrap();
        let data = vec![vec![0, 1, 2, 3], vec![3, 2, 1, 0], vec![1, 1, 1, 1]];
        let oracle = ExactMixtureScore::new(&data, 4, &params).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut batch = Array3::zeros((3, 4, 4));
        for n in 0..3 {
            for l in 0..4 {
                let mut v = Vec::new();
                for p in &params {
                    v.push(forward_sample(0.5, 0.3, *p, 50, &mut rng).clamp(0.05, 0.95));
                }
                let x = stick_break(&StickPoint::new(v).unwrap());
                for c in 0..4 {
                    batch[(n, l, c)] = x.components()[c];
                }
            }
        }
        let s = oracle.eval(batch.view(), 0.3, None).unwrap();
        for n in 0..3 {
            for l in 0..4 {
                let row: Vec<f64> = (0..4).map(|c| s[(n, l, c)]).collect();
                assert!(row.iter().all(|v| v.is_finite()));
                let sum: f64 = row.iter().sum();
                assert!(sum.abs() < 1e-9, "tangent representative sums to zero");
            }
        }
    }

    #[test]
    fn conditional_oracle_equals_subset_oracle() {
        let params = flat_dirichlet_params(3, SpeedMode::Unit).unwrap();
        let data = vec![vec![0, 1], vec![1, 2], vec![2, 0], vec![0, 0]];
        let conds = vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0]];
        let cond_oracle = ExactMixtureScore::new(&data, 3, &params)
            .unwrap()
            .with_conditions(&conds)
            .unwrap();
        let plain = ExactMixtureScore::new(&data, 3, &params).unwrap();
        let subset = plain.subset(|row| row == [0, 1] || row == [2, 0]).unwrap();
        assert_eq!(subset.n_data(), 2);

        let x = [point(&[0.4, 0.35, 0.25]), point(&[0.2, 0.3, 0.5])];
        let sv_cond = cond_oracle.score_v(&x, 0.7, Some(&[1.0])).unwrap();
        let sv_sub = subset.score_v(&x, 0.7, None).unwrap();
        for l in 0..2 {
            for j in 0..2 {
                assert!((sv_cond[l][j] - sv_sub[l][j]).abs() < 1e-12);
            }
        }
        assert!(cond_oracle.score_v(&x, 0.7, Some(&[0.5])).is_err());
        assert!(cond_oracle.score_v(&x, 0.7, None).is_err());
        assert!(plain.score_v(&x, 0.7, Some(&[1.0])).is_err());
    }

    #[test]
    fn boundary_point_is_clamped_to_interior() {
        // reverse samplers clamp their state to the interior, but the x they
        // hand back can still invert onto an exact stick boundary; the oracle
        // must evaluate there instead of failing mid-chain
        let oracle = ExactMixtureScore::new(&[vec![0]], 2, &k2_params()).unwrap();
        let vertex = SimplexPoint::one_hot(2, 0).unwrap();
        let ld_vertex = oracle.log_density_v(&[vertex], 0.5).unwrap();
        let near = SimplexPoint::new(vec![1.0 - INTERIOR_EPS, INTERIOR_EPS]).unwrap();
        let ld_near = oracle.log_density_v(&[near], 0.5).unwrap();
        assert!(ld_vertex.is_finite());
        assert!((ld_vertex - ld_near).abs() < 1e-9);
        let sv = oracle
            .score_v(&[SimplexPoint::one_hot(2, 1).unwrap()], 0.5, None)
            .unwrap();
        assert!(sv[0][0].is_finite());
    }

    #[test]
    fn dsm_residual_shrinks_with_monte_carlo_size() {
        // the mixture score is the conditional mean of per-datum scores, so
        // the weighted residual is mean-zero; its MC average should decay
        // roughly as n^{-1/2}
        let p = k2_params()[0];
        let oracle = ExactMixtureScore::new(&[vec![0], vec![1], vec![1]], 2, &k2_params()).unwrap();
        let t = 0.5;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut norms = Vec::new();
        let sizes = [1_000usize, 10_000, 100_000];
        let cfg = SeriesConfig::for_time(t);
        let basis = SpectralBasis::new(p, cfg.n_terms);
        let coefs0 = basis.coefficients(t, 0.0, cfg.n_terms).unwrap();
        let coefs1 = basis.coefficients(t, 1.0, cfg.n_terms).unwrap();
        for &n in &sizes {
            let mut acc = 0.0;
            for i in 0..n {
                let hot = [0usize, 1, 1][i % 3];
                let start = if hot == 0 { 1.0 } else { 0.0 };
                let v = forward_sample(start, t, p, 500, &mut rng).clamp(1e-8, 1.0 - 1e-8);
                let coefs = if start == 1.0 { &coefs1 } else { &coefs0 };
                let (_, s_cond) = basis.log_density_and_score(coefs, v, t, cfg).unwrap();
                let x = point(&[v, 1.0 - v]);
                let s_mix = oracle.score_v(&[x], t, None).unwrap()[0][0];
                acc += p.s * v * (1.0 - v) * (s_mix - s_cond);
            }
            norms.push((acc / n as f64).abs());
        }
        let (slope, _, _) = crate::stats::linear_fit(
            &sizes.iter().map(|&n| (n as f64).ln()).collect::<Vec<_>>(),
            &norms.iter().map(|&r| r.max(1e-12).ln()).collect::<Vec<_>>(),
        );
        assert!(
            slope < -0.25,
            "residual norms {norms:?} should decay with MC size, slope {slope}"
        );
    }
}
