//! Weighted denoising score-matching: the per-stick G Gᵀ loss with its
//! change-of-variable-invariant x-space twin, importance sampling of
//! diffusion time, and the Adam training loop with early stopping.

use crate::dictionary::{sample_k_category_fast, sample_k_category_standard, CategoryDraw, DiffusionDictionary};
use crate::error::{Error, Result};
use crate::neural::NeuralScore;
use crate::rng::substream;
use crate::scorefield::ScoreField;
use crate::simplex::{score_v_from_x, score_x_from_v, stick_jacobian_transpose_times, SimplexPoint};
use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use std::io::Write as _;
use std::path::Path;

/// Residual weighting in the score-matching norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Weighting {
    /// per-stick weight s_j v_j (1 - v_j): the diffusion metric G Gᵀ
    #[default]
    GgTranspose,
    Unweighted,
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    pub weighting: Weighting,
    pub t_min: f64,
    pub t_max: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl LossConfig {
    pub fn new(weighting: Weighting, t_min: f64, t_max: f64, batch_size: usize, seed: u64) -> Result<Self> {
        if !(t_min > 0.0 && t_min < t_max) || batch_size == 0 {
            return Err(Error::InvalidParameter(
                "need 0 < t_min < t_max and a positive batch size".into(),
            ));
        }
        Ok(Self { weighting, t_min, t_max, batch_size, seed })
    }
}

/// Discrete distribution over the dictionary's time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceTable {
    times: Vec<f64>,
    weights: Vec<f64>,
}

impl ImportanceTable {
    pub fn new(times: Vec<f64>, raw_weights: Vec<f64>) -> Result<Self> {
        if times.len() != raw_weights.len() || times.is_empty() {
            return Err(Error::ShapeMismatch("times and weights must match and be nonempty".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("times must be strictly ascending".into()));
        }
        if raw_weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be strictly positive".into()));
        }
        let total: f64 = raw_weights.iter().sum();
        let weights = raw_weights.iter().map(|w| w / total).collect();
        Ok(Self { times, weights })
    }

    pub fn uniform(times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![1.0; n])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Empirical importance weights over the dictionary grid: per time, the
/// root-mean-square of the metric-scaled stored scores s·v(1-v)·score,
/// pooled over processes and both starts, then normalized.
pub fn estimate_importance_table(dict: &DiffusionDictionary) -> Result<ImportanceTable> {
    let grid = dict.time_grid().to_vec();
    let mut raw = Vec::with_capacity(grid.len());
    for ti in 0..grid.len() {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (proc, p) in dict.params().iter().enumerate() {
            for start in 0..2 {
                let (samples, scores) = dict.bucket(proc, start, ti);
                for (&v, &s) in samples.iter().zip(scores.iter()) {
                    let w = p.s * v * (1.0 - v) * s;
                    acc += w * w;
                    count += 1;
                }
            }
        }
        raw.push((acc / count as f64).sqrt().max(1e-300));
    }
    ImportanceTable::new(grid, raw)
}

/// Draw a grid time with probability proportional to its weight; the
/// returned inverse_weight = (1/n)/w(t) makes reweighted averages match
/// uniform-time averages in expectation.
pub fn sample_time_importance<R: Rng + ?Sized>(
    table: &ImportanceTable,
    rng: &mut R,
) -> (usize, f64, f64) {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut ix = table.weights.len() - 1;
    for (i, &w) in table.weights.iter().enumerate() {
        cum += w;
        if u < cum {
            ix = i;
            break;
        }
    }
    let uniform = 1.0 / table.len() as f64;
    (ix, table.times[ix], uniform / table.weights[ix])
}

/// Forward-diffused conditional draws for a batch of category sequences at
/// one time, via the fast or the standard dictionary path.
pub fn draw_conditional_batch<R: Rng + ?Sized>(
    rows: &[Vec<usize>],
    t: f64,
    dict: &DiffusionDictionary,
    fast: bool,
    rng: &mut R,
) -> Result<Vec<Vec<CategoryDraw>>> {
    let k = dict.params().len() + 1;
    rows.iter()
        .map(|row| {
            row.iter()
                .map(|&cat| {
                    let one_hot = SimplexPoint::one_hot(k, cat)?;
                    if fast {
                        sample_k_category_fast(&one_hot, t, dict, rng)
                    } else {
                        sample_k_category_standard(&one_hot, t, dict, rng)
                    }
                })
                .collect()
        })
        .collect()
}

/// The diffused batch in natural category order, shaped (n_seq, len, k).
pub fn batch_points(draws: &[Vec<CategoryDraw>]) -> Result<Array3<f64>> {
    if draws.is_empty() || draws[0].is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    let (n_seq, len, k) = (draws.len(), draws[0].len(), draws[0][0].x.k());
    let mut x = Array3::zeros((n_seq, len, k));
    for (n, row) in draws.iter().enumerate() {
        if row.len() != len {
            return Err(Error::ShapeMismatch("ragged batch".into()));
        }
        for (l, d) in row.iter().enumerate() {
            for c in 0..k {
                x[(n, l, c)] = d.x.components()[c];
            }
        }
    }
    Ok(x)
}

fn stick_weights(d: &CategoryDraw, dict: &DiffusionDictionary, weighting: Weighting) -> Vec<f64> {
    // construction position i uses the i-th process of the flat family;
    // the permuted parameter list is the same list for a flat Dirichlet
    let v = d.v.coords();
    match weighting {
        Weighting::Unweighted => vec![1.0; v.len()],
        Weighting::GgTranspose => v
            .iter()
            .enumerate()
            .map(|(i, &vi)| dict.params()[i].s * vi * (1.0 - vi))
            .collect(),
    }
}

/// v-space weighted DSM loss of precomputed model scores against the
/// batch's conditional scores, and its gradient with respect to the model's
/// x-space outputs (natural category order).
///
/// Loss: mean over (sequence, position) of Σ_j g²_j (s_model,j - s_cond,j)²
/// with the model's x-score permuted to construction order and converted to
/// stick coordinates.
pub fn dsm_loss_terms(
    scores_x: ArrayView3<f64>,
    draws: &[Vec<CategoryDraw>],
    dict: &DiffusionDictionary,
    weighting: Weighting,
) -> Result<(f64, Array3<f64>)> {
    let (n_seq, len, k) = scores_x.dim();
    if draws.len() != n_seq || draws.iter().any(|r| r.len() != len) {
        return Err(Error::ShapeMismatch("scores and draws disagree on batch shape".into()));
    }
    let norm = 1.0 / (n_seq * len) as f64;
    let mut loss = 0.0;
    let mut grad = Array3::zeros((n_seq, len, k));
    for (n, row) in draws.iter().enumerate() {
        for (l, d) in row.iter().enumerate() {
            let sx_perm: Vec<f64> = d.order.iter().map(|&c| scores_x[(n, l, c)]).collect();
            let sv_model = score_v_from_x(&sx_perm, &d.v)?;
            let g2 = stick_weights(d, dict, weighting);
            let mut weighted_res = vec![0.0; k - 1];
            for j in 0..k - 1 {
                let r = sv_model[j] - d.score_v[j];
                loss += norm * g2[j] * r * r;
                weighted_res[j] = 2.0 * norm * g2[j] * r;
            }
            // d sv/d sx_perm = Jᵀ, so dL/d sx_perm = J · (2 norm g² r)
            let up_perm = crate::simplex::stick_jacobian_times(&weighted_res, &d.v)?;
            for (pos, &c) in d.order.iter().enumerate() {
                grad[(n, l, c)] = up_perm[pos];
            }
        }
    }
    Ok((loss, grad))
}

/// Convenience wrapper: evaluate the field and return the v-space loss.
pub fn weighted_dsm_loss(
    field: &dyn ScoreField,
    draws: &[Vec<CategoryDraw>],
    t: f64,
    dict: &DiffusionDictionary,
    weighting: Weighting,
    condition: Option<ArrayView2<f64>>,
) -> Result<f64> {
    let x = batch_points(draws)?;
    let scores = field.eval(x.view(), t, condition)?;
    let (loss, _) = dsm_loss_terms(scores.view(), draws, dict, weighting)?;
    Ok(loss)
}

/// The same loss evaluated in x-space: residuals between x-space scores
/// under the transformed metric G_x = (∂x/∂v)·G. Algebraically equal to
/// the v-space loss; included as the change-of-variable invariance check.
pub fn weighted_dsm_loss_x(
    field: &dyn ScoreField,
    draws: &[Vec<CategoryDraw>],
    t: f64,
    dict: &DiffusionDictionary,
    weighting: Weighting,
    condition: Option<ArrayView2<f64>>,
) -> Result<f64> {
    let x = batch_points(draws)?;
    let scores = field.eval(x.view(), t, condition)?;
    let (n_seq, len, k) = scores.dim();
    let norm = 1.0 / (n_seq * len) as f64;
    let mut loss = 0.0;
    for (n, row) in draws.iter().enumerate() {
        for (l, d) in row.iter().enumerate() {
            let sx_model_perm: Vec<f64> = d.order.iter().map(|&c| scores[(n, l, c)]).collect();
            // conditional score expressed in x-space (construction order)
            let sx_cond_perm = score_x_from_v(&d.score_v, &d.v)?;
            let r_x: Vec<f64> = sx_model_perm
                .iter()
                .zip(&sx_cond_perm)
                .map(|(m, c)| m - c)
                .collect();
            // ‖r‖²_{GxGxᵀ} = ‖G Jᵀ r‖²: the det-term gradients cancel in
            // the residual, so this matches the v-space value exactly
            let jt_r = stick_jacobian_transpose_times(&r_x, &d.v)?;
            let g2 = stick_weights(d, dict, weighting);
            for j in 0..k - 1 {
                loss += norm * g2[j] * jt_r[j] * jt_r[j];
            }
        }
    }
    Ok(loss)
}

/// Adaptive-moment gradient descent.
#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

pub struct Adam {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: usize,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, n_params: usize) -> Self {
        Self { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], steps: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.steps += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grads[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.cfg.step_size * mhat / (vhat.sqrt() + self.cfg.epsilon);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub patience: usize,
    /// fraction of the dataset reserved for validation (at least one row
    /// when the dataset has more than one)
    pub validation_fraction: f64,
    pub use_fast_path: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batches_per_epoch: 50,
            patience: 10,
            validation_fraction: 0.1,
            use_fast_path: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,train_loss,val_loss")?;
        for e in &self.epochs {
            writeln!(f, "{},{:.12e},{:.12e}", e.epoch, e.train_loss, e.val_loss)?;
        }
        Ok(())
    }
}

fn condition_matrix(conds: &[Vec<f64>], idx: &[usize]) -> Array2<f64> {
    let dim = conds[0].len();
    let flat: Vec<f64> = idx.iter().flat_map(|&i| conds[i].iter().copied()).collect();
    Array2::from_shape_vec((idx.len(), dim), flat).expect("condition rows share a dimension")
}

/// Every-nth-row validation split, deterministic in the dataset order.
fn split_validation(n_rows: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if n_rows < 2 || fraction <= 0.0 {
        return ((0..n_rows).collect(), Vec::new());
    }
    let n_val = ((n_rows as f64 * fraction).ceil() as usize).clamp(1, n_rows - 1);
    let stride = n_rows.div_ceil(n_val);
    let val: Vec<usize> = (0..n_rows).step_by(stride).take(n_val).collect();
    let train: Vec<usize> = (0..n_rows).filter(|i| !val.contains(i)).collect();
    (train, val)
}

/// Train the model with importance-sampled times and early stopping on
/// validation loss; on return the model carries the best-validation
/// parameters. Deterministic given the loss-config seed.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &mut NeuralScore,
    dataset: &[Vec<usize>],
    conditions: Option<&[Vec<f64>]>,
    dict: &DiffusionDictionary,
    loss_cfg: &LossConfig,
    table: &ImportanceTable,
    opt_cfg: OptimizerConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainTrace> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("dataset must be nonempty".into()));
    }
    if let Some(conds) = conditions {
        if conds.len() != dataset.len() {
            return Err(Error::ShapeMismatch("one condition per dataset row".into()));
        }
    }
    let (train_rows, val_rows) = split_validation(dataset.len(), train_cfg.validation_fraction);
    let mut opt = Adam::new(opt_cfg, model.n_params());
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params().to_vec());
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 0..train_cfg.epochs {
        let mut rng = substream(loss_cfg.seed, &[1, epoch as u64]);
        let mut train_loss = 0.0;
        for batch_ix in 0..train_cfg.batches_per_epoch {
            let idx: Vec<usize> = (0..loss_cfg.batch_size)
                .map(|_| train_rows[rng.gen_range(0..train_rows.len())])
                .collect();
            let rows: Vec<Vec<usize>> = idx.iter().map(|&i| dataset[i].clone()).collect();
            let cond_mat = conditions.map(|conds| condition_matrix(conds, &idx));
            let (t_ix, t, inv_w) = sample_time_importance(table, &mut rng);
            let draws = draw_conditional_batch(&rows, t, dict, train_cfg.use_fast_path, &mut rng)?;
            let x = batch_points(&draws)?;
            let (out, cache) = model.forward_cached(x.view(), t, cond_mat.as_ref().map(|c| c.view()))?;
            let (n_seq, len, k) = x.dim();
            let out3 = out.into_shape_with_order((n_seq, len, k)).expect("row layout");
            let (loss, grad_x) = dsm_loss_terms(out3.view(), &draws, dict, loss_cfg.weighting)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}, batch {batch_ix}, time bucket {t_ix} (t={t})"
                )));
            }
            let upstream = grad_x.mapv(|g| g * inv_w);
            let upstream2 = upstream.into_shape_with_order((n_seq * len, k)).expect("row layout");
            let grads = model.backward(&cache, upstream2.view())?;
            opt.step(model.params_mut(), &grads);
            train_loss += loss * inv_w;
        }
        train_loss /= train_cfg.batches_per_epoch as f64;

        // deterministic validation pass: fixed substream per epoch count,
        // averaged over the table's times uniformly
        let val_loss = if val_rows.is_empty() {
            train_loss
        } else {
            let mut vrng = substream(loss_cfg.seed, &[2]);
            let mut acc = 0.0;
            let n_val_batches = 4usize;
            for _ in 0..n_val_batches {
                let idx: Vec<usize> = (0..loss_cfg.batch_size)
                    .map(|_| val_rows[vrng.gen_range(0..val_rows.len())])
                    .collect();
                let rows: Vec<Vec<usize>> = idx.iter().map(|&i| dataset[i].clone()).collect();
                let cond_mat = conditions.map(|conds| condition_matrix(conds, &idx));
                let t_ix = vrng.gen_range(0..table.len());
                let t = table.times()[t_ix];
                let draws = draw_conditional_batch(&rows, t, dict, train_cfg.use_fast_path, &mut vrng)?;
                acc += weighted_dsm_loss(
                    model,
                    &draws,
                    t,
                    dict,
                    loss_cfg.weighting,
                    cond_mat.as_ref().map(|c| c.view()),
                )?;
            }
            acc / n_val_batches as f64
        };
        trace.push(EpochStats { epoch, train_loss, val_loss });

        if val_loss < best.0 {
            best = (val_loss, epoch, model.params().to_vec());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.params_mut().copy_from_slice(&best.2);
    Ok(TrainTrace { epochs: trace, best_epoch: best.1, stopped_early })
}
