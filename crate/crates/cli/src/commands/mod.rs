//! Command implementations shared by the binary and the test suites.

pub mod check;
pub mod elbo;
pub mod presample;
pub mod sample;
pub mod solve;
pub mod train;

use crate::config::{FieldKind, RunConfig};
use crate::datasets::Dataset;
use ndarray::{Array2, Array3};
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::jacobi::JacobiParams;
use simplex_diffusion::neural::load_checkpoint;
use simplex_diffusion::sampling::{
    inpaint_sample, reverse_sample, InpaintMask, SamplerConfig,
};
use simplex_diffusion::scorefield::{ExactMixtureScore, ScoreField};
use simplex_diffusion::simplex::flat_dirichlet_params;
use std::path::PathBuf;

/// Per-stick diffusion processes for the configured category count.
pub fn diffusion_params(cfg: &RunConfig) -> Result<Vec<JacobiParams>> {
    flat_dirichlet_params(cfg.diffusion.k, cfg.diffusion.speed)
}

/// Score field selected by the config: a trained checkpoint, or the
/// exact mixture score over the configured dataset.
pub fn build_field(cfg: &RunConfig, dataset: Option<&Dataset>) -> Result<Box<dyn ScoreField>> {
    match cfg.model.field {
        FieldKind::Checkpoint => {
            let path = cfg.model.checkpoint.as_ref().ok_or_else(|| {
                Error::InvalidParameter(
                    "config: model.checkpoint is required for field = checkpoint".into(),
                )
            })?;
            Ok(Box::new(load_checkpoint(path)?))
        }
        FieldKind::Oracle => {
            let ds = dataset.ok_or_else(|| {
                Error::InvalidParameter(
                    "config: field = oracle needs a dataset selection".into(),
                )
            })?;
            let params = diffusion_params(cfg)?;
            let mut oracle = ExactMixtureScore::new(&ds.rows, ds.k, &params)?;
            if let Some(conds) = &ds.conditions {
                oracle = oracle.with_conditions(conds)?;
            }
            Ok(Box::new(oracle))
        }
    }
}

/// Sampler settings from the config (diffusion window plus the sampler
/// section).
pub fn sampler_config(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        steps: cfg.sampler.steps,
        t_min: cfg.diffusion.t_min,
        t_max: cfg.diffusion.t_max,
        dilation_factor: cfg.sampler.dilation,
        dilation_start_fraction: cfg.sampler.dilation_start,
        dilation_variant: cfg.sampler.variant,
        seed: cfg.sampler.seed,
        chain_offset: 0,
        record_trajectory: false,
        forward_em_steps: 100,
    }
}

/// Primary output path: an explicit override, or `default_name` inside
/// the configured output directory.
pub fn output_path(cfg: &RunConfig, default_name: &str, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.out_dir.join(default_name))
}

/// Run reverse (or inpainting) chains split across worker threads.
/// Chains keep their global index through `chain_offset`, so the
/// concatenated output is identical for every thread count.
pub fn run_chains_sharded(
    field: &dyn ScoreField,
    params: &[JacobiParams],
    count: usize,
    seq_len: usize,
    base: &SamplerConfig,
    condition_row: Option<&[f64]>,
    mask: Option<&InpaintMask>,
    threads: usize,
) -> Result<Vec<Array3<f64>>> {
    let threads = threads.max(1);
    if count == 0 {
        return Ok(Vec::new());
    }
    let run_shard = |start: usize, n: usize| -> Result<Array3<f64>> {
        let cfg = SamplerConfig { chain_offset: base.chain_offset + start as u64, ..base.clone() };
        let cond = condition_row.map(|row| {
            let flat: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
            Array2::from_shape_vec((n, row.len()), flat).expect("condition row broadcast")
        });
        let out = match mask {
            Some(m) => inpaint_sample(field, params, m, n, &cfg, cond.as_ref().map(|c| c.view()))?,
            None => reverse_sample(field, params, n, seq_len, &cfg, cond.as_ref().map(|c| c.view()))?,
        };
        Ok(out.x)
    };
    if threads == 1 || count == 1 {
        return Ok(vec![run_shard(0, count)?]);
    }
    let shard = count.div_ceil(threads);
    let ranges: Vec<(usize, usize)> = (0..threads)
        .map(|w| (w * shard, (w * shard + shard).min(count)))
        .filter(|(lo, hi)| lo < hi)
        .collect();
    let results: Vec<Result<Array3<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .iter()
            .map(|&(lo, hi)| scope.spawn(move || run_shard(lo, hi - lo)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampler worker panicked")).collect()
    });
    results.into_iter().collect()
}
