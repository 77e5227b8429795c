//! Generate discrete samples with the reverse-time sampler and write
//! them in the task's text format.

use super::{build_field, diffusion_params, output_path, run_chains_sharded, sampler_config};
use crate::config::{DatasetKind, RunConfig};
use crate::datasets::{build_dataset, format_rows};
use crate::shidoku;
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::sampling::discretize;
use std::path::PathBuf;

pub fn run(cfg: &RunConfig, threads: usize, out: Option<PathBuf>) -> Result<()> {
    let dataset = build_dataset(cfg)?;
    let field = build_field(cfg, Some(&dataset))?;
    let params = diffusion_params(cfg)?;
    let scfg = sampler_config(cfg);
    let count = cfg.sampler.count;

    let condition_row: Option<Vec<f64>> = match cfg.sampler.condition {
        None => None,
        Some(class) => {
            let dim = dataset.conditions.as_ref().map(|c| c[0].len()).unwrap_or(0);
            if dim == 0 {
                return Err(Error::UnsupportedConfiguration(
                    "sampler condition set but the selected task is unconditional".into(),
                ));
            }
            if class >= dim {
                return Err(Error::InvalidParameter(format!(
                    "condition class {class} out of range for {dim} classes"
                )));
            }
            let mut row = vec![0.0; dim];
            row[class] = 1.0;
            Some(row)
        }
    };

    let shards = run_chains_sharded(
        field.as_ref(),
        &params,
        count,
        dataset.seq_len,
        &scfg,
        condition_row.as_deref(),
        None,
        threads,
    )?;
    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(count);
    for shard in &shards {
        let disc = discretize(shard.view());
        for c in 0..disc.nrows() {
            rows.push(disc.row(c).to_vec());
        }
    }

    let text = if cfg.dataset.kind == DatasetKind::Shidoku {
        let mut s = String::new();
        for row in &rows {
            s.push_str(&shidoku::format_grid(&shidoku::row_to_grid(row)?));
            s.push('\n');
        }
        s
    } else {
        format_rows(&rows, dataset.k)?
    };
    let path = output_path(cfg, "samples.txt", out);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&path, text)?;
    cfg.write_resolved("sample")?;
    println!("wrote {} samples to {}", rows.len(), path.display());
    Ok(())
}
