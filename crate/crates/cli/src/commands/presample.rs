//! Build the forward-sample dictionary and report how close each grid
//! time sits to the stationary law.

use super::diffusion_params;
use crate::config::RunConfig;
use simplex_diffusion::dictionary::{build_dictionary_threaded, save};
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::stats::{ks_critical_one_sample_001, ks_statistic_one_sample};

pub fn run(cfg: &RunConfig, threads: usize) -> Result<()> {
    let path = cfg.dictionary.path.as_ref().ok_or_else(|| {
        Error::InvalidParameter("config: dictionary.path is required for presample".into())
    })?;
    let params = diffusion_params(cfg)?;
    let grid = cfg.time_grid();
    let dict = build_dictionary_threaded(
        &params,
        &grid,
        cfg.dictionary.n_per_time,
        cfg.dictionary.em_steps,
        cfg.dictionary.seed,
        threads.max(1),
    )?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    save(&dict, path)?;
    cfg.write_resolved("presample")?;

    // distance to the stationary stick laws, per grid time: large at
    // small t (transitions still remember their start), shrinking as the
    // forward process mixes
    println!("dictionary: {} ({} times x {} samples, {} processes)",
        path.display(), grid.len(), dict.n_per_time(), params.len());
    let mut final_ks = 0.0;
    for (ti, &t) in grid.iter().enumerate() {
        let mut worst = 0.0f64;
        for (proc, p) in params.iter().enumerate() {
            for start in 0..2 {
                let (samples, _) = dict.bucket(proc, start, ti);
                let b = p.b;
                let ks = ks_statistic_one_sample(samples, |v| 1.0 - (1.0 - v).powf(b));
                worst = worst.max(ks);
            }
        }
        println!("t = {t:>10.5}   ks_vs_stationary = {worst:.5}");
        if ti == grid.len() - 1 {
            final_ks = worst;
        }
    }
    let crit = ks_critical_one_sample_001(dict.n_per_time());
    let verdict = if final_ks <= crit { "within" } else { "beyond" };
    println!(
        "final grid time: ks = {final_ks:.5}, {verdict} the 1% critical value {crit:.5}"
    );
    Ok(())
}
