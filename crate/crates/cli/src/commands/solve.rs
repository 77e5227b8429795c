//! Complete puzzles by clamping clue cells and re-sampling until the
//! generated grid is valid; one attempt count per puzzle.

use super::{build_field, diffusion_params, output_path, sampler_config};
use crate::config::RunConfig;
use crate::datasets::build_dataset;
use crate::shidoku::{self, Grid};
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::jacobi::JacobiParams;
use simplex_diffusion::sampling::{discretize, inpaint_sample, InpaintMask, SamplerConfig};
use simplex_diffusion::scorefield::ScoreField;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Attempt batches for one puzzle until a valid completion appears.
/// Chain indices stay globally distinct across puzzles and batches, so
/// results do not depend on how puzzles are distributed over workers.
fn solve_puzzle(
    puzzle: &Grid,
    puzzle_ix: usize,
    field: &dyn ScoreField,
    params: &[JacobiParams],
    base: &SamplerConfig,
    retry_cap: u64,
    batch: usize,
) -> Result<(Grid, u64)> {
    let clamps: Vec<Option<usize>> =
        puzzle.iter().map(|&v| if v == 0 { None } else { Some(v as usize - 1) }).collect();
    let mask = InpaintMask::new(clamps, 4)?;
    let mut attempted = 0u64;
    while attempted < retry_cap {
        let n = (batch as u64).min(retry_cap - attempted) as usize;
        let cfg = SamplerConfig {
            chain_offset: puzzle_ix as u64 * retry_cap + attempted,
            ..base.clone()
        };
        let out = inpaint_sample(field, params, &mask, n, &cfg, None)?;
        let disc = discretize(out.x.view());
        for c in 0..n {
            let grid = shidoku::row_to_grid(&disc.row(c).to_vec())?;
            if shidoku::is_valid_complete(&grid) {
                return Ok((grid, attempted + c as u64 + 1));
            }
        }
        attempted += n as u64;
    }
    Err(Error::RetryCapExhausted { attempts: retry_cap })
}

/// Solve every puzzle in the batch; `Err` entries keep their puzzle index.
pub fn solve_batch(
    puzzles: &[Grid],
    field: &dyn ScoreField,
    params: &[JacobiParams],
    base: &SamplerConfig,
    retry_cap: u64,
    batch: usize,
    threads: usize,
) -> Vec<Result<(Grid, u64)>> {
    let threads = threads.max(1).min(puzzles.len().max(1));
    if threads <= 1 {
        return puzzles
            .iter()
            .enumerate()
            .map(|(i, p)| solve_puzzle(p, i, field, params, base, retry_cap, batch))
            .collect();
    }
    let mut merged: Vec<Option<Result<(Grid, u64)>>> = (0..puzzles.len()).map(|_| None).collect();
    let worker_results: Vec<Vec<(usize, Result<(Grid, u64)>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                scope.spawn(move || {
                    puzzles
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(threads)
                        .map(|(i, p)| {
                            (i, solve_puzzle(p, i, field, params, base, retry_cap, batch))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver worker panicked")).collect()
    });
    for results in worker_results {
        for (i, r) in results {
            merged[i] = Some(r);
        }
    }
    merged.into_iter().map(|r| r.expect("every puzzle visited")).collect()
}

pub fn run(cfg: &RunConfig, puzzle_path: &Path, threads: usize, out: Option<PathBuf>) -> Result<()> {
    if cfg.diffusion.k != 4 {
        return Err(Error::UnsupportedConfiguration(format!(
            "solving operates on 4-category grids, config has k = {}",
            cfg.diffusion.k
        )));
    }
    let text = std::fs::read_to_string(puzzle_path)?;
    let puzzles = shidoku::parse_grids(&text)?;
    if puzzles.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no puzzles found in {}",
            puzzle_path.display()
        )));
    }
    let dataset = build_dataset(cfg)?;
    let field = build_field(cfg, Some(&dataset))?;
    let params = diffusion_params(cfg)?;
    let base = sampler_config(cfg);

    let results = solve_batch(
        &puzzles,
        field.as_ref(),
        &params,
        &base,
        cfg.solve.retry_cap,
        cfg.solve.batch,
        threads,
    );
    // report the first failure by puzzle index so the outcome does not
    // depend on the thread count
    if let Some((ix, err)) = results.iter().enumerate().find_map(|(i, r)| match r {
        Err(Error::RetryCapExhausted { attempts }) => {
            Some((i, Error::RetryCapExhausted { attempts: *attempts }))
        }
        _ => None,
    }) {
        eprintln!("puzzle {ix} was not solved within the retry cap");
        return Err(err);
    }

    let mut solutions = String::new();
    let mut attempts_csv = String::from("puzzle,attempts\n");
    let mut total_attempts = 0u64;
    for (i, r) in results.iter().enumerate() {
        match r {
            Ok((grid, attempts)) => {
                solutions.push_str(&shidoku::format_grid(grid));
                solutions.push('\n');
                let _ = writeln!(attempts_csv, "{i},{attempts}");
                total_attempts += attempts;
            }
            Err(e) => {
                return Err(Error::InvalidParameter(format!("puzzle {i} failed: {e}")));
            }
        }
    }
    let path = output_path(cfg, "solutions.txt", out);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(&path, solutions)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("attempts.csv"), attempts_csv)?;
    cfg.write_resolved("solve")?;
    println!(
        "solved {} puzzles, mean attempts {:.2}; solutions in {}",
        puzzles.len(),
        total_attempts as f64 / puzzles.len() as f64,
        path.display()
    );
    Ok(())
}
