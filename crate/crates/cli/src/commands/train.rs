//! Train the score model on the configured dataset against a
//! presampled dictionary; writes a checkpoint and the loss history.

use crate::config::RunConfig;
use crate::datasets::build_dataset;
use simplex_diffusion::dictionary::load;
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::neural::{save_checkpoint, NeuralConfig, NeuralScore, ScalingTable};
use simplex_diffusion::training::{
    estimate_importance_table, train, LossConfig, OptimizerConfig, TrainConfig,
};

pub fn run(cfg: &RunConfig) -> Result<()> {
    let dict_path = cfg.dictionary.path.as_ref().ok_or_else(|| {
        Error::InvalidParameter("config: dictionary.path is required for train".into())
    })?;
    let ckpt_path = cfg.model.checkpoint.as_ref().ok_or_else(|| {
        Error::InvalidParameter("config: model.checkpoint is required for train".into())
    })?;
    let dict = load(dict_path)?;
    let dataset = build_dataset(cfg)?;
    if dataset.k != cfg.diffusion.k {
        return Err(Error::ShapeMismatch(format!(
            "dataset k = {} does not match diffusion k = {}",
            dataset.k, cfg.diffusion.k
        )));
    }
    if dict.params().len() != cfg.diffusion.k - 1 {
        return Err(Error::ShapeMismatch(format!(
            "dictionary holds {} stick processes but k = {} needs {}",
            dict.params().len(),
            cfg.diffusion.k,
            cfg.diffusion.k - 1
        )));
    }

    let table = estimate_importance_table(&dict)?;
    // output scaling tracks the measured score magnitude per time,
    // normalized to 1 at the terminal time, so the network itself only
    // learns order-one corrections
    let last = *table.weights().last().expect("nonempty importance table");
    let w_table =
        ScalingTable::new(dict.time_grid().to_vec(), table.weights().to_vec())?.scaled(1.0 / last)?;

    let cond_dim = dataset.conditions.as_ref().map(|c| c[0].len()).unwrap_or(0);
    let ncfg = NeuralConfig {
        k: dataset.k,
        window: cfg.model.window,
        hidden: cfg.model.hidden,
        n_freq: cfg.model.n_freq,
        freq_scale: cfg.model.freq_scale,
        cond_dim,
        seed: cfg.model.seed,
    };
    let mut model = NeuralScore::new(ncfg, w_table, dict.params().to_vec())?;

    let loss_cfg = LossConfig::new(
        cfg.training.weighting,
        cfg.diffusion.t_min,
        cfg.diffusion.t_max,
        cfg.training.batch_size,
        cfg.training.seed,
    )?;
    let opt_cfg = OptimizerConfig { step_size: cfg.training.learning_rate, ..OptimizerConfig::default() };
    let train_cfg = TrainConfig {
        epochs: cfg.training.epochs,
        batches_per_epoch: cfg.training.batches_per_epoch,
        patience: cfg.training.patience,
        validation_fraction: cfg.training.validation_fraction,
        use_fast_path: cfg.training.fast_sampling,
    };
    let trace = train(
        &mut model,
        &dataset.rows,
        dataset.conditions.as_deref(),
        &dict,
        &loss_cfg,
        &table,
        opt_cfg,
        &train_cfg,
    )?;

    if let Some(dir) = ckpt_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    save_checkpoint(&model, ckpt_path)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    trace.write_csv(&cfg.out_dir.join("loss.csv"))?;
    cfg.write_resolved("train")?;

    let best = &trace.epochs[trace.best_epoch];
    println!(
        "trained {} epochs ({} rows); best epoch {} with validation loss {:.6e}{}",
        trace.epochs.len(),
        dataset.rows.len(),
        trace.best_epoch,
        best.val_loss,
        if trace.stopped_early { " (early stop)" } else { "" }
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}
