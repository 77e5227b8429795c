//! Cross-module pipeline: dictionary construction, training, checkpoint
//! persistence, reverse sampling, and likelihood evaluation working
//! together through the public API.

use ndarray::Array3;
use simplex_diffusion::dictionary;
use simplex_diffusion::likelihood::{elbo_discrete, ELBOConfig, ODEConfig, TraceMode};
use simplex_diffusion::neural::{load_checkpoint, save_checkpoint, NeuralConfig, NeuralScore, ScalingTable};
use simplex_diffusion::sampling::{discretize, reverse_sample, SamplerConfig};
use simplex_diffusion::scorefield::{ExactMixtureScore, ScoreField};
use simplex_diffusion::simplex::{flat_dirichlet_params, SpeedMode};
use simplex_diffusion::training::{
    draw_conditional_batch, estimate_importance_table, train, weighted_dsm_loss, LossConfig,
    OptimizerConfig, TrainConfig, Weighting,
};

fn log_grid(t_min: f64, t_max: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| t_min * (t_max / t_min).powf(i as f64 / (n - 1) as f64)).collect()
}

#[test]
fn oracle_field_drives_sampling_and_likelihood_end_to_end() {
    let k = 3;
    let params = flat_dirichlet_params(k, SpeedMode::Unit).unwrap();
    let data: Vec<Vec<usize>> = vec![vec![0, 1], vec![1, 2], vec![2, 0]];
    let oracle = ExactMixtureScore::new(&data, k, &params).unwrap();

    // reverse sampling from the exact field should land on the dataset
    let cfg = SamplerConfig {
        steps: 150,
        t_min: 0.02,
        t_max: 3.0,
        seed: 40,
        ..SamplerConfig::default()
    };
    let out = reverse_sample(&oracle, &params, 120, 2, &cfg, None).unwrap();
    let cats = discretize(out.x.view());
    let mut hits = vec![0usize; data.len()];
    let mut on_data = 0usize;
    for row in cats.rows() {
        let row: Vec<usize> = row.iter().copied().collect();
        if let Some(ix) = data.iter().position(|d| *d == row) {
            hits[ix] += 1;
            on_data += 1;
        }
    }
    assert!(
        on_data >= 108,
        "at least 90% of 120 chains should finish on a dataset row, got {on_data}"
    );
    assert!(hits.iter().all(|&h| h > 0), "every dataset row should be sampled: {hits:?}");

    // the evidence bound for a memorized row sits near log(1/3)
    let elbo_cfg = ELBOConfig { t_anchor: 2e-3, mc_samples: 24, seed: 7 };
    let ode_cfg = ODEConfig { steps: 60, trace: TraceMode::ExactJacobian, seed: 0 };
    let bound = elbo_discrete(&data[0], &oracle, &params, &elbo_cfg, &ode_cfg, 3.0, None).unwrap();
    let truth = (1.0f64 / 3.0).ln();
    assert!(
        bound <= truth + 0.12 && bound >= truth - 0.35,
        "bound {bound} should sit just below log(1/3) = {truth}"
    );
}

#[test]
fn training_pipeline_runs_from_dictionary_to_reloaded_checkpoint() {
    let k = 2;
    let params = flat_dirichlet_params(k, SpeedMode::Unit).unwrap();
    let grid = log_grid(0.01, 4.0, 10);
    let dict = dictionary::build_dictionary(&params, &grid, 400, 200, 3).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let dict_path = dir.path().join("p.dict");
    dictionary::save(&dict, &dict_path).unwrap();
    let dict = dictionary::load(&dict_path).unwrap();
    assert_eq!(dict.time_grid(), &grid[..]);

    // balanced two-symbol source
    let data: Vec<Vec<usize>> = (0..128).map(|i| vec![i % 2]).collect();
    let table = estimate_importance_table(&dict).unwrap();
    let last = *table.weights().last().unwrap();
    let w_table = ScalingTable::new(grid.clone(), table.weights().to_vec())
        .unwrap()
        .scaled(1.0 / last)
        .unwrap();
    let ncfg = NeuralConfig {
        k,
        window: 1,
        hidden: 24,
        n_freq: 12,
        freq_scale: 30.0,
        cond_dim: 0,
        seed: 5,
    };
    let fresh = NeuralScore::new(ncfg.clone(), w_table.clone(), params.clone()).unwrap();
    let mut model = NeuralScore::new(ncfg, w_table, params.clone()).unwrap();

    let loss_cfg = LossConfig::new(Weighting::GgTranspose, 0.01, 4.0, 16, 11).unwrap();
    let train_cfg = TrainConfig {
        epochs: 150,
        batches_per_epoch: 20,
        patience: 1000,
        validation_fraction: 0.1,
        use_fast_path: true,
    };
    let opt = OptimizerConfig { step_size: 7e-4, ..OptimizerConfig::default() };
    let trace = train(&mut model, &data, None, &dict, &loss_cfg, &table, opt, &train_cfg).unwrap();
    assert_eq!(trace.epochs.len(), 150);
    let first = trace.epochs[0].val_loss;
    let best = trace.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.5 * first, "validation loss should at least halve: {first} -> {best}");

    // the checkpoint must reproduce the trained field exactly
    let ckpt = dir.path().join("p.ckpt");
    save_checkpoint(&model, &ckpt).unwrap();
    let reloaded = load_checkpoint(&ckpt).unwrap();
    let probe =
        Array3::from_shape_vec((2, 1, 2), vec![0.3, 0.7, 0.9, 0.1]).unwrap();
    for &t in &[0.02, 0.5, 3.0] {
        let a = model.eval(probe.view(), t, None).unwrap();
        let b = reloaded.eval(probe.view(), t, None).unwrap();
        assert_eq!(a, b, "reloaded checkpoint must evaluate identically at t={t}");
    }

    // on fresh draws the trained field clearly beats the untrained one
    let mut rng = simplex_diffusion::rng::substream(99, &[1]);
    let mut l_trained = 0.0;
    let mut l_fresh = 0.0;
    let eval_times: Vec<f64> = grid.iter().copied().step_by(3).collect();
    for &t in &eval_times {
        let draws = draw_conditional_batch(&data, t, &dict, false, &mut rng).unwrap();
        l_trained +=
            weighted_dsm_loss(&reloaded, &draws, t, &dict, Weighting::GgTranspose, None).unwrap();
        l_fresh +=
            weighted_dsm_loss(&fresh, &draws, t, &dict, Weighting::GgTranspose, None).unwrap();
    }
    assert!(
        l_trained < 0.5 * l_fresh,
        "training should at least halve the loss: fresh {l_fresh} -> trained {l_trained}"
    );
}
