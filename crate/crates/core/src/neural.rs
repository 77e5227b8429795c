//! Trainable score network: a per-position MLP over a window of neighboring
//! positions with a random-frequency sinusoidal time embedding and an
//! explicit time-dependent output scaling, plus hand-written reverse-mode
//! gradients and a versioned checkpoint format.

use crate::error::{Error, Result};
use crate::jacobi::JacobiParams;
use crate::scorefield::ScoreField;
use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SPXDSCOR";
const FORMAT_VERSION: u32 = 1;

/// Piecewise-linear positive scaling w(t); queries outside the table range
/// clamp to the end values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingTable {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ScalingTable {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.is_empty() {
            return Err(Error::ShapeMismatch("times and values must match and be nonempty".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("scaling times must be strictly ascending".into()));
        }
        if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter("scaling values must be positive and finite".into()));
        }
        Ok(Self { times, values })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![value])
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolate(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        if t >= ts[ts.len() - 1] {
            return self.values[ts.len() - 1];
        }
        let hi = ts.partition_point(|&g| g < t).max(1);
        let (t0, t1) = (ts[hi - 1], ts[hi]);
        let frac = (t - t0) / (t1 - t0);
        self.values[hi - 1] * (1.0 - frac) + self.values[hi] * frac
    }

    /// Elementwise-scaled copy.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.times.clone(), self.values.iter().map(|v| v * factor).collect())
    }
}

/// Network shape hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralConfig {
    pub k: usize,
    /// odd window width; position i sees zero-padded positions i±window/2
    pub window: usize,
    pub hidden: usize,
    pub n_freq: usize,
    pub freq_scale: f64,
    pub cond_dim: usize,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self { k: 2, window: 9, hidden: 256, n_freq: 128, freq_scale: 30.0, cond_dim: 0, seed: 0 }
    }
}

impl NeuralConfig {
    fn validate(&self) -> Result<()> {
        if self.k < 2 || self.window == 0 || self.window % 2 == 0 || self.hidden == 0 || self.n_freq == 0 {
            return Err(Error::InvalidParameter(
                "need k >= 2, odd window, positive hidden width and frequency count".into(),
            ));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.window * self.k + self.cond_dim
    }

    fn emb_dim(&self) -> usize {
        2 * self.n_freq
    }
}

/// Flat-parameter offsets: x-input and time-embedding first-layer weights,
/// two further hidden layers, and the output head.
#[derive(Clone, Copy, Debug)]
struct Offsets {
    w1x: usize,
    w1t: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    w4: usize,
    b4: usize,
    total: usize,
}

impl Offsets {
    fn new(cfg: &NeuralConfig) -> Self {
        let (d, e, h, k) = (cfg.input_dim(), cfg.emb_dim(), cfg.hidden, cfg.k);
        let w1x = 0;
        let w1t = w1x + h * d;
        let b1 = w1t + h * e;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h * h;
        let w4 = b3 + h;
        let b4 = w4 + k * h;
        Self { w1x, w1t, b1, w2, b2, w3, b3, w4, b4, total: b4 + k }
    }
}

/// Score model with flat f64 parameters; forward is deterministic given
/// parameters and inputs.
pub struct NeuralScore {
    cfg: NeuralConfig,
    freqs: Vec<f64>,
    w_table: ScalingTable,
    diffusion: Vec<JacobiParams>,
    params: Vec<f64>,
    off: Offsets,
}

/// Forward-pass activations retained for the backward pass.
pub struct ForwardCache {
    inputs: Array2<f64>,
    temb: Array1<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    z3: Array2<f64>,
    h3: Array2<f64>,
    wt: f64,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_deriv(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

impl NeuralScore {
    pub fn new(cfg: NeuralConfig, w_table: ScalingTable, diffusion: Vec<JacobiParams>) -> Result<Self> {
        cfg.validate()?;
        if diffusion.is_empty() {
            return Err(Error::InvalidParameter("diffusion params must be nonempty".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        let freqs: Vec<f64> = (0..cfg.n_freq)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * cfg.freq_scale
            })
            .collect();
        let off = Offsets::new(&cfg);
        let mut params = vec![0.0; off.total];
        let (d, e, h) = (cfg.input_dim(), cfg.emb_dim(), cfg.hidden);
        let mut init = |lo: usize, rows: usize, cols: usize, fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            for p in params[lo..lo + rows * cols].iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = z * std;
            }
        };
        init(off.w1x, h, d, d + e);
        init(off.w1t, h, e, d + e);
        init(off.w2, h, h, h);
        init(off.w3, h, h, h);
        // output head stays zero-initialized: the model starts at score 0
        Ok(Self { cfg, freqs, w_table, diffusion, params, off })
    }

    pub fn config(&self) -> &NeuralConfig {
        &self.cfg
    }

    pub fn w_table(&self) -> &ScalingTable {
        &self.w_table
    }

    pub fn diffusion(&self) -> &[JacobiParams] {
        &self.diffusion
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight(&self, lo: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[lo..lo + rows * cols]).expect("offset layout")
    }

    fn bias(&self, lo: usize, n: usize) -> Array1<f64> {
        Array1::from_iter(self.params[lo..lo + n].iter().copied())
    }

    /// Concatenated sin/cos embedding of 2π f t over the fixed frequencies.
    fn time_embedding(&self, t: f64) -> Array1<f64> {
        let mut e = Array1::zeros(self.cfg.emb_dim());
        for (i, &f) in self.freqs.iter().enumerate() {
            let arg = 2.0 * std::f64::consts::PI * f * t;
            e[i] = arg.sin();
            e[self.cfg.n_freq + i] = arg.cos();
        }
        e
    }

    /// Window-and-condition rows: one row of length window·k + cond_dim per
    /// (sequence, position), positions outside the sequence zero-padded.
    fn assemble_inputs(&self, x: ArrayView3<f64>, condition: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
        let (n_seq, len, k) = x.dim();
        if k != self.cfg.k {
            return Err(Error::ShapeMismatch(format!("batch k={k}, model k={}", self.cfg.k)));
        }
        match (&condition, self.cfg.cond_dim) {
            (None, 0) => {}
            (Some(c), d) if c.dim() == (n_seq, d) && d > 0 => {}
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "condition must be ({n_seq}, {}), got {:?}",
                    self.cfg.cond_dim,
                    condition.map(|c| c.dim())
                )))
            }
        }
        let half = self.cfg.window / 2;
        let d = self.cfg.input_dim();
        let mut inp = Array2::zeros((n_seq * len, d));
        for n in 0..n_seq {
            for l in 0..len {
                let row = n * len + l;
                for w in 0..self.cfg.window {
                    let pos = l as isize + w as isize - half as isize;
                    if pos < 0 || pos >= len as isize {
                        continue;
                    }
                    for c in 0..k {
                        inp[(row, w * k + c)] = x[(n, pos as usize, c)];
                    }
                }
                if let Some(cond) = &condition {
                    for cd in 0..self.cfg.cond_dim {
                        inp[(row, self.cfg.window * k + cd)] = cond[(n, cd)];
                    }
                }
            }
        }
        Ok(inp)
    }

    /// Raw network pass over assembled input rows; output already carries
    /// the w(t) scaling.
    pub fn forward_cached(
        &self,
        x: ArrayView3<f64>,
        t: f64,
        condition: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let inputs = self.assemble_inputs(x, condition)?;
        let (d, e, h, k) = (self.cfg.input_dim(), self.cfg.emb_dim(), self.cfg.hidden, self.cfg.k);
        let temb = self.time_embedding(t);
        let w1x = self.weight(self.off.w1x, h, d);
        let w1t = self.weight(self.off.w1t, h, e);
        // the time contribution is shared by every row: one GEMV, then a
        // broadcast add together with the bias
        let t_shift = w1t.dot(&temb) + self.bias(self.off.b1, h);
        let mut z1 = inputs.dot(&w1x.t());
        z1 += &t_shift;
        let h1 = z1.mapv(silu);
        let mut z2 = h1.dot(&self.weight(self.off.w2, h, h).t());
        z2 += &self.bias(self.off.b2, h);
        let h2 = z2.mapv(silu);
        let mut z3 = h2.dot(&self.weight(self.off.w3, h, h).t());
        z3 += &self.bias(self.off.b3, h);
        let h3 = z3.mapv(silu);
        let mut out = h3.dot(&self.weight(self.off.w4, k, h).t());
        out += &self.bias(self.off.b4, k);
        let wt = self.w_table.interpolate(t);
        out *= wt;
        let cache = ForwardCache { inputs, temb, z1, h1, z2, h2, z3, h3, wt };
        Ok((out, cache))
    }

    /// Reverse-mode parameter gradients; upstream is dLoss/d(scaled output)
    /// with one row per (sequence, position).
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<Vec<f64>> {
        let (_, e, h, k) = (self.cfg.input_dim(), self.cfg.emb_dim(), self.cfg.hidden, self.cfg.k);
        if upstream.dim() != (cache.h3.nrows(), k) {
            return Err(Error::ShapeMismatch(format!(
                "upstream is {:?}, expected ({}, {k})",
                upstream.dim(),
                cache.h3.nrows()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        let gp = upstream.mapv(|g| g * cache.wt);

        let assign = |grad: &mut [f64], lo: usize, m: &Array2<f64>| {
            grad[lo..lo + m.len()].copy_from_slice(m.as_slice().expect("contiguous"));
        };
        let assign1 = |grad: &mut [f64], lo: usize, v: &Array1<f64>| {
            grad[lo..lo + v.len()].copy_from_slice(v.as_slice().expect("contiguous"));
        };

        assign(&mut grad, self.off.w4, &gp.t().dot(&cache.h3));
        assign1(&mut grad, self.off.b4, &gp.sum_axis(Axis(0)));

        let mut g3 = gp.dot(&self.weight(self.off.w4, k, h));
        g3.zip_mut_with(&cache.z3, |g, &z| *g *= silu_deriv(z));
        assign(&mut grad, self.off.w3, &g3.t().dot(&cache.h2));
        assign1(&mut grad, self.off.b3, &g3.sum_axis(Axis(0)));

        let mut g2 = g3.dot(&self.weight(self.off.w3, h, h));
        g2.zip_mut_with(&cache.z2, |g, &z| *g *= silu_deriv(z));
        assign(&mut grad, self.off.w2, &g2.t().dot(&cache.h1));
        assign1(&mut grad, self.off.b2, &g2.sum_axis(Axis(0)));

        let mut g1 = g2.dot(&self.weight(self.off.w2, h, h));
        g1.zip_mut_with(&cache.z1, |g, &z| *g *= silu_deriv(z));
        assign(&mut grad, self.off.w1x, &g1.t().dot(&cache.inputs));
        let g1_sum = g1.sum_axis(Axis(0));
        assign1(&mut grad, self.off.b1, &g1_sum);
        // time weights see the same embedding in every row
        let mut w1t_grad = Array2::zeros((h, e));
        for i in 0..h {
            for j in 0..e {
                w1t_grad[(i, j)] = g1_sum[i] * cache.temb[j];
            }
        }
        assign(&mut grad, self.off.w1t, &w1t_grad);
        Ok(grad)
    }
}

impl ScoreField for NeuralScore {
    fn k(&self) -> usize {
        self.cfg.k
    }

    fn seq_len(&self) -> usize {
        // the per-position network is shared; any length works
        0
    }

    fn cond_dim(&self) -> usize {
        self.cfg.cond_dim
    }

    fn eval(
        &self,
        x: ArrayView3<f64>,
        t: f64,
        condition: Option<ArrayView2<f64>>,
    ) -> Result<Array3<f64>> {
        let (n_seq, len, k) = x.dim();
        let (flat, _) = self.forward_cached(x, t, condition)?;
        Ok(flat.into_shape_with_order((n_seq, len, k)).expect("row layout"))
    }
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Write a versioned checkpoint: config, frequencies, scaling table,
/// diffusion parameters, and flat parameters, CRC32-trailed.
pub fn save_checkpoint(model: &NeuralScore, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    body.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        model.cfg.k,
        model.cfg.window,
        model.cfg.hidden,
        model.cfg.n_freq,
        model.cfg.cond_dim,
    ] {
        body.extend_from_slice(&(v as u32).to_le_bytes());
    }
    body.extend_from_slice(&model.cfg.freq_scale.to_le_bytes());
    body.extend_from_slice(&model.cfg.seed.to_le_bytes());
    body.extend_from_slice(&(model.w_table.times.len() as u32).to_le_bytes());
    body.extend_from_slice(&(model.diffusion.len() as u32).to_le_bytes());
    push_f64s(&mut body, &model.freqs);
    push_f64s(&mut body, &model.w_table.times);
    push_f64s(&mut body, &model.w_table.values);
    for p in &model.diffusion {
        push_f64s(&mut body, &[p.a, p.b, p.s]);
    }
    push_f64s(&mut body, &model.params);
    let crc = crc32fast::hash(&body);
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&body)?;
    f.write_all(&crc.to_le_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NeuralScore> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 8 {
        return Err(Error::TruncatedFile("shorter than magic + trailer".into()));
    }
    if &data[..MAGIC.len()] != MAGIC {
        return Err(Error::Domain("not a checkpoint file (bad magic bytes)".into()));
    }
    let body = &data[MAGIC.len()..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::TruncatedFile(format!("needed {n} bytes at offset {pos}")));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |pos: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()))
    };
    let version = u32_at(&mut pos)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    let k = u32_at(&mut pos)? as usize;
    let window = u32_at(&mut pos)? as usize;
    let hidden = u32_at(&mut pos)? as usize;
    let n_freq = u32_at(&mut pos)? as usize;
    let cond_dim = u32_at(&mut pos)? as usize;
    let freq_scale = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let seed = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let n_table = u32_at(&mut pos)? as usize;
    let n_proc = u32_at(&mut pos)? as usize;
    let f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
        let bytes = take(pos, 8 * n)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    };
    let freqs = f64s(&mut pos, n_freq)?;
    let times = f64s(&mut pos, n_table)?;
    let values = f64s(&mut pos, n_table)?;
    let mut diffusion = Vec::with_capacity(n_proc);
    for _ in 0..n_proc {
        let v = f64s(&mut pos, 3)?;
        diffusion.push(JacobiParams::new(v[0], v[1], v[2])?);
    }
    let cfg = NeuralConfig { k, window, hidden, n_freq, freq_scale, cond_dim, seed };
    cfg.validate()?;
    let off = Offsets::new(&cfg);
    let params = f64s(&mut pos, off.total)?;
    if pos != body.len() {
        return Err(Error::TruncatedFile(format!("{} trailing bytes", body.len() - pos)));
    }
    Ok(NeuralScore {
        cfg,
        freqs,
        w_table: ScalingTable::new(times, values)?,
        diffusion,
        params,
        off,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;

    fn toy_model(seed: u64) -> NeuralScore {
        let cfg = NeuralConfig {
            k: 3,
            window: 3,
            hidden: 8,
            n_freq: 4,
            freq_scale: 10.0,
            cond_dim: 1,
            seed,
        };
        let table = ScalingTable::new(vec![0.01, 0.1, 1.0], vec![5.0, 2.0, 0.5]).unwrap();
        let diffusion = vec![
            JacobiParams::new(1.0, 2.0, 1.0).unwrap(),
            JacobiParams::new(1.0, 1.0, 1.0).unwrap(),
        ];
        NeuralScore::new(cfg, table, diffusion).unwrap()
    }

    fn toy_batch(seed: u64) -> (Array3<f64>, Array2<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (n_seq, len, k) = (2, 4, 3);
        let mut x = Array3::zeros((n_seq, len, k));
        for n in 0..n_seq {
            for l in 0..len {
                let mut row: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.1).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
                for c in 0..k {
                    x[(n, l, c)] = row[c];
                }
            }
        }
        let cond = Array2::from_shape_fn((n_seq, 1), |(n, _)| n as f64);
        (x, cond)
    }

    #[test]
    fn scaling_table_interpolates_and_clamps() {
        let tb = ScalingTable::new(vec![0.1, 1.0], vec![4.0, 2.0]).unwrap();
        assert_eq!(tb.interpolate(0.01), 4.0);
        assert_eq!(tb.interpolate(5.0), 2.0);
        assert!((tb.interpolate(0.55) - 3.0).abs() < 1e-12);
        assert!(ScalingTable::new(vec![1.0, 0.5], vec![1.0, 1.0]).is_err());
        assert!(ScalingTable::new(vec![0.5, 1.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn zero_initialized_head_outputs_zero() {
        let model = toy_model(1);
        let (x, cond) = toy_batch(2);
        let out = model.eval(x.view(), 0.3, Some(cond.view())).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_scaling_table_doubles_outputs() {
        let mut model = toy_model(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for p in model.params_mut() {
            *p += 0.05 * rng.gen::<f64>();
        }
        let (x, cond) = toy_batch(4);
        let out1 = model.eval(x.view(), 0.2, Some(cond.view())).unwrap();
        let doubled = NeuralScore {
            w_table: model.w_table.scaled(2.0).unwrap(),
            params: model.params.clone(),
            freqs: model.freqs.clone(),
            diffusion: model.diffusion.clone(),
            cfg: model.cfg.clone(),
            off: model.off,
        };
        let out2 = doubled.eval(x.view(), 0.2, Some(cond.view())).unwrap();
        for (a, b) in out1.iter().zip(out2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut model = toy_model(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for p in model.params_mut() {
            *p += 0.1 * rng.gen::<f64>();
        }
        let (x, cond) = toy_batch(6);
        let a = model.eval(x.view(), 0.7, Some(cond.view())).unwrap();
        let b = model.eval(x.view(), 0.7, Some(cond.view())).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = toy_model(7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for p in model.params_mut() {
            *p += 0.1 * (rng.gen::<f64>() - 0.5);
        }
        let (x, cond) = toy_batch(8);
        let t = 0.15;
        // random linear functional of the outputs as the test loss
        let (out, cache) = model.forward_cached(x.view(), t, Some(cond.view())).unwrap();
        let g = Array2::from_shape_fn(out.dim(), |_| rng.gen::<f64>() - 0.5);
        let grad = model.backward(&cache, g.view()).unwrap();

        let loss = |m: &NeuralScore| -> f64 {
            let (o, _) = m.forward_cached(x.view(), t, Some(cond.view())).unwrap();
            (&o * &g).sum()
        };
        let n = model.n_params();
        let h = 1e-5;
        let mut checked = 0;
        for i in (0..n).step_by(n / 120 + 1) {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let fp = loss(&model);
            model.params_mut()[i] = orig - h;
            let fm = loss(&model);
            model.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                (fd - grad[i]).abs() / denom <= 1e-4,
                "param {i}: fd {fd} vs grad {}",
                grad[i]
            );
            checked += 1;
        }
        assert!(checked >= 100, "checked {checked} parameters");
    }

    #[test]
    fn zero_head_blocks_gradients_to_hidden_layers() {
        // with the output head at its zero init, upstream cannot reach the
        // hidden layers, while the head itself still gets gradient
        let model = toy_model(15);
        let (x, cond) = toy_batch(16);
        let (out, cache) = model.forward_cached(x.view(), 0.2, Some(cond.view())).unwrap();
        let g = Array2::from_elem(out.dim(), 1.0);
        let grad = model.backward(&cache, g.view()).unwrap();
        let off = model.off;
        assert!(grad[off.w1x..off.w4].iter().all(|&v| v == 0.0));
        assert!(grad[off.w4..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let mut model = toy_model(17);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for p in model.params_mut() {
            *p += 0.1 * (rng.gen::<f64>() - 0.5);
        }
        let (x, cond) = toy_batch(18);
        let t = 0.4;
        let (out, cache) = model.forward_cached(x.view(), t, Some(cond.view())).unwrap();
        let g = Array2::from_elem(out.dim(), 1.0);
        let full = model.backward(&cache, g.view()).unwrap();

        let mut summed = vec![0.0; model.n_params()];
        for n in 0..2 {
            let xn = x.slice(ndarray::s![n..n + 1, .., ..]);
            let cn = cond.slice(ndarray::s![n..n + 1, ..]);
            let (on, cachen) = model.forward_cached(xn, t, Some(cn)).unwrap();
            let gn = Array2::from_elem(on.dim(), 1.0);
            let gr = model.backward(&cachen, gn.view()).unwrap();
            for (s, v) in summed.iter_mut().zip(gr.iter()) {
                *s += v;
            }
        }
        for (a, b) in full.iter().zip(summed.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_corruption() {
        let mut model = toy_model(21);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for p in model.params_mut() {
            *p += rng.gen::<f64>();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model.params(), loaded.params());
        assert_eq!(model.freqs, loaded.freqs);
        assert_eq!(model.cfg, loaded.cfg);
        assert_eq!(model.w_table, loaded.w_table);
        assert_eq!(model.diffusion, loaded.diffusion);
        let (x, cond) = toy_batch(24);
        assert_eq!(
            model.eval(x.view(), 0.33, Some(cond.view())).unwrap(),
            loaded.eval(x.view(), 0.33, Some(cond.view())).unwrap()
        );

        let bytes = std::fs::read(&path).unwrap();
        let mut corrupted = bytes.clone();
        let mid = corrupted.len() / 2;
        corrupted[mid] ^= 0x01;
        std::fs::write(&path, &corrupted).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::ChecksumMismatch { .. })));

        let mut versioned = bytes.clone();
        versioned[8..12].copy_from_slice(&7u32.to_le_bytes());
        let end = versioned.len() - 4;
        let crc = crc32fast::hash(&versioned[8..end]);
        versioned[end..].copy_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &versioned).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::VersionMismatch { expected: 1, found: 7 })
        ));
    }

    #[test]
    fn condition_changes_output() {
        let mut model = toy_model(25);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(27);
        for p in model.params_mut() {
            *p += 0.2 * (rng.gen::<f64>() - 0.5);
        }
        let (x, _) = toy_batch(26);
        let c0 = Array2::from_elem((2, 1), 0.0);
        let c1 = Array2::from_elem((2, 1), 1.0);
        let o0 = model.eval(x.view(), 0.3, Some(c0.view())).unwrap();
        let o1 = model.eval(x.view(), 0.3, Some(c1.view())).unwrap();
        assert!(o0.iter().zip(o1.iter()).any(|(a, b)| (a - b).abs() > 1e-9));
        assert!(model.eval(x.view(), 0.3, None).is_err());
    }
}
