//! Precomputed forward-diffusion samples and scores over a time grid,
//! persisted in a self-describing binary format, plus the fast and
//! standard k-category sampling paths built on top of them.

use crate::error::{Error, Result};
use crate::jacobi::{forward_sample, JacobiParams, SeriesConfig, SpectralBasis, MIN_SERIES_TIME};
use crate::rng::substream;
use crate::simplex::{stick_break, SimplexPoint, StickPoint};
use rand::Rng;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SPXDDICT";
const FORMAT_VERSION: u32 = 1;

/// Samples are clamped this far inside (0,1) so every stored value admits
/// a finite recomputed score.
pub const SAMPLE_INTERIOR_EPS: f64 = 1e-8;

/// Presampled diffusion draws and matching transition scores for a family
/// of processes, both boundary starts, over an ascending time grid.
///
/// Flat array layout in (process, start, time, sample) order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionDictionary {
    params: Vec<JacobiParams>,
    time_grid: Vec<f64>,
    n_per_time: usize,
    em_steps: usize,
    seed: u64,
    samples: Vec<f64>,
    scores: Vec<f64>,
}

impl DiffusionDictionary {
    /// Assemble a dictionary from explicit arrays, validating shapes; the
    /// flat arrays are in (process, start, time, sample) order.
    pub fn from_parts(
        params: Vec<JacobiParams>,
        time_grid: Vec<f64>,
        n_per_time: usize,
        em_steps: usize,
        seed: u64,
        samples: Vec<f64>,
        scores: Vec<f64>,
    ) -> Result<Self> {
        if params.is_empty() || time_grid.is_empty() || n_per_time == 0 {
            return Err(Error::InvalidParameter("empty dictionary".into()));
        }
        if time_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("time grid must be ascending".into()));
        }
        let expected = params.len() * 2 * time_grid.len() * n_per_time;
        if samples.len() != expected || scores.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "need {expected} samples and scores, got {} and {}",
                samples.len(),
                scores.len()
            )));
        }
        if samples.iter().any(|&v| !(0.0..=1.0).contains(&v)) || scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("samples must lie in [0,1] with finite scores".into()));
        }
        Ok(Self { params, time_grid, n_per_time, em_steps, seed, samples, scores })
    }

    pub fn params(&self) -> &[JacobiParams] {
        &self.params
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn n_per_time(&self) -> usize {
        self.n_per_time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn em_steps(&self) -> usize {
        self.em_steps
    }

    fn bucket_index(&self, proc: usize, start: usize, time_ix: usize) -> usize {
        ((proc * 2 + start) * self.time_grid.len() + time_ix) * self.n_per_time
    }

    /// Stored (samples, scores) for one (process, start, grid-time) cell.
    pub fn bucket(&self, proc: usize, start: usize, time_ix: usize) -> (&[f64], &[f64]) {
        let lo = self.bucket_index(proc, start, time_ix);
        let hi = lo + self.n_per_time;
        (&self.samples[lo..hi], &self.scores[lo..hi])
    }

    /// Index of the grid time nearest to t; ties resolve to the earlier
    /// grid point. Errors when t falls outside the grid range (with a
    /// small relative slack for float roundtrip).
    pub fn nearest_time_index(&self, t: f64) -> Result<usize> {
        let grid = &self.time_grid;
        let slack = 1e-9 * grid[grid.len() - 1];
        if t < grid[0] - slack || t > grid[grid.len() - 1] + slack {
            return Err(Error::Domain(format!(
                "t={t} outside dictionary grid range [{}, {}]",
                grid[0],
                grid[grid.len() - 1]
            )));
        }
        let pos = grid.partition_point(|&g| g < t);
        if pos == 0 {
            return Ok(0);
        }
        if pos == grid.len() {
            return Ok(grid.len() - 1);
        }
        // strict inequality: exact midpoints go to the earlier point
        if t - grid[pos - 1] <= grid[pos] - t {
            Ok(pos - 1)
        } else {
            Ok(pos)
        }
    }

    /// Uniform random draw from the nearest-grid-time bucket.
    pub fn draw_univariate<R: Rng + ?Sized>(
        &self,
        proc: usize,
        start: usize,
        t: f64,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if proc >= self.params.len() || start > 1 {
            return Err(Error::Domain(format!("no bucket for process {proc}, start {start}")));
        }
        let ti = self.nearest_time_index(t)?;
        let (samples, scores) = self.bucket(proc, start, ti);
        let ix = rng.gen_range(0..samples.len());
        Ok((samples[ix], scores[ix]))
    }

    /// Verifies the flat-Dirichlet shape a_i=1, b_i=k-1-i required by the
    /// fast sampling path; returns k.
    pub fn flat_dirichlet_k(&self) -> Result<usize> {
        let k = self.params.len() + 1;
        for (i, p) in self.params.iter().enumerate() {
            if p.a != 1.0 || p.b != (k - 1 - i) as f64 {
                return Err(Error::UnsupportedConfiguration(format!(
                    "fast sampling needs the flat Dirichlet family, process {i} has (a,b)=({},{})",
                    p.a, p.b
                )));
            }
        }
        Ok(k)
    }
}

/// Build a dictionary: n_per_time Euler–Maruyama draws (and their scores)
/// per (process, boundary start, grid time). Deterministic given the seed;
/// every cell uses its own seeded substream, so the result is independent
/// of build order.
pub fn build_dictionary(
    params: &[JacobiParams],
    time_grid: &[f64],
    n_per_time: usize,
    em_steps: usize,
    seed: u64,
) -> Result<DiffusionDictionary> {
    build_dictionary_threaded(params, time_grid, n_per_time, em_steps, seed, 1)
}

/// As build_dictionary, chunking independent cells across n_threads.
pub fn build_dictionary_threaded(
    params: &[JacobiParams],
    time_grid: &[f64],
    n_per_time: usize,
    em_steps: usize,
    seed: u64,
    n_threads: usize,
) -> Result<DiffusionDictionary> {
    if params.is_empty() {
        return Err(Error::InvalidParameter("dictionary needs at least one process".into()));
    }
    if n_per_time == 0 || em_steps == 0 || n_threads == 0 {
        return Err(Error::InvalidParameter(
            "n_per_time, em_steps, and n_threads must be positive".into(),
        ));
    }
    if time_grid.is_empty() || time_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("time grid must be ascending and nonempty".into()));
    }
    if time_grid[0] < MIN_SERIES_TIME * (1.0 - 1e-9) {
        return Err(Error::Domain(format!(
            "grid times below {MIN_SERIES_TIME} are not supported, got {}",
            time_grid[0]
        )));
    }
    let n_times = time_grid.len();
    let cells: Vec<(usize, usize, usize)> = (0..params.len())
        .flat_map(|p| (0..2usize).flat_map(move |s| (0..n_times).map(move |ti| (p, s, ti))))
        .collect();
    let cell_len = n_per_time;
    let mut samples = vec![0.0; cells.len() * cell_len];
    let mut scores = vec![0.0; cells.len() * cell_len];
    let bases: Vec<SpectralBasis> = params
        .iter()
        .map(|&p| SpectralBasis::new(p, SeriesConfig::default().n_terms))
        .collect();

    let fill_cell = |cell: &(usize, usize, usize), out_s: &mut [f64], out_c: &mut [f64]| -> Result<()> {
        let &(p, start, ti) = cell;
        let t = time_grid[ti];
        let mut rng = substream(seed, &[p as u64, start as u64, ti as u64]);
        let cfg = SeriesConfig::for_time(t);
        let coefs = bases[p].coefficients(t, start as f64, cfg.n_terms)?;
        for i in 0..cell_len {
            let x = forward_sample(start as f64, t, params[p], em_steps, &mut rng)
                .clamp(SAMPLE_INTERIOR_EPS, 1.0 - SAMPLE_INTERIOR_EPS);
            let (_, score) = bases[p].log_density_and_score(&coefs, x, t, cfg)?;
            out_s[i] = x;
            out_c[i] = score;
        }
        Ok(())
    };

    if n_threads <= 1 {
        for (ci, cell) in cells.iter().enumerate() {
            let (lo, hi) = (ci * cell_len, (ci + 1) * cell_len);
            fill_cell(cell, &mut samples[lo..hi], &mut scores[lo..hi])?;
        }
    } else {
        // each work item owns an exclusive chunk of the output buffers, so
        // threads write in place and only errors need collecting
        let work: std::sync::Mutex<Vec<(usize, &mut [f64], &mut [f64])>> = std::sync::Mutex::new(
            samples
                .chunks_mut(cell_len)
                .zip(scores.chunks_mut(cell_len))
                .enumerate()
                .map(|(ci, (s, c))| (ci, s, c))
                .collect(),
        );
        let first_err: std::sync::Mutex<Option<Error>> = std::sync::Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..n_threads {
                scope.spawn(|| loop {
                    let Some((ci, s, c)) = work.lock().unwrap().pop() else { break };
                    if let Err(e) = fill_cell(&cells[ci], s, c) {
                        first_err.lock().unwrap().get_or_insert(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = first_err.into_inner().unwrap() {
            return Err(e);
        }
    }

    Ok(DiffusionDictionary {
        params: params.to_vec(),
        time_grid: time_grid.to_vec(),
        n_per_time,
        em_steps,
        seed,
        samples,
        scores,
    })
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::TruncatedFile(format!(
                "needed {} bytes at offset {}, file has {}",
                n,
                self.pos,
                self.data.len()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Serialize to the versioned little-endian binary format with a trailing
/// CRC32 over everything after the magic bytes.
pub fn save(dict: &DiffusionDictionary, path: &Path) -> Result<()> {
    let mut body = Vec::new();
    push_u32(&mut body, FORMAT_VERSION);
    push_u32(&mut body, dict.params.len() as u32);
    push_u32(&mut body, dict.time_grid.len() as u32);
    push_u32(&mut body, dict.n_per_time as u32);
    push_u32(&mut body, dict.em_steps as u32);
    push_u64(&mut body, dict.seed);
    for p in &dict.params {
        push_f64(&mut body, p.a);
        push_f64(&mut body, p.b);
        push_f64(&mut body, p.s);
    }
    for &t in &dict.time_grid {
        push_f64(&mut body, t);
    }
    for &v in &dict.samples {
        push_f64(&mut body, v);
    }
    for &v in &dict.scores {
        push_f64(&mut body, v);
    }
    let crc = crc32fast::hash(&body);
    let mut f = std::fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&body)?;
    f.write_all(&crc.to_le_bytes())?;
    Ok(())
}

/// Load and fully validate a dictionary file.
pub fn load(path: &Path) -> Result<DiffusionDictionary> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    if data.len() < MAGIC.len() + 8 {
        return Err(Error::TruncatedFile("shorter than magic + trailer".into()));
    }
    if &data[..MAGIC.len()] != MAGIC {
        return Err(Error::Domain("not a dictionary file (bad magic bytes)".into()));
    }
    let body = &data[MAGIC.len()..data.len() - 4];
    let stored = u32::from_le_bytes(data[data.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let mut cur = Cursor { data: body, pos: 0 };
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: FORMAT_VERSION, found: version });
    }
    let n_proc = cur.u32()? as usize;
    let n_times = cur.u32()? as usize;
    let n_per_time = cur.u32()? as usize;
    let em_steps = cur.u32()? as usize;
    let seed = cur.u64()?;
    let mut params = Vec::with_capacity(n_proc);
    for _ in 0..n_proc {
        let (a, b, s) = (cur.f64()?, cur.f64()?, cur.f64()?);
        params.push(JacobiParams::new(a, b, s)?);
    }
    let mut time_grid = Vec::with_capacity(n_times);
    for _ in 0..n_times {
        time_grid.push(cur.f64()?);
    }
    let n_total = n_proc * 2 * n_times * n_per_time;
    let mut samples = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        samples.push(cur.f64()?);
    }
    let mut scores = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        scores.push(cur.f64()?);
    }
    if cur.pos != body.len() {
        return Err(Error::TruncatedFile(format!(
            "{} trailing bytes after payload",
            body.len() - cur.pos
        )));
    }
    Ok(DiffusionDictionary {
        params,
        time_grid,
        n_per_time,
        em_steps,
        seed,
        samples,
        scores,
    })
}

/// One draw from the fast k-category path, in stick-construction order.
#[derive(Clone, Debug)]
pub struct CategoryDraw {
    /// Diffused point in the original category order.
    pub x: SimplexPoint,
    /// Stick coordinates in construction order.
    pub v: StickPoint,
    /// Conditional v-space score per construction stick.
    pub score_v: Vec<f64>,
    /// order[i] = original category index of construction position i.
    pub order: Vec<usize>,
}

/// Inverse CDF of Beta(1, b): 1 - (1-u)^{1/b}.
fn beta_1b_inverse_cdf(u: f64, b: f64) -> f64 {
    1.0 - (1.0 - u).powf(1.0 / b)
}

/// Stationary Beta(1, b) score at v: -(b-1)/(1-v).
fn beta_1b_score(v: f64, b: f64) -> f64 {
    -(b - 1.0) / (1.0 - v)
}

/// Fast diffused draw for a one-hot start on the flat Dirichlet family.
///
/// Stick construction is reordered hot-dimension-first: the hot stick is a
/// Jacobi(1, k-1) dictionary draw from start 1, every remaining stick is
/// an exact stationary Beta(1, k-1-i) inverse-CDF draw. Valid only when
/// the stationary law is the flat Dirichlet; the permuted construction is
/// then distributionally identical to the standard path.
pub fn sample_k_category_fast<R: Rng + ?Sized>(
    one_hot: &SimplexPoint,
    t: f64,
    dict: &DiffusionDictionary,
    rng: &mut R,
) -> Result<CategoryDraw> {
    let k = dict.flat_dirichlet_k()?;
    if one_hot.k() != k {
        return Err(Error::ShapeMismatch(format!("one_hot has k={}, dictionary k={}", one_hot.k(), k)));
    }
    let hot = hot_index(one_hot)?;
    let mut order = Vec::with_capacity(k);
    order.push(hot);
    order.extend((0..k).filter(|&c| c != hot));

    let mut v = Vec::with_capacity(k - 1);
    let mut score_v = Vec::with_capacity(k - 1);
    let (v0, s0) = dict.draw_univariate(0, 1, t, rng)?;
    v.push(v0);
    score_v.push(s0);
    for i in 1..k - 1 {
        let b = (k - 1 - i) as f64;
        let vi = beta_1b_inverse_cdf(rng.gen::<f64>(), b).clamp(SAMPLE_INTERIOR_EPS, 1.0 - SAMPLE_INTERIOR_EPS);
        v.push(vi);
        score_v.push(beta_1b_score(vi, b));
    }
    let sticks = StickPoint::new(v)?;
    let x_construct = stick_break(&sticks);
    let mut x = vec![0.0; k];
    for (pos, &cat) in order.iter().enumerate() {
        x[cat] = x_construct.components()[pos];
    }
    Ok(CategoryDraw { x: SimplexPoint::new(x)?, v: sticks, score_v, order })
}

/// Standard diffused draw for a one-hot start, natural stick order.
///
/// Determined sticks (those the inverse transform fixes for this one-hot)
/// are dictionary draws from their own process; undetermined sticks are
/// stationary Beta draws with stationary scores.
pub fn sample_k_category_standard<R: Rng + ?Sized>(
    one_hot: &SimplexPoint,
    t: f64,
    dict: &DiffusionDictionary,
    rng: &mut R,
) -> Result<CategoryDraw> {
    let k = dict.params().len() + 1;
    if one_hot.k() != k {
        return Err(Error::ShapeMismatch(format!("one_hot has k={}, dictionary k={}", one_hot.k(), k)));
    }
    let hot = hot_index(one_hot)?;
    let mut v = Vec::with_capacity(k - 1);
    let mut score_v = Vec::with_capacity(k - 1);
    let mut determined = Vec::with_capacity(k - 1);
    for j in 0..k - 1 {
        let p = dict.params()[j];
        if j < hot {
            let (vj, sj) = dict.draw_univariate(j, 0, t, rng)?;
            v.push(vj);
            score_v.push(sj);
            determined.push(true);
        } else if j == hot {
            let (vj, sj) = dict.draw_univariate(j, 1, t, rng)?;
            v.push(vj);
            score_v.push(sj);
            determined.push(true);
        } else {
            let vj = if p.a == 1.0 {
                beta_1b_inverse_cdf(rng.gen::<f64>(), p.b)
            } else {
                rng.sample(rand_distr::Beta::new(p.a, p.b).expect("validated params"))
            }
            .clamp(SAMPLE_INTERIOR_EPS, 1.0 - SAMPLE_INTERIOR_EPS);
            v.push(vj);
            score_v.push(p.stationary_score(vj));
            determined.push(false);
        }
    }
    let sticks = StickPoint::with_mask(v, determined)?;
    let x = stick_break(&sticks);
    Ok(CategoryDraw { x, v: sticks, score_v, order: (0..k).collect() })
}

fn hot_index(one_hot: &SimplexPoint) -> Result<usize> {
    let mut hot = None;
    for (i, &c) in one_hot.components().iter().enumerate() {
        if c == 1.0 {
            if hot.is_some() {
                return Err(Error::Domain("input is not one-hot (multiple unit components)".into()));
            }
            hot = Some(i);
        } else if c != 0.0 {
            return Err(Error::Domain(format!("input is not one-hot (component {c})")));
        }
    }
    hot.ok_or_else(|| Error::Domain("input is not one-hot (no unit component)".into()))
}
