//! Built-in category datasets and the plain-text sequence formats the
//! commands read and write.

use crate::config::{DatasetKind, RunConfig};
use crate::shidoku;
use rand::Rng;
use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::rng::substream;

/// Four-letter alphabet for k=4 sequence files; category i maps to
/// LETTERS[i] (so the letters correspond to categories 1–4 in 1-based
/// counting).
pub const LETTERS: [char; 4] = ['A', 'C', 'G', 'T'];

/// Five-symbol motif planted when the condition class is 0.
pub const MOTIF_CLASS_0: [usize; 5] = [0, 1, 2, 3, 0];
/// Five-symbol motif planted when the condition class is 1.
pub const MOTIF_CLASS_1: [usize; 5] = [3, 2, 1, 0, 3];
/// Sequence length of the conditional motif task.
pub const MOTIF_SEQ_LEN: usize = 32;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub rows: Vec<Vec<usize>>,
    /// One condition vector per row for conditional tasks.
    pub conditions: Option<Vec<Vec<f64>>>,
    pub k: usize,
    pub seq_len: usize,
}

/// Materialize the dataset a config selects. Deterministic in the
/// dataset seed.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let k = cfg.diffusion.k;
    let ds = &cfg.dataset;
    match ds.kind {
        DatasetKind::Uniform => {
            if ds.seq_len == 0 || ds.count == 0 {
                return Err(Error::InvalidParameter(
                    "uniform dataset needs positive seq_len and count".into(),
                ));
            }
            let mut rng = substream(ds.seed, &[1]);
            let rows = (0..ds.count)
                .map(|_| (0..ds.seq_len).map(|_| rng.gen_range(0..k)).collect())
                .collect();
            Ok(Dataset { rows, conditions: None, k, seq_len: ds.seq_len })
        }
        DatasetKind::Bernoulli => {
            if k != 2 {
                return Err(Error::InvalidParameter(format!(
                    "bernoulli dataset needs k = 2, config has k = {k}"
                )));
            }
            if ds.seq_len == 0 || ds.count == 0 {
                return Err(Error::InvalidParameter(
                    "bernoulli dataset needs positive seq_len and count".into(),
                ));
            }
            let mut rng = substream(ds.seed, &[2]);
            // category 0 drawn with probability p
            let rows = (0..ds.count)
                .map(|_| {
                    (0..ds.seq_len)
                        .map(|_| if rng.gen::<f64>() < ds.p { 0 } else { 1 })
                        .collect()
                })
                .collect();
            Ok(Dataset { rows, conditions: None, k: 2, seq_len: ds.seq_len })
        }
        DatasetKind::Shidoku => {
            if k != 4 {
                return Err(Error::InvalidParameter(format!(
                    "shidoku dataset needs k = 4, config has k = {k}"
                )));
            }
            let rows = shidoku::enumerate_grids()
                .iter()
                .map(shidoku::grid_to_row)
                .collect::<Result<Vec<_>>>()?;
            Ok(Dataset { rows, conditions: None, k: 4, seq_len: 16 })
        }
        DatasetKind::Motif => {
            if k != 4 {
                return Err(Error::InvalidParameter(format!(
                    "motif dataset needs k = 4, config has k = {k}"
                )));
            }
            if ds.count == 0 {
                return Err(Error::InvalidParameter("motif dataset needs a positive count".into()));
            }
            let mut rng = substream(ds.seed, &[3]);
            let mut rows = Vec::with_capacity(ds.count);
            let mut conds = Vec::with_capacity(ds.count);
            for _ in 0..ds.count {
                let class = rng.gen_range(0..2usize);
                let motif = if class == 0 { MOTIF_CLASS_0 } else { MOTIF_CLASS_1 };
                let mut row: Vec<usize> =
                    (0..MOTIF_SEQ_LEN).map(|_| rng.gen_range(0..4)).collect();
                let pos = rng.gen_range(0..=MOTIF_SEQ_LEN - motif.len());
                row[pos..pos + motif.len()].copy_from_slice(&motif);
                rows.push(row);
                let mut c = vec![0.0; 2];
                c[class] = 1.0;
                conds.push(c);
            }
            Ok(Dataset { rows, conditions: Some(conds), k: 4, seq_len: MOTIF_SEQ_LEN })
        }
        DatasetKind::File => {
            let path = ds.path.as_ref().ok_or_else(|| {
                Error::InvalidParameter("config: dataset.path is required for kind = file".into())
            })?;
            let text = std::fs::read_to_string(path)?;
            let rows = parse_rows(&text, k)?;
            if rows.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "dataset file {} holds no sequences",
                    path.display()
                )));
            }
            let seq_len = rows[0].len();
            if rows.iter().any(|r| r.len() != seq_len) {
                return Err(Error::ShapeMismatch(
                    "dataset file sequences must share one length".into(),
                ));
            }
            Ok(Dataset { rows, conditions: None, k, seq_len })
        }
    }
}

/// Render category rows as text: letter strings for k = 4, digit strings
/// (category + 1) for other k up to 9.
pub fn format_rows(rows: &[Vec<usize>], k: usize) -> Result<String> {
    if k > 9 {
        return Err(Error::UnsupportedConfiguration(
            "text sequence format covers k up to 9".into(),
        ));
    }
    let mut s = String::new();
    for row in rows {
        for &c in row {
            if c >= k {
                return Err(Error::Domain(format!("category {c} out of range for k={k}")));
            }
            if k == 4 {
                s.push(LETTERS[c]);
            } else {
                s.push(char::from(b'1' + c as u8));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

/// Parse sequence text in the `format_rows` layout: one sequence per
/// line, letters for k = 4 (digits also accepted), digits otherwise.
pub fn parse_rows(text: &str, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > 9 {
        return Err(Error::UnsupportedConfiguration(
            "text sequence format covers k up to 9".into(),
        ));
    }
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(line.len());
        for ch in line.chars() {
            let cat = if k == 4 {
                match ch {
                    'A' | 'a' => Some(0),
                    'C' | 'c' => Some(1),
                    'G' | 'g' => Some(2),
                    'T' | 't' => Some(3),
                    _ => ch.to_digit(10).map(|d| d as usize).map(|d| d.wrapping_sub(1)),
                }
            } else {
                ch.to_digit(10).map(|d| (d as usize).wrapping_sub(1))
            };
            match cat {
                Some(c) if c < k => row.push(c),
                _ => {
                    return Err(Error::InvalidParameter(format!(
                        "invalid sequence symbol {ch:?} for k={k}"
                    )))
                }
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
