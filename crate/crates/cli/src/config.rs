//! Line-based run configuration: `[section]` headers and `key = value`
//! pairs. Every key is known in advance; anything else is rejected so a
//! typo cannot silently fall back to a default. Each command writes the
//! fully resolved configuration (defaults and command-line overrides
//! included) next to its outputs.

use simplex_diffusion::error::{Error, Result};
use simplex_diffusion::likelihood::TraceMode;
use simplex_diffusion::sampling::DilationVariant;
use simplex_diffusion::simplex::SpeedMode;
use simplex_diffusion::training::Weighting;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Every `(section, key)` pair the parser accepts.
const KNOWN_KEYS: &[(&str, &str)] = &[
    ("diffusion", "k"),
    ("diffusion", "speed"),
    ("diffusion", "t_min"),
    ("diffusion", "t_max"),
    ("dictionary", "path"),
    ("dictionary", "grid_points"),
    ("dictionary", "n_per_time"),
    ("dictionary", "em_steps"),
    ("dictionary", "seed"),
    ("dataset", "kind"),
    ("dataset", "seq_len"),
    ("dataset", "p"),
    ("dataset", "count"),
    ("dataset", "path"),
    ("dataset", "seed"),
    ("model", "field"),
    ("model", "checkpoint"),
    ("model", "window"),
    ("model", "hidden"),
    ("model", "n_freq"),
    ("model", "freq_scale"),
    ("model", "seed"),
    ("training", "epochs"),
    ("training", "batches_per_epoch"),
    ("training", "batch_size"),
    ("training", "learning_rate"),
    ("training", "patience"),
    ("training", "validation_fraction"),
    ("training", "weighting"),
    ("training", "fast_sampling"),
    ("training", "seed"),
    ("sampler", "steps"),
    ("sampler", "dilation"),
    ("sampler", "dilation_start"),
    ("sampler", "variant"),
    ("sampler", "count"),
    ("sampler", "condition"),
    ("sampler", "seed"),
    ("solve", "retry_cap"),
    ("solve", "batch"),
    ("elbo", "t_anchor"),
    ("elbo", "mc_samples"),
    ("elbo", "ode_steps"),
    ("elbo", "trace"),
    ("elbo", "probes"),
    ("elbo", "anchors"),
    ("elbo", "seed"),
    ("output", "dir"),
];

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(format!("config: {}", msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Uniform,
    Bernoulli,
    Shidoku,
    Motif,
    File,
}

impl DatasetKind {
    fn name(&self) -> &'static str {
        match self {
            DatasetKind::Uniform => "uniform",
            DatasetKind::Bernoulli => "bernoulli",
            DatasetKind::Shidoku => "shidoku",
            DatasetKind::Motif => "motif",
            DatasetKind::File => "file",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// Score field loaded from a trained checkpoint.
    Checkpoint,
    /// Exact mixture score over the configured dataset.
    Oracle,
}

#[derive(Clone, Debug)]
pub struct DiffusionCfg {
    pub k: usize,
    pub speed: SpeedMode,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Clone, Debug)]
pub struct DictionaryCfg {
    pub path: Option<PathBuf>,
    pub grid_points: usize,
    pub n_per_time: usize,
    pub em_steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct DatasetCfg {
    pub kind: DatasetKind,
    pub seq_len: usize,
    pub p: f64,
    pub count: usize,
    pub path: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ModelCfg {
    pub field: FieldKind,
    pub checkpoint: Option<PathBuf>,
    pub window: usize,
    pub hidden: usize,
    pub n_freq: usize,
    pub freq_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainingCfg {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub weighting: Weighting,
    pub fast_sampling: bool,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SamplerCfg {
    pub steps: usize,
    pub dilation: f64,
    pub dilation_start: f64,
    pub variant: DilationVariant,
    pub count: usize,
    /// Optional condition-class index broadcast to every chain.
    pub condition: Option<usize>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct SolveCfg {
    pub retry_cap: u64,
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceChoice {
    Exact,
    Hutchinson,
}

#[derive(Clone, Debug)]
pub struct ElboCfg {
    pub t_anchor: f64,
    pub mc_samples: usize,
    pub ode_steps: usize,
    pub trace: TraceChoice,
    pub probes: usize,
    pub seed: u64,
    /// Anchor-time sweep for the bound-gap table (two-category runs only).
    pub anchors: Vec<f64>,
}

impl ElboCfg {
    pub fn trace_mode(&self) -> TraceMode {
        match self.trace {
            TraceChoice::Exact => TraceMode::ExactJacobian,
            TraceChoice::Hutchinson => TraceMode::Hutchinson { probes: self.probes },
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub diffusion: DiffusionCfg,
    pub dictionary: DictionaryCfg,
    pub dataset: DatasetCfg,
    pub model: ModelCfg,
    pub training: TrainingCfg,
    pub sampler: SamplerCfg,
    pub solve: SolveCfg,
    pub elbo: ElboCfg,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            diffusion: DiffusionCfg { k: 4, speed: SpeedMode::Unit, t_min: 0.01, t_max: 4.0 },
            dictionary: DictionaryCfg {
                path: None,
                grid_points: 48,
                n_per_time: 2000,
                em_steps: 800,
                seed: 1,
            },
            dataset: DatasetCfg {
                kind: DatasetKind::Uniform,
                seq_len: 4,
                p: 0.7,
                count: 1024,
                path: None,
                seed: 11,
            },
            model: ModelCfg {
                field: FieldKind::Checkpoint,
                checkpoint: None,
                window: 9,
                hidden: 64,
                n_freq: 32,
                freq_scale: 30.0,
                seed: 7,
            },
            training: TrainingCfg {
                epochs: 40,
                batches_per_epoch: 50,
                batch_size: 32,
                learning_rate: 1e-3,
                patience: 10,
                validation_fraction: 0.1,
                weighting: Weighting::GgTranspose,
                fast_sampling: true,
                seed: 3,
            },
            sampler: SamplerCfg {
                steps: 200,
                dilation: 1.0,
                dilation_start: 0.0,
                variant: DilationVariant::SdeAccelerate,
                count: 100,
                condition: None,
                seed: 5,
            },
            solve: SolveCfg { retry_cap: 10_000, batch: 32 },
            elbo: ElboCfg {
                t_anchor: 1e-3,
                mc_samples: 16,
                ode_steps: 160,
                trace: TraceChoice::Exact,
                probes: 8,
                seed: 9,
                anchors: Vec::new(),
            },
            out_dir: PathBuf::from("."),
        }
    }
}

fn parse_num<T: std::str::FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.parse::<T>().map_err(|_| {
        cfg_err(format!("[{section}] {key}: cannot parse {raw:?} as {}", std::any::type_name::<T>()))
    })
}

fn parse_bool(section: &str, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(format!("[{section}] {key}: expected true or false, got {raw:?}"))),
    }
}

impl RunConfig {
    /// Parse configuration text and apply it over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen: BTreeMap<(String, String), String> = BTreeMap::new();
        let mut section = String::new();
        for (ix, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let lineno = ix + 1;
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| cfg_err(format!("line {lineno}: unterminated section header")))?
                    .trim();
                if !KNOWN_KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(cfg_err(format!("line {lineno}: unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {lineno}: expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(cfg_err(format!("line {lineno}: key {key:?} appears before any [section]")));
            }
            if !KNOWN_KEYS.iter().any(|(s, k)| *s == section && *k == key) {
                return Err(cfg_err(format!("line {lineno}: unknown key {key:?} in section [{section}]")));
            }
            if seen.insert((section.clone(), key.to_string()), value.to_string()).is_some() {
                return Err(cfg_err(format!("line {lineno}: duplicate key {key:?} in section [{section}]")));
            }
        }

        let mut cfg = RunConfig::default();
        for ((section, key), raw) in &seen {
            cfg.apply(section, key, raw)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn apply(&mut self, section: &str, key: &str, raw: &str) -> Result<()> {
        match (section, key) {
            ("diffusion", "k") => self.diffusion.k = parse_num(section, key, raw)?,
            ("diffusion", "speed") => {
                self.diffusion.speed = match raw {
                    "unit" => SpeedMode::Unit,
                    "balanced" => SpeedMode::TwoOverAPlusB,
                    _ => return Err(cfg_err(format!("speed must be unit or balanced, got {raw:?}"))),
                }
            }
            ("diffusion", "t_min") => self.diffusion.t_min = parse_num(section, key, raw)?,
            ("diffusion", "t_max") => self.diffusion.t_max = parse_num(section, key, raw)?,
            ("dictionary", "path") => self.dictionary.path = Some(PathBuf::from(raw)),
            ("dictionary", "grid_points") => self.dictionary.grid_points = parse_num(section, key, raw)?,
            ("dictionary", "n_per_time") => self.dictionary.n_per_time = parse_num(section, key, raw)?,
            ("dictionary", "em_steps") => self.dictionary.em_steps = parse_num(section, key, raw)?,
            ("dictionary", "seed") => self.dictionary.seed = parse_num(section, key, raw)?,
            ("dataset", "kind") => {
                self.dataset.kind = match raw {
                    "uniform" => DatasetKind::Uniform,
                    "bernoulli" => DatasetKind::Bernoulli,
                    "shidoku" => DatasetKind::Shidoku,
                    "motif" => DatasetKind::Motif,
                    "file" => DatasetKind::File,
                    _ => return Err(cfg_err(format!("unknown dataset kind {raw:?}"))),
                }
            }
            ("dataset", "seq_len") => self.dataset.seq_len = parse_num(section, key, raw)?,
            ("dataset", "p") => self.dataset.p = parse_num(section, key, raw)?,
            ("dataset", "count") => self.dataset.count = parse_num(section, key, raw)?,
            ("dataset", "path") => self.dataset.path = Some(PathBuf::from(raw)),
            ("dataset", "seed") => self.dataset.seed = parse_num(section, key, raw)?,
            ("model", "field") => {
                self.model.field = match raw {
                    "checkpoint" => FieldKind::Checkpoint,
                    "oracle" => FieldKind::Oracle,
                    _ => return Err(cfg_err(format!("field must be checkpoint or oracle, got {raw:?}"))),
                }
            }
            ("model", "checkpoint") => self.model.checkpoint = Some(PathBuf::from(raw)),
            ("model", "window") => self.model.window = parse_num(section, key, raw)?,
            ("model", "hidden") => self.model.hidden = parse_num(section, key, raw)?,
            ("model", "n_freq") => self.model.n_freq = parse_num(section, key, raw)?,
            ("model", "freq_scale") => self.model.freq_scale = parse_num(section, key, raw)?,
            ("model", "seed") => self.model.seed = parse_num(section, key, raw)?,
            ("training", "epochs") => self.training.epochs = parse_num(section, key, raw)?,
            ("training", "batches_per_epoch") => {
                self.training.batches_per_epoch = parse_num(section, key, raw)?
            }
            ("training", "batch_size") => self.training.batch_size = parse_num(section, key, raw)?,
            ("training", "learning_rate") => self.training.learning_rate = parse_num(section, key, raw)?,
            ("training", "patience") => self.training.patience = parse_num(section, key, raw)?,
            ("training", "validation_fraction") => {
                self.training.validation_fraction = parse_num(section, key, raw)?
            }
            ("training", "weighting") => {
                self.training.weighting = match raw {
                    "ggt" => Weighting::GgTranspose,
                    "unweighted" => Weighting::Unweighted,
                    _ => return Err(cfg_err(format!("weighting must be ggt or unweighted, got {raw:?}"))),
                }
            }
            ("training", "fast_sampling") => self.training.fast_sampling = parse_bool(section, key, raw)?,
            ("training", "seed") => self.training.seed = parse_num(section, key, raw)?,
            ("sampler", "steps") => self.sampler.steps = parse_num(section, key, raw)?,
            ("sampler", "dilation") => self.sampler.dilation = parse_num(section, key, raw)?,
            ("sampler", "dilation_start") => self.sampler.dilation_start = parse_num(section, key, raw)?,
            ("sampler", "variant") => {
                self.sampler.variant = match raw {
                    "accelerate" => DilationVariant::SdeAccelerate,
                    "rescale" => DilationVariant::TimeRescale,
                    _ => return Err(cfg_err(format!("variant must be accelerate or rescale, got {raw:?}"))),
                }
            }
            ("sampler", "count") => self.sampler.count = parse_num(section, key, raw)?,
            ("sampler", "condition") => {
                self.sampler.condition =
                    if raw == "none" { None } else { Some(parse_num(section, key, raw)?) }
            }
            ("sampler", "seed") => self.sampler.seed = parse_num(section, key, raw)?,
            ("solve", "retry_cap") => self.solve.retry_cap = parse_num(section, key, raw)?,
            ("solve", "batch") => self.solve.batch = parse_num(section, key, raw)?,
            ("elbo", "t_anchor") => self.elbo.t_anchor = parse_num(section, key, raw)?,
            ("elbo", "mc_samples") => self.elbo.mc_samples = parse_num(section, key, raw)?,
            ("elbo", "ode_steps") => self.elbo.ode_steps = parse_num(section, key, raw)?,
            ("elbo", "trace") => {
                self.elbo.trace = match raw {
                    "exact" => TraceChoice::Exact,
                    "hutchinson" => TraceChoice::Hutchinson,
                    _ => return Err(cfg_err(format!("trace must be exact or hutchinson, got {raw:?}"))),
                }
            }
            ("elbo", "probes") => self.elbo.probes = parse_num(section, key, raw)?,
            ("elbo", "anchors") => {
                self.elbo.anchors = if raw.is_empty() {
                    Vec::new()
                } else {
                    raw.split(',')
                        .map(|s| parse_num::<f64>(section, key, s.trim()))
                        .collect::<Result<Vec<_>>>()?
                };
            }
            ("elbo", "seed") => self.elbo.seed = parse_num(section, key, raw)?,
            ("output", "dir") => self.out_dir = PathBuf::from(raw),
            _ => unreachable!("key list already validated"),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let d = &self.diffusion;
        if d.k < 2 {
            return Err(cfg_err(format!("diffusion k must be at least 2, got {}", d.k)));
        }
        if !(d.t_min > 0.0 && d.t_min < d.t_max && d.t_max.is_finite()) {
            return Err(Error::Domain(format!(
                "config: diffusion times must satisfy 0 < t_min < t_max, got [{}, {}]",
                d.t_min, d.t_max
            )));
        }
        if self.dictionary.grid_points < 2 {
            return Err(cfg_err("dictionary grid needs at least 2 points"));
        }
        if !(0.0..=1.0).contains(&self.dataset.p) {
            return Err(cfg_err(format!("dataset p must lie in [0,1], got {}", self.dataset.p)));
        }
        if !(self.sampler.dilation >= 1.0) {
            return Err(cfg_err(format!(
                "sampler dilation must be at least 1, got {}",
                self.sampler.dilation
            )));
        }
        if !(0.0..=1.0).contains(&self.sampler.dilation_start) {
            return Err(cfg_err("sampler dilation_start must lie in [0,1]"));
        }
        if let Some(c) = self.sampler.condition {
            if c > 15 {
                return Err(cfg_err(format!("sampler condition index {c} is out of any supported range")));
            }
        }
        if self.solve.batch == 0 || self.solve.retry_cap == 0 {
            return Err(cfg_err("solve batch and retry_cap must be positive"));
        }
        if !(self.elbo.t_anchor > 0.0) {
            return Err(cfg_err("elbo t_anchor must be positive"));
        }
        if self.elbo.probes == 0 || self.elbo.mc_samples == 0 || self.elbo.ode_steps == 0 {
            return Err(cfg_err("elbo probes, mc_samples, and ode_steps must be positive"));
        }
        Ok(())
    }

    /// Canonical text of the fully resolved configuration.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let path_or = |p: &Option<PathBuf>| {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        };
        let _ = writeln!(s, "[diffusion]");
        let _ = writeln!(s, "k = {}", self.diffusion.k);
        let _ = writeln!(
            s,
            "speed = {}",
            match self.diffusion.speed {
                SpeedMode::Unit => "unit",
                SpeedMode::TwoOverAPlusB => "balanced",
            }
        );
        let _ = writeln!(s, "t_min = {}", self.diffusion.t_min);
        let _ = writeln!(s, "t_max = {}", self.diffusion.t_max);
        let _ = writeln!(s, "\n[dictionary]");
        if self.dictionary.path.is_some() {
            let _ = writeln!(s, "path = {}", path_or(&self.dictionary.path));
        }
        let _ = writeln!(s, "grid_points = {}", self.dictionary.grid_points);
        let _ = writeln!(s, "n_per_time = {}", self.dictionary.n_per_time);
        let _ = writeln!(s, "em_steps = {}", self.dictionary.em_steps);
        let _ = writeln!(s, "seed = {}", self.dictionary.seed);
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(s, "kind = {}", self.dataset.kind.name());
        let _ = writeln!(s, "seq_len = {}", self.dataset.seq_len);
        let _ = writeln!(s, "p = {}", self.dataset.p);
        let _ = writeln!(s, "count = {}", self.dataset.count);
        if self.dataset.path.is_some() {
            let _ = writeln!(s, "path = {}", path_or(&self.dataset.path));
        }
        let _ = writeln!(s, "seed = {}", self.dataset.seed);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(
            s,
            "field = {}",
            match self.model.field {
                FieldKind::Checkpoint => "checkpoint",
                FieldKind::Oracle => "oracle",
            }
        );
        if self.model.checkpoint.is_some() {
            let _ = writeln!(s, "checkpoint = {}", path_or(&self.model.checkpoint));
        }
        let _ = writeln!(s, "window = {}", self.model.window);
        let _ = writeln!(s, "hidden = {}", self.model.hidden);
        let _ = writeln!(s, "n_freq = {}", self.model.n_freq);
        let _ = writeln!(s, "freq_scale = {}", self.model.freq_scale);
        let _ = writeln!(s, "seed = {}", self.model.seed);
        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "epochs = {}", self.training.epochs);
        let _ = writeln!(s, "batches_per_epoch = {}", self.training.batches_per_epoch);
        let _ = writeln!(s, "batch_size = {}", self.training.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.training.learning_rate);
        let _ = writeln!(s, "patience = {}", self.training.patience);
        let _ = writeln!(s, "validation_fraction = {}", self.training.validation_fraction);
        let _ = writeln!(
            s,
            "weighting = {}",
            match self.training.weighting {
                Weighting::GgTranspose => "ggt",
                Weighting::Unweighted => "unweighted",
            }
        );
        let _ = writeln!(s, "fast_sampling = {}", self.training.fast_sampling);
        let _ = writeln!(s, "seed = {}", self.training.seed);
        let _ = writeln!(s, "\n[sampler]");
        let _ = writeln!(s, "steps = {}", self.sampler.steps);
        let _ = writeln!(s, "dilation = {}", self.sampler.dilation);
        let _ = writeln!(s, "dilation_start = {}", self.sampler.dilation_start);
        let _ = writeln!(
            s,
            "variant = {}",
            match self.sampler.variant {
                DilationVariant::SdeAccelerate => "accelerate",
                DilationVariant::TimeRescale => "rescale",
            }
        );
        let _ = writeln!(s, "count = {}", self.sampler.count);
        let _ = writeln!(
            s,
            "condition = {}",
            self.sampler.condition.map(|c| c.to_string()).unwrap_or_else(|| "none".into())
        );
        let _ = writeln!(s, "seed = {}", self.sampler.seed);
        let _ = writeln!(s, "\n[solve]");
        let _ = writeln!(s, "retry_cap = {}", self.solve.retry_cap);
        let _ = writeln!(s, "batch = {}", self.solve.batch);
        let _ = writeln!(s, "\n[elbo]");
        let _ = writeln!(s, "t_anchor = {}", self.elbo.t_anchor);
        let _ = writeln!(s, "mc_samples = {}", self.elbo.mc_samples);
        let _ = writeln!(s, "ode_steps = {}", self.elbo.ode_steps);
        let _ = writeln!(
            s,
            "trace = {}",
            match self.elbo.trace {
                TraceChoice::Exact => "exact",
                TraceChoice::Hutchinson => "hutchinson",
            }
        );
        let _ = writeln!(s, "probes = {}", self.elbo.probes);
        if !self.elbo.anchors.is_empty() {
            let anchors: Vec<String> = self.elbo.anchors.iter().map(|a| a.to_string()).collect();
            let _ = writeln!(s, "anchors = {}", anchors.join(","));
        }
        let _ = writeln!(s, "seed = {}", self.elbo.seed);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }

    /// Write the resolved configuration next to a command's outputs.
    pub fn write_resolved(&self, command: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(format!("resolved_{command}.cfg"));
        std::fs::write(&path, self.resolved_text())?;
        Ok(path)
    }

    /// Log-spaced dictionary time grid over the diffusion window.
    pub fn time_grid(&self) -> Vec<f64> {
        let g = self.dictionary.grid_points;
        let (lo, hi) = (self.diffusion.t_min, self.diffusion.t_max);
        (0..g)
            .map(|i| lo * (hi / lo).powf(i as f64 / (g - 1) as f64))
            .collect()
    }
}
