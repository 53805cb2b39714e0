//! Resolved run configuration and its text form.
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! List values are comma separated. Lookup order is flag, then config
//! file, then preset, then built-in default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use pvfe_core::data::{DeadLeavesConfig, PreprocConfig};
use pvfe_core::metrics::DEFAULT_SAMPLES_PER_DATUM;
use pvfe_core::model::Family;
use pvfe_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Full,
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Desk => "desk",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Gaussian,
    DeadLeaves,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Gaussian => "gaussian",
            SynthKind::DeadLeaves => "dead-leaves",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub preset: Preset,
    pub verbose: bool,

    pub family: Family,
    pub k: usize,

    pub train: TrainConfig,

    pub data: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub n_patches: usize,
    pub n_validation: usize,
    pub side: usize,
    pub kind: SynthKind,
    pub alpha: f64,
    pub leaves: DeadLeavesConfig,
    pub preproc: PreprocConfig,
    /// Seed for synthetic data and patch crops (training uses `train.seed`).
    pub data_seed: u64,

    pub checkpoint: Option<PathBuf>,
    pub samples: usize,

    pub families: Vec<Family>,
    pub k_grid: Vec<usize>,
    pub beta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub threads: Option<usize>,
    pub max_jobs: Option<usize>,
    pub save_artifacts: bool,
}

impl Config {
    pub fn for_preset(preset: Preset) -> Self {
        let desk = pvfe_core::sweep::DeskData::default();
        let mut c = Config {
            preset,
            verbose: false,
            family: Family::Poisson,
            k: 64,
            train: TrainConfig::default(),
            data: None,
            validation: None,
            out: None,
            n_patches: 10_000,
            n_validation: 1_000,
            side: 16,
            kind: SynthKind::Gaussian,
            alpha: 2.0,
            leaves: DeadLeavesConfig::default(),
            preproc: PreprocConfig::default(),
            data_seed: desk.seed,
            checkpoint: None,
            samples: DEFAULT_SAMPLES_PER_DATUM,
            families: vec![Family::Poisson, Family::RectifiedGaussian],
            k_grid: vec![64, 128, 192, 256, 384, 512, 1024, 2048],
            beta_grid: vec![0.01, 0.1, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0],
            seeds: vec![0],
            threads: None,
            max_jobs: None,
            save_artifacts: false,
        };
        if preset == Preset::Desk {
            let grid = pvfe_core::sweep::SweepConfig::desk(PathBuf::new(), PathBuf::new(), PathBuf::new());
            c.train = grid.train;
            c.families = grid.families;
            c.k_grid = grid.k_grid;
            c.beta_grid = grid.beta_grid;
            c.seeds = grid.seeds;
            c.n_patches = desk.n_train + desk.n_validation;
            c.n_validation = desk.n_validation;
            c.side = desk.side;
            c.kind = SynthKind::DeadLeaves;
            if let pvfe_core::sweep::DeskSource::DeadLeaves(l) = desk.source {
                c.leaves = l;
            }
        }
        c
    }

    /// Sets one `section.key` from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let bad = |what: &str| format!("invalid value `{v}` for `{key}`: expected {what}");
        macro_rules! parse {
            ($what:expr) => {
                v.parse().map_err(|_| bad($what))?
            };
        }
        let path = || (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "run.preset" => {
                self.preset = match v {
                    "full" => Preset::Full,
                    "desk" => Preset::Desk,
                    _ => return Err(bad("full or desk")),
                }
            }
            "run.verbose" => self.verbose = parse!("true or false"),
            "model.family" => self.family = v.parse().map_err(|_| bad("pvae or grelu"))?,
            "model.k" => self.k = parse!("a positive integer"),
            "train.beta" => self.train.beta = parse!("a number"),
            "train.epochs" => self.train.epochs = parse!("an integer"),
            "train.warmup_epochs" => self.train.warmup_epochs = parse!("an integer"),
            "train.lr" => self.train.lr = parse!("a number"),
            "train.batch_size" => self.train.batch_size = parse!("an integer"),
            "train.grad_clip" => self.train.grad_clip = parse!("a number"),
            "train.seed" => self.train.seed = parse!("an integer"),
            "train.beta1" => self.train.beta1 = parse!("a number"),
            "train.beta2" => self.train.beta2 = parse!("a number"),
            "train.eps" => self.train.eps = parse!("a number"),
            "data.path" => self.data = path(),
            "data.validation" => self.validation = path(),
            "data.out" => self.out = path(),
            "data.n_patches" => self.n_patches = parse!("an integer"),
            "data.n_validation" => self.n_validation = parse!("an integer"),
            "data.side" => self.side = parse!("an integer"),
            "data.kind" => {
                self.kind = match v {
                    "gaussian" => SynthKind::Gaussian,
                    "dead-leaves" => SynthKind::DeadLeaves,
                    _ => return Err(bad("gaussian or dead-leaves")),
                }
            }
            "data.alpha" => self.alpha = parse!("a number"),
            "data.radius_min" => self.leaves.radius_min = parse!("a number"),
            "data.radius_max_patches" => self.leaves.radius_max_patches = parse!("a number"),
            "data.contrast" => self.leaves.contrast = parse!("a number"),
            "data.seed" => self.data_seed = parse!("an integer"),
            "preprocess.f0" => self.preproc.f0 = parse!("a number"),
            "preprocess.n_exp" => self.preproc.n_exp = parse!("a number"),
            "preprocess.lcn_kernel" => self.preproc.lcn_kernel = parse!("an odd integer"),
            "preprocess.lcn_sigma" => self.preproc.lcn_sigma = parse!("a number"),
            "eval.checkpoint" => self.checkpoint = path(),
            "eval.samples" => self.samples = parse!("an integer"),
            "sweep.families" => {
                self.families = list(v, |s| s.parse::<Family>().ok()).ok_or_else(|| bad("a list of pvae, grelu"))?
            }
            "sweep.k_grid" => self.k_grid = list(v, |s| s.parse().ok()).ok_or_else(|| bad("a list of integers"))?,
            "sweep.beta_grid" => self.beta_grid = list(v, |s| s.parse().ok()).ok_or_else(|| bad("a list of numbers"))?,
            "sweep.seeds" => self.seeds = list(v, |s| s.parse().ok()).ok_or_else(|| bad("a list of integers"))?,
            "sweep.threads" => {
                self.threads = if v.is_empty() || v == "auto" { None } else { Some(parse!("an integer or auto")) }
            }
            "sweep.max_jobs" => {
                self.max_jobs = if v.is_empty() || v == "all" { None } else { Some(parse!("an integer or all")) }
            }
            "sweep.save_artifacts" => self.save_artifacts = parse!("true or false"),
            _ => return Err(format!("unknown configuration key `{key}`")),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |v: Vec<String>| v.join(",");
        let t = &self.train;
        let mut s = String::new();
        let mut section = |name: &str, rows: Vec<(&str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in rows {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section("run", vec![("preset", self.preset.name().into()), ("verbose", self.verbose.to_string())]);
        section("model", vec![("family", self.family.to_string()), ("k", self.k.to_string())]);
        section(
            "train",
            vec![
                ("beta", t.beta.to_string()),
                ("epochs", t.epochs.to_string()),
                ("warmup_epochs", t.warmup_epochs.to_string()),
                ("lr", t.lr.to_string()),
                ("batch_size", t.batch_size.to_string()),
                ("grad_clip", t.grad_clip.to_string()),
                ("seed", t.seed.to_string()),
                ("beta1", t.beta1.to_string()),
                ("beta2", t.beta2.to_string()),
                ("eps", t.eps.to_string()),
            ],
        );
        section(
            "data",
            vec![
                ("path", p(&self.data)),
                ("validation", p(&self.validation)),
                ("out", p(&self.out)),
                ("n_patches", self.n_patches.to_string()),
                ("n_validation", self.n_validation.to_string()),
                ("side", self.side.to_string()),
                ("kind", self.kind.name().into()),
                ("alpha", self.alpha.to_string()),
                ("radius_min", self.leaves.radius_min.to_string()),
                ("radius_max_patches", self.leaves.radius_max_patches.to_string()),
                ("contrast", self.leaves.contrast.to_string()),
                ("seed", self.data_seed.to_string()),
            ],
        );
        section(
            "preprocess",
            vec![
                ("f0", self.preproc.f0.to_string()),
                ("n_exp", self.preproc.n_exp.to_string()),
                ("lcn_kernel", self.preproc.lcn_kernel.to_string()),
                ("lcn_sigma", self.preproc.lcn_sigma.to_string()),
            ],
        );
        section("eval", vec![("checkpoint", p(&self.checkpoint)), ("samples", self.samples.to_string())]);
        section(
            "sweep",
            vec![
                ("families", join(self.families.iter().map(|f| f.to_string()).collect())),
                ("k_grid", join(self.k_grid.iter().map(|k| k.to_string()).collect())),
                ("beta_grid", join(self.beta_grid.iter().map(|b| b.to_string()).collect())),
                ("seeds", join(self.seeds.iter().map(|s| s.to_string()).collect())),
                ("threads", self.threads.map(|n| n.to_string()).unwrap_or_else(|| "auto".into())),
                ("max_jobs", self.max_jobs.map(|n| n.to_string()).unwrap_or_else(|| "all".into())),
                ("save_artifacts", self.save_artifacts.to_string()),
            ],
        );
        s.truncate(s.trim_end().len());
        s.push('\n');
        s
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = v.split(',').map(|s| f(s.trim())).collect();
    items.filter(|i| !i.is_empty())
}

/// Parses config text into `section.key -> value`, in file order.
pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| format!("line {}: unterminated section", n + 1))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
        if section.is_empty() {
            return Err(format!("line {}: `{}` appears before any [section]", n + 1, k.trim()));
        }
        out.insert(format!("{section}.{}", k.trim()), v.trim().to_string());
    }
    Ok(out)
}
