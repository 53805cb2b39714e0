//! Grid runner over `(family, K, beta, seed)` with crash-safe resumption,
//! and the report generator that slices its results for plotting.
//!
//! Rows are appended to `results.csv` as jobs finish. Once the grid is
//! complete the file is rewritten in canonical grid order, so an
//! interrupted and resumed sweep ends with the same bytes as an
//! uninterrupted one (apart from `wall_seconds`).

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{dead_leaves_patches, load_patches, prepare_dataset, save_patches, synth_patches, DeadLeavesConfig, PatchBatch, PreprocConfig};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::metrics::{evaluate, DEFAULT_SAMPLES_PER_DATUM};
use crate::model::{save_checkpoint, Family, ModelParams};
use crate::trainer::{train_with_outputs, TrainConfig, TrainOutputs};

pub const RESULTS_FILE: &str = "results.csv";
pub const RESULTS_HEADER: &str = "family,k,beta,seed,status,epochs,final_total,final_kl,mc,pz,r2,overall,wall_seconds";

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "PVFE_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub families: Vec<Family>,
    pub k_grid: Vec<usize>,
    pub beta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Template for every job; `beta` and `seed` are overwritten per job.
    pub train: TrainConfig,
    pub train_path: PathBuf,
    pub validation_path: PathBuf,
    pub out_dir: PathBuf,
    pub eval_samples: usize,
    /// Write each job's training log and final checkpoint under `jobs/`.
    pub save_artifacts: bool,
    /// Worker threads; `None` reads `PVFE_THREADS`, then uses all cores.
    pub threads: Option<usize>,
    /// Stop after this many newly finished jobs (the rest stay pending).
    pub max_jobs: Option<usize>,
}

impl SweepConfig {
    /// The desk-scale grid on the given data files.
    pub fn desk(train_path: PathBuf, validation_path: PathBuf, out_dir: PathBuf) -> Self {
        SweepConfig {
            families: vec![Family::Poisson, Family::RectifiedGaussian],
            k_grid: vec![64, 128],
            beta_grid: vec![0.01, 0.5, 1.0, 2.0, 8.0],
            seeds: vec![0, 1],
            train: TrainConfig::desk(),
            train_path,
            validation_path,
            out_dir,
            eval_samples: DEFAULT_SAMPLES_PER_DATUM,
            save_artifacts: false,
            threads: None,
            max_jobs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() || self.k_grid.is_empty() || self.beta_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("every sweep grid must be nonempty".into()));
        }
        if let Some(b) = self.beta_grid.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::Domain { name: "beta", value: *b });
        }
        if self.k_grid.contains(&0) {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::InvalidArgument("eval_samples must be positive".into()));
        }
        self.train.validate()
    }

    pub fn total_jobs(&self) -> usize {
        self.families.len() * self.k_grid.len() * self.beta_grid.len() * self.seeds.len()
    }

    /// Every cell in canonical order: family, then K, beta and seed.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::with_capacity(self.total_jobs());
        for &family in &self.families {
            for &k in &self.k_grid {
                for (bi, &beta) in self.beta_grid.iter().enumerate() {
                    for (si, &seed) in self.seeds.iter().enumerate() {
                        out.push(Job {
                            family,
                            k,
                            beta,
                            seed,
                            job_seed: job_seed(self.train.seed, family, k, bi, si),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Synthetic dataset used by the desk preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeskData {
    pub n_train: usize,
    pub n_validation: usize,
    pub side: usize,
    pub source: DeskSource,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeskSource {
    DeadLeaves(DeadLeavesConfig),
    /// `1/f^alpha` Gaussian fields scaled to standard deviation `amplitude`.
    Gaussian { alpha: f64, amplitude: f64 },
}

impl Default for DeskData {
    fn default() -> Self {
        DeskData {
            n_train: 6000,
            n_validation: 1000,
            side: 8,
            source: DeskSource::DeadLeaves(DeadLeavesConfig { radius_min: 4.0, ..DeadLeavesConfig::default() }),
            seed: 20_240_101,
        }
    }
}

impl DeskData {
    /// Generates, preprocesses and writes `train.bin` and `validation.bin`
    /// under `dir`, returning their paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let n = self.n_train + self.n_validation;
        let raw = match self.source {
            DeskSource::DeadLeaves(cfg) => dead_leaves_patches(n, self.side, &cfg, self.seed)?,
            DeskSource::Gaussian { alpha, amplitude } => {
                let mut b = synth_patches(n, self.side, alpha, self.seed)?;
                b.data *= amplitude;
                b
            }
        };
        let prepared = prepare_dataset(&raw, self.n_validation, &PreprocConfig::default())?;
        fs::create_dir_all(dir)?;
        let (train, validation) = (dir.join("train.bin"), dir.join("validation.bin"));
        save_patches(&prepared.train, &train)?;
        save_patches(&prepared.validation, &validation)?;
        Ok((train, validation))
    }
}

impl TrainConfig {
    /// Short schedule for desk-scale runs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 128,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub family: Family,
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
    pub job_seed: u64,
}

impl Job {
    fn key(&self) -> JobKey {
        JobKey::new(self.family, self.k, self.beta, self.seed)
    }

    pub fn name(&self) -> String {
        format!("{}_k{}_beta{}_seed{}", self.family, self.k, self.beta, self.seed)
    }
}

/// Hashable identity of a grid cell (`beta` by bit pattern).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct JobKey(Family, usize, u64, u64);

impl JobKey {
    fn new(family: Family, k: usize, beta: f64, seed: u64) -> Self {
        JobKey(family, k, beta.to_bits(), seed)
    }
}

/// One round of the SplitMix64 output mix.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one grid cell, decorrelated across every coordinate.
pub fn job_seed(base: u64, family: Family, k: usize, beta_index: usize, seed_index: usize) -> u64 {
    [family.tag() as u64, k as u64, beta_index as u64, seed_index as u64]
        .into_iter()
        .fold(splitmix64(base), |h, x| splitmix64(h ^ x))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobStatus {
    Ok,
    /// Training hit a nonfinite loss.
    Nonfinite,
    Error,
}

impl JobStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobStatus::Ok => "ok",
            JobStatus::Nonfinite => "nonfinite",
            JobStatus::Error => "error",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(JobStatus::Ok),
            "nonfinite" => Some(JobStatus::Nonfinite),
            "error" => Some(JobStatus::Error),
            _ => None,
        }
    }
}

/// One line of `results.csv`. Metric fields are NaN for failed jobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub family: Family,
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
    pub status: JobStatus,
    pub epochs: usize,
    pub final_total: f64,
    pub final_kl: f64,
    pub mc: f64,
    pub pz: f64,
    pub r2: f64,
    pub overall: f64,
    pub wall_seconds: f64,
}

impl ResultRow {
    fn key(&self) -> JobKey {
        JobKey::new(self.family, self.k, self.beta, self.seed)
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.family,
            self.k,
            self.beta,
            self.seed,
            self.status.as_str(),
            self.epochs,
            self.final_total,
            self.final_kl,
            self.mc,
            self.pz,
            self.r2,
            self.overall,
            self.wall_seconds
        )
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let bad = |what: &str| Error::MalformedCsv(format!("bad {what} in row `{}`", rec.iter().collect::<Vec<_>>().join(",")));
        if rec.len() != 13 {
            return Err(Error::MalformedCsv(format!("expected 13 fields, found {}", rec.len())));
        }
        let f = |i: usize, what: &str| rec[i].trim().parse::<f64>().map_err(|_| bad(what));
        Ok(ResultRow {
            family: rec[0].trim().parse().map_err(|_| bad("family"))?,
            k: rec[1].trim().parse().map_err(|_| bad("k"))?,
            beta: f(2, "beta")?,
            seed: rec[3].trim().parse().map_err(|_| bad("seed"))?,
            status: JobStatus::parse(rec[4].trim()).ok_or_else(|| bad("status"))?,
            epochs: rec[5].trim().parse().map_err(|_| bad("epochs"))?,
            final_total: f(6, "final_total")?,
            final_kl: f(7, "final_kl")?,
            mc: f(8, "mc")?,
            pz: f(9, "pz")?,
            r2: f(10, "r2")?,
            overall: f(11, "overall")?,
            wall_seconds: f(12, "wall_seconds")?,
        })
    }
}

/// Parses a results file. A final line without a newline (a write cut short
/// by a crash) is dropped; any other malformed line is an error.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path)?;
    parse_results(&text)
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None if text.trim() == RESULTS_HEADER || text.trim().is_empty() => text,
        None => return Err(Error::MalformedCsv("results file has no complete lines".into())),
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(complete.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::MalformedCsv(format!("unexpected header `{}`", header.join(","))));
    }
    reader
        .records()
        .map(|r| ResultRow::from_record(&r.map_err(|e| Error::MalformedCsv(e.to_string()))?))
        .collect()
}

fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

pub fn resolve_threads(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Trains and evaluates one cell.
pub fn run_job(
    job: &Job,
    train: &PatchBatch,
    validation: &PatchBatch,
    template: &TrainConfig,
    eval_samples: usize,
    artifacts: Option<&Path>,
) -> ResultRow {
    let start = Instant::now();
    let outcome = (|| -> Result<(ModelParams, f64, f64, usize)> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(splitmix64(job.job_seed.wrapping_add(2)));
        let model = ModelParams::init(job.family, job.k, train.width(), &mut init_rng)?;
        let cfg = TrainConfig { beta: job.beta, seed: job.job_seed, ..template.clone() };
        if let Some(dir) = artifacts {
            fs::create_dir_all(dir)?;
        }
        let outputs = TrainOutputs {
            log_path: artifacts.map(|d| d.join("train_log.csv")),
            ..Default::default()
        };
        let (model, log) = train_with_outputs(model, train, &cfg, outputs)?;
        if let Some(dir) = artifacts {
            save_checkpoint(&model, &dir.join("final.ckpt"))?;
        }
        let last = log.last().expect("at least one epoch");
        Ok((model, last.total, last.kl, log.records.len()))
    })();

    let mut row = ResultRow {
        family: job.family,
        k: job.k,
        beta: job.beta,
        seed: job.seed,
        status: JobStatus::Ok,
        epochs: 0,
        final_total: f64::NAN,
        final_kl: f64::NAN,
        mc: f64::NAN,
        pz: f64::NAN,
        r2: f64::NAN,
        overall: f64::NAN,
        wall_seconds: 0.0,
    };
    let metrics = outcome.and_then(|(model, total, kl, epochs)| {
        row.epochs = epochs;
        row.final_total = total;
        row.final_kl = kl;
        evaluate(&model, validation, job.beta, splitmix64(job.job_seed.wrapping_add(1)), eval_samples)
    });
    match metrics {
        Ok(m) => {
            row.mc = m.mc;
            row.pz = m.pz;
            row.r2 = m.r2;
            row.overall = m.overall;
        }
        Err(e) => row.status = if e.is_numerical() { JobStatus::Nonfinite } else { JobStatus::Error },
    }
    row.wall_seconds = start.elapsed().as_secs_f64();
    row
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Rows in canonical grid order; only finished cells are present.
    pub rows: Vec<ResultRow>,
    pub ran: usize,
    pub skipped: usize,
    pub complete: bool,
}

/// Runs every grid cell that does not already have an `ok` row in
/// `out_dir/results.csv`.
pub fn run_grid(cfg: &SweepConfig) -> Result<SweepOutcome> {
    run_grid_with_progress(cfg, |_| {})
}

pub fn run_grid_with_progress<F>(cfg: &SweepConfig, progress: F) -> Result<SweepOutcome>
where
    F: Fn(&ResultRow) + Sync,
{
    cfg.validate()?;
    let train = load_patches(&cfg.train_path)?;
    let validation = load_patches(&cfg.validation_path)?;
    if train.width() != validation.width() {
        return Err(Error::Shape(format!(
            "train patches have {} pixels, validation {}",
            train.width(),
            validation.width()
        )));
    }
    fs::create_dir_all(&cfg.out_dir)?;
    let results_path = cfg.out_dir.join(RESULTS_FILE);

    let jobs = cfg.jobs();
    let grid: HashMap<JobKey, usize> = jobs.iter().enumerate().map(|(i, j)| (j.key(), i)).collect();
    let mut done: BTreeMap<usize, ResultRow> = BTreeMap::new();
    if results_path.exists() {
        for row in read_results(&results_path)? {
            if let (Some(&i), JobStatus::Ok) = (grid.get(&row.key()), &row.status) {
                done.insert(i, row);
            }
        }
    }
    // Start from a clean file holding only the rows being kept.
    write_results(&results_path, &done.values().cloned().collect::<Vec<_>>())?;

    let mut pending: Vec<usize> = (0..jobs.len()).filter(|i| !done.contains_key(i)).collect();
    let skipped = done.len();
    if let Some(limit) = cfg.max_jobs {
        pending.truncate(limit);
    }

    let writer = Mutex::new(OpenOptions::new().append(true).open(&results_path)?);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(cfg.threads))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let finished: Vec<Result<(usize, ResultRow)>> = pool.install(|| {
        pending
            .par_iter()
            .map(|&i| {
                let job = &jobs[i];
                let artifacts = cfg.save_artifacts.then(|| cfg.out_dir.join("jobs").join(job.name()));
                let row = run_job(job, &train, &validation, &cfg.train, cfg.eval_samples, artifacts.as_deref());
                {
                    let mut f = writer.lock().expect("writer lock");
                    f.write_all(format!("{}\n", row.to_csv_line()).as_bytes())?;
                    f.flush()?;
                }
                progress(&row);
                Ok((i, row))
            })
            .collect()
    });
    drop(writer);
    let ran = finished.len();
    for r in finished {
        let (i, row) = r?;
        done.insert(i, row);
    }

    let rows: Vec<ResultRow> = done.into_values().collect();
    write_results(&results_path, &rows)?;
    Ok(SweepOutcome {
        complete: rows.len() == jobs.len(),
        rows,
        ran,
        skipped,
    })
}

/// Spearman rank correlation, with tied values sharing their mean rank.
/// NaN when either input is constant or shorter than 2.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean_rank = (i + j) as f64 / 2.0 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = mean_rank;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Files written by [`report`].
pub const REPORT_FILES: [&str; 6] = [
    "mc_vs_beta.csv",
    "pz_vs_beta.csv",
    "r2_vs_pz.csv",
    "overall_vs_beta.csv",
    "monotonicity.csv",
    "plots.txt",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    /// `ok` rows that went into the tables.
    pub rows: usize,
    /// Spearman correlation of MC with beta per `(family, K)`.
    pub monotonicity: Vec<(Family, usize, f64)>,
}

const PLOT_SCRIPT: &str = "\
# pvfe plot script v1
#
# One block per figure:
#   plot <csv>          start a figure reading <csv> (same directory)
#   x <column> [log]    horizontal axis, optionally log-scaled
#   y <column> [log]    vertical axis
#   group <col>[,<col>] one line or marker series per distinct value
#   style line|points
#   title \"<text>\"
#   end
plot mc_vs_beta.csv
x beta log
y mc_mean log
group family,k
style line
title \"Metabolic cost vs beta\"
end
plot pz_vs_beta.csv
x beta log
y pz_mean
group family,k
style line
title \"Proportion of zeros vs beta\"
end
plot r2_vs_pz.csv
x pz
y r2
group family
style points
title \"Reconstruction vs sparsity\"
end
plot overall_vs_beta.csv
x beta log
y overall_mean
group family,k
style line
title \"Overall performance vs beta (lower is better)\"
end
";

fn mean_table(rows: &[&ResultRow], metric: &str, pick: fn(&ResultRow) -> f64) -> String {
    let mut groups: BTreeMap<(Family, usize, u64), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.family, r.k, r.beta.to_bits())).or_default().push(pick(r));
    }
    let mut s = format!("family,k,beta,{metric}_mean,{metric}_min,{metric}_max,n\n");
    let mut keyed: Vec<_> = groups.into_iter().collect();
    keyed.sort_by(|a, b| (a.0 .0, a.0 .1).cmp(&(b.0 .0, b.0 .1)).then(f64::from_bits(a.0 .2).total_cmp(&f64::from_bits(b.0 .2))));
    for ((family, k, beta), v) in keyed {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(s, "{family},{k},{},{mean},{min},{max},{}", f64::from_bits(beta), v.len());
    }
    s
}

/// Writes per-figure tables and a plot script for the `ok` rows of a
/// results file, optionally restricted to one family.
pub fn report(results: &Path, out_dir: &Path, family: Option<Family>) -> Result<ReportSummary> {
    let all = read_results(results)?;
    let rows: Vec<&ResultRow> = all
        .iter()
        .filter(|r| r.status == JobStatus::Ok && family.is_none_or(|f| r.family == f))
        .collect();
    fs::create_dir_all(out_dir)?;

    write_atomic(&out_dir.join("mc_vs_beta.csv"), mean_table(&rows, "mc", |r| r.mc).as_bytes())?;
    write_atomic(&out_dir.join("pz_vs_beta.csv"), mean_table(&rows, "pz", |r| r.pz).as_bytes())?;
    write_atomic(
        &out_dir.join("overall_vs_beta.csv"),
        mean_table(&rows, "overall", |r| r.overall).as_bytes(),
    )?;
    let mut scatter = String::from("family,k,beta,seed,pz,r2\n");
    for r in &rows {
        let _ = writeln!(scatter, "{},{},{},{},{},{}", r.family, r.k, r.beta, r.seed, r.pz, r.r2);
    }
    write_atomic(&out_dir.join("r2_vs_pz.csv"), scatter.as_bytes())?;

    let mut by_group: BTreeMap<(Family, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &rows {
        let e = by_group.entry((r.family, r.k)).or_default();
        e.0.push(r.beta);
        e.1.push(r.mc);
    }
    let mut mono = String::from("family,k,spearman_mc_beta,n\n");
    let mut monotonicity = Vec::new();
    for ((family, k), (betas, mcs)) in by_group {
        let rho = spearman(&betas, &mcs);
        let _ = writeln!(mono, "{family},{k},{rho},{}", betas.len());
        monotonicity.push((family, k, rho));
    }
    write_atomic(&out_dir.join("monotonicity.csv"), mono.as_bytes())?;
    write_atomic(&out_dir.join("plots.txt"), PLOT_SCRIPT.as_bytes())?;
    Ok(ReportSummary { rows: rows.len(), monotonicity })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn job_seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for f in [Family::Poisson, Family::RectifiedGaussian] {
            for k in [64, 128] {
                for b in 0..5 {
                    for s in 0..2 {
                        assert!(seen.insert(job_seed(7, f, k, b, s)));
                    }
                }
            }
        }
        assert_eq!(job_seed(7, Family::Poisson, 64, 0, 0), job_seed(7, Family::Poisson, 64, 0, 0));
        assert_ne!(job_seed(7, Family::Poisson, 64, 0, 0), job_seed(8, Family::Poisson, 64, 0, 0));
    }

    #[test]
    fn spearman_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-15);
        // ties share ranks
        let rho = spearman(&[1.0, 1.0, 2.0, 2.0], &[4.0, 3.0, 2.0, 1.0]);
        assert!((rho + 0.894_427_190_999_915_9).abs() < 1e-12, "{rho}");
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    fn row(beta: f64, mc: f64) -> ResultRow {
        ResultRow {
            family: Family::Poisson,
            k: 4,
            beta,
            seed: 0,
            status: JobStatus::Ok,
            epochs: 3,
            final_total: 1.25,
            final_kl: 0.1 + beta,
            mc,
            pz: 0.5,
            r2: 0.25,
            overall: 0.6,
            wall_seconds: 0.5,
        }
    }

    #[test]
    fn csv_round_trip_and_truncated_tail() {
        let rows = vec![row(0.01, 2.0), row(8.0, 0.1 + 0.2)];
        let mut text = format!("{RESULTS_HEADER}\n");
        for r in &rows {
            text.push_str(&r.to_csv_line());
            text.push('\n');
        }
        assert_eq!(parse_results(&text).unwrap(), rows);
        let cut = format!("{text}pvae,4,1,0,o");
        assert_eq!(parse_results(&cut).unwrap(), rows);
        let broken = text.replace("pvae,4,8", "pvae,x,8");
        assert!(matches!(parse_results(&broken), Err(Error::MalformedCsv(_))));
        assert!(parse_results("nonsense\n").is_err());
        assert!(parse_results(&format!("{RESULTS_HEADER}\n")).unwrap().is_empty());
    }

    #[test]
    fn report_writes_tables_and_handles_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let results = dir.path().join("results.csv");
        let mut rows = vec![row(0.01, 2.0), row(1.0, 1.0), row(8.0, 0.1)];
        rows.push(ResultRow { family: Family::RectifiedGaussian, ..row(1.0, 0.4) });
        write_results(&results, &rows).unwrap();

        let out = dir.path().join("report");
        let summary = report(&results, &out, None).unwrap();
        assert_eq!(summary.rows, 4);
        assert_eq!(summary.monotonicity[0].0, Family::Poisson);
        assert!((summary.monotonicity[0].2 + 1.0).abs() < 1e-12);
        for f in REPORT_FILES {
            assert!(out.join(f).exists(), "{f}");
        }
        let mc = fs::read_to_string(out.join("mc_vs_beta.csv")).unwrap();
        assert!(mc.lines().nth(1).unwrap().starts_with("pvae,4,0.01,2,2,2,1"), "{mc}");

        let only = report(&results, &dir.path().join("g"), Some(Family::RectifiedGaussian)).unwrap();
        assert_eq!(only.rows, 1);
        let pz = fs::read_to_string(dir.path().join("g/pz_vs_beta.csv")).unwrap();
        assert!(!pz.contains("pvae"));

        write_results(&results, &[]).unwrap();
        let empty = report(&results, &dir.path().join("e"), None).unwrap();
        assert_eq!(empty.rows, 0);
        assert_eq!(fs::read_to_string(dir.path().join("e/mc_vs_beta.csv")).unwrap().lines().count(), 1);
    }
}
