//! `pvfe`: preprocess patches, train and evaluate models, run sweeps.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::{parse_text, Config, Preset, SynthKind};
use pvfe_core::data::{
    dead_leaves_patches, extract_pgm_patches, load_patches, prepare_dataset, preprocess, save_patches, synth_patches,
    zscore,
};
use pvfe_core::metrics::evaluate;
use pvfe_core::model::{load_checkpoint, ModelParams};
use pvfe_core::sweep::{report, run_grid_with_progress, DeskData, DeskSource, SweepConfig, RESULTS_FILE};
use pvfe_core::trainer::{checkpoint_path, train_with_outputs, TrainOutputs};
use pvfe_core::{check, Error};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_EMPTY_REPORT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "pvfe", version, about = "Poisson and rectified-Gaussian VAEs trained on image patches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Whiten, contrast-normalize and z-score a patch file or a PGM directory.
    Preprocess,
    /// Write raw synthetic patches.
    Synth,
    /// Train one model.
    Train,
    /// Evaluate a checkpoint on validation patches.
    Eval,
    /// Train and evaluate every cell of a (family, K, beta, seed) grid.
    Sweep,
    /// Summarize a results file into plot tables.
    Report,
    /// Run the numerical verification suites.
    Check,
}

/// Every flag maps onto one configuration key.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Configuration file (`[section]` / `key = value`).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// full or desk.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// One progress line per epoch (train) or per job (sweep).
    #[arg(long, global = true)]
    verbose: bool,
    /// pvae or grelu.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    k: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    warmup: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    batch: Option<String>,
    #[arg(long, global = true)]
    clip: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Input: patch file, PGM directory (preprocess) or results file (report).
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<String>,
    /// Validation patch file.
    #[arg(long, global = true, value_name = "PATH")]
    val: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<String>,
    /// Number of patches to synthesize or crop.
    #[arg(long, global = true)]
    n: Option<String>,
    /// Patches held out for validation.
    #[arg(long, global = true)]
    n_val: Option<String>,
    #[arg(long, global = true)]
    side: Option<String>,
    /// gaussian or dead-leaves.
    #[arg(long, global = true)]
    kind: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    contrast: Option<String>,
    #[arg(long, global = true)]
    data_seed: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<String>,
    /// Posterior draws per validation patch.
    #[arg(long, global = true)]
    samples: Option<String>,
    #[arg(long, global = true)]
    families: Option<String>,
    #[arg(long, global = true)]
    k_grid: Option<String>,
    #[arg(long, global = true)]
    beta_grid: Option<String>,
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true)]
    threads: Option<String>,
    /// Stop the sweep after this many new jobs.
    #[arg(long, global = true)]
    max_jobs: Option<String>,
    #[arg(long, global = true)]
    save_artifacts: bool,
    /// Smaller sample sizes for `check`.
    #[arg(long, global = true)]
    quick: bool,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &'static str, String)> {
        let mut out = Vec::new();
        let mut push = |flag: &'static str, key: &'static str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((flag, key, v.clone()));
            }
        };
        push("--model", "model.family", &self.model);
        push("--k", "model.k", &self.k);
        push("--beta", "train.beta", &self.beta);
        push("--epochs", "train.epochs", &self.epochs);
        push("--warmup", "train.warmup_epochs", &self.warmup);
        push("--lr", "train.lr", &self.lr);
        push("--batch", "train.batch_size", &self.batch);
        push("--clip", "train.grad_clip", &self.clip);
        push("--seed", "train.seed", &self.seed);
        push("--data", "data.path", &self.data);
        push("--val", "data.validation", &self.val);
        push("--out", "data.out", &self.out);
        push("--n", "data.n_patches", &self.n);
        push("--n-val", "data.n_validation", &self.n_val);
        push("--side", "data.side", &self.side);
        push("--kind", "data.kind", &self.kind);
        push("--alpha", "data.alpha", &self.alpha);
        push("--contrast", "data.contrast", &self.contrast);
        push("--data-seed", "data.seed", &self.data_seed);
        push("--checkpoint", "eval.checkpoint", &self.checkpoint);
        push("--samples", "eval.samples", &self.samples);
        push("--families", "sweep.families", &self.families);
        push("--k-grid", "sweep.k_grid", &self.k_grid);
        push("--beta-grid", "sweep.beta_grid", &self.beta_grid);
        push("--seeds", "sweep.seeds", &self.seeds);
        push("--threads", "sweep.threads", &self.threads);
        push("--max-jobs", "sweep.max_jobs", &self.max_jobs);
        if self.verbose {
            out.push(("--verbose", "run.verbose", "true".into()));
        }
        if self.save_artifacts {
            out.push(("--save-artifacts", "sweep.save_artifacts", "true".into()));
        }
        out
    }
}

/// A failure together with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite { .. } => EXIT_NUMERICAL,
            Error::Io(_)
            | Error::Csv(_)
            | Error::MalformedCsv(_)
            | Error::BadMagic { .. }
            | Error::BadVersion { .. }
            | Error::Truncated { .. }
            | Error::CrcMismatch { .. }
            | Error::Image(_)
            | Error::Shape(_)
            | Error::LengthMismatch { .. } => EXIT_DATA,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<u8, Failure>;

fn resolve(flags: &Flags) -> Result<Config, Failure> {
    let file = match &flags.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure {
                code: EXIT_DATA,
                message: format!("cannot read config {}: {e}", p.display()),
            })?;
            parse_text(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => Default::default(),
    };
    let preset_text = flags.preset.clone().or_else(|| file.get("run.preset").cloned());
    let preset = match preset_text.as_deref() {
        None | Some("full") => Preset::Full,
        Some("desk") => Preset::Desk,
        Some(other) => return Err(Failure::usage(format!("invalid value `{other}` for --preset: expected full or desk"))),
    };
    let mut cfg = Config::for_preset(preset);
    for (k, v) in &file {
        if k != "run.preset" {
            cfg.set(k, v).map_err(Failure::usage)?;
        }
    }
    for (flag, key, v) in flags.pairs() {
        cfg.set(key, &v).map_err(|e| Failure::usage(format!("{flag}: {e}")))?;
    }
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value.as_deref().ok_or_else(|| Failure::usage(format!("{flag} is required")))
}

fn cmd_synth(cfg: &Config) -> CmdResult {
    let out = required(&cfg.out, "--out")?;
    let batch = match cfg.kind {
        SynthKind::Gaussian => synth_patches(cfg.n_patches, cfg.side, cfg.alpha, cfg.data_seed)?,
        SynthKind::DeadLeaves => dead_leaves_patches(cfg.n_patches, cfg.side, &cfg.leaves, cfg.data_seed)?,
    };
    save_patches(&batch, out)?;
    println!("wrote {} {} patches of {}x{} to {}", batch.len(), cfg.kind.name(), cfg.side, cfg.side, out.display());
    Ok(0)
}

fn cmd_preprocess(cfg: &Config) -> CmdResult {
    let input = required(&cfg.data, "--data")?;
    let out = required(&cfg.out, "--out")?;
    let raw = if input.is_dir() {
        extract_pgm_patches(input, cfg.n_patches, cfg.side, cfg.data_seed)?
    } else {
        load_patches(input)?
    };
    fs::create_dir_all(out)?;
    if cfg.n_validation == 0 {
        let train = zscore(&preprocess(&raw, &cfg.preproc)?)?;
        save_patches(&train, &out.join("train.bin"))?;
        println!("wrote {} training patches to {}", train.len(), out.display());
    } else {
        let prepared = prepare_dataset(&raw, cfg.n_validation, &cfg.preproc)?;
        save_patches(&prepared.train, &out.join("train.bin"))?;
        save_patches(&prepared.validation, &out.join("validation.bin"))?;
        println!(
            "wrote {} training and {} validation patches to {}",
            prepared.train.len(),
            prepared.validation.len(),
            out.display()
        );
    }
    Ok(0)
}

fn cmd_train(cfg: &Config) -> CmdResult {
    let data = load_patches(required(&cfg.data, "--data")?)?;
    let out = required(&cfg.out, "--out")?;
    fs::create_dir_all(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(1));
    let model = ModelParams::init(cfg.family, cfg.k, data.width(), &mut rng)?;
    let verbose = cfg.verbose;
    let outputs = TrainOutputs {
        log_path: Some(out.join("train_log.csv")),
        checkpoint_dir: Some(out.to_path_buf()),
        checkpoint_every: None,
        on_epoch: verbose.then(|| {
            Box::new(|r: &pvfe_core::trainer::EpochRecord| {
                println!(
                    "epoch={} lr={:.6} total={:.6} recon_mean={:.6} recon_var={:.6} kl={:.6} grad_norm={:.4}",
                    r.epoch, r.lr, r.total, r.recon_mean, r.recon_var, r.kl, r.grad_norm
                )
            }) as Box<dyn FnMut(&pvfe_core::trainer::EpochRecord)>
        }),
    };
    let (model, log) = train_with_outputs(model, &data, &cfg.train, outputs)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let last = log.last().expect("at least one epoch");
    println!(
        "trained {} K={} beta={} for {} epochs: total {:.6}, kl {:.6}; checkpoint {}",
        model.family(),
        cfg.k,
        cfg.train.beta,
        log.records.len(),
        last.total,
        last.kl,
        checkpoint_path(out, None).display()
    );
    Ok(0)
}

fn cmd_eval(cfg: &Config) -> CmdResult {
    let ckpt = required(&cfg.checkpoint, "--checkpoint")?;
    let model = load_checkpoint(ckpt)?;
    let validation_path = cfg.validation.as_deref().or(cfg.data.as_deref());
    let validation = load_patches(validation_path.ok_or_else(|| Failure::usage("--val (or --data) is required"))?)?;
    let r = evaluate(&model, &validation, cfg.train.beta, cfg.train.seed, cfg.samples)?;
    let text = format!(
        "family,k,beta,seed,mc,pz,r2,overall\n{},{},{},{},{},{},{},{}\n",
        r.family, r.k, r.beta, r.seed, r.mc, r.pz, r.r2, r.overall
    );
    if let Some(out) = &cfg.out {
        fs::write(out, &text)?;
    }
    print!("{text}");
    Ok(0)
}

fn desk_data(cfg: &Config) -> DeskData {
    DeskData {
        n_train: cfg.n_patches.saturating_sub(cfg.n_validation),
        n_validation: cfg.n_validation,
        side: cfg.side,
        source: match cfg.kind {
            SynthKind::DeadLeaves => DeskSource::DeadLeaves(cfg.leaves),
            SynthKind::Gaussian => DeskSource::Gaussian { alpha: cfg.alpha, amplitude: 1.0 },
        },
        seed: cfg.data_seed,
    }
}

fn cmd_sweep(cfg: &Config) -> CmdResult {
    let out = required(&cfg.out, "--out")?.to_path_buf();
    let (train_path, validation_path) = match (&cfg.data, &cfg.validation) {
        (Some(t), Some(v)) => (t.clone(), v.clone()),
        (None, None) if cfg.preset == Preset::Desk => {
            let dir = out.join("data");
            if dir.join("train.bin").exists() && dir.join("validation.bin").exists() {
                (dir.join("train.bin"), dir.join("validation.bin"))
            } else {
                println!("generating desk dataset in {}", dir.display());
                desk_data(cfg).write(&dir)?
            }
        }
        _ => return Err(Failure::usage("sweep needs both --data and --val (or --preset desk to generate them)")),
    };
    let grid = SweepConfig {
        families: cfg.families.clone(),
        k_grid: cfg.k_grid.clone(),
        beta_grid: cfg.beta_grid.clone(),
        seeds: cfg.seeds.clone(),
        train: cfg.train.clone(),
        train_path,
        validation_path,
        out_dir: out.clone(),
        eval_samples: cfg.samples,
        save_artifacts: cfg.save_artifacts,
        threads: cfg.threads,
        max_jobs: cfg.max_jobs,
    };
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let verbose = cfg.verbose;
    let outcome = run_grid_with_progress(&grid, |r| {
        if verbose {
            println!(
                "job family={} k={} beta={} seed={} status={} mc={:.6} pz={:.6} r2={:.6} overall={:.6} seconds={:.1}",
                r.family,
                r.k,
                r.beta,
                r.seed,
                r.status.as_str(),
                r.mc,
                r.pz,
                r.r2,
                r.overall,
                r.wall_seconds
            );
        }
    })?;
    let failed = outcome.rows.iter().filter(|r| r.status != pvfe_core::sweep::JobStatus::Ok).count();
    println!(
        "{} of {} jobs done ({} run now, {} resumed, {} failed); results in {}",
        outcome.rows.len(),
        grid.total_jobs(),
        outcome.ran,
        outcome.skipped,
        failed,
        out.join(RESULTS_FILE).display()
    );
    Ok(0)
}

fn cmd_report(cfg: &Config) -> CmdResult {
    let results = match (&cfg.data, &cfg.out) {
        (Some(d), _) => d.clone(),
        _ => return Err(Failure::usage("--data <results.csv> is required")),
    };
    let out = cfg
        .out
        .clone()
        .unwrap_or_else(|| results.parent().unwrap_or(Path::new(".")).join("report"));
    let family = match cfg.families.as_slice() {
        [single] => Some(*single),
        _ => None,
    };
    let summary = report(&results, &out, family)?;
    for (family, k, rho) in &summary.monotonicity {
        println!("spearman(mc, beta) family={family} k={k}: {rho:.4}");
    }
    println!("report on {} rows written to {}", summary.rows, out.display());
    if summary.rows == 0 {
        eprintln!("no successful rows in {}", results.display());
        return Ok(EXIT_EMPTY_REPORT);
    }
    Ok(0)
}

fn cmd_check(quick: bool) -> CmdResult {
    let outcomes = if quick {
        vec![
            check::kl_oracles(),
            check::normal_cdf(),
            check::rectified_moments_vs_mc(100_000),
            check::gradient_check(10),
            check::taylor_order(),
            check::elbo_carving(20_000),
            check::preprocessing_contract(),
        ]
    } else {
        check::run_all()
    };
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    Ok(if failed == 0 { 0 } else { EXIT_NUMERICAL })
}

fn run(cli: &Cli) -> CmdResult {
    let cfg = resolve(&cli.flags)?;
    if cli.flags.print_config {
        print!("{}", cfg.to_text());
        return Ok(0);
    }
    match cli.command {
        Command::Synth => cmd_synth(&cfg),
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Report => cmd_report(&cfg),
        Command::Check => cmd_check(cli.flags.quick),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
