use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pvfe_core::data::{dead_leaves_patches, prepare_dataset, save_patches, DeadLeavesConfig, PreprocConfig};
use pvfe_core::metrics::evaluate;
use pvfe_core::model::{Family, ModelParams};
use pvfe_core::sweep::{
    job_seed, read_results, run_grid, splitmix64, JobStatus, ResultRow, SweepConfig, RESULTS_FILE,
};
use pvfe_core::trainer::{train, TrainConfig};

fn write_data(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let cfg = DeadLeavesConfig { radius_min: 2.0, ..DeadLeavesConfig::default() };
    let raw = dead_leaves_patches(300, 4, &cfg, 9).unwrap();
    let prepared = prepare_dataset(&raw, 60, &PreprocConfig::default()).unwrap();
    let (t, v) = (dir.join("train.bin"), dir.join("validation.bin"));
    save_patches(&prepared.train, &t).unwrap();
    save_patches(&prepared.validation, &v).unwrap();
    (t, v)
}

fn grid(dir: &Path, out: &str) -> SweepConfig {
    let (t, v) = (dir.join("train.bin"), dir.join("validation.bin"));
    let mut cfg = SweepConfig::desk(t, v, dir.join(out));
    cfg.k_grid = vec![3, 5];
    cfg.beta_grid = vec![0.5, 2.0];
    cfg.seeds = vec![0, 1];
    cfg.train = TrainConfig { epochs: 3, warmup_epochs: 1, batch_size: 64, ..TrainConfig::desk() };
    cfg.eval_samples = 2;
    cfg.threads = Some(1);
    cfg
}

fn metric_columns(rows: &[ResultRow]) -> Vec<String> {
    rows.iter()
        .map(|r| {
            let line = r.to_csv_line();
            let cols: Vec<&str> = line.split(',').collect();
            cols[..cols.len() - 1].join(",")
        })
        .collect()
}

#[test]
fn single_cell_grid_matches_direct_training() {
    let dir = tempfile::tempdir().unwrap();
    let (t, v) = write_data(dir.path());
    let mut cfg = grid(dir.path(), "one");
    cfg.families = vec![Family::RectifiedGaussian];
    cfg.k_grid = vec![4];
    cfg.beta_grid = vec![1.0];
    cfg.seeds = vec![0];
    let outcome = run_grid(&cfg).unwrap();
    assert!(outcome.complete);
    let row = &outcome.rows[0];

    let train_data = pvfe_core::data::load_patches(&t).unwrap();
    let val = pvfe_core::data::load_patches(&v).unwrap();
    let js = job_seed(cfg.train.seed, Family::RectifiedGaussian, 4, 0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(js.wrapping_add(2)));
    let model = ModelParams::init(Family::RectifiedGaussian, 4, train_data.width(), &mut rng).unwrap();
    let tcfg = TrainConfig { beta: 1.0, seed: js, ..cfg.train.clone() };
    let (model, log) = train(model, &train_data, &tcfg).unwrap();
    let m = evaluate(&model, &val, 1.0, splitmix64(js.wrapping_add(1)), cfg.eval_samples).unwrap();

    assert_eq!(row.status, JobStatus::Ok);
    assert_eq!(row.epochs, log.records.len());
    assert_eq!(row.final_total, log.last().unwrap().total);
    assert_eq!((row.mc, row.pz, row.r2, row.overall), (m.mc, m.pz, m.r2, m.overall));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let serial = run_grid(&grid(dir.path(), "serial")).unwrap();
    let mut par = grid(dir.path(), "parallel");
    par.threads = Some(4);
    let parallel = run_grid(&par).unwrap();
    assert_eq!(serial.rows.len(), 16);
    assert_eq!(metric_columns(&serial.rows), metric_columns(&parallel.rows));
}

#[test]
fn deleting_a_row_recomputes_only_that_cell() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let cfg = grid(dir.path(), "resume");
    let first = run_grid(&cfg).unwrap();
    let path = cfg.out_dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.remove(5);
    // a torn final line, as left by a killed run
    let torn = format!("{}\npvae,3,0.5", lines.join("\n"));
    fs::write(&path, torn).unwrap();

    let again = run_grid(&cfg).unwrap();
    assert_eq!(again.ran, 1);
    assert_eq!(again.skipped, 15);
    assert_eq!(metric_columns(&again.rows), metric_columns(&first.rows));
    assert_eq!(metric_columns(&read_results(&path).unwrap()), metric_columns(&first.rows));
}

#[test]
fn interrupted_sweep_resumes_to_the_same_table() {
    let dir = tempfile::tempdir().unwrap();
    write_data(dir.path());
    let whole = run_grid(&grid(dir.path(), "whole")).unwrap();
    let mut cfg = grid(dir.path(), "pieces");
    cfg.max_jobs = Some(5);
    let mut rounds = 0;
    loop {
        rounds += 1;
        if run_grid(&cfg).unwrap().complete {
            break;
        }
    }
    assert_eq!(rounds, 4);
    let pieces = read_results(&cfg.out_dir.join(RESULTS_FILE)).unwrap();
    assert_eq!(metric_columns(&pieces), metric_columns(&whole.rows));
}
