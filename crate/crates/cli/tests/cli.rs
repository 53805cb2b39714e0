use std::path::Path;
use std::process::{Command, Output};

fn pvfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvfe")).args(args).output().expect("spawn pvfe")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare(dir: &Path) {
    let raw = dir.join("raw.bin");
    let o = pvfe(&["synth", "--out", s(&raw), "--n", "400", "--side", "8", "--kind", "dead-leaves", "--data-seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = pvfe(&["preprocess", "--data", s(&raw), "--out", s(&dir.join("prep")), "--n-val", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("prep/train.bin").exists() && dir.join("prep/validation.bin").exists());
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let run = dir.path().join("run");
    let o = pvfe(&[
        "train",
        "--data",
        s(&dir.path().join("prep/train.bin")),
        "--out",
        s(&run),
        "--model",
        "pvae",
        "--k",
        "8",
        "--epochs",
        "3",
        "--warmup",
        "0",
        "--batch",
        "50",
        "--verbose",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch=")).count(), 3);
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let ckpt = run.join("final.ckpt");
    assert!(ckpt.exists());
    let o = pvfe(&["eval", "--checkpoint", s(&ckpt), "--val", s(&dir.path().join("prep/validation.bin")), "--samples", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("family,k,beta,seed,mc,pz,r2,overall"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "pvae");
    assert_eq!(row[1], "8");
    let pz: f64 = row[5].parse().unwrap();
    assert!((0.0..=1.0).contains(&pz));
}

#[test]
fn sweep_report_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    prepare(dir.path());
    let out = dir.path().join("sweep");
    let (train, val) = (dir.path().join("prep/train.bin"), dir.path().join("prep/validation.bin"));
    let args = [
        "sweep",
        "--data",
        s(&train),
        "--val",
        s(&val),
        "--out",
        s(&out),
        "--families",
        "pvae,grelu",
        "--k-grid",
        "4",
        "--beta-grid",
        "0.5,2",
        "--seeds",
        "0",
        "--epochs",
        "2",
        "--warmup",
        "0",
        "--batch",
        "100",
        "--samples",
        "1",
    ];
    let o = pvfe(&[&args[..], &["--max-jobs", "1"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let partial = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(partial.lines().count(), 2);

    let o = pvfe(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("4 of 4 jobs done (3 run now, 1 resumed"));
    let full = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(full.lines().count(), 5);

    let rep = dir.path().join("report");
    let o = pvfe(&["report", "--data", s(&out.join("results.csv")), "--out", s(&rep)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["mc_vs_beta.csv", "pz_vs_beta.csv", "r2_vs_pz.csv", "overall_vs_beta.csv", "monotonicity.csv", "plots.txt"] {
        assert!(rep.join(f).exists(), "{f}");
    }
}

#[test]
fn report_without_rows_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    std::fs::write(&results, "family,k,beta,seed,status,epochs,final_total,final_kl,mc,pz,r2,overall,wall_seconds\n").unwrap();
    let o = pvfe(&["report", "--data", s(&results), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn usage_errors_exit_1_and_name_the_flag() {
    let o = pvfe(&["train", "--model", "bogus", "--data", "x", "--out", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--model"), "{}", stderr(&o));

    let o = pvfe(&["train", "--k", "zero"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--k"));

    let o = pvfe(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let o = pvfe(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvfe(&["train", "--data", s(&dir.path().join("nope.bin")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn print_config_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = pvfe(&["train", "--preset", "desk", "--beta", "3", "--print-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("preset = desk"));
    assert!(text.contains("beta = 3"));
    let file = dir.path().join("c.txt");
    std::fs::write(&file, &text).unwrap();
    let again = pvfe(&["train", "--config", s(&file), "--print-config"]);
    assert_eq!(stdout(&again), text);

    // flags override the file
    let o = pvfe(&["train", "--config", s(&file), "--beta", "0.25", "--print-config"]);
    assert!(stdout(&o).contains("beta = 0.25"));
}

#[test]
fn quick_check_passes() {
    let o = pvfe(&["check", "--quick"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 7);
}
