use std::path::Path;
use std::process::{Command, Output};

fn fundus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fundus"))
        .current_dir(dir)
        .env_remove("FUNDUS_OUT")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CELL: &str = "task = \"abnormality\"\nresolution = 32\nbackbone = \"tiny\"\nn_folds = 3\nseed = 2\n\
manifest = \"data/set.csv\"\nregime = \"scratch\"\n\
[spec]\nlearning_rate = 1e-3\nmax_epochs = 1\n[preprocess]\nresolution = 32\naugmentations = []\n";

fn with_data(dir: &Path) {
    let o = fundus(dir, &["synth", "--kind", "abnormality", "--dir", "data", "--name", "set", "--n", "36", "--size", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("records: 36"));
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = fundus(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for sub in ["pretrain", "downstream", "external", "report", "explain", "audit"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&fundus(d, &["downstream"])), 2);
    std::fs::write(d.join("bad.toml"), "task = \"abnormality\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&fundus(d, &["downstream", "--config", "bad.toml"])), 2);
    std::fs::write(d.join("missing.toml"), CELL).unwrap();
    assert_eq!(code(&fundus(d, &["downstream", "--config", "missing.toml"])), 3);
    assert_eq!(code(&fundus(d, &["report"])), 3);
    assert_eq!(code(&fundus(d, &["audit"])), 0);
    std::fs::create_dir_all(d.join("fundus-out/runs/downstream/abc")).unwrap();
    assert_eq!(code(&fundus(d, &["audit"])), 3);
}

#[test]
fn fundus_out_sets_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    with_data(d);
    std::fs::write(d.join("cell.toml"), CELL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fundus"))
        .current_dir(d)
        .env("FUNDUS_OUT", d.join("elsewhere"))
        .env("RUST_LOG", "warn")
        .args(["downstream", "--config", "cell.toml", "--deterministic"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("elsewhere/ledger.jsonl").is_file());
    assert!(!d.join("fundus-out").exists());
    let again = fundus(d, &["downstream", "--config", "cell.toml", "--out", "elsewhere", "--deterministic"]);
    assert_eq!(code(&again), 0);
    assert!(stdout(&again).contains("notice:"), "{}", stdout(&again));
}

#[test]
fn parallel_grid_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    with_data(d);
    std::fs::write(d.join("grid.toml"), format!("{CELL}[grid]\nfraction = [0.5, 1.0]\n")).unwrap();
    let par = fundus(d, &["downstream", "--config", "grid.toml", "--parallel", "2", "--out", "par"]);
    assert_eq!(code(&par), 0, "{}", String::from_utf8_lossy(&par.stderr));
    let seq = fundus(d, &["downstream", "--config", "grid.toml", "--out", "seq"]);
    assert_eq!(code(&seq), 0);
    for out in ["par", "seq"] {
        let o = fundus(d, &["report", "--config", "grid.toml", "--out", out, "--name", "r"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(d.join("par/reports/r/table.csv")).unwrap();
    let b = std::fs::read(d.join("seq/reports/r/table.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(code(&fundus(d, &["audit", "--out", "par"])), 0);
}
