use std::path::Path;

use fundus_core::data::{BinaryLabel, DatasetManifest, DiseaseLabels, FundusRecord, TaskKind};
use fundus_core::experiment::{
    cmd_audit, cmd_downstream, cmd_external_validate, cmd_pretrain, cmd_report, parse_config, ExperimentConfig,
    ReportFilter, ReportIndex, RunOptions,
};
use fundus_core::{synth, Error};

const SPEC: &str = "[spec]\nlearning_rate = 1e-3\nmax_epochs = 1\n[preprocess]\nresolution = 32\naugmentations = []\n";

fn cells(text: &str, dir: &Path) -> Vec<ExperimentConfig> {
    parse_config(text, &dir.join("exp.toml")).unwrap()
}

fn one(text: &str, dir: &Path) -> ExperimentConfig {
    cells(text, dir).remove(0)
}

fn base(task: &str, manifest: &str) -> String {
    format!("task = \"{task}\"\nresolution = 32\nbackbone = \"tiny\"\nn_folds = 3\nseed = 4\nmanifest = \"{manifest}\"\n")
}

fn multi_disease_set(dir: &Path, n: usize) -> DatasetManifest {
    let imgs = synth::abnormality_images(n, 32, 0.5, 21);
    let mut records = Vec::new();
    for (i, (img, _)) in imgs.iter().enumerate() {
        let rel = format!("images/md_{i:05}.png");
        img.save_png(&dir.join(&rel)).unwrap();
        let bits: Vec<bool> = (0..8).map(|d| i % 9 == d).collect();
        records.push(FundusRecord::new(rel, format!("P{i}")).with_diseases(DiseaseLabels::from_bits(&bits)));
    }
    let mut m = DatasetManifest::new("md", TaskKind::MultiDisease, records).unwrap();
    m.save(&dir.join("md.csv")).unwrap();
    m.base_dir = Some(dir.to_path_buf());
    m
}

#[test]
fn regime_grid_report_has_one_series_per_regime() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth::write_abnormality_set(&root.join("gen"), "gen", &synth::general_images(48, 32, 1)).unwrap();
    synth::write_abnormality_set(&root.join("fun"), "fun", &synth::abnormality_images(48, 32, 0.5, 2)).unwrap();
    synth::write_abnormality_set(&root.join("down"), "down", &synth::abnormality_images(60, 32, 0.5, 3)).unwrap();
    let opts = RunOptions::new(root.join("out"));
    for (regime, m) in [("general", "gen/gen.csv"), ("fundus", "fun/fun.csv"), ("general_fundus", "fun/fun.csv")] {
        let cfg = one(&format!("{}regime = \"{regime}\"\n{SPEC}", base("abnormality", m)), root);
        cmd_pretrain(&cfg, &opts).unwrap();
        let again = cmd_pretrain(&cfg, &opts).unwrap();
        assert!(again.skipped);
        assert!(again.notices.iter().any(|n| n.contains("already complete")), "{:?}", again.notices);
    }
    let grid = format!(
        "{}{SPEC}[grid]\nregime = [\"scratch\", \"general\", \"fundus\", \"general_fundus\"]\nfraction = [0.25, 0.5, 1.0]\n",
        base("abnormality", "down/down.csv")
    );
    let grid = cells(&grid, root);
    assert_eq!(grid.len(), 12);
    for c in &grid {
        cmd_downstream(c, &opts).unwrap();
    }
    cmd_report(&ReportFilter::from_configs(&grid), "grid", &opts).unwrap();
    let report_dir = opts.layout().reports().join("grid");
    let index: ReportIndex =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report_index.json")).unwrap()).unwrap();
    assert_eq!(index.sources.len(), 12);
    assert_eq!(index.plots["fraction_abnormality.png"].len(), 4);
    let table = std::fs::read_to_string(report_dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 13);
    assert!(cmd_audit(&opts).unwrap().orphans.is_empty());
}

#[test]
fn multi_disease_writes_f1_table() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    multi_disease_set(&root.join("md"), 90);
    let opts = RunOptions::new(root.join("out"));
    let cfg = one(&format!("{}regime = \"scratch\"\n{SPEC}", base("multi_disease", "md/md.csv")), root);
    cmd_downstream(&cfg, &opts).unwrap();
    let run_dir = opts.layout().run_dir("downstream", &cfg.config_hash());
    let f1 = std::fs::read_to_string(run_dir.join("f1_table.csv")).unwrap();
    let rows: Vec<Vec<&str>> = f1.lines().map(|l| l.split(',').collect()).collect();
    assert!(rows.len() >= 3, "{f1}");
    let width = rows[0].len();
    assert!(rows.iter().all(|r| r.len() == width), "{f1}");
    assert!(f1.contains("amd") || f1.contains("AMD"), "{f1}");
}

#[test]
fn external_is_repeatable_and_collapses_diseases() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    synth::write_abnormality_set(&root.join("down"), "down", &synth::abnormality_images(45, 32, 0.5, 5)).unwrap();
    let ext_dir = root.join("ext");
    let imgs = synth::abnormality_images(20, 32, 0.5, 6);
    let mut records = Vec::new();
    for (i, (img, ab)) in imgs.iter().enumerate() {
        let rel = format!("images/e_{i:05}.png");
        img.save_png(&ext_dir.join(&rel)).unwrap();
        let r = FundusRecord::new(rel, format!("E{i}"));
        records.push(if i % 4 == 0 && *ab {
            r.with_diseases(DiseaseLabels::from_bits(&[false, false, false, true, false, false, false, false]))
        } else {
            r.with_binary(BinaryLabel::from_bit(*ab))
        });
    }
    DatasetManifest::new("ext", TaskKind::Abnormality, records)
        .unwrap()
        .save(&ext_dir.join("ext.csv"))
        .unwrap();

    let opts = RunOptions::new(root.join("out"));
    let text = format!(
        "{}regime = \"scratch\"\n{SPEC}[external]\nmanifest = \"ext/ext.csv\"\n",
        base("abnormality", "down/down.csv")
    );
    let cfg = one(&text, root);
    assert!(matches!(cmd_external_validate(&cfg, &opts), Err(Error::MissingCheckpoint { .. }) | Err(Error::Validation(_))));
    cmd_downstream(&cfg, &opts).unwrap();
    let first = cmd_external_validate(&cfg, &opts).unwrap();
    assert!(first.notices.iter().any(|n| n.contains("collapsed")), "{:?}", first.notices);
    let path = first.artifact.clone().unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let forced = RunOptions { force: true, ..opts.clone() };
    let second = cmd_external_validate(&cfg, &forced).unwrap();
    assert_eq!(second.artifact.as_ref(), Some(&path));
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn audit_flags_untracked_run_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions::new(dir.path());
    assert!(cmd_audit(&opts).unwrap().orphans.is_empty());
    let stray = opts.layout().run_dir("downstream", "0123456789abcdef");
    std::fs::create_dir_all(&stray).unwrap();
    let rep = cmd_audit(&opts).unwrap();
    assert_eq!(rep.orphans.len(), 1);
    assert!(matches!(rep.into_result(), Err(Error::Validation(_))));
}
