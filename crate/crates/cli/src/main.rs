use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fundus_core::data::TaskKind;
use fundus_core::experiment::{
    cmd_audit, cmd_downstream, cmd_explain, cmd_external_validate, cmd_pretrain, cmd_report, load_config,
    ExperimentConfig, Outcome, ReportFilter, RunOptions,
};
use fundus_core::{par, synth, Error};

#[derive(Parser, Debug)]
#[command(name = "fundus", version, about = "Fundus pretraining and transfer experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config (TOML, may contain a [grid] table).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed of every grid cell.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long, global = true, env = "FUNDUS_OUT", default_value = "fundus-out")]
    out: PathBuf,
    /// Re-run cells that the ledger marks complete.
    #[arg(long, global = true)]
    force: bool,
    /// Run up to N grid cells as separate processes.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Run only this grid cell (used for child processes).
    #[arg(long, global = true, hide = true)]
    cell: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Upstream pretraining; registers a checkpoint.
    Pretrain,
    /// Cross-validated downstream runs.
    Downstream,
    /// Evaluate trained checkpoints on an external manifest.
    External,
    /// Tables and plots over completed runs.
    Report {
        /// Report directory name under reports/.
        #[arg(long, default_value = "all")]
        name: String,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
    },
    /// Grad-CAM overlays and t-SNE projection for a trained checkpoint.
    Explain,
    /// Check that every artifact traces back to the ledger.
    Audit,
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        abnormal_fraction: f64,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum TaskArg {
    Abnormality,
    MultiDisease,
    VesselSegmentation,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Abnormality => TaskKind::Abnormality,
            TaskArg::MultiDisease => TaskKind::MultiDisease,
            TaskArg::VesselSegmentation => TaskKind::VesselSegmentation,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SynthKind {
    Abnormality,
    Quadrant,
    Vessel,
    General,
}

fn cells(common: &Common) -> Result<Vec<ExperimentConfig>, Error> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cells = load_config(path)?;
    for c in &mut cells {
        if let Some(s) = common.seed {
            c.seed = s;
        }
        c.deterministic |= common.deterministic;
        c.validate()?;
    }
    if let Some(i) = common.cell {
        if i >= cells.len() {
            return Err(Error::Config(format!("cell {i} out of range for {} cells", cells.len())));
        }
        cells = vec![cells.swap_remove(i)];
    }
    Ok(cells)
}

fn options(common: &Common, cfg: Option<&ExperimentConfig>) -> RunOptions {
    let root = cfg.and_then(|c| c.output_dir.clone()).unwrap_or_else(|| common.out.clone());
    RunOptions { root, force: common.force }
}

fn print(outcome: &Outcome) {
    for n in &outcome.notices {
        println!("notice: {n}");
    }
    for c in &outcome.checkpoints {
        println!("checkpoint: {c}");
    }
    if let Some(a) = &outcome.artifact {
        println!("artifact: {}", a.display());
    }
}

type CellFn = fn(&ExperimentConfig, &RunOptions) -> fundus_core::Result<Outcome>;

/// Run every cell, in-process or as up to `--parallel` child processes.
fn run_grid(common: &Common, f: CellFn) -> Result<(), Error> {
    let cells = cells(common)?;
    if common.parallel > 1 && cells.len() > 1 && common.cell.is_none() {
        return spawn_children(cells.len(), common.parallel);
    }
    let mut first_err = None;
    for c in &cells {
        if c.deterministic {
            par::set_threads(1);
        }
        match f(c, &options(common, Some(c))) {
            Ok(o) => print(&o),
            Err(e) => {
                eprintln!("error: {} : {e}", c.label());
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn spawn_children(n: usize, limit: usize) -> Result<(), Error> {
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let mut args = Vec::new();
    let mut it = std::env::args().skip(1);
    while let Some(a) = it.next() {
        if a == "--parallel" {
            it.next();
        } else if !a.starts_with("--parallel=") {
            args.push(a);
        }
    }
    let mut worst = 0;
    let mut running = Vec::new();
    for i in 0..n {
        if running.len() == limit {
            let child: std::process::Child = running.remove(0);
            worst = worst.max(wait(child));
        }
        let child = Command::new(&exe)
            .args(&args)
            .args(["--parallel", "1", "--cell", &i.to_string()])
            .spawn()
            .map_err(|e| Error::io(&exe, e))?;
        running.push(child);
    }
    for child in running {
        worst = worst.max(wait(child));
    }
    match worst {
        0 => Ok(()),
        2 => Err(Error::Config("a grid cell failed with a config error".into())),
        3 => Err(Error::Validation("a grid cell failed with a data error".into())),
        _ => Err(Error::Training("a grid cell failed".into())),
    }
}

fn wait(mut child: std::process::Child) -> i32 {
    child.wait().ok().and_then(|s| s.code()).unwrap_or(4)
}

fn synth_cmd(kind: SynthKind, dir: &Path, name: &str, n: usize, size: usize, frac: f64, seed: u64) -> Result<(), Error> {
    let manifest = match kind {
        SynthKind::Abnormality => synth::write_abnormality_set(dir, name, &synth::abnormality_images(n, size, frac, seed))?,
        SynthKind::General => synth::write_abnormality_set(dir, name, &synth::general_images(n, size, seed))?,
        SynthKind::Quadrant => {
            let imgs: Vec<_> = synth::quadrant_images(n, size, seed)
                .into_iter()
                .map(|(im, q)| (im, q.is_some()))
                .collect();
            synth::write_abnormality_set(dir, name, &imgs)?
        }
        SynthKind::Vessel => synth::write_vessel_set(dir, name, &synth::vessel_images(n, size, seed))?,
    };
    println!("artifact: {}", dir.join(format!("{name}.csv")).display());
    println!("records: {}", manifest.records.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = &cli.common;
    if common.deterministic {
        par::set_threads(1);
    }
    match cli.command {
        Cmd::Pretrain => run_grid(common, cmd_pretrain),
        Cmd::Downstream => run_grid(common, cmd_downstream),
        Cmd::External => run_grid(common, cmd_external_validate),
        Cmd::Explain => run_grid(common, cmd_explain),
        Cmd::Report { name, task } => {
            let mut filter = match &common.config {
                Some(_) => ReportFilter::from_configs(&cells(common)?),
                None => ReportFilter::default(),
            };
            filter.task = task.map(Into::into);
            print(&cmd_report(&filter, &name, &options(common, None))?);
            Ok(())
        }
        Cmd::Audit => {
            let rep = cmd_audit(&options(common, None))?;
            for (p, why) in &rep.orphans {
                println!("orphan: {} ({why})", p.display());
            }
            println!("checked: {}", rep.checked);
            rep.into_result().map(|_| ())
        }
        Cmd::Synth { kind, dir, name, n, size, abnormal_fraction } => {
            synth_cmd(kind, &dir, &name, n, size, abnormal_fraction, common.seed.unwrap_or(0))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
