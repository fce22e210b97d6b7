use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use super::reporting::ReportIndex;
use super::run::RunOptions;
use crate::error::{Error, Result};
use crate::model::CheckpointMeta;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditReport {
    pub checked: usize,
    pub orphans: Vec<(PathBuf, String)>,
}

impl AuditReport {
    /// `Err` listing the orphans, if any.
    pub fn into_result(self) -> Result<Self> {
        if self.orphans.is_empty() {
            return Ok(self);
        }
        let list: Vec<String> = self
            .orphans
            .iter()
            .map(|(p, why)| format!("{} ({why})", p.display()))
            .collect();
        Err(Error::Validation(format!("{} orphan artifacts: {}", list.len(), list.join("; "))))
    }
}

fn children(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Every artifact under the output root must trace back to a ledger entry
/// through its config hash.
pub fn cmd_audit(opts: &RunOptions) -> Result<AuditReport> {
    let layout = opts.layout();
    let entries = layout.ledger().entries()?;
    let known: BTreeSet<String> = entries.iter().map(|e| e.config_hash.clone()).collect();
    let known_for = |cmd: &str| -> BTreeSet<String> {
        entries.iter().filter(|e| e.command == cmd).map(|e| e.config_hash.clone()).collect()
    };
    let mut rep = AuditReport::default();
    let mut orphan = |p: &Path, why: &str| rep.orphans.push((p.to_path_buf(), why.to_string()));

    let mut checked = 0;
    for p in children(&layout.checkpoints())? {
        checked += 1;
        let ext = p.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default();
        match ext.as_str() {
            "json" => {
                let meta: Option<CheckpointMeta> = std::fs::read_to_string(&p)
                    .ok()
                    .and_then(|t| serde_json::from_str(&t).ok());
                match meta {
                    None => orphan(&p, "unreadable checkpoint sidecar"),
                    Some(m) if !known.contains(&m.config_hash) => orphan(&p, "config hash not in ledger"),
                    Some(_) if !p.with_extension("weights").is_file() => orphan(&p, "weights file missing"),
                    Some(_) => {}
                }
            }
            "weights" if !p.with_extension("json").is_file() => orphan(&p, "no sidecar"),
            "weights" => {}
            _ => orphan(&p, "unexpected file"),
        }
    }
    for cmd_dir in children(&layout.runs())? {
        let hashes = known_for(&name(&cmd_dir));
        for run in children(&cmd_dir)? {
            checked += 1;
            if !hashes.contains(&name(&run)) {
                orphan(&run, "run directory not in ledger");
            }
        }
    }
    for (dir, cmd) in [(layout.explain(), "explain"), (layout.external(), "external")] {
        let hashes = known_for(cmd);
        for p in children(&dir)? {
            checked += 1;
            if !hashes.contains(&name(&p)) {
                orphan(&p, "output directory not in ledger");
            }
        }
    }
    for p in children(&layout.reports())? {
        checked += 1;
        let index: Option<ReportIndex> = std::fs::read_to_string(p.join("report_index.json"))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        match index {
            None => orphan(&p, "report without index"),
            Some(ix) if ix.sources.iter().any(|h| !known.contains(h)) => orphan(&p, "report source not in ledger"),
            Some(_) => {}
        }
    }
    rep.checked = checked;
    Ok(rep)
}
