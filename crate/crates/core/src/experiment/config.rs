use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Grouping, TaskKind};
use crate::error::{Error, Result};
use crate::explain::TsneConfig;
use crate::metrics::ThresholdMode;
use crate::model::{BackboneConfig, Regime};
use crate::preprocess::PreprocessConfig;
use crate::train::{Protocol, TrainSpec};
use crate::util::{canonical_json, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackboneSize {
    #[default]
    Resnet50,
    Tiny,
}

impl BackboneSize {
    pub fn config(self) -> BackboneConfig {
        match self {
            BackboneSize::Resnet50 => BackboneConfig::resnet50(),
            BackboneSize::Tiny => BackboneConfig::tiny(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    pub manifest: PathBuf,
    /// Checkpoints to evaluate; defaults to the fold checkpoints of this
    /// config's downstream run.
    #[serde(default)]
    pub checkpoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Checkpoint to explain; defaults to fold 0 of this config's run.
    pub checkpoint: Option<String>,
    pub max_images: usize,
    /// Source stage for Grad-CAM (4 = last residual stage).
    pub stage: usize,
    pub target_class: usize,
    pub tsne: TsneConfig,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            max_images: 8,
            stage: 4,
            target_class: 1,
            tsne: TsneConfig::default(),
        }
    }
}

/// One experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub task: TaskKind,
    pub regime: Regime,
    pub resolution: u32,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    #[serde(default = "one")]
    pub fraction: f64,
    #[serde(default = "five")]
    pub n_folds: usize,
    #[serde(default)]
    pub seed: u64,
    pub manifest: PathBuf,
    #[serde(default)]
    pub grouping: Grouping,
    #[serde(default)]
    pub backbone: BackboneSize,
    #[serde(default)]
    pub upstream_checkpoint: Option<String>,
    #[serde(default)]
    pub spec: Option<TrainSpec>,
    #[serde(default)]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default)]
    pub threshold_mode: ThresholdMode,
    /// Overrides naming the reference cell for DeLong comparisons.
    #[serde(default)]
    pub reference: Option<toml::Table>,
    #[serde(default)]
    pub external: Option<ExternalConfig>,
    #[serde(default)]
    pub explain: ExplainConfig,
    #[serde(default)]
    pub deterministic: bool,
    /// Not part of the config hash.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_protocol() -> Protocol {
    Protocol::LinearProbe
}
fn one() -> f64 {
    1.0
}
fn five() -> usize {
    5
}

impl ExperimentConfig {
    /// Training spec with loss and monitor matched to the task.
    pub fn train_spec(&self) -> TrainSpec {
        let mut s = self.spec.clone().unwrap_or_else(|| {
            TrainSpec::for_head(crate::model::head_kind_for(self.task), self.protocol)
        });
        s.protocol = self.protocol;
        s
    }

    pub fn preprocess_config(&self) -> PreprocessConfig {
        let mut p = self.preprocess.clone().unwrap_or_else(|| PreprocessConfig::new(self.resolution));
        p.resolution = self.resolution;
        if !crate::preprocess::STANDARD_RESOLUTIONS.contains(&self.resolution) {
            p.allow_custom_resolution = true;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if self.n_folds < 3 {
            return bad(format!("n_folds must be >= 3, got {}", self.n_folds));
        }
        let spec = self.train_spec();
        spec.validate()?;
        spec.check_head(crate::model::head_kind_for(self.task))?;
        if self.task == TaskKind::VesselSegmentation && self.protocol == Protocol::LinearProbe {
            return bad("protocol: linear_probe is not defined for vessel_segmentation".into());
        }
        self.preprocess_config()
            .validate()
            .map_err(|e| Error::Config(format!("preprocess: {e}")))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of the training cell: every field
    /// except `output_dir` and the evaluation-only `external` and `explain`
    /// sections.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
            m.remove("external");
            m.remove("explain");
        }
        sha256_hex(canonical_json(&v).as_bytes())
    }

    /// Hash of the training cell combined with one evaluation section.
    pub fn section_hash(&self, section: &str) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let sec = v.get(section).cloned().unwrap_or(serde_json::Value::Null);
        let both = serde_json::json!({ "cell": self.config_hash(), section: sec });
        sha256_hex(canonical_json(&both).as_bytes())
    }

    pub fn short_hash(&self) -> String {
        self.config_hash()[..12].to_string()
    }

    /// Human-readable cell label, e.g. `fundus/linear_probe r64 f0.01`.
    pub fn label(&self) -> String {
        format!(
            "{}/{} r{} f{}",
            self.regime,
            serde_json::to_value(self.protocol).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            self.resolution,
            self.fraction
        )
    }

    /// The reference cell: this config with `reference` overrides applied.
    /// The `reference` table itself is kept, so a grid cell that matches the
    /// overrides is its own reference.
    pub fn reference_config(&self) -> Result<Option<ExperimentConfig>> {
        let Some(over) = &self.reference else { return Ok(None) };
        let mut table = to_table(self)?;
        for (k, v) in over {
            table.insert(k.clone(), v.clone());
        }
        Ok(Some(from_table(table, "reference")?))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        if let Some(e) = &mut self.external {
            fix(&mut e.manifest);
        }
    }
}

fn to_table(cfg: &ExperimentConfig) -> Result<toml::Table> {
    toml::Table::try_from(cfg).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A partial `[spec]` table overrides the defaults of the task's head, so
/// loss and monitor stay matched unless given explicitly.
fn complete_spec(table: &mut toml::Table, what: &str) -> Result<()> {
    let Some(toml::Value::Table(user)) = table.get("spec") else { return Ok(()) };
    let Some(task) = table.get("task").and_then(|t| t.as_str()) else { return Ok(()) };
    let task: TaskKind = task.parse().map_err(|e: Error| Error::Config(format!("{what}: {e}")))?;
    let defaults = TrainSpec::for_head(crate::model::head_kind_for(task), Protocol::FullTrain);
    let mut full = toml::Table::try_from(&defaults).map_err(|e| Error::Config(format!("cannot encode spec: {e}")))?;
    merge(&mut full, user.clone());
    table.insert("spec".into(), toml::Value::Table(full));
    Ok(())
}

fn from_table(mut table: toml::Table, what: &str) -> Result<ExperimentConfig> {
    complete_spec(&mut table, what)?;
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{what}: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse a config file and expand its `[grid]` table into cells. Each grid
/// key lists values for the top-level field of the same name; cells are the
/// Cartesian product in key order.
pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<ExperimentConfig>> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", origin.display(), e)))?;
    let grid = match table.remove("grid") {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t,
        Some(_) => return Err(Error::Config("grid must be a table".into())),
    };
    let mut cells = vec![table];
    for (key, values) in grid {
        let values = match values {
            toml::Value::Array(a) if !a.is_empty() => a,
            _ => return Err(Error::Config(format!("grid.{key} must be a non-empty array"))),
        };
        cells = cells
            .into_iter()
            .flat_map(|t| {
                let key = &key;
                values.iter().map(move |v| {
                    let mut t = t.clone();
                    t.insert(key.clone(), v.clone());
                    t
                })
            })
            .collect();
    }
    let base = origin.parent().unwrap_or(Path::new("."));
    cells
        .into_iter()
        .map(|t| {
            let mut c = from_table(t, &origin.display().to_string())?;
            c.resolve_paths(base);
            Ok(c)
        })
        .collect()
}

pub fn load_config(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
task = "abnormality"
regime = "fundus"
resolution = 64
manifest = "m.csv"
seed = 3
"#;

    #[test]
    fn partial_spec_keeps_head_loss() {
        let text = BASE.replace("abnormality", "multi_disease") + "[spec]\nmax_epochs = 2\n";
        let spec = parse_config(&text, Path::new("c.toml")).unwrap()[0].train_spec();
        assert_eq!(spec.max_epochs, 2);
        assert_eq!(spec.loss, crate::train::LossKind::PerLabelCrossEntropy);
    }

    #[test]
    fn grid_expands_product() {
        let text = format!("{BASE}\n[grid]\nregime = [\"scratch\", \"fundus\"]\nfraction = [0.01, 0.1, 1.0]\n");
        let cells = parse_config(&text, Path::new("x/c.toml")).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].manifest, Path::new("x/m.csv"));
        let hashes: std::collections::BTreeSet<_> = cells.iter().map(|c| c.config_hash()).collect();
        assert_eq!(hashes.len(), 6);
    }

    #[test]
    fn hash_ignores_field_order_and_output_dir() {
        let a = parse_config(BASE, Path::new("c.toml")).unwrap().remove(0);
        let permuted = "seed = 3\nmanifest = \"m.csv\"\nresolution = 64\nregime = \"fundus\"\ntask = \"abnormality\"\noutput_dir = \"elsewhere\"\n";
        let b = parse_config(permuted, Path::new("c.toml")).unwrap().remove(0);
        assert_eq!(a.config_hash(), b.config_hash());
        let c = parse_config(&BASE.replace("seed = 3", "seed = 4"), Path::new("c.toml")).unwrap().remove(0);
        assert_ne!(a.config_hash(), c.config_hash());
        let d = parse_config(&format!("{BASE}\n[explain]\nmax_images = 2\n"), Path::new("c.toml")).unwrap().remove(0);
        assert_eq!(a.config_hash(), d.config_hash());
        assert_ne!(a.section_hash("explain"), d.section_hash("explain"));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = parse_config(&format!("{BASE}\nfraction = 2.0\n"), Path::new("c.toml")).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("fraction")), "{e}");
        let e = parse_config(&format!("{BASE}\nbogus = 1\n"), Path::new("c.toml")).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("bogus")), "{e}");
        let e = parse_config(&format!("{BASE}\n[spec]\nlearning_rate = -1.0\n"), Path::new("c.toml")).unwrap_err();
        assert!(matches!(&e, Error::Config(m) if m.contains("spec.learning_rate")), "{e}");
    }

    #[test]
    fn reference_applies_overrides() {
        let text = format!("{BASE}\n[reference]\nregime = \"general_fundus\"\n");
        let c = parse_config(&text, Path::new("c.toml")).unwrap().remove(0);
        let r = c.reference_config().unwrap().unwrap();
        assert_eq!(r.regime, Regime::GeneralFundus);
        assert_eq!(r.seed, c.seed);
        assert_eq!(r.reference_config().unwrap().unwrap().config_hash(), r.config_hash());
    }
}
