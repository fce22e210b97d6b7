use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::record::{BinaryLabel, DiseaseLabels, FundusRecord, QualityFlag, DISEASE_NAMES};
use crate::error::{Error, Result};

/// Column order of the manifest CSV.
pub const MANIFEST_HEADER: [&str; 13] = [
    "image_path",
    "patient_id",
    "binary_label",
    "amd",
    "glaucoma",
    "glaucoma_suspect",
    "dr",
    "pm",
    "erm",
    "rvo",
    "other",
    "mask_path",
    "quality_flag",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Abnormality,
    MultiDisease,
    VesselSegmentation,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Abnormality => "abnormality",
            TaskKind::MultiDisease => "multi_disease",
            TaskKind::VesselSegmentation => "vessel_segmentation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abnormality" => Ok(TaskKind::Abnormality),
            "multi_disease" => Ok(TaskKind::MultiDisease),
            "vessel_segmentation" => Ok(TaskKind::VesselSegmentation),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Target of a foreign label column during external validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelTarget {
    /// Counts towards "abnormal" when collapsing to a binary label.
    Abnormal,
    /// Column is dropped.
    Ignore,
    /// Column feeds the named disease output.
    Disease(usize),
}

/// A set of fundus records sharing one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub task_kind: TaskKind,
    pub records: Vec<FundusRecord>,
    /// Usable-record counts per class; kept coherent with `records`.
    pub class_prevalence: BTreeMap<String, usize>,
    /// Optional explicit label mapping (`# label_map:` header directive),
    /// keyed by disease column name.
    #[serde(default)]
    pub label_map: BTreeMap<String, LabelTarget>,
    /// Directory that relative image and mask paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, task_kind: TaskKind, records: Vec<FundusRecord>) -> Result<Self> {
        let mut m = Self {
            name: name.into(),
            task_kind,
            records,
            class_prevalence: BTreeMap::new(),
            label_map: BTreeMap::new(),
            base_dir: None,
        };
        m.validate()?;
        m.recount();
        Ok(m)
    }

    pub fn usable_indices(&self) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_usable())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn usable_len(&self) -> usize {
        self.records.iter().filter(|r| r.is_usable()).count()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn compute_prevalence(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.is_usable()) {
            match self.task_kind {
                TaskKind::Abnormality => {
                    if let Some(ab) = r.is_abnormal() {
                        let key = if ab { "abnormal" } else { "normal" };
                        *counts.entry(key.to_string()).or_insert(0) += 1;
                    }
                }
                TaskKind::MultiDisease => match r.disease_labels {
                    Some(d) if d.any() => {
                        for (i, name) in DISEASE_NAMES.iter().enumerate() {
                            if d.has(i) {
                                *counts.entry(name.to_string()).or_insert(0) += 1;
                            }
                        }
                    }
                    _ => *counts.entry("normal".to_string()).or_insert(0) += 1,
                },
                TaskKind::VesselSegmentation => {
                    if r.mask_path.is_some() {
                        *counts.entry("masked".to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
        counts
    }

    pub fn recount(&mut self) {
        self.class_prevalence = self.compute_prevalence();
    }

    pub fn prevalence_is_coherent(&self) -> bool {
        self.class_prevalence == self.compute_prevalence()
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            r.validate()?;
        }
        if self.task_kind == TaskKind::VesselSegmentation {
            let missing: Vec<String> = self
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.is_usable() && r.mask_path.is_none())
                .map(|(i, r)| format!("#{i} ({})", r.image_path.display()))
                .collect();
            if !missing.is_empty() {
                return Err(Error::Validation(format!(
                    "segmentation manifest has records without mask_path: {}",
                    missing.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Binary target (abnormal = 1) for every record, honoring `label_map`
    /// when disease columns must be collapsed.
    pub fn binary_target(&self, idx: usize) -> Option<bool> {
        let r = &self.records[idx];
        if let Some(b) = r.binary_label {
            return Some(b.is_abnormal());
        }
        let d = r.disease_labels?;
        if self.label_map.is_empty() {
            return Some(d.any());
        }
        Some((0..8).any(|i| {
            d.has(i)
                && !matches!(
                    self.label_map.get(MANIFEST_HEADER[3 + i]),
                    Some(LabelTarget::Ignore)
                )
        }))
    }

    /// Multi-hot target over the 8 disease outputs, honoring `label_map`.
    pub fn disease_target(&self, idx: usize) -> Vec<f64> {
        let r = &self.records[idx];
        let d = r.disease_labels.unwrap_or_default();
        if self.label_map.is_empty() {
            return d.to_vec();
        }
        let mut out = vec![0.0; 8];
        for i in 0..8 {
            if !d.has(i) {
                continue;
            }
            match self.label_map.get(MANIFEST_HEADER[3 + i]) {
                None => out[i] = 1.0,
                Some(LabelTarget::Disease(j)) => out[*j] = 1.0,
                Some(LabelTarget::Abnormal) | Some(LabelTarget::Ignore) => {}
            }
        }
        out
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if !self.name.is_empty() {
            out.push_str(&format!("# name: {}\n", self.name));
        }
        if !self.label_map.is_empty() {
            let entries: Vec<String> = self
                .label_map
                .iter()
                .map(|(k, v)| format!("{k}={}", label_target_str(v)))
                .collect();
            out.push_str(&format!("# label_map: {}\n", entries.join(";")));
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(MANIFEST_HEADER).expect("in-memory write");
        for r in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(13);
            row.push(r.image_path.to_string_lossy().into_owned());
            row.push(r.patient_id.clone());
            row.push(match r.binary_label {
                Some(b) => (b.class_index()).to_string(),
                None => String::new(),
            });
            for i in 0..8 {
                row.push(match r.disease_labels {
                    Some(d) => (d.has(i) as u8).to_string(),
                    None => String::new(),
                });
            }
            row.push(
                r.mask_path
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            row.push(r.quality.to_string());
            w.write_record(&row).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn label_target_str(t: &LabelTarget) -> String {
    match t {
        LabelTarget::Abnormal => "abnormal".into(),
        LabelTarget::Ignore => "ignore".into(),
        LabelTarget::Disease(j) => MANIFEST_HEADER[3 + j].into(),
    }
}

fn parse_label_target(s: &str) -> Option<LabelTarget> {
    match s {
        "abnormal" => Some(LabelTarget::Abnormal),
        "ignore" => Some(LabelTarget::Ignore),
        other => MANIFEST_HEADER[3..11]
            .iter()
            .position(|c| *c == other)
            .map(LabelTarget::Disease),
    }
}

/// Parse a manifest from CSV text. `path` is only used in error messages.
pub fn parse_manifest(text: &str, path: &Path, task_kind: TaskKind) -> Result<DatasetManifest> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut label_map = BTreeMap::new();
    let mut skipped = 0usize;
    for (i, line) in text.lines().enumerate() {
        let Some(directive) = line.strip_prefix('#') else {
            break;
        };
        skipped = i + 1;
        let directive = directive.trim();
        if let Some(v) = directive.strip_prefix("name:") {
            name = v.trim().to_string();
        } else if let Some(v) = directive.strip_prefix("label_map:") {
            for entry in v.split(';').map(str::trim).filter(|e| !e.is_empty()) {
                let (k, t) = entry
                    .split_once('=')
                    .ok_or_else(|| perr(i + 1, format!("bad label_map entry `{entry}`")))?;
                let k = k.trim();
                if !MANIFEST_HEADER[3..11].contains(&k) {
                    return Err(perr(i + 1, format!("label_map names unknown column `{k}`")));
                }
                let t = parse_label_target(t.trim())
                    .ok_or_else(|| perr(i + 1, format!("bad label_map target in `{entry}`")))?;
                label_map.insert(k.to_string(), t);
            }
        }
    }

    let body: String = text.lines().skip(skipped).collect::<Vec<_>>().join("\n");
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header_line = skipped + 1;
    let header = reader
        .headers()
        .map_err(|e| perr(header_line, e.to_string()))?
        .clone();
    let header: Vec<&str> = header.iter().collect();
    if header != MANIFEST_HEADER {
        return Err(perr(
            header_line,
            format!("expected header `{}`", MANIFEST_HEADER.join(",")),
        ));
    }

    let mut records = Vec::new();
    for (row_idx, row) in reader.records().enumerate() {
        let line = header_line + 1 + row_idx;
        let row = row.map_err(|e| perr(line, e.to_string()))?;
        if row.len() != MANIFEST_HEADER.len() {
            return Err(perr(line, format!("expected 13 fields, found {}", row.len())));
        }
        let bit = |col: usize| -> Result<Option<bool>> {
            match row[col].trim() {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                v => Err(perr(
                    line,
                    format!("column `{}` must be 0, 1 or empty, got `{v}`", MANIFEST_HEADER[col]),
                )),
            }
        };
        let image_path = row[0].trim();
        if image_path.is_empty() {
            return Err(perr(line, "empty image_path".into()));
        }
        let patient_id = row[1].trim();
        if patient_id.is_empty() {
            return Err(perr(line, "empty patient_id".into()));
        }
        let binary_label = bit(2)?.map(BinaryLabel::from_bit);
        let disease_bits: Vec<Option<bool>> = (3..11).map(bit).collect::<Result<_>>()?;
        let disease_labels = if disease_bits.iter().all(Option::is_none) {
            None
        } else if disease_bits.iter().all(Option::is_some) {
            let bits: Vec<bool> = disease_bits.iter().map(|b| b.unwrap()).collect();
            Some(DiseaseLabels::from_bits(&bits))
        } else {
            return Err(perr(line, "disease columns must be all filled or all empty".into()));
        };
        let mask = row[11].trim();
        let quality = match row[12].trim() {
            "" | "ok" => QualityFlag::Ok,
            "excluded" => QualityFlag::Excluded,
            v => return Err(perr(line, format!("unknown quality_flag `{v}`"))),
        };
        let record = FundusRecord {
            image_path: PathBuf::from(image_path),
            patient_id: patient_id.to_string(),
            binary_label,
            disease_labels,
            mask_path: (!mask.is_empty()).then(|| PathBuf::from(mask)),
            quality,
        };
        record.validate().map_err(|e| perr(line, e.to_string()))?;
        records.push(record);
    }

    let mut manifest = DatasetManifest::new(name, task_kind, records)?;
    manifest.label_map = label_map;
    Ok(manifest)
}

/// Read a manifest CSV; relative paths resolve against the file's directory.
pub fn load_manifest(path: &Path, task_kind: TaskKind) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m = parse_manifest(&text, path, task_kind)?;
    m.base_dir = path.parent().map(Path::to_path_buf);
    Ok(m)
}
