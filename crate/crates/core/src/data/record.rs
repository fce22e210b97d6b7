use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disease categories of the multi-label head, in output order.
pub const DISEASE_NAMES: [&str; 8] = [
    "AMD",
    "Glaucoma",
    "GlaucomaSuspect",
    "DR",
    "PM",
    "ERM",
    "RVO",
    "Other",
];

/// Number of disease categories that are reported (the trailing `Other`
/// category is trained but not reported).
pub const REPORTED_DISEASES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Normal,
    Abnormal,
}

impl BinaryLabel {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            BinaryLabel::Abnormal
        } else {
            BinaryLabel::Normal
        }
    }

    pub fn is_abnormal(self) -> bool {
        self == BinaryLabel::Abnormal
    }

    pub fn class_index(self) -> usize {
        self as usize
    }
}

/// Multi-hot vector over [`DISEASE_NAMES`]; bit `i` set means disease `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DiseaseLabels(pub u8);

impl DiseaseLabels {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = 0u8;
        for (i, &b) in bits.iter().enumerate().take(8) {
            if b {
                v |= 1 << i;
            }
        }
        DiseaseLabels(v)
    }

    pub fn has(self, i: usize) -> bool {
        self.0 & (1 << i) != 0
    }

    pub fn any(self) -> bool {
        self.0 != 0
    }

    pub fn to_vec(self) -> Vec<f64> {
        (0..8).map(|i| if self.has(i) { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    #[default]
    Ok,
    Excluded,
}

impl fmt::Display for QualityFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QualityFlag::Ok => f.write_str("ok"),
            QualityFlag::Excluded => f.write_str("excluded"),
        }
    }
}

/// One fundus image with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundusRecord {
    pub image_path: PathBuf,
    pub patient_id: String,
    pub binary_label: Option<BinaryLabel>,
    pub disease_labels: Option<DiseaseLabels>,
    pub mask_path: Option<PathBuf>,
    pub quality: QualityFlag,
}

impl FundusRecord {
    pub fn new(image_path: impl Into<PathBuf>, patient_id: impl Into<String>) -> Self {
        Self {
            image_path: image_path.into(),
            patient_id: patient_id.into(),
            binary_label: None,
            disease_labels: None,
            mask_path: None,
            quality: QualityFlag::Ok,
        }
    }

    pub fn with_binary(mut self, label: BinaryLabel) -> Self {
        self.binary_label = Some(label);
        self
    }

    pub fn with_diseases(mut self, labels: DiseaseLabels) -> Self {
        self.disease_labels = Some(labels);
        self
    }

    pub fn with_mask(mut self, mask: impl Into<PathBuf>) -> Self {
        self.mask_path = Some(mask.into());
        self
    }

    pub fn excluded(mut self) -> Self {
        self.quality = QualityFlag::Excluded;
        self
    }

    pub fn is_usable(&self) -> bool {
        self.quality == QualityFlag::Ok
    }

    /// Whether the image shows any abnormality. Disease labels collapse to
    /// "any class present" when no binary label is given.
    pub fn is_abnormal(&self) -> Option<bool> {
        match (self.binary_label, self.disease_labels) {
            (Some(b), _) => Some(b.is_abnormal()),
            (None, Some(d)) => Some(d.any()),
            (None, None) => None,
        }
    }

    /// Stratification key used by splits and the fraction sampler.
    pub fn stratum(&self) -> bool {
        self.is_abnormal().unwrap_or(false)
    }

    pub fn validate(&self) -> Result<()> {
        if self.binary_label.is_none() && self.disease_labels.is_none() && self.mask_path.is_none() {
            return Err(Error::Validation(format!(
                "record {} has neither labels nor a mask",
                self.image_path.display()
            )));
        }
        if self.disease_labels.is_some() && self.binary_label == Some(BinaryLabel::Normal) {
            return Err(Error::Validation(format!(
                "record {} has disease labels but is marked normal",
                self.image_path.display()
            )));
        }
        Ok(())
    }
}
