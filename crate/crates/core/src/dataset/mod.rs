//! Corpus metadata, label agreement, fold construction and experiment
//! materialization.

mod experiment;
mod folds;
mod manifest;
mod materialize;
pub mod phrases;
pub mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use experiment::{character_inventories, select_samples, Experiment, Inventories};
pub use folds::{
    build_folds, build_folds_with, compute_class_weights, ClassWeights, FoldPlan, Split,
    ValidationPolicy,
};
pub use manifest::{parse_manifest, read_manifest, write_manifest, Demographics, MANIFEST_HEADER};
pub use materialize::{
    partition_fold, ClipSource, FileSource, FoldPartition, LabeledMap, MaterializedFold,
    Materializer, SegmentCounts,
};

use crate::error::{Error, Result};

/// Longest admissible recording.
pub const MAX_DURATION_S: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorCategory {
    Stopping,
    Backing,
    Fcdp,
    Affrication,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::Stopping,
        ErrorCategory::Backing,
        ErrorCategory::Fcdp,
        ErrorCategory::Affrication,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Stopping => "stopping",
            ErrorCategory::Backing => "backing",
            ErrorCategory::Fcdp => "fcdp",
            ErrorCategory::Affrication => "affrication",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Validation(format!("unknown error category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Incorrect,
    Correct,
}

impl BinaryLabel {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// One clinician's judgement of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Annotation {
    Error(ErrorCategory),
    Correct,
}

impl From<Annotation> for String {
    fn from(a: Annotation) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Annotation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Annotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Annotation::Error(c) => c.fmt(f),
            Annotation::Correct => f.write_str("correct"),
        }
    }
}

impl FromStr for Annotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("correct") {
            return Ok(Annotation::Correct);
        }
        s.parse().map(Annotation::Error).map_err(|_| {
            Error::Validation(format!(
                "label {s:?} not in {{stopping, backing, fcdp, affrication, correct}}"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Sex::F),
            "M" | "m" => Ok(Sex::M),
            other => Err(Error::Validation(format!("sex {other:?} is not F or M"))),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

/// One recording and its two clinician labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSample {
    pub sample_id: String,
    pub subject_id: String,
    pub subject_age: u32,
    pub subject_sex: Sex,
    pub phrase_id: String,
    /// Position of the cut character within its phrase; `None` for whole phrases.
    pub char_index: Option<u32>,
    pub audio_path: PathBuf,
    pub annotations: [Annotation; 2],
    pub duration_s: f64,
}

impl SpeechSample {
    /// The label both annotators agree on, if they do.
    pub fn agreed_label(&self) -> Option<Annotation> {
        let [a, b] = self.annotations;
        (a == b).then_some(a)
    }

    pub fn is_character(&self) -> bool {
        self.char_index.is_some()
    }
}

/// Keeps exactly the samples whose two annotations agree.
pub fn consistency_filter(samples: Vec<SpeechSample>) -> Vec<SpeechSample> {
    samples
        .into_iter()
        .filter(|s| s.agreed_label().is_some())
        .collect()
}

#[cfg(test)]
pub(crate) fn test_sample(id: &str, label: Annotation, char_index: Option<u32>) -> SpeechSample {
    SpeechSample {
        sample_id: id.to_string(),
        subject_id: "S001".into(),
        subject_age: 4,
        subject_sex: Sex::F,
        phrase_id: "P01".into(),
        char_index,
        audio_path: PathBuf::from(format!("{id}.wav")),
        annotations: [label, label],
        duration_s: 1.0,
    }
}
