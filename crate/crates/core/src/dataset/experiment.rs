use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Annotation, BinaryLabel, ErrorCategory, SpeechSample};
use crate::error::{Error, Result};
use crate::features::FeaturePreset;

/// The three experiment families: phrase-level four-way error typing, per
/// category character-level correct/incorrect, and character-level four-way
/// error typing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    E1,
    E2(ErrorCategory),
    E3,
}

impl Experiment {
    pub fn preset(self) -> FeaturePreset {
        match self {
            Experiment::E1 => FeaturePreset::Phrase,
            Experiment::E2(_) | Experiment::E3 => FeaturePreset::Character,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            Experiment::E2(_) => 2,
            _ => 4,
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            Experiment::E2(_) => vec!["incorrect".into(), "correct".into()],
            _ => ErrorCategory::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(self, Experiment::E2(_))
    }

    /// Class index of a sample under this experiment, or `None` when the
    /// sample does not belong to the experiment's population.
    pub fn label_of(self, sample: &SpeechSample, inventories: &Inventories) -> Option<usize> {
        let label = sample.agreed_label()?;
        match (self, label) {
            (Experiment::E1, Annotation::Error(c)) if !sample.is_character() => Some(c.index()),
            (Experiment::E3, Annotation::Error(c)) if sample.is_character() => Some(c.index()),
            (Experiment::E2(cat), l) if sample.is_character() => {
                if !inventories.contains(cat, sample) {
                    return None;
                }
                match l {
                    Annotation::Error(c) if c == cat => Some(BinaryLabel::Incorrect.index()),
                    Annotation::Correct => Some(BinaryLabel::Correct.index()),
                    Annotation::Error(_) => None,
                }
            }
            _ => None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Experiment::E1 => f.write_str("e1"),
            Experiment::E2(c) => write!(f, "e2-{c}"),
            Experiment::E3 => f.write_str("e3"),
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    /// Accepts `e1`, `e3`, and `e2-<category>` (also `e2:` or `e2/`).
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "e1" => Ok(Experiment::E1),
            "e3" => Ok(Experiment::E3),
            other => other
                .strip_prefix("e2")
                .and_then(|rest| rest.strip_prefix(['-', ':', '/']))
                .ok_or_else(|| {
                    Error::Validation(format!("experiment {s:?} is not e1, e2-<category> or e3"))
                })?
                .parse()
                .map(Experiment::E2),
        }
    }
}

/// For each error category, the `(phrase_id, char_index)` positions where
/// that error was observed. The binary experiment for a category compares
/// incorrect and correct productions at those positions only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Inventories(BTreeMap<ErrorCategory, BTreeSet<(String, u32)>>);

impl Inventories {
    pub fn contains(&self, cat: ErrorCategory, sample: &SpeechSample) -> bool {
        sample.char_index.is_some_and(|ci| {
            self.0
                .get(&cat)
                .is_some_and(|set| set.contains(&(sample.phrase_id.clone(), ci)))
        })
    }

    pub fn positions(&self, cat: ErrorCategory) -> usize {
        self.0.get(&cat).map_or(0, BTreeSet::len)
    }
}

pub fn character_inventories(samples: &[SpeechSample]) -> Inventories {
    let mut inv: BTreeMap<ErrorCategory, BTreeSet<(String, u32)>> = BTreeMap::new();
    for s in samples {
        if let (Some(Annotation::Error(c)), Some(ci)) = (s.agreed_label(), s.char_index) {
            inv.entry(c).or_default().insert((s.phrase_id.clone(), ci));
        }
    }
    Inventories(inv)
}

/// Samples of the experiment's population with their class index, in input
/// order. Disagreeing samples are skipped.
pub fn select_samples(samples: &[SpeechSample], experiment: Experiment) -> Vec<(SpeechSample, usize)> {
    let inv = character_inventories(samples);
    samples
        .iter()
        .filter_map(|s| experiment.label_of(s, &inv).map(|l| (s.clone(), l)))
        .collect()
}
