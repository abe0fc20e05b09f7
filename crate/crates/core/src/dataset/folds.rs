use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Annotation, SpeechSample};
use crate::error::{Error, Result};

const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
}

/// Where a fold's validation samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationPolicy {
    /// Carve `val_fraction` of each class out of the non-test samples.
    InnerSplit { val_fraction: f64 },
    /// All non-test samples train; the held-out fold doubles as validation.
    HeldOutFold,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy::InnerSplit { val_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub version: u32,
    pub k: usize,
    pub seed: u64,
    pub validation: ValidationPolicy,
    /// sample_id -> test fold
    pub assignments: BTreeMap<String, usize>,
    /// Per fold, the non-test samples and their split.
    pub train_val_split: Vec<BTreeMap<String, Split>>,
}

fn stream(seed: u64, class: &str, fold: Option<usize>) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(class.as_bytes());
    if let Some(f) = fold {
        h.update((f as u64).to_le_bytes());
    }
    let digest = h.finalize();
    ChaCha8Rng::from_seed(digest.into())
}

/// Class-stratified k-fold plan with the default 80/20 inner split.
pub fn build_folds(samples: &[SpeechSample], k: usize, seed: u64) -> Result<FoldPlan> {
    build_folds_with(samples, k, seed, ValidationPolicy::default())
}

/// Samples are grouped by their agreed label. Within a class, ids are sorted,
/// shuffled by a seeded stream, and dealt round-robin into folds, so test-fold
/// sizes differ by at most one.
pub fn build_folds_with(
    samples: &[SpeechSample],
    k: usize,
    seed: u64,
    validation: ValidationPolicy,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Parameter(format!("k must be at least 2, got {k}")));
    }
    if let ValidationPolicy::InnerSplit { val_fraction } = validation {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Parameter(format!(
                "val_fraction {val_fraction} outside [0, 1)"
            )));
        }
    }
    let mut by_class: BTreeMap<Annotation, Vec<&str>> = BTreeMap::new();
    for s in samples {
        let label = s.agreed_label().ok_or_else(|| {
            Error::Precondition(format!(
                "sample {} has disagreeing annotations; run the consistency filter first",
                s.sample_id
            ))
        })?;
        by_class.entry(label).or_default().push(&s.sample_id);
    }
    for (class, ids) in &by_class {
        if ids.len() < k {
            return Err(Error::InfeasibleStratification(format!(
                "class {class} has {} samples, fewer than k = {k}",
                ids.len()
            )));
        }
    }

    let mut assignments = BTreeMap::new();
    let mut class_folds: Vec<(String, Vec<Vec<&str>>)> = Vec::new();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!("duplicate sample_id in class {class}")));
        }
        let name = class.to_string();
        ids.shuffle(&mut stream(seed, &name, None));
        let mut folds = vec![Vec::new(); k];
        for (i, id) in ids.into_iter().enumerate() {
            folds[i % k].push(id);
            assignments.insert(id.to_string(), i % k);
        }
        class_folds.push((name, folds));
    }

    let mut train_val_split = vec![BTreeMap::new(); k];
    for (fold, split) in train_val_split.iter_mut().enumerate() {
        for (name, folds) in &class_folds {
            let mut rest: Vec<&str> = folds
                .iter()
                .enumerate()
                .filter(|&(f, _)| f != fold)
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect();
            rest.sort_unstable();
            let n_val = match validation {
                ValidationPolicy::InnerSplit { val_fraction } => {
                    (rest.len() as f64 * val_fraction).round() as usize
                }
                ValidationPolicy::HeldOutFold => 0,
            };
            rest.shuffle(&mut stream(seed, name, Some(fold)));
            for (i, id) in rest.into_iter().enumerate() {
                let s = if i < n_val { Split::Val } else { Split::Train };
                split.insert(id.to_string(), s);
            }
        }
    }

    Ok(FoldPlan {
        version: PLAN_VERSION,
        k,
        seed,
        validation,
        assignments,
        train_val_split,
    })
}

impl FoldPlan {
    fn check_fold(&self, fold: usize) -> Result<()> {
        if fold >= self.k {
            return Err(Error::Parameter(format!("fold {fold} outside [0, {})", self.k)));
        }
        Ok(())
    }

    /// Held-out test ids of `fold`, sorted.
    pub fn test_ids(&self, fold: usize) -> Result<Vec<&str>> {
        self.check_fold(fold)?;
        Ok(self
            .assignments
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    pub fn train_ids(&self, fold: usize) -> Result<Vec<&str>> {
        self.check_fold(fold)?;
        Ok(self.train_val_split[fold]
            .iter()
            .filter(|&(_, &s)| s == Split::Train)
            .map(|(id, _)| id.as_str())
            .collect())
    }

    /// Validation ids; under [`ValidationPolicy::HeldOutFold`] these are the test ids.
    pub fn val_ids(&self, fold: usize) -> Result<Vec<&str>> {
        self.check_fold(fold)?;
        match self.validation {
            ValidationPolicy::HeldOutFold => self.test_ids(fold),
            ValidationPolicy::InnerSplit { .. } => Ok(self.train_val_split[fold]
                .iter()
                .filter(|&(_, &s)| s == Split::Val)
                .map(|(id, _)| id.as_str())
                .collect()),
        }
    }

    /// Checks that every fold covers each sample exactly once as test or
    /// train/val.
    pub fn validate(&self) -> Result<()> {
        if self.version != PLAN_VERSION {
            return Err(Error::Validation(format!(
                "fold plan version {} not supported",
                self.version
            )));
        }
        if self.train_val_split.len() != self.k {
            return Err(Error::Validation(format!(
                "plan has {} split maps for k = {}",
                self.train_val_split.len(),
                self.k
            )));
        }
        for (fold, split) in self.train_val_split.iter().enumerate() {
            for (id, &f) in &self.assignments {
                if f >= self.k {
                    return Err(Error::Validation(format!("{id} assigned to fold {f}")));
                }
                if (f == fold) == split.contains_key(id) {
                    return Err(Error::Validation(format!(
                        "{id} is not exactly one of test/non-test in fold {fold}"
                    )));
                }
            }
            if split.len() + self.test_ids(fold)?.len() != self.assignments.len() {
                return Err(Error::Validation(format!("fold {fold} split has unknown ids")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: FoldPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Balanced inverse-frequency weights `N / (K * n_c)`.
pub fn compute_class_weights<K: Ord + Clone + std::fmt::Debug>(
    counts: &BTreeMap<K, usize>,
) -> Result<BTreeMap<K, f64>> {
    if counts.is_empty() {
        return Err(Error::DegenerateInput("no classes to weight".into()));
    }
    if let Some((c, _)) = counts.iter().find(|(_, &n)| n == 0) {
        return Err(Error::DegenerateInput(format!("class {c:?} has zero samples")));
    }
    let total: usize = counts.values().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|(c, &n)| (c.clone(), total as f64 / (k * n as f64)))
        .collect())
}

/// Per-class loss multipliers indexed by class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
        }
    }

    /// Inverse-frequency weights from per-class counts in index order.
    pub fn balanced(counts: &[usize]) -> Result<Self> {
        let map: BTreeMap<usize, usize> = counts.iter().copied().enumerate().collect();
        Ok(Self {
            weights: compute_class_weights(&map)?.into_values().collect(),
        })
    }

    /// Like [`ClassWeights::balanced`] over the classes that occur; absent
    /// classes get weight 0 since no sample of theirs is ever weighted.
    pub fn balanced_present(counts: &[usize]) -> Result<Self> {
        let map: BTreeMap<usize, usize> = counts
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, n)| n > 0)
            .collect();
        let w = compute_class_weights(&map)?;
        Ok(Self {
            weights: (0..counts.len())
                .map(|c| w.get(&c).copied().unwrap_or(0.0))
                .collect(),
        })
    }

    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }
}
