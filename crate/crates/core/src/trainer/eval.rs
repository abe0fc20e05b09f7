use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_fold, TrainConfig};
use crate::dataset::{FoldPlan, LabeledMap, Materializer};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nnet::{Checkpoint, SmallCnn};

pub const EVAL_REPORT_VERSION: u32 = 1;

/// Anything that maps a feature map to class probabilities.
pub trait Classifier {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, map: &FeatureMap) -> Result<Vec<f64>>;
}

impl Classifier for SmallCnn<f32> {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn probabilities(&self, map: &FeatureMap) -> Result<Vec<f64>> {
        let values = map.values.as_standard_layout();
        let x = self.prepare_input(values.as_slice().expect("standard layout is contiguous"))?;
        Ok(self.predict(&x)?.into_iter().map(f64::from).collect())
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Square count matrix; rows are predicted classes, columns target classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("confusion matrix must be square and nonempty".into()));
        }
        Ok(Self { counts: rows })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, predicted: usize, target: usize) -> u64 {
        self.counts[predicted][target]
    }

    pub fn record(&mut self, predicted: usize, target: usize) {
        self.counts[predicted][target] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Trace over total; NaN for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    /// Number of test items whose target is each class.
    pub fn target_counts(&self) -> Vec<u64> {
        (0..self.classes())
            .map(|t| self.counts.iter().map(|r| r[t]).sum())
            .collect()
    }

    /// Fraction of `class` targets predicted as `class`; `None` if absent.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.target_counts()[class];
        (n > 0).then(|| self.counts[class][class] as f64 / n as f64)
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut s = String::from("predicted\\target");
        for (i, _) in self.counts.iter().enumerate() {
            s.push(',');
            s.push_str(class_names.get(i).map_or("?", String::as_str));
        }
        s.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            s.push_str(class_names.get(i).map_or("?", String::as_str));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
}

/// Scores `test` by argmax prediction.
pub fn evaluate<C: Classifier + ?Sized>(clf: &C, test: &[LabeledMap]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::DegenerateInput("empty test set".into()));
    }
    let k = clf.num_classes();
    let mut cm = ConfusionMatrix::new(k);
    for m in test {
        if m.label >= k {
            return Err(Error::Shape(format!(
                "{} has label {} but the classifier has {k} classes",
                m.sample_id, m.label
            )));
        }
        let p = clf.probabilities(&m.map)?;
        cm.record(argmax(&p), m.label);
    }
    Ok(Evaluation {
        accuracy: cm.accuracy(),
        confusion: cm,
    })
}

/// Box-plot statistics of fold accuracies; quartiles interpolate linearly
/// between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl AccuracySummary {
    pub fn from_accuracies(acc: &[f64]) -> Result<Self> {
        if acc.is_empty() {
            return Err(Error::DegenerateInput("no fold accuracies to summarize".into()));
        }
        if acc.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite fold accuracy".into()));
        }
        let mut v = acc.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Ok(Self {
            mean: acc.iter().sum::<f64>() / acc.len() as f64,
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// A fraction as a percentage with one decimal, e.g. `0.6988 -> "69.9"`.
pub fn percent_1dp(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 0-based fold index.
    pub fold: usize,
    pub confusion_matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
}

impl FoldResult {
    /// A result carrying only a confusion matrix, as for externally scored folds.
    pub fn from_confusion(fold: usize, confusion_matrix: ConfusionMatrix) -> Self {
        Self {
            fold,
            accuracy: confusion_matrix.accuracy(),
            confusion_matrix,
            best_epoch: 0,
            train_loss_curve: Vec::new(),
            val_loss_curve: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub experiment: String,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    pub per_fold: Vec<FoldResult>,
    pub summary: AccuracySummary,
}

impl EvalReport {
    pub fn new(config: TrainConfig, per_fold: Vec<FoldResult>) -> Result<Self> {
        let acc: Vec<f64> = per_fold.iter().map(|f| f.accuracy).collect();
        Ok(Self {
            version: EVAL_REPORT_VERSION,
            experiment: config.experiment.to_string(),
            class_names: config.experiment.class_names(),
            summary: AccuracySummary::from_accuracies(&acc)?,
            config,
            per_fold,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.version != EVAL_REPORT_VERSION {
            return Err(Error::Serialization(format!("unsupported report version {}", r.version)));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Human-readable per-fold table with the summary row, accuracies in percent.
    pub fn table(&self) -> String {
        let mut s = format!("experiment {}\n", self.experiment);
        let _ = writeln!(s, "{:<8}{:>8}{:>10}{:>12}", "fold", "test", "acc %", "best epoch");
        for f in &self.per_fold {
            let _ = writeln!(
                s,
                "{:<8}{:>8}{:>10}{:>12}",
                f.fold + 1,
                f.confusion_matrix.total(),
                percent_1dp(f.accuracy),
                f.best_epoch
            );
        }
        let m = &self.summary;
        let _ = writeln!(
            s,
            "mean {}  min {}  q1 {}  median {}  q3 {}  max {}",
            percent_1dp(m.mean),
            percent_1dp(m.min),
            percent_1dp(m.q1),
            percent_1dp(m.median),
            percent_1dp(m.q3),
            percent_1dp(m.max)
        );
        s
    }

    pub fn confusion_csv(&self, fold_index: usize) -> Option<String> {
        self.per_fold
            .get(fold_index)
            .map(|f| f.confusion_matrix.to_csv(&self.class_names))
    }
}

#[derive(Debug, Clone)]
pub struct CrossValidation {
    pub report: EvalReport,
    /// Best checkpoint of each fold, in fold order.
    pub checkpoints: Vec<Checkpoint>,
}

/// Runs `run_fold` for folds `0..k` on a pool of `jobs` workers and
/// assembles the report in fold order.
pub fn cross_validate_with<F>(k: usize, cfg: &TrainConfig, jobs: usize, run_fold: F) -> Result<CrossValidation>
where
    F: Fn(usize) -> Result<(FoldResult, Option<Checkpoint>)> + Sync,
{
    if k == 0 {
        return Err(Error::Parameter("cross-validation needs at least one fold".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<(FoldResult, Option<Checkpoint>)>> =
        pool.install(|| (0..k).into_par_iter().map(&run_fold).collect());
    let mut per_fold = Vec::with_capacity(k);
    let mut checkpoints = Vec::new();
    for r in results {
        let (f, ck) = r?;
        per_fold.push(f);
        checkpoints.extend(ck);
    }
    Ok(CrossValidation {
        report: EvalReport::new(cfg.clone(), per_fold)?,
        checkpoints,
    })
}

/// Materializes, trains and tests every fold of `plan`. The master seed of
/// the augmentation and training streams is `cfg.seed`.
pub fn cross_validate(
    materializer: &Materializer<'_>,
    plan: &FoldPlan,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<CrossValidation> {
    cfg.validate()?;
    plan.validate()?;
    cross_validate_with(plan.k, cfg, jobs, |fold| {
        let data = materializer.materialize(plan, fold, cfg.experiment, cfg.experiment.preset(), cfg.seed)?;
        let trained = train_fold(&data, cfg)?;
        let ev = evaluate(&trained.checkpoint.model()?, &data.test)?;
        let result = FoldResult {
            fold,
            confusion_matrix: ev.confusion,
            accuracy: ev.accuracy,
            best_epoch: trained.best_epoch,
            train_loss_curve: trained.train_loss_curve,
            val_loss_curve: trained.val_loss_curve,
        };
        Ok((result, Some(trained.checkpoint)))
    })
}
