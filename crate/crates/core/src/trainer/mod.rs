//! Per-fold training with best-validation-loss checkpointing, evaluation,
//! cross-validation reports and the inference latency harness.

mod bench;
mod eval;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{ClassWeights, Experiment, LabeledMap, MaterializedFold};
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::nnet::{Adam, BlockConfig, Checkpoint, SmallCnn, SmallCnnConfig, TrainingMeta, PROB_EPSILON};

pub use bench::{
    benchmark_latency, synthetic_map, LatencyReport, ModelLatency, LATENCY_REPORT_VERSION, MIN_ITERATIONS, MIN_WARMUP,
};
pub use eval::{
    argmax, cross_validate, cross_validate_with, evaluate, AccuracySummary, Classifier, ConfusionMatrix,
    CrossValidation, EvalReport, Evaluation, FoldResult, percent_1dp, EVAL_REPORT_VERSION,
};

/// Cross-entropy flavour. Binary experiments use a two-way softmax, whose
/// cross-entropy equals the sigmoid binary cross-entropy of the logit gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    CategoricalCE,
    BinaryCE,
}

impl LossKind {
    pub fn for_experiment(e: Experiment) -> Self {
        if e.is_binary() {
            LossKind::BinaryCE
        } else {
            LossKind::CategoricalCE
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub loss: LossKind,
    pub seed: u64,
    pub experiment: Experiment,
    /// Scale each sample's loss by its class weight.
    #[serde(default = "default_true")]
    pub class_weighted: bool,
    /// Convolution blocks; `None` selects the standard four-block network.
    #[serde(default)]
    pub blocks: Option<Vec<BlockConfig>>,
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            batch_size: 128,
            epochs: 15,
            lr: 1e-4,
            loss: LossKind::for_experiment(experiment),
            seed,
            experiment,
            class_weighted: true,
            blocks: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} is not a finite non-negative number", self.lr)));
        }
        let want = LossKind::for_experiment(self.experiment);
        if self.loss != want {
            return Err(Error::Config(format!(
                "experiment {} trains with {want:?}, not {:?}",
                self.experiment, self.loss
            )));
        }
        Ok(())
    }

    /// Network for inputs of `input_shape`.
    pub fn model_config(&self, input_shape: [usize; 3]) -> Result<SmallCnnConfig> {
        let mut cfg = SmallCnnConfig::standard(input_shape[1], self.experiment.num_classes());
        cfg.input_shape = input_shape;
        if let Some(blocks) = &self.blocks {
            cfg.blocks = blocks.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed for one fold's initialization and shuffling.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(b"train");
        h.update((fold as u64).to_le_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub checkpoint: Checkpoint,
    /// 1-based epoch of the kept weights.
    pub best_epoch: usize,
    pub train_loss_curve: Vec<f64>,
    pub val_loss_curve: Vec<f64>,
}

fn prepared(model: &SmallCnn<f32>, map: &FeatureMap) -> Result<Vec<f32>> {
    let values = map.values.as_standard_layout();
    model.prepare_input(values.as_slice().expect("standard layout is contiguous"))
}

/// Unweighted mean cross-entropy over a labeled set.
fn mean_ce(model: &SmallCnn<f32>, set: &[LabeledMap]) -> Result<f64> {
    let mut total = 0.0;
    for m in set {
        let p = model.predict(&prepared(model, &m.map)?)?;
        total += -f64::from(p[m.label]).max(PROB_EPSILON).ln();
    }
    Ok(total / set.len() as f64)
}

/// Trains on `data.train` with mini-batch Adam, scores `data.val` after every
/// epoch and returns the weights with the lowest validation loss (the earlier
/// epoch on ties).
pub fn train_fold(data: &MaterializedFold, cfg: &TrainConfig) -> Result<TrainedFold> {
    cfg.validate()?;
    if data.experiment != cfg.experiment {
        return Err(Error::Precondition(format!(
            "fold holds {} data, config trains {}",
            data.experiment, cfg.experiment
        )));
    }
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "fold {} has {} training and {} validation maps",
            data.fold,
            data.train.len(),
            data.val.len()
        )));
    }
    let k = data.num_classes();
    if let Some(m) = data.train.iter().chain(&data.val).find(|m| m.label >= k) {
        return Err(Error::Shape(format!("{} has label {} outside {k} classes", m.sample_id, m.label)));
    }
    let shape = data.train[0].map.shape();
    if let Some(m) = data.train.iter().chain(&data.val).find(|m| m.map.shape() != shape) {
        return Err(Error::Shape(format!("{} has shape {:?}, expected {shape:?}", m.sample_id, m.map.shape())));
    }
    let weights = if cfg.class_weighted {
        data.weights.clone()
    } else {
        ClassWeights::uniform(k)
    };
    if weights.len() != k {
        return Err(Error::Shape(format!("{} class weights for {k} classes", weights.len())));
    }

    let seed = cfg.fold_seed(data.fold);
    let mut model = SmallCnn::<f32>::new(cfg.model_config(shape)?, seed)?;
    let mut opt = Adam::new(model.params(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let mut grads = model.zero_grads();
            for &i in batch {
                let m = &data.train[i];
                let x = prepared(&model, &m.map)?;
                epoch_loss += model.accumulate(&x, m.label, weights.get(m.label) as f32, scale, &mut grads)?;
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "fold {} epoch {epoch} batch {b}: non-finite gradient",
                    data.fold
                )));
            }
            opt.step(model.params_mut(), &grads)?;
        }
        let train_loss = epoch_loss / data.train.len() as f64;
        let val_loss = mean_ce(&model, &data.val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "fold {} epoch {epoch}: train loss {train_loss}, val loss {val_loss}",
                data.fold
            )));
        }
        log::info!(
            "{} fold {} epoch {epoch}/{}: train {train_loss:.4} val {val_loss:.4}",
            cfg.experiment,
            data.fold,
            cfg.epochs
        );
        train_curve.push(train_loss);
        val_curve.push(val_loss);
        if best.as_ref().map_or(true, |(_, l, _)| val_loss < *l) {
            best = Some((epoch, val_loss, model.params().to_vec()));
        }
    }

    let (best_epoch, val_loss, params) = best.expect("at least one epoch ran");
    let model = SmallCnn::from_params(model.config().clone(), params)?;
    let meta = TrainingMeta {
        experiment: cfg.experiment.to_string(),
        fold: Some(data.fold),
        epoch: best_epoch,
        val_loss,
        seed: cfg.seed,
        config_hash: model.config().hash(),
        class_names: data.class_names.clone(),
    };
    Ok(TrainedFold {
        checkpoint: Checkpoint::from_model(&model, meta),
        best_epoch,
        train_loss_curve: train_curve,
        val_loss_curve: val_curve,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::Provenance;
    use ndarray::Array3;
    use rand::Rng;

    pub(crate) fn tiny_blocks() -> Vec<BlockConfig> {
        vec![
            BlockConfig {
                out_channels: 4,
                stride: 2,
            },
            BlockConfig {
                out_channels: 8,
                stride: 1,
            },
        ]
    }

    /// Class `c` lights up mel band `4c..4c+4`; everything else sits near the floor.
    pub(crate) fn banded(id: &str, label: usize, rng: &mut ChaCha8Rng) -> LabeledMap {
        let values = Array3::from_shape_fn((16, 16, 3), |(m, _, _)| {
            let base = if m / 4 == label { -10.0 } else { -70.0 };
            base + rng.gen_range(-5.0..5.0)
        });
        LabeledMap {
            sample_id: id.into(),
            variant: 0,
            label,
            map: FeatureMap {
                values,
                floor_db: -80.0,
                provenance: Provenance {
                    sample_id: id.into(),
                    config_hash: String::new(),
                },
            },
        }
    }

    pub(crate) fn tiny_fold(per_class: usize, seed: u64) -> MaterializedFold {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = |tag: &str, n: usize| -> Vec<LabeledMap> {
            (0..4 * n)
                .map(|i| banded(&format!("{tag}{i}"), i % 4, &mut rng))
                .collect()
        };
        let (train, val, test) = (set("tr", per_class), set("va", 3), set("te", 5));
        MaterializedFold {
            experiment: Experiment::E3,
            fold: 0,
            class_names: Experiment::E3.class_names(),
            train,
            val,
            test,
            weights: ClassWeights::uniform(4),
        }
    }

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::new(Experiment::E3, 7);
        cfg.blocks = Some(tiny_blocks());
        cfg.batch_size = 8;
        cfg
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = TrainConfig::new(Experiment::E1, 1);
        assert_eq!((cfg.batch_size, cfg.epochs, cfg.lr), (128, 15, 1e-4));
        assert_eq!(cfg.loss, LossKind::CategoricalCE);
        assert!(cfg.validate().is_ok());
        let e2 = TrainConfig::new(Experiment::E2(crate::dataset::ErrorCategory::Backing), 1);
        assert_eq!(e2.loss, LossKind::BinaryCE);
        for bad in [
            TrainConfig { batch_size: 0, ..cfg.clone() },
            TrainConfig { epochs: 0, ..cfg.clone() },
            TrainConfig { lr: f64::NAN, ..cfg.clone() },
            TrainConfig { loss: LossKind::BinaryCE, ..cfg.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
        assert_ne!(cfg.fold_seed(0), cfg.fold_seed(1));
    }

    #[test]
    fn zero_learning_rate_keeps_initial_weights() {
        let data = tiny_fold(2, 1);
        let cfg = TrainConfig {
            epochs: 1,
            lr: 0.0,
            ..tiny_cfg()
        };
        let out = train_fold(&data, &cfg).unwrap();
        let init = SmallCnn::<f32>::new(cfg.model_config([16, 16, 3]).unwrap(), cfg.fold_seed(0)).unwrap();
        assert_eq!(out.checkpoint.model().unwrap().params(), init.params());
        assert_eq!(out.best_epoch, 1);
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let data = tiny_fold(3, 2);
        let cfg = TrainConfig {
            epochs: 3,
            lr: 1e-3,
            ..tiny_cfg()
        };
        let a = train_fold(&data, &cfg).unwrap();
        let b = train_fold(&data, &cfg).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        let c = train_fold(&data, &TrainConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.checkpoint.to_bytes(), c.checkpoint.to_bytes());
    }

    #[test]
    fn learns_separable_bands_and_keeps_best_epoch() {
        let data = tiny_fold(12, 3);
        let cfg = TrainConfig {
            epochs: 12,
            lr: 3e-3,
            ..tiny_cfg()
        };
        let out = train_fold(&data, &cfg).unwrap();
        let best = out.val_loss_curve[out.best_epoch - 1];
        assert!(out.val_loss_curve.iter().all(|&l| best <= l));
        assert_eq!(out.checkpoint.meta.val_loss, best);
        assert!(out.val_loss_curve[..out.best_epoch - 1].iter().all(|&l| l > best));
        let ev = evaluate(&out.checkpoint.model().unwrap(), &data.test).unwrap();
        assert!(ev.accuracy >= 0.95, "accuracy {}", ev.accuracy);
        assert_eq!(ev.confusion.total(), data.test.len() as u64);
    }

    #[test]
    fn rejects_bad_folds() {
        let cfg = tiny_cfg();
        let mut data = tiny_fold(1, 4);
        data.val.clear();
        assert!(matches!(train_fold(&data, &cfg), Err(Error::DegenerateInput(_))));
        let mut data = tiny_fold(1, 4);
        data.train[0].label = 9;
        assert!(matches!(train_fold(&data, &cfg), Err(Error::Shape(_))));
        let data = tiny_fold(1, 4);
        let e1 = TrainConfig {
            experiment: Experiment::E1,
            ..cfg
        };
        assert!(matches!(train_fold(&data, &e1), Err(Error::Precondition(_))));
    }
}
