use std::fmt::Write as _;
use std::time::Instant;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::Classifier;
use crate::error::{Error, Result};
use crate::features::{FeatureMap, FeaturePreset, Provenance, CHANNELS, FLOOR_DB, N_MELS};
use crate::nnet::Checkpoint;

pub const LATENCY_REPORT_VERSION: u32 = 1;
pub const MIN_WARMUP: usize = 10;
pub const MIN_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLatency {
    pub model: String,
    pub preset: FeaturePreset,
    pub batch: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub checkpoint_bytes: usize,
    pub param_count: usize,
    pub samples_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub version: u32,
    pub per_model: Vec<ModelLatency>,
}

impl LatencyReport {
    pub fn new(per_model: Vec<ModelLatency>) -> Self {
        Self {
            version: LATENCY_REPORT_VERSION,
            per_model,
        }
    }

    pub fn merge(reports: impl IntoIterator<Item = LatencyReport>) -> Self {
        Self::new(reports.into_iter().flat_map(|r| r.per_model).collect())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<32}{:>10}{:>10}{:>10}{:>10}{:>8}{:>12}\n",
            "model", "mean ms", "std ms", "min ms", "max ms", "iters", "ckpt bytes"
        );
        for m in &self.per_model {
            let _ = writeln!(
                s,
                "{:<32}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>8}{:>12}",
                m.model, m.mean_ms, m.std_ms, m.min_ms, m.max_ms, m.iterations, m.checkpoint_bytes
            );
        }
        s
    }
}

/// A reproducible random map in the feature value range for `preset`.
pub fn synthetic_map(preset: FeaturePreset, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = (N_MELS, preset.target_frames(), CHANNELS);
    FeatureMap {
        values: Array3::from_shape_simple_fn(shape, || rng.gen_range(FLOOR_DB..=0.0)),
        floor_db: FLOOR_DB,
        provenance: Provenance {
            sample_id: format!("synthetic-{seed}"),
            config_hash: String::new(),
        },
    }
}

/// Times single-input predictions (input normalization included) after
/// `warmup` untimed runs.
pub fn benchmark_latency(
    ckpt: &Checkpoint,
    preset: FeaturePreset,
    warmup: usize,
    iters: usize,
) -> Result<LatencyReport> {
    if warmup < MIN_WARMUP || iters < MIN_ITERATIONS {
        return Err(Error::Precondition(format!(
            "latency runs need at least {MIN_WARMUP} warmups and {MIN_ITERATIONS} timed iterations, got {warmup} and {iters}"
        )));
    }
    let want = [N_MELS, preset.target_frames(), CHANNELS];
    if ckpt.config.input_shape != want {
        return Err(Error::Precondition(format!(
            "checkpoint expects {:?} inputs, the {} preset produces {want:?}",
            ckpt.config.input_shape,
            preset.name()
        )));
    }
    let model = ckpt.model()?;
    let map = synthetic_map(preset, 0);
    for _ in 0..warmup {
        std::hint::black_box(model.probabilities(&map)?);
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(model.probabilities(std::hint::black_box(&map))?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(LatencyReport::new(vec![ModelLatency {
        model: format!("{}-{}", ckpt.meta.experiment, ckpt.config.hash()),
        preset,
        batch: 1,
        warmup,
        iterations: iters,
        mean_ms: mean,
        std_ms: var.sqrt(),
        min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: samples.iter().copied().fold(0.0, f64::max),
        checkpoint_bytes: ckpt.to_bytes().len(),
        param_count: ckpt.config.param_count(),
        samples_ms: samples,
    }]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{SmallCnn, SmallCnnConfig, TrainingMeta};

    fn ckpt(width: usize) -> Checkpoint {
        let cfg = SmallCnnConfig::standard(128, 4).widened(width);
        let meta = TrainingMeta {
            experiment: "e3".into(),
            fold: None,
            epoch: 0,
            val_loss: 0.0,
            seed: 0,
            config_hash: cfg.hash(),
            class_names: vec![],
        };
        Checkpoint::from_model(&SmallCnn::new(cfg, 1).unwrap(), meta)
    }

    #[test]
    fn report_statistics_are_consistent() {
        let c = ckpt(1);
        let r = benchmark_latency(&c, FeaturePreset::Character, 10, 50).unwrap();
        let m = &r.per_model[0];
        assert_eq!(m.samples_ms.len(), 50);
        assert_eq!((m.batch, m.warmup, m.iterations), (1, 10, 50));
        assert!(m.samples_ms.iter().all(|&t| t > 0.0));
        assert!(m.min_ms <= m.mean_ms && m.mean_ms <= m.max_ms);
        assert_eq!(m.checkpoint_bytes, c.to_bytes().len());
        assert!(r.table().contains(&m.model));
    }

    #[test]
    fn enforces_methodology_and_shape() {
        let c = ckpt(1);
        assert!(matches!(
            benchmark_latency(&c, FeaturePreset::Character, 9, 50),
            Err(Error::Precondition(_))
        ));
        assert!(benchmark_latency(&c, FeaturePreset::Character, 10, 49).is_err());
        assert!(benchmark_latency(&c, FeaturePreset::Phrase, 10, 50).is_err());
    }

    #[test]
    fn synthetic_maps_are_reproducible() {
        let a = synthetic_map(FeaturePreset::Phrase, 4);
        assert_eq!(a.shape(), [128, 256, 3]);
        assert_eq!(a, synthetic_map(FeaturePreset::Phrase, 4));
        assert!(a.values.iter().all(|v| (-80.0..=0.0).contains(v)));
    }
}
