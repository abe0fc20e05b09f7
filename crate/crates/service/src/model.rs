use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use ssd_core::audio::{self, PIPELINE_RATE_HZ};
use ssd_core::dataset::{BinaryLabel, ErrorCategory, Experiment, MAX_DURATION_S};
use ssd_core::features::{FeatureExtractor, FeaturePreset, CHANNELS, N_MELS};
use ssd_core::nnet::{Checkpoint, SmallCnn};
use ssd_core::trainer::{argmax, Classifier};

use crate::store::{ClassProbability, PhraseResponse};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("cannot decode audio: {0}")]
    Decode(String),
    #[error("recording lasts {0:.2} s; it must be shorter than {MAX_DURATION_S} s")]
    TooLong(f64),
    #[error("prediction failed: {0}")]
    Pipeline(String),
}

/// Checkpoint metadata exposed by `GET /model`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub experiment: String,
    pub fold: Option<usize>,
    pub epoch: usize,
    pub val_loss: f64,
    pub class_names: Vec<String>,
    pub preset: FeaturePreset,
    pub config_hash: String,
    pub checkpoint_sha256: String,
    pub param_count: usize,
}

/// An immutable deployed model with its matching feature extractor.
pub struct LoadedModel {
    model: SmallCnn<f32>,
    extractor: FeatureExtractor,
    /// Category flagged by the binary models' "incorrect" class.
    binary_category: Option<ErrorCategory>,
    info: ModelInfo,
}

impl LoadedModel {
    pub fn new(ckpt: &Checkpoint) -> ssd_core::Result<Self> {
        let [mels, frames, ch] = ckpt.config.input_shape;
        let preset = FeaturePreset::from_frames(frames)
            .filter(|_| mels == N_MELS && ch == CHANNELS)
            .ok_or_else(|| {
                ssd_core::Error::Precondition(format!(
                    "checkpoint input {:?} matches no feature preset",
                    ckpt.config.input_shape
                ))
            })?;
        let binary_category = match Experiment::from_str(&ckpt.meta.experiment) {
            Ok(Experiment::E2(c)) => Some(c),
            _ => None,
        };
        let model = ckpt.model()?;
        let class_names = if ckpt.meta.class_names.len() == ckpt.config.num_classes {
            ckpt.meta.class_names.clone()
        } else {
            (0..ckpt.config.num_classes).map(|i| format!("class{i}")).collect()
        };
        Ok(Self {
            extractor: FeatureExtractor::for_preset(preset),
            binary_category,
            info: ModelInfo {
                experiment: ckpt.meta.experiment.clone(),
                fold: ckpt.meta.fold,
                epoch: ckpt.meta.epoch,
                val_loss: ckpt.meta.val_loss,
                class_names,
                preset,
                config_hash: ckpt.config.hash(),
                checkpoint_sha256: ckpt.content_hash(),
                param_count: ckpt.config.param_count(),
            },
            model,
        })
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn category_of(&self, class: usize) -> Option<ErrorCategory> {
        match self.binary_category {
            Some(c) => (class == BinaryLabel::Incorrect.index()).then_some(c),
            None => ErrorCategory::from_str(&self.info.class_names[class]).ok(),
        }
    }

    /// Decode, resample, extract and classify one recording.
    pub fn predict_wav(&self, phrase_id: &str, wav: &[u8]) -> Result<PhraseResponse, PredictError> {
        let started = Instant::now();
        let clip = audio::decode_wav(wav).map_err(|e| PredictError::Decode(e.to_string()))?;
        let duration = clip.duration_s();
        if duration >= MAX_DURATION_S {
            return Err(PredictError::TooLong(duration));
        }
        let pipeline = |e: ssd_core::Error| PredictError::Pipeline(e.to_string());
        let clip = audio::resample(&clip, PIPELINE_RATE_HZ).map_err(pipeline)?;
        let map = self.extractor.extract(&clip, phrase_id).map_err(pipeline)?;
        let p = self.model.probabilities(&map).map_err(pipeline)?;
        let best = argmax(&p);
        Ok(PhraseResponse {
            phrase_id: phrase_id.to_string(),
            probabilities: self
                .info
                .class_names
                .iter()
                .zip(&p)
                .map(|(class, &probability)| ClassProbability {
                    class: class.clone(),
                    probability,
                })
                .collect(),
            label: self.info.class_names[best].clone(),
            category: self.category_of(best),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
            model_hash: self.info.checkpoint_sha256.clone(),
            audio_retained: false,
        })
    }
}
