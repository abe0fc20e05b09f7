use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use super::{character_inventories, ClassWeights, Experiment, FoldPlan, SpeechSample};
use crate::audio::{self, AudioClip, PIPELINE_RATE_HZ};
use crate::augment::{expand_with, AugmentConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMap, FeaturePreset};

/// Where recordings come from.
pub trait ClipSource: Sync {
    fn load(&self, sample: &SpeechSample) -> Result<AudioClip>;
}

/// Reads `audio_path` relative to a root directory.
#[derive(Debug, Clone)]
pub struct FileSource {
    pub root: PathBuf,
}

impl FileSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ClipSource for FileSource {
    fn load(&self, sample: &SpeechSample) -> Result<AudioClip> {
        audio::load_wav(&self.root.join(&sample.audio_path))
    }
}

/// Original sample ids and class indices of one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldPartition {
    pub fold: usize,
    pub experiment: Experiment,
    pub train: Vec<(String, usize)>,
    pub val: Vec<(String, usize)>,
    pub test: Vec<(String, usize)>,
}

/// Per-class segment counts after expansion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentCounts {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPartition {
    pub fn segment_counts(&self, expansion: usize) -> SegmentCounts {
        let k = self.experiment.num_classes();
        let count = |set: &[(String, usize)], mult: usize| {
            let mut c = vec![0; k];
            for (_, l) in set {
                c[*l] += mult;
            }
            c
        };
        SegmentCounts {
            train: count(&self.train, expansion),
            val: count(&self.val, 1),
            test: count(&self.test, 1),
        }
    }
}

/// Resolves a fold of `plan` against the experiment's population. Every
/// planned id must belong to the experiment.
pub fn partition_fold(
    plan: &FoldPlan,
    fold: usize,
    experiment: Experiment,
    samples: &[SpeechSample],
) -> Result<FoldPartition> {
    let inv = character_inventories(samples);
    let by_id: BTreeMap<&str, &SpeechSample> =
        samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let label = |id: &str| -> Result<(String, usize)> {
        let s = by_id
            .get(id)
            .ok_or_else(|| Error::Validation(format!("fold plan names unknown sample {id}")))?;
        let l = experiment.label_of(s, &inv).ok_or_else(|| {
            Error::Validation(format!("sample {id} is not part of experiment {experiment}"))
        })?;
        Ok((id.to_string(), l))
    };
    let resolve = |ids: Vec<&str>| ids.into_iter().map(label).collect::<Result<Vec<_>>>();
    Ok(FoldPartition {
        fold,
        experiment,
        train: resolve(plan.train_ids(fold)?)?,
        val: resolve(plan.val_ids(fold)?)?,
        test: resolve(plan.test_ids(fold)?)?,
    })
}

/// A feature map with its class and ancestry. `variant` 0 is the original
/// recording; 1..=8 are its augmentations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMap {
    pub sample_id: String,
    pub variant: usize,
    pub label: usize,
    pub map: FeatureMap,
}

#[derive(Debug, Clone)]
pub struct MaterializedFold {
    pub experiment: Experiment,
    pub fold: usize,
    pub class_names: Vec<String>,
    pub train: Vec<LabeledMap>,
    pub val: Vec<LabeledMap>,
    pub test: Vec<LabeledMap>,
    /// Inverse-frequency weights over the (expanded) training segment;
    /// classes absent from it weigh 0.
    pub weights: ClassWeights,
}

impl MaterializedFold {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Turns fold partitions into feature maps: load, resample to the pipeline
/// rate, expand training originals nine-fold, extract.
pub struct Materializer<'a> {
    samples: &'a [SpeechSample],
    index: BTreeMap<&'a str, &'a SpeechSample>,
    source: &'a dyn ClipSource,
    augment: AugmentConfig,
    pool: rayon::ThreadPool,
    cache: Option<Mutex<HashMap<CacheKey, Arc<Vec<FeatureMap>>>>>,
}

/// sample id, extractor config hash, expansion seed
type CacheKey = (String, String, Option<u64>);

impl<'a> Materializer<'a> {
    /// `jobs` is the worker-pool width; results never depend on it.
    pub fn new(samples: &'a [SpeechSample], source: &'a dyn ClipSource, jobs: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))?;
        Ok(Self {
            samples,
            index: samples.iter().map(|s| (s.sample_id.as_str(), s)).collect(),
            source,
            augment: AugmentConfig::default(),
            pool,
            cache: None,
        })
    }

    pub fn with_augment(mut self, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        self.augment = cfg;
        if let Some(c) = &self.cache {
            c.lock().expect("cache lock").clear();
        }
        Ok(self)
    }

    /// Keeps every extracted map in memory so later folds reuse them. Costs
    /// roughly ten maps per sample; meant for corpora that fit in RAM.
    pub fn with_cache(mut self) -> Self {
        self.cache = Some(Mutex::new(HashMap::new()));
        self
    }

    fn maps_for(&self, id: &str, fx: &FeatureExtractor, expand: Option<u64>) -> Result<Arc<Vec<FeatureMap>>> {
        let key = (id.to_string(), fx.config_hash().to_string(), expand);
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.lock().expect("cache lock").get(&key).cloned()) {
            return Ok(hit);
        }
        let clip = self.load(id)?;
        let clips = match expand {
            Some(seed) => expand_with(&clip, id, seed, &self.augment)?,
            None => vec![clip],
        };
        let maps = Arc::new(clips.iter().map(|c| fx.extract(c, id)).collect::<Result<Vec<_>>>()?);
        if let Some(c) = &self.cache {
            c.lock().expect("cache lock").insert(key, Arc::clone(&maps));
        }
        Ok(maps)
    }

    fn load(&self, id: &str) -> Result<AudioClip> {
        let s = self
            .index
            .get(id)
            .ok_or_else(|| Error::Validation(format!("unknown sample {id}")))?;
        let clip = self.source.load(s)?;
        audio::resample(&clip, PIPELINE_RATE_HZ)
    }

    fn extract_set(
        &self,
        set: &[(String, usize)],
        fx: &FeatureExtractor,
        expand: Option<u64>,
    ) -> Result<Vec<LabeledMap>> {
        let per_sample = |(id, label): &(String, usize)| -> Result<Vec<LabeledMap>> {
            let maps = self.maps_for(id, fx, expand)?;
            Ok(maps
                .iter()
                .enumerate()
                .map(|(variant, m)| LabeledMap {
                    sample_id: id.clone(),
                    variant,
                    label: *label,
                    map: m.clone(),
                })
                .collect())
        };
        let nested: Vec<Result<Vec<LabeledMap>>> =
            self.pool.install(|| set.par_iter().map(per_sample).collect());
        let mut out = Vec::new();
        for r in nested {
            out.extend(r?);
        }
        Ok(out)
    }

    /// Feature maps of one fold's test set only, for scoring a saved model.
    pub fn materialize_test(
        &self,
        plan: &FoldPlan,
        fold: usize,
        experiment: Experiment,
    ) -> Result<Vec<LabeledMap>> {
        let part = partition_fold(plan, fold, experiment, self.samples)?;
        self.extract_set(&part.test, &FeatureExtractor::for_preset(experiment.preset()), None)
    }

    pub fn materialize(
        &self,
        plan: &FoldPlan,
        fold: usize,
        experiment: Experiment,
        preset: FeaturePreset,
        master_seed: u64,
    ) -> Result<MaterializedFold> {
        if experiment.preset() != preset {
            return Err(Error::Precondition(format!(
                "experiment {experiment} uses the {} preset, not {}",
                experiment.preset().name(),
                preset.name()
            )));
        }
        let part = partition_fold(plan, fold, experiment, self.samples)?;
        let fx = FeatureExtractor::for_preset(preset);
        let train = self.extract_set(&part.train, &fx, Some(master_seed))?;
        let val = self.extract_set(&part.val, &fx, None)?;
        let test = self.extract_set(&part.test, &fx, None)?;
        let mut counts = vec![0; experiment.num_classes()];
        for m in &train {
            counts[m.label] += 1;
        }
        Ok(MaterializedFold {
            experiment,
            fold,
            class_names: experiment.class_names(),
            weights: ClassWeights::balanced_present(&counts)?,
            train,
            val,
            test,
        })
    }
}
