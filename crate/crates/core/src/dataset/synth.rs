//! Synthetic stand-in corpus.
//!
//! Each label gets its own spectro-temporal texture:
//!
//! | label       | texture                                               |
//! |-------------|-------------------------------------------------------|
//! | correct     | steady harmonic stack under two formant bumps         |
//! | stopping    | train of short broadband bursts                       |
//! | backing     | rising two-partial chirp                              |
//! | fcdp        | low harmonic hum gated on and off                     |
//! | affrication | dense high-band noise                                 |
//!
//! A sample is its own texture plus, optionally, a weaker "distractor"
//! texture from another label in the corpus (controlled by `overlap`), plus a
//! quiet noise floor. Recordings are mono at 44.1 kHz.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::materialize::ClipSource;
use super::{write_manifest, Annotation, ErrorCategory, Sex, SpeechSample};
use crate::audio::{save_wav, AudioClip, PIPELINE_RATE_HZ};
use crate::augment::sample_key;
use crate::error::{Error, Result};
use crate::features::FeaturePreset;

const SR: f64 = PIPELINE_RATE_HZ as f64;

/// Subjects by (age, female, male), matching the enrolled cohort.
const COHORT: [(u32, usize, usize); 4] = [(3, 8, 14), (4, 11, 18), (5, 11, 20), (6, 4, 4)];

/// Most distinct phrase/character positions a label cycles through. Every
/// label uses the same positions, capped by the smallest class, so each
/// binary inventory position has correct productions too.
const POSITIONS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: FeaturePreset,
    /// Labels and how many samples of each.
    pub classes: Vec<(Annotation, usize)>,
    /// Upper bound of the distractor amplitude relative to the own texture,
    /// in `[0, 1]`. Zero gives a cleanly separable corpus.
    pub overlap: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// The four error categories, `per_class` samples each.
    pub fn four_class(kind: FeaturePreset, per_class: usize, seed: u64) -> Self {
        Self {
            kind,
            classes: ErrorCategory::ALL
                .iter()
                .map(|&c| (Annotation::Error(c), per_class))
                .collect(),
            overlap: 0.0,
            seed,
        }
    }

    /// Character-level incorrect/correct corpus for one category.
    pub fn binary(category: ErrorCategory, incorrect: usize, correct: usize, seed: u64) -> Self {
        Self {
            kind: FeaturePreset::Character,
            classes: vec![(Annotation::Error(category), incorrect), (Annotation::Correct, correct)],
            overlap: 0.0,
            seed,
        }
    }

    pub fn with_overlap(mut self, overlap: f64) -> Self {
        self.overlap = overlap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Parameter(format!("overlap {} outside [0, 1]", self.overlap)));
        }
        let mut labels: Vec<_> = self.classes.iter().map(|c| c.0).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.classes.len() {
            return Err(Error::Parameter("each label may appear once".into()));
        }
        if self.classes.is_empty() || self.classes.iter().any(|c| c.1 == 0) {
            return Err(Error::Parameter("every class needs at least one sample".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.1).sum()
    }
}

fn subjects() -> Vec<(String, u32, Sex)> {
    let mut v = Vec::new();
    for (age, f, m) in COHORT {
        for sex in [Sex::F, Sex::M] {
            let n = if sex == Sex::F { f } else { m };
            for _ in 0..n {
                v.push((format!("S{:03}", v.len() + 1), age, sex));
            }
        }
    }
    v
}

fn fade(i: usize, len: usize) -> f64 {
    let ramp = (0.01 * SR) as usize;
    let a = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
    0.5 - 0.5 * (PI * a).cos()
}

/// Renders `label`'s texture into `len` samples with unit-ish peak.
fn texture(label: Annotation, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t = |i: usize| i as f64 / SR;
    let mut out = vec![0.0; len];
    match label {
        Annotation::Correct => {
            let f0 = rng.gen_range(180.0..300.0);
            let (f1, f2) = (rng.gen_range(600.0..900.0), rng.gen_range(1100.0..2000.0));
            let partials: Vec<(f64, f64, f64)> = (1..)
                .map(|k| k as f64 * f0)
                .take_while(|&f| f < 5000.0)
                .map(|f| {
                    let env = (-((f - f1) / 300.0).powi(2)).exp()
                        + 0.6 * (-((f - f2) / 400.0).powi(2)).exp()
                        + 0.05;
                    (f, env, rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                *o = partials
                    .iter()
                    .map(|&(f, a, ph)| a * (2.0 * PI * f * t(i) + ph).sin())
                    .sum::<f64>()
                    * 0.4;
            }
        }
        Annotation::Error(ErrorCategory::Stopping) => {
            let period = (rng.gen_range(0.040..0.070) * SR) as usize;
            let burst = (0.004 * SR) as usize;
            let mut start = rng.gen_range(0..period);
            while start < len {
                for j in 0..burst.min(len - start) {
                    let n: f64 = rng.sample(StandardNormal);
                    out[start + j] = 0.5 * n * (-(j as f64) / (0.2 * burst as f64)).exp();
                }
                start += period;
            }
        }
        Annotation::Error(ErrorCategory::Backing) => {
            let (lo, hi) = (rng.gen_range(300.0..500.0), rng.gen_range(2500.0..3500.0));
            let dur = len as f64 / SR;
            let rate = (hi - lo) / dur;
            for (i, o) in out.iter_mut().enumerate() {
                let phase = 2.0 * PI * (lo * t(i) + 0.5 * rate * t(i) * t(i));
                *o = 0.6 * phase.sin() + 0.3 * (2.0 * phase).sin();
            }
        }
        Annotation::Error(ErrorCategory::Fcdp) => {
            let f0 = rng.gen_range(90.0..130.0);
            let gate_hz = rng.gen_range(6.0..10.0);
            let gate_ph = rng.gen_range(0.0..1.0);
            for (i, o) in out.iter_mut().enumerate() {
                let g = ((gate_hz * t(i) + gate_ph).fract() < 0.5) as u8 as f64;
                let hum: f64 = (1..=8)
                    .map(|k| (2.0 * PI * k as f64 * f0 * t(i)).sin() / k as f64)
                    .sum();
                *o = 0.35 * g * hum;
            }
        }
        Annotation::Error(ErrorCategory::Affrication) => {
            let comps: Vec<(f64, f64)> = (0..60)
                .map(|_| (rng.gen_range(4000.0..9000.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                *o = comps
                    .iter()
                    .map(|&(f, ph)| (2.0 * PI * f * t(i) + ph).sin())
                    .sum::<f64>()
                    * 0.08;
            }
        }
    }
    out
}

fn render(label: Annotation, distractor: Option<Annotation>, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> AudioClip {
    let dur = match spec.kind {
        FeaturePreset::Phrase => rng.gen_range(1.2..2.4),
        FeaturePreset::Character => rng.gen_range(0.35..0.7),
    };
    let len = (dur * SR) as usize;
    let tex_len = (len as f64 * rng.gen_range(0.6..0.85)) as usize;
    let onset = rng.gen_range(0..=len - tex_len);
    let level = rng.gen_range(0.25..0.6);
    let mut x: Vec<f64> = (0..len)
        .map(|_| 0.003 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let own = texture(label, tex_len, rng);
    for (i, v) in own.iter().enumerate() {
        x[onset + i] += level * fade(i, tex_len) * v;
    }
    if let Some(d) = distractor {
        let m = rng.gen_range(0.0..=spec.overlap);
        let other = texture(d, tex_len, rng);
        for (i, v) in other.iter().enumerate() {
            x[onset + i] += m * level * fade(i, tex_len) * v;
        }
    }
    AudioClip::from_unclipped(x.into_iter().map(|v| v as f32).collect(), PIPELINE_RATE_HZ)
        .expect("synthetic clip is non-empty")
}

/// Samples and clips, in label-major order. `audio_path` is
/// `<sample_id>.wav`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<(SpeechSample, AudioClip)>> {
    spec.validate()?;
    let subjects = subjects();
    let labels: Vec<Annotation> = spec.classes.iter().map(|c| c.0).collect();
    let mut out = Vec::with_capacity(spec.total());
    let positions = spec.classes.iter().map(|c| c.1).min().unwrap_or(1).min(POSITIONS);
    let mut n = 0;
    for &(label, count) in &spec.classes {
        let others: Vec<Annotation> = labels.iter().copied().filter(|&l| l != label).collect();
        for j in 0..count {
            let sample_id = format!("{label}-{j:04}");
            let mut rng = ChaCha8Rng::seed_from_u64(sample_key(&sample_id, spec.seed));
            let distractor = (spec.overlap > 0.0 && !others.is_empty())
                .then(|| others[rng.gen_range(0..others.len())]);
            let clip = render(label, distractor, spec, &mut rng);
            let (subject_id, age, sex) = subjects[n % subjects.len()].clone();
            n += 1;
            let phrase_id = format!("P{:02}", j % positions + 1);
            out.push((
                SpeechSample {
                    audio_path: PathBuf::from(format!("{sample_id}.wav")),
                    sample_id,
                    subject_id,
                    subject_age: age,
                    subject_sex: sex,
                    phrase_id,
                    char_index: (spec.kind == FeaturePreset::Character).then_some(0),
                    annotations: [label, label],
                    duration_s: clip.duration_s(),
                },
                clip,
            ));
        }
    }
    Ok(out)
}

/// Writes 16-bit WAVs and `manifest.csv` into `dir`.
pub fn write_corpus(spec: &SynthSpec, dir: &Path) -> Result<Vec<SpeechSample>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let items = generate(spec)?;
    for (s, clip) in &items {
        save_wav(clip, &dir.join(&s.audio_path), 16)?;
    }
    let samples: Vec<SpeechSample> = items.into_iter().map(|(s, _)| s).collect();
    let path = dir.join("manifest.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_manifest(&samples, std::io::BufWriter::new(file))?;
    Ok(samples)
}

/// Serves generated clips from memory.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    clips: BTreeMap<String, AudioClip>,
}

impl MemorySource {
    pub fn insert(&mut self, sample_id: impl Into<String>, clip: AudioClip) {
        self.clips.insert(sample_id.into(), clip);
    }

    /// Splits generated pairs into manifest rows and an in-memory source.
    pub fn from_generated(items: Vec<(SpeechSample, AudioClip)>) -> (Vec<SpeechSample>, Self) {
        let mut src = Self::default();
        let samples = items
            .into_iter()
            .map(|(s, c)| {
                src.insert(s.sample_id.clone(), c);
                s
            })
            .collect();
        (samples, src)
    }
}

impl ClipSource for MemorySource {
    fn load(&self, sample: &SpeechSample) -> Result<AudioClip> {
        self.clips
            .get(&sample.sample_id)
            .cloned()
            .ok_or_else(|| Error::Validation(format!("no clip for sample {}", sample.sample_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_manifest, Demographics};

    #[test]
    fn cohort_matches_enrolment() {
        let s = subjects();
        assert_eq!(s.len(), 90);
        assert_eq!(s.iter().filter(|x| x.2 == Sex::F).count(), 34);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let spec = SynthSpec::four_class(FeaturePreset::Character, 3, 5);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.len(), 12);
        for ((sa, ca), (sb, cb)) in a.iter().zip(&b) {
            assert_eq!(sa, sb);
            assert_eq!(ca.samples(), cb.samples());
            assert!(sa.duration_s < 3.0 && sa.char_index == Some(0));
            assert!(ca.peak() <= 1.0 && ca.rms() > 0.01);
        }
    }

    #[test]
    fn written_corpus_parses() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec::binary(ErrorCategory::Backing, 2, 3, 1).with_overlap(0.5);
        let written = write_corpus(&spec, dir.path()).unwrap();
        let text = std::fs::read(dir.path().join("manifest.csv")).unwrap();
        let parsed = parse_manifest(&text[..]).unwrap();
        assert_eq!(parsed.len(), 5);
        assert_eq!(parsed[0].sample_id, written[0].sample_id);
        assert!(dir.path().join(&parsed[4].audio_path).exists());
        assert_eq!(Demographics::from_samples(&parsed).subjects, 5);
    }

    #[test]
    fn imbalanced_binary_corpus_is_fully_selected() {
        use crate::dataset::{select_samples, Experiment};
        let spec = SynthSpec::binary(ErrorCategory::Backing, 10, 90, 3);
        let samples: Vec<_> = generate(&spec).unwrap().into_iter().map(|(s, _)| s).collect();
        let sel = select_samples(&samples, Experiment::E2(ErrorCategory::Backing));
        assert_eq!(sel.len(), 100);
        assert_eq!(sel.iter().filter(|(_, l)| *l == 0).count(), 10);
    }

    #[test]
    fn bad_specs() {
        let mut spec = SynthSpec::four_class(FeaturePreset::Phrase, 1, 0);
        spec.overlap = 1.5;
        assert!(generate(&spec).is_err());
        assert!(generate(&SynthSpec::four_class(FeaturePreset::Phrase, 0, 0)).is_err());
    }
}
