use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use ssd_core::audio::{self, PIPELINE_RATE_HZ};
use ssd_core::dataset::{
    build_folds_with, consistency_filter, partition_fold, read_manifest, select_samples, synth, ErrorCategory,
    Experiment, FileSource, FoldPlan, Materializer, SpeechSample, ValidationPolicy,
};
use ssd_core::features::{write_feature_map, FeatureExtractor, FeaturePreset};
use ssd_core::nnet::{Checkpoint, SmallCnn, SmallCnnConfig, TrainingMeta};
use ssd_core::trainer::{
    benchmark_latency, cross_validate, evaluate, train_fold, EvalReport, FoldResult, LatencyReport, TrainConfig,
};

use crate::config::PipelineConfig;
use crate::{CliError, CorpusArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn output_dir(cfg: &PipelineConfig, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| cfg.paths.output_dir.clone())
        .ok_or_else(|| CliError::Validation("no output directory (--out or paths.output_dir)".into()))?;
    create_dir(&dir)?;
    Ok(dir)
}

fn corpus_paths(cfg: &PipelineConfig, args: &CorpusArgs) -> Result<(PathBuf, PathBuf), CliError> {
    let manifest = args
        .manifest
        .clone()
        .or_else(|| cfg.paths.manifest.clone())
        .ok_or_else(|| CliError::Validation("no manifest (--manifest or paths.manifest)".into()))?;
    let root = args
        .audio_root
        .clone()
        .or_else(|| cfg.paths.audio_root.clone())
        .unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
    Ok((manifest, root))
}

/// Manifest rows whose two annotations agree, after checking that every
/// audio file is present.
fn load_corpus(manifest: &Path, root: &Path) -> Result<Vec<SpeechSample>, CliError> {
    let all = read_manifest(manifest)?;
    let n = all.len();
    let samples = consistency_filter(all);
    if samples.len() < n {
        log::info!("dropped {} samples with disagreeing annotations", n - samples.len());
    }
    if let Some(s) = samples.iter().find(|s| !root.join(&s.audio_path).is_file()) {
        return Err(CliError::Validation(format!(
            "sample {}: audio file {} not found",
            s.sample_id,
            root.join(&s.audio_path).display()
        )));
    }
    Ok(samples)
}

fn experiment(cfg: &PipelineConfig, flag: Option<&str>) -> Result<Experiment, CliError> {
    let s = flag
        .or(cfg.train.experiment.as_deref())
        .ok_or_else(|| CliError::Validation("no experiment (--experiment or train.experiment)".into()))?;
    Ok(Experiment::from_str(s)?)
}

/// Records the resolved configuration next to a command's outputs.
fn write_provenance(out: &Path, command: &str, cfg: &PipelineConfig, args: serde_json::Value) -> Result<(), CliError> {
    let record = json!({
        "command": command,
        "master_seed": cfg.master_seed,
        "config": cfg,
        "args": args,
    });
    let path = out.join(format!("run-{command}.json"));
    write_file(&path, serde_json::to_string_pretty(&record).expect("provenance serializes") + "\n")?;
    // loadable again with --config
    write_file(&out.join("config.resolved.toml"), cfg.to_toml())
}

/// 1-based fold number from the command line to a plan index.
fn fold_index(n: usize, plan: &FoldPlan) -> Result<usize, CliError> {
    if n == 0 || n > plan.k {
        return Err(CliError::Validation(format!("--fold must be in 1..={}, got {n}", plan.k)));
    }
    Ok(n - 1)
}

fn checkpoint_path(dir: &Path, e: Experiment, fold: usize) -> PathBuf {
    dir.join(format!("{e}-fold{}.ssdm", fold + 1))
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Feature preset: phrase ([128,256,3]) or character ([128,128,3]).
    #[arg(long)]
    preset: Option<FeaturePreset>,
    /// Output directory for the .ssdf maps and index.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexEntry {
    input_sha256: String,
    file: String,
    shape: [usize; 3],
}

pub fn extract(cfg: PipelineConfig, args: ExtractArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let preset = args
        .preset
        .or(cfg.features.preset)
        .ok_or_else(|| CliError::Validation("no feature preset (--preset or features.preset)".into()))?;
    let (manifest, root) = corpus_paths(&cfg, &args.corpus)?;
    let out = output_dir(&cfg, args.out)?;
    let samples = load_corpus(&manifest, &root)?;
    write_provenance(&out, "extract", &cfg, json!({ "manifest": manifest, "preset": preset }))?;

    let index_path = out.join("index.json");
    let index: BTreeMap<String, IndexEntry> = if index_path.is_file() {
        let text = std::fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", index_path.display())))?
    } else {
        BTreeMap::new()
    };
    let fx = FeatureExtractor::for_preset(preset);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let one = |s: &SpeechSample| -> Result<(String, IndexEntry, bool), CliError> {
        let wav_path = root.join(&s.audio_path);
        let bytes = std::fs::read(&wav_path).map_err(io_err(&wav_path))?;
        let mut h = Sha256::new();
        h.update(&bytes);
        h.update(fx.config_hash().as_bytes());
        let hash = hex::encode(h.finalize());
        let file = format!("{}.ssdf", s.sample_id);
        if let Some(prev) = index.get(&s.sample_id) {
            if prev.input_sha256 == hash && out.join(&prev.file).is_file() {
                return Ok((s.sample_id.clone(), prev.clone(), false));
            }
        }
        let clip = audio::decode_wav(&bytes)
            .map_err(|e| CliError::Validation(format!("sample {}: {e}", s.sample_id)))?;
        let map = fx.extract(&audio::resample(&clip, PIPELINE_RATE_HZ)?, &s.sample_id)?;
        let path = out.join(&file);
        let mut buf = Vec::new();
        write_feature_map(&map, &mut buf)?;
        write_file(&path, buf)?;
        let entry = IndexEntry {
            input_sha256: hash,
            file,
            shape: map.shape(),
        };
        Ok((s.sample_id.clone(), entry, true))
    };
    let results: Vec<Result<(String, IndexEntry, bool), CliError>> =
        pool.install(|| samples.par_iter().map(one).collect());
    let mut new_index = BTreeMap::new();
    let mut computed = 0;
    for r in results {
        let (id, entry, fresh) = r?;
        computed += usize::from(fresh);
        new_index.insert(id, entry);
    }
    write_file(&index_path, serde_json::to_string_pretty(&new_index).expect("index serializes") + "\n")?;
    println!(
        "{} feature maps ({} computed, {} unchanged) in {}",
        new_index.len(),
        computed,
        new_index.len() - computed,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct FoldArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Experiment: e1, e2-<category> or e3.
    #[arg(long)]
    experiment: Option<String>,
    /// Number of folds [default: folds.k or 5]
    #[arg(long)]
    k: Option<usize>,
    /// Fraction of each class's non-test samples held out for validation.
    #[arg(long, conflicts_with = "held_out_validation")]
    val_fraction: Option<f64>,
    /// Validate on the test fold instead of an inner split.
    #[arg(long)]
    held_out_validation: bool,
    /// Output directory; the plan is written to folds-<experiment>.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn fold(mut cfg: PipelineConfig, args: FoldArgs) -> Result<(), CliError> {
    if let Some(k) = args.k {
        cfg.folds.k = k;
    }
    if let Some(f) = args.val_fraction {
        cfg.folds.validation = ValidationPolicy::InnerSplit { val_fraction: f };
    }
    if args.held_out_validation {
        cfg.folds.validation = ValidationPolicy::HeldOutFold;
    }
    cfg.validate()?;
    let e = experiment(&cfg, args.experiment.as_deref())?;
    let (manifest, root) = corpus_paths(&cfg, &args.corpus)?;
    let out = output_dir(&cfg, args.out)?;
    let samples = load_corpus(&manifest, &root)?;
    let selected: Vec<SpeechSample> = select_samples(&samples, e).into_iter().map(|(s, _)| s).collect();
    let plan = build_folds_with(&selected, cfg.folds.k, cfg.master_seed, cfg.folds.validation)?;
    let path = out.join(format!("folds-{e}.json"));
    plan.save(&path)?;
    write_provenance(&out, "fold", &cfg, json!({ "manifest": manifest, "experiment": e.to_string() }))?;

    let names = e.class_names();
    println!("experiment {e}: {} samples, k = {}", selected.len(), plan.k);
    println!("{:<6}{:>10}{:>10}{:>10}   training segments by class", "fold", "train", "val", "test");
    for f in 0..plan.k {
        let part = partition_fold(&plan, f, e, &samples)?;
        let seg = part.segment_counts(1 + ssd_core::augment::ExpansionPlan::VARIANTS);
        let by_class: Vec<String> = names.iter().zip(&seg.train).map(|(n, c)| format!("{n} {c}")).collect();
        println!(
            "{:<6}{:>10}{:>10}{:>10}   {}",
            f + 1,
            part.train.len(),
            part.val.len(),
            part.test.len(),
            by_class.join(", ")
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

/// Training hyper-parameters settable from the command line.
#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    /// Epochs [default: train.epochs or 15]
    #[arg(long)]
    epochs: Option<usize>,
    /// Mini-batch size [default: train.batch_size or 128]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: train.lr or 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Train without class weights.
    #[arg(long)]
    no_class_weights: bool,
}

fn train_config(cfg: &PipelineConfig, e: Experiment, flags: &TrainFlags) -> Result<TrainConfig, CliError> {
    let mut tc = TrainConfig::new(e, cfg.master_seed);
    tc.batch_size = flags.batch_size.unwrap_or(cfg.train.batch_size);
    tc.epochs = flags.epochs.unwrap_or(cfg.train.epochs);
    tc.lr = flags.lr.unwrap_or(cfg.train.lr);
    tc.class_weighted = cfg.train.class_weighted && !flags.no_class_weights;
    tc.validate()?;
    Ok(tc)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Experiment: e1, e2-<category> or e3.
    #[arg(long)]
    experiment: Option<String>,
    /// Fold plan [default: <out>/folds-<experiment>.json]
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Train this fold (1-based).
    #[arg(long, required_unless_present = "all_folds", conflicts_with = "all_folds")]
    fold: Option<usize>,
    /// Train and test every fold.
    #[arg(long)]
    all_folds: bool,
    /// Output directory for checkpoints and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep feature maps in memory so later folds reuse them.
    #[arg(long)]
    cache_features: bool,
    #[command(flatten)]
    flags: TrainFlags,
}

fn load_plan(flag: Option<PathBuf>, out: &Path, e: Experiment) -> Result<FoldPlan, CliError> {
    let path = flag.unwrap_or_else(|| out.join(format!("folds-{e}.json")));
    if !path.is_file() {
        return Err(CliError::Validation(format!(
            "fold plan {} not found; run `ssd fold` first",
            path.display()
        )));
    }
    Ok(FoldPlan::load(&path)?)
}

fn save_report(out: &Path, stem: &str, report: &EvalReport) -> Result<(), CliError> {
    report.save(&out.join(format!("{stem}.json")))?;
    for (i, f) in report.per_fold.iter().enumerate() {
        let csv = report.confusion_csv(i).expect("fold exists");
        write_file(&out.join(format!("{stem}-fold{}-confusion.csv", f.fold + 1)), csv)?;
    }
    print!("{}", report.table());
    Ok(())
}

pub fn train(cfg: PipelineConfig, args: TrainArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let e = experiment(&cfg, args.experiment.as_deref())?;
    let tc = train_config(&cfg, e, &args.flags)?;
    let (manifest, root) = corpus_paths(&cfg, &args.corpus)?;
    let out = output_dir(&cfg, args.out)?;
    let plan = load_plan(args.folds, &out, e)?;
    let samples = load_corpus(&manifest, &root)?;
    write_provenance(
        &out,
        "train",
        &cfg,
        json!({ "manifest": manifest, "train": tc, "fold": args.fold, "all_folds": args.all_folds }),
    )?;
    let source = FileSource::new(&root);
    let mut materializer = Materializer::new(&samples, &source, cfg.jobs)?.with_augment(cfg.augment.clone())?;
    if args.cache_features {
        materializer = materializer.with_cache();
    }

    if args.all_folds {
        let cv = cross_validate(&materializer, &plan, &tc, cfg.jobs)?;
        for (f, ck) in cv.checkpoints.iter().enumerate() {
            ck.save(&checkpoint_path(&out, e, f))?;
        }
        return save_report(&out, &format!("{e}-report"), &cv.report);
    }

    let f = fold_index(args.fold.expect("clap requires --fold or --all-folds"), &plan)?;
    let data = materializer.materialize(&plan, f, e, e.preset(), tc.seed)?;
    let trained = train_fold(&data, &tc)?;
    let ev = evaluate(&trained.checkpoint.model()?, &data.test)?;
    trained.checkpoint.save(&checkpoint_path(&out, e, f))?;
    let result = FoldResult {
        fold: f,
        confusion_matrix: ev.confusion,
        accuracy: ev.accuracy,
        best_epoch: trained.best_epoch,
        train_loss_curve: trained.train_loss_curve,
        val_loss_curve: trained.val_loss_curve,
    };
    save_report(&out, &format!("{e}-fold{}", f + 1), &EvalReport::new(tc, vec![result])?)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Experiment: e1, e2-<category> or e3.
    #[arg(long)]
    experiment: Option<String>,
    /// Fold plan [default: <out>/folds-<experiment>.json]
    #[arg(long)]
    folds: Option<PathBuf>,
    /// Evaluate this fold (1-based).
    #[arg(long, required_unless_present = "all_folds", conflicts_with = "all_folds")]
    fold: Option<usize>,
    /// Evaluate every fold's checkpoint.
    #[arg(long)]
    all_folds: bool,
    /// Checkpoint to evaluate with --fold [default: <out>/<experiment>-fold<N>.ssdm]
    #[arg(long, requires = "fold")]
    checkpoint: Option<PathBuf>,
    /// Run directory holding the checkpoints; the report is written here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn eval(cfg: PipelineConfig, args: EvalArgs) -> Result<(), CliError> {
    cfg.validate()?;
    let e = experiment(&cfg, args.experiment.as_deref())?;
    let (manifest, root) = corpus_paths(&cfg, &args.corpus)?;
    let out = output_dir(&cfg, args.out)?;
    let plan = load_plan(args.folds, &out, e)?;
    let samples = load_corpus(&manifest, &root)?;
    let folds: Vec<usize> = match args.fold {
        Some(n) => vec![fold_index(n, &plan)?],
        None => (0..plan.k).collect(),
    };
    write_provenance(&out, "eval", &cfg, json!({ "manifest": manifest, "folds": folds }))?;
    let source = FileSource::new(&root);
    let materializer = Materializer::new(&samples, &source, cfg.jobs)?;
    let mut results = Vec::new();
    for &f in &folds {
        let path = match &args.checkpoint {
            Some(p) => p.clone(),
            None => checkpoint_path(&out, e, f),
        };
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "checkpoint {} not found; run `ssd train` first",
                path.display()
            )));
        }
        let ck = Checkpoint::load(&path)?;
        let test = materializer.materialize_test(&plan, f, e)?;
        let ev = evaluate(&ck.model()?, &test)?;
        let mut r = FoldResult::from_confusion(f, ev.confusion);
        r.best_epoch = ck.meta.epoch;
        results.push(r);
    }
    let mut tc = TrainConfig::new(e, cfg.master_seed);
    tc.class_weighted = cfg.train.class_weighted;
    let report = EvalReport::new(tc, results)?;
    let stem = match args.fold {
        Some(n) => format!("{e}-fold{n}-eval"),
        None => format!("{e}-eval"),
    };
    save_report(&out, &stem, &report)
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Checkpoints to time; without any, untrained standard models are timed.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Input preset for untrained models [default: features.preset or character]
    #[arg(long)]
    preset: Option<FeaturePreset>,
    /// Channel-width multipliers for untrained models.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    widths: Vec<usize>,
    /// Untimed runs before measuring.
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Timed single-input runs.
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Also write the report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(cfg: PipelineConfig, args: BenchArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    if args.checkpoint.is_empty() {
        let preset = args.preset.or(cfg.features.preset).unwrap_or(FeaturePreset::Character);
        for &w in &args.widths {
            if w == 0 {
                return Err(CliError::Validation("widths must be positive".into()));
            }
            let mc = SmallCnnConfig::standard(preset.target_frames(), 4).widened(w);
            let meta = TrainingMeta {
                experiment: format!("untrained-x{w}"),
                fold: None,
                epoch: 0,
                val_loss: f64::NAN,
                seed: cfg.master_seed,
                config_hash: mc.hash(),
                class_names: Vec::new(),
            };
            let ck = Checkpoint::from_model(&SmallCnn::new(mc, cfg.master_seed)?, meta);
            reports.push(benchmark_latency(&ck, preset, args.warmup, args.iters)?);
        }
    }
    for path in &args.checkpoint {
        let ck = Checkpoint::load(path)?;
        let preset = FeaturePreset::from_frames(ck.config.input_shape[1]).ok_or_else(|| {
            CliError::Validation(format!("{}: input {:?} matches no preset", path.display(), ck.config.input_shape))
        })?;
        reports.push(benchmark_latency(&ck, preset, args.warmup, args.iters)?);
    }
    let report = LatencyReport::merge(reports);
    print!("{}", report.table());
    if let Some(p) = args.out {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_file(&p, report.to_json())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// 4 for the four error categories, 2 for incorrect/correct of one category.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Clip kind: character (short) or phrase (long).
    #[arg(long, default_value = "character")]
    kind: FeaturePreset,
    /// Error category of the binary corpus.
    #[arg(long, default_value = "backing")]
    category: String,
    /// Incorrect samples in a binary corpus [default: --per-class]
    #[arg(long)]
    incorrect: Option<usize>,
    /// Correct samples in a binary corpus [default: --per-class]
    #[arg(long)]
    correct: Option<usize>,
    /// Amplitude of a distractor texture from another class, 0 for none.
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    /// Directory for the WAV files and manifest.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn synth(cfg: PipelineConfig, args: SynthArgs) -> Result<(), CliError> {
    if args.classes != 2 && args.classes != 4 {
        return Err(CliError::Validation(format!("--classes must be 2 or 4, got {}", args.classes)));
    }
    let out = output_dir(&cfg, args.out)?;
    let spec = if args.classes == 2 {
        let cat = ErrorCategory::from_str(&args.category)?;
        synth::SynthSpec::binary(
            cat,
            args.incorrect.unwrap_or(args.per_class),
            args.correct.unwrap_or(args.per_class),
            cfg.master_seed,
        )
    } else {
        synth::SynthSpec::four_class(args.kind, args.per_class, cfg.master_seed)
    }
    .with_overlap(args.overlap);
    spec.validate()?;
    let samples = synth::write_corpus(&spec, &out)?;
    write_provenance(&out, "synth", &cfg, json!({ "spec": format!("{spec:?}") }))?;
    println!("{} samples, manifest {}", samples.len(), out.join("manifest.csv").display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address.
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Checkpoint to deploy at start-up.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Session log and donated recordings [default: <paths.output_dir>/service, else in memory]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Built UI bundle to serve for non-API paths.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Token enabling POST /admin/model.
    #[arg(long, env = "SSD_ADMIN_TOKEN", hide_env_values = true)]
    admin_token: Option<String>,
}

pub fn serve(cfg: PipelineConfig, args: ServeArgs) -> Result<(), CliError> {
    let svc = ssd_service::ServiceConfig {
        data_dir: args
            .data_dir
            .or_else(|| cfg.paths.output_dir.as_ref().map(|d| d.join("service"))),
        checkpoint: args.checkpoint,
        static_dir: args.static_dir,
        admin_token: args.admin_token,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Io {
        path: PathBuf::from("<tokio runtime>"),
        source: e,
    })?;
    rt.block_on(ssd_service::serve(svc, args.addr))?;
    Ok(())
}
