use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segqual::datagen::{
    gen_dataset, load_dataset, split_holdout, Profile, SyntheticConfig, TrainingTuple, MANIFEST_FILE,
};
use segqual::evaluate::{
    benchmark as rank_segmenters, correlate, correlate_hd, flag_low, oracle_records, records_from, scatter_export,
    scatter_import, select_per_sample, selection_report, BenchmarkEntry, Correlation, EvalRecord, FlagPolicy,
    Selection, SelectionReport,
};
use segqual::preprocess::DEFAULT_INPUT_SIDE;
use segqual::regressor::gradcheck::{gradient_check, small_check_architecture, GradCheckReport};
use segqual::regressor::{self, Architecture, BackboneSpec, EpochStats, TrainConfig};
use segqual::theory::{reconstruction_trials, TrialSummary};

use crate::config::{require, resolve, seed_or_env, CliResult, Exit, Failure};
use crate::{BenchmarkArgs, EvalArgs, FlagArgs, GenDataArgs, GradCheckArgs, ReconstructArgs, SelectArgs, TrainArgs};

#[derive(Serialize)]
struct Report<'a, C, R> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    #[serde(flatten)]
    result: R,
}

fn emit<C: Serialize, R: Serialize>(command: &str, config: &C, result: R, out: Option<&Path>) -> CliResult<()> {
    let report = Report {
        command,
        version: segqual::VERSION,
        config,
        result,
    };
    let text = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    if let Some(path) = out {
        write_file(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| Failure::new(Exit::Io, format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::new(Exit::Io, format!("cannot create {}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    out: Option<PathBuf>,
    n_images: usize,
    objects_per_image: usize,
    image_size: usize,
    jitter: f64,
    seed: Option<u64>,
    profiles: Vec<Profile>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        let d = SyntheticConfig::default();
        Self {
            out: None,
            n_images: d.n_images,
            objects_per_image: d.objects_per_image,
            image_size: d.image_size,
            jitter: d.jitter,
            seed: None,
            profiles: d.profiles,
        }
    }
}

pub fn gen_data(file: Option<&Path>, args: &GenDataArgs) -> CliResult<Exit> {
    let mut cfg: GenDataConfig = resolve(file, args)?;
    cfg.seed = Some(seed_or_env(cfg.seed)?);
    let out = require(&cfg.out, "out")?.clone();
    let synth = SyntheticConfig {
        n_images: cfg.n_images,
        objects_per_image: cfg.objects_per_image,
        image_size: cfg.image_size,
        profiles: cfg.profiles.clone(),
        seed: cfg.seed.unwrap_or_default(),
        jitter: cfg.jitter,
    };
    synth.validate()?;
    create_dir(&out)?;
    let ds = gen_dataset(&synth, &out)?;

    #[derive(Serialize)]
    struct Out<'a> {
        manifest: PathBuf,
        tuples: usize,
        segmenters: &'a [String],
    }
    let result = Out {
        manifest: out.join(MANIFEST_FILE),
        tuples: ds.tuples.len(),
        segmenters: ds.segmenters(),
    };
    emit("gen-data", &cfg, result, None)?;
    Ok(Exit::Ok)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCliConfig {
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    history: Option<PathBuf>,
    heads: usize,
    input_side: usize,
    widths: Vec<usize>,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    weight_decay: f64,
    head_weights: Vec<f64>,
    val_frac: f64,
    seed: Option<u64>,
}

impl Default for TrainCliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let BackboneSpec::Conv { widths } = Architecture::small_cnn(1, DEFAULT_INPUT_SIDE).backbone;
        Self {
            dataset: None,
            out: None,
            history: None,
            heads: 1,
            input_side: DEFAULT_INPUT_SIDE,
            widths,
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
            weight_decay: t.weight_decay,
            head_weights: t.head_weights,
            val_frac: 0.0,
            seed: None,
        }
    }
}

fn history_csv(history: &[EpochStats]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,val_spearman,val_pearson\n");
    for h in history {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            h.epoch,
            h.train_loss,
            opt(h.val_spearman),
            opt(h.val_pearson)
        );
    }
    s
}

pub fn train(file: Option<&Path>, args: &TrainArgs) -> CliResult<Exit> {
    let mut cfg: TrainCliConfig = resolve(file, args)?;
    cfg.seed = Some(seed_or_env(cfg.seed)?);
    let dataset = require(&cfg.dataset, "dataset")?.clone();
    let out = require(&cfg.out, "out")?.clone();
    let history_path = cfg.history.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    cfg.history = Some(history_path.clone());
    let arch = Architecture {
        backbone: BackboneSpec::Conv {
            widths: cfg.widths.clone(),
        },
        heads: cfg.heads,
        input_side: cfg.input_side,
    };
    arch.validate()?;
    let train_cfg = TrainConfig {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        weight_decay: cfg.weight_decay,
        seed: cfg.seed.unwrap_or_default(),
        head_weights: cfg.head_weights.clone(),
    };
    train_cfg.validate(cfg.heads)?;

    let ds = load_dataset(&dataset)?;
    let (train_set, val_set) = split_holdout(&ds.tuples, cfg.val_frac)?;
    let val = (!val_set.is_empty()).then_some(val_set.as_slice());
    let epochs = cfg.epochs;
    let (state, history) = regressor::train(&train_set, val, arch, &train_cfg, |s| {
        let mut line = format!("epoch {}/{} train_loss {:.6}", s.epoch, epochs, s.train_loss);
        if let (Some(sp), Some(pe)) = (s.val_spearman, s.val_pearson) {
            let _ = write!(line, " val_spearman {sp:.4} val_pearson {pe:.4}");
        }
        eprintln!("{line}");
    })?;
    regressor::save(&state, &out)?;
    write_file(&history_path, &history_csv(&history))?;

    #[derive(Serialize)]
    struct Out {
        model: PathBuf,
        history: PathBuf,
        param_count: usize,
        train_tuples: usize,
        val_tuples: usize,
        last_epoch: Option<EpochStats>,
    }
    let result = Out {
        model: out,
        history: history_path,
        param_count: state.params.len(),
        train_tuples: train_set.len(),
        val_tuples: val_set.len(),
        last_epoch: history.last().cloned(),
    };
    emit("train", &cfg, result, None)?;
    Ok(Exit::Ok)
}

/// Dataset tuples, optionally restricted to the held-out split.
fn dataset_tuples(dir: &Path, holdout: Option<f64>) -> CliResult<Vec<TrainingTuple>> {
    let tuples = load_dataset(dir)?.tuples;
    Ok(match holdout {
        Some(f) => split_holdout(&tuples, f)?.1,
        None => tuples,
    })
}

fn score_tuples(
    tuples: &[TrainingTuple],
    model: Option<&Path>,
    oracle: bool,
    input_side: Option<usize>,
) -> CliResult<Vec<EvalRecord>> {
    match (model, oracle) {
        (Some(_), true) => Err(Failure::config("--model and --oracle are mutually exclusive")),
        (None, false) => Err(Failure::config("one of --model or --oracle is required")),
        (None, true) => Ok(oracle_records(tuples, 2)),
        (Some(path), false) => {
            let state = regressor::load(path)?;
            if let Some(side) = input_side {
                if side != state.input_side() {
                    return Err(Failure::new(
                        Exit::Mismatch,
                        format!(
                            "model {} expects input side {}, configuration requests {side}",
                            path.display(),
                            state.input_side()
                        ),
                    ));
                }
            }
            Ok(records_from(tuples, &state.predict_tuples(tuples)?)?)
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    oracle: bool,
    input_side: Option<usize>,
    holdout: Option<f64>,
    out: Option<PathBuf>,
}

pub fn eval(file: Option<&Path>, args: &EvalArgs) -> CliResult<Exit> {
    let cfg: EvalConfig = resolve(file, args)?;
    let tuples = dataset_tuples(require(&cfg.dataset, "dataset")?, cfg.holdout)?;
    let records = score_tuples(&tuples, cfg.model.as_deref(), cfg.oracle, cfg.input_side)?;

    #[derive(Serialize)]
    struct Out {
        #[serde(flatten)]
        dice: Correlation,
        #[serde(skip_serializing_if = "Option::is_none")]
        hausdorff: Option<Correlation>,
    }
    let result = Out {
        dice: correlate(&records)?,
        hausdorff: correlate_hd(&records).transpose()?,
    };
    let summary = match &cfg.out {
        Some(dir) => {
            create_dir(dir)?;
            scatter_export(&records, &dir.join("scatter.csv"))?;
            Some(dir.join("summary.json"))
        }
        None => None,
    };
    emit("eval", &cfg, result, summary.as_deref())?;
    Ok(Exit::Ok)
}

/// Records from a scatter CSV or from a scored dataset.
fn load_records(
    records: Option<&Path>,
    dataset: Option<&Path>,
    model: Option<&Path>,
    oracle: bool,
    holdout: Option<f64>,
) -> CliResult<Vec<EvalRecord>> {
    match (records, dataset) {
        (Some(_), Some(_)) => Err(Failure::config("--records and --dataset are mutually exclusive")),
        (None, None) => Err(Failure::config("one of --records or --dataset is required")),
        (Some(path), None) => {
            if model.is_some() || oracle || holdout.is_some() {
                return Err(Failure::config(
                    "--model, --oracle and --holdout apply only to --dataset",
                ));
            }
            Ok(scatter_import(path)?)
        }
        (None, Some(dir)) => score_tuples(&dataset_tuples(dir, holdout)?, model, oracle, None),
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagConfig {
    records: Option<PathBuf>,
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    oracle: bool,
    holdout: Option<f64>,
    threshold: Option<f64>,
    percentile: Option<f64>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Flagged<'a> {
    sample_id: &'a str,
    object_id: u32,
    segmenter_id: &'a str,
    predicted: f64,
    true_dice: f64,
}

pub fn flag(file: Option<&Path>, args: &FlagArgs) -> CliResult<Exit> {
    let cfg: FlagConfig = resolve(file, args)?;
    let policy = match (cfg.threshold, cfg.percentile) {
        (Some(t), None) => FlagPolicy::Threshold(t),
        (None, Some(p)) => FlagPolicy::Percentile(p),
        _ => {
            return Err(Failure::config(
                "exactly one of --threshold or --percentile is required",
            ))
        }
    };
    policy.validate()?;
    let records = load_records(
        cfg.records.as_deref(),
        cfg.dataset.as_deref(),
        cfg.model.as_deref(),
        cfg.oracle,
        cfg.holdout,
    )?;
    let flagged: Vec<Flagged> = flag_low(&records, policy)?
        .into_iter()
        .map(|i| {
            let r = &records[i];
            Flagged {
                sample_id: &r.sample_id,
                object_id: r.object_id,
                segmenter_id: &r.segmenter_id,
                predicted: r.predicted,
                true_dice: r.true_dice,
            }
        })
        .collect();

    #[derive(Serialize)]
    struct Out<'a> {
        total: usize,
        count: usize,
        flagged: Vec<Flagged<'a>>,
    }
    let result = Out {
        total: records.len(),
        count: flagged.len(),
        flagged,
    };
    emit("flag", &cfg, result, cfg.out.as_deref())?;
    Ok(Exit::Ok)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    records: Option<PathBuf>,
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    oracle: bool,
    holdout: Option<f64>,
    out: Option<PathBuf>,
}

pub fn benchmark(file: Option<&Path>, args: &BenchmarkArgs) -> CliResult<Exit> {
    let cfg: BenchmarkConfig = resolve(file, args)?;
    let records = load_records(
        cfg.records.as_deref(),
        cfg.dataset.as_deref(),
        cfg.model.as_deref(),
        cfg.oracle,
        cfg.holdout,
    )?;

    #[derive(Serialize)]
    struct Out {
        ranking: Vec<BenchmarkEntry>,
    }
    emit(
        "benchmark",
        &cfg,
        Out {
            ranking: rank_segmenters(&records),
        },
        cfg.out.as_deref(),
    )?;
    Ok(Exit::Ok)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    records: Option<PathBuf>,
    dataset: Option<PathBuf>,
    model: Option<PathBuf>,
    oracle: bool,
    holdout: Option<f64>,
    priority: Vec<String>,
    out: Option<PathBuf>,
}

pub fn select(file: Option<&Path>, args: &SelectArgs) -> CliResult<Exit> {
    let cfg: SelectConfig = resolve(file, args)?;
    let records = load_records(
        cfg.records.as_deref(),
        cfg.dataset.as_deref(),
        cfg.model.as_deref(),
        cfg.oracle,
        cfg.holdout,
    )?;

    #[derive(Serialize)]
    struct Out {
        #[serde(flatten)]
        summary: SelectionReport,
        selections: Vec<Selection>,
    }
    let result = Out {
        summary: selection_report(&records, &cfg.priority)?,
        selections: select_per_sample(&records, &cfg.priority)?,
    };
    emit("select", &cfg, result, cfg.out.as_deref())?;
    Ok(Exit::Ok)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    heads: usize,
    batch_size: usize,
    step: f64,
    tolerance: f64,
    seed: Option<u64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            heads: 1,
            batch_size: 2,
            step: 1e-5,
            tolerance: 1e-4,
            seed: None,
        }
    }
}

pub fn grad_check(file: Option<&Path>, args: &GradCheckArgs) -> CliResult<Exit> {
    let mut cfg: GradCheckConfig = resolve(file, args)?;
    cfg.seed = Some(seed_or_env(cfg.seed)?);
    if cfg.batch_size == 0 || !(cfg.step > 0.0) || !(cfg.tolerance > 0.0) {
        return Err(Failure::config("batch_size, step and tolerance must be positive"));
    }
    let report: GradCheckReport = gradient_check(
        small_check_architecture(cfg.heads),
        cfg.seed.unwrap_or_default(),
        cfg.batch_size,
        cfg.step,
        cfg.tolerance,
    )?;
    eprintln!(
        "max relative error {:.3e} over {} parameters: {}",
        report.max_rel_error,
        report.param_count,
        if report.passed { "PASS" } else { "FAIL" }
    );
    let passed = report.passed;
    emit("grad-check", &cfg, report, None)?;
    Ok(if passed { Exit::Ok } else { Exit::CheckFailed })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    size: usize,
    trials: usize,
    noise: f64,
    seed: Option<u64>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            size: 16,
            trials: 20,
            noise: 0.0,
            seed: None,
        }
    }
}

pub fn reconstruct_demo(file: Option<&Path>, args: &ReconstructArgs) -> CliResult<Exit> {
    let mut cfg: ReconstructConfig = resolve(file, args)?;
    cfg.seed = Some(seed_or_env(cfg.seed)?);
    let summary: TrialSummary = reconstruction_trials(cfg.size, cfg.trials, cfg.noise, cfg.seed.unwrap_or_default())?;
    let calls = summary.calls_per_trial.iter().copied();
    eprintln!(
        "recovered {}/{} masks exactly, {}-{} oracle calls per trial",
        summary.exact,
        summary.trials,
        calls.clone().min().unwrap_or(0),
        calls.max().unwrap_or(0)
    );
    let exact = summary.exact == summary.trials;
    emit("reconstruct-demo", &cfg, summary, None)?;
    Ok(if exact { Exit::Ok } else { Exit::CheckFailed })
}
