//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 validation
//! failure, 4 I/O or decode error, 1 anything else.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{
    build_manifest, generate_synthetic_dataset, AnomalousSource, NormalSource, SplitRule,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::evaluator::{
    evaluate, read_score_csv, write_heatmap_csv, write_report, write_score_csv, ClassNegatives,
    EvalOptions,
};
use crate::features::{
    decode_feature_file, encode_feature_file, validate_manifest, validate_manifest_deep,
    write_manifest, FeatureSequence, Manifest, ManifestEntry, Split,
};
use crate::ftb::{apply_ftb_with, FtbMode, FtbOptions};
use crate::model::ModelConfig;
use crate::pipeline::{score_split, write_history};
use crate::trainer::{train, Optimizer, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";

#[derive(Debug, Parser)]
#[command(name = "wsvad", version, about = "Weakly-supervised driving-video anomaly detection on precomputed features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble a manifest from anomalous and normal source lists.
    BuildManifest(BuildManifestArgs),
    /// Check a manifest's invariants and the weak-supervision precondition.
    Validate(ValidateArgs),
    /// Generate a synthetic planted-anomaly dataset.
    Synth(SynthArgs),
    /// Apply a feature transformation to one feature file.
    Transform(TransformArgs),
    /// Train the detector on the manifest's training split.
    Train(TrainArgs),
    /// Write per-frame score CSVs for one split.
    Score(ScoreArgs),
    /// Compute frame-level AUCs from score CSVs.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct BuildManifestArgs {
    /// JSON lines of anomalous sources.
    #[arg(long)]
    anomalous: PathBuf,
    /// JSON lines of normal sources.
    #[arg(long)]
    normal: PathBuf,
    /// Send this fraction of anomalous sources to test; without it each
    /// source's own `split` field is used.
    #[arg(long)]
    test_fraction: Option<f64>,
    /// Seed for the test-fraction shuffle.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory feature paths are relative to [default: directory of --out].
    #[arg(long)]
    root: Option<PathBuf>,
    /// Output manifest path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Manifest (JSON lines) to check.
    #[arg(long)]
    manifest: PathBuf,
    /// Also decode every referenced feature file.
    #[arg(long, default_value_t = false)]
    deep: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Normal videos, all in the training split.
    #[arg(long, default_value_t = 40)]
    n_normal: usize,
    /// Anomalous videos; the last 30% (rounded) go to the test split.
    #[arg(long, default_value_t = 40)]
    n_anomaly: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 256)]
    frames: usize,
    /// Embedding dimension.
    #[arg(long, default_value_t = 32)]
    dim: usize,
    /// Frames in each planted anomaly interval.
    #[arg(long, default_value_t = 32)]
    anomaly_len: usize,
    /// Norm multiplier applied to anomalous frames.
    #[arg(long, default_value_t = 3.0)]
    magnitude_boost: f64,
    /// Standard deviation of per-frame Gaussian noise.
    #[arg(long, default_value_t = 0.1)]
    noise_sigma: f64,
    /// Lower end of the per-video scene scale range.
    #[arg(long, default_value_t = 0.5)]
    scene_scale_min: f64,
    /// Upper end of the per-video scene scale range.
    #[arg(long, default_value_t = 2.0)]
    scene_scale_max: f64,
    /// Rotation of anomalous frames, radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_3)]
    rotation: f64,
    /// Seed for every random draw in the generator.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    M1,
    M2,
    M3,
}

impl From<ModeArg> for FtbMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::M1 => FtbMode::M1,
            ModeArg::M2 => FtbMode::M2,
            ModeArg::M3 => FtbMode::M3,
        }
    }
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// m1 keeps features, m2 adds the temporal spectrum, m3 adds squashed appearance.
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Input `.ftbf` file.
    #[arg(long)]
    input: PathBuf,
    /// Output `.ftbf` file.
    #[arg(long)]
    output: PathBuf,
    /// Experimental: keep only the first N DCT coefficients in M2.
    #[arg(long)]
    dct_lowpass: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptimizerArg {
    Momentum,
    Adam,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Manifest whose train split is used.
    #[arg(long)]
    manifest: PathBuf,
    /// Feature transformation applied before snippet pooling.
    #[arg(long, value_enum, default_value = "m3")]
    ftb: ModeArg,
    /// Experimental: keep only the first N DCT coefficients in M2.
    #[arg(long)]
    dct_lowpass: Option<usize>,
    /// Seeds both parameter initialization and bag pairing.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Passes over the larger of the two training bag lists.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Top-k snippets per bag.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Magnitude hinge margin.
    #[arg(long, default_value_t = 100.0)]
    margin: f64,
    /// Weight of the magnitude hinge.
    #[arg(long, default_value_t = 1e-4)]
    alpha_mag: f64,
    /// Weight of the temporal smoothness term.
    #[arg(long, default_value_t = 8e-4)]
    beta_smooth: f64,
    /// Weight of the sparsity term.
    #[arg(long, default_value_t = 8e-4)]
    gamma_sparse: f64,
    /// Optimizer step size.
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// SGD with momentum 0.9, or Adam.
    #[arg(long, value_enum, default_value = "momentum")]
    optimizer: OptimizerArg,
    /// Frames pooled per snippet.
    #[arg(long, default_value_t = 16)]
    snippet_len: usize,
    /// Channels per encoder branch [default: input dim / 4].
    #[arg(long)]
    branch_dim: Option<usize>,
    /// Comma-separated conv dilations.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    dilations: Vec<usize>,
    /// Temporal kernel width of each conv branch (odd).
    #[arg(long, default_value_t = 3)]
    kernel_size: usize,
    /// Comma-separated scorer hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "512,32")]
    scorer_hidden: Vec<usize>,
    /// Output directory for the checkpoint, history and config.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Manifest listing the videos to score.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Which manifest split to score.
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Output directory, one `<video_id>.csv` per video.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassNegativesArg {
    WithinClass,
    AllVideos,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Manifest whose test split is evaluated.
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `<video_id>.csv` score files.
    #[arg(long)]
    scores: PathBuf,
    /// Output directory for `report.json` and `heatmaps/`.
    #[arg(long)]
    out: PathBuf,
    /// Negatives used for class-wise AUC.
    #[arg(long, value_enum, default_value = "within-class")]
    class_negatives: ClassNegativesArg,
    /// Also report the mean of per-video AUCs.
    #[arg(long = "macro", default_value_t = false)]
    per_video_macro: bool,
}

/// Exit code for an error that reached the top level.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Argument(_) | Error::Config(_) => EXIT_USAGE,
        Error::Validation(_) | Error::Evaluation { .. } | Error::Dataset(_) | Error::Manifest { .. } => {
            EXIT_VALIDATION
        }
        Error::Io { .. } | Error::Decode { .. } | Error::Checkpoint { .. } | Error::Json(_) => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

fn print_config(verb: &str, config: serde_json::Value) {
    println!("{}", json!({ "command": verb, "config": config }));
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    }
}

fn cmd_build_manifest(a: BuildManifestArgs) -> Result<i32> {
    let root = a
        .root
        .clone()
        .unwrap_or_else(|| a.out.parent().map(Path::to_path_buf).unwrap_or_default());
    print_config(
        "build-manifest",
        json!({
            "anomalous": a.anomalous, "normal": a.normal, "test_fraction": a.test_fraction,
            "seed": a.seed, "root": root, "out": a.out,
        }),
    );
    let anomalous: Vec<AnomalousSource> = read_jsonl(&a.anomalous)?;
    let normal: Vec<NormalSource> = read_jsonl(&a.normal)?;
    let rule = match a.test_fraction {
        Some(fraction) => SplitRule::TestFraction {
            fraction,
            seed: a.seed,
        },
        None => SplitRule::Explicit,
    };
    let entries = build_manifest(&anomalous, &normal, rule, &root)?;
    write_manifest(&a.out, &entries)?;
    Ok(EXIT_OK)
}

fn cmd_validate(a: ValidateArgs) -> Result<i32> {
    print_config("validate", json!({ "manifest": a.manifest, "deep": a.deep }));
    let manifest = Manifest::load(&a.manifest)?;
    let report = if a.deep {
        validate_manifest_deep(&manifest)
    } else {
        validate_manifest(&manifest.entries)
    };
    if report.is_valid() {
        println!("{}", json!({ "valid": true, "entries": manifest.entries.len() }));
        Ok(EXIT_OK)
    } else {
        for v in &report.violations {
            eprintln!("violation: {v}");
        }
        let list: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        println!("{}", json!({ "valid": false, "violations": list }));
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        n_normal: a.n_normal,
        n_anomaly: a.n_anomaly,
        frames: a.frames,
        dim: a.dim,
        anomaly_len: a.anomaly_len,
        magnitude_boost: a.magnitude_boost,
        noise_sigma: a.noise_sigma,
        scene_scale: (a.scene_scale_min, a.scene_scale_max),
        rotation: a.rotation,
        seed: a.seed,
    };
    print_config("synth", json!({ "synth": cfg, "out": a.out }));
    let out = generate_synthetic_dataset(&cfg, &a.out)?;
    if out.report.is_valid() {
        Ok(EXIT_OK)
    } else {
        for v in &out.report.violations {
            eprintln!("violation: {v}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_transform(a: TransformArgs) -> Result<i32> {
    let mode = FtbMode::from(a.mode);
    let options = FtbOptions {
        dct_lowpass: a.dct_lowpass,
    };
    print_config(
        "transform",
        json!({ "mode": mode, "options": options, "input": a.input, "output": a.output }),
    );
    let seq = decode_feature_file(&a.input)?;
    let out = apply_ftb_with(&seq, mode, &options);
    encode_feature_file(&FeatureSequence::new(out.data)?, &a.output)?;
    Ok(EXIT_OK)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let manifest = Manifest::load(&a.manifest)?;
    let report = validate_manifest(&manifest.entries);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    let first: &ManifestEntry = manifest
        .split(Split::Train)
        .next()
        .ok_or_else(|| Error::Validation(report.clone()))?;
    let input_dim = decode_feature_file(manifest.resolve(first))?.dim();
    let model_cfg = ModelConfig {
        input_dim,
        branch_dim: match a.branch_dim {
            Some(b) => b,
            None if input_dim % 4 == 0 => input_dim / 4,
            None => {
                return Err(Error::Config(format!(
                    "input dim {input_dim} is not divisible by 4; pass --branch-dim"
                )))
            }
        },
        dilations: a.dilations.clone(),
        kernel_size: a.kernel_size,
        scorer_hidden: a.scorer_hidden.clone(),
        seed: a.seed,
    };
    model_cfg.validate()?;
    let cfg = TrainConfig {
        k: a.k,
        margin: a.margin,
        alpha_mag: a.alpha_mag,
        beta_smooth: a.beta_smooth,
        gamma_sparse: a.gamma_sparse,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        snippet_len: a.snippet_len,
        seed: a.seed,
        ftb_mode: a.ftb.into(),
        ftb_options: FtbOptions {
            dct_lowpass: a.dct_lowpass,
        },
        optimizer: match a.optimizer {
            OptimizerArg::Momentum => Optimizer::Momentum,
            OptimizerArg::Adam => Optimizer::Adam,
        },
    };
    cfg.validate()?;
    print_config(
        "train",
        json!({ "manifest": a.manifest, "model": model_cfg, "train": cfg, "out": a.out }),
    );
    let outcome = train(&manifest, &model_cfg, &cfg)?;
    create_dir(&a.out)?;
    save_checkpoint(a.out.join(CHECKPOINT_FILE), &outcome.params)?;
    write_history(a.out.join(HISTORY_FILE), &outcome.history)?;
    let cfg_path = a.out.join(TRAIN_CONFIG_FILE);
    let mut text = serde_json::to_string_pretty(&cfg)?;
    text.push('\n');
    fs::write(&cfg_path, text).map_err(|e| Error::io(&cfg_path, e))?;
    if let Some(last) = outcome.history.last() {
        println!("{}", serde_json::to_string(last)?);
    }
    Ok(EXIT_OK)
}

fn load_train_config(model_dir: &Path) -> Result<TrainConfig> {
    let path = model_dir.join(TRAIN_CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_score(a: ScoreArgs) -> Result<i32> {
    let cfg = load_train_config(&a.model)?;
    let split = split_of(a.split);
    print_config(
        "score",
        json!({ "manifest": a.manifest, "model": a.model, "split": split, "train": cfg, "out": a.out }),
    );
    let manifest = Manifest::load(&a.manifest)?;
    let params = load_checkpoint(a.model.join(CHECKPOINT_FILE))?;
    let series = score_split(&manifest, split, &params, &cfg)?;
    create_dir(&a.out)?;
    for s in &series {
        write_score_csv(a.out.join(format!("{}.csv", s.video_id)), s)?;
    }
    Ok(EXIT_OK)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32> {
    let options = EvalOptions {
        class_negatives: match a.class_negatives {
            ClassNegativesArg::WithinClass => ClassNegatives::WithinClass,
            ClassNegativesArg::AllVideos => ClassNegatives::AllVideos,
        },
        per_video_macro: a.per_video_macro,
    };
    print_config(
        "evaluate",
        json!({
            "manifest": a.manifest, "scores": a.scores, "out": a.out,
            "class_negatives": options.class_negatives, "macro": options.per_video_macro,
        }),
    );
    let manifest = Manifest::load(&a.manifest)?;
    let test: Vec<ManifestEntry> = manifest.split(Split::Test).cloned().collect();
    let mut series = Vec::with_capacity(test.len());
    for e in &test {
        let path = a.scores.join(format!("{}.csv", e.video_id));
        if !path.is_file() {
            return Err(Error::Evaluation {
                video_id: e.video_id.clone(),
                message: format!("missing score file {}", path.display()),
            });
        }
        series.push(read_score_csv(&path, &e.video_id)?);
    }
    let report = evaluate(&test, &series, &options)?;
    let heatmaps = a.out.join("heatmaps");
    create_dir(&heatmaps)?;
    for (e, s) in test.iter().zip(&series) {
        write_heatmap_csv(heatmaps.join(format!("{}.csv", e.video_id)), s, e)?;
    }
    write_report(a.out.join("report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(EXIT_OK)
}

/// Parses `argv` (including the program name) and runs the verb.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::BuildManifest(a) => cmd_build_manifest(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Transform(a) => cmd_transform(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
