//! Command-line surface for the recognition pipeline: decomposition-based
//! denoising, descriptor extraction, dictionary training, evaluation, and
//! synthetic corpus generation. All human-readable text goes to stderr;
//! files are the only data outputs, and every artifact carries the
//! effective configuration fingerprint so runs are reproducible and
//! mismatches are detectable.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scenechar::imageio::{self, GrayImage};
use scenechar::matrix;
use scenechar::pipeline::{
    self, Classifier, CorpusManifest, DenoiseMode, EvalOptions, Model, PipelineConfig, Split,
};
use scenechar::rpca;
use scenechar::synth::{self, NoiseSpec, SynthSpec};

#[derive(Parser)]
#[command(
    name = "scenechar",
    about = "Scene character recognition: low-rank image denoising, gradient-histogram features, sparse-representation classification",
    version
)]
struct Cli {
    /// Flat key-value configuration file (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (0 = one per core). Outputs never depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Random seed for generation commands.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image or matrix into low-rank (clean) and sparse (noise) parts.
    Denoise(DenoiseArgs),
    /// Write gradient-histogram descriptors for a corpus as CSV.
    Hog(HogArgs),
    /// Build a classification dictionary from a corpus manifest.
    Train(TrainArgs),
    /// Score a trained model against a manifest's test split.
    Eval(EvalArgs),
    /// Generate a reproducible synthetic glyph corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct DenoiseArgs {
    /// Input: a PGM/PNG image, or a `rows cols` headed text matrix (.txt).
    input: PathBuf,
    /// Low-rank output path (default: INPUT stem + `.clean` + matching extension).
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Sparse-component output path (default: INPUT stem + `.noise`).
    /// A `.txt` extension writes the exact values as a text matrix; an
    /// image extension writes a rendering with zero mapped to mid-gray.
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Optional side-by-side original | clean | noise PGM panel.
    #[arg(long)]
    panel: Option<PathBuf>,
}

#[derive(Args)]
struct HogArgs {
    /// Corpus manifest CSV (`path,class,split`).
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV: one row per image, path first, then descriptor entries.
    #[arg(long)]
    output: PathBuf,
    /// Which manifest split to describe.
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    split: SplitChoice,
    /// Toggle the denoising stage of the preprocessing path.
    #[arg(long, value_enum)]
    denoise: Option<OnOff>,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus manifest CSV (`path,class,split`).
    #[arg(long)]
    manifest: PathBuf,
    /// Model file to write (JSON).
    #[arg(long)]
    output: PathBuf,
    /// Toggle the denoising stage of the preprocessing path.
    #[arg(long, value_enum)]
    denoise: Option<OnOff>,
}

#[derive(Args)]
struct EvalArgs {
    /// Corpus manifest CSV (`path,class,split`).
    #[arg(long)]
    manifest: PathBuf,
    /// Trained model file (JSON).
    #[arg(long)]
    model: PathBuf,
    /// Evaluation report to write (JSON).
    #[arg(long)]
    report: PathBuf,
    /// Confusion matrix CSV to write alongside the report.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Classifier to score with.
    #[arg(long, value_enum)]
    classifier: Option<ClassifierChoice>,
    /// Sparsity multiplier for the sparse classifier.
    #[arg(long)]
    lambda: Option<f64>,
    /// Score once per multiplier in {1e-3, 1e-2, 1e-1}, writing one report
    /// per value with the multiplier spliced into the file name.
    #[arg(long)]
    lambda_sweep: bool,
    /// Record every sample's truth, prediction, and residual margin.
    #[arg(long)]
    per_sample: bool,
    /// Toggle the denoising stage of the preprocessing path.
    #[arg(long, value_enum)]
    denoise: Option<OnOff>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write images and `manifest.csv` into.
    #[arg(long)]
    output_dir: PathBuf,
    /// Comma-separated glyph names (digits and a letter subset).
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    /// Images per class; the first half (rounded up) becomes the train split.
    #[arg(long)]
    per_class: Option<usize>,
    /// Gaussian noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Salt-and-pepper corruption probability per pixel.
    #[arg(long)]
    salt_pepper: Option<f64>,
    /// Square image side in pixels.
    #[arg(long)]
    side: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassifierChoice {
    Src,
    Nn,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

/// The flat configuration file schema. Every key is optional; omitted keys
/// keep their built-in defaults. Unknown keys are rejected.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    image_side: Option<usize>,
    /// `off`, `per-image`, or `per-class`.
    denoise: Option<String>,
    rpca_lambda: Option<f64>,
    rpca_mu0: Option<f64>,
    rpca_rho: Option<f64>,
    rpca_mu_cap: Option<f64>,
    rpca_tol: Option<f64>,
    rpca_max_iter: Option<usize>,
    hog_cell_size: Option<usize>,
    hog_bins: Option<usize>,
    hog_block_size: Option<usize>,
    hog_block_stride: Option<usize>,
    hog_signed: Option<bool>,
    hog_norm_epsilon: Option<f64>,
    /// Sparsity multiplier for the sparse classifier.
    lambda: Option<f64>,
    /// `src` or `nn`.
    classifier: Option<String>,
}

/// Effective settings after merging defaults, the config file, and flags.
struct Effective {
    pipeline: PipelineConfig,
    lambda: f64,
    classifier: Classifier,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("bad config file {}", path.display()))
}

fn parse_denoise_mode(s: &str) -> Result<DenoiseMode> {
    match s {
        "off" => Ok(DenoiseMode::Off),
        "per-image" => Ok(DenoiseMode::PerImage),
        "per-class" => Ok(DenoiseMode::PerClass),
        other => bail!("denoise must be `off`, `per-image`, or `per-class`, got {other:?}"),
    }
}

fn effective_config(file: &FileConfig, denoise_flag: Option<OnOff>) -> Result<Effective> {
    let mut pipeline = PipelineConfig::default();
    if let Some(v) = file.image_side {
        pipeline.image_side = v;
    }
    if let Some(s) = &file.denoise {
        pipeline.denoise = parse_denoise_mode(s)?;
    }
    if let Some(v) = file.rpca_lambda {
        pipeline.rpca.lambda = Some(v);
    }
    if let Some(v) = file.rpca_mu0 {
        pipeline.rpca.mu0 = Some(v);
    }
    if let Some(v) = file.rpca_rho {
        pipeline.rpca.rho = v;
    }
    if let Some(v) = file.rpca_mu_cap {
        pipeline.rpca.mu_cap = v;
    }
    if let Some(v) = file.rpca_tol {
        pipeline.rpca.tol = v;
    }
    if let Some(v) = file.rpca_max_iter {
        pipeline.rpca.max_iter = v;
    }
    if let Some(v) = file.hog_cell_size {
        pipeline.hog.cell_size = v;
    }
    if let Some(v) = file.hog_bins {
        pipeline.hog.bins = v;
    }
    if let Some(v) = file.hog_block_size {
        pipeline.hog.block_size = v;
    }
    if let Some(v) = file.hog_block_stride {
        pipeline.hog.block_stride = v;
    }
    if let Some(v) = file.hog_signed {
        pipeline.hog.signed = v;
    }
    if let Some(v) = file.hog_norm_epsilon {
        pipeline.hog.norm_epsilon = v;
    }
    // The flag toggles the stage; `on` engages the configured batch mode,
    // falling back to per-image when the file disabled the stage entirely.
    match denoise_flag {
        Some(OnOff::Off) => pipeline.denoise = DenoiseMode::Off,
        Some(OnOff::On) => {
            if pipeline.denoise == DenoiseMode::Off {
                pipeline.denoise = DenoiseMode::PerImage;
            }
        }
        None => {}
    }
    let lambda = file.lambda.unwrap_or(1e-2);
    if !lambda.is_finite() || lambda <= 0.0 {
        bail!("lambda must be positive and finite, got {lambda}");
    }
    let classifier = match file.classifier.as_deref() {
        None | Some("src") => Classifier::Src,
        Some("nn") => Classifier::Nn,
        Some(other) => bail!("classifier must be `src` or `nn`, got {other:?}"),
    };
    Ok(Effective {
        pipeline,
        lambda,
        classifier,
    })
}

/// Sidecar metadata written next to artifacts that have no natural place
/// to embed the configuration fingerprint themselves.
#[derive(serde::Serialize)]
struct SidecarMeta<'a> {
    command: &'a str,
    config_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

fn write_sidecar(artifact: &Path, meta: &SidecarMeta) -> Result<()> {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    name.push_str(".meta.json");
    let path = artifact.with_file_name(name);
    std::fs::write(&path, serde_json::to_string_pretty(meta)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn is_matrix_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("txt") | Some("mat")
    )
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    let ext = path.extension().map(|e| e.to_string_lossy().into_owned());
    let name = match (stem, ext) {
        (Some(stem), Some(ext)) => format!("{stem}.{suffix}.{ext}"),
        (Some(stem), None) => format!("{stem}.{suffix}"),
        _ => suffix.to_string(),
    };
    path.with_file_name(name)
}

fn cmd_denoise(cli: &Cli, args: &DenoiseArgs) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let effective = effective_config(&file, None)?;
    let rpca_config = &effective.pipeline.rpca;
    if !args.input.exists() {
        bail!("input path {} does not exist", args.input.display());
    }
    let clean_path = args
        .clean
        .clone()
        .unwrap_or_else(|| with_suffix(&args.input, "clean"));
    let noise_path = args
        .noise
        .clone()
        .unwrap_or_else(|| with_suffix(&args.input, "noise"));

    let (original, result) = if is_matrix_path(&args.input) {
        let reader = BufReader::new(
            File::open(&args.input)
                .with_context(|| format!("cannot open {}", args.input.display()))?,
        );
        let x = matrix::read_matrix_text(reader)?;
        let result = rpca::rpca_decompose(&x, rpca_config)?;
        (x, result)
    } else {
        let img = imageio::load_image(&args.input)?;
        let x = img.to_matrix();
        let result = rpca::rpca_decompose(&x, rpca_config)?;
        (x, result)
    };
    if !result.converged {
        eprintln!(
            "warning: decomposition stopped at the iteration cap ({}) before reaching tolerance",
            result.iterations
        );
    }

    write_component(&clean_path, &result.low_rank, Component::Clean)?;
    write_component(&noise_path, &result.sparse, Component::Noise)?;
    if let Some(panel_path) = &args.panel {
        let panel = imageio::hstack_panel(&[
            GrayImage::from_matrix_clamped(&original),
            GrayImage::from_matrix_clamped(&result.low_rank),
            noise_rendering(&result.sparse),
        ])?;
        imageio::write_pgm(&panel, panel_path)?;
    }
    let meta = SidecarMeta {
        command: "denoise",
        config_fingerprint: pipeline::fingerprint(rpca_config),
        seed: None,
        extra: Some(serde_json::json!({
            "iterations": result.iterations,
            "converged": result.converged,
        })),
    };
    write_sidecar(&clean_path, &meta)?;
    eprintln!(
        "denoised {} in {} iterations -> {}, {}",
        args.input.display(),
        result.iterations,
        clean_path.display(),
        noise_path.display()
    );
    Ok(())
}

enum Component {
    Clean,
    Noise,
}

/// Renders a signed sparse component for image output: zero maps to
/// mid-gray, +/-1 to white/black.
fn noise_rendering(e: &matrix::DenseMatrix) -> GrayImage {
    let shifted = e.map(|v| 0.5 + 0.5 * v);
    GrayImage::from_matrix_clamped(&shifted)
}

fn write_component(path: &Path, m: &matrix::DenseMatrix, kind: Component) -> Result<()> {
    if is_matrix_path(path) {
        let mut writer = BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        );
        matrix::write_matrix_text(m, &mut writer)?;
        writer.flush()?;
    } else {
        let img = match kind {
            Component::Clean => GrayImage::from_matrix_clamped(m),
            Component::Noise => noise_rendering(m),
        };
        imageio::write_pgm(&img, path)?;
    }
    Ok(())
}

fn cmd_hog(cli: &Cli, args: &HogArgs) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let effective = effective_config(&file, args.denoise)?;
    let config = &effective.pipeline;
    config.validate()?;
    let manifest = CorpusManifest::read_csv(&args.manifest)?;
    let wanted = |split: Split| match args.split {
        SplitChoice::All => true,
        SplitChoice::Train => split == Split::Train,
        SplitChoice::Test => split == Split::Test,
    };
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| wanted(e.split))
        .cloned()
        .collect();
    if entries.is_empty() {
        bail!("no manifest entries in the requested split");
    }
    let subset = CorpusManifest::new(entries, manifest.image_side)?;
    let (rows, warnings) = pipeline::describe_manifest(&subset, config)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }

    let mut writer = BufWriter::new(
        File::create(&args.output)
            .with_context(|| format!("cannot create {}", args.output.display()))?,
    );
    for (path, descriptor) in &rows {
        let mut line = path.display().to_string();
        for v in descriptor.iter() {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    let meta = SidecarMeta {
        command: "hog",
        config_fingerprint: pipeline::fingerprint(config),
        seed: None,
        extra: Some(serde_json::json!({
            "rows": rows.len(),
            "descriptor_len": config.hog.descriptor_len(config.image_side, config.image_side),
            "skipped": warnings.len(),
        })),
    };
    write_sidecar(&args.output, &meta)?;
    eprintln!(
        "wrote {} descriptor rows to {}",
        rows.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let effective = effective_config(&file, args.denoise)?;
    let manifest = CorpusManifest::read_csv(&args.manifest)?;
    let model = pipeline::build_dictionary(&manifest, &effective.pipeline)?;
    for warning in &model.warnings {
        eprintln!("warning: {warning}");
    }
    model.save(&args.output)?;
    eprintln!(
        "trained dictionary with {} atoms over {} classes -> {} (config {})",
        model.dictionary.len(),
        model.dictionary.class_ids().len(),
        args.output.display(),
        &model.config_fingerprint[..12]
    );
    Ok(())
}

fn lambda_file_tag(lambda: f64) -> String {
    format!("{lambda:e}").replace('.', "_")
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    let effective = effective_config(&file, args.denoise)?;
    let manifest = CorpusManifest::read_csv(&args.manifest)?;
    let model = Model::load(&args.model)?;
    let classifier = match args.classifier {
        Some(ClassifierChoice::Src) => Classifier::Src,
        Some(ClassifierChoice::Nn) => Classifier::Nn,
        None => effective.classifier,
    };
    let lambdas: Vec<f64> = if args.lambda_sweep {
        vec![1e-3, 1e-2, 1e-1]
    } else {
        vec![args.lambda.unwrap_or(effective.lambda)]
    };
    for &lambda in &lambdas {
        let options = EvalOptions {
            classifier,
            lambda,
            per_sample: args.per_sample,
        };
        let report = pipeline::evaluate(&manifest, &model, &effective.pipeline, &options)?;
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }
        let (report_path, confusion_path) = if args.lambda_sweep {
            let tag = lambda_file_tag(lambda);
            (
                with_suffix(&args.report, &format!("lambda-{tag}")),
                args.confusion
                    .as_ref()
                    .map(|p| with_suffix(p, &format!("lambda-{tag}"))),
            )
        } else {
            (args.report.clone(), args.confusion.clone())
        };
        std::fs::write(&report_path, report.to_json())
            .with_context(|| format!("cannot write {}", report_path.display()))?;
        if let Some(confusion_path) = confusion_path {
            std::fs::write(&confusion_path, report.confusion_csv())
                .with_context(|| format!("cannot write {}", confusion_path.display()))?;
        }
        eprintln!(
            "{} accuracy {:.4} ({}/{}) at lambda {lambda:e} -> {}",
            classifier.as_str(),
            report.accuracy,
            report.correct,
            report.total,
            report_path.display()
        );
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::default();
    if !args.classes.is_empty() {
        spec.classes = args.classes.clone();
    }
    if let Some(v) = args.per_class {
        spec.per_class = v;
    }
    if let Some(v) = args.sigma {
        spec.noise.gaussian_sigma = v;
    }
    if let Some(v) = args.salt_pepper {
        spec.noise.salt_pepper = v;
    }
    if let Some(v) = args.side {
        spec.side = v;
    }
    let corpus = synth::synth_corpus(&args.output_dir, &spec, cli.seed)?;
    let corrupted: serde_json::Map<String, serde_json::Value> = corpus
        .manifest
        .entries
        .iter()
        .zip(&corpus.corrupted_counts)
        .map(|(entry, &count)| {
            let name = entry
                .path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name, serde_json::Value::from(count))
        })
        .collect();
    let meta = SidecarMeta {
        command: "synth",
        config_fingerprint: pipeline::fingerprint(&spec),
        seed: Some(cli.seed),
        extra: Some(serde_json::json!({
            "corrupted_pixels": corrupted,
            "images": corpus.manifest.entries.len(),
        })),
    };
    write_sidecar(&corpus.manifest_path, &meta)?;
    eprintln!(
        "generated {} images over {} classes -> {}",
        corpus.manifest.entries.len(),
        spec.classes.len(),
        args.output_dir.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    match &cli.command {
        Command::Denoise(args) => cmd_denoise(cli, args),
        Command::Hog(args) => cmd_hog(cli, args),
        Command::Train(args) => cmd_train(cli, args),
        Command::Eval(args) => cmd_eval(cli, args),
        Command::Synth(args) => cmd_synth(cli, args),
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
