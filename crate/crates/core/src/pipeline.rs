//! End-to-end orchestration: corpus manifests, the shared
//! preprocess-denoise-describe path, dictionary training, model
//! serialization with config fingerprints, and evaluation with a confusion
//! matrix. Per-image work runs in parallel but collects in manifest order,
//! so results never depend on worker count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hog::{self, HogConfig};
use crate::imageio::{self, GrayImage};
use crate::matrix::DenseMatrix;
use crate::rpca::{self, RpcaConfig};
use crate::sparse::{self, Dictionary, SolverStatus};

/// Which half of the corpus an entry belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One corpus image: where it lives, what it depicts, and which split.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class: String,
    pub split: Split,
}

/// A corpus listing, read from and written as `path,class,split` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    /// Side length images are resized to before description.
    pub image_side: usize,
}

impl CorpusManifest {
    /// Builds a manifest after checking path uniqueness.
    pub fn new(entries: Vec<ManifestEntry>, image_side: usize) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for entry in &entries {
            if !seen.insert(&entry.path) {
                return Err(Error::InvalidInput(format!(
                    "duplicate manifest path {}",
                    entry.path.display()
                )));
            }
        }
        Ok(Self {
            entries,
            image_side,
        })
    }

    /// Reads a manifest CSV. Relative entry paths resolve against the
    /// manifest file's directory.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::ManifestParse {
                path: path.to_path_buf(),
                row: 0,
                message: e.to_string(),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::ManifestParse {
                path: path.to_path_buf(),
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let expected = ["path", "class", "split"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::ManifestParse {
                path: path.to_path_buf(),
                row: 0,
                message: format!("header must be `path,class,split`, got {headers:?}"),
            });
        }
        let mut entries = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| Error::ManifestParse {
                path: path.to_path_buf(),
                row,
                message: e.to_string(),
            })?;
            let field = |idx: usize, name: &str| -> Result<String> {
                let value = record.get(idx).unwrap_or("").trim();
                if value.is_empty() {
                    return Err(Error::ManifestParse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("empty {name}"),
                    });
                }
                Ok(value.to_string())
            };
            let raw_path = field(0, "path")?;
            let class = field(1, "class")?;
            let split_str = field(2, "split")?;
            let split = Split::parse(&split_str).ok_or_else(|| Error::ManifestParse {
                path: path.to_path_buf(),
                row,
                message: format!("split must be `train` or `test`, got {split_str:?}"),
            })?;
            let entry_path = PathBuf::from(&raw_path);
            let resolved = if entry_path.is_absolute() {
                entry_path
            } else {
                base.join(entry_path)
            };
            entries.push(ManifestEntry {
                path: resolved,
                class,
                split,
            });
        }
        Self::new(entries, 32).map_err(|e| match e {
            Error::InvalidInput(message) => Error::ManifestParse {
                path: path.to_path_buf(),
                row: 0,
                message,
            },
            other => other,
        })
    }

    /// Writes the manifest as CSV. Paths are written as provided.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["path", "class", "split"]).map_err(csv_io)?;
        for entry in &self.entries {
            out.write_record([
                entry.path.to_string_lossy().as_ref(),
                entry.class.as_str(),
                entry.split.as_str(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Entries of one split, with their manifest positions.
    pub fn split_entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv write failed: {e}"))
}

/// Where the decomposition-based denoiser runs in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiseMode {
    /// No denoising.
    Off,
    /// Each image is decomposed as its own pixel-grid matrix.
    PerImage,
    /// Images of one class are vectorized and stacked column-wise into a
    /// single matrix per class, decomposed once per batch.
    PerClass,
}

/// The full preprocessing configuration shared by training and evaluation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Images are resized to this square side before description.
    pub image_side: usize,
    /// Denoising stage placement.
    pub denoise: DenoiseMode,
    /// Decomposition parameters for the denoiser.
    pub rpca: RpcaConfig,
    /// Descriptor parameters.
    pub hog: HogConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            denoise: DenoiseMode::PerImage,
            rpca: RpcaConfig::default(),
            hog: HogConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 {
            return Err(Error::InvalidConfig("image_side must be positive".into()));
        }
        self.rpca.validate()?;
        self.hog.validate(self.image_side, self.image_side)
    }
}

/// SHA-256 over a value's canonical JSON, as lowercase hex.
pub fn fingerprint<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serialization never fails");
    let digest = Sha256::digest(json.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Loads, resizes, and (depending on the mode) denoises one split of the
/// corpus. Output order matches `entries`; `None` marks images that were
/// dropped with a warning appended to `warnings`.
fn preprocess_split(
    entries: &[&ManifestEntry],
    config: &PipelineConfig,
) -> Result<Vec<GrayImage>> {
    let loaded: Vec<Result<GrayImage>> = entries
        .par_iter()
        .map(|entry| {
            let img = imageio::load_image(&entry.path)?;
            Ok(imageio::resize_bilinear(&img, config.image_side)?.with_label(&entry.class))
        })
        .collect();
    let mut images = Vec::with_capacity(loaded.len());
    for result in loaded {
        images.push(result?);
    }

    match config.denoise {
        DenoiseMode::Off => Ok(images),
        DenoiseMode::PerImage => {
            let denoised: Vec<Result<GrayImage>> = images
                .par_iter()
                .map(|img| Ok(rpca::denoise_image(img, &config.rpca)?.clean))
                .collect();
            let mut out = Vec::with_capacity(denoised.len());
            for result in denoised {
                out.push(result?);
            }
            Ok(out)
        }
        DenoiseMode::PerClass => {
            // Group indices by class in first-appearance order.
            let mut class_order: Vec<&str> = Vec::new();
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, entry) in entries.iter().enumerate() {
                if !groups.contains_key(entry.class.as_str()) {
                    class_order.push(&entry.class);
                }
                groups.entry(&entry.class).or_default().push(i);
            }
            let batches: Vec<Result<(Vec<usize>, Vec<GrayImage>)>> = class_order
                .par_iter()
                .map(|class| {
                    let indices = &groups[class];
                    let batch: Vec<GrayImage> =
                        indices.iter().map(|&i| images[i].clone()).collect();
                    let cleans = rpca::denoise_stack(&batch, &config.rpca)?;
                    Ok((indices.clone(), cleans))
                })
                .collect();
            let mut out: Vec<Option<GrayImage>> = vec![None; images.len()];
            for batch in batches {
                let (indices, cleans) = batch?;
                for (i, clean) in indices.into_iter().zip(cleans) {
                    out[i] = Some(clean);
                }
            }
            Ok(out.into_iter().map(|img| img.expect("every index filled")).collect())
        }
    }
}

/// Descriptors for one split, in entry order. Images whose descriptor is
/// numerically zero are returned as `None` with a warning recorded.
fn describe_split(
    entries: &[&ManifestEntry],
    config: &PipelineConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<Option<nalgebra::DVector<f64>>>> {
    let images = preprocess_split(entries, config)?;
    let described: Vec<Result<Option<nalgebra::DVector<f64>>>> = images
        .par_iter()
        .map(|img| {
            let descriptor = hog::hog_descriptor(img, &config.hog)?;
            let v = nalgebra::DVector::from_vec(descriptor.values);
            if v.norm() < 1e-12 {
                return Ok(None);
            }
            Ok(Some(v))
        })
        .collect();
    let mut out = Vec::with_capacity(described.len());
    for (entry, result) in entries.iter().zip(described) {
        let descriptor = result?;
        if descriptor.is_none() {
            warnings.push(format!(
                "skipping {}: descriptor is numerically zero (constant image)",
                entry.path.display()
            ));
        }
        out.push(descriptor);
    }
    Ok(out)
}

/// A trained model: the dictionary plus the exact configuration that
/// produced it, with fingerprints for mismatch detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub dictionary: Dictionary,
    pub config: PipelineConfig,
    /// Fingerprint of the full pipeline configuration.
    pub config_fingerprint: String,
    /// Fingerprint of the descriptor configuration alone.
    pub hog_fingerprint: String,
    /// Fingerprint of the decomposition configuration alone.
    pub rpca_fingerprint: String,
    /// Warnings raised at training time (skipped images).
    pub warnings: Vec<String>,
}

/// Serialized form of [`Model`].
#[derive(serde::Serialize, serde::Deserialize)]
struct ModelFile {
    feature_dim: usize,
    atom_count: usize,
    /// Column-major atom entries.
    atoms: Vec<f64>,
    col_class: Vec<usize>,
    class_ids: Vec<String>,
    config: PipelineConfig,
    config_fingerprint: String,
    hog_fingerprint: String,
    rpca_fingerprint: String,
    warnings: Vec<String>,
}

impl Model {
    /// Serializes the model as JSON.
    pub fn to_json(&self) -> String {
        let atoms = self.dictionary.atoms();
        let file = ModelFile {
            feature_dim: atoms.nrows(),
            atom_count: atoms.ncols(),
            atoms: atoms.as_slice().to_vec(),
            col_class: self.dictionary.col_class().to_vec(),
            class_ids: self.dictionary.class_ids().to_vec(),
            config: self.config.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            hog_fingerprint: self.hog_fingerprint.clone(),
            rpca_fingerprint: self.rpca_fingerprint.clone(),
            warnings: self.warnings.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization never fails")
    }

    /// Parses a model from JSON, re-validating dictionary invariants and
    /// fingerprints.
    pub fn from_json(json: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(json)?;
        if file.atoms.len() != file.feature_dim * file.atom_count {
            return Err(Error::InvalidInput(format!(
                "model holds {} atom entries, expected {} x {}",
                file.atoms.len(),
                file.feature_dim,
                file.atom_count
            )));
        }
        let atoms =
            DenseMatrix::from_column_slice(file.feature_dim, file.atom_count, &file.atoms);
        let dictionary = Dictionary::from_normalized(atoms, file.col_class, file.class_ids)?;
        let expected = fingerprint(&file.config);
        if expected != file.config_fingerprint {
            return Err(Error::FingerprintMismatch {
                model: file.config_fingerprint,
                eval: expected,
            });
        }
        Ok(Model {
            dictionary,
            config: file.config,
            config_fingerprint: file.config_fingerprint,
            hog_fingerprint: file.hog_fingerprint,
            rpca_fingerprint: file.rpca_fingerprint,
            warnings: file.warnings,
        })
    }

    /// Writes the model JSON to a file.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Reads a model JSON file.
    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        Self::from_json(&json)
    }
}

/// Trains a dictionary over the manifest's train split: every image runs
/// load -> resize -> denoise (per config) -> descriptor, and the surviving
/// descriptors become normalized dictionary columns in manifest order.
pub fn build_dictionary(manifest: &CorpusManifest, config: &PipelineConfig) -> Result<Model> {
    config.validate()?;
    let entries = manifest.split_entries(Split::Train);
    if entries.is_empty() {
        return Err(Error::EmptySplit {
            split: "train".into(),
        });
    }
    let mut warnings = Vec::new();
    let descriptors = describe_split(&entries, config, &mut warnings)?;

    let kept: Vec<(usize, &nalgebra::DVector<f64>)> = descriptors
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.as_ref().map(|v| (i, v)))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptySplit {
            split: "train (all images skipped)".into(),
        });
    }
    let feature_dim = kept[0].1.len();
    let mut atoms = DenseMatrix::zeros(feature_dim, kept.len());
    let mut labels = Vec::with_capacity(kept.len());
    for (slot, (entry_idx, descriptor)) in kept.iter().enumerate() {
        atoms.set_column(slot, *descriptor);
        labels.push(entries[*entry_idx].class.clone());
    }
    let dictionary = Dictionary::new(atoms, &labels)?;
    Ok(Model {
        dictionary,
        config: config.clone(),
        config_fingerprint: fingerprint(config),
        hog_fingerprint: fingerprint(&config.hog),
        rpca_fingerprint: fingerprint(&config.rpca),
        warnings,
    })
}

/// Which classifier the evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Src,
    Nn,
}

impl Classifier {
    pub fn as_str(self) -> &'static str {
        match self {
            Classifier::Src => "src",
            Classifier::Nn => "nn",
        }
    }
}

/// One classified test sample.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SampleOutcome {
    pub path: String,
    pub truth: String,
    pub predicted: String,
    /// Difference between the smallest and second-smallest class residuals;
    /// larger means a more confident decision.
    pub residual_margin: f64,
}

/// Aggregate evaluation results.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Per-class accuracy for classes with at least one scored sample.
    pub per_class_accuracy: BTreeMap<String, f64>,
    /// Rows are truth, columns are predictions, both in `class_ids` order.
    pub confusion: Vec<Vec<usize>>,
    /// Class order underlying the confusion matrix.
    pub class_ids: Vec<String>,
    pub total: usize,
    pub correct: usize,
    pub classifier: Classifier,
    /// The l1 multiplier, present for the sparse classifier.
    pub lambda: Option<f64>,
    pub config_fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_sample: Option<Vec<SampleOutcome>>,
    pub warnings: Vec<String>,
}

/// Smallest and second-smallest of a residual slice.
fn residual_margin(residuals: &[f64]) -> f64 {
    let mut smallest = f64::INFINITY;
    let mut second = f64::INFINITY;
    for &r in residuals {
        if r < smallest {
            second = smallest;
            smallest = r;
        } else if r < second {
            second = r;
        }
    }
    if second.is_finite() {
        second - smallest
    } else {
        0.0
    }
}

/// Options for [`evaluate`].
#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub classifier: Classifier,
    /// l1 multiplier for the sparse classifier.
    pub lambda: f64,
    /// Include per-sample outcomes in the report.
    pub per_sample: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            classifier: Classifier::Src,
            lambda: 1e-2,
            per_sample: false,
        }
    }
}

/// Scores the manifest's test split against a trained model.
///
/// The evaluation config must fingerprint-match the one the model was
/// trained with; every test image runs the identical preprocessing path.
/// Test entries of classes absent from the dictionary are skipped with a
/// warning, as are degenerate zero-descriptor images.
pub fn evaluate(
    manifest: &CorpusManifest,
    model: &Model,
    config: &PipelineConfig,
    options: &EvalOptions,
) -> Result<EvalReport> {
    config.validate()?;
    let eval_fingerprint = fingerprint(config);
    if eval_fingerprint != model.config_fingerprint {
        return Err(Error::FingerprintMismatch {
            model: model.config_fingerprint.clone(),
            eval: eval_fingerprint,
        });
    }

    let entries = manifest.split_entries(Split::Test);
    if entries.is_empty() {
        return Err(Error::EmptySplit {
            split: "test".into(),
        });
    }

    let dict = &model.dictionary;
    let class_ids = dict.class_ids().to_vec();
    let class_index: BTreeMap<&str, usize> = class_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();

    let mut warnings = Vec::new();
    // Split entries into scorable ones and unknown-class skips first, so
    // per-class denoising batches only what will be scored.
    let mut scorable = Vec::new();
    for entry in &entries {
        if class_index.contains_key(entry.class.as_str()) {
            scorable.push(*entry);
        } else {
            warnings.push(format!(
                "skipping {}: class {:?} has no training samples",
                entry.path.display(),
                entry.class
            ));
        }
    }
    if scorable.is_empty() {
        return Err(Error::EmptySplit {
            split: "test (no scorable classes)".into(),
        });
    }

    let descriptors = describe_split(&scorable, config, &mut warnings)?;

    enum Scored {
        Skipped,
        Outcome {
            truth_idx: usize,
            predicted_idx: usize,
            margin: f64,
            degraded: bool,
        },
    }

    let results: Vec<Result<Scored>> = scorable
        .par_iter()
        .zip(descriptors.par_iter())
        .map(|(entry, descriptor)| {
            let Some(y) = descriptor else {
                return Ok(Scored::Skipped);
            };
            let truth_idx = class_index[entry.class.as_str()];
            match options.classifier {
                Classifier::Src => {
                    let code = sparse::src_classify(dict, y, options.lambda)?;
                    Ok(Scored::Outcome {
                        truth_idx,
                        predicted_idx: code.predicted_index,
                        margin: residual_margin(&code.residuals),
                        degraded: code.status == SolverStatus::Degraded,
                    })
                }
                Classifier::Nn => {
                    let normalized = y / y.norm();
                    // Per-class squared distance on the unit sphere:
                    // min over class atoms of ||y - d||^2 = 2 - 2 max sim.
                    let sims = dict.atoms().transpose() * &normalized;
                    let mut class_best = vec![f64::NEG_INFINITY; class_ids.len()];
                    for (j, &sim) in sims.iter().enumerate() {
                        let k = dict.col_class()[j];
                        if sim > class_best[k] {
                            class_best[k] = sim;
                        }
                    }
                    let residuals: Vec<f64> =
                        class_best.iter().map(|&s| 2.0 - 2.0 * s).collect();
                    let m = sparse::nn_classify(dict, y)?;
                    Ok(Scored::Outcome {
                        truth_idx,
                        predicted_idx: m.class_index,
                        margin: residual_margin(&residuals),
                        degraded: false,
                    })
                }
            }
        })
        .collect();

    let c = class_ids.len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut per_sample = options.per_sample.then(Vec::new);
    let mut total = 0usize;
    let mut correct = 0usize;
    let mut degraded_count = 0usize;
    for (entry, result) in scorable.iter().zip(results) {
        match result? {
            Scored::Skipped => {}
            Scored::Outcome {
                truth_idx,
                predicted_idx,
                margin,
                degraded,
            } => {
                confusion[truth_idx][predicted_idx] += 1;
                total += 1;
                if truth_idx == predicted_idx {
                    correct += 1;
                }
                if degraded {
                    degraded_count += 1;
                }
                if let Some(samples) = per_sample.as_mut() {
                    samples.push(SampleOutcome {
                        path: entry.path.display().to_string(),
                        truth: class_ids[truth_idx].clone(),
                        predicted: class_ids[predicted_idx].clone(),
                        residual_margin: margin,
                    });
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptySplit {
            split: "test (all images skipped)".into(),
        });
    }
    if degraded_count > 0 {
        warnings.push(format!(
            "{degraded_count} samples used the degraded solver fallback"
        ));
    }

    let mut per_class_accuracy = BTreeMap::new();
    for (i, class) in class_ids.iter().enumerate() {
        let row_total: usize = confusion[i].iter().sum();
        if row_total > 0 {
            per_class_accuracy.insert(class.clone(), confusion[i][i] as f64 / row_total as f64);
        }
    }

    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        per_class_accuracy,
        confusion,
        class_ids,
        total,
        correct,
        classifier: options.classifier,
        lambda: (options.classifier == Classifier::Src).then_some(options.lambda),
        config_fingerprint: eval_fingerprint,
        per_sample,
        warnings,
    })
}

impl EvalReport {
    /// Serializes the report as pretty JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization never fails")
    }

    /// Writes the confusion matrix as CSV: a `truth\predicted` header
    /// column, one row per truth class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth\\predicted");
        for class in &self.class_ids {
            out.push(',');
            out.push_str(class);
        }
        out.push('\n');
        for (i, class) in self.class_ids.iter().enumerate() {
            out.push_str(class);
            for count in &self.confusion[i] {
                out.push(',');
                out.push_str(&count.to_string());
            }
            out.push('\n');
        }
        out
    }
}
