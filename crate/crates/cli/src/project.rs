//! Training, checkpoint, export and evaluation on a project folder. Shared
//! by the CLI verbs and the service so both produce identical results.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use tinyvis_core::codec::{decode_bin, emit_c_header, encode_bin, TrainConfig, WeightBundle};
use tinyvis_core::dataset::{ingest, split, LabeledImage, ProjectFolder, SplitMode, SplitSpec};
use tinyvis_core::model::{
    build_model, confusion_matrix, Augmentation, ConfusionMatrix, EpochMode, ModelSpec, ModelWeights, StepReport,
    TrainOptions, TrainState,
};

/// Trained weights live here between `train` and `export`.
pub const CHECKPOINT: &str = ".tinyvis/weights.bin";
/// Progress is reported every this many batches.
pub const REPORT_EVERY: u64 = 10;

#[derive(Debug, Clone, Default, PartialEq, serde::Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainOverrides {
    pub epochs: Option<u64>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub mode: Option<String>,
    pub seed: Option<u64>,
}

pub fn parse_mode(mode: &str) -> anyhow::Result<EpochMode> {
    match mode {
        "all" => Ok(EpochMode::UseAllData),
        "random" => Ok(EpochMode::RandomBatch),
        other => bail!("unknown epoch mode {other:?}; use all or random"),
    }
}

pub struct TrainingSetup {
    pub config: TrainConfig,
    pub state: TrainState,
    pub train: Vec<LabeledImage>,
    pub validation: Vec<LabeledImage>,
    pub epochs: u64,
    pub skipped: usize,
}

fn split_dataset(
    config: &TrainConfig,
    images: Vec<LabeledImage>,
    seed: u64,
) -> anyhow::Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    if config.validation_images == 0 {
        return Ok((images, Vec::new()));
    }
    let spec = SplitSpec { mode: SplitMode::FixedPerClass(config.validation_images), seed };
    Ok(split(&images, spec, &config.class_labels)?)
}

/// Loads the config and dataset and builds a fresh training state. Unset
/// overrides fall back to config.json.
pub fn prepare_training(project: &ProjectFolder, o: &TrainOverrides) -> anyhow::Result<TrainingSetup> {
    let config = project.load_config().context("loading config.json")?;
    let seed = o.seed.unwrap_or(0);
    let report = ingest(&project.root, &config)?;
    let skipped = report.skipped.len();
    let (train, validation) = split_dataset(&config, report.images, seed)?;
    if train.is_empty() {
        bail!("no training images left after holding out {} per class", config.validation_images);
    }
    let spec = ModelSpec::new(config.input_size, config.use_grayscale, config.num_classes);
    let weights = build_model(spec, seed)?;
    let options = TrainOptions {
        batch_size: o.batch_size.unwrap_or(config.batch_size),
        learning_rate: o.learning_rate.unwrap_or(config.learning_rate as f32),
        augmentation: if config.use_augmentation { Augmentation::default() } else { Augmentation::disabled() },
        epoch_mode: o.mode.as_deref().map(parse_mode).transpose()?.unwrap_or(EpochMode::UseAllData),
        seed,
        ..TrainOptions::default()
    };
    Ok(TrainingSetup {
        epochs: o.epochs.unwrap_or(config.target_epochs),
        state: TrainState::new(weights, options),
        config,
        train,
        validation,
        skipped,
    })
}

pub fn progress_line(r: &StepReport) -> String {
    format!(
        "batch {:>5}  epoch {:>3}  loss {:.4}  avg {:.4}  {}",
        r.batch, r.epoch, r.loss, r.recent_loss, r.status
    )
}

pub fn checkpoint_path(project: &ProjectFolder) -> PathBuf {
    project.root.join(CHECKPOINT)
}

pub fn save_checkpoint(project: &ProjectFolder, weights: &ModelWeights, labels: &[String]) -> anyhow::Result<PathBuf> {
    let path = checkpoint_path(project);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let bundle = WeightBundle::from_model(weights, labels.to_vec())?;
    fs::write(&path, encode_bin(&bundle)).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn load_checkpoint(project: &ProjectFolder) -> anyhow::Result<WeightBundle> {
    let path = checkpoint_path(project);
    let bytes = fs::read(&path).with_context(|| format!("reading {} (run `tinyvis train` first)", path.display()))?;
    Ok(decode_bin(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Exported {
    pub bin: PathBuf,
    pub header: PathBuf,
    pub bin_bytes: usize,
}

/// Writes the checkpoint as the weights file named in config.json plus
/// `myWeights.h`, both under `header/`.
pub fn export(project: &ProjectFolder) -> anyhow::Result<Exported> {
    let config = project.load_config()?;
    let bundle = load_checkpoint(project)?;
    if bundle.meta.class_labels != config.class_labels {
        log::warn!("checkpoint labels {:?} differ from config {:?}", bundle.meta.class_labels, config.class_labels);
    }
    let bin = project.weights_path(&config);
    let header = project.c_header_path();
    fs::create_dir_all(project.header_dir())?;
    let bytes = encode_bin(&bundle);
    fs::write(&bin, &bytes).with_context(|| format!("writing {}", bin.display()))?;
    fs::write(&header, emit_c_header(&bundle)).with_context(|| format!("writing {}", header.display()))?;
    Ok(Exported { bin, header, bin_bytes: bytes.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    Validation,
    Train,
    All,
}

/// Confusion matrix of the checkpoint over one part of the dataset, split
/// exactly as training split it for the same seed.
pub fn evaluate(project: &ProjectFolder, set: EvalSet, seed: u64) -> anyhow::Result<(ConfusionMatrix, Vec<String>)> {
    let config = project.load_config()?;
    let weights = load_checkpoint(project)?.to_model()?;
    let images = ingest(&project.root, &config)?.images;
    let data = match set {
        EvalSet::All => images,
        EvalSet::Train => split_dataset(&config, images, seed)?.0,
        EvalSet::Validation => {
            let val = split_dataset(&config, images, seed)?.1;
            if val.is_empty() {
                bail!("validationImages is 0; evaluate with --set all");
            }
            val
        }
    };
    Ok((confusion_matrix(&weights, &data)?, config.class_labels))
}

/// Accuracy of `weights` on `data`, `None` when `data` is empty.
pub fn accuracy(weights: &ModelWeights, data: &[LabeledImage]) -> anyhow::Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    Ok(Some(confusion_matrix(weights, data)?.accuracy()))
}

pub fn is_project(dir: &Path) -> bool {
    ProjectFolder::open(dir).config_path().is_file()
}
