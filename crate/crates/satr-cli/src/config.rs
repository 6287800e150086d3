//! Run configuration: defaults, `key = value` file parsing with unknown-key
//! rejection, command-line overrides, and the effective-config echo.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use satr_core::data::parse_kv_file;
use satr_core::model::ModelConfig;
use satr_core::training::TrainSchedule;

/// Where the trials come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    /// Manifest file; trial paths resolve relative to its directory.
    Manifest(PathBuf),
    /// Synthetic-spec file.
    SynthSpec(PathBuf),
    /// Built-in default synthetic corpus.
    SynthDefault,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub run_id: String,
    pub corpus: CorpusSource,
    pub train_fraction: f64,
    // model overrides (channels always comes from the corpus)
    pub window: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_kernel_size: usize,
    pub conv_dropout: f64,
    pub gru_hidden: Vec<usize>,
    pub gru_dropout: f64,
    pub merge_dropout: f64,
    pub schedule: ScheduleOverrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleOverrides {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub lr_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = TrainSchedule::default();
        RunConfig {
            seed: 42,
            out: PathBuf::from("runs/satr"),
            run_id: "satr".into(),
            corpus: CorpusSource::SynthDefault,
            train_fraction: 0.8,
            window: 120,
            conv_kernels: vec![32, 64],
            conv_kernel_size: 2,
            conv_dropout: 0.2,
            gru_hidden: vec![128, 64],
            gru_dropout: 0.2,
            merge_dropout: 0.5,
            schedule: ScheduleOverrides {
                epochs: schedule.epochs,
                batch_size: schedule.batch_size,
                learning_rate: schedule.learning_rate,
                beta1: schedule.beta1,
                beta2: schedule.beta2,
                epsilon: schedule.epsilon,
                plateau_factor: schedule.plateau_factor,
                plateau_patience: schedule.plateau_patience,
                lr_floor: schedule.lr_floor,
            },
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| v.trim().parse::<usize>().with_context(|| format!("bad list entry '{v}'")))
        .collect()
}

impl RunConfig {
    /// Defaults overlaid with a config file's keys. Paths inside the file
    /// resolve relative to the file's directory.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let mut corpus_keys = 0usize;
        for (key, value, line) in parse_kv_file(path)? {
            let ctx = || format!("{} line {} ({key})", path.display(), line);
            match key.as_str() {
                "seed" => config.seed = value.parse().with_context(ctx)?,
                "out" => config.out = dir.join(&value),
                "run_id" => config.run_id = value,
                "corpus.manifest" => {
                    config.corpus = CorpusSource::Manifest(dir.join(&value));
                    corpus_keys += 1;
                }
                "corpus.synth_spec" => {
                    config.corpus = CorpusSource::SynthSpec(dir.join(&value));
                    corpus_keys += 1;
                }
                "corpus.synth_default" => {
                    let flag: bool = value.parse().with_context(ctx)?;
                    if flag {
                        config.corpus = CorpusSource::SynthDefault;
                        corpus_keys += 1;
                    }
                }
                "train_fraction" => config.train_fraction = value.parse().with_context(ctx)?,
                "model.window" => config.window = value.parse().with_context(ctx)?,
                "model.conv_kernels" => config.conv_kernels = parse_list(&value).with_context(ctx)?,
                "model.conv_kernel_size" => config.conv_kernel_size = value.parse().with_context(ctx)?,
                "model.conv_dropout" => config.conv_dropout = value.parse().with_context(ctx)?,
                "model.gru_hidden" => config.gru_hidden = parse_list(&value).with_context(ctx)?,
                "model.gru_dropout" => config.gru_dropout = value.parse().with_context(ctx)?,
                "model.merge_dropout" => config.merge_dropout = value.parse().with_context(ctx)?,
                "train.epochs" => config.schedule.epochs = value.parse().with_context(ctx)?,
                "train.batch_size" => config.schedule.batch_size = value.parse().with_context(ctx)?,
                "train.learning_rate" => config.schedule.learning_rate = value.parse().with_context(ctx)?,
                "train.beta1" => config.schedule.beta1 = value.parse().with_context(ctx)?,
                "train.beta2" => config.schedule.beta2 = value.parse().with_context(ctx)?,
                "train.epsilon" => config.schedule.epsilon = value.parse().with_context(ctx)?,
                "train.plateau_factor" => config.schedule.plateau_factor = value.parse().with_context(ctx)?,
                "train.plateau_patience" => config.schedule.plateau_patience = value.parse().with_context(ctx)?,
                "train.lr_floor" => config.schedule.lr_floor = value.parse().with_context(ctx)?,
                unknown => bail!(
                    "{} line {}: unknown configuration key '{}'",
                    path.display(),
                    line,
                    unknown
                ),
            }
        }
        if corpus_keys > 1 {
            bail!("{}: more than one corpus.* source key", path.display());
        }
        Ok(config)
    }

    pub fn model_config(&self, channels: usize) -> ModelConfig {
        let mut model = ModelConfig::new(channels);
        model.window = self.window;
        model.conv_kernels = self.conv_kernels.clone();
        model.conv_kernel_size = self.conv_kernel_size;
        model.conv_dropout = self.conv_dropout;
        model.gru_hidden = self.gru_hidden.clone();
        model.gru_dropout = self.gru_dropout;
        model.merge_dropout = self.merge_dropout;
        model
    }

    pub fn train_schedule(&self) -> TrainSchedule {
        TrainSchedule {
            epochs: self.schedule.epochs,
            batch_size: self.schedule.batch_size,
            learning_rate: self.schedule.learning_rate,
            beta1: self.schedule.beta1,
            beta2: self.schedule.beta2,
            epsilon: self.schedule.epsilon,
            plateau_factor: self.schedule.plateau_factor,
            plateau_patience: self.schedule.plateau_patience,
            lr_floor: self.schedule.lr_floor,
            seed: self.seed,
        }
    }

    /// Every effective key, in canonical order; parsing this text back
    /// reproduces the configuration exactly.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# effective configuration");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "out = {}", self.out.display());
        let _ = writeln!(s, "run_id = {}", self.run_id);
        match &self.corpus {
            CorpusSource::Manifest(p) => {
                let _ = writeln!(s, "corpus.manifest = {}", p.display());
            }
            CorpusSource::SynthSpec(p) => {
                let _ = writeln!(s, "corpus.synth_spec = {}", p.display());
            }
            CorpusSource::SynthDefault => {
                let _ = writeln!(s, "corpus.synth_default = true");
            }
        }
        let _ = writeln!(s, "train_fraction = {}", self.train_fraction);
        let _ = writeln!(s, "model.window = {}", self.window);
        let list = |items: &[usize]| {
            items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(s, "model.conv_kernels = {}", list(&self.conv_kernels));
        let _ = writeln!(s, "model.conv_kernel_size = {}", self.conv_kernel_size);
        let _ = writeln!(s, "model.conv_dropout = {}", self.conv_dropout);
        let _ = writeln!(s, "model.gru_hidden = {}", list(&self.gru_hidden));
        let _ = writeln!(s, "model.gru_dropout = {}", self.gru_dropout);
        let _ = writeln!(s, "model.merge_dropout = {}", self.merge_dropout);
        let _ = writeln!(s, "train.epochs = {}", self.schedule.epochs);
        let _ = writeln!(s, "train.batch_size = {}", self.schedule.batch_size);
        let _ = writeln!(s, "train.learning_rate = {}", self.schedule.learning_rate);
        let _ = writeln!(s, "train.beta1 = {}", self.schedule.beta1);
        let _ = writeln!(s, "train.beta2 = {}", self.schedule.beta2);
        let _ = writeln!(s, "train.epsilon = {}", self.schedule.epsilon);
        let _ = writeln!(s, "train.plateau_factor = {}", self.schedule.plateau_factor);
        let _ = writeln!(s, "train.plateau_patience = {}", self.schedule.plateau_patience);
        let _ = writeln!(s, "train.lr_floor = {}", self.schedule.lr_floor);
        s
    }
}
