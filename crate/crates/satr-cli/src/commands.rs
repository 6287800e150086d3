//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use satr_core::data::{
    self, parse_kinematics, synth_generate, window, znormalize, KinematicTrial, SynthSpec,
    DEFAULT_STEP,
};
use satr_core::eval::{self, majority_vote, Head, WindowPrediction};
use satr_core::model::{load_checkpoint, save_checkpoint, SatrParams};
use satr_core::training;

use crate::config::{CorpusSource, RunConfig};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Format one sample row with full-precision decimal floats.
fn format_row(row: &[f64]) -> String {
    row.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generate a synthetic corpus on disk: one kinematics file per trial plus
/// the manifest.
pub fn cmd_synth(spec_path: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let spec = match spec_path {
        Some(p) => SynthSpec::from_file(p)?,
        None => SynthSpec::default(),
    };
    let trials = synth_generate(&spec, seed)?;
    let trial_dir = out.join("trials");
    std::fs::create_dir_all(&trial_dir)
        .with_context(|| format!("creating output directory {}", trial_dir.display()))?;

    let mut manifest = String::new();
    for trial in &trials {
        let file_name = format!("{}.txt", trial.trial_id);
        let mut text = String::new();
        for r in 0..trial.len() {
            text.push_str(&format_row(trial.samples.row(r)));
            text.push('\n');
        }
        write_text(&trial_dir.join(&file_name), &text)?;
        manifest.push_str(&format!(
            "trials/{}\t{}\t{}\t{}\t{}\n",
            file_name, trial.subject_id, trial.skill, trial.task, trial.repetition
        ));
    }
    write_text(&out.join("manifest.tsv"), &manifest)?;
    println!(
        "wrote {} trials and manifest.tsv under {}",
        trials.len(),
        out.display()
    );
    Ok(())
}

/// Load the corpus a run config points at.
pub fn load_corpus(config: &RunConfig) -> Result<Vec<KinematicTrial>> {
    let trials = match &config.corpus {
        CorpusSource::Manifest(path) => {
            let root = path.parent().unwrap_or_else(|| Path::new("."));
            data::load_trials(root, path)?
        }
        CorpusSource::SynthSpec(path) => synth_generate(&SynthSpec::from_file(path)?, config.seed)?,
        CorpusSource::SynthDefault => synth_generate(&SynthSpec::default(), config.seed)?,
    };
    Ok(trials)
}

fn windows_of(trials: &[KinematicTrial], window_len: usize) -> Result<Vec<data::WindowedExample>> {
    let mut out = Vec::new();
    for trial in trials {
        out.extend(window(&znormalize(trial), window_len, DEFAULT_STEP)?);
    }
    Ok(out)
}

/// Train on a single train/validation split and write the best checkpoint,
/// the per-epoch log, and the effective config.
pub fn cmd_train(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output directory {}", config.out.display()))?;
    write_text(&config.out.join("effective.cfg"), &config.echo())?;

    let trials = load_corpus(config)?;
    if trials.is_empty() {
        bail!("corpus is empty");
    }
    let model_config = config.model_config(trials[0].channels());
    let schedule = config.train_schedule();
    let windows = windows_of(&trials, model_config.window)?;
    let (train_set, val_set) = data::train_val_split(&windows, config.train_fraction, config.seed)?;
    log::info!(
        "training on {} windows, validating on {} ({} batches/epoch)",
        train_set.len(),
        val_set.len(),
        train_set.len().div_ceil(schedule.batch_size)
    );
    let (params, log) = training::train(&model_config, &schedule, &train_set, &val_set)?;

    let ckpt_path = config.out.join("checkpoint.json");
    save_checkpoint(&params, &ckpt_path)?;
    write_text(&config.out.join("train_log.jsonl"), &log.to_jsonl())?;
    let best = &log.epochs[log.best_epoch - 1];
    println!(
        "best epoch {}: val loss {:.4}, skill acc {:.3}, task acc {:.3} -> {}",
        log.best_epoch,
        best.val_loss,
        best.val_skill_accuracy,
        best.val_task_accuracy,
        ckpt_path.display()
    );
    Ok(())
}

/// Run five-fold leave-one-supertrial-out cross-validation and write the
/// report artifacts.
pub fn cmd_crossval(config: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&config.out)
        .with_context(|| format!("creating output directory {}", config.out.display()))?;
    write_text(&config.out.join("effective.cfg"), &config.echo())?;

    let trials = load_corpus(config)?;
    if trials.is_empty() {
        bail!("corpus is empty");
    }
    let model_config = config.model_config(trials[0].channels());
    let schedule = config.train_schedule();
    let report = eval::run_loso(
        &trials,
        &model_config,
        &schedule,
        config.train_fraction,
        &config.run_id,
    )?;
    let files = eval::emit_report(&report, &config.out)?;
    for head in &report.heads {
        println!(
            "{}: interval acc {:.3}, trial acc {:.3}",
            head.head,
            head.interval.aggregate.metrics.accuracy,
            head.trial.aggregate.metrics.accuracy
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct IntervalRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    trial_id: &'a str,
    window_index: usize,
    offset: usize,
    skill: &'a str,
    task: &'a str,
    skill_posterior: &'a [f64],
    task_posterior: &'a [f64],
}

#[derive(Serialize)]
struct TrialRecord<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    trial_id: &'a str,
    windows: usize,
    skill: &'a str,
    task: &'a str,
}

fn predict_one(
    params: &SatrParams,
    path: &Path,
    out: &mut impl Write,
) -> Result<()> {
    let samples = parse_kinematics(path)?;
    let expected = params.config().channels;
    let found = samples.shape()[1];
    if found != expected {
        bail!(
            "channel mismatch for {}: checkpoint expects C={}, file has C={}",
            path.display(),
            expected,
            found
        );
    }
    let trial_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let trial = KinematicTrial {
        trial_id: trial_id.clone(),
        subject_id: String::new(),
        skill: data::SkillLabel::Novice, // placeholder; prediction ignores labels
        task: data::TaskLabel::Suturing,
        repetition: 1,
        samples,
    };
    let windows = window(&znormalize(&trial), params.config().window, DEFAULT_STEP)?;
    let records: Vec<WindowPrediction> = eval::classify_windows(params, &windows)?;
    let skill_names = params.class_names(0);
    let task_names = params.class_names(1);
    for r in &records {
        let line = serde_json::to_string(&IntervalRecord {
            kind: "interval",
            trial_id: &r.trial_id,
            window_index: r.window_index,
            offset: r.window_index * DEFAULT_STEP,
            skill: &skill_names[r.skill],
            task: &task_names[r.task],
            skill_posterior: &r.posterior.skill,
            task_posterior: &r.posterior.task,
        })?;
        writeln!(out, "{line}")?;
    }
    let skill_vote = majority_vote(&records, Head::Skill)?;
    let task_vote = majority_vote(&records, Head::Task)?;
    let line = serde_json::to_string(&TrialRecord {
        kind: "trial",
        trial_id: &trial_id,
        windows: records.len(),
        skill: &skill_names[skill_vote],
        task: &task_names[task_vote],
    })?;
    writeln!(out, "{line}")?;
    Ok(())
}

/// Stream per-window predictions and a trial-level verdict for a kinematics
/// file, or for every `.txt` file in a directory.
pub fn cmd_predict(checkpoint: &Path, input: &Path) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    if input.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("reading {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "txt").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .txt trial files in {}", input.display());
        }
        for file in files {
            predict_one(&params, &file, &mut out)?;
        }
    } else {
        predict_one(&params, input, &mut out)?;
    }
    Ok(())
}

/// Re-render the human-readable artifacts from a machine-readable report.
pub fn cmd_report(report_path: &Path, out: &Path) -> Result<()> {
    let report = eval::parse_report(report_path)?;
    let files = eval::emit_report(&report, out)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

/// Map an error chain to the process exit status: I/O failures exit 2,
/// everything else 1.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(satr_core::Error::Io(_)) = cause.downcast_ref::<satr_core::Error>() {
            return 2;
        }
    }
    1
}
