//! Interval-level classification, trial-level majority voting, confusion
//! matrices with per-class precision/recall/f1, LOSO orchestration, and
//! report emission.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    build_loso_folds, window, znormalize, KinematicTrial, WindowedExample, DEFAULT_STEP,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::model::{self, DualPrediction, ModelConfig, SatrParams};
use crate::training::{self, TrainSchedule};

/// Windows per inference batch.
const INFER_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Skill,
    Task,
}

/// One window's classification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub trial_id: String,
    pub window_index: usize,
    pub skill: usize,
    pub task: usize,
    pub posterior: DualPrediction,
}

/// Posterior distributions for a window set, in input order.
pub fn predict_windows(params: &SatrParams, windows: &[WindowedExample]) -> Result<Vec<DualPrediction>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(INFER_BATCH) {
        let refs: Vec<&WindowedExample> = chunk.iter().collect();
        let (batch, _) = training::batch_of(&refs);
        let pass = model::forward_inference(params, &batch)?;
        out.extend(pass.predictions());
    }
    Ok(out)
}

/// Classify every window, returning records ordered by
/// `(trial_id, window_index)`.
pub fn classify_windows(params: &SatrParams, windows: &[WindowedExample]) -> Result<Vec<WindowPrediction>> {
    let posteriors = predict_windows(params, windows)?;
    let mut records: Vec<WindowPrediction> = windows
        .iter()
        .zip(posteriors)
        .map(|(w, posterior)| WindowPrediction {
            trial_id: w.trial_id.clone(),
            window_index: w.window_index,
            skill: posterior.skill_label(),
            task: posterior.task_label(),
            posterior,
        })
        .collect();
    records.sort_by(|a, b| {
        a.trial_id
            .cmp(&b.trial_id)
            .then(a.window_index.cmp(&b.window_index))
    });
    Ok(records)
}

/// Trial label from its window predictions: highest vote count, ties broken
/// by the larger posterior mass summed over the trial's windows, then by the
/// lowest class index.
pub fn majority_vote(predictions: &[WindowPrediction], head: Head) -> Result<usize> {
    if predictions.is_empty() {
        return Err(Error::Usage("majority vote over zero windows".into()));
    }
    let classes = match head {
        Head::Skill => predictions[0].posterior.skill.len(),
        Head::Task => predictions[0].posterior.task.len(),
    };
    let mut votes = vec![0usize; classes];
    let mut mass = vec![0.0f64; classes];
    for p in predictions {
        let (label, posterior) = match head {
            Head::Skill => (p.skill, &p.posterior.skill),
            Head::Task => (p.task, &p.posterior.task),
        };
        votes[label] += 1;
        for (m, q) in mass.iter_mut().zip(posterior) {
            *m += *q;
        }
    }
    let top = *votes.iter().max().unwrap();
    let mut winner = None;
    for k in 0..classes {
        if votes[k] != top {
            continue;
        }
        winner = match winner {
            None => Some(k),
            Some(best) if mass[k] > mass[best] => Some(k),
            keep => keep,
        };
    }
    Ok(winner.expect("at least one class holds the top vote count"))
}

/// Truth-by-prediction counts with the class-name table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    /// `counts[truth][predicted]`
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.classes()).map(|k| self.counts[k][k]).sum();
        trace as f64 / total as f64
    }

    /// Pool another matrix's counts into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        debug_assert_eq!(self.class_names, other.class_names);
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += *b;
            }
        }
    }

    /// Rows normalized to sum to one; all-zero rows stay zero.
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter().map(|c| *c as f64 / total as f64).collect()
                }
            })
            .collect()
    }
}

/// Precision/recall/f1 for one class; zero-denominator cases report 0 and
/// set the matching flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub f1_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClassMetrics>,
    pub accuracy: f64,
}

impl ClassMetrics {
    pub fn from_confusion(confusion: &ConfusionMatrix) -> Self {
        let k = confusion.classes();
        let mut per_class = Vec::with_capacity(k);
        for class in 0..k {
            let tp = confusion.counts[class][class];
            let fp: u64 = (0..k).filter(|&j| j != class).map(|j| confusion.counts[j][class]).sum();
            let fn_: u64 = (0..k).filter(|&j| j != class).map(|j| confusion.counts[class][j]).sum();
            let precision_degenerate = tp + fp == 0;
            let recall_degenerate = tp + fn_ == 0;
            let precision = if precision_degenerate { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if recall_degenerate { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1_degenerate = precision + recall == 0.0;
            let f1 = if f1_degenerate {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            per_class.push(PerClassMetrics {
                precision,
                recall,
                f1,
                precision_degenerate,
                recall_degenerate,
                f1_degenerate,
            });
        }
        ClassMetrics {
            per_class,
            accuracy: confusion.accuracy(),
        }
    }
}

/// Counts and derived metrics for a labeled prediction list.
pub fn compute_metrics(
    truths: &[usize],
    predictions: &[usize],
    class_names: &[String],
) -> Result<(ConfusionMatrix, ClassMetrics)> {
    if truths.len() != predictions.len() {
        return Err(Error::shape(
            "compute_metrics",
            format!("{} truths", truths.len()),
            format!("{} predictions", predictions.len()),
        ));
    }
    let k = class_names.len();
    let mut confusion = ConfusionMatrix::new(class_names.to_vec());
    for (&truth, &pred) in truths.iter().zip(predictions) {
        if truth >= k || pred >= k {
            return Err(Error::LabelOutOfRange {
                head: "metrics".into(),
                value: truth.max(pred),
                classes: k,
            });
        }
        confusion.record(truth, pred);
    }
    let metrics = ClassMetrics::from_confusion(&confusion);
    Ok((confusion, metrics))
}

/// Confusion plus derived metrics for one scoring unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub confusion: ConfusionMatrix,
    pub metrics: ClassMetrics,
}

impl MetricBlock {
    fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let metrics = ClassMetrics::from_confusion(&confusion);
        MetricBlock { confusion, metrics }
    }
}

/// Unweighted means across folds, labeled separately from the pooled
/// (micro) aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAverages {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
}

fn macro_over_folds(folds: &[MetricBlock]) -> MacroAverages {
    let k = folds.first().map(|f| f.metrics.per_class.len()).unwrap_or(0);
    let n = folds.len().max(1) as f64;
    let mut avg = MacroAverages {
        accuracy: folds.iter().map(|f| f.metrics.accuracy).sum::<f64>() / n,
        precision: vec![0.0; k],
        recall: vec![0.0; k],
        f1: vec![0.0; k],
    };
    for fold in folds {
        for (class, pc) in fold.metrics.per_class.iter().enumerate() {
            avg.precision[class] += pc.precision / n;
            avg.recall[class] += pc.recall / n;
            avg.f1[class] += pc.f1 / n;
        }
    }
    avg
}

/// Fold-by-fold and pooled results at one scoring level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub folds: Vec<MetricBlock>,
    /// Pooled raw counts across folds (micro average).
    pub aggregate: MetricBlock,
    /// Unweighted means of the fold metrics.
    pub macro_avg: MacroAverages,
}

fn level_report(fold_confusions: Vec<ConfusionMatrix>, class_names: &[String]) -> LevelReport {
    let mut pooled = ConfusionMatrix::new(class_names.to_vec());
    let folds: Vec<MetricBlock> = fold_confusions
        .into_iter()
        .map(|c| {
            pooled.merge(&c);
            MetricBlock::from_confusion(c)
        })
        .collect();
    let macro_avg = macro_over_folds(&folds);
    LevelReport {
        folds,
        aggregate: MetricBlock::from_confusion(pooled),
        macro_avg,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: String,
    pub class_names: Vec<String>,
    pub interval: LevelReport,
    pub trial: LevelReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub repetition: u8,
    pub test_trials: usize,
    pub test_windows: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub best_epoch: usize,
}

/// Full cross-validation outcome: per head, per level, per fold plus the
/// cross-fold aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub seed: u64,
    pub channels: usize,
    pub window: usize,
    pub step: usize,
    pub folds: Vec<FoldSummary>,
    pub heads: Vec<HeadReport>,
}

/// Train and score all five leave-one-supertrial-out folds.
///
/// Each fold trains from scratch on the other four supertrials (with an
/// internal trial-grouped 80/20 validation split), classifies the held-out
/// windows, and votes per trial. `train_fraction` is the training share of
/// the internal split.
pub fn run_loso(
    trials: &[KinematicTrial],
    config: &ModelConfig,
    schedule: &TrainSchedule,
    train_fraction: f64,
    run_id: &str,
) -> Result<EvaluationReport> {
    config.validate()?;
    schedule.validate()?;
    if trials.is_empty() {
        return Err(Error::Corpus("cross-validation needs a non-empty corpus".into()));
    }
    if trials[0].channels() != config.channels {
        return Err(Error::Corpus(format!(
            "corpus has {} channels but the model expects {}",
            trials[0].channels(),
            config.channels
        )));
    }
    let plan = build_loso_folds(trials)?;
    let by_id: BTreeMap<&str, &KinematicTrial> =
        trials.iter().map(|t| (t.trial_id.as_str(), t)).collect();

    let skill_names: Vec<String> = model::DEFAULT_SKILL_CLASSES.iter().map(|s| s.to_string()).collect();
    let task_names: Vec<String> = model::DEFAULT_TASK_CLASSES.iter().map(|s| s.to_string()).collect();

    let mut fold_summaries = Vec::new();
    let mut interval_confusions: [Vec<ConfusionMatrix>; 2] = [Vec::new(), Vec::new()];
    let mut trial_confusions: [Vec<ConfusionMatrix>; 2] = [Vec::new(), Vec::new()];

    for fold in &plan.folds {
        let tag = |e: Error| Error::Fold {
            fold: fold.repetition,
            source: Box::new(e),
        };
        let mut train_windows = Vec::new();
        for id in &fold.train_trials {
            let trial = znormalize(by_id[id.as_str()]);
            train_windows.extend(window(&trial, config.window, DEFAULT_STEP).map_err(tag)?);
        }
        let fold_seed = derive_seed(schedule.seed, 0xF01D_0000 + fold.repetition as u64);
        let (train_set, val_set) =
            crate::data::train_val_split(&train_windows, train_fraction, fold_seed).map_err(tag)?;
        let fold_schedule = TrainSchedule {
            seed: fold_seed,
            ..schedule.clone()
        };
        let (params, log) = training::train(config, &fold_schedule, &train_set, &val_set).map_err(tag)?;

        let mut test_windows = Vec::new();
        for id in &fold.test_trials {
            let trial = znormalize(by_id[id.as_str()]);
            test_windows.extend(window(&trial, config.window, DEFAULT_STEP).map_err(tag)?);
        }
        let records = classify_windows(&params, &test_windows).map_err(tag)?;

        // interval level
        let mut interval = [
            ConfusionMatrix::new(skill_names.clone()),
            ConfusionMatrix::new(task_names.clone()),
        ];
        let truth_of: BTreeMap<&str, (usize, usize)> = fold
            .test_trials
            .iter()
            .map(|id| {
                let t = by_id[id.as_str()];
                (id.as_str(), (t.skill.index(), t.task.index()))
            })
            .collect();
        for record in &records {
            let (skill_truth, task_truth) = truth_of[record.trial_id.as_str()];
            interval[0].record(skill_truth, record.skill);
            interval[1].record(task_truth, record.task);
        }

        // trial level
        let mut trial_level = [
            ConfusionMatrix::new(skill_names.clone()),
            ConfusionMatrix::new(task_names.clone()),
        ];
        for id in &fold.test_trials {
            let trial_records: Vec<WindowPrediction> = records
                .iter()
                .filter(|r| &r.trial_id == id)
                .cloned()
                .collect();
            let (skill_truth, task_truth) = truth_of[id.as_str()];
            let skill_vote = majority_vote(&trial_records, Head::Skill).map_err(tag)?;
            let task_vote = majority_vote(&trial_records, Head::Task).map_err(tag)?;
            trial_level[0].record(skill_truth, skill_vote);
            trial_level[1].record(task_truth, task_vote);
        }

        for side in 0..2 {
            interval_confusions[side].push(interval[side].clone());
            trial_confusions[side].push(trial_level[side].clone());
        }
        fold_summaries.push(FoldSummary {
            repetition: fold.repetition,
            test_trials: fold.test_trials.len(),
            test_windows: test_windows.len(),
            train_windows: train_set.len(),
            val_windows: val_set.len(),
            best_epoch: log.best_epoch,
        });
    }

    let heads = vec![
        HeadReport {
            head: "skill".into(),
            class_names: skill_names.clone(),
            interval: level_report(interval_confusions[0].clone(), &skill_names),
            trial: level_report(trial_confusions[0].clone(), &skill_names),
        },
        HeadReport {
            head: "task".into(),
            class_names: task_names.clone(),
            interval: level_report(interval_confusions[1].clone(), &task_names),
            trial: level_report(trial_confusions[1].clone(), &task_names),
        },
    ];

    Ok(EvaluationReport {
        run_id: run_id.to_string(),
        seed: schedule.seed,
        channels: config.channels,
        window: config.window,
        step: DEFAULT_STEP,
        folds: fold_summaries,
        heads,
    })
}

/// Re-read a machine-readable report.
pub fn parse_report(path: &Path) -> Result<EvaluationReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn summary_table(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("run: {}\n", report.run_id));
    out.push_str(&format!(
        "{:<14} {:<16} | {:>9} {:>7} {:>8} {:>8} | {:>9} {:>7} {:>8} {:>8}\n",
        "", "", "precision", "recall", "f1", "acc", "precision", "recall", "f1", "acc"
    ));
    out.push_str(&format!(
        "{:<14} {:<16} | {:^36} | {:^36}\n",
        "head", "class", "interval-level", "trial-level"
    ));
    out.push_str(&format!("{}\n", "-".repeat(110)));
    for head in &report.heads {
        for (k, class) in head.class_names.iter().enumerate() {
            let i = &head.interval.aggregate.metrics.per_class[k];
            let t = &head.trial.aggregate.metrics.per_class[k];
            let acc_cell = |level: &LevelReport| {
                if k == 0 {
                    format!("{:>8.3}", level.aggregate.metrics.accuracy)
                } else {
                    format!("{:>8}", "")
                }
            };
            out.push_str(&format!(
                "{:<14} {:<16} | {:>9.3} {:>7.3} {:>8.3} {} | {:>9.3} {:>7.3} {:>8.3} {}\n",
                head.head,
                class,
                i.precision,
                i.recall,
                i.f1,
                acc_cell(&head.interval),
                t.precision,
                t.recall,
                t.f1,
                acc_cell(&head.trial),
            ));
        }
        out.push_str(&format!(
            "{:<14} {:<16} | macro acc {:>6.3} (mean of folds)      | macro acc {:>6.3} (mean of folds)\n",
            head.head, "(macro)", head.interval.macro_avg.accuracy, head.trial.macro_avg.accuracy
        ));
        out.push_str(&format!("{}\n", "-".repeat(110)));
    }
    out
}

fn confusion_grids(report: &EvaluationReport) -> String {
    let mut out = String::new();
    for head in &report.heads {
        for (level_name, level) in [("interval", &head.interval), ("trial", &head.trial)] {
            out.push_str(&format!(
                "== {} head, {}-level (rows: truth, normalized; pooled over folds) ==\n",
                head.head, level_name
            ));
            let names = &head.class_names;
            out.push_str(&format!("{:<16}", ""));
            for name in names {
                out.push_str(&format!("{:>16}", name));
            }
            out.push('\n');
            let rows = level.aggregate.confusion.normalized_rows();
            for (k, row) in rows.iter().enumerate() {
                out.push_str(&format!("{:<16}", names[k]));
                for v in row {
                    out.push_str(&format!("{:>16.4}", v));
                }
                out.push_str(&format!(
                    "   (n={})\n",
                    level.aggregate.confusion.counts[k].iter().sum::<u64>()
                ));
            }
            out.push('\n');
        }
    }
    out
}

/// Write the machine-readable report, the summary table, and the confusion
/// grids; returns the paths in that order.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join(format!("{}.report.json", report.run_id));
    let table_path = out_dir.join(format!("{}.report.txt", report.run_id));
    let grid_path = out_dir.join(format!("{}.confusion.txt", report.run_id));

    let mut json_file = std::fs::File::create(&json_path)?;
    serde_json::to_writer_pretty(&mut json_file, report)?;
    json_file.write_all(b"\n")?;
    std::fs::write(&table_path, summary_table(report))?;
    std::fs::write(&grid_path, confusion_grids(report))?;
    Ok(vec![json_path, table_path, grid_path])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(trial: &str, idx: usize, skill: usize, task: usize, skill_post: Vec<f64>) -> WindowPrediction {
        WindowPrediction {
            trial_id: trial.into(),
            window_index: idx,
            skill,
            task,
            posterior: DualPrediction {
                skill: skill_post,
                task: vec![1.0 / 3.0; 3],
            },
        }
    }

    #[test]
    fn strict_majority_wins_regardless_of_posteriors() {
        let preds = vec![
            pred("t", 0, 2, 0, vec![0.0, 0.1, 0.9]),
            pred("t", 1, 2, 0, vec![0.0, 0.2, 0.8]),
            pred("t", 2, 0, 0, vec![0.99, 0.01, 0.0]),
        ];
        assert_eq!(majority_vote(&preds, Head::Skill).unwrap(), 2);
    }

    #[test]
    fn single_window_vote_is_its_label() {
        let preds = vec![pred("t", 0, 1, 2, vec![0.1, 0.8, 0.1])];
        assert_eq!(majority_vote(&preds, Head::Skill).unwrap(), 1);
    }

    #[test]
    fn vote_tie_breaks_by_summed_posterior_then_lowest_index() {
        // novice and expert tie 1-1; novice holds more posterior mass
        let preds = vec![
            pred("t", 0, 0, 0, vec![0.6, 0.1, 0.3]),
            pred("t", 1, 2, 0, vec![0.5, 0.0, 0.5]),
        ];
        // summed: novice 1.1, expert 0.8
        assert_eq!(majority_vote(&preds, Head::Skill).unwrap(), 0);

        // exactly equal mass -> lowest index
        let preds = vec![
            pred("t", 0, 0, 0, vec![0.5, 0.0, 0.5]),
            pred("t", 1, 2, 0, vec![0.5, 0.0, 0.5]),
        ];
        assert_eq!(majority_vote(&preds, Head::Skill).unwrap(), 0);
    }

    #[test]
    fn zero_windows_vote_is_an_error() {
        assert!(majority_vote(&[], Head::Skill).is_err());
    }

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let (confusion, metrics) = compute_metrics(&[0, 0, 1], &[0, 0, 1], &names(2)).unwrap();
        assert_eq!(confusion.total(), 3);
        assert_eq!(metrics.accuracy, 1.0);
        assert!(metrics.per_class.iter().all(|c| c.f1 == 1.0));
    }

    #[test]
    fn confusion_arithmetic_matches_definitions() {
        // confusion [[2,0],[1,1]]: class-0 precision 2/3, recall 1, f1 0.8
        let truths = [0, 0, 1, 1];
        let preds = [0, 0, 0, 1];
        let (confusion, metrics) = compute_metrics(&truths, &preds, &names(2)).unwrap();
        assert_eq!(confusion.counts, vec![vec![2, 0], vec![1, 1]]);
        let c0 = &metrics.per_class[0];
        assert!((c0.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(c0.recall, 1.0);
        assert!((c0.f1 - 0.8).abs() < 1e-12);
        assert_eq!(metrics.accuracy, 0.75);
    }

    #[test]
    fn absent_class_is_flagged_degenerate() {
        let (_, metrics) = compute_metrics(&[0, 0], &[0, 0], &names(3)).unwrap();
        let c2 = &metrics.per_class[2];
        assert!(c2.precision_degenerate && c2.recall_degenerate && c2.f1_degenerate);
        assert_eq!((c2.precision, c2.recall, c2.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unknown_label_is_an_error() {
        assert!(compute_metrics(&[0, 5], &[0, 0], &names(3)).is_err());
        assert!(compute_metrics(&[0], &[0, 1], &names(3)).is_err());
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let truths = [0, 1, 2, 1, 0, 2, 2];
        let preds = [0, 2, 2, 1, 1, 0, 2];
        let (c1, m1) = compute_metrics(&truths, &preds, &names(3)).unwrap();
        let order = [6, 2, 4, 0, 5, 1, 3];
        let t2: Vec<usize> = order.iter().map(|&i| truths[i]).collect();
        let p2: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
        let (c2, m2) = compute_metrics(&t2, &p2, &names(3)).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn normalized_rows_sum_to_one() {
        let (confusion, _) = compute_metrics(&[0, 0, 1, 2, 2], &[0, 1, 1, 2, 0], &names(3)).unwrap();
        for row in confusion.normalized_rows() {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pooled_counts_equal_fold_sums() {
        let a = {
            let (c, _) = compute_metrics(&[0, 1], &[0, 1], &names(2)).unwrap();
            c
        };
        let b = {
            let (c, _) = compute_metrics(&[1, 1, 0], &[1, 0, 0], &names(2)).unwrap();
            c
        };
        let report = level_report(vec![a.clone(), b.clone()], &names(2));
        assert_eq!(report.aggregate.confusion.total(), a.total() + b.total());
        assert_eq!(report.folds.len(), 2);
        let expected_macro = 0.5 * (a.accuracy() + b.accuracy());
        assert!((report.macro_avg.accuracy - expected_macro).abs() < 1e-12);
    }

    #[test]
    fn emitted_report_reparses_identically() {
        let fold = |truths: &[usize], preds: &[usize]| {
            compute_metrics(truths, preds, &names(3)).unwrap().0
        };
        let level = level_report(
            vec![fold(&[0, 1, 2], &[0, 1, 1]), fold(&[2, 2, 0], &[2, 1, 0])],
            &names(3),
        );
        let report = EvaluationReport {
            run_id: "roundtrip".into(),
            seed: 5,
            channels: 3,
            window: 120,
            step: 30,
            folds: vec![FoldSummary {
                repetition: 1,
                test_trials: 2,
                test_windows: 6,
                train_windows: 20,
                val_windows: 5,
                best_epoch: 1,
            }],
            heads: vec![
                HeadReport {
                    head: "skill".into(),
                    class_names: names(3),
                    interval: level.clone(),
                    trial: level.clone(),
                },
                HeadReport {
                    head: "task".into(),
                    class_names: names(3),
                    interval: level.clone(),
                    trial: level,
                },
            ],
        };
        let dir = std::env::temp_dir().join(format!("satr_report_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let files = emit_report(&report, &dir).unwrap();
        let parsed = parse_report(&files[0]).unwrap();
        assert_eq!(report, parsed);
        std::fs::remove_dir_all(&dir).ok();
    }
}
