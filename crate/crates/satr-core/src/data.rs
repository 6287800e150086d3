//! Trial ingestion, synthetic corpus generation, per-channel normalization,
//! sliding-window framing, leave-one-supertrial-out folds, and the
//! trial-grouped train/validation split.
//!
//! File formats (all plain text, `#` starts a comment line):
//!
//! - kinematics: one time sample per line, whitespace-separated floats,
//!   no header; constant column count within a corpus.
//! - manifest: one trial per line,
//!   `path<TAB>subject<TAB>skill<TAB>task<TAB>repetition`.
//! - synthetic spec / run config: `key = value` lines.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::SeededRng;

pub const DEFAULT_WINDOW: usize = 120;
pub const DEFAULT_STEP: usize = 30;
pub const SAMPLE_RATE_HZ: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SkillLabel {
    Novice,
    Intermediate,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskLabel {
    Suturing,
    NeedlePassing,
    KnotTying,
}

impl SkillLabel {
    pub const ALL: [SkillLabel; 3] = [SkillLabel::Novice, SkillLabel::Intermediate, SkillLabel::Expert];

    pub fn index(self) -> usize {
        match self {
            SkillLabel::Novice => 0,
            SkillLabel::Intermediate => 1,
            SkillLabel::Expert => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SkillLabel::Novice => "novice",
            SkillLabel::Intermediate => "intermediate",
            SkillLabel::Expert => "expert",
        }
    }
}

impl TaskLabel {
    pub const ALL: [TaskLabel; 3] = [TaskLabel::Suturing, TaskLabel::NeedlePassing, TaskLabel::KnotTying];

    pub fn index(self) -> usize {
        match self {
            TaskLabel::Suturing => 0,
            TaskLabel::NeedlePassing => 1,
            TaskLabel::KnotTying => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskLabel::Suturing => "suturing",
            TaskLabel::NeedlePassing => "needle-passing",
            TaskLabel::KnotTying => "knot-tying",
        }
    }
}

impl fmt::Display for SkillLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for TaskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SkillLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "novice" => Ok(SkillLabel::Novice),
            "intermediate" => Ok(SkillLabel::Intermediate),
            "expert" => Ok(SkillLabel::Expert),
            other => Err(format!("unknown skill label '{other}'")),
        }
    }
}

impl FromStr for TaskLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "suturing" => Ok(TaskLabel::Suturing),
            "needle-passing" | "needlepassing" => Ok(TaskLabel::NeedlePassing),
            "knot-tying" | "knottying" => Ok(TaskLabel::KnotTying),
            other => Err(format!("unknown task label '{other}'")),
        }
    }
}

/// One recorded trial: an `L x C` sample matrix plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTrial {
    pub trial_id: String,
    pub subject_id: String,
    pub skill: SkillLabel,
    pub task: TaskLabel,
    pub repetition: u8,
    pub samples: Tensor,
}

impl KinematicTrial {
    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.shape()[1]
    }
}

/// A `T x C` interval frame carrying its source trial's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    pub trial_id: String,
    pub window_index: usize,
    pub frame: Tensor,
    pub skill: SkillLabel,
    pub task: TaskLabel,
}

/// One leave-one-supertrial-out fold: test on every trial of one
/// repetition index, train on the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub repetition: u8,
    pub test_trials: Vec<String>,
    pub train_trials: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

/// Parse `key = value` lines; returns (key, value, line number) triples.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        out.push((key.trim().to_string(), value.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// One manifest line: where a trial lives and what it is.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: String,
    pub subject_id: String,
    pub skill: SkillLabel,
    pub task: TaskLabel,
    pub repetition: u8,
}

pub fn parse_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    let file = path.display().to_string();
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!(
                    "expected 5 tab-separated fields (path, subject, skill, task, repetition), got {}",
                    fields.len()
                ),
            });
        }
        let parse_err = |message: String| Error::Parse {
            file: file.clone(),
            line: i + 1,
            message,
        };
        let skill = fields[2].parse::<SkillLabel>().map_err(&parse_err)?;
        let task = fields[3].parse::<TaskLabel>().map_err(&parse_err)?;
        let repetition: u8 = fields[4]
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad repetition '{}': {e}", fields[4])))?;
        if !(1..=5).contains(&repetition) {
            return Err(parse_err(format!("repetition {repetition} outside 1..=5")));
        }
        entries.push(ManifestEntry {
            path: fields[0].to_string(),
            subject_id: fields[1].to_string(),
            skill,
            task,
            repetition,
        });
    }
    Ok(entries)
}

/// Parse a kinematics file: one sample per line, whitespace-separated floats.
pub fn parse_kinematics(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Corpus(format!("cannot read trial file {}: {e}", path.display())))?;
    let file = path.display().to_string();
    let mut data = Vec::new();
    let mut columns: Option<usize> = None;
    let mut rows = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for token in line.split_whitespace() {
            let value: f64 = token.parse().map_err(|_| Error::Parse {
                file: file.clone(),
                line: i + 1,
                message: format!("non-numeric token '{token}'"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    message: format!("non-finite sample value '{token}'"),
                });
            }
            data.push(value);
            count += 1;
        }
        match columns {
            None => columns = Some(count),
            Some(c) if c != count => {
                return Err(Error::Parse {
                    file: file.clone(),
                    line: i + 1,
                    message: format!("row has {count} columns, file started with {c}"),
                });
            }
            _ => {}
        }
        rows += 1;
    }
    let columns = columns.unwrap_or(0);
    if rows == 0 || columns == 0 {
        return Err(Error::Corpus(format!("trial file {} is empty", file)));
    }
    Tensor::from_vec(vec![rows, columns], data)
}

fn trial_id_from_path(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

/// Load every manifest-listed trial under `root`, enforcing a consistent
/// channel count across the corpus.
pub fn load_trials(root: &Path, manifest: &Path) -> Result<Vec<KinematicTrial>> {
    let entries = parse_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Corpus(format!(
            "manifest {} lists no trials",
            manifest.display()
        )));
    }
    let mut trials = Vec::with_capacity(entries.len());
    let mut channels: Option<usize> = None;
    let mut seen_ids = std::collections::BTreeSet::new();
    for entry in entries {
        let full = root.join(&entry.path);
        let samples = parse_kinematics(&full)?;
        let c = samples.shape()[1];
        match channels {
            None => channels = Some(c),
            Some(expected) if expected != c => {
                return Err(Error::Corpus(format!(
                    "trial file {} has {} columns, corpus started with {}",
                    full.display(),
                    c,
                    expected
                )));
            }
            _ => {}
        }
        let trial_id = trial_id_from_path(&entry.path);
        if !seen_ids.insert(trial_id.clone()) {
            return Err(Error::Corpus(format!("duplicate trial id '{trial_id}' in manifest")));
        }
        trials.push(KinematicTrial {
            trial_id,
            subject_id: entry.subject_id,
            skill: entry.skill,
            task: entry.task,
            repetition: entry.repetition,
            samples,
        });
    }
    Ok(trials)
}

/// Per-channel z-score with population standard deviation. Channels whose
/// deviation is below 1e-8 become all zeros.
pub fn znormalize(trial: &KinematicTrial) -> KinematicTrial {
    let (rows, cols) = (trial.len(), trial.channels());
    let data = trial.samples.data();
    let mut out = vec![0.0; data.len()];
    for c in 0..cols {
        let mut mean = 0.0;
        for r in 0..rows {
            mean += data[r * cols + c];
        }
        mean /= rows as f64;
        let mut var = 0.0;
        for r in 0..rows {
            let d = data[r * cols + c] - mean;
            var += d * d;
        }
        var /= rows as f64;
        let std = var.sqrt();
        if std < 1e-8 {
            continue; // constant channel maps to zeros
        }
        for r in 0..rows {
            out[r * cols + c] = (data[r * cols + c] - mean) / std;
        }
    }
    KinematicTrial {
        samples: Tensor::from_vec(vec![rows, cols], out).expect("same extents"),
        ..trial.clone()
    }
}

/// Number of windows a trial of length `len` yields.
pub fn window_count(len: usize, window: usize, step: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / step + 1
    }
}

/// Slide a `window x C` frame over the trial at `step`-sample offsets;
/// the trailing remainder is discarded.
pub fn window(trial: &KinematicTrial, window: usize, step: usize) -> Result<Vec<WindowedExample>> {
    if window == 0 || step == 0 {
        return Err(Error::Config("window and step must be >= 1".into()));
    }
    let len = trial.len();
    if len < window {
        return Err(Error::TrialTooShort {
            trial_id: trial.trial_id.clone(),
            len,
            window,
        });
    }
    let cols = trial.channels();
    let count = window_count(len, window, step);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let offset = i * step;
        let slice = &trial.samples.data()[offset * cols..(offset + window) * cols];
        out.push(WindowedExample {
            trial_id: trial.trial_id.clone(),
            window_index: i,
            frame: Tensor::from_vec(vec![window, cols], slice.to_vec())?,
            skill: trial.skill,
            task: trial.task,
        });
    }
    Ok(out)
}

/// Five folds keyed by repetition index: fold `i` tests on every trial whose
/// repetition is `i` and trains on all others.
pub fn build_loso_folds(trials: &[KinematicTrial]) -> Result<FoldPlan> {
    for trial in trials {
        if !(1..=5).contains(&trial.repetition) {
            return Err(Error::Corpus(format!(
                "trial '{}' has repetition {} outside 1..=5",
                trial.trial_id, trial.repetition
            )));
        }
    }
    let folds = (1..=5u8)
        .map(|rep| {
            let (test, train): (Vec<_>, Vec<_>) = trials.iter().partition(|t| t.repetition == rep);
            Fold {
                repetition: rep,
                test_trials: test.iter().map(|t| t.trial_id.clone()).collect(),
                train_trials: train.iter().map(|t| t.trial_id.clone()).collect(),
            }
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Trial-grouped, (skill, task)-stratified split of windows.
///
/// Every trial's windows land on one side. Per stratum, about
/// `1 - train_fraction` of trials go to validation, always at least one
/// when the stratum has two or more trials; single-trial strata go whole
/// to training with a warning.
pub fn train_val_split(
    windows: &[WindowedExample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WindowedExample>, Vec<WindowedExample>)> {
    if !(0.0..1.0).contains(&(1.0 - train_fraction)) || train_fraction <= 0.0 {
        return Err(Error::Config(format!(
            "train fraction must be in (0, 1], got {train_fraction}"
        )));
    }
    // stratum -> ordered unique trial ids
    let mut strata: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    for w in windows {
        let key = (w.skill.index(), w.task.index());
        let ids = strata.entry(key).or_default();
        if ids.last().map(|l| l != &w.trial_id).unwrap_or(true) && !ids.contains(&w.trial_id) {
            ids.push(w.trial_id.clone());
        }
    }
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut val_ids = std::collections::BTreeSet::new();
    for ((skill, task), mut ids) in strata {
        ids.sort();
        if ids.len() < 2 {
            log::warn!(
                "stratum (skill {}, task {}) has a single trial; it stays in training",
                skill,
                task
            );
            continue;
        }
        let n_val = (((1.0 - train_fraction) * ids.len() as f64).round() as usize).max(1);
        // Fisher-Yates so the choice is uniform yet fully seed-determined
        for i in (1..ids.len()).rev() {
            let j = rng.gen_range(0..=i);
            ids.swap(i, j);
        }
        for id in ids.into_iter().take(n_val) {
            val_ids.insert(id);
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for w in windows {
        if val_ids.contains(&w.trial_id) {
            val.push(w.clone());
        } else {
            train.push(w.clone());
        }
    }
    Ok((train, val))
}

/// Parameters of the synthetic corpus generator.
///
/// Each task sets a base oscillation frequency per channel; each skill level
/// sets the amplitude of high-frequency jitter (white noise plus a tremor
/// band), so both labels are recoverable from the signal alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub channels: usize,
    pub novice_subjects: usize,
    pub intermediate_subjects: usize,
    pub expert_subjects: usize,
    pub repetitions: u8,
    pub min_len: usize,
    pub max_len: usize,
    /// Base frequency in Hz per task (suturing, needle-passing, knot-tying).
    pub task_freq: [f64; 3],
    /// Jitter amplitude per skill (novice, intermediate, expert).
    pub skill_jitter: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            channels: 6,
            novice_subjects: 4,
            intermediate_subjects: 2,
            expert_subjects: 2,
            repetitions: 5,
            min_len: 600,
            max_len: 3000,
            // channel c oscillates at freq * (1 + 0.15c); these bases keep
            // the three tasks' frequency bands disjoint across 6 channels
            task_freq: [0.4, 0.9, 2.0],
            skill_jitter: [1.0, 0.4, 0.02],
        }
    }
}

impl SynthSpec {
    pub fn subjects(&self) -> usize {
        self.novice_subjects + self.intermediate_subjects + self.expert_subjects
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects() == 0 {
            return Err(Error::Config("synthetic spec lists zero subjects".into()));
        }
        if self.repetitions == 0 || self.repetitions > 5 {
            return Err(Error::Config(format!(
                "repetitions must be in 1..=5, got {}",
                self.repetitions
            )));
        }
        if self.channels == 0 {
            return Err(Error::Config("synthetic spec needs at least one channel".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "invalid length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        if self.task_freq.iter().any(|f| *f <= 0.0) {
            return Err(Error::Config("task frequencies must be positive".into()));
        }
        if self.skill_jitter.iter().any(|j| *j < 0.0) {
            return Err(Error::Config("jitter amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<SynthSpec> {
        let mut spec = SynthSpec::default();
        let file = path.display().to_string();
        for (key, value, line) in parse_kv_file(path)? {
            let bad = |message: String| Error::Parse {
                file: file.clone(),
                line,
                message,
            };
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("bad integer '{v}': {e}")));
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("bad number '{v}': {e}")));
            match key.as_str() {
                "channels" => spec.channels = parse_usize(&value)?,
                "novice_subjects" => spec.novice_subjects = parse_usize(&value)?,
                "intermediate_subjects" => spec.intermediate_subjects = parse_usize(&value)?,
                "expert_subjects" => spec.expert_subjects = parse_usize(&value)?,
                "repetitions" => {
                    spec.repetitions = value
                        .parse::<u8>()
                        .map_err(|e| bad(format!("bad repetition count '{value}': {e}")))?
                }
                "min_len" => spec.min_len = parse_usize(&value)?,
                "max_len" => spec.max_len = parse_usize(&value)?,
                "task_freq.suturing" => spec.task_freq[0] = parse_f64(&value)?,
                "task_freq.needle-passing" => spec.task_freq[1] = parse_f64(&value)?,
                "task_freq.knot-tying" => spec.task_freq[2] = parse_f64(&value)?,
                "jitter.novice" => spec.skill_jitter[0] = parse_f64(&value)?,
                "jitter.intermediate" => spec.skill_jitter[1] = parse_f64(&value)?,
                "jitter.expert" => spec.skill_jitter[2] = parse_f64(&value)?,
                other => return Err(bad(format!("unknown synthetic-spec key '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    fn skill_of_subject(&self, subject: usize) -> SkillLabel {
        if subject < self.novice_subjects {
            SkillLabel::Novice
        } else if subject < self.novice_subjects + self.intermediate_subjects {
            SkillLabel::Intermediate
        } else {
            SkillLabel::Expert
        }
    }
}

/// Deterministically generate a labeled corpus from a spec and seed.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Vec<KinematicTrial>> {
    spec.validate()?;
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut trials = Vec::new();
    let two_pi = std::f64::consts::TAU;
    for subject in 0..spec.subjects() {
        let skill = spec.skill_of_subject(subject);
        let subject_id = format!("S{:02}", subject + 1);
        for task in TaskLabel::ALL {
            for rep in 1..=spec.repetitions {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let jitter = spec.skill_jitter[skill.index()];
                let base_freq = spec.task_freq[task.index()];
                let mut data = vec![0.0; len * spec.channels];
                for c in 0..spec.channels {
                    let freq = base_freq * (1.0 + 0.15 * c as f64);
                    let phase = rng.gen_range(0.0..two_pi);
                    let harmonic_phase = rng.gen_range(0.0..two_pi);
                    let tremor_phase = rng.gen_range(0.0..two_pi);
                    for t in 0..len {
                        let time = t as f64 / SAMPLE_RATE_HZ;
                        let smooth = (two_pi * freq * time + phase).sin()
                            + 0.35 * (two_pi * 2.0 * freq * time + harmonic_phase).sin();
                        let tremor = 0.5 * jitter * (two_pi * 5.5 * time + tremor_phase).sin();
                        let noise = jitter * rng.gen_range(-1.0..1.0);
                        data[t * spec.channels + c] = smooth + tremor + noise;
                    }
                }
                trials.push(KinematicTrial {
                    trial_id: format!("{}_{}_r{}", subject_id, task.name(), rep),
                    subject_id: subject_id.clone(),
                    skill,
                    task,
                    repetition: rep,
                    samples: Tensor::from_vec(vec![len, spec.channels], data)?,
                });
            }
        }
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial_of(samples: Vec<Vec<f64>>) -> KinematicTrial {
        KinematicTrial {
            trial_id: "t0".into(),
            subject_id: "S01".into(),
            skill: SkillLabel::Novice,
            task: TaskLabel::Suturing,
            repetition: 1,
            samples: Tensor::matrix(&samples).unwrap(),
        }
    }

    #[test]
    fn znormalize_three_point_channel() {
        let t = znormalize(&trial_of(vec![vec![1.0], vec![2.0], vec![3.0]]));
        let d = t.samples.data();
        assert!((d[0] + 1.224_744_871_391_589).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
        assert!((d[2] - 1.224_744_871_391_589).abs() < 1e-12);
    }

    #[test]
    fn znormalize_constant_channel_is_zeroed() {
        let t = znormalize(&trial_of(vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]]));
        for r in 0..3 {
            assert_eq!(t.samples.row(r)[0], 0.0);
        }
    }

    #[test]
    fn znormalize_output_has_zero_mean_unit_variance() {
        let t = znormalize(&trial_of(vec![
            vec![1.5, -2.0],
            vec![0.3, 4.0],
            vec![-1.1, 0.5],
            vec![2.2, 1.5],
        ]));
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).map(|r| t.samples.row(r)[c]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts_and_boundaries() {
        let mk = |len: usize| trial_of((0..len).map(|i| vec![i as f64]).collect());
        assert_eq!(window(&mk(300), 120, 30).unwrap().len(), 7);
        assert_eq!(window(&mk(120), 120, 30).unwrap().len(), 1);
        let err = window(&mk(119), 120, 30).unwrap_err();
        assert!(matches!(err, Error::TrialTooShort { len: 119, .. }));
        assert!(err.to_string().contains("t0"));
    }

    #[test]
    fn windows_are_contiguous_strided_views() {
        let t = trial_of((0..10).map(|i| vec![i as f64, -(i as f64)]).collect());
        let ws = window(&t, 4, 3).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(ws[1].window_index, 1);
        assert_eq!(ws[1].frame.row(0), &[3.0, -3.0]);
        assert_eq!(ws[2].frame.row(3), &[9.0, -9.0]);
        assert!(ws.iter().all(|w| w.skill == t.skill && w.task == t.task));
    }

    #[test]
    fn loso_folds_partition_the_corpus() {
        let spec = SynthSpec {
            min_len: 130,
            max_len: 150,
            ..SynthSpec::default()
        };
        let trials = synth_generate(&spec, 5).unwrap();
        assert_eq!(trials.len(), 120);
        let plan = build_loso_folds(&trials).unwrap();
        assert_eq!(plan.folds.len(), 5);
        for fold in &plan.folds {
            assert_eq!(fold.test_trials.len(), 24);
            assert_eq!(fold.train_trials.len(), 96);
            for id in &fold.test_trials {
                assert!(!fold.train_trials.contains(id));
            }
        }
        // every trial appears in exactly one test fold
        let mut seen = std::collections::BTreeSet::new();
        for fold in &plan.folds {
            for id in &fold.test_trials {
                assert!(seen.insert(id.clone()));
            }
        }
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn loso_rejects_out_of_range_repetition() {
        let mut t = trial_of(vec![vec![0.0]]);
        t.repetition = 6;
        assert!(build_loso_folds(&[t]).is_err());
    }

    #[test]
    fn split_is_grouped_stratified_and_deterministic() {
        let spec = SynthSpec {
            min_len: 126,
            max_len: 126,
            ..SynthSpec::default()
        };
        let trials = synth_generate(&spec, 11).unwrap();
        let mut windows = Vec::new();
        for t in &trials {
            windows.extend(window(&znormalize(t), 120, 30).unwrap());
        }
        let (train, val) = train_val_split(&windows, 0.8, 99).unwrap();
        let (train2, val2) = train_val_split(&windows, 0.8, 99).unwrap();
        assert_eq!(train, train2);
        assert_eq!(val, val2);
        assert_eq!(train.len() + val.len(), windows.len());
        let train_ids: std::collections::BTreeSet<_> = train.iter().map(|w| &w.trial_id).collect();
        let val_ids: std::collections::BTreeSet<_> = val.iter().map(|w| &w.trial_id).collect();
        assert!(train_ids.is_disjoint(&val_ids));
        // 9 strata: novice/intermediate/expert x 3 tasks with 20/10/10 trials
        // -> 4/2/2 validation trials per task column
        assert_eq!(val_ids.len(), 3 * (4 + 2 + 2));
    }

    #[test]
    fn split_keeps_single_trial_stratum_in_training() {
        let t = trial_of((0..130).map(|i| vec![i as f64]).collect());
        let windows = window(&t, 120, 30).unwrap();
        let (train, val) = train_val_split(&windows, 0.8, 1).unwrap();
        assert_eq!(val.len(), 0);
        assert_eq!(train.len(), windows.len());
    }

    #[test]
    fn synth_is_deterministic_and_counts_multiply() {
        let spec = SynthSpec {
            min_len: 130,
            max_len: 180,
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec, 7).unwrap();
        let b = synth_generate(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8 * 3 * 5);
        let c = synth_generate(&spec, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_jitter_orders_second_difference_energy() {
        // independent roughness oracle: mean squared second difference
        fn second_diff_energy(t: &KinematicTrial) -> f64 {
            let (rows, cols) = (t.len(), t.channels());
            let d = t.samples.data();
            let mut acc = 0.0;
            let mut count = 0usize;
            for c in 0..cols {
                for r in 1..rows - 1 {
                    let s = d[(r + 1) * cols + c] - 2.0 * d[r * cols + c] + d[(r - 1) * cols + c];
                    acc += s * s;
                    count += 1;
                }
            }
            acc / count as f64
        }
        let spec = SynthSpec {
            min_len: 400,
            max_len: 500,
            skill_jitter: [0.8, 0.3, 0.0],
            ..SynthSpec::default()
        };
        let trials = synth_generate(&spec, 3).unwrap();
        let novice_min = trials
            .iter()
            .filter(|t| t.skill == SkillLabel::Novice)
            .map(second_diff_energy)
            .fold(f64::INFINITY, f64::min);
        let expert_max = trials
            .iter()
            .filter(|t| t.skill == SkillLabel::Expert)
            .map(second_diff_energy)
            .fold(0.0, f64::max);
        assert!(
            novice_min > expert_max,
            "novice roughness {novice_min} should exceed expert {expert_max}"
        );
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = SynthSpec {
            novice_subjects: 0,
            intermediate_subjects: 0,
            expert_subjects: 0,
            ..SynthSpec::default()
        };
        assert!(synth_generate(&spec, 0).is_err());
    }

    #[test]
    fn label_names_match_model_class_tables() {
        for (label, expected) in SkillLabel::ALL.iter().zip(crate::model::DEFAULT_SKILL_CLASSES) {
            assert_eq!(label.name(), expected);
        }
        for (label, expected) in TaskLabel::ALL.iter().zip(crate::model::DEFAULT_TASK_CLASSES) {
            assert_eq!(label.name(), expected);
        }
    }
}
