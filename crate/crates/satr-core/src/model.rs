//! The dual-head network: parallel convolutional and recurrent paths over a
//! kinematic window, merged into two softmax heads for skill and task.
//!
//! Topology per batch `[N x T x C]`:
//!
//! ```text
//! conv path:  conv -> BN -> ReLU -> dropout   (x2 blocks)  -> flatten
//! gru path:   GRU -> dropout                  (x2 layers)  -> last state
//! merge:      concat -> BN -> ReLU -> dropout -> {skill, task} softmax
//! ```

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{self, LayerMode, BN_EPSILON, BN_MOMENTUM};
use crate::tape::{GradientTape, GruWeights, NodeId};
use crate::tensor::Tensor;
use crate::SeededRng;

pub const DEFAULT_SKILL_CLASSES: [&str; 3] = ["novice", "intermediate", "expert"];
pub const DEFAULT_TASK_CLASSES: [&str; 3] = ["suturing", "needle-passing", "knot-tying"];

const CHECKPOINT_VERSION: u32 = 1;

/// Fresh running statistics for one batch-norm site: the site's parameter
/// prefix plus its new (mean, variance) vectors.
pub type BnUpdate = (String, (Vec<f64>, Vec<f64>));

/// One classification head: a name and its class count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub name: String,
    pub classes: usize,
}

/// Network hyperparameters. `channels` comes from the corpus; everything
/// else defaults to the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub window: usize,
    pub conv_kernels: Vec<usize>,
    pub conv_kernel_size: usize,
    pub conv_dropout: f64,
    pub gru_hidden: Vec<usize>,
    pub gru_dropout: f64,
    pub merge_dropout: f64,
    pub heads: Vec<HeadConfig>,
}

impl ModelConfig {
    pub fn new(channels: usize) -> Self {
        ModelConfig {
            channels,
            window: 120,
            conv_kernels: vec![32, 64],
            conv_kernel_size: 2,
            conv_dropout: 0.2,
            gru_hidden: vec![128, 64],
            gru_dropout: 0.2,
            merge_dropout: 0.5,
            heads: vec![
                HeadConfig { name: "skill".into(), classes: 3 },
                HeadConfig { name: "task".into(), classes: 3 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("channel count must be >= 1".into()));
        }
        if self.conv_kernels.is_empty() || self.gru_hidden.is_empty() {
            return Err(Error::Config("need at least one conv block and one GRU layer".into()));
        }
        if self.conv_kernels.iter().chain(self.gru_hidden.iter()).any(|&n| n == 0) {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        if self.conv_kernel_size == 0 {
            return Err(Error::Config("conv kernel size must be >= 1".into()));
        }
        for rate in [self.conv_dropout, self.gru_dropout, self.merge_dropout] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("dropout rate {} outside [0, 1)", rate)));
            }
        }
        let shrink = self.conv_kernels.len() * (self.conv_kernel_size - 1);
        if self.window <= shrink {
            return Err(Error::Config(format!(
                "window {} leaves no conv output after {} blocks of kernel size {}",
                self.window,
                self.conv_kernels.len(),
                self.conv_kernel_size
            )));
        }
        if self.heads.len() != 2 {
            return Err(Error::Config(format!(
                "exactly two heads are supported, got {}",
                self.heads.len()
            )));
        }
        if self.heads.iter().any(|h| h.classes < 2) {
            return Err(Error::Config("each head needs at least 2 classes".into()));
        }
        Ok(())
    }

    /// Time extent after `blocks` conv blocks.
    fn conv_len_after(&self, blocks: usize) -> usize {
        self.window - blocks * (self.conv_kernel_size - 1)
    }

    /// Width of the concatenated feature vector entering the merge block.
    pub fn merged_features(&self) -> usize {
        let conv_flat = self.conv_len_after(self.conv_kernels.len()) * self.conv_kernels.last().unwrap();
        conv_flat + self.gru_hidden.last().unwrap()
    }
}

/// Per-example posterior distributions of both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPrediction {
    pub skill: Vec<f64>,
    pub task: Vec<f64>,
}

impl DualPrediction {
    /// Argmax with ties broken toward the lowest class index.
    pub fn skill_label(&self) -> usize {
        argmax(&self.skill)
    }

    pub fn task_label(&self) -> usize {
        argmax(&self.task)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Every learnable tensor of the network plus the batch-norm running
/// statistics, addressable by name for the optimizer and checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct SatrParams {
    config: ModelConfig,
    class_names: Vec<Vec<String>>,
    tensors: BTreeMap<String, Tensor>,
}

fn xavier(rng: &mut SeededRng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("shape/data agree by construction")
}

/// Xavier-uniform weights, zero biases, identity batch-norm.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<SatrParams> {
    config.validate()?;
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    let k = config.conv_kernel_size;

    let mut cin = config.channels;
    for (i, &cout) in config.conv_kernels.iter().enumerate() {
        let prefix = format!("conv{}", i + 1);
        tensors.insert(
            format!("{prefix}.kernels"),
            xavier(&mut rng, vec![cout, cin, k], cin * k, cout * k),
        );
        tensors.insert(format!("{prefix}.bias"), Tensor::zeros(vec![cout]));
        tensors.insert(format!("{prefix}.bn.gamma"), Tensor::filled(vec![cout], 1.0));
        tensors.insert(format!("{prefix}.bn.beta"), Tensor::zeros(vec![cout]));
        tensors.insert(format!("{prefix}.bn.running_mean"), Tensor::zeros(vec![cout]));
        tensors.insert(format!("{prefix}.bn.running_var"), Tensor::filled(vec![cout], 1.0));
        cin = cout;
    }

    let mut gru_in = config.channels;
    for (i, &hidden) in config.gru_hidden.iter().enumerate() {
        let prefix = format!("gru{}", i + 1);
        for gate in ["z", "r", "h"] {
            tensors.insert(
                format!("{prefix}.w{gate}"),
                xavier(&mut rng, vec![hidden, gru_in], gru_in, hidden),
            );
            tensors.insert(
                format!("{prefix}.u{gate}"),
                xavier(&mut rng, vec![hidden, hidden], hidden, hidden),
            );
            tensors.insert(format!("{prefix}.b{gate}"), Tensor::zeros(vec![hidden]));
        }
        gru_in = hidden;
    }

    let merged = config.merged_features();
    tensors.insert("merge.bn.gamma".into(), Tensor::filled(vec![merged], 1.0));
    tensors.insert("merge.bn.beta".into(), Tensor::zeros(vec![merged]));
    tensors.insert("merge.bn.running_mean".into(), Tensor::zeros(vec![merged]));
    tensors.insert("merge.bn.running_var".into(), Tensor::filled(vec![merged], 1.0));

    for head in &config.heads {
        tensors.insert(
            format!("head.{}.weight", head.name),
            xavier(&mut rng, vec![head.classes, merged], merged, head.classes),
        );
        tensors.insert(format!("head.{}.bias", head.name), Tensor::zeros(vec![head.classes]));
    }

    let class_names = default_class_names(config);
    Ok(SatrParams {
        config: config.clone(),
        class_names,
        tensors,
    })
}

fn default_class_names(config: &ModelConfig) -> Vec<Vec<String>> {
    config
        .heads
        .iter()
        .map(|head| match head.name.as_str() {
            "skill" if head.classes == 3 => {
                DEFAULT_SKILL_CLASSES.iter().map(|s| s.to_string()).collect()
            }
            "task" if head.classes == 3 => {
                DEFAULT_TASK_CLASSES.iter().map(|s| s.to_string()).collect()
            }
            _ => (0..head.classes).map(|i| format!("{}_{}", head.name, i)).collect(),
        })
        .collect()
}

impl SatrParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Names of the tensors the optimizer updates (running statistics are
    /// state, not parameters).
    pub fn learnable_names(&self) -> Vec<String> {
        self.tensors
            .keys()
            .filter(|n| !n.contains(".running_"))
            .cloned()
            .collect()
    }

    /// Class-name table for head index `h`.
    pub fn class_names(&self, head: usize) -> &[String] {
        &self.class_names[head]
    }

    /// Fold fresh batch statistics into the running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for (prefix, (mean, var)) in updates {
            let m = self
                .tensors
                .get_mut(&format!("{prefix}.running_mean"))
                .expect("running mean exists for every BN site");
            m.data_mut().copy_from_slice(mean);
            let v = self
                .tensors
                .get_mut(&format!("{prefix}.running_var"))
                .expect("running var exists for every BN site");
            v.data_mut().copy_from_slice(var);
        }
    }
}

/// A recorded forward pass over one batch.
pub struct ForwardPass {
    pub tape: GradientTape,
    /// Probability node per head, in config order (skill, task).
    pub head_probs: Vec<NodeId>,
    /// Merged feature node entering the shared classifier block.
    pub merged: NodeId,
    /// Running-statistic updates to fold back into the parameters after a
    /// training step. Empty in inference mode.
    pub bn_updates: Vec<BnUpdate>,
}

impl ForwardPass {
    /// Per-example posteriors of both heads.
    pub fn predictions(&self) -> Vec<DualPrediction> {
        let skill = self.tape.value(self.head_probs[0]);
        let task = self.tape.value(self.head_probs[1]);
        let k_skill = *skill.shape().last().unwrap();
        let k_task = *task.shape().last().unwrap();
        let n = skill.len() / k_skill;
        (0..n)
            .map(|i| DualPrediction {
                skill: skill.data()[i * k_skill..(i + 1) * k_skill].to_vec(),
                task: task.data()[i * k_task..(i + 1) * k_task].to_vec(),
            })
            .collect()
    }
}

fn gru_weight_nodes(tape: &mut GradientTape, params: &SatrParams, prefix: &str) -> GruWeights {
    let mut node = |suffix: &str| {
        let name = format!("{prefix}.{suffix}");
        let tensor = params.get(&name).expect("validated parameter set");
        tape.param(&name, tensor)
    };
    GruWeights {
        wz: node("wz"),
        uz: node("uz"),
        bz: node("bz"),
        wr: node("wr"),
        ur: node("ur"),
        br: node("br"),
        wh: node("wh"),
        uh: node("uh"),
        bh: node("bh"),
    }
}

/// Record the full network over `batch` (`[N x T x C]`).
///
/// Training mode requires `N >= 2` (batch normalization) and draws dropout
/// masks from `rng`; the returned `bn_updates` must be applied to the
/// parameter set to advance the running statistics.
pub fn forward(
    params: &SatrParams,
    batch: &Tensor,
    mode: LayerMode,
    rng: &mut SeededRng,
) -> Result<ForwardPass> {
    let config = &params.config;
    let [n, t, c] = *batch.shape() else {
        return Err(Error::shape("forward", "batch [N x T x C]", batch.shape_string()));
    };
    if t != config.window || c != config.channels {
        return Err(Error::shape(
            "forward",
            format!("[N x {} x {}]", config.window, config.channels),
            batch.shape_string(),
        ));
    }
    if mode == LayerMode::Training && n < 2 {
        return Err(Error::Config(
            "training forward needs a batch of at least 2 examples (batch normalization)".into(),
        ));
    }

    let mut tape = GradientTape::new();
    let mut bn_updates = Vec::new();
    let input = tape.input(batch.clone());

    // convolutional path
    let mut x = input;
    let mut t_len = t;
    for (i, &cout) in config.conv_kernels.iter().enumerate() {
        let prefix = format!("conv{}", i + 1);
        let kernels = tape.param(
            &format!("{prefix}.kernels"),
            params.get(&format!("{prefix}.kernels")).unwrap(),
        );
        let bias = tape.param(
            &format!("{prefix}.bias"),
            params.get(&format!("{prefix}.bias")).unwrap(),
        );
        x = layers::conv1d(&mut tape, x, kernels, bias)?;
        t_len -= config.conv_kernel_size - 1;
        // one feature per output channel; statistics over batch and time jointly
        x = layers::reshape(&mut tape, x, vec![n * t_len, cout])?;
        let gamma = tape.param(
            &format!("{prefix}.bn.gamma"),
            params.get(&format!("{prefix}.bn.gamma")).unwrap(),
        );
        let beta = tape.param(
            &format!("{prefix}.bn.beta"),
            params.get(&format!("{prefix}.bn.beta")).unwrap(),
        );
        let bn = layers::batchnorm(
            &mut tape,
            x,
            gamma,
            beta,
            params.get(&format!("{prefix}.bn.running_mean")).unwrap().data(),
            params.get(&format!("{prefix}.bn.running_var")).unwrap().data(),
            mode,
        )?;
        if let Some(updated) = bn.updated_running {
            bn_updates.push((format!("{prefix}.bn"), updated));
        }
        x = layers::relu(&mut tape, bn.node);
        x = layers::dropout(&mut tape, x, config.conv_dropout, mode, rng)?;
        x = layers::reshape(&mut tape, x, vec![n, t_len, cout])?;
    }
    let conv_flat = t_len * config.conv_kernels[config.conv_kernels.len() - 1];
    let flattened = layers::reshape(&mut tape, x, vec![n, conv_flat])?;

    // recurrent path
    let mut seq = input;
    for i in 0..config.gru_hidden.len() {
        let prefix = format!("gru{}", i + 1);
        let weights = gru_weight_nodes(&mut tape, params, &prefix);
        seq = layers::gru_layer(&mut tape, seq, None, &weights)?;
        seq = layers::dropout(&mut tape, seq, config.gru_dropout, mode, rng)?;
    }
    let final_state = layers::last_step(&mut tape, seq)?;

    // merge block
    let merged = layers::concat(&mut tape, flattened, final_state)?;
    let gamma = tape.param("merge.bn.gamma", params.get("merge.bn.gamma").unwrap());
    let beta = tape.param("merge.bn.beta", params.get("merge.bn.beta").unwrap());
    let bn = layers::batchnorm(
        &mut tape,
        merged,
        gamma,
        beta,
        params.get("merge.bn.running_mean").unwrap().data(),
        params.get("merge.bn.running_var").unwrap().data(),
        mode,
    )?;
    if let Some(updated) = bn.updated_running {
        bn_updates.push(("merge.bn".to_string(), updated));
    }
    let activated = layers::relu(&mut tape, bn.node);
    let shared = layers::dropout(&mut tape, activated, config.merge_dropout, mode, rng)?;

    let mut head_probs = Vec::with_capacity(config.heads.len());
    for head in &config.heads {
        let weight = tape.param(
            &format!("head.{}.weight", head.name),
            params.get(&format!("head.{}.weight", head.name)).unwrap(),
        );
        let bias = tape.param(
            &format!("head.{}.bias", head.name),
            params.get(&format!("head.{}.bias", head.name)).unwrap(),
        );
        head_probs.push(layers::dense_softmax(&mut tape, shared, weight, bias)?);
    }

    Ok(ForwardPass {
        tape,
        head_probs,
        merged,
        bn_updates,
    })
}

/// Inference-mode forward; dropout is inactive so no RNG state matters.
pub fn forward_inference(params: &SatrParams, batch: &Tensor) -> Result<ForwardPass> {
    let mut rng = SeededRng::seed_from_u64(0);
    forward(params, batch, LayerMode::Inference, &mut rng)
}

fn check_labels(labels: &[(usize, usize)], k_skill: usize, k_task: usize) -> Result<()> {
    for &(skill, task) in labels {
        if skill >= k_skill {
            return Err(Error::LabelOutOfRange {
                head: "skill".into(),
                value: skill,
                classes: k_skill,
            });
        }
        if task >= k_task {
            return Err(Error::LabelOutOfRange {
                head: "task".into(),
                value: task,
                classes: k_task,
            });
        }
    }
    Ok(())
}

/// Record the joint objective on the tape: cross-entropy per head, summed
/// over heads, averaged over the batch.
pub fn joint_loss_node(pass: &mut ForwardPass, labels: &[(usize, usize)]) -> Result<NodeId> {
    let k_skill = *pass.tape.value(pass.head_probs[0]).shape().last().unwrap();
    let k_task = *pass.tape.value(pass.head_probs[1]).shape().last().unwrap();
    check_labels(labels, k_skill, k_task)?;
    let skill_labels: Vec<usize> = labels.iter().map(|l| l.0).collect();
    let task_labels: Vec<usize> = labels.iter().map(|l| l.1).collect();
    let ce_skill = layers::cross_entropy_mean(&mut pass.tape, pass.head_probs[0], &skill_labels)?;
    let ce_task = layers::cross_entropy_mean(&mut pass.tape, pass.head_probs[1], &task_labels)?;
    layers::add(&mut pass.tape, ce_skill, ce_task)
}

/// The joint objective evaluated directly on posteriors: summed over heads,
/// averaged over examples.
pub fn joint_loss(predictions: &[DualPrediction], labels: &[(usize, usize)]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "joint_loss",
            format!("{} predictions", predictions.len()),
            format!("{} label pairs", labels.len()),
        ));
    }
    if predictions.is_empty() {
        return Err(Error::Usage("joint_loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for (pred, &(skill, task)) in predictions.iter().zip(labels) {
        check_labels(&[(skill, task)], pred.skill.len(), pred.task.len())?;
        total -= pred.skill[skill].ln() + pred.task[task].ln();
    }
    Ok(total / predictions.len() as f64)
}

/// Classify one window in inference mode.
pub fn predict_interval(params: &SatrParams, window: &Tensor) -> Result<(usize, usize, DualPrediction)> {
    let [t, c] = *window.shape() else {
        return Err(Error::shape("predict_interval", "window [T x C]", window.shape_string()));
    };
    let batch = window.reshaped(vec![1, t, c])?;
    let pass = forward_inference(params, &batch)?;
    let pred = pass.predictions().remove(0);
    Ok((pred.skill_label(), pred.task_label(), pred))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    bn_epsilon: f64,
    bn_momentum: f64,
    config: ModelConfig,
    class_names: Vec<Vec<String>>,
    tensors: BTreeMap<String, Tensor>,
}

/// Write the parameter set; the round trip through [`load_checkpoint`] is
/// bit-exact.
pub fn save_checkpoint(params: &SatrParams, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        bn_epsilon: BN_EPSILON,
        bn_momentum: BN_MOMENTUM,
        config: params.config.clone(),
        class_names: params.class_names.clone(),
        tensors: params.tensors.clone(),
    };
    let mut writer = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut writer, &file)?;
    writer.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SatrParams> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            file: path.display().to_string(),
            message: format!(
                "unsupported checkpoint version {} (expected {})",
                file.format_version, CHECKPOINT_VERSION
            ),
        });
    }
    file.config.validate()?;
    Ok(SatrParams {
        config: file.config,
        class_names: file.class_names,
        tensors: file.tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        let mut config = ModelConfig::new(4);
        config.window = 12;
        config.conv_kernels = vec![3, 4];
        config.gru_hidden = vec![5, 4];
        config
    }

    #[test]
    fn xavier_limit_matches_glorot_formula() {
        // dense 4 -> 4: limit sqrt(6/8) = 0.8660...
        assert!(((6.0f64 / 8.0).sqrt() - 0.8660254037844386).abs() < 1e-15);
        let params = init_params(&tiny_config(), 9).unwrap();
        // gru2.uz is 4x4 (fan_in = fan_out = 4): bound sqrt(6/8)
        let uz = params.get("gru2.uz").unwrap();
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(uz.data().iter().all(|v| v.abs() < limit));
        assert!(uz.data().iter().any(|v| v.abs() > limit * 0.5));
    }

    #[test]
    fn biases_and_bn_start_at_identity() {
        let params = init_params(&tiny_config(), 3).unwrap();
        for name in ["conv1.bias", "conv2.bias", "gru1.bz", "head.skill.bias", "merge.bn.beta"] {
            assert!(params.get(name).unwrap().data().iter().all(|v| *v == 0.0), "{name}");
        }
        assert!(params.get("merge.bn.gamma").unwrap().data().iter().all(|v| *v == 1.0));
        assert!(params.get("conv1.bn.running_var").unwrap().data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let a = init_params(&tiny_config(), 42).unwrap();
        let b = init_params(&tiny_config(), 42).unwrap();
        assert_eq!(a, b);
        let c = init_params(&tiny_config(), 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_shape_contract() {
        // T=120, C=76 -> conv flattens to 118*64 = 7552, + GRU 64 = 7616
        let config = ModelConfig::new(76);
        assert_eq!(config.merged_features(), 7616);
    }

    #[test]
    fn forward_posteriors_normalize_and_repeat_bit_identically() {
        let config = tiny_config();
        let params = init_params(&config, 7).unwrap();
        let batch = {
            let mut rng = SeededRng::seed_from_u64(1);
            let data: Vec<f64> = (0..2 * 12 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(vec![2, 12, 4], data).unwrap()
        };
        let pass1 = forward_inference(&params, &batch).unwrap();
        let pass2 = forward_inference(&params, &batch).unwrap();
        let (p1, p2) = (pass1.predictions(), pass2.predictions());
        assert_eq!(p1, p2);
        for pred in &p1 {
            let s: f64 = pred.skill.iter().sum();
            let t: f64 = pred.task.iter().sum();
            assert!((s - 1.0).abs() < 1e-9 && (t - 1.0).abs() < 1e-9);
        }
        assert!(pass1.bn_updates.is_empty());
    }

    #[test]
    fn training_single_example_batch_is_rejected() {
        let params = init_params(&tiny_config(), 7).unwrap();
        let batch = Tensor::zeros(vec![1, 12, 4]);
        let mut rng = SeededRng::seed_from_u64(0);
        assert!(forward(&params, &batch, LayerMode::Training, &mut rng).is_err());
    }

    #[test]
    fn joint_loss_uniform_and_perfect() {
        let uniform = DualPrediction {
            skill: vec![1.0 / 3.0; 3],
            task: vec![1.0 / 3.0; 3],
        };
        let loss = joint_loss(&[uniform], &[(2, 0)]).unwrap();
        assert!((loss - 2.0 * 3f64.ln()).abs() < 1e-9);

        let perfect = DualPrediction {
            skill: vec![0.0, 1.0, 0.0],
            task: vec![0.0, 0.0, 1.0],
        };
        let loss = joint_loss(&[perfect], &[(1, 2)]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn joint_loss_matches_frozen_triple_sum() {
        // Frozen from an independent evaluation of the triple sum with
        // m=2 hand-set posteriors.
        let preds = vec![
            DualPrediction { skill: vec![0.7, 0.2, 0.1], task: vec![0.6, 0.3, 0.1] },
            DualPrediction { skill: vec![0.2, 0.5, 0.3], task: vec![0.1, 0.1, 0.8] },
        ];
        let loss = joint_loss(&preds, &[(0, 2), (1, 0)]).unwrap();
        assert!((loss - 2.8274961552433844).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_decomposes_per_head() {
        let preds = vec![
            DualPrediction { skill: vec![0.5, 0.25, 0.25], task: vec![0.8, 0.1, 0.1] },
            DualPrediction { skill: vec![0.3, 0.4, 0.3], task: vec![0.2, 0.7, 0.1] },
        ];
        let labels = [(0usize, 1usize), (2, 0)];
        let joint = joint_loss(&preds, &labels).unwrap();
        let skill_only: f64 = preds
            .iter()
            .zip(&labels)
            .map(|(p, l)| -p.skill[l.0].ln())
            .sum::<f64>()
            / 2.0;
        let task_only: f64 = preds
            .iter()
            .zip(&labels)
            .map(|(p, l)| -p.task[l.1].ln())
            .sum::<f64>()
            / 2.0;
        assert!((joint - (skill_only + task_only)).abs() < 1e-15);
    }

    #[test]
    fn joint_loss_rejects_out_of_range_labels() {
        let uniform = DualPrediction {
            skill: vec![1.0 / 3.0; 3],
            task: vec![1.0 / 3.0; 3],
        };
        assert!(matches!(
            joint_loss(&[uniform], &[(3, 0)]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = init_params(&tiny_config(), 21).unwrap();
        let dir = std::env::temp_dir().join("satr_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
        let batch = Tensor::filled(vec![1, 12, 4], 0.25);
        let a = forward_inference(&params, &batch).unwrap().predictions();
        let b = forward_inference(&loaded, &batch).unwrap().predictions();
        assert_eq!(a, b);
        std::fs::remove_dir_all(&dir).ok();
    }
}
