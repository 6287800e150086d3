//! Differentiable layer primitives recorded on a [`GradientTape`].
//!
//! Every function takes node handles, computes the forward value, pushes a
//! node carrying whatever the backward rule will need, and returns the new
//! handle. Single examples and batches share the same entry points: a
//! leading batch extent is simply an extra leading tensor rank.

pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod gru;
pub(crate) mod math;
pub(crate) mod norm;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{GradientTape, GruWeights, NodeId, Op};
use crate::tensor::Tensor;

pub use norm::{BN_EPSILON, BN_MOMENTUM};

/// Whether a forward pass is part of training or inference.
///
/// Inference disables dropout and normalizes by running statistics;
/// training uses batch statistics and active dropout masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Training,
    Inference,
}

/// Valid 1-D convolution over time, stride 1: `[.. x T x Cin]` with kernels
/// `[Cout x Cin x k]` gives `[.. x T-k+1 x Cout]`.
pub fn conv1d(tape: &mut GradientTape, input: NodeId, kernels: NodeId, bias: NodeId) -> Result<NodeId> {
    let out = conv::forward(tape.value(input), tape.value(kernels), tape.value(bias))?;
    Ok(tape.push(out, Op::Conv1d { input, kernels, bias }))
}

/// Result of a batch-normalization record: the output node plus the running
/// statistics the caller should fold back into its parameter store when
/// training.
pub struct BatchNormOutput {
    pub node: NodeId,
    pub updated_running: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn batchnorm(
    tape: &mut GradientTape,
    input: NodeId,
    gamma: NodeId,
    beta: NodeId,
    running_mean: &[f64],
    running_var: &[f64],
    mode: LayerMode,
) -> Result<BatchNormOutput> {
    let fwd = norm::forward(
        tape.value(input),
        tape.value(gamma),
        tape.value(beta),
        running_mean,
        running_var,
        mode == LayerMode::Training,
    )?;
    let node = tape.push(
        fwd.output,
        Op::BatchNorm { input, gamma, beta, saved: fwd.saved },
    );
    Ok(BatchNormOutput {
        node,
        updated_running: fwd.updated_running,
    })
}

pub fn relu(tape: &mut GradientTape, input: NodeId) -> NodeId {
    let mut out = tape.value(input).clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    tape.push(out, Op::Relu { input })
}

/// Inverted dropout: zero with probability `rate`, scale survivors by
/// `1/(1-rate)` so inference is an identity.
pub fn dropout<R: Rng>(
    tape: &mut GradientTape,
    input: NodeId,
    rate: f64,
    mode: LayerMode,
    rng: &mut R,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!(
            "dropout rate must be in [0, 1), got {}",
            rate
        )));
    }
    if mode == LayerMode::Inference || rate == 0.0 {
        let out = tape.value(input).clone();
        return Ok(tape.push(out, Op::Dropout { input, mask: None }));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..tape.value(input).len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
        .collect();
    let mut out = tape.value(input).clone();
    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
        *v *= *m;
    }
    Ok(tape.push(out, Op::Dropout { input, mask: Some(mask) }))
}

/// One GRU step: `x` is `[Cin]`, `h_prev` is `[H]`, result is `[H]`.
pub fn gru_cell(tape: &mut GradientTape, x: NodeId, h_prev: NodeId, weights: &GruWeights) -> Result<NodeId> {
    let [cin] = *tape.value(x).shape() else {
        return Err(Error::shape("gru_cell", "x [Cin]", tape.value(x).shape_string()));
    };
    let [h] = *tape.value(h_prev).shape() else {
        return Err(Error::shape("gru_cell", "h_prev [H]", tape.value(h_prev).shape_string()));
    };
    let seq = reshape(tape, x, vec![1, cin])?;
    let out = gru_layer_from(tape, seq, h_prev, weights)?;
    reshape(tape, out, vec![h])
}

/// GRU over a full sequence, returning every hidden state. `h0` defaults to
/// zeros when omitted.
pub fn gru_layer(
    tape: &mut GradientTape,
    seq: NodeId,
    h0: Option<NodeId>,
    weights: &GruWeights,
) -> Result<NodeId> {
    let h0 = match h0 {
        Some(h) => h,
        None => {
            let hidden = tape.value(weights.bz).len();
            tape.input(Tensor::zeros(vec![hidden]))
        }
    };
    gru_layer_from(tape, seq, h0, weights)
}

fn gru_layer_from(tape: &mut GradientTape, seq: NodeId, h0: NodeId, weights: &GruWeights) -> Result<NodeId> {
    let w = gru::GruWeightRefs {
        wz: tape.value(weights.wz),
        uz: tape.value(weights.uz),
        bz: tape.value(weights.bz),
        wr: tape.value(weights.wr),
        ur: tape.value(weights.ur),
        br: tape.value(weights.br),
        wh: tape.value(weights.wh),
        uh: tape.value(weights.uh),
        bh: tape.value(weights.bh),
    };
    let (out, saved) = gru::forward(tape.value(seq), tape.value(h0), &w)?;
    Ok(tape.push(
        out,
        Op::GruLayer {
            seq,
            h0,
            weights: *weights,
            saved,
        },
    ))
}

/// Affine map followed by softmax; returns the probability node.
pub fn dense_softmax(tape: &mut GradientTape, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
    let logits_val = dense::dense_forward(tape.value(input), tape.value(weight), tape.value(bias))?;
    let logits = tape.push(logits_val, Op::Dense { input, weight, bias });
    let probs = dense::softmax_forward(tape.value(logits))?;
    Ok(tape.push(probs, Op::Softmax { logits }))
}

/// Mean over rows of the negative log-likelihood of the true class.
pub fn cross_entropy_mean(tape: &mut GradientTape, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let loss = dense::cross_entropy_forward(tape.value(probs), labels)?;
    Ok(tape.push(
        Tensor::scalar(loss),
        Op::CrossEntropyMean {
            probs,
            labels: labels.to_vec(),
        },
    ))
}

/// Concatenate along the last axis; leading extents must match.
pub fn concat(tape: &mut GradientTape, left: NodeId, right: NodeId) -> Result<NodeId> {
    let (l, r) = (tape.value(left), tape.value(right));
    if l.rank() != r.rank() || l.shape()[..l.rank() - 1] != r.shape()[..r.rank() - 1] {
        return Err(Error::shape(
            "concat",
            format!("matching leading extents with {:?}", l.shape()),
            r.shape_string(),
        ));
    }
    let lw = *l.shape().last().unwrap();
    let rw = *r.shape().last().unwrap();
    let rows = l.len() / lw.max(1);
    let mut data = Vec::with_capacity(l.len() + r.len());
    for row in 0..rows {
        data.extend_from_slice(&l.data()[row * lw..(row + 1) * lw]);
        data.extend_from_slice(&r.data()[row * rw..(row + 1) * rw]);
    }
    let mut shape = l.shape().to_vec();
    *shape.last_mut().unwrap() = lw + rw;
    let out = Tensor::from_vec(shape, data)?;
    Ok(tape.push(out, Op::Concat { left, right }))
}

/// Same values, new extents.
pub fn reshape(tape: &mut GradientTape, input: NodeId, shape: Vec<usize>) -> Result<NodeId> {
    let out = tape.value(input).reshaped(shape)?;
    Ok(tape.push(out, Op::Reshape { input }))
}

/// Final time step of a hidden sequence: `[.. x T x H]` to `[.. x H]`.
pub fn last_step(tape: &mut GradientTape, seq: NodeId) -> Result<NodeId> {
    let v = tape.value(seq);
    let (out_shape, n, t_len, h) = match *v.shape() {
        [t, h] => (vec![h], 1, t, h),
        [n, t, h] => (vec![n, h], n, t, h),
        _ => return Err(Error::shape("last_step", "[T x H] or [N x T x H]", v.shape_string())),
    };
    let mut data = Vec::with_capacity(n * h);
    for ex in 0..n {
        let start = ex * t_len * h + (t_len - 1) * h;
        data.extend_from_slice(&v.data()[start..start + h]);
    }
    let out = Tensor::from_vec(out_shape, data)?;
    Ok(tape.push(out, Op::LastStep { seq }))
}

pub fn add(tape: &mut GradientTape, a: NodeId, b: NodeId) -> Result<NodeId> {
    same_shape(tape, "add", a, b)?;
    let mut out = tape.value(a).clone();
    out.add_assign(tape.value(b));
    Ok(tape.push(out, Op::Add { a, b }))
}

pub fn mul(tape: &mut GradientTape, a: NodeId, b: NodeId) -> Result<NodeId> {
    same_shape(tape, "mul", a, b)?;
    let mut out = tape.value(a).clone();
    for (x, y) in out.data_mut().iter_mut().zip(tape.value(b).data()) {
        *x *= *y;
    }
    Ok(tape.push(out, Op::Mul { a, b }))
}

pub fn sum(tape: &mut GradientTape, input: NodeId) -> NodeId {
    let total: f64 = tape.value(input).data().iter().sum();
    tape.push(Tensor::scalar(total), Op::Sum { input })
}

fn same_shape(tape: &GradientTape, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::shape(
            op,
            tape.value(a).shape_string(),
            tape.value(b).shape_string(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dropout_rate_zero_is_identity_in_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for mode in [LayerMode::Training, LayerMode::Inference] {
            let mut tape = GradientTape::new();
            let x = tape.input(Tensor::vector(vec![1.0, -2.0, 3.0]));
            let out = dropout(&mut tape, x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(tape.value(out).data(), &[1.0, -2.0, 3.0]);
        }
    }

    #[test]
    fn dropout_inference_is_identity_at_any_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::vector(vec![0.5, 0.25]));
        let out = dropout(&mut tape, x, 0.5, LayerMode::Inference, &mut rng).unwrap();
        assert_eq!(tape.value(out).data(), &[0.5, 0.25]);
    }

    #[test]
    fn dropout_survivors_scale_and_mass_balances() {
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::filled(vec![n], 1.0));
        let out = dropout(&mut tape, x, 0.5, LayerMode::Training, &mut rng).unwrap();
        let kept = tape.value(out).data().iter().filter(|v| **v != 0.0).count();
        let frac = kept as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "surviving fraction {}", frac);
        assert!(tape
            .value(out)
            .data()
            .iter()
            .all(|v| *v == 0.0 || *v == 2.0));
    }

    #[test]
    fn dropout_rejects_rate_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = GradientTape::new();
        let x = tape.input(Tensor::vector(vec![1.0]));
        assert!(dropout(&mut tape, x, 1.0, LayerMode::Training, &mut rng).is_err());
    }

    #[test]
    fn gru_cell_matches_layer_base_case() {
        // T = 1 layer call must equal one cell call
        let mut tape = GradientTape::new();
        let mk = |tape: &mut GradientTape, shape: Vec<usize>, v: f64| {
            let t = Tensor::filled(shape, v);
            tape.input(t)
        };
        let weights = GruWeights {
            wz: mk(&mut tape, vec![2, 3], 0.1),
            uz: mk(&mut tape, vec![2, 2], -0.2),
            bz: mk(&mut tape, vec![2], 0.05),
            wr: mk(&mut tape, vec![2, 3], 0.3),
            ur: mk(&mut tape, vec![2, 2], 0.15),
            br: mk(&mut tape, vec![2], -0.1),
            wh: mk(&mut tape, vec![2, 3], 0.2),
            uh: mk(&mut tape, vec![2, 2], 0.4),
            bh: mk(&mut tape, vec![2], 0.0),
        };
        let x = tape.input(Tensor::vector(vec![0.3, -0.5, 0.8]));
        let h0 = tape.input(Tensor::vector(vec![0.1, -0.6]));
        let cell_out = gru_cell(&mut tape, x, h0, &weights).unwrap();

        let seq = tape.input(Tensor::from_vec(vec![1, 3], vec![0.3, -0.5, 0.8]).unwrap());
        let layer_out = gru_layer(&mut tape, seq, Some(h0), &weights).unwrap();
        let last = last_step(&mut tape, layer_out).unwrap();
        assert_eq!(tape.value(cell_out).data(), tape.value(last).data());
    }

    #[test]
    fn chained_cells_match_frozen_scalar_oracle() {
        // Frozen from the independent scalar recomputation of the gate
        // equations chained over T = 4 (same weights as the kernel test).
        let mut tape = GradientTape::new();
        let scalar = |tape: &mut GradientTape, v: f64, shape: Vec<usize>| {
            tape.input(Tensor::from_vec(shape, vec![v]).unwrap())
        };
        let weights = GruWeights {
            wz: scalar(&mut tape, 0.5, vec![1, 1]),
            uz: scalar(&mut tape, -0.3, vec![1, 1]),
            bz: scalar(&mut tape, 0.1, vec![1]),
            wr: scalar(&mut tape, 0.4, vec![1, 1]),
            ur: scalar(&mut tape, 0.2, vec![1, 1]),
            br: scalar(&mut tape, -0.2, vec![1]),
            wh: scalar(&mut tape, 0.7, vec![1, 1]),
            uh: scalar(&mut tape, -0.5, vec![1, 1]),
            bh: scalar(&mut tape, 0.05, vec![1]),
        };
        let expected = [
            0.361_928_037_102_680_7,
            0.12288637396885282,
            0.15464865991057264,
            0.086_499_430_508_330_42,
        ];
        let mut h = tape.input(Tensor::vector(vec![0.6]));
        for (x, want) in [0.3, -0.1, 0.25, 0.0].into_iter().zip(expected) {
            let xv = tape.input(Tensor::vector(vec![x]));
            h = gru_cell(&mut tape, xv, h, &weights).unwrap();
            assert!((tape.value(h).data()[0] - want).abs() < 1e-15);
        }
    }
}
