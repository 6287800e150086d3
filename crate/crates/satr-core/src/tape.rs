//! Gradient tape: records the forward computation, replays it backward.
//!
//! Operations are layer-granular. Each node owns its output tensor plus
//! whatever intermediates its backward rule needs (batch statistics,
//! dropout masks, gate activations). `backward` walks the node list in
//! strict reverse order, so every value is differentiated exactly once
//! after all of its consumers.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::layers::gru::{GruSaved, GruWeightRefs};
use crate::layers::norm::BnSaved;
use crate::layers::{conv, dense, gru, norm};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Tape nodes for the nine weights of one GRU layer.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub wz: NodeId,
    pub uz: NodeId,
    pub bz: NodeId,
    pub wr: NodeId,
    pub ur: NodeId,
    pub br: NodeId,
    pub wh: NodeId,
    pub uh: NodeId,
    pub bh: NodeId,
}

pub(crate) enum Op {
    Input,
    Param(String),
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BnSaved,
    },
    Relu {
        input: NodeId,
    },
    /// `mask` holds 0 or 1/(1-rate) per element; `None` means identity.
    Dropout {
        input: NodeId,
        mask: Option<Vec<f64>>,
    },
    GruLayer {
        seq: NodeId,
        h0: NodeId,
        weights: GruWeights,
        saved: GruSaved,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Softmax {
        logits: NodeId,
    },
    CrossEntropyMean {
        probs: NodeId,
        labels: Vec<usize>,
    },
    Concat {
        left: NodeId,
        right: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    LastStep {
        seq: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Sum {
        input: NodeId,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of one forward pass.
#[derive(Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Parameter gradients produced by [`GradientTape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_param: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_param.get(name)
    }

    pub fn insert(&mut self, name: String, grad: Tensor) {
        self.by_param.insert(name, grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.by_param.iter()
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record a non-differentiable input value.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Record a learnable parameter; its gradient is reported under `name`.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        self.push(value.clone(), Op::Param(name.to_string()))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// parameter recorded on the tape. Parameters the loss never touches
    /// get zero gradients. A tape can be walked backward once.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage(
                "backward called twice on the same tape".to_string(),
            ));
        }
        self.consumed = true;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                "scalar loss",
                self.value(loss).shape_string(),
            ));
        }

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(gout) = grads[id].take() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Input | Op::Param(_) => {
                    // leaves: re-store for collection below
                    grads[id] = Some(gout);
                }
                Op::Conv1d { input, kernels, bias } => {
                    let (di, dk, db) = conv::backward(
                        self.value(*input),
                        self.value(*kernels),
                        self.value(*bias),
                        &gout,
                    )?;
                    accumulate(&mut grads, *input, di);
                    accumulate(&mut grads, *kernels, dk);
                    accumulate(&mut grads, *bias, db);
                }
                Op::BatchNorm { input, gamma, beta, saved } => {
                    let (di, dg, db) =
                        norm::backward(self.value(*input), self.value(*gamma), saved, &gout)?;
                    accumulate(&mut grads, *input, di);
                    accumulate(&mut grads, *gamma, dg);
                    accumulate(&mut grads, *beta, db);
                }
                Op::Relu { input } => {
                    let mut di = gout;
                    for (g, x) in di.data_mut().iter_mut().zip(self.value(*input).data()) {
                        if *x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    accumulate(&mut grads, *input, di);
                }
                Op::Dropout { input, mask } => {
                    let mut di = gout;
                    if let Some(mask) = mask {
                        for (g, m) in di.data_mut().iter_mut().zip(mask.iter()) {
                            *g *= *m;
                        }
                    }
                    accumulate(&mut grads, *input, di);
                }
                Op::GruLayer { seq, h0, weights, saved } => {
                    let w = GruWeightRefs {
                        wz: self.value(weights.wz),
                        uz: self.value(weights.uz),
                        bz: self.value(weights.bz),
                        wr: self.value(weights.wr),
                        ur: self.value(weights.ur),
                        br: self.value(weights.br),
                        wh: self.value(weights.wh),
                        uh: self.value(weights.uh),
                        bh: self.value(weights.bh),
                    };
                    let (dseq, dh0, dw) = gru::backward(
                        self.value(*seq),
                        self.value(*h0),
                        &self.nodes[id].value,
                        &gout,
                        saved,
                        &w,
                    )?;
                    let weights = *weights;
                    accumulate(&mut grads, *seq, dseq);
                    accumulate(&mut grads, *h0, dh0);
                    accumulate(&mut grads, weights.wz, dw.dwz);
                    accumulate(&mut grads, weights.uz, dw.duz);
                    accumulate(&mut grads, weights.bz, dw.dbz);
                    accumulate(&mut grads, weights.wr, dw.dwr);
                    accumulate(&mut grads, weights.ur, dw.dur);
                    accumulate(&mut grads, weights.br, dw.dbr);
                    accumulate(&mut grads, weights.wh, dw.dwh);
                    accumulate(&mut grads, weights.uh, dw.duh);
                    accumulate(&mut grads, weights.bh, dw.dbh);
                }
                Op::Dense { input, weight, bias } => {
                    let (di, dw, db) =
                        dense::dense_backward(self.value(*input), self.value(*weight), &gout)?;
                    accumulate(&mut grads, *input, di);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Softmax { logits } => {
                    let dl = dense::softmax_backward(&self.nodes[id].value, &gout)?;
                    accumulate(&mut grads, *logits, dl);
                }
                Op::CrossEntropyMean { probs, labels } => {
                    let dp = dense::cross_entropy_backward(self.value(*probs), labels, gout.item())?;
                    accumulate(&mut grads, *probs, dp);
                }
                Op::Concat { left, right } => {
                    let lw = last_extent(self.value(*left));
                    let rw = last_extent(self.value(*right));
                    let rows = self.value(*left).len() / lw;
                    let mut dl = Tensor::zeros(self.value(*left).shape().to_vec());
                    let mut dr = Tensor::zeros(self.value(*right).shape().to_vec());
                    for row in 0..rows {
                        let g = &gout.data()[row * (lw + rw)..(row + 1) * (lw + rw)];
                        dl.data_mut()[row * lw..(row + 1) * lw].copy_from_slice(&g[..lw]);
                        dr.data_mut()[row * rw..(row + 1) * rw].copy_from_slice(&g[lw..]);
                    }
                    accumulate(&mut grads, *left, dl);
                    accumulate(&mut grads, *right, dr);
                }
                Op::Reshape { input } => {
                    let di = Tensor::from_vec(
                        self.value(*input).shape().to_vec(),
                        gout.data().to_vec(),
                    )?;
                    accumulate(&mut grads, *input, di);
                }
                Op::LastStep { seq } => {
                    let seq_val = self.value(*seq);
                    let mut dseq = Tensor::zeros(seq_val.shape().to_vec());
                    let (n, t_len, h) = match *seq_val.shape() {
                        [t, h] => (1, t, h),
                        [n, t, h] => (n, t, h),
                        _ => unreachable!("last_step input validated at record time"),
                    };
                    for ex in 0..n {
                        let dst = ex * t_len * h + (t_len - 1) * h;
                        dseq.data_mut()[dst..dst + h]
                            .copy_from_slice(&gout.data()[ex * h..(ex + 1) * h]);
                    }
                    accumulate(&mut grads, *seq, dseq);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, b, gout.clone());
                    accumulate(&mut grads, a, gout);
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let mut da = gout.clone();
                    for (g, x) in da.data_mut().iter_mut().zip(self.value(b).data()) {
                        *g *= *x;
                    }
                    let mut db = gout;
                    for (g, x) in db.data_mut().iter_mut().zip(self.value(a).data()) {
                        *g *= *x;
                    }
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::Sum { input } => {
                    let g = gout.item();
                    let di = Tensor::filled(self.value(*input).shape().to_vec(), g);
                    accumulate(&mut grads, *input, di);
                }
            }
        }

        let mut by_param = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let grad = grads[i]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                match by_param.entry(name.clone()) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(grad);
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        e.get_mut().add_assign(&grad);
                    }
                }
            }
        }
        Ok(Gradients { by_param })
    }
}

fn last_extent(t: &Tensor) -> usize {
    *t.shape().last().expect("tensors have at least one extent")
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers;

    #[test]
    fn square_loss_gradient() {
        // loss = w^2 at w = 3 -> dloss/dw = 6
        let mut tape = GradientTape::new();
        let w = tape.param("w", &Tensor::scalar(3.0));
        let sq = layers::mul(&mut tape, w, w).unwrap();
        let loss = layers::sum(&mut tape, sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn untouched_parameter_gets_zero_gradient() {
        let mut tape = GradientTape::new();
        let w = tape.param("w", &Tensor::scalar(2.0));
        let unused = tape.param("unused", &Tensor::vector(vec![1.0, 1.0]));
        let _ = unused;
        let loss = layers::sum(&mut tape, w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0]);
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_is_a_usage_error() {
        let mut tape = GradientTape::new();
        let w = tape.param("w", &Tensor::scalar(1.0));
        let loss = layers::sum(&mut tape, w);
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = GradientTape::new();
        let w = tape.param("w", &Tensor::vector(vec![1.0, 2.0]));
        let err = tape.backward(w).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }
}
