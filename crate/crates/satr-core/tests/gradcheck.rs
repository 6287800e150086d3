//! Finite-difference oracle for every differentiable primitive.
//!
//! Each check builds a small graph ending in `sum(output . projection)`,
//! walks the tape backward for analytic gradients, then recomputes every
//! parameter gradient by central differences on the rebuilt forward pass.
//! The projection is a fixed pseudorandom tensor so that uniform-gradient
//! bugs cannot cancel out. Randomness inside an op (dropout) is re-seeded
//! identically on every evaluation, which freezes the masks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satr_core::layers::{self, LayerMode};
use satr_core::tape::{GradientTape, GruWeights, NodeId};
use satr_core::tensor::Tensor;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-7;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

type Params = BTreeMap<String, Tensor>;

/// Evaluate the loss and, optionally, the analytic gradients.
fn run_graph(
    params: &Params,
    build: &dyn Fn(&mut GradientTape, &BTreeMap<String, NodeId>) -> NodeId,
    want_grads: bool,
) -> (f64, Option<satr_core::Gradients>) {
    let mut tape = GradientTape::new();
    let mut ids = BTreeMap::new();
    for (name, tensor) in params {
        ids.insert(name.clone(), tape.param(name, tensor));
    }
    let loss = build(&mut tape, &ids);
    let loss_val = tape.value(loss).item();
    let grads = want_grads.then(|| tape.backward(loss).unwrap());
    (loss_val, grads)
}

fn check_gradients(params: Params, build: impl Fn(&mut GradientTape, &BTreeMap<String, NodeId>) -> NodeId) {
    let (_, grads) = run_graph(&params, &build, true);
    let grads = grads.unwrap();
    for (name, base) in &params {
        let analytic = grads.get(name).unwrap();
        for i in 0..base.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += FD_STEP;
            let (loss_plus, _) = run_graph(&plus, &build, false);
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= FD_STEP;
            let (loss_minus, _) = run_graph(&minus, &build, false);
            let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let denom = a.abs().max(fd.abs());
            if denom < ABS_FLOOR {
                continue;
            }
            let rel = (a - fd).abs() / denom;
            assert!(
                rel < REL_TOL,
                "{}[{}]: analytic {} vs finite-difference {} (rel {})",
                name,
                i,
                a,
                fd,
                rel
            );
        }
    }
}

/// `sum(x . projection)` with a fixed pseudorandom projection.
fn project_loss(tape: &mut GradientTape, x: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(x).shape().to_vec();
    let proj = tape.input(random_tensor(&mut rng, shape));
    let prod = layers::mul(tape, x, proj).unwrap();
    layers::sum(tape, prod)
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![5, 3]));
    params.insert("kernels".into(), random_tensor(&mut rng, vec![4, 3, 2]));
    params.insert("bias".into(), random_tensor(&mut rng, vec![4]));
    check_gradients(params, |tape, ids| {
        let out = layers::conv1d(tape, ids["input"], ids["kernels"], ids["bias"]).unwrap();
        project_loss(tape, out, 101)
    });
}

#[test]
fn conv1d_batch_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![3, 5, 2]));
    params.insert("kernels".into(), random_tensor(&mut rng, vec![3, 2, 2]));
    params.insert("bias".into(), random_tensor(&mut rng, vec![3]));
    check_gradients(params, |tape, ids| {
        let out = layers::conv1d(tape, ids["input"], ids["kernels"], ids["bias"]).unwrap();
        project_loss(tape, out, 102)
    });
}

#[test]
fn batchnorm_training_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![6, 4]));
    params.insert("gamma".into(), random_tensor(&mut rng, vec![4]));
    params.insert("beta".into(), random_tensor(&mut rng, vec![4]));
    check_gradients(params, |tape, ids| {
        let out = layers::batchnorm(
            tape,
            ids["input"],
            ids["gamma"],
            ids["beta"],
            &[0.0; 4],
            &[1.0; 4],
            LayerMode::Training,
        )
        .unwrap();
        project_loss(tape, out.node, 103)
    });
}

#[test]
fn batchnorm_inference_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![3, 4]));
    params.insert("gamma".into(), random_tensor(&mut rng, vec![4]));
    params.insert("beta".into(), random_tensor(&mut rng, vec![4]));
    check_gradients(params, |tape, ids| {
        let out = layers::batchnorm(
            tape,
            ids["input"],
            ids["gamma"],
            ids["beta"],
            &[0.1, -0.2, 0.05, 0.3],
            &[1.1, 0.9, 1.3, 0.7],
            LayerMode::Inference,
        )
        .unwrap();
        project_loss(tape, out.node, 104)
    });
}

#[test]
fn relu_gradients() {
    // keep values away from the kink so finite differences are valid
    let data = vec![0.5, -0.7, 1.2, -0.1, 0.9, -1.4];
    let mut params = Params::new();
    params.insert("input".into(), Tensor::from_vec(vec![2, 3], data).unwrap());
    check_gradients(params, |tape, ids| {
        let out = layers::relu(tape, ids["input"]);
        project_loss(tape, out, 105)
    });
}

#[test]
fn dropout_training_gradients_with_frozen_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![4, 5]));
    check_gradients(params, |tape, ids| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(77);
        let out = layers::dropout(tape, ids["input"], 0.4, LayerMode::Training, &mut mask_rng).unwrap();
        project_loss(tape, out, 106)
    });
}

#[test]
fn gru_layer_gradients() {
    let (cin, hidden) = (3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut params = Params::new();
    params.insert("seq".into(), random_tensor(&mut rng, vec![4, cin]));
    params.insert("h0".into(), random_tensor(&mut rng, vec![hidden]));
    for gate in ["z", "r", "h"] {
        params.insert(format!("w{gate}"), random_tensor(&mut rng, vec![hidden, cin]));
        params.insert(format!("u{gate}"), random_tensor(&mut rng, vec![hidden, hidden]));
        params.insert(format!("b{gate}"), random_tensor(&mut rng, vec![hidden]));
    }
    check_gradients(params, |tape, ids| {
        let weights = GruWeights {
            wz: ids["wz"],
            uz: ids["uz"],
            bz: ids["bz"],
            wr: ids["wr"],
            ur: ids["ur"],
            br: ids["br"],
            wh: ids["wh"],
            uh: ids["uh"],
            bh: ids["bh"],
        };
        let out = layers::gru_layer(tape, ids["seq"], Some(ids["h0"]), &weights).unwrap();
        project_loss(tape, out, 107)
    });
}

#[test]
fn gru_layer_batch_gradients() {
    let (cin, hidden) = (2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut params = Params::new();
    params.insert("seq".into(), random_tensor(&mut rng, vec![3, 4, cin]));
    params.insert("h0".into(), random_tensor(&mut rng, vec![hidden]));
    for gate in ["z", "r", "h"] {
        params.insert(format!("w{gate}"), random_tensor(&mut rng, vec![hidden, cin]));
        params.insert(format!("u{gate}"), random_tensor(&mut rng, vec![hidden, hidden]));
        params.insert(format!("b{gate}"), random_tensor(&mut rng, vec![hidden]));
    }
    check_gradients(params, |tape, ids| {
        let weights = GruWeights {
            wz: ids["wz"],
            uz: ids["uz"],
            bz: ids["bz"],
            wr: ids["wr"],
            ur: ids["ur"],
            br: ids["br"],
            wh: ids["wh"],
            uh: ids["uh"],
            bh: ids["bh"],
        };
        let out = layers::gru_layer(tape, ids["seq"], Some(ids["h0"]), &weights).unwrap();
        project_loss(tape, out, 108)
    });
}

#[test]
fn chained_gru_cells_propagate_state_gradients() {
    let (cin, hidden) = (2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut params = Params::new();
    params.insert("x0".into(), random_tensor(&mut rng, vec![cin]));
    params.insert("x1".into(), random_tensor(&mut rng, vec![cin]));
    params.insert("h0".into(), random_tensor(&mut rng, vec![hidden]));
    for gate in ["z", "r", "h"] {
        params.insert(format!("w{gate}"), random_tensor(&mut rng, vec![hidden, cin]));
        params.insert(format!("u{gate}"), random_tensor(&mut rng, vec![hidden, hidden]));
        params.insert(format!("b{gate}"), random_tensor(&mut rng, vec![hidden]));
    }
    check_gradients(params, |tape, ids| {
        let weights = GruWeights {
            wz: ids["wz"],
            uz: ids["uz"],
            bz: ids["bz"],
            wr: ids["wr"],
            ur: ids["ur"],
            br: ids["br"],
            wh: ids["wh"],
            uh: ids["uh"],
            bh: ids["bh"],
        };
        let h1 = layers::gru_cell(tape, ids["x0"], ids["h0"], &weights).unwrap();
        let h2 = layers::gru_cell(tape, ids["x1"], h1, &weights).unwrap();
        project_loss(tape, h2, 109)
    });
}

#[test]
fn dense_softmax_cross_entropy_gradients() {
    let (features, classes) = (5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut params = Params::new();
    params.insert("input".into(), random_tensor(&mut rng, vec![4, features]));
    params.insert("weight".into(), random_tensor(&mut rng, vec![classes, features]));
    params.insert("bias".into(), random_tensor(&mut rng, vec![classes]));
    check_gradients(params, |tape, ids| {
        let probs = layers::dense_softmax(tape, ids["input"], ids["weight"], ids["bias"]).unwrap();
        layers::cross_entropy_mean(tape, probs, &[0, 2, 1, 1]).unwrap()
    });
}

#[test]
fn concat_and_last_step_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut params = Params::new();
    params.insert("left".into(), random_tensor(&mut rng, vec![3, 2]));
    params.insert("seq".into(), random_tensor(&mut rng, vec![3, 4, 2]));
    check_gradients(params, |tape, ids| {
        let last = layers::last_step(tape, ids["seq"]).unwrap();
        let merged = layers::concat(tape, ids["left"], last).unwrap();
        project_loss(tape, merged, 110)
    });
}

#[test]
fn loss_gradient_with_respect_to_itself_is_one() {
    let mut tape = GradientTape::new();
    let w = tape.param("w", &Tensor::scalar(4.2));
    let grads = tape.backward(w).unwrap();
    assert_eq!(grads.get("w").unwrap().data(), &[1.0]);
}
