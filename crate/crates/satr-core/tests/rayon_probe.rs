#![cfg(feature = "parallel")]
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satr_core::model::{self, ModelConfig};
use satr_core::tensor::Tensor;
use satr_core::{exec, LayerMode};

#[test]
fn profile_sections() {
    let config = ModelConfig::new(76); // paper-scale widths
    let params = model::init_params(&config, 7).unwrap();
    let n = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f64> = (0..n * 120 * 76).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let batch = Tensor::from_vec(vec![n, 120, 76], data).unwrap();
    let labels: Vec<(usize, usize)> = (0..n).map(|i| (i % 3, (i / 3) % 3)).collect();

    let full = |tag: &str| {
        let t0 = std::time::Instant::now();
        for _ in 0..4 {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            let mut pass = model::forward(&params, &batch, LayerMode::Training, &mut r).unwrap();
            let loss = model::joint_loss_node(&mut pass, &labels).unwrap();
            let _ = pass.tape.backward(loss).unwrap();
        }
        println!("{tag} fwd+bwd x4: {:?}", t0.elapsed());
    };
    // interleave to cancel thermal/cache drift
    full("par");
    exec::run_sequential(|| full("seq"));
    full("par");
    exec::run_sequential(|| full("seq"));
}
