//! Batch normalization over rows of an `[N x F]` tensor.
//!
//! Training mode normalizes by the batch's population statistics and folds
//! them into the running estimates; inference mode normalizes by the running
//! estimates alone.

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Statistics the backward pass needs, captured at forward time.
#[derive(Debug, Clone)]
pub(crate) struct BnSaved {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub training: bool,
}

#[derive(Debug)]
pub(crate) struct BnForward {
    pub output: Tensor,
    pub saved: BnSaved,
    /// New running (mean, var) when in training mode.
    pub updated_running: Option<(Vec<f64>, Vec<f64>)>,
}

fn check_dims(input: &Tensor, gamma: &Tensor, beta: &Tensor, running: &[f64]) -> Result<(usize, usize)> {
    let [rows, features] = *input.shape() else {
        return Err(Error::shape("batchnorm", "input [N x F]", input.shape_string()));
    };
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [features] {
            return Err(Error::shape(
                "batchnorm",
                format!("{} [{}]", name, features),
                t.shape_string(),
            ));
        }
    }
    if running.len() != features {
        return Err(Error::shape(
            "batchnorm",
            format!("running stats [{}]", features),
            format!("[{}]", running.len()),
        ));
    }
    Ok((rows, features))
}

/// Per-feature sums of `f(row)` over all rows, reduced in fixed chunk order.
fn column_reduce(data: &[f64], rows: usize, features: usize, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Vec<f64> {
    let row_items: Vec<&[f64]> = data.chunks(features).collect();
    debug_assert_eq!(row_items.len(), rows);
    let partials = exec::map_chunks(&row_items, exec::ROW_CHUNK, |_, chunk| {
        let mut acc = vec![0.0; features];
        for row in chunk {
            f(row, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; features];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p.iter()) {
            *t += *v;
        }
    }
    total
}

pub(crate) fn forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &[f64],
    running_var: &[f64],
    training: bool,
) -> Result<BnForward> {
    let (rows, features) = check_dims(input, gamma, beta, running_mean)?;
    if running_var.len() != features {
        return Err(Error::shape(
            "batchnorm",
            format!("running variance [{}]", features),
            format!("[{}]", running_var.len()),
        ));
    }

    let (mean, var, updated_running) = if training {
        if rows < 2 {
            return Err(Error::Config(format!(
                "batchnorm in training mode needs at least 2 rows, got {}",
                rows
            )));
        }
        let inv_n = 1.0 / rows as f64;
        let mut mean = column_reduce(input.data(), rows, features, |row, acc| {
            for (a, x) in acc.iter_mut().zip(row) {
                *a += *x;
            }
        });
        for m in mean.iter_mut() {
            *m *= inv_n;
        }
        let mean_for_var = mean.clone();
        let mut var = column_reduce(input.data(), rows, features, move |row, acc| {
            for ((a, x), m) in acc.iter_mut().zip(row).zip(&mean_for_var) {
                let d = *x - *m;
                *a += d * d;
            }
        });
        for v in var.iter_mut() {
            *v *= inv_n;
        }
        let new_mean: Vec<f64> = running_mean
            .iter()
            .zip(&mean)
            .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
            .collect();
        let new_var: Vec<f64> = running_var
            .iter()
            .zip(&var)
            .map(|(r, b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
            .collect();
        (mean, var, Some((new_mean, new_var)))
    } else {
        (running_mean.to_vec(), running_var.to_vec(), None)
    };

    let mut output = Tensor::zeros(input.shape().to_vec());
    let scale: Vec<f64> = var
        .iter()
        .zip(gamma.data())
        .map(|(v, g)| g / (v + BN_EPSILON).sqrt())
        .collect();
    let mean_ref = &mean;
    let scale_ref = &scale;
    let beta_d = beta.data();
    exec::for_each_aligned_chunk(input.data(), features, output.data_mut(), features, |_, x, o| {
        for f in 0..features {
            o[f] = (x[f] - mean_ref[f]) * scale_ref[f] + beta_d[f];
        }
    });

    Ok(BnForward {
        output,
        saved: BnSaved { mean, var, training },
        updated_running,
    })
}

/// Gradients w.r.t. input, gamma, beta.
pub(crate) fn backward(
    input: &Tensor,
    gamma: &Tensor,
    saved: &BnSaved,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let [rows, features] = *input.shape() else {
        return Err(Error::shape("batchnorm", "input [N x F]", input.shape_string()));
    };
    let inv_std: Vec<f64> = saved.var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();

    // dbeta[f] = sum_r dy ; dgamma[f] = sum_r dy * xhat
    let mean = &saved.mean;
    let inv_std_ref = &inv_std;
    let paired: Vec<(usize, ())> = (0..rows).map(|r| (r, ())).collect();
    let partials = exec::map_chunks(&paired, exec::ROW_CHUNK, |_, chunk| {
        let mut dbeta = vec![0.0; features];
        let mut dgamma = vec![0.0; features];
        for &(r, _) in chunk {
            let x = &input.data()[r * features..(r + 1) * features];
            let dy = &gout.data()[r * features..(r + 1) * features];
            for f in 0..features {
                let xhat = (x[f] - mean[f]) * inv_std_ref[f];
                dbeta[f] += dy[f];
                dgamma[f] += dy[f] * xhat;
            }
        }
        (dbeta, dgamma)
    });
    let mut dbeta = vec![0.0; features];
    let mut dgamma = vec![0.0; features];
    for (db, dg) in partials {
        for f in 0..features {
            dbeta[f] += db[f];
            dgamma[f] += dg[f];
        }
    }

    let mut dinput = Tensor::zeros(input.shape().to_vec());
    if saved.training {
        // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
        let inv_n = 1.0 / rows as f64;
        let gamma_d = gamma.data();
        let dbeta_ref = &dbeta;
        let dgamma_ref = &dgamma;
        let input_d = input.data();
        exec::for_each_aligned_chunk(gout.data(), features, dinput.data_mut(), features, |r, dy, dx| {
            let x = &input_d[r * features..(r + 1) * features];
            for f in 0..features {
                let xhat = (x[f] - mean[f]) * inv_std_ref[f];
                dx[f] = gamma_d[f]
                    * inv_std_ref[f]
                    * (dy[f] - inv_n * dbeta_ref[f] - xhat * inv_n * dgamma_ref[f]);
            }
        });
    } else {
        let gamma_d = gamma.data();
        exec::for_each_aligned_chunk(gout.data(), features, dinput.data_mut(), features, |_, dy, dx| {
            for f in 0..features {
                dx[f] = dy[f] * gamma_d[f] * inv_std_ref[f];
            }
        });
    }

    Ok((
        dinput,
        Tensor::from_vec(vec![features], dgamma)?,
        Tensor::from_vec(vec![features], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_train(input: Tensor, gamma: Tensor, beta: Tensor) -> BnForward {
        let f = input.shape()[1];
        forward(&input, &gamma, &beta, &vec![0.0; f], &vec![1.0; f], true).unwrap()
    }

    #[test]
    fn two_point_column_normalizes_to_unit() {
        let out = run_train(
            Tensor::matrix(&[vec![2.0], vec![4.0]]).unwrap(),
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![0.0]),
        );
        // unit up to the epsilon stabilizer in the denominator
        let d = out.output.data();
        assert!((d[0] + 1.0).abs() < 1e-4 && (d[1] - 1.0).abs() < 1e-4, "{:?}", d);
    }

    #[test]
    fn beta_shifts_the_mean() {
        let out = run_train(
            Tensor::matrix(&[vec![1.0], vec![2.0], vec![6.0]]).unwrap(),
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![5.0]),
        );
        let mean: f64 = out.output.data().iter().sum::<f64>() / 3.0;
        assert!((mean - 5.0).abs() < 1e-9);
    }

    #[test]
    fn inference_with_identity_stats_is_identity_within_epsilon() {
        let input = Tensor::matrix(&[vec![0.3, -0.7], vec![1.5, 0.2]]).unwrap();
        let out = forward(
            &input,
            &Tensor::vector(vec![1.0, 1.0]),
            &Tensor::vector(vec![0.0, 0.0]),
            &[0.0, 0.0],
            &[1.0, 1.0],
            false,
        )
        .unwrap();
        for (a, b) in out.output.data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(out.updated_running.is_none());
    }

    #[test]
    fn single_row_training_batch_is_rejected() {
        let err = forward(
            &Tensor::matrix(&[vec![1.0]]).unwrap(),
            &Tensor::vector(vec![1.0]),
            &Tensor::vector(vec![0.0]),
            &[0.0],
            &[1.0],
            true,
        )
        .unwrap_err();
        assert!(err.to_string().contains("at least 2 rows"));
    }

    #[test]
    fn running_stats_blend_with_momentum() {
        let out = run_train(
            Tensor::matrix(&[vec![2.0], vec![4.0]]).unwrap(),
            Tensor::vector(vec![1.0]),
            Tensor::vector(vec![0.0]),
        );
        let (m, v) = out.updated_running.unwrap();
        // running mean 0, var 1; batch mean 3, population var 1
        assert!((m[0] - 0.3).abs() < 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-12);
    }
}
