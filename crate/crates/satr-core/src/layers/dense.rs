//! Dense (affine) layer, row-wise softmax, and mean cross-entropy.

use crate::error::{Error, Result};
use crate::exec;
use crate::layers::math::{axpy, dot, matvec_t_accum};
use crate::tensor::Tensor;

/// Rows and width of a rank-1 (single) or rank-2 (batch) activation.
pub(crate) fn row_view(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [f] => Ok((1, *f)),
        [n, f] => Ok((*n, *f)),
        _ => Err(Error::shape(op, "rank 1 or 2 input", t.shape_string())),
    }
}

pub(crate) fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, features) = row_view(input, "dense")?;
    let [k, wf] = *weight.shape() else {
        return Err(Error::shape("dense", "weight [K x F]", weight.shape_string()));
    };
    if wf != features {
        return Err(Error::shape(
            "dense",
            format!("weight columns {} to match input width", features),
            weight.shape_string(),
        ));
    }
    if bias.shape() != [k] {
        return Err(Error::shape("dense", format!("bias [{}]", k), bias.shape_string()));
    }
    let shape = if input.rank() == 1 { vec![k] } else { vec![rows, k] };
    let mut out = Tensor::zeros(shape);
    let w = weight.data();
    let b = bias.data();
    exec::for_each_aligned_chunk(input.data(), features, out.data_mut(), k, |_, x, o| {
        for j in 0..k {
            o[j] = b[j] + dot(&w[j * features..(j + 1) * features], x);
        }
    });
    Ok(out)
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (rows, features) = row_view(input, "dense")?;
    let k = weight.shape()[0];
    let mut dinput = Tensor::zeros(input.shape().to_vec());
    let w = weight.data();
    exec::for_each_aligned_chunk(gout.data(), k, dinput.data_mut(), features, |_, dy, dx| {
        matvec_t_accum(w, k, features, dy, dx);
    });

    let row_idx: Vec<usize> = (0..rows).collect();
    let partials = exec::map_chunks(&row_idx, exec::ROW_CHUNK, |_, chunk| {
        let mut dw = vec![0.0; k * features];
        let mut db = vec![0.0; k];
        for &r in chunk {
            let x = &input.data()[r * features..(r + 1) * features];
            let dy = &gout.data()[r * k..(r + 1) * k];
            for j in 0..k {
                db[j] += dy[j];
                axpy(dy[j], x, &mut dw[j * features..(j + 1) * features]);
            }
        }
        (dw, db)
    });
    let mut dw = vec![0.0; k * features];
    let mut db = vec![0.0; k];
    for (pw, pb) in partials {
        for (a, b) in dw.iter_mut().zip(&pw) {
            *a += *b;
        }
        for (a, b) in db.iter_mut().zip(&pb) {
            *a += *b;
        }
    }
    Ok((
        dinput,
        Tensor::from_vec(vec![k, features], dw)?,
        Tensor::from_vec(vec![k], db)?,
    ))
}

/// Numerically-stable softmax along the last axis.
pub(crate) fn softmax_forward(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = row_view(logits, "softmax")?;
    let mut out = Tensor::zeros(logits.shape().to_vec());
    exec::for_each_aligned_chunk(logits.data(), k, out.data_mut(), k, |_, row, o| {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (oi, v) in o.iter_mut().zip(row) {
            *oi = (v - max).exp();
            sum += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= sum;
        }
    });
    Ok(out)
}

/// `dlogits = p . (dy - <dy, p>)` per row, where `p` is the softmax output.
pub(crate) fn softmax_backward(probs: &Tensor, gout: &Tensor) -> Result<Tensor> {
    let (_, k) = row_view(probs, "softmax")?;
    let mut dlogits = Tensor::zeros(probs.shape().to_vec());
    let p = probs.data();
    exec::for_each_aligned_chunk(gout.data(), k, dlogits.data_mut(), k, |r, dy, dl| {
        let row = &p[r * k..(r + 1) * k];
        let inner = dot(dy, row);
        for j in 0..k {
            dl[j] = row[j] * (dy[j] - inner);
        }
    });
    Ok(dlogits)
}

/// Mean over rows of `-ln p[row, label[row]]`.
pub(crate) fn cross_entropy_forward(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let (rows, k) = row_view(probs, "cross_entropy")?;
    if labels.len() != rows {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels", rows),
            format!("{} labels", labels.len()),
        ));
    }
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        debug_assert!(y < k);
        total -= probs.data()[r * k + y].ln();
    }
    Ok(total / rows as f64)
}

pub(crate) fn cross_entropy_backward(probs: &Tensor, labels: &[usize], gout: f64) -> Result<Tensor> {
    let (rows, k) = row_view(probs, "cross_entropy")?;
    let mut dprobs = Tensor::zeros(probs.shape().to_vec());
    let scale = gout / rows as f64;
    let d = dprobs.data_mut();
    for (r, &y) in labels.iter().enumerate() {
        d[r * k + y] = -scale / probs.data()[r * k + y];
    }
    Ok(dprobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let logits = dense_forward(
            &Tensor::vector(vec![0.3, -0.2]),
            &Tensor::zeros(vec![3, 2]),
            &Tensor::zeros(vec![3]),
        )
        .unwrap();
        let p = softmax_forward(&logits).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_bias_wins_argmax() {
        let logits = dense_forward(
            &Tensor::vector(vec![0.1]),
            &Tensor::zeros(vec![3, 1]),
            &Tensor::vector(vec![10.0, 0.0, 0.0]),
        )
        .unwrap();
        let p = softmax_forward(&logits).unwrap();
        assert!(p.data()[0] > p.data()[1] && p.data()[0] > p.data()[2]);
    }

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let a = softmax_forward(&Tensor::vector(vec![0.1, -2.0, 1.4])).unwrap();
        let b = softmax_forward(&Tensor::vector(vec![100.1, 98.0, 101.4])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = a.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(a.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn cross_entropy_of_uniform_is_ln_k() {
        let probs = Tensor::matrix(&[vec![1.0 / 3.0; 3], vec![1.0 / 3.0; 3]]).unwrap();
        let loss = cross_entropy_forward(&probs, &[0, 2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }
}
