//! 1-D valid convolution over the time axis, stride 1.

use crate::error::{Error, Result};
use crate::exec;
use crate::layers::math::{axpy, dot};
use crate::tensor::Tensor;

pub(crate) struct ConvDims {
    pub batch: Option<usize>,
    pub t_in: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn t_out(&self) -> usize {
        self.t_in - self.k + 1
    }
}

pub(crate) fn check_dims(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<ConvDims> {
    let ks = kernels.shape();
    if kernels.rank() != 3 {
        return Err(Error::shape("conv1d", "kernels of rank 3 [Cout x Cin x k]", kernels.shape_string()));
    }
    let (cout, cin, k) = (ks[0], ks[1], ks[2]);
    if k < 1 {
        return Err(Error::shape("conv1d", "kernel width k >= 1", format!("k = {}", k)));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv1d", format!("bias [{}]", cout), bias.shape_string()));
    }
    let (batch, t_in, in_c) = match input.shape() {
        [t, c] => (None, *t, *c),
        [n, t, c] => (Some(*n), *t, *c),
        _ => {
            return Err(Error::shape("conv1d", "input [T x Cin] or [N x T x Cin]", input.shape_string()));
        }
    };
    if in_c != cin {
        return Err(Error::shape(
            "conv1d",
            format!("input channels {} to match kernels {:?}", cin, ks),
            input.shape_string(),
        ));
    }
    if t_in < k {
        return Err(Error::shape(
            "conv1d",
            format!("T >= kernel width {}", k),
            format!("T = {}", t_in),
        ));
    }
    Ok(ConvDims { batch, t_in, cin, cout, k })
}

/// Kernels reordered to `[Cout][k][Cin]` so the inner loop is a contiguous dot.
fn transpose_kernels(ker: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut tr = vec![0.0; ker.len()];
    for o in 0..cout {
        for i in 0..cin {
            for tau in 0..k {
                tr[(o * k + tau) * cin + i] = ker[(o * cin + i) * k + tau];
            }
        }
    }
    tr
}

fn forward_example(input: &[f64], out: &mut [f64], ktr: &[f64], bias: &[f64], d: &ConvDims) {
    let (cin, cout, k) = (d.cin, d.cout, d.k);
    for t in 0..d.t_out() {
        for o in 0..cout {
            let mut acc = bias[o];
            for tau in 0..k {
                acc += dot(
                    &input[(t + tau) * cin..(t + tau + 1) * cin],
                    &ktr[(o * k + tau) * cin..(o * k + tau + 1) * cin],
                );
            }
            out[t * cout + o] = acc;
        }
    }
}

pub(crate) fn forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = check_dims(input, kernels, bias)?;
    let ktr = transpose_kernels(kernels.data(), d.cout, d.cin, d.k);
    let t_out = d.t_out();
    let out_shape = match d.batch {
        None => vec![t_out, d.cout],
        Some(n) => vec![n, t_out, d.cout],
    };
    let mut out = Tensor::zeros(out_shape);
    let in_stride = d.t_in * d.cin;
    let out_stride = t_out * d.cout;
    exec::for_each_aligned_chunk(
        input.data(),
        in_stride,
        out.data_mut(),
        out_stride,
        |_, inp, o| forward_example(inp, o, &ktr, bias.data(), &d),
    );
    Ok(out)
}

/// Gradients w.r.t. input, kernels, and bias.
pub(crate) fn backward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let d = check_dims(input, kernels, bias)?;
    let (cin, cout, k) = (d.cin, d.cout, d.k);
    let t_out = d.t_out();
    let ktr = transpose_kernels(kernels.data(), cout, cin, k);
    let in_stride = d.t_in * cin;
    let out_stride = t_out * cout;
    let n = d.batch.unwrap_or(1);
    debug_assert_eq!(gout.len(), n * out_stride);

    // d/d(input): each example's slice is disjoint.
    let mut dinput = Tensor::zeros(input.shape().to_vec());
    let input_data = input.data();
    exec::for_each_aligned_chunk(gout.data(), out_stride, dinput.data_mut(), in_stride, |_, g, di| {
        for t in 0..t_out {
            for o in 0..cout {
                let gv = g[t * cout + o];
                if gv == 0.0 {
                    continue;
                }
                for tau in 0..k {
                    axpy(
                        gv,
                        &ktr[(o * k + tau) * cin..(o * k + tau + 1) * cin],
                        &mut di[(t + tau) * cin..(t + tau + 1) * cin],
                    );
                }
            }
        }
    });

    // d/d(kernels), d/d(bias): reduced over examples in fixed chunk order.
    let examples: Vec<usize> = (0..n).collect();
    let partials = exec::map_chunks(&examples, exec::EXAMPLE_CHUNK, |_, chunk| {
        let mut dktr = vec![0.0; ktr.len()];
        let mut db = vec![0.0; cout];
        for &ex in chunk {
            let g = &gout.data()[ex * out_stride..(ex + 1) * out_stride];
            let inp = &input_data[ex * in_stride..(ex + 1) * in_stride];
            for t in 0..t_out {
                for o in 0..cout {
                    let gv = g[t * cout + o];
                    db[o] += gv;
                    if gv == 0.0 {
                        continue;
                    }
                    for tau in 0..k {
                        axpy(
                            gv,
                            &inp[(t + tau) * cin..(t + tau + 1) * cin],
                            &mut dktr[(o * k + tau) * cin..(o * k + tau + 1) * cin],
                        );
                    }
                }
            }
        }
        (dktr, db)
    });

    let mut dktr_total = vec![0.0; ktr.len()];
    let mut dbias = Tensor::zeros(vec![cout]);
    for (dktr, db) in partials {
        for (a, b) in dktr_total.iter_mut().zip(dktr.iter()) {
            *a += *b;
        }
        for (a, b) in dbias.data_mut().iter_mut().zip(db.iter()) {
            *a += *b;
        }
    }

    // back to [Cout x Cin x k] layout
    let mut dkernels = Tensor::zeros(vec![cout, cin, k]);
    let dk = dkernels.data_mut();
    for o in 0..cout {
        for i in 0..cin {
            for tau in 0..k {
                dk[(o * cin + i) * k + tau] = dktr_total[(o * k + tau) * cin + i];
            }
        }
    }
    Ok((dinput, dkernels, dbias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(input: Tensor, kernels: Tensor, bias: Tensor) -> Tensor {
        forward(&input, &kernels, &bias).unwrap()
    }

    #[test]
    fn direct_arithmetic() {
        // input [[1],[2],[3]], kernel [[[1,1]]], bias [0] -> [[3],[5]]
        let out = conv(
            Tensor::matrix(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap(),
            Tensor::from_vec(vec![1, 1, 2], vec![1.0, 1.0]).unwrap(),
            Tensor::vector(vec![0.0]),
        );
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 5.0]);
    }

    #[test]
    fn output_length_is_t_minus_k_plus_1() {
        let out = conv(
            Tensor::zeros(vec![120, 3]),
            Tensor::zeros(vec![4, 3, 2]),
            Tensor::zeros(vec![4]),
        );
        assert_eq!(out.shape(), &[119, 4]);
    }

    #[test]
    fn zero_kernel_yields_bias() {
        let out = conv(
            Tensor::from_vec(vec![5, 2], (0..10).map(|v| v as f64).collect()).unwrap(),
            Tensor::zeros(vec![3, 2, 2]),
            Tensor::vector(vec![0.5, -1.0, 2.0]),
        );
        for t in 0..4 {
            assert_eq!(out.row(t), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let err = forward(
            &Tensor::zeros(vec![10, 3]),
            &Tensor::zeros(vec![4, 2, 2]),
            &Tensor::zeros(vec![4]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[4, 2, 2]") && msg.contains("[10, 3]"), "{msg}");
    }

    #[test]
    fn batch_matches_per_example() {
        let kernels = Tensor::from_vec(vec![2, 2, 2], vec![0.3, -0.1, 0.5, 0.2, -0.4, 0.6, 0.1, 0.9]).unwrap();
        let bias = Tensor::vector(vec![0.1, -0.2]);
        let e0: Vec<f64> = (0..8).map(|v| v as f64 * 0.25).collect();
        let e1: Vec<f64> = (0..8).map(|v| 1.0 - v as f64 * 0.125).collect();
        let single0 = conv(Tensor::from_vec(vec![4, 2], e0.clone()).unwrap(), kernels.clone(), bias.clone());
        let single1 = conv(Tensor::from_vec(vec![4, 2], e1.clone()).unwrap(), kernels.clone(), bias.clone());
        let mut both = e0;
        both.extend(e1);
        let batch = conv(Tensor::from_vec(vec![2, 4, 2], both).unwrap(), kernels, bias);
        assert_eq!(batch.example(0), single0.data());
        assert_eq!(batch.example(1), single1.data());
    }
}
