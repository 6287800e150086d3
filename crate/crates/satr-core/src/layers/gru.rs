//! Gated recurrent unit layer.
//!
//! Gate equations, with `(.)` elementwise:
//!   z = sigmoid(Wz x + Uz h + bz)
//!   r = sigmoid(Wr x + Ur h + br)
//!   hcand = tanh(Wh x + Uh (r . h) + bh)
//!   h' = (1 - z) . hcand + z . h

use crate::error::{Error, Result};
use crate::exec;
use crate::layers::math::{axpy, dot, matvec_t_accum, sigmoid};
use crate::tensor::Tensor;

/// The nine weight tensors of one GRU layer, in forward order.
/// `w*` are `[H x Cin]`, `u*` are `[H x H]`, `b*` are `[H]`.
pub(crate) struct GruWeightRefs<'a> {
    pub wz: &'a Tensor,
    pub uz: &'a Tensor,
    pub bz: &'a Tensor,
    pub wr: &'a Tensor,
    pub ur: &'a Tensor,
    pub br: &'a Tensor,
    pub wh: &'a Tensor,
    pub uh: &'a Tensor,
    pub bh: &'a Tensor,
}

pub(crate) struct GruDims {
    pub batch: Option<usize>,
    pub t_len: usize,
    pub cin: usize,
    pub hidden: usize,
}

/// Gate activations captured per example during the forward pass.
#[derive(Debug, Clone)]
pub(crate) struct GruExampleSaved {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub hc: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct GruSaved {
    pub per_example: Vec<GruExampleSaved>,
}

/// Weight gradients in the same order as `GruWeightRefs`.
pub(crate) struct GruWeightGrads {
    pub dwz: Tensor,
    pub duz: Tensor,
    pub dbz: Tensor,
    pub dwr: Tensor,
    pub dur: Tensor,
    pub dbr: Tensor,
    pub dwh: Tensor,
    pub duh: Tensor,
    pub dbh: Tensor,
}

pub(crate) fn check_dims(seq: &Tensor, h0: &Tensor, w: &GruWeightRefs<'_>) -> Result<GruDims> {
    let (batch, t_len, cin) = match seq.shape() {
        [t, c] => (None, *t, *c),
        [n, t, c] => (Some(*n), *t, *c),
        _ => return Err(Error::shape("gru", "sequence [T x Cin] or [N x T x Cin]", seq.shape_string())),
    };
    if t_len == 0 {
        return Err(Error::shape("gru", "T >= 1", "T = 0".to_string()));
    }
    let [hidden] = *h0.shape() else {
        return Err(Error::shape("gru", "h0 [H]", h0.shape_string()));
    };
    let expect = |name: &str, t: &Tensor, shape: &[usize]| -> Result<()> {
        if t.shape() != shape {
            return Err(Error::shape(
                "gru",
                format!("{} {:?}", name, shape),
                t.shape_string(),
            ));
        }
        Ok(())
    };
    expect("wz", w.wz, &[hidden, cin])?;
    expect("wr", w.wr, &[hidden, cin])?;
    expect("wh", w.wh, &[hidden, cin])?;
    expect("uz", w.uz, &[hidden, hidden])?;
    expect("ur", w.ur, &[hidden, hidden])?;
    expect("uh", w.uh, &[hidden, hidden])?;
    expect("bz", w.bz, &[hidden])?;
    expect("br", w.br, &[hidden])?;
    expect("bh", w.bh, &[hidden])?;
    Ok(GruDims { batch, t_len, cin, hidden })
}

/// `proj[t*H+j] = bias[j] + dot(w_row_j, seq_row_t)` with `w` read once:
/// the j-outer order keeps each weight row resident while streaming the
/// sequence, instead of re-reading the whole matrix every time step.
fn input_projection(seq: &[f64], t_len: usize, cin: usize, w: &[f64], bias: &[f64], proj: &mut [f64]) {
    let h_n = bias.len();
    for (j, b) in bias.iter().enumerate() {
        let row = &w[j * cin..(j + 1) * cin];
        for t in 0..t_len {
            proj[t * h_n + j] = b + dot(row, &seq[t * cin..(t + 1) * cin]);
        }
    }
}

fn forward_example(
    seq: &[f64],
    h0: &[f64],
    w: &GruWeightRefs<'_>,
    d: &GruDims,
    out: &mut [f64],
    saved: &mut GruExampleSaved,
) {
    let (t_len, cin, h_n) = (d.t_len, d.cin, d.hidden);
    let mut xz = vec![0.0; t_len * h_n];
    let mut xr = vec![0.0; t_len * h_n];
    let mut xh = vec![0.0; t_len * h_n];
    input_projection(seq, t_len, cin, w.wz.data(), w.bz.data(), &mut xz);
    input_projection(seq, t_len, cin, w.wr.data(), w.br.data(), &mut xr);
    input_projection(seq, t_len, cin, w.wh.data(), w.bh.data(), &mut xh);

    let mut h = h0.to_vec();
    let mut rh = vec![0.0; h_n];
    for t in 0..t_len {
        let zs = &mut saved.z[t * h_n..(t + 1) * h_n];
        let rs = &mut saved.r[t * h_n..(t + 1) * h_n];
        for j in 0..h_n {
            zs[j] = sigmoid(xz[t * h_n + j] + dot(&w.uz.data()[j * h_n..(j + 1) * h_n], &h));
            rs[j] = sigmoid(xr[t * h_n + j] + dot(&w.ur.data()[j * h_n..(j + 1) * h_n], &h));
            rh[j] = rs[j] * h[j];
        }
        let hcs = &mut saved.hc[t * h_n..(t + 1) * h_n];
        for j in 0..h_n {
            hcs[j] = (xh[t * h_n + j] + dot(&w.uh.data()[j * h_n..(j + 1) * h_n], &rh)).tanh();
            h[j] = (1.0 - zs[j]) * hcs[j] + zs[j] * h[j];
        }
        out[t * h_n..(t + 1) * h_n].copy_from_slice(&h);
    }
}

/// Full hidden sequence `[T x H]` (or `[N x T x H]`) plus saved gates.
pub(crate) fn forward(seq: &Tensor, h0: &Tensor, w: &GruWeightRefs<'_>) -> Result<(Tensor, GruSaved)> {
    let d = check_dims(seq, h0, w)?;
    let n = d.batch.unwrap_or(1);
    let (t_len, cin, h_n) = (d.t_len, d.cin, d.hidden);
    let examples: Vec<usize> = (0..n).collect();
    let results = exec::map_chunks(&examples, exec::EXAMPLE_CHUNK, |_, chunk| {
        chunk
            .iter()
            .map(|&ex| {
                let mut out = vec![0.0; t_len * h_n];
                let mut saved = GruExampleSaved {
                    z: vec![0.0; t_len * h_n],
                    r: vec![0.0; t_len * h_n],
                    hc: vec![0.0; t_len * h_n],
                };
                forward_example(
                    &seq.data()[ex * t_len * cin..(ex + 1) * t_len * cin],
                    h0.data(),
                    w,
                    &d,
                    &mut out,
                    &mut saved,
                );
                (out, saved)
            })
            .collect::<Vec<_>>()
    });

    let mut out_data = Vec::with_capacity(n * t_len * h_n);
    let mut per_example = Vec::with_capacity(n);
    for chunk in results {
        for (out, saved) in chunk {
            out_data.extend_from_slice(&out);
            per_example.push(saved);
        }
    }
    let out_shape = match d.batch {
        None => vec![t_len, h_n],
        Some(n) => vec![n, t_len, h_n],
    };
    Ok((Tensor::from_vec(out_shape, out_data)?, GruSaved { per_example }))
}

struct ExampleBackward {
    dseq: Vec<f64>,
    dh0: Vec<f64>,
    dw: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn backward_example(
    seq: &[f64],
    h0: &[f64],
    out: &[f64],
    gout: &[f64],
    saved: &GruExampleSaved,
    w: &GruWeightRefs<'_>,
    d: &GruDims,
) -> ExampleBackward {
    let (t_len, cin, h_n) = (d.t_len, d.cin, d.hidden);
    let h_prev_row =
        |t: usize| -> &[f64] { if t == 0 { h0 } else { &out[(t - 1) * h_n..t * h_n] } };

    // Pass 1, reverse over time: pre-activation gate deltas plus the
    // recurrent carry. Only the carry needs the U matrices per step.
    let mut daz_all = vec![0.0; t_len * h_n];
    let mut dar_all = vec![0.0; t_len * h_n];
    let mut dah_all = vec![0.0; t_len * h_n];
    let mut dh = vec![0.0; h_n];
    let mut drh = vec![0.0; h_n];
    for t in (0..t_len).rev() {
        let h_prev = h_prev_row(t);
        let z = &saved.z[t * h_n..(t + 1) * h_n];
        let r = &saved.r[t * h_n..(t + 1) * h_n];
        let hc = &saved.hc[t * h_n..(t + 1) * h_n];
        let daz = &mut daz_all[t * h_n..(t + 1) * h_n];
        let dah = &mut dah_all[t * h_n..(t + 1) * h_n];
        for j in 0..h_n {
            let dht = gout[t * h_n + j] + dh[j];
            let dz = dht * (h_prev[j] - hc[j]);
            let dhc = dht * (1.0 - z[j]);
            daz[j] = dz * z[j] * (1.0 - z[j]);
            dah[j] = dhc * (1.0 - hc[j] * hc[j]);
            // direct path of the carry; gate paths accumulate below
            dh[j] = dht * z[j];
        }
        drh.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_accum(w.uh.data(), h_n, h_n, dah, &mut drh);
        let dar = &mut dar_all[t * h_n..(t + 1) * h_n];
        for j in 0..h_n {
            let dr = drh[j] * h_prev[j];
            dar[j] = dr * r[j] * (1.0 - r[j]);
            dh[j] += drh[j] * r[j];
        }
        matvec_t_accum(w.uz.data(), h_n, h_n, daz, &mut dh);
        matvec_t_accum(w.ur.data(), h_n, h_n, dar, &mut dh);
    }

    // Pass 2: weight, bias, and sequence gradients from the stored deltas,
    // row-at-a-time so each gradient row is written once instead of per step.
    let mut hprev_all = vec![0.0; t_len * h_n];
    hprev_all[..h_n].copy_from_slice(h0);
    hprev_all[h_n..].copy_from_slice(&out[..(t_len - 1) * h_n]);
    let rh_all: Vec<f64> = saved.r.iter().zip(&hprev_all).map(|(r, h)| r * h).collect();

    let accumulate = |deltas: &[f64], states: &[f64], dwg: &mut [f64], dug: &mut [f64], dbg: &mut [f64]| {
        for j in 0..h_n {
            let w_row = &mut dwg[j * cin..(j + 1) * cin];
            let u_row = &mut dug[j * h_n..(j + 1) * h_n];
            let mut bias = 0.0;
            for t in 0..t_len {
                let delta = deltas[t * h_n + j];
                if delta != 0.0 {
                    axpy(delta, &seq[t * cin..(t + 1) * cin], w_row);
                    axpy(delta, &states[t * h_n..(t + 1) * h_n], u_row);
                }
                bias += delta;
            }
            dbg[j] = bias;
        }
    };
    let mut dwz = vec![0.0; h_n * cin];
    let mut duz = vec![0.0; h_n * h_n];
    let mut dbz = vec![0.0; h_n];
    let mut dwr = vec![0.0; h_n * cin];
    let mut dur = vec![0.0; h_n * h_n];
    let mut dbr = vec![0.0; h_n];
    let mut dwh = vec![0.0; h_n * cin];
    let mut duh = vec![0.0; h_n * h_n];
    let mut dbh = vec![0.0; h_n];
    accumulate(&daz_all, &hprev_all, &mut dwz, &mut duz, &mut dbz);
    accumulate(&dar_all, &hprev_all, &mut dwr, &mut dur, &mut dbr);
    accumulate(&dah_all, &rh_all, &mut dwh, &mut duh, &mut dbh);

    let mut dseq = vec![0.0; t_len * cin];
    for j in 0..h_n {
        let wz_row = &w.wz.data()[j * cin..(j + 1) * cin];
        let wr_row = &w.wr.data()[j * cin..(j + 1) * cin];
        let wh_row = &w.wh.data()[j * cin..(j + 1) * cin];
        for t in 0..t_len {
            let dx = &mut dseq[t * cin..(t + 1) * cin];
            axpy(daz_all[t * h_n + j], wz_row, dx);
            axpy(dar_all[t * h_n + j], wr_row, dx);
            axpy(dah_all[t * h_n + j], wh_row, dx);
        }
    }
    ExampleBackward {
        dseq,
        dh0: dh,
        dw: vec![dwz, duz, dbz, dwr, dur, dbr, dwh, duh, dbh],
    }
}

/// Gradients w.r.t. the sequence, h0, and all nine weights.
pub(crate) fn backward(
    seq: &Tensor,
    h0: &Tensor,
    out: &Tensor,
    gout: &Tensor,
    saved: &GruSaved,
    w: &GruWeightRefs<'_>,
) -> Result<(Tensor, Tensor, GruWeightGrads)> {
    let d = check_dims(seq, h0, w)?;
    let n = d.batch.unwrap_or(1);
    let (t_len, cin, h_n) = (d.t_len, d.cin, d.hidden);
    debug_assert_eq!(saved.per_example.len(), n);

    let examples: Vec<usize> = (0..n).collect();
    let results = exec::map_chunks(&examples, exec::EXAMPLE_CHUNK, |_, chunk| {
        let mut dseqs = Vec::with_capacity(chunk.len());
        let mut dh0 = vec![0.0; h_n];
        let mut dw: Option<Vec<Vec<f64>>> = None;
        for &ex in chunk {
            let eb = backward_example(
                &seq.data()[ex * t_len * cin..(ex + 1) * t_len * cin],
                h0.data(),
                &out.data()[ex * t_len * h_n..(ex + 1) * t_len * h_n],
                &gout.data()[ex * t_len * h_n..(ex + 1) * t_len * h_n],
                &saved.per_example[ex],
                w,
                &d,
            );
            dseqs.push(eb.dseq);
            for (a, b) in dh0.iter_mut().zip(&eb.dh0) {
                *a += *b;
            }
            match &mut dw {
                None => dw = Some(eb.dw),
                Some(acc) => {
                    for (total, part) in acc.iter_mut().zip(&eb.dw) {
                        for (a, b) in total.iter_mut().zip(part) {
                            *a += *b;
                        }
                    }
                }
            }
        }
        (dseqs, dh0, dw.expect("non-empty chunk"))
    });

    let mut dseq_data = Vec::with_capacity(n * t_len * cin);
    let mut dh0_total = vec![0.0; h_n];
    let mut dw_total: Option<Vec<Vec<f64>>> = None;
    for (dseqs, dh0, dw) in results {
        for ds in dseqs {
            dseq_data.extend_from_slice(&ds);
        }
        for (a, b) in dh0_total.iter_mut().zip(&dh0) {
            *a += *b;
        }
        match &mut dw_total {
            None => dw_total = Some(dw),
            Some(acc) => {
                for (total, part) in acc.iter_mut().zip(&dw) {
                    for (a, b) in total.iter_mut().zip(part) {
                        *a += *b;
                    }
                }
            }
        }
    }
    let mut dw = dw_total.expect("at least one example").into_iter();
    let mut next = |shape: Vec<usize>| Tensor::from_vec(shape, dw.next().unwrap());
    let grads = GruWeightGrads {
        dwz: next(vec![h_n, cin])?,
        duz: next(vec![h_n, h_n])?,
        dbz: next(vec![h_n])?,
        dwr: next(vec![h_n, cin])?,
        dur: next(vec![h_n, h_n])?,
        dbr: next(vec![h_n])?,
        dwh: next(vec![h_n, cin])?,
        duh: next(vec![h_n, h_n])?,
        dbh: next(vec![h_n])?,
    };
    Ok((
        Tensor::from_vec(seq.shape().to_vec(), dseq_data)?,
        Tensor::from_vec(vec![h_n], dh0_total)?,
        grads,
    ))
}
