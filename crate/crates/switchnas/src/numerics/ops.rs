//! Differentiable primitives.
//!
//! Every op computes its forward value eagerly and, when the tape is
//! recording and an input requires grad, pushes a closure that accumulates
//! the local gradient into each input. Shapes are validated up front so the
//! closures can index without checks.
//!
//! Naming convention for shapes in comments: `[m,k]` etc. are row-major.

use crate::error::{NumericsError, Result};
use crate::numerics::tape::Tape;
use crate::numerics::tensor::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows/width split along the last axis. Scalars count as one row of width 1.
fn last_axis(shape: &[usize]) -> (usize, usize) {
    match shape.last() {
        Some(&w) => (shape[..shape.len() - 1].iter().product::<usize>().max(1), w),
        None => (1, 1),
    }
}

fn shape_mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> crate::error::Error {
    NumericsError::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }.into()
}

fn bad_shape(op: &'static str, t: &Tensor, expected: &str) -> crate::error::Error {
    NumericsError::BadShape { op, shape: t.shape().to_vec(), expected: expected.to_string() }
        .into()
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

/// C[m,n] = A[m,k] · B[k,n], ikj loop order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += a_ip * bv;
            }
        }
    }
    c
}

/// dA[m,k] += G[m,n] · B[k,n]^T  (rows of B are contiguous, so this is a dot).
fn matmul_backward_lhs(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let darow = &mut da[i * k..(i + 1) * k];
        for (p, dv) in darow.iter_mut().enumerate() {
            *dv += dot(grow, &b[p * n..(p + 1) * n]);
        }
    }
    da
}

/// dB[k,n] += A[m,k]^T · G[m,n].
fn matmul_backward_rhs(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &a_ip) in arow.iter().enumerate() {
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (dv, &gv) in dbrow.iter_mut().zip(grow) {
                *dv += a_ip * gv;
            }
        }
    }
    db
}

/// Matrix product of two 2-D tensors.
pub fn matmul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(shape_mismatch("matmul", a, b));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let out_data = matmul_raw(&a.data(), &b.data(), m, k, n);
    let track = tape.tracks(&[a, b]);
    let out = Tensor::raw(vec![m, n], out_data, track);
    if track {
        let (a, b, out) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if a.requires_grad() {
                a.accumulate_grad(&matmul_backward_lhs(g, &b.data(), m, k, n));
            }
            if b.requires_grad() {
                b.accumulate_grad(&matmul_backward_rhs(&a.data(), g, m, k, n));
            }
        });
    }
    Ok(out)
}

/// Batched matrix product: [B,m,k] · [B,k,n] -> [B,m,n].
pub fn bmm(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
        return Err(shape_mismatch("bmm", a, b));
    }
    let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
    let (am, bm) = (m * k, k * n);
    let om = m * n;
    let mut out_data = vec![0.0; bsz * om];
    {
        let (ad, bd) = (a.data(), b.data());
        for t in 0..bsz {
            let c = matmul_raw(&ad[t * am..(t + 1) * am], &bd[t * bm..(t + 1) * bm], m, k, n);
            out_data[t * om..(t + 1) * om].copy_from_slice(&c);
        }
    }
    let track = tape.tracks(&[a, b]);
    let out = Tensor::raw(vec![bsz, m, n], out_data, track);
    if track {
        let (a, b, out) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if a.requires_grad() {
                let bd = b.data();
                let mut da = vec![0.0; bsz * am];
                for t in 0..bsz {
                    let d = matmul_backward_lhs(&g[t * om..(t + 1) * om], &bd[t * bm..(t + 1) * bm], m, k, n);
                    da[t * am..(t + 1) * am].copy_from_slice(&d);
                }
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let ad = a.data();
                let mut db = vec![0.0; bsz * bm];
                for t in 0..bsz {
                    let d = matmul_backward_rhs(&ad[t * am..(t + 1) * am], &g[t * om..(t + 1) * om], m, k, n);
                    db[t * bm..(t + 1) * bm].copy_from_slice(&d);
                }
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Transpose the last two axes of a 2-D or 3-D tensor.
pub fn transpose(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    if s.len() != 2 && s.len() != 3 {
        return Err(bad_shape("transpose", x, "rank 2 or 3"));
    }
    let (bsz, m, n) = if s.len() == 2 { (1, s[0], s[1]) } else { (s[0], s[1], s[2]) };
    let stride = m * n;
    let transpose_raw = move |src: &[f64]| {
        let mut dst = vec![0.0; src.len()];
        for t in 0..bsz {
            let sb = &src[t * stride..(t + 1) * stride];
            let db = &mut dst[t * stride..(t + 1) * stride];
            for i in 0..m {
                for j in 0..n {
                    db[j * m + i] = sb[i * n + j];
                }
            }
        }
        dst
    };
    let out_shape = if s.len() == 2 { vec![n, m] } else { vec![bsz, n, m] };
    let out_data = transpose_raw(&x.data());
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(out_shape, out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        // Transposing the gradient back swaps m and n.
        let untranspose = move |src: &[f64]| {
            let mut dst = vec![0.0; src.len()];
            for t in 0..bsz {
                let sb = &src[t * stride..(t + 1) * stride];
                let db = &mut dst[t * stride..(t + 1) * stride];
                for i in 0..n {
                    for j in 0..m {
                        db[j * n + i] = sb[i * m + j];
                    }
                }
            }
            dst
        };
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(&untranspose(g));
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// elementwise and broadcast
// ---------------------------------------------------------------------------

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_mismatch("add", a, b));
    }
    let out_data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let track = tape.tracks(&[a, b]);
    let out = Tensor::raw(a.shape().to_vec(), out_data, track);
    if track {
        let (a, b, out) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if a.requires_grad() {
                a.accumulate_grad(g);
            }
            if b.requires_grad() {
                b.accumulate_grad(g);
            }
        });
    }
    Ok(out)
}

/// `[rows, d] + [d]` broadcast over rows (any leading shape with last axis d).
pub fn add_bias(tape: &Tape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, d) = last_axis(x.shape());
    if bias.shape() != [d] {
        return Err(shape_mismatch("add_bias", x, bias));
    }
    let mut out_data = x.to_vec();
    {
        let bd = bias.data();
        for r in 0..rows {
            for (o, &bv) in out_data[r * d..(r + 1) * d].iter_mut().zip(bd.iter()) {
                *o += bv;
            }
        }
    }
    let track = tape.tracks(&[x, bias]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, bias, out) = (x.clone(), bias.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(g);
            }
            if bias.requires_grad() {
                let mut db = vec![0.0; d];
                for r in 0..rows {
                    for (dv, &gv) in db.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dv += gv;
                    }
                }
                bias.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// `[B,T,d] + [T,d]` broadcast over the batch axis (positional embeddings).
pub fn add_rows(tape: &Tape, x: &Tensor, rows: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || rows.shape() != [s[1], s[2]] {
        return Err(shape_mismatch("add_rows", x, rows));
    }
    let (bsz, block) = (s[0], s[1] * s[2]);
    let mut out_data = x.to_vec();
    {
        let rd = rows.data();
        for t in 0..bsz {
            for (o, &rv) in out_data[t * block..(t + 1) * block].iter_mut().zip(rd.iter()) {
                *o += rv;
            }
        }
    }
    let track = tape.tracks(&[x, rows]);
    let out = Tensor::raw(s.to_vec(), out_data, track);
    if track {
        let (x, rows_t, out) = (x.clone(), rows.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(g);
            }
            if rows_t.requires_grad() {
                let mut dr = vec![0.0; block];
                for t in 0..bsz {
                    for (dv, &gv) in dr.iter_mut().zip(&g[t * block..(t + 1) * block]) {
                        *dv += gv;
                    }
                }
                rows_t.accumulate_grad(&dr);
            }
        });
    }
    Ok(out)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(tape: &Tape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_mismatch("mul", a, b));
    }
    let out_data: Vec<f64> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let track = tape.tracks(&[a, b]);
    let out = Tensor::raw(a.shape().to_vec(), out_data, track);
    if track {
        let (a, b, out) = (a.clone(), b.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if a.requires_grad() {
                let bd = b.data();
                let da: Vec<f64> = g.iter().zip(bd.iter()).map(|(gv, bv)| gv * bv).collect();
                a.accumulate_grad(&da);
            }
            if b.requires_grad() {
                let ad = a.data();
                let db: Vec<f64> = g.iter().zip(ad.iter()).map(|(gv, av)| gv * av).collect();
                b.accumulate_grad(&db);
            }
        });
    }
    Ok(out)
}

/// Multiply by a compile-time constant.
pub fn scale(tape: &Tape, x: &Tensor, c: f64) -> Tensor {
    let out_data: Vec<f64> = x.data().iter().map(|v| v * c).collect();
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let dx: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                x.accumulate_grad(&dx);
            }
        });
    }
    out
}

/// Scale each row of `x[n,d]` by the matching entry of `s[n]`.
pub fn mul_col(tape: &Tape, x: &Tensor, s: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || s.shape() != [xs[0]] {
        return Err(shape_mismatch("mul_col", x, s));
    }
    let (n, d) = (xs[0], xs[1]);
    let mut out_data = x.to_vec();
    {
        let sd = s.data();
        for (r, &sv) in sd.iter().enumerate() {
            for o in &mut out_data[r * d..(r + 1) * d] {
                *o *= sv;
            }
        }
    }
    let track = tape.tracks(&[x, s]);
    let out = Tensor::raw(xs.to_vec(), out_data, track);
    if track {
        let (x, s, out) = (x.clone(), s.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let sd = s.data();
                let mut dx = vec![0.0; n * d];
                for (r, &sv) in sd.iter().enumerate() {
                    for (dv, &gv) in dx[r * d..(r + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dv = gv * sv;
                    }
                }
                x.accumulate_grad(&dx);
            }
            if s.requires_grad() {
                let xd = x.data();
                let mut ds = vec![0.0; n];
                for (r, dv) in ds.iter_mut().enumerate() {
                    *dv = dot(&xd[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                }
                s.accumulate_grad(&ds);
            }
        });
    }
    Ok(out)
}

/// `out[i] = x[i, idx[i]]` — pick one column per row.
pub fn select_per_row(tape: &Tape, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || idx.len() != xs[0] {
        return Err(bad_shape("select_per_row", x, "rank 2 with one index per row"));
    }
    let (n, e) = (xs[0], xs[1]);
    if let Some(&bad) = idx.iter().find(|&&j| j >= e) {
        return Err(bad_shape("select_per_row", x, &format!("column index {bad} < {e}")));
    }
    let out_data: Vec<f64> = {
        let xd = x.data();
        idx.iter().enumerate().map(|(i, &j)| xd[i * e + j]).collect()
    };
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![n], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        let idx = idx.to_vec();
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let mut dx = vec![0.0; n * e];
                for (i, &j) in idx.iter().enumerate() {
                    dx[i * e + j] = g[i];
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

pub fn relu(tape: &Tape, x: &Tensor) -> Tensor {
    let out_data: Vec<f64> = x.data().iter().map(|&v| v.max(0.0)).collect();
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let xd = x.data();
                let dx: Vec<f64> =
                    g.iter().zip(xd.iter()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                x.accumulate_grad(&dx);
            }
        });
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// GELU, tanh approximation.
pub fn gelu(tape: &Tape, x: &Tensor) -> Tensor {
    let out_data: Vec<f64> = x.data().iter().map(|&v| gelu_scalar(v)).collect();
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let xd = x.data();
                let dx: Vec<f64> =
                    g.iter().zip(xd.iter()).map(|(gv, &xv)| gv * gelu_grad_scalar(xv)).collect();
                x.accumulate_grad(&dx);
            }
        });
    }
    out
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

/// Stable softmax of one row into `dst`, restricted to `active` columns
/// (inactive outputs are exactly 0). `active == None` means all columns.
pub(crate) fn softmax_row(src: &[f64], dst: &mut [f64], active: Option<&[bool]>) {
    let is_active = |j: usize| active.is_none_or(|m| m[j]);
    let mut mx = f64::NEG_INFINITY;
    for (j, &v) in src.iter().enumerate() {
        if is_active(j) && v > mx {
            mx = v;
        }
    }
    let mut sum = 0.0;
    for (j, (d, &v)) in dst.iter_mut().zip(src).enumerate() {
        if is_active(j) {
            *d = (v - mx).exp();
            sum += *d;
        } else {
            *d = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for d in dst.iter_mut() {
        *d *= inv;
    }
}

fn softmax_impl(tape: &Tape, x: &Tensor, active: Option<Vec<bool>>) -> Tensor {
    let (rows, w) = last_axis(x.shape());
    let mut out_data = vec![0.0; rows * w];
    {
        let xd = x.data();
        for r in 0..rows {
            softmax_row(&xd[r * w..(r + 1) * w], &mut out_data[r * w..(r + 1) * w], active.as_deref());
        }
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                // dX_row = y ⊙ (g − Σ g⊙y); inactive columns have y = 0.
                let yd = out.data();
                let mut dx = vec![0.0; yd.len()];
                for r in 0..rows {
                    let ys = &yd[r * w..(r + 1) * w];
                    let gs = &g[r * w..(r + 1) * w];
                    let inner = dot(gs, ys);
                    for ((dv, &yv), &gv) in dx[r * w..(r + 1) * w].iter_mut().zip(ys).zip(gs) {
                        *dv = yv * (gv - inner);
                    }
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    out
}

/// Softmax along the last axis.
pub fn softmax(tape: &Tape, x: &Tensor) -> Tensor {
    softmax_impl(tape, x, None)
}

/// Softmax along the last axis over `active` columns only; inactive columns
/// produce exactly 0 probability and receive zero gradient.
pub fn softmax_masked(tape: &Tape, x: &Tensor, active: &[bool]) -> Result<Tensor> {
    let (_, w) = last_axis(x.shape());
    if active.len() != w {
        return Err(bad_shape("softmax_masked", x, &format!("{} mask entries", active.len())));
    }
    if !active.iter().any(|&a| a) {
        return Err(bad_shape("softmax_masked", x, "at least one active column"));
    }
    Ok(softmax_impl(tape, x, Some(active.to_vec())))
}

/// Layer normalization along the last axis with learned gain and shift.
pub fn layer_norm(tape: &Tape, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, d) = last_axis(x.shape());
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(shape_mismatch("layer_norm", x, gamma));
    }
    let mut out_data = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut inv_std = vec![0.0; rows];
    {
        let (xd, gd, bd) = (x.data(), gamma.data(), beta.data());
        for r in 0..rows {
            let xs = &xd[r * d..(r + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            let hs = &mut xhat[r * d..(r + 1) * d];
            let os = &mut out_data[r * d..(r + 1) * d];
            for j in 0..d {
                hs[j] = (xs[j] - mean) * istd;
                os[j] = gd[j] * hs[j] + bd[j];
            }
        }
    }
    let track = tape.tracks(&[x, gamma, beta]);
    let out = Tensor::raw(x.shape().to_vec(), out_data, track);
    if track {
        let (x, gamma, beta, out) = (x.clone(), gamma.clone(), beta.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            let gd = gamma.data();
            if x.requires_grad() {
                let mut dx = vec![0.0; rows * d];
                for r in 0..rows {
                    let gs = &g[r * d..(r + 1) * d];
                    let hs = &xhat[r * d..(r + 1) * d];
                    // dyhat = g ⊙ gamma
                    let mut m1 = 0.0; // mean(dyhat)
                    let mut m2 = 0.0; // mean(dyhat ⊙ xhat)
                    for j in 0..d {
                        let dyh = gs[j] * gd[j];
                        m1 += dyh;
                        m2 += dyh * hs[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let istd = inv_std[r];
                    for (j, dv) in dx[r * d..(r + 1) * d].iter_mut().enumerate() {
                        let dyh = gs[j] * gd[j];
                        *dv = istd * (dyh - m1 - hs[j] * m2);
                    }
                }
                x.accumulate_grad(&dx);
            }
            if gamma.requires_grad() {
                let mut dgamma = vec![0.0; d];
                for r in 0..rows {
                    let gs = &g[r * d..(r + 1) * d];
                    let hs = &xhat[r * d..(r + 1) * d];
                    for j in 0..d {
                        dgamma[j] += gs[j] * hs[j];
                    }
                }
                gamma.accumulate_grad(&dgamma);
            }
            if beta.requires_grad() {
                let mut dbeta = vec![0.0; d];
                for r in 0..rows {
                    for (dv, &gv) in dbeta.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                        *dv += gv;
                    }
                }
                beta.accumulate_grad(&dbeta);
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Sum over all elements -> scalar.
pub fn sum_all(tape: &Tape, x: &Tensor) -> Tensor {
    let s: f64 = x.data().iter().sum();
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![], vec![s], track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(&vec![g[0]; x.numel()]);
            }
        });
    }
    out
}

/// Mean over all elements -> scalar.
pub fn mean_all(tape: &Tape, x: &Tensor) -> Tensor {
    let n = x.numel() as f64;
    let s: f64 = x.data().iter().sum::<f64>() / n;
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![], vec![s], track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(&vec![g[0] / n; x.numel()]);
            }
        });
    }
    out
}

/// Column means of a 2-D tensor: [n,e] -> [e].
pub fn mean_axis0(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(bad_shape("mean_axis0", x, "rank 2"));
    }
    let (n, e) = (xs[0], xs[1]);
    let mut out_data = vec![0.0; e];
    {
        let xd = x.data();
        for r in 0..n {
            for (o, &v) in out_data.iter_mut().zip(&xd[r * e..(r + 1) * e]) {
                *o += v;
            }
        }
        for o in &mut out_data {
            *o /= n as f64;
        }
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![e], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let mut dx = vec![0.0; n * e];
                for r in 0..n {
                    for (dv, &gv) in dx[r * e..(r + 1) * e].iter_mut().zip(g.iter()) {
                        *dv = gv / n as f64;
                    }
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// Mean over the token axis: [B,T,d] -> [B,d].
pub fn mean_tokens(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(bad_shape("mean_tokens", x, "rank 3"));
    }
    let (bsz, t, d) = (s[0], s[1], s[2]);
    let mut out_data = vec![0.0; bsz * d];
    {
        let xd = x.data();
        for b in 0..bsz {
            let os = &mut out_data[b * d..(b + 1) * d];
            for tok in 0..t {
                let xs = &xd[(b * t + tok) * d..(b * t + tok + 1) * d];
                for (o, &v) in os.iter_mut().zip(xs) {
                    *o += v;
                }
            }
            for o in os.iter_mut() {
                *o /= t as f64;
            }
        }
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![bsz, d], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let mut dx = vec![0.0; bsz * t * d];
                for b in 0..bsz {
                    let gs = &g[b * d..(b + 1) * d];
                    for tok in 0..t {
                        for (dv, &gv) in
                            dx[(b * t + tok) * d..(b * t + tok + 1) * d].iter_mut().zip(gs)
                        {
                            *dv = gv / t as f64;
                        }
                    }
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// Weighted sum against a constant vector: Σ x[i]·w[i] -> scalar.
pub fn weighted_sum(tape: &Tape, x: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if x.shape() != [weights.len()] {
        return Err(bad_shape("weighted_sum", x, &format!("rank 1 of length {}", weights.len())));
    }
    let s = dot(&x.data(), weights);
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![], vec![s], track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        let weights = weights.to_vec();
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let dx: Vec<f64> = weights.iter().map(|w| w * g[0]).collect();
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// indexing and layout
// ---------------------------------------------------------------------------

/// Select rows of `x[n,d]` by index (duplicates allowed): -> [len(idx), d].
pub fn gather_rows(tape: &Tape, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(bad_shape("gather_rows", x, "rank 2"));
    }
    let (n, d) = (xs[0], xs[1]);
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(bad_shape("gather_rows", x, &format!("row index {bad} < {n}")));
    }
    let mut out_data = vec![0.0; idx.len() * d];
    {
        let xd = x.data();
        for (o, &i) in idx.iter().enumerate() {
            out_data[o * d..(o + 1) * d].copy_from_slice(&xd[i * d..(i + 1) * d]);
        }
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![idx.len(), d], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        let idx = idx.to_vec();
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let mut dx = vec![0.0; n * d];
                for (o, &i) in idx.iter().enumerate() {
                    for (dv, &gv) in dx[i * d..(i + 1) * d].iter_mut().zip(&g[o * d..(o + 1) * d]) {
                        *dv += gv;
                    }
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// Place rows of `x[m,d]` at positions `idx` of a zero [n_rows, d] tensor.
/// Indices must be distinct.
pub fn scatter_rows(tape: &Tape, x: &Tensor, idx: &[usize], n_rows: usize) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 2 || xs[0] != idx.len() {
        return Err(bad_shape("scatter_rows", x, "rank 2 with one index per row"));
    }
    let d = xs[1];
    if let Some(&bad) = idx.iter().find(|&&i| i >= n_rows) {
        return Err(bad_shape("scatter_rows", x, &format!("row index {bad} < {n_rows}")));
    }
    let mut out_data = vec![0.0; n_rows * d];
    {
        let xd = x.data();
        for (o, &i) in idx.iter().enumerate() {
            out_data[i * d..(i + 1) * d].copy_from_slice(&xd[o * d..(o + 1) * d]);
        }
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![n_rows, d], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        let idx = idx.to_vec();
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                let mut dx = vec![0.0; idx.len() * d];
                for (o, &i) in idx.iter().enumerate() {
                    dx[o * d..(o + 1) * d].copy_from_slice(&g[i * d..(i + 1) * d]);
                }
                x.accumulate_grad(&dx);
            }
        });
    }
    Ok(out)
}

/// View with a new shape of the same element count (data copied).
pub fn reshape(tape: &Tape, x: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    if new_shape.iter().product::<usize>() != x.numel() {
        return Err(bad_shape("reshape", x, &format!("{new_shape:?} with equal element count")));
    }
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(new_shape.to_vec(), x.to_vec(), track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                x.accumulate_grad(g);
            }
        });
    }
    Ok(out)
}

/// Swap axes 1 and 2 of a 4-D tensor: [a,b,c,d] -> [a,c,b,d].
pub fn permute_0213(tape: &Tape, x: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(bad_shape("permute_0213", x, "rank 4"));
    }
    let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
    let perm = move |src: &[f64], b: usize, c: usize| {
        let mut dst = vec![0.0; src.len()];
        for i0 in 0..a {
            for i1 in 0..b {
                for i2 in 0..c {
                    let from = ((i0 * b + i1) * c + i2) * d;
                    let to = ((i0 * c + i2) * b + i1) * d;
                    dst[to..to + d].copy_from_slice(&src[from..from + d]);
                }
            }
        }
        dst
    };
    let out_data = perm(&x.data(), b, c);
    let track = tape.tracks(&[x]);
    let out = Tensor::raw(vec![a, c, b, d], out_data, track);
    if track {
        let (x, out) = (x.clone(), out.clone());
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if x.requires_grad() {
                // The inverse permutation swaps the same two axes back.
                x.accumulate_grad(&perm(g, c, b));
            }
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean cross-entropy of logits [B,C] against class labels.
pub fn cross_entropy_loss(tape: &Tape, logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || labels.len() != s[0] {
        return Err(bad_shape("cross_entropy_loss", logits, "rank 2 with one label per row"));
    }
    let (bsz, c) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(bad_shape("cross_entropy_loss", logits, &format!("label {bad} < {c}")));
    }
    let mut probs = vec![0.0; bsz * c];
    let mut loss = 0.0;
    {
        let ld = logits.data();
        for (r, &y) in labels.iter().enumerate() {
            let row = &ld[r * c..(r + 1) * c];
            softmax_row(row, &mut probs[r * c..(r + 1) * c], None);
            // -log p[y], computed from the stabilized softmax
            loss -= probs[r * c + y].max(1e-300).ln();
        }
        loss /= bsz as f64;
    }
    let track = tape.tracks(&[logits]);
    let out = Tensor::raw(vec![], vec![loss], track);
    if track {
        let (logits, out) = (logits.clone(), out.clone());
        let labels = labels.to_vec();
        tape.record(move || {
            let gref = out.grad_ref();
            let Some(g) = gref.as_ref() else { return };
            if logits.requires_grad() {
                let scale = g[0] / bsz as f64;
                let mut dl = vec![0.0; bsz * c];
                for (r, &y) in labels.iter().enumerate() {
                    for j in 0..c {
                        let p = probs[r * c + j];
                        dl[r * c + j] = scale * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
                logits.accumulate_grad(&dl);
            }
        });
    }
    Ok(out)
}
