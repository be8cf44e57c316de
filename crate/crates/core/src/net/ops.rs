//! Batched tensor kernels with hand-written backward passes.
//!
//! Activations are channel-major with the batch folded into the time axis: element
//! `(channel c, sample b, position t)` lives at `c * (batch * len) + b * len + t`. A 1-D
//! convolution over the whole batch is then one matrix product against an im2col buffer
//! whose segments never leak across samples.

/// `c = op(a) * op(b) + beta * c` for row-major matrices, `op(a)` being `m x k` and
/// `op(b)` being `k x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold at least m*k, k*n and m*n elements (asserted above) and the
    // strides describe dense row-major (or transposed) layouts inside those bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shape of a batched activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub batch: usize,
    pub len: usize,
}

impl Dims {
    pub fn new(channels: usize, batch: usize, len: usize) -> Self {
        Self { channels, batch, len }
    }

    pub fn cols(&self) -> usize {
        self.batch * self.len
    }

    pub fn size(&self) -> usize {
        self.channels * self.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvShape {
    pub fn weights(&self) -> usize {
        self.cout * self.cin * self.kernel
    }
}

/// Zero-padded "same" im2col: row `c * kernel + j` holds input channel `c` shifted by
/// `(j - (kernel - 1) / 2) * dilation`.
fn im2col(x: &[f64], shape: &ConvShape, dims: Dims) -> Vec<f64> {
    let cols = dims.cols();
    let half = (shape.kernel - 1) / 2;
    let mut col = vec![0.0; shape.cin * shape.kernel * cols];
    for c in 0..shape.cin {
        for j in 0..shape.kernel {
            let off = (j as isize - half as isize) * shape.dilation as isize;
            let row = &mut col[(c * shape.kernel + j) * cols..(c * shape.kernel + j + 1) * cols];
            for b in 0..dims.batch {
                let src = &x[c * cols + b * dims.len..c * cols + (b + 1) * dims.len];
                let dst = &mut row[b * dims.len..(b + 1) * dims.len];
                copy_shifted(src, dst, off);
            }
        }
    }
    col
}

/// `dst[t] = src[t + off]` where defined, untouched elsewhere.
fn copy_shifted(src: &[f64], dst: &mut [f64], off: isize) {
    let len = src.len() as isize;
    let lo = (-off).clamp(0, len) as usize;
    let hi = (len - off).clamp(0, len) as usize;
    if lo < hi {
        let s0 = (lo as isize + off) as usize;
        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
}

fn col2im(col: &[f64], shape: &ConvShape, dims: Dims) -> Vec<f64> {
    let cols = dims.cols();
    let half = (shape.kernel - 1) / 2;
    let mut dx = vec![0.0; shape.cin * cols];
    for c in 0..shape.cin {
        for j in 0..shape.kernel {
            let off = (j as isize - half as isize) * shape.dilation as isize;
            let row = &col[(c * shape.kernel + j) * cols..(c * shape.kernel + j + 1) * cols];
            for b in 0..dims.batch {
                let len = dims.len as isize;
                let lo = (-off).clamp(0, len) as usize;
                let hi = (len - off).clamp(0, len) as usize;
                for t in lo..hi {
                    let s = (t as isize + off) as usize;
                    dx[c * cols + b * dims.len + s] += row[b * dims.len + t];
                }
            }
        }
    }
    dx
}

/// Convolution with "same" output length. `x` has `shape.cin` channels.
pub fn conv_forward(w: &[f64], bias: Option<&[f64]>, x: &[f64], shape: &ConvShape, dims: Dims) -> Vec<f64> {
    let cols = dims.cols();
    let mut y = vec![0.0; shape.cout * cols];
    if shape.kernel == 1 && shape.dilation == 1 {
        gemm(shape.cout, shape.cin, cols, w, false, x, false, 0.0, &mut y);
    } else {
        let col = im2col(x, shape, dims);
        gemm(shape.cout, shape.cin * shape.kernel, cols, w, false, &col, false, 0.0, &mut y);
    }
    if let Some(b) = bias {
        for (o, row) in y.chunks_mut(cols).enumerate() {
            row.iter_mut().for_each(|v| *v += b[o]);
        }
    }
    y
}

/// Accumulates weight (and bias) gradients and returns the input gradient.
pub fn conv_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    shape: &ConvShape,
    dims: Dims,
    dw: &mut [f64],
    dbias: Option<&mut [f64]>,
) -> Vec<f64> {
    let cols = dims.cols();
    if let Some(db) = dbias {
        for (o, row) in dy.chunks(cols).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
    }
    let rows = shape.cin * shape.kernel;
    if shape.kernel == 1 && shape.dilation == 1 {
        gemm(shape.cout, cols, rows, dy, false, x, true, 1.0, dw);
        let mut dx = vec![0.0; rows * cols];
        gemm(rows, shape.cout, cols, w, true, dy, false, 0.0, &mut dx);
        dx
    } else {
        let col = im2col(x, shape, dims);
        gemm(shape.cout, cols, rows, dy, false, &col, true, 1.0, dw);
        let mut dcol = vec![0.0; rows * cols];
        gemm(rows, shape.cout, cols, w, true, dy, false, 0.0, &mut dcol);
        col2im(&dcol, shape, dims)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Cached batch-norm quantities for the backward pass.
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Batch normalization over (batch, position) per channel using the batch statistics.
/// With `running = Some((mean, var))` those running estimates are updated as well.
pub fn bn_train(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    dims: Dims,
    running: Option<(&mut [f64], &mut [f64])>,
) -> (Vec<f64>, BnCache) {
    let cols = dims.cols();
    let n = cols as f64;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; dims.channels];
    let mut means = vec![0.0; dims.channels];
    let mut vars = vec![0.0; dims.channels];
    for c in 0..dims.channels {
        let row = &x[c * cols..(c + 1) * cols];
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        means[c] = mean;
        vars[c] = var;
        for t in 0..cols {
            let h = (row[t] - mean) * is;
            xhat[c * cols + t] = h;
            y[c * cols + t] = gamma[c] * h + beta[c];
        }
    }
    if let Some((rm, rv)) = running {
        let unbias = if cols > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..dims.channels {
            rm[c] = (1.0 - BN_MOMENTUM) * rm[c] + BN_MOMENTUM * means[c];
            rv[c] = (1.0 - BN_MOMENTUM) * rv[c] + BN_MOMENTUM * vars[c] * unbias;
        }
    }
    (y, BnCache { xhat, inv_std })
}

pub fn bn_infer(x: &[f64], gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], dims: Dims) -> Vec<f64> {
    let cols = dims.cols();
    let mut y = vec![0.0; x.len()];
    for c in 0..dims.channels {
        let is = 1.0 / (var[c] + BN_EPS).sqrt();
        for t in 0..cols {
            y[c * cols + t] = gamma[c] * (x[c * cols + t] - mean[c]) * is + beta[c];
        }
    }
    y
}

pub fn bn_backward(
    dy: &[f64],
    gamma: &[f64],
    cache: &BnCache,
    dims: Dims,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let cols = dims.cols();
    let n = cols as f64;
    let mut dx = vec![0.0; dy.len()];
    for c in 0..dims.channels {
        let dyr = &dy[c * cols..(c + 1) * cols];
        let xh = &cache.xhat[c * cols..(c + 1) * cols];
        let sum_dy: f64 = dyr.iter().sum();
        let sum_dy_xh: f64 = dyr.iter().zip(xh).map(|(a, b)| a * b).sum();
        dgamma[c] += sum_dy_xh;
        dbeta[c] += sum_dy;
        let k = gamma[c] * cache.inv_std[c];
        for t in 0..cols {
            dx[c * cols + t] = k * (dyr[t] - sum_dy / n - xh[t] * sum_dy_xh / n);
        }
    }
    dx
}

pub fn relu(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Zeroes `dy` where the (post-activation) output was not positive.
pub fn relu_backward(dy: &mut [f64], out: &[f64]) {
    dy.iter_mut().zip(out).for_each(|(g, &o)| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
}

/// Cached softmax weights per (sample, head): `T x S` row-major.
pub struct AttnCache {
    pub weights: Vec<Vec<f64>>,
}

/// Scaled dot-product attention, queries `q` (channels x batch*tq), keys and values
/// (channels x batch*tk). Channels split evenly into `heads`.
pub fn attention_forward(q: &[f64], k: &[f64], v: &[f64], channels: usize, heads: usize, batch: usize, tq: usize, tk: usize) -> (Vec<f64>, AttnCache) {
    let dh = channels / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qc, kc) = (batch * tq, batch * tk);
    let mut out = vec![0.0; channels * qc];
    let mut weights = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        for h in 0..heads {
            let mut a = vec![0.0; tq * tk];
            for t in 0..tq {
                let row = &mut a[t * tk..(t + 1) * tk];
                for (u, slot) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in h * dh..(h + 1) * dh {
                        s += q[r * qc + b * tq + t] * k[r * kc + b * tk + u];
                    }
                    *slot = s * scale;
                }
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                let mut sum = 0.0;
                row.iter_mut().for_each(|x| {
                    *x = (*x - max).exp();
                    sum += *x;
                });
                row.iter_mut().for_each(|x| *x /= sum);
                for r in h * dh..(h + 1) * dh {
                    let mut o = 0.0;
                    for u in 0..tk {
                        o += v[r * kc + b * tk + u] * row[u];
                    }
                    out[r * qc + b * tq + t] = o;
                }
            }
            weights.push(a);
        }
    }
    (out, AttnCache { weights })
}

/// Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward(
    dout: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    cache: &AttnCache,
    channels: usize,
    heads: usize,
    batch: usize,
    tq: usize,
    tk: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = channels / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qc, kc) = (batch * tq, batch * tk);
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    for b in 0..batch {
        for h in 0..heads {
            let a = &cache.weights[b * heads + h];
            for t in 0..tq {
                let row = &a[t * tk..(t + 1) * tk];
                let mut da = vec![0.0; tk];
                for r in h * dh..(h + 1) * dh {
                    let g = dout[r * qc + b * tq + t];
                    for u in 0..tk {
                        dv[r * kc + b * tk + u] += g * row[u];
                        da[u] += g * v[r * kc + b * tk + u];
                    }
                }
                let dot: f64 = da.iter().zip(row).map(|(x, y)| x * y).sum();
                for u in 0..tk {
                    let ds = row[u] * (da[u] - dot) * scale;
                    for r in h * dh..(h + 1) * dh {
                        dq[r * qc + b * tq + t] += ds * k[r * kc + b * tk + u];
                        dk[r * kc + b * tk + u] += ds * q[r * qc + b * tq + t];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
