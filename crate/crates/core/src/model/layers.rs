//! Forward/backward kernels on flat `[N, C, T, V]` buffers.

use crate::topology::PartitionedAdjacency;

pub const BN_EPSILON: f64 = 1e-5;
/// Running statistics decay: `running = 0.9 * running + 0.1 * batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub t: usize,
    pub v: usize,
}

impl Dims {
    pub fn new(n: usize, c: usize, t: usize, v: usize) -> Self {
        Dims { n, c, t, v }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.t * self.v
    }

    pub fn with_c(self, c: usize) -> Self {
        Dims { c, ..self }
    }

    pub fn with_t(self, t: usize) -> Self {
        Dims { t, ..self }
    }
}

/// Sparse rows of an adjacency stack: `rows[p][j]` lists `(i, A_p[j][i])`.
#[derive(Debug, Clone)]
pub struct SparseAdjacency {
    pub rows: Vec<Vec<Vec<(usize, f64)>>>,
    /// `cols[p][i]` lists `(j, A_p[j][i])`, for the backward pass.
    pub cols: Vec<Vec<Vec<(usize, f64)>>>,
    pub row_sums: Vec<Vec<f64>>,
    pub v: usize,
}

impl SparseAdjacency {
    pub fn new(adj: &PartitionedAdjacency) -> Self {
        let v = adj.num_joints;
        let parts = adj.num_partitions();
        let mut rows = vec![vec![Vec::new(); v]; parts];
        let mut cols = vec![vec![Vec::new(); v]; parts];
        for p in 0..parts {
            for j in 0..v {
                for i in 0..v {
                    let w = adj.get(p, j, i);
                    if w != 0.0 {
                        rows[p][j].push((i, w));
                        cols[p][i].push((j, w));
                    }
                }
            }
        }
        let row_sums = (0..parts).map(|p| adj.row_sums(p)).collect();
        SparseAdjacency {
            rows,
            cols,
            row_sums,
            v,
        }
    }

    pub fn partitions(&self) -> usize {
        self.rows.len()
    }

    /// `out[.., j] = Σ_i A_p[j][i] x[.., i]` on every `[.., V]` row.
    pub fn aggregate(&self, p: usize, x: &[f64], out: &mut [f64]) {
        let v = self.v;
        for (src, dst) in x.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            for (j, row) in self.rows[p].iter().enumerate() {
                let mut acc = 0.0;
                for &(i, w) in row {
                    acc += w * src[i];
                }
                dst[j] = acc;
            }
        }
    }

    /// Adjoint of [`aggregate`], accumulated into `out`.
    pub fn aggregate_transpose_add(&self, p: usize, dy: &[f64], out: &mut [f64]) {
        let v = self.v;
        for (src, dst) in dy.chunks_exact(v).zip(out.chunks_exact_mut(v)) {
            for (i, col) in self.cols[p].iter().enumerate() {
                let mut acc = 0.0;
                for &(j, w) in col {
                    acc += w * src[j];
                }
                dst[i] += acc;
            }
        }
    }
}

/// `out[o, :] += Σ_c w[o, c] * x[c, :]` with `w` row-major `[rows, cols]`.
#[inline]
fn matmul_add(w: &[f64], rows: usize, cols: usize, x: &[f64], len: usize, out: &mut [f64]) {
    for o in 0..rows {
        let dst = &mut out[o * len..(o + 1) * len];
        for c in 0..cols {
            let wv = w[o * cols + c];
            if wv == 0.0 {
                continue;
            }
            let src = &x[c * len..(c + 1) * len];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct GraphConvCache {
    /// Aggregated input per partition, each `[N, C_in, T, V]`.
    pub aggregated: Vec<Vec<f64>>,
}

/// Partitioned spatial graph convolution with per-partition bias:
/// `y[o, t, j] = Σ_p Σ_c W_p[o, c] Σ_i A_p[j][i] (x[c, t, i]) + Σ_p b_p[o] Σ_i A_p[j][i]`.
///
/// `weight` is `[P, C_out, C_in]`, `bias` is `[P, C_out]`.
pub fn graph_conv_forward(
    x: &[f64],
    d: Dims,
    adj: &SparseAdjacency,
    weight: &[f64],
    bias: Option<&[f64]>,
    c_out: usize,
) -> (Vec<f64>, GraphConvCache) {
    let parts = adj.partitions();
    let plane = d.t * d.v;
    let in_len = d.c * plane;
    let out_len = c_out * plane;
    let mut y = vec![0.0; d.n * out_len];
    let mut aggregated = Vec::with_capacity(parts);
    for p in 0..parts {
        let mut xa = vec![0.0; x.len()];
        adj.aggregate(p, x, &mut xa);
        let w = &weight[p * c_out * d.c..(p + 1) * c_out * d.c];
        for n in 0..d.n {
            matmul_add(
                w,
                c_out,
                d.c,
                &xa[n * in_len..(n + 1) * in_len],
                plane,
                &mut y[n * out_len..(n + 1) * out_len],
            );
        }
        if let Some(b) = bias {
            let rs = &adj.row_sums[p];
            for n in 0..d.n {
                for o in 0..c_out {
                    let bo = b[p * c_out + o];
                    let row = &mut y[n * out_len + o * plane..n * out_len + (o + 1) * plane];
                    for (k, val) in row.iter_mut().enumerate() {
                        *val += bo * rs[k % d.v];
                    }
                }
            }
        }
        aggregated.push(xa);
    }
    (y, GraphConvCache { aggregated })
}

pub fn graph_conv_backward(
    dy: &[f64],
    d: Dims,
    adj: &SparseAdjacency,
    weight: &[f64],
    c_out: usize,
    cache: &GraphConvCache,
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Vec<f64>> {
    let parts = adj.partitions();
    let plane = d.t * d.v;
    let in_len = d.c * plane;
    let out_len = c_out * plane;
    for p in 0..parts {
        let xa = &cache.aggregated[p];
        let dw = &mut dweight[p * c_out * d.c..(p + 1) * c_out * d.c];
        for n in 0..d.n {
            for o in 0..c_out {
                let g = &dy[n * out_len + o * plane..n * out_len + (o + 1) * plane];
                for c in 0..d.c {
                    dw[o * d.c + c] += dot(g, &xa[n * in_len + c * plane..n * in_len + (c + 1) * plane]);
                }
            }
        }
    }
    if let Some(db) = dbias {
        for p in 0..parts {
            let rs = &adj.row_sums[p];
            for n in 0..d.n {
                for o in 0..c_out {
                    let g = &dy[n * out_len + o * plane..n * out_len + (o + 1) * plane];
                    let s: f64 = g.iter().enumerate().map(|(k, gv)| gv * rs[k % d.v]).sum();
                    db[p * c_out + o] += s;
                }
            }
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![0.0; d.n * in_len];
    let mut dxa = vec![0.0; in_len];
    for p in 0..parts {
        let w = &weight[p * c_out * d.c..(p + 1) * c_out * d.c];
        for n in 0..d.n {
            dxa.iter_mut().for_each(|v| *v = 0.0);
            // dxa[c, :] = Σ_o w[o, c] dy[o, :]
            for o in 0..c_out {
                let g = &dy[n * out_len + o * plane..n * out_len + (o + 1) * plane];
                for c in 0..d.c {
                    let wv = w[o * d.c + c];
                    let dst = &mut dxa[c * plane..(c + 1) * plane];
                    for (a, b) in dst.iter_mut().zip(g) {
                        *a += wv * b;
                    }
                }
            }
            adj.aggregate_transpose_add(p, &dxa, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    Some(dx)
}

pub fn temporal_out_len(t: usize, stride: usize) -> usize {
    (t - 1) / stride + 1
}

/// Temporal convolution with a `kernel x 1` window, zero padding
/// `(kernel - 1) / 2` and stride `stride`. `weight` is `[C_out, C_in, K]`.
pub fn temporal_conv_forward(
    x: &[f64],
    d: Dims,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    kernel: usize,
    stride: usize,
) -> Vec<f64> {
    let pad = (kernel - 1) / 2;
    let t_out = temporal_out_len(d.t, stride);
    let v = d.v;
    let mut y = vec![0.0; d.n * c_out * t_out * v];
    for n in 0..d.n {
        for o in 0..c_out {
            let ybase = (n * c_out + o) * t_out * v;
            y[ybase..ybase + t_out * v].iter_mut().for_each(|e| *e = bias[o]);
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.t * v;
                for k in 0..kernel {
                    let w = weight[(o * d.c + c) * kernel + k];
                    if w == 0.0 {
                        continue;
                    }
                    for to in 0..t_out {
                        let ti = (to * stride + k) as isize - pad as isize;
                        if ti < 0 || ti as usize >= d.t {
                            continue;
                        }
                        let src = &x[xbase + ti as usize * v..xbase + (ti as usize + 1) * v];
                        let dst = &mut y[ybase + to * v..ybase + (to + 1) * v];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn temporal_conv_backward(
    dy: &[f64],
    x: &[f64],
    d: Dims,
    weight: &[f64],
    c_out: usize,
    kernel: usize,
    stride: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let pad = (kernel - 1) / 2;
    let t_out = temporal_out_len(d.t, stride);
    let v = d.v;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    for n in 0..d.n {
        for o in 0..c_out {
            let ybase = (n * c_out + o) * t_out * v;
            let g = &dy[ybase..ybase + t_out * v];
            dbias[o] += g.iter().sum::<f64>();
            for c in 0..d.c {
                let xbase = (n * d.c + c) * d.t * v;
                for k in 0..kernel {
                    let widx = (o * d.c + c) * kernel + k;
                    let w = weight[widx];
                    let mut acc = 0.0;
                    for to in 0..t_out {
                        let ti = (to * stride + k) as isize - pad as isize;
                        if ti < 0 || ti as usize >= d.t {
                            continue;
                        }
                        let ti = ti as usize;
                        let gr = &g[to * v..(to + 1) * v];
                        acc += dot(gr, &x[xbase + ti * v..xbase + (ti + 1) * v]);
                        if need_dx {
                            let dst = &mut dx[xbase + ti * v..xbase + (ti + 1) * v];
                            for (a, b) in dst.iter_mut().zip(gr) {
                                *a += w * b;
                            }
                        }
                    }
                    dweight[widx] += acc;
                }
            }
        }
    }
    need_dx.then_some(dx)
}

/// 1x1 convolution with temporal stride (residual projection).
/// `weight` is `[C_out, C_in]`.
pub fn pointwise_forward(
    x: &[f64],
    d: Dims,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    stride: usize,
) -> Vec<f64> {
    let t_out = temporal_out_len(d.t, stride);
    let v = d.v;
    let mut y = vec![0.0; d.n * c_out * t_out * v];
    for n in 0..d.n {
        for o in 0..c_out {
            let ybase = (n * c_out + o) * t_out * v;
            y[ybase..ybase + t_out * v].iter_mut().for_each(|e| *e = bias[o]);
            for c in 0..d.c {
                let w = weight[o * d.c + c];
                let xbase = (n * d.c + c) * d.t * v;
                for to in 0..t_out {
                    let ti = to * stride;
                    let src = &x[xbase + ti * v..xbase + (ti + 1) * v];
                    let dst = &mut y[ybase + to * v..ybase + (to + 1) * v];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += w * b;
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn pointwise_backward(
    dy: &[f64],
    x: &[f64],
    d: Dims,
    weight: &[f64],
    c_out: usize,
    stride: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Vec<f64>> {
    let t_out = temporal_out_len(d.t, stride);
    let v = d.v;
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    for n in 0..d.n {
        for o in 0..c_out {
            let ybase = (n * c_out + o) * t_out * v;
            let g = &dy[ybase..ybase + t_out * v];
            dbias[o] += g.iter().sum::<f64>();
            for c in 0..d.c {
                let w = weight[o * d.c + c];
                let xbase = (n * d.c + c) * d.t * v;
                let mut acc = 0.0;
                for to in 0..t_out {
                    let ti = to * stride;
                    let gr = &g[to * v..(to + 1) * v];
                    acc += dot(gr, &x[xbase + ti * v..xbase + (ti + 1) * v]);
                    if need_dx {
                        let dst = &mut dx[xbase + ti * v..xbase + (ti + 1) * v];
                        for (a, b) in dst.iter_mut().zip(gr) {
                            *a += w * b;
                        }
                    }
                }
                dweight[o * d.c + c] += acc;
            }
        }
    }
    need_dx.then_some(dx)
}

/// Which elements share batch-norm statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnLayout {
    /// One channel per `c`, statistics over `(N, T, V)`.
    Channel,
    /// One channel per `(c, v)` pair, statistics over `(N, T)`.
    ChannelJoint,
}

impl BnLayout {
    pub fn channels(self, d: Dims) -> usize {
        match self {
            BnLayout::Channel => d.c,
            BnLayout::ChannelJoint => d.c * d.v,
        }
    }

    #[inline]
    fn channel(self, c: usize, v: usize, joints: usize) -> usize {
        match self {
            BnLayout::Channel => c,
            BnLayout::ChannelJoint => c * joints + v,
        }
    }
}

pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

pub struct BnParams<'a> {
    pub gamma: &'a [f64],
    pub beta: &'a [f64],
    pub running_mean: &'a [f64],
    pub running_var: &'a [f64],
}

/// Batch-norm forward. With `batch_stats` the batch mean/variance are used and
/// returned so the caller can update running statistics; otherwise running
/// statistics are used.
pub fn batch_norm_forward(
    x: &[f64],
    d: Dims,
    layout: BnLayout,
    p: &BnParams<'_>,
    batch_stats: bool,
) -> (Vec<f64>, BnCache, Option<(Vec<f64>, Vec<f64>)>) {
    let ch = layout.channels(d);
    let (mean, var, stats) = if batch_stats {
        let count = (d.len() / ch) as f64;
        let mut mean = vec![0.0; ch];
        for_each_index(d, |i, c, v| mean[layout.channel(c, v, d.v)] += x[i]);
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; ch];
        for_each_index(d, |i, c, v| {
            let k = layout.channel(c, v, d.v);
            var[k] += (x[i] - mean[k]).powi(2);
        });
        var.iter_mut().for_each(|s| *s /= count);
        let unbiased: Vec<f64> = if count > 1.0 {
            var.iter().map(|s| s * count / (count - 1.0)).collect()
        } else {
            var.clone()
        };
        (mean.clone(), var, Some((mean, unbiased)))
    } else {
        (p.running_mean.to_vec(), p.running_var.to_vec(), None)
    };
    let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + BN_EPSILON).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for_each_index(d, |i, c, v| {
        let k = layout.channel(c, v, d.v);
        let h = (x[i] - mean[k]) * inv_std[k];
        xhat[i] = h;
        y[i] = p.gamma[k] * h + p.beta[k];
    });
    (
        y,
        BnCache {
            xhat,
            inv_std,
            batch_stats,
        },
        stats,
    )
}

pub fn batch_norm_backward(
    dy: &[f64],
    d: Dims,
    layout: BnLayout,
    gamma: &[f64],
    cache: &BnCache,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let ch = layout.channels(d);
    let mut sum_dy = vec![0.0; ch];
    let mut sum_dy_xhat = vec![0.0; ch];
    for_each_index(d, |i, c, v| {
        let k = layout.channel(c, v, d.v);
        sum_dy[k] += dy[i];
        sum_dy_xhat[k] += dy[i] * cache.xhat[i];
    });
    for k in 0..ch {
        dgamma[k] += sum_dy_xhat[k];
        dbeta[k] += sum_dy[k];
    }
    let mut dx = vec![0.0; dy.len()];
    if cache.batch_stats {
        let count = (d.len() / ch) as f64;
        for_each_index(d, |i, c, v| {
            let k = layout.channel(c, v, d.v);
            dx[i] = gamma[k] * cache.inv_std[k] / count
                * (count * dy[i] - sum_dy[k] - cache.xhat[i] * sum_dy_xhat[k]);
        });
    } else {
        for_each_index(d, |i, c, v| {
            let k = layout.channel(c, v, d.v);
            dx[i] = dy[i] * gamma[k] * cache.inv_std[k];
        });
    }
    dx
}

#[inline]
fn for_each_index(d: Dims, mut f: impl FnMut(usize, usize, usize)) {
    let mut i = 0;
    for _ in 0..d.n {
        for c in 0..d.c {
            for _ in 0..d.t {
                for v in 0..d.v {
                    f(i, c, v);
                    i += 1;
                }
            }
        }
    }
}

pub fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the forward output was clamped.
pub fn relu_backward(dy: &mut [f64], out: &[f64]) {
    for (g, y) in dy.iter_mut().zip(out) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Mean over `(T, V)`: `[N, C, T, V] -> [N, C]`.
pub fn global_average_pool(x: &[f64], d: Dims) -> Vec<f64> {
    let plane = d.t * d.v;
    x.chunks_exact(plane)
        .map(|p| p.iter().sum::<f64>() / plane as f64)
        .collect()
}

pub fn global_average_pool_backward(dy: &[f64], d: Dims) -> Vec<f64> {
    let plane = d.t * d.v;
    let mut dx = Vec::with_capacity(d.len());
    for g in dy {
        let share = g / plane as f64;
        dx.extend(std::iter::repeat_n(share, plane));
    }
    dx
}

/// Dense layer `y = x Wᵀ + b` with `W` as `[out, in]`, `x` as `[N, in]`.
pub fn dense_forward(x: &[f64], n: usize, d_in: usize, weight: &[f64], bias: &[f64], d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * d_out];
    for i in 0..n {
        let row = &x[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            y[i * d_out + o] = bias[o] + dot(&weight[o * d_in..(o + 1) * d_in], row);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn dense_backward(
    dy: &[f64],
    x: &[f64],
    n: usize,
    d_in: usize,
    weight: &[f64],
    d_out: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; n * d_in];
    for i in 0..n {
        let row = &x[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            let g = dy[i * d_out + o];
            dbias[o] += g;
            let w = &weight[o * d_in..(o + 1) * d_in];
            let dw = &mut dweight[o * d_in..(o + 1) * d_in];
            let dxr = &mut dx[i * d_in..(i + 1) * d_in];
            for k in 0..d_in {
                dw[k] += g * row[k];
                dxr[k] += g * w[k];
            }
        }
    }
    dx
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / s));
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let probs = softmax(logits, k);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        loss -= probs[i * k + y].max(f64::MIN_POSITIVE).ln();
        grad[i * k + y] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n as f64);
    (loss / n as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn pseudo(n: usize, salt: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * 0.7 + salt).sin() * 1.3).collect()
    }

    #[test]
    fn temporal_conv_grad_matches_numeric() {
        let d = Dims::new(2, 2, 7, 3);
        let (c_out, k, s) = (3, 3, 2);
        let x = pseudo(d.len(), 0.1);
        let w = pseudo(c_out * d.c * k, 0.5);
        let b = pseudo(c_out, 0.9);
        let t_out = temporal_out_len(d.t, s);
        let r = pseudo(d.n * c_out * t_out * d.v, 1.7);
        let loss = |x: &[f64], w: &[f64]| dot(&temporal_conv_forward(x, d, w, &b, c_out, k, s), &r);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let dx = temporal_conv_backward(&r, &x, d, &w, c_out, k, s, &mut dw, &mut db, true).unwrap();
        let ndx = numeric_grad(|x| loss(x, &w), &x);
        let ndw = numeric_grad(|w| loss(&x, w), &w);
        for (a, e) in dx.iter().zip(&ndx).chain(dw.iter().zip(&ndw)) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }

    #[test]
    fn batch_norm_grad_matches_numeric() {
        let d = Dims::new(3, 2, 2, 2);
        let x = pseudo(d.len(), 0.3);
        for layout in [BnLayout::Channel, BnLayout::ChannelJoint] {
            let ch = layout.channels(d);
            let gamma = pseudo(ch, 2.0);
            let beta = pseudo(ch, 3.0);
            let rm = vec![0.1; ch];
            let rv = vec![1.5; ch];
            let r = pseudo(d.len(), 4.0);
            for batch_stats in [true, false] {
                let f = |x: &[f64]| {
                    let p = BnParams {
                        gamma: &gamma,
                        beta: &beta,
                        running_mean: &rm,
                        running_var: &rv,
                    };
                    dot(&batch_norm_forward(x, d, layout, &p, batch_stats).0, &r)
                };
                let p = BnParams {
                    gamma: &gamma,
                    beta: &beta,
                    running_mean: &rm,
                    running_var: &rv,
                };
                let (_, cache, _) = batch_norm_forward(&x, d, layout, &p, batch_stats);
                let mut dg = vec![0.0; ch];
                let mut dbt = vec![0.0; ch];
                let dx = batch_norm_backward(&r, d, layout, &gamma, &cache, &mut dg, &mut dbt);
                for (a, e) in dx.iter().zip(numeric_grad(f, &x)) {
                    assert!((a - e).abs() < 1e-5, "{layout:?} {batch_stats}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.0; 4], &[0, 1], 2);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad, vec![-0.25, 0.25, 0.25, -0.25]);
    }
}
