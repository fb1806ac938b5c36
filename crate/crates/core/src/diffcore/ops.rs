//! Fused network operations with hand-written backward passes.

use std::rc::Rc;

use super::tape::{log_sum_exp, sigmoid, softmax_in_place, Var};
use super::tensor::{gemm, Tensor};

/// Spatial sizes of the per-sample feature maps packed into one
/// `[sum(h*w), channels]` matrix, channels last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapLayout {
    dims: Vec<(usize, usize)>,
}

impl MapLayout {
    pub fn new(dims: Vec<(usize, usize)>) -> Self {
        Self { dims }
    }

    pub fn dims(&self) -> &[(usize, usize)] {
        &self.dims
    }

    pub fn positions(&self) -> usize {
        self.dims.iter().map(|(h, w)| h * w).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.dims.iter().map(|(h, w)| h * w).collect()
    }

    /// Layout after a 2x2 pool with floor division.
    pub fn pooled(&self) -> Self {
        Self { dims: self.dims.iter().map(|&(h, w)| (h / 2, w / 2)).collect() }
    }
}

/// Ragged self/cross attention description: one entry per sample.
#[derive(Clone, Debug)]
pub struct AttentionSpec {
    /// `(query_offset, query_len, key_offset, key_len)` rows per sample.
    pub segments: Vec<(usize, usize, usize, usize)>,
    /// Per key row; `false` rows can never be attended to.
    pub key_mask: Option<Vec<bool>>,
    /// Query `i` may only see keys `j <= i` within its segment.
    pub causal: bool,
    pub heads: usize,
}

impl AttentionSpec {
    /// Uniform batch: `batch` samples of `q_len` queries over `k_len` keys.
    pub fn uniform(batch: usize, q_len: usize, k_len: usize, heads: usize) -> Self {
        let segments = (0..batch).map(|b| (b * q_len, q_len, b * k_len, k_len)).collect();
        Self { segments, key_mask: None, causal: false, heads }
    }

    pub fn with_key_mask(mut self, mask: Vec<bool>) -> Self {
        self.key_mask = Some(mask);
        self
    }

    pub fn causal(mut self) -> Self {
        self.causal = true;
        self
    }

    fn allowed(&self, i: usize, koff: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        self.key_mask.as_ref().is_none_or(|m| m[koff + j])
    }
}

impl<'t> Var<'t> {
    /// 3x3 convolution, stride 1, zero padding 1, over a ragged batch.
    ///
    /// `weight` is `[9*cin, cout]` with row index `(ky*3 + kx)*cin + ci`.
    pub fn conv3x3(self, weight: Var<'t>, bias: Var<'t>, layout: &MapLayout) -> Var<'t> {
        let x = self.value();
        let w = weight.value();
        let cin = x.cols();
        let cout = w.cols();
        assert_eq!(x.rows(), layout.positions(), "conv3x3: input rows vs layout");
        assert_eq!(w.rows(), 9 * cin, "conv3x3: weight rows");
        assert_eq!(bias.value().len(), cout, "conv3x3: bias length");
        let p = x.rows();
        let cols = Rc::new(im2col(x.data(), cin, layout));
        let mut out = vec![0.0; p * cout];
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bias.value().data());
        }
        gemm(p, 9 * cin, cout, &cols, false, w.data(), false, &mut out, 1.0);
        let layout = layout.clone();
        self.tape.push_op("conv3x3", Tensor::from_parts(vec![p, cout], out), &[self.id, weight.id, bias.id], move |b| {
            let g = b.grad.data();
            let dx = b.needs[0].then(|| {
                let mut dcols = vec![0.0; p * 9 * cin];
                gemm(p, cout, 9 * cin, g, false, b.inputs[1].data(), true, &mut dcols, 0.0);
                Tensor::from_parts(vec![p, cin], col2im(&dcols, cin, &layout))
            });
            let dw = b.needs[1].then(|| {
                let mut dw = vec![0.0; 9 * cin * cout];
                gemm(9 * cin, p, cout, &cols, true, g, false, &mut dw, 0.0);
                Tensor::from_parts(vec![9 * cin, cout], dw)
            });
            let db = b.needs[2].then(|| Tensor::from_parts(b.inputs[2].shape().to_vec(), column_sums(g, cout)));
            vec![dx, dw, db]
        })
    }

    /// 2x2 max pooling, stride 2, over a ragged batch. Ties go to the first
    /// element in row-major window order and mark the tape as non-differentiable.
    pub fn max_pool2x2(self, layout: &MapLayout) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        assert_eq!(x.rows(), layout.positions(), "max_pool2x2: input rows vs layout");
        let pooled = layout.pooled();
        let mut out = Vec::with_capacity(pooled.positions() * c);
        let mut argmax = Vec::with_capacity(pooled.positions() * c);
        let mut tie = false;
        let mut base = 0;
        for &(h, w) in layout.dims() {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let window = [
                        base + (2 * oy) * w + 2 * ox,
                        base + (2 * oy) * w + 2 * ox + 1,
                        base + (2 * oy + 1) * w + 2 * ox,
                        base + (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    for ch in 0..c {
                        let mut best = window[0];
                        let mut best_v = x.data()[best * c + ch];
                        for &pos in &window[1..] {
                            let v = x.data()[pos * c + ch];
                            if v > best_v {
                                best = pos;
                                best_v = v;
                            } else if v == best_v {
                                tie = true;
                            }
                        }
                        out.push(best_v);
                        argmax.push(best * c + ch);
                    }
                }
            }
            base += h * w;
        }
        if tie {
            self.tape.mark_kink();
        }
        let rows = pooled.positions();
        self.tape.push_op("max_pool2x2", Tensor::from_parts(vec![rows, c], out), &[self.id], move |b| {
            let mut d = vec![0.0; b.inputs[0].len()];
            for (&src, g) in argmax.iter().zip(b.grad.data()) {
                d[src] += g;
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Mean over consecutive row groups of the given sizes: `[sum(sizes), c] -> [groups, c]`.
    pub fn segment_mean(self, sizes: &[usize]) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        assert_eq!(sizes.iter().sum::<usize>(), x.rows(), "segment_mean: sizes vs rows");
        assert!(sizes.iter().all(|&s| s > 0), "segment_mean: empty segment");
        let mut out = vec![0.0; sizes.len() * c];
        let mut r = 0;
        for (s, &n) in sizes.iter().enumerate() {
            let acc = &mut out[s * c..(s + 1) * c];
            for row in x.data()[r * c..(r + n) * c].chunks(c) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n as f64);
            r += n;
        }
        let sizes = sizes.to_vec();
        self.tape.push_op("segment_mean", Tensor::from_parts(vec![sizes.len(), c], out), &[self.id], move |b| {
            let mut d = Vec::with_capacity(b.inputs[0].len());
            for (s, &n) in sizes.iter().enumerate() {
                let g = &b.grad.data()[s * c..(s + 1) * c];
                for _ in 0..n {
                    d.extend(g.iter().map(|v| v / n as f64));
                }
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Max over consecutive row groups; ties resolved to the first row.
    pub fn segment_max(self, sizes: &[usize]) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        assert_eq!(sizes.iter().sum::<usize>(), x.rows(), "segment_max: sizes vs rows");
        let mut out = Vec::with_capacity(sizes.len() * c);
        let mut argmax = Vec::with_capacity(sizes.len() * c);
        let mut tie = false;
        let mut r = 0;
        for &n in sizes {
            assert!(n > 0, "segment_max: empty segment");
            for ch in 0..c {
                let mut best = r;
                for row in r + 1..r + n {
                    let (v, bv) = (x.data()[row * c + ch], x.data()[best * c + ch]);
                    if v > bv {
                        best = row;
                    } else if v == bv {
                        tie = true;
                    }
                }
                out.push(x.data()[best * c + ch]);
                argmax.push(best * c + ch);
            }
            r += n;
        }
        if tie {
            self.tape.mark_kink();
        }
        self.tape.push_op("segment_max", Tensor::from_parts(vec![sizes.len(), c], out), &[self.id], move |b| {
            let mut d = vec![0.0; b.inputs[0].len()];
            for (&src, g) in argmax.iter().zip(b.grad.data()) {
                d[src] += g;
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` of length `cols`.
    pub fn layer_norm(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Var<'t> {
        let x = self.value();
        let n = x.cols();
        let (gv, bv) = (gamma.value(), beta.value());
        assert_eq!(gv.len(), n, "layer_norm: gamma length");
        assert_eq!(bv.len(), n, "layer_norm: beta length");
        let mut xhat = x.data().to_vec();
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in xhat.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let out: Vec<f64> = xhat
            .chunks(n)
            .flat_map(|row| row.iter().zip(gv.data()).zip(bv.data()).map(|((h, g), b)| h * g + b))
            .collect();
        let out = Tensor::from_parts(x.shape().to_vec(), out);
        self.tape.push_op("layer_norm", out, &[self.id, gamma.id, beta.id], move |b| {
            let g = b.grad.data();
            let gamma = b.inputs[1].data();
            let dx = b.needs[0].then(|| {
                let mut dx = Vec::with_capacity(g.len());
                for ((grow, hrow), is) in g.chunks(n).zip(xhat.chunks(n)).zip(&inv_std) {
                    let dh: Vec<f64> = grow.iter().zip(gamma).map(|(g, w)| g * w).collect();
                    let mean_dh = dh.iter().sum::<f64>() / n as f64;
                    let mean_dhh = dh.iter().zip(hrow).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                    dx.extend(dh.iter().zip(hrow).map(|(d, h)| is * (d - mean_dh - h * mean_dhh)));
                }
                Tensor::from_parts(b.inputs[0].shape().to_vec(), dx)
            });
            let (dgamma, dbeta) = affine_grads(g, &xhat, n);
            vec![
                dx,
                b.needs[1].then(|| Tensor::from_parts(b.inputs[1].shape().to_vec(), dgamma)),
                b.needs[2].then(|| Tensor::from_parts(b.inputs[2].shape().to_vec(), dbeta)),
            ]
        })
    }

    /// Batch normalization over rows with batch statistics.
    ///
    /// Returns the output together with the batch mean and unbiased variance
    /// per channel for running-statistics updates.
    pub fn batch_norm_train(self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> (Var<'t>, Vec<f64>, Vec<f64>) {
        let x = self.value();
        let (p, c) = (x.rows(), x.cols());
        let mut mean = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= p as f64);
        let mut var = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let unbiased: Vec<f64> = var.iter().map(|s| if p > 1 { s / (p - 1) as f64 } else { 0.0 }).collect();
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s / p as f64 + eps).sqrt()).collect();
        let (gv, bv) = (gamma.value(), beta.value());
        assert_eq!(gv.len(), c, "batch_norm: gamma length");
        let mut xhat = Vec::with_capacity(p * c);
        for row in x.data().chunks(c) {
            xhat.extend(row.iter().zip(&mean).zip(&inv_std).map(|((v, m), is)| (v - m) * is));
        }
        let out: Vec<f64> = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(gv.data()).zip(bv.data()).map(|((h, g), b)| h * g + b))
            .collect();
        let var_out = self.tape.push_op(
            "batch_norm",
            Tensor::from_parts(vec![p, c], out),
            &[self.id, gamma.id, beta.id],
            move |b| {
                let g = b.grad.data();
                let gamma = b.inputs[1].data();
                let (dgamma, dbeta) = affine_grads(g, &xhat, c);
                let dx = b.needs[0].then(|| {
                    // per channel: dx = gamma*is/p * (p*g - sum(g) - xhat*sum(g*xhat))
                    let mut dx = Vec::with_capacity(p * c);
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let k = gamma[ch] * inv_std[ch] / p as f64;
                            dx.push(k * (p as f64 * grow[ch] - dbeta[ch] - hrow[ch] * dgamma[ch]));
                        }
                    }
                    Tensor::from_parts(vec![p, c], dx)
                });
                vec![
                    dx,
                    b.needs[1].then(|| Tensor::from_parts(b.inputs[1].shape().to_vec(), dgamma.clone())),
                    b.needs[2].then(|| Tensor::from_parts(b.inputs[2].shape().to_vec(), dbeta.clone())),
                ]
            },
        );
        (var_out, mean, unbiased)
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(self, gamma: Var<'t>, beta: Var<'t>, mean: &[f64], var: &[f64], eps: f64) -> Var<'t> {
        let x = self.value();
        let c = x.cols();
        assert_eq!(mean.len(), c, "batch_norm_eval: running mean length");
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(x.len());
        for row in x.data().chunks(c) {
            xhat.extend(row.iter().zip(mean).zip(&inv_std).map(|((v, m), is)| (v - m) * is));
        }
        let (gv, bv) = (gamma.value(), beta.value());
        let out: Vec<f64> = xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(gv.data()).zip(bv.data()).map(|((h, g), b)| h * g + b))
            .collect();
        self.tape.push_op("batch_norm_eval", Tensor::from_parts(x.shape().to_vec(), out), &[self.id, gamma.id, beta.id], move |b| {
            let g = b.grad.data();
            let gamma = b.inputs[1].data();
            let inv_std = &inv_std;
            let dx = b.needs[0].then(|| {
                let d = g.chunks(c).flat_map(|row| (0..c).map(move |ch| row[ch] * gamma[ch] * inv_std[ch])).collect();
                Tensor::from_parts(b.inputs[0].shape().to_vec(), d)
            });
            let (dgamma, dbeta) = affine_grads(g, &xhat, c);
            vec![
                dx,
                b.needs[1].then(|| Tensor::from_parts(b.inputs[1].shape().to_vec(), dgamma)),
                b.needs[2].then(|| Tensor::from_parts(b.inputs[2].shape().to_vec(), dbeta)),
            ]
        })
    }

    /// Scaled dot-product attention over ragged segments with `heads` heads.
    ///
    /// `self` holds queries, `k` and `v` keys and values; all have width `d`
    /// split evenly across heads.
    pub fn attention(self, k: Var<'t>, v: Var<'t>, spec: &AttentionSpec) -> Var<'t> {
        let (q, kk, vv) = (self.value(), k.value(), v.value());
        let d = q.cols();
        assert_eq!(kk.cols(), d, "attention: key width");
        assert_eq!(vv.cols(), d, "attention: value width");
        assert_eq!(kk.rows(), vv.rows(), "attention: keys vs values");
        assert!(spec.heads > 0 && d % spec.heads == 0, "attention: width {d} not divisible by heads {}", spec.heads);
        let dh = d / spec.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; q.rows() * d];
        // probs[segment][head] is a q_len x k_len row-major block
        let mut probs: Vec<Vec<f64>> = Vec::with_capacity(spec.segments.len() * spec.heads);
        for &(qo, ql, ko, kl) in &spec.segments {
            for h in 0..spec.heads {
                let mut p = vec![0.0; ql * kl];
                for i in 0..ql {
                    let qrow = &q.row(qo + i)[h * dh..(h + 1) * dh];
                    let prow = &mut p[i * kl..(i + 1) * kl];
                    let mut any = false;
                    for j in 0..kl {
                        if spec.allowed(i, ko, j) {
                            let krow = &kk.row(ko + j)[h * dh..(h + 1) * dh];
                            prow[j] = scale * dot(qrow, krow);
                            any = true;
                        } else {
                            prow[j] = f64::NEG_INFINITY;
                        }
                    }
                    if any {
                        softmax_in_place(prow);
                    } else {
                        prow.iter_mut().for_each(|x| *x = 0.0);
                    }
                    let orow = &mut out[(qo + i) * d + h * dh..(qo + i) * d + (h + 1) * dh];
                    for (j, &pj) in prow.iter().enumerate() {
                        if pj != 0.0 {
                            let vrow = &vv.row(ko + j)[h * dh..(h + 1) * dh];
                            for (o, x) in orow.iter_mut().zip(vrow) {
                                *o += pj * x;
                            }
                        }
                    }
                }
                probs.push(p);
            }
        }
        let spec = spec.clone();
        let out = Tensor::from_parts(vec![q.rows(), d], out);
        self.tape.push_op("attention", out, &[self.id, k.id, v.id], move |b| {
            let (q, kk, vv) = (&b.inputs[0], &b.inputs[1], &b.inputs[2]);
            let g = b.grad.data();
            let mut dq = vec![0.0; q.len()];
            let mut dk = vec![0.0; kk.len()];
            let mut dv = vec![0.0; vv.len()];
            let mut blocks = probs.iter();
            for &(qo, ql, ko, kl) in &spec.segments {
                for h in 0..spec.heads {
                    let p = blocks.next().expect("attention block");
                    let cols = h * dh..(h + 1) * dh;
                    let mut dp = vec![0.0; kl];
                    for i in 0..ql {
                        let grow = &g[(qo + i) * d + cols.start..(qo + i) * d + cols.end];
                        let prow = &p[i * kl..(i + 1) * kl];
                        let mut weighted = 0.0;
                        for j in 0..kl {
                            if prow[j] == 0.0 {
                                dp[j] = 0.0;
                                continue;
                            }
                            let vrow = &vv.row(ko + j)[cols.clone()];
                            dp[j] = dot(grow, vrow);
                            weighted += prow[j] * dp[j];
                            let dvrow = &mut dv[(ko + j) * d + cols.start..(ko + j) * d + cols.end];
                            for (x, gv) in dvrow.iter_mut().zip(grow) {
                                *x += prow[j] * gv;
                            }
                        }
                        let qrow = &q.row(qo + i)[cols.clone()];
                        for j in 0..kl {
                            if prow[j] == 0.0 {
                                continue;
                            }
                            let ds = prow[j] * (dp[j] - weighted) * scale;
                            let krow = &kk.row(ko + j)[cols.clone()];
                            let dqrow = &mut dq[(qo + i) * d + cols.start..(qo + i) * d + cols.end];
                            for (x, kv) in dqrow.iter_mut().zip(krow) {
                                *x += ds * kv;
                            }
                            let dkrow = &mut dk[(ko + j) * d + cols.start..(ko + j) * d + cols.end];
                            for (x, qv) in dkrow.iter_mut().zip(qrow) {
                                *x += ds * qv;
                            }
                        }
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(q.shape().to_vec(), dq)),
                Some(Tensor::from_parts(kk.shape().to_vec(), dk)),
                Some(Tensor::from_parts(vv.shape().to_vec(), dv)),
            ]
        })
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize_rows(self) -> Var<'t> {
        let x = self.value();
        let n = x.cols();
        let norms: Vec<f64> = x.data().chunks(n).map(|r| dot(r, r).sqrt()).collect();
        let out: Vec<f64> = x.data().chunks(n).zip(&norms).flat_map(|(r, &nm)| r.iter().map(move |v| v / nm)).collect();
        self.tape.push_op("l2_normalize", Tensor::from_parts(x.shape().to_vec(), out), &[self.id], move |b| {
            let mut d = Vec::with_capacity(b.grad.len());
            for ((g, y), nm) in b.grad.data().chunks(n).zip(b.output.data().chunks(n)).zip(&norms) {
                let gy = dot(g, y);
                d.extend(g.iter().zip(y).map(|(g, y)| (g - y * gy) / nm));
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Mean token-level cross entropy of row logits against class targets;
    /// `None` targets are ignored.
    pub fn cross_entropy(self, targets: &[Option<usize>]) -> Var<'t> {
        let x = self.value();
        let n = x.cols();
        assert_eq!(targets.len(), x.rows(), "cross_entropy: targets vs rows");
        let count = targets.iter().flatten().count();
        assert!(count > 0, "cross_entropy: no targets");
        let mut loss = 0.0;
        for (row, t) in x.data().chunks(n).zip(targets) {
            if let Some(t) = *t {
                assert!(t < n, "cross_entropy: target {t} out of {n} classes");
                loss += log_sum_exp(row) - row[t];
            }
        }
        let targets = targets.to_vec();
        self.tape.push_op("cross_entropy", Tensor::scalar(loss / count as f64), &[self.id], move |b| {
            let scale = b.grad.data()[0] / count as f64;
            let mut d = vec![0.0; b.inputs[0].len()];
            for ((drow, row), t) in d.chunks_mut(n).zip(b.inputs[0].data().chunks(n)).zip(&targets) {
                if let Some(t) = *t {
                    drow.copy_from_slice(row);
                    softmax_in_place(drow);
                    drow[t] -= 1.0;
                    drow.iter_mut().for_each(|v| *v *= scale);
                }
            }
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Mean elementwise binary cross entropy of logits against `{0,1}` targets.
    pub fn bce_with_logits(self, targets: &Tensor) -> Var<'t> {
        let x = self.value();
        assert_eq!(x.shape(), targets.shape(), "bce_with_logits: targets shape");
        let n = x.len() as f64;
        // log(1 + e^z) - y z, computed stably
        let loss: f64 = x
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let targets = targets.clone();
        self.tape.push_op("bce_with_logits", Tensor::scalar(loss / n), &[self.id], move |b| {
            let scale = b.grad.data()[0] / n;
            let d = b.inputs[0].data().iter().zip(targets.data()).map(|(&z, &y)| scale * (sigmoid(z) - y)).collect();
            vec![Some(Tensor::from_parts(b.inputs[0].shape().to_vec(), d))]
        })
    }

    /// Symmetric InfoNCE over an `N x N` logit matrix whose diagonal holds
    /// the matched pairs: `(1/N) * sum_i (L_i^{row} + L_i^{col})`.
    pub fn info_nce(self) -> Var<'t> {
        let z = self.value();
        let n = z.rows();
        assert_eq!(z.cols(), n, "info_nce: logits must be square, got {:?}", z.shape());
        let zt = super::tape::transpose(z.data(), n, n);
        let mut loss = 0.0;
        for i in 0..n {
            loss += log_sum_exp(z.row(i)) - z.at(i, i);
            loss += log_sum_exp(&zt[i * n..(i + 1) * n]) - z.at(i, i);
        }
        self.tape.push_op("info_nce", Tensor::scalar(loss / n as f64), &[self.id], move |b| {
            let z = &b.inputs[0];
            let scale = b.grad.data()[0] / n as f64;
            let mut d = z.data().to_vec();
            for row in d.chunks_mut(n) {
                softmax_in_place(row);
            }
            let mut col = super::tape::transpose(z.data(), n, n);
            for c in col.chunks_mut(n) {
                softmax_in_place(c);
            }
            for i in 0..n {
                for j in 0..n {
                    d[i * n + j] += col[j * n + i];
                }
                d[i * n + i] -= 2.0;
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(Tensor::from_parts(vec![n, n], d))]
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn column_sums(g: &[f64], c: usize) -> Vec<f64> {
    let mut acc = vec![0.0; c];
    for row in g.chunks(c) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc
}

fn affine_grads(g: &[f64], xhat: &[f64], c: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += grow[ch] * hrow[ch];
            dbeta[ch] += grow[ch];
        }
    }
    (dgamma, dbeta)
}

fn im2col(x: &[f64], cin: usize, layout: &MapLayout) -> Vec<f64> {
    let mut cols = vec![0.0; layout.positions() * 9 * cin];
    let mut base = 0;
    for &(h, w) in layout.dims() {
        for y in 0..h {
            for xx in 0..w {
                let dst_row = (base + y * w + xx) * 9 * cin;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = (base + sy as usize * w + sx as usize) * cin;
                        let dst = dst_row + (ky * 3 + kx) * cin;
                        cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
        base += h * w;
    }
    cols
}

fn col2im(dcols: &[f64], cin: usize, layout: &MapLayout) -> Vec<f64> {
    let mut dx = vec![0.0; layout.positions() * cin];
    let mut base = 0;
    for &(h, w) in layout.dims() {
        for y in 0..h {
            for xx in 0..w {
                let src_row = (base + y * w + xx) * 9 * cin;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = (base + sy as usize * w + sx as usize) * cin;
                        let src = src_row + (ky * 3 + kx) * cin;
                        for (d, s) in dx[dst..dst + cin].iter_mut().zip(&dcols[src..src + cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
        base += h * w;
    }
    dx
}
