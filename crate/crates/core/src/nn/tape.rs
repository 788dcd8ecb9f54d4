//! Reverse-mode differentiation over a linear tape.
//!
//! Each operation appends a node holding its output and enough context to
//! push output gradients back onto its inputs. `backward` walks the tape in
//! reverse once. Parameters enter as leaves copied from a [`ParamStore`]; their
//! gradients are folded back with [`Tape::accumulate_param_grads`].

use super::{NnError, ParamId, ParamStore, Tensor3};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Add(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    /// Output holds the normalized activations.
    BatchNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Normalize {
        x: Var,
        scale: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Modulate {
        x: Var,
        gb: Var,
    },
    ConcatToken {
        x: Var,
        token: Var,
    },
    GlobalAvgPool(Var),
    Flatten(Var),
    Sum(Var),
    GroupMean {
        x: Var,
        group: usize,
    },
    SelectStep {
        x: Var,
        group: usize,
        step: usize,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        sample_w: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor3,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-channel batch statistics from a training-mode normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (divide by `N·L`) variance.
    pub var: Vec<f64>,
}

fn shape_err(msg: String) -> NnError {
    NnError::Shape(msg)
}

/// `C = alpha·A·B + beta·C` for row/column-strided `f64` matrices, where `A`
/// is `m×k`, `B` is `k×n` and `C` is `m×n`. Strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every index the kernel touches in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Unfolds one sample `(Cin, Lin)` into `(Cin·K, Lout)` columns. Only taps
/// inside the input are written; `cols` must start zeroed, and reusing it for
/// another sample of the same shape keeps the padding entries zero.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], cin: usize, lin: usize, k: usize, stride: usize, pad: usize, lout: usize, cols: &mut [f64]) {
    for ci in 0..cin {
        let xrow = &x[ci * lin..][..lin];
        for kk in 0..k {
            let (lo0, lo1) = valid_range(kk, pad, stride, lin, lout);
            let crow = &mut cols[(ci * k + kk) * lout..][..lout];
            for lo in lo0..lo1 {
                crow[lo] = xrow[lo * stride + kk - pad];
            }
        }
    }
}

/// Adjoint of [`im2col`]: adds the column gradients back onto `(Cin, Lin)`.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], cin: usize, lin: usize, k: usize, stride: usize, pad: usize, lout: usize, dx: &mut [f64]) {
    for ci in 0..cin {
        let drow = &mut dx[ci * lin..][..lin];
        for kk in 0..k {
            let (lo0, lo1) = valid_range(kk, pad, stride, lin, lout);
            let crow = &cols[(ci * k + kk) * lout..][..lout];
            for lo in lo0..lo1 {
                drow[lo * stride + kk - pad] += crow[lo];
            }
        }
    }
}

/// Output positions `lo` whose tap `k` lands inside the input.
#[inline]
fn valid_range(k: usize, pad: usize, stride: usize, lin: usize, lout: usize) -> (usize, usize) {
    let lo0 = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    if lin + pad < k + 1 {
        return (0, 0);
    }
    let lo1 = ((lin - 1 + pad - k) / stride + 1).min(lout);
    (lo0.min(lo1), lo1)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor3, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor3 {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v` (empty if none flowed).
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.grad
    }

    /// A constant input; no gradient is propagated into it.
    pub fn input(&mut self, t: Tensor3) -> Var {
        self.push(t, Op::Input, false)
    }

    /// A constant input whose gradient is tracked (for input-gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor3) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut t = store.get(id).clone();
        t.grad = Vec::new();
        self.push(t, Op::Param(id), true)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, din, xl] = xv.shape();
        let [dout, wdin, wl] = wv.shape();
        if xl != 1 || wl != 1 || wdin != din {
            return Err(shape_err(format!("linear: x {:?} vs w {:?}", xv.shape(), wv.shape())));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [1, dout, 1] {
                return Err(shape_err(format!("linear bias {:?}", self.value(b).shape())));
            }
        }
        let mut out = Tensor3::zeros(n, dout, 1);
        if let Some(b) = b {
            let bv = &self.value(b).values;
            for row in out.values.chunks_exact_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        // out (N×Dout) += x (N×Din) · wᵀ (Din×Dout)
        gemm(
            n,
            din,
            dout,
            &xv.values,
            (din, 1),
            &wv.values,
            (1, din),
            1.0,
            &mut out.values,
            (dout, 1),
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// 1D convolution (cross-correlation) with zero padding; weight `(Cout, Cin, K)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, cin, lin] = xv.shape();
        let [cout, wcin, k] = wv.shape();
        if wcin != cin || stride == 0 || lin + 2 * pad < k {
            return Err(shape_err(format!(
                "conv1d: x {:?}, w {:?}, stride {stride}, pad {pad}",
                xv.shape(),
                wv.shape()
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [1, cout, 1] {
                return Err(shape_err(format!("conv1d bias {:?}", self.value(b).shape())));
            }
        }
        let lout = (lin + 2 * pad - k) / stride + 1;
        let mut out = Tensor3::zeros(n, cout, lout);
        if let Some(b) = b {
            let bv = &self.value(b).values;
            for (row, &bias) in out.values.chunks_exact_mut(lout).zip(bv.iter().cycle()) {
                row.fill(bias);
            }
        }
        let ck = cin * k;
        let mut cols = vec![0.0; ck * lout];
        for ni in 0..n {
            im2col(
                &xv.values[ni * cin * lin..][..cin * lin],
                cin,
                lin,
                k,
                stride,
                pad,
                lout,
                &mut cols,
            );
            let o = &mut out.values[ni * cout * lout..][..cout * lout];
            gemm(cout, ck, lout, &wv.values, (ck, 1), &cols, (lout, 1), 1.0, o, (lout, 1));
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(out, Op::Conv1d { x, w, b, stride, pad }, ng))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = self.value(x);
        let values = xv.values.iter().map(|v| f(*v)).collect();
        let [n, c, l] = xv.shape();
        let out = Tensor3::from_vec(n, c, l, values).expect("same shape");
        let ng = self.ng(x);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map_unary(
            x,
            |v| {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map_unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.map_unary(x, |v| 1.0 - v, Op::OneMinus(x))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(format!("elementwise: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let [n, c, l] = av.shape();
        let values = av.values.iter().zip(&bv.values).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor3::from_vec(n, c, l, values)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Normalizes each channel by its batch mean and biased variance over
    /// `(n, l)`: `(x − μ_c) / √(σ²_c + eps)`.
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<(Var, BatchStats), NnError> {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let m = n * l;
        if m < 2 {
            return Err(NnError::Invalid(format!(
                "batch norm in train mode needs N·L >= 2, got {m}"
            )));
        }
        let mut out = Tensor3::zeros(n, c, l);
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                s += xv.values[(ni * c + ch) * l..][..l].iter().sum::<f64>();
            }
            let mu = s / m as f64;
            let mut v = 0.0;
            for ni in 0..n {
                v += xv.values[(ni * c + ch) * l..][..l]
                    .iter()
                    .map(|x| (x - mu) * (x - mu))
                    .sum::<f64>();
            }
            let v = v / m as f64;
            let is = 1.0 / (v + eps).sqrt();
            for ni in 0..n {
                let base = (ni * c + ch) * l;
                for j in 0..l {
                    out.values[base + j] = (xv.values[base + j] - mu) * is;
                }
            }
            mean[ch] = mu;
            var[ch] = v;
            inv_std[ch] = is;
        }
        let ng = self.ng(x);
        let v = self.push(out, Op::BatchNorm { x, inv_std }, ng);
        Ok((v, BatchStats { mean, var }))
    }

    /// Normalizes with fixed per-channel statistics (inference mode).
    pub fn normalize(&mut self, x: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        if mean.len() != c || var.len() != c {
            return Err(shape_err(format!("normalize: {c} channels vs {} stats", mean.len())));
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut out = Tensor3::zeros(n, c, l);
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * l;
                for j in 0..l {
                    out.values[base + j] = (xv.values[base + j] - mean[ch]) * scale[ch];
                }
            }
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::Normalize { x, scale }, ng))
    }

    /// `y = γ_c · x + β_c` with shared `(1, C, 1)` parameters.
    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.shape() != [1, c, 1] || b.shape() != [1, c, 1] {
            return Err(shape_err(format!(
                "channel affine: x {:?}, gamma {:?}, beta {:?}",
                xv.shape(),
                g.shape(),
                b.shape()
            )));
        }
        let mut out = Tensor3::zeros(n, c, l);
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * l;
                let (gc, bc) = (g.values[ch], b.values[ch]);
                for j in 0..l {
                    out.values[base + j] = gc * xv.values[base + j] + bc;
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(out, Op::ChannelAffine { x, gamma, beta }, ng))
    }

    /// Per-sample, per-channel affine modulation `y = γ[n,c]·x + β[n,c]`,
    /// where `gb` is `(N, 2C, 1)` holding `γ` in its first `C` channels and `β`
    /// in the last `C`.
    pub fn modulate(&mut self, x: Var, gb: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let gv = self.value(gb);
        if gv.shape() != [n, 2 * c, 1] {
            return Err(shape_err(format!(
                "modulate: x {:?} needs (N, 2C, 1) parameters, got {:?}",
                xv.shape(),
                gv.shape()
            )));
        }
        let mut out = Tensor3::zeros(n, c, l);
        for ni in 0..n {
            for ch in 0..c {
                let g = gv.values[ni * 2 * c + ch];
                let b = gv.values[ni * 2 * c + c + ch];
                let base = (ni * c + ch) * l;
                for j in 0..l {
                    out.values[base + j] = g * xv.values[base + j] + b;
                }
            }
        }
        let ng = self.ng(x) || self.ng(gb);
        Ok(self.push(out, Op::Modulate { x, gb }, ng))
    }

    /// Appends a per-sample scalar `token (N, 1, 1)` as channel `C`,
    /// broadcast over length.
    pub fn concat_token(&mut self, x: Var, token: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let tv = self.value(token);
        if tv.shape() != [n, 1, 1] {
            return Err(shape_err(format!(
                "concat: x {:?} vs token {:?}",
                xv.shape(),
                tv.shape()
            )));
        }
        let mut out = Tensor3::zeros(n, c + 1, l);
        for ni in 0..n {
            out.values[ni * (c + 1) * l..][..c * l].copy_from_slice(xv.row(ni));
            out.values[(ni * (c + 1) + c) * l..][..l]
                .iter_mut()
                .for_each(|v| *v = tv.values[ni]);
        }
        let ng = self.ng(x) || self.ng(token);
        Ok(self.push(out, Op::ConcatToken { x, token }, ng))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let mut out = Tensor3::zeros(n, c, 1);
        for (o, chunk) in out.values.iter_mut().zip(xv.values.chunks_exact(l)) {
            *o = chunk.iter().sum::<f64>() / l as f64;
        }
        let ng = self.ng(x);
        self.push(out, Op::GlobalAvgPool(x), ng)
    }

    /// `(N, C, L)` → `(N, C·L, 1)`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, l] = xv.shape();
        let out = Tensor3::from_vec(n, c * l, 1, xv.values.clone()).expect("same size");
        let ng = self.ng(x);
        self.push(out, Op::Flatten(x), ng)
    }

    /// Sum of every entry, as a `(1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values.iter().sum::<f64>();
        let out = Tensor3::from_vec(1, 1, 1, vec![s]).expect("scalar");
        let ng = self.ng(x);
        self.push(out, Op::Sum(x), ng)
    }

    /// Smallest `|x|` over the inputs of every ReLU on the tape.
    pub fn min_relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.nodes[x.0].value.values.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean over consecutive groups of `group` rows: `(N·T, F, 1)` → `(N, F, 1)`.
    pub fn group_mean(&mut self, x: Var, group: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [nt, f, l] = xv.shape();
        if group == 0 || nt % group != 0 || l != 1 {
            return Err(shape_err(format!("group mean of {:?} by {group}", xv.shape())));
        }
        let n = nt / group;
        let mut out = Tensor3::zeros(n, f, 1);
        for ni in 0..n {
            let orow = &mut out.values[ni * f..(ni + 1) * f];
            for t in 0..group {
                for (o, v) in orow.iter_mut().zip(xv.row(ni * group + t)) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o /= group as f64);
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::GroupMean { x, group }, ng))
    }

    /// Rows `n·group + step` of a `(N·T, F, 1)` tensor.
    pub fn select_step(&mut self, x: Var, group: usize, step: usize) -> Result<Var, NnError> {
        let xv = self.value(x);
        let [nt, f, l] = xv.shape();
        if group == 0 || nt % group != 0 || l != 1 || step >= group {
            return Err(shape_err(format!("select step {step} of {:?} by {group}", xv.shape())));
        }
        let n = nt / group;
        let mut out = Tensor3::zeros(n, f, 1);
        for ni in 0..n {
            out.values[ni * f..(ni + 1) * f].copy_from_slice(xv.row(ni * group + step));
        }
        let ng = self.ng(x);
        Ok(self.push(out, Op::SelectStep { x, group, step }, ng))
    }

    /// Weighted softmax cross-entropy, `Σ w_y·(−log p_y) / Σ w_y` over the
    /// batch. `class_weights` of `None` means all ones.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        class_weights: Option<&[f64]>,
    ) -> Result<Var, NnError> {
        let lv = self.value(logits);
        let [n, k, l] = lv.shape();
        if l != 1 || labels.len() != n || n == 0 {
            return Err(shape_err(format!(
                "cross-entropy: logits {:?}, {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        if let Some(w) = class_weights {
            if w.len() != k {
                return Err(NnError::Invalid(format!("{} class weights for {k} classes", w.len())));
            }
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NnError::Invalid(format!("label {bad} out of range for {k} classes")));
        }
        let probs = softmax_values(&lv.values, n, k);
        let sample_w: Vec<f64> = labels.iter().map(|&y| class_weights.map_or(1.0, |w| w[y])).collect();
        let total_w: f64 = sample_w.iter().sum();
        if !(total_w > 0.0) {
            return Err(NnError::Invalid("class weights sum to zero over the batch".into()));
        }
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lv.values[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += sample_w[i] * (lse - row[y]);
        }
        let out = Tensor3::from_vec(1, 1, 1, vec![loss / total_w])?;
        let ng = self.ng(logits);
        Ok(self.push(
            out,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                sample_w,
                probs,
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `loss`. Gradients accumulate in every
    /// node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        if self.value(loss).shape() != [1, 1, 1] {
            return Err(NnError::NotScalar(self.value(loss).shape()));
        }
        self.nodes[loss.0].value.grad = vec![1.0];
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].value.grad.is_empty() {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let contributions = local_grads(before, node);
            for (v, g) in contributions {
                let target = before[v.0].value.grad_mut();
                for (t, d) in target.iter_mut().zip(&g) {
                    *t += d;
                }
            }
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                if node.value.grad.is_empty() {
                    continue;
                }
                let g = store.get_mut(id).grad_mut();
                for (t, d) in g.iter_mut().zip(&node.value.grad) {
                    *t += d;
                }
            }
        }
    }
}

/// Row-wise softmax of an `n × k` block.
pub(crate) fn softmax_values(values: &[f64], n: usize, k: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n * k];
    for i in 0..n {
        let row = &values[i * k..(i + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p = &mut probs[i * k..(i + 1) * k];
        let mut s = 0.0;
        for (pj, z) in p.iter_mut().zip(row) {
            *pj = (z - max).exp();
            s += *pj;
        }
        p.iter_mut().for_each(|v| *v /= s);
    }
    probs
}

/// Softmax over the channel axis of `(N, K, 1)` logits.
pub fn softmax(logits: &Tensor3) -> Tensor3 {
    let [n, k, _] = logits.shape();
    Tensor3::from_vec(n, k, 1, softmax_values(&logits.values, n, k)).expect("same size")
}

fn local_grads(before: &[Node], node: &Node) -> Vec<(Var, Vec<f64>)> {
    let dy = &node.value.grad;
    let y = &node.value.values;
    let val = |v: Var| &before[v.0].value;
    let ng = |v: Var| before[v.0].needs_grad;
    let mut out = Vec::new();
    match &node.op {
        Op::Input | Op::Param(_) => {}
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let [n, din, _] = xv.shape();
            let dout = wv.n();
            if ng(*x) {
                // dx (N×Din) = dy (N×Dout) · w (Dout×Din)
                let mut dx = vec![0.0; n * din];
                gemm(
                    n,
                    dout,
                    din,
                    dy,
                    (dout, 1),
                    &wv.values,
                    (din, 1),
                    0.0,
                    &mut dx,
                    (din, 1),
                );
                out.push((*x, dx));
            }
            if ng(*w) {
                // dw (Dout×Din) = dyᵀ (Dout×N) · x (N×Din)
                let mut dw = vec![0.0; dout * din];
                gemm(
                    dout,
                    n,
                    din,
                    dy,
                    (1, dout),
                    &xv.values,
                    (din, 1),
                    0.0,
                    &mut dw,
                    (din, 1),
                );
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|b| ng(*b)) {
                let mut db = vec![0.0; dout];
                for i in 0..n {
                    for o in 0..dout {
                        db[o] += dy[i * dout + o];
                    }
                }
                out.push((b, db));
            }
        }
        Op::Conv1d { x, w, b, stride, pad } => {
            let (xv, wv) = (val(*x), val(*w));
            let [n, cin, lin] = xv.shape();
            let [cout, _, k] = wv.shape();
            let lout = node.value.l();
            let (stride, pad) = (*stride, *pad);
            let need_dx = ng(*x);
            let need_dw = ng(*w);
            let mut dx = if need_dx { vec![0.0; xv.len()] } else { Vec::new() };
            let mut dw = if need_dw { vec![0.0; wv.len()] } else { Vec::new() };
            let ck = cin * k;
            let mut cols = vec![0.0; ck * lout];
            let mut dcols = vec![0.0; ck * lout];
            for ni in 0..n {
                let g = &dy[ni * cout * lout..][..cout * lout];
                if need_dw {
                    im2col(
                        &xv.values[ni * cin * lin..][..cin * lin],
                        cin,
                        lin,
                        k,
                        stride,
                        pad,
                        lout,
                        &mut cols,
                    );
                    // dw (Cout×CK) += g (Cout×Lout) · colsᵀ (Lout×CK)
                    gemm(cout, lout, ck, g, (lout, 1), &cols, (1, lout), 1.0, &mut dw, (ck, 1));
                }
                if need_dx {
                    // dcols (CK×Lout) = wᵀ (CK×Cout) · g (Cout×Lout)
                    gemm(
                        ck,
                        cout,
                        lout,
                        &wv.values,
                        (1, ck),
                        g,
                        (lout, 1),
                        0.0,
                        &mut dcols,
                        (lout, 1),
                    );
                    col2im(
                        &dcols,
                        cin,
                        lin,
                        k,
                        stride,
                        pad,
                        lout,
                        &mut dx[ni * cin * lin..][..cin * lin],
                    );
                }
            }
            if need_dx {
                out.push((*x, dx));
            }
            if need_dw {
                out.push((*w, dw));
            }
            if let Some(b) = b.filter(|b| ng(*b)) {
                let mut db = vec![0.0; cout];
                for ni in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d += dy[(ni * cout + co) * lout..][..lout].iter().sum::<f64>();
                    }
                }
                out.push((b, db));
            }
        }
        Op::Relu(x) => {
            let xv = val(*x);
            out.push((
                *x,
                dy.iter()
                    .zip(&xv.values)
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect(),
            ));
        }
        Op::Sigmoid(x) => {
            out.push((*x, dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect()));
        }
        Op::Tanh(x) => {
            out.push((*x, dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect()));
        }
        Op::OneMinus(x) => {
            out.push((*x, dy.iter().map(|g| -g).collect()));
        }
        Op::Add(a, b) => {
            if ng(*a) {
                out.push((*a, dy.clone()));
            }
            if ng(*b) {
                out.push((*b, dy.clone()));
            }
        }
        Op::Mul(a, b) => {
            if ng(*a) {
                out.push((*a, dy.iter().zip(&val(*b).values).map(|(g, v)| g * v).collect()));
            }
            if ng(*b) {
                out.push((*b, dy.iter().zip(&val(*a).values).map(|(g, v)| g * v).collect()));
            }
        }
        Op::BatchNorm { x, inv_std } => {
            let [n, c, l] = node.value.shape();
            let m = (n * l) as f64;
            let mut dx = vec![0.0; n * c * l];
            for ch in 0..c {
                let (mut sum_g, mut sum_gx) = (0.0, 0.0);
                for ni in 0..n {
                    let base = (ni * c + ch) * l;
                    for j in 0..l {
                        sum_g += dy[base + j];
                        sum_gx += dy[base + j] * y[base + j];
                    }
                }
                let s = inv_std[ch] / m;
                for ni in 0..n {
                    let base = (ni * c + ch) * l;
                    for j in 0..l {
                        dx[base + j] = s * (m * dy[base + j] - sum_g - y[base + j] * sum_gx);
                    }
                }
            }
            out.push((*x, dx));
        }
        Op::Normalize { x, scale } => {
            let [n, c, l] = node.value.shape();
            let mut dx = dy.clone();
            for ni in 0..n {
                for ch in 0..c {
                    dx[(ni * c + ch) * l..][..l].iter_mut().for_each(|d| *d *= scale[ch]);
                }
            }
            out.push((*x, dx));
        }
        Op::ChannelAffine { x, gamma, beta } => {
            let xv = val(*x);
            let [n, c, l] = xv.shape();
            let gv = &val(*gamma).values;
            if ng(*x) {
                let mut dx = dy.clone();
                for ni in 0..n {
                    for ch in 0..c {
                        dx[(ni * c + ch) * l..][..l].iter_mut().for_each(|d| *d *= gv[ch]);
                    }
                }
                out.push((*x, dx));
            }
            let (mut dg, mut db) = (vec![0.0; c], vec![0.0; c]);
            for ni in 0..n {
                for ch in 0..c {
                    let base = (ni * c + ch) * l;
                    for j in 0..l {
                        dg[ch] += dy[base + j] * xv.values[base + j];
                        db[ch] += dy[base + j];
                    }
                }
            }
            if ng(*gamma) {
                out.push((*gamma, dg));
            }
            if ng(*beta) {
                out.push((*beta, db));
            }
        }
        Op::Modulate { x, gb } => {
            let xv = val(*x);
            let [n, c, l] = xv.shape();
            let gv = &val(*gb).values;
            if ng(*x) {
                let mut dx = dy.clone();
                for ni in 0..n {
                    for ch in 0..c {
                        let g = gv[ni * 2 * c + ch];
                        dx[(ni * c + ch) * l..][..l].iter_mut().for_each(|d| *d *= g);
                    }
                }
                out.push((*x, dx));
            }
            if ng(*gb) {
                let mut dgb = vec![0.0; n * 2 * c];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * l;
                        let (mut sg, mut sb) = (0.0, 0.0);
                        for j in 0..l {
                            sg += dy[base + j] * xv.values[base + j];
                            sb += dy[base + j];
                        }
                        dgb[ni * 2 * c + ch] = sg;
                        dgb[ni * 2 * c + c + ch] = sb;
                    }
                }
                out.push((*gb, dgb));
            }
        }
        Op::ConcatToken { x, token } => {
            let [n, c1, l] = node.value.shape();
            let c = c1 - 1;
            if ng(*x) {
                let mut dx = Vec::with_capacity(n * c * l);
                for ni in 0..n {
                    dx.extend_from_slice(&dy[ni * c1 * l..][..c * l]);
                }
                out.push((*x, dx));
            }
            if ng(*token) {
                out.push((
                    *token,
                    (0..n)
                        .map(|ni| dy[(ni * c1 + c) * l..][..l].iter().sum::<f64>())
                        .collect(),
                ));
            }
        }
        Op::GlobalAvgPool(x) => {
            let l = val(*x).l();
            let mut dx = Vec::with_capacity(val(*x).len());
            for g in dy {
                dx.extend(std::iter::repeat_n(g / l as f64, l));
            }
            out.push((*x, dx));
        }
        Op::Flatten(x) => out.push((*x, dy.clone())),
        Op::Sum(x) => out.push((*x, vec![dy[0]; val(*x).len()])),
        Op::GroupMean { x, group } => {
            let [nt, f, _] = val(*x).shape();
            let mut dx = vec![0.0; nt * f];
            for r in 0..nt {
                let n = r / group;
                for j in 0..f {
                    dx[r * f + j] = dy[n * f + j] / *group as f64;
                }
            }
            out.push((*x, dx));
        }
        Op::SelectStep { x, group, step } => {
            let [nt, f, _] = val(*x).shape();
            let mut dx = vec![0.0; nt * f];
            for n in 0..nt / group {
                let r = n * group + step;
                dx[r * f..(r + 1) * f].copy_from_slice(&dy[n * f..(n + 1) * f]);
            }
            out.push((*x, dx));
        }
        Op::SoftmaxCe {
            logits,
            labels,
            sample_w,
            probs,
        } => {
            let k = val(*logits).c();
            let total: f64 = sample_w.iter().sum();
            let g = dy[0];
            let mut dz = vec![0.0; probs.len()];
            for (i, &lab) in labels.iter().enumerate() {
                let s = g * sample_w[i] / total;
                for j in 0..k {
                    let target = if j == lab { 1.0 } else { 0.0 };
                    dz[i * k + j] = s * (probs[i * k + j] - target);
                }
            }
            out.push((*logits, dz));
        }
    }
    out
}
