use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Softmax { input: Var },
    CrossEntropy { probs: Var, labels: Vec<usize> },
    Sum { input: Var },
    Mul { lhs: Var, rhs: Var },
    Reshape { input: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in execution order; [`Tape::backward`] replays their
/// adjoint rules in reverse. Every op takes inputs that are already on the
/// tape, so insertion order is a topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node { value: tensor, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.nodes[v.0].value.take_grad()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|&v| self.needs_grad(v));
        let value = Tensor::from_parts(shape, data, requires_grad);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// 3x3 convolution, stride 1, zero padding 1: `[N,C,H,W] * [F,C,3,3] + [F] -> [N,F,H,W]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, c, h, w) = match *self.shape(input) {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(Error::shape("conv2d", format!("input must be 4-d, got {s:?}"))),
        };
        let f = match *self.shape(weight) {
            [f, wc, 3, 3] if wc == c => f,
            ref s => {
                return Err(Error::shape(
                    "conv2d",
                    format!("weight {s:?} incompatible with {c} input channels and a 3x3 kernel"),
                ))
            }
        };
        if self.shape(bias) != [f] {
            return Err(Error::shape("conv2d", format!("bias {:?} != [{f}]", self.shape(bias))));
        }
        let hw = h * w;
        let ckk = c * 9;
        let x = self.data(input);
        let wt = self.data(weight);
        let b = self.data(bias);
        let mut out = vec![0.0; n * f * hw];
        let mut cols = vec![0.0; ckk * hw];
        for i in 0..n {
            im2col(&x[i * c * hw..(i + 1) * c * hw], c, h, w, &mut cols);
            let out_i = &mut out[i * f * hw..(i + 1) * f * hw];
            for (row, &bf) in out_i.chunks_exact_mut(hw).zip(b) {
                row.fill(bf);
            }
            gemm(Mat::new(wt, f, ckk), Mat::new(&cols, ckk, hw), 1.0, out_i);
        }
        Ok(self.push(vec![n, f, h, w], out, Op::Conv2d { input, weight, bias }, &[input, weight, bias]))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first maximum in row-major order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = match *self.shape(input) {
            [n, c, h, w] => (n, c, h, w),
            ref s => return Err(Error::shape("maxpool2", format!("input must be 4-d, got {s:?}"))),
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("spatial size {h}x{w} must be even")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.data(input);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(vec![n, c, oh, ow], out, Op::MaxPool2 { input, argmax }, &[input]))
    }

    /// Affine map `[N,D] x [D,E] + [E] -> [N,E]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, d) = match *self.shape(input) {
            [n, d] => (n, d),
            ref s => return Err(Error::shape("linear", format!("input must be 2-d, got {s:?}"))),
        };
        let e = match *self.shape(weight) {
            [wd, e] if wd == d => e,
            ref s => return Err(Error::shape("linear", format!("weight {s:?} does not accept input width {d}"))),
        };
        if self.shape(bias) != [e] {
            return Err(Error::shape("linear", format!("bias {:?} != [{e}]", self.shape(bias))));
        }
        let mut out = Vec::with_capacity(n * e);
        for _ in 0..n {
            out.extend_from_slice(self.data(bias));
        }
        gemm(Mat::new(self.data(input), n, d), Mat::new(self.data(weight), d, e), 1.0, &mut out);
        Ok(self.push(vec![n, e], out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.data(input).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(input).to_vec();
        self.push(shape, out, Op::Relu { input }, &[input])
    }

    /// Row-wise softmax of a `[N,K]` tensor, max-shifted for stability.
    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let k = match *self.shape(input) {
            [_, k] => k,
            ref s => return Err(Error::shape("softmax_rows", format!("input must be 2-d, got {s:?}"))),
        };
        let mut out = self.data(input).to_vec();
        for row in out.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        let shape = self.shape(input).to_vec();
        Ok(self.push(shape, out, Op::Softmax { input }, &[input]))
    }

    /// Mean negative log-likelihood of `labels` under row distributions `probs`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = match *self.shape(probs) {
            [n, k] => (n, k),
            ref s => return Err(Error::shape("cross_entropy", format!("probs must be 2-d, got {s:?}"))),
        };
        if labels.len() != n {
            return Err(Error::shape("cross_entropy", format!("{} labels for {n} rows", labels.len())));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange { row, label, classes: k });
        }
        let p = self.data(probs);
        let loss = labels.iter().enumerate().map(|(i, &l)| -p[i * k + l].max(PROB_FLOOR).ln()).sum::<f64>() / n as f64;
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { probs, labels: labels.to_vec() }, &[probs]))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.data(input).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { input }, &[input])
    }

    /// Elementwise product of two equally shaped tensors.
    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        if self.shape(lhs) != self.shape(rhs) {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", self.shape(lhs), self.shape(rhs))));
        }
        let out = self.data(lhs).iter().zip(self.data(rhs)).map(|(a, b)| a * b).collect();
        let shape = self.shape(lhs).to_vec();
        Ok(self.push(shape, out, Op::Mul { lhs, rhs }, &[lhs, rhs]))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(input).numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(input))));
        }
        let data = self.data(input).to_vec();
        Ok(self.push(shape, data, Op::Reshape { input }, &[input]))
    }

    /// Accumulates d(loss)/d(t) into every `requires_grad` tensor reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &mut self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        if !loss_value.requires_grad() {
            return Ok(());
        }
        loss_value.accumulate_grad()[0] += 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = node.value.take_grad() else { continue };
            let contributions = node_backward(before, node, &g);
            node.value.set_grad(g);
            for (var, delta) in contributions {
                let target = before[var.0].value.accumulate_grad();
                for (t, d) in target.iter_mut().zip(&delta) {
                    *t += d;
                }
            }
        }
        Ok(())
    }
}

/// Adjoint of one recorded op: gradient contributions for each input that
/// requires a gradient, given the upstream gradient `g` of the node's output.
fn node_backward(before: &[Node], node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let val = |v: Var| &before[v.0].value;
    let wants = |v: Var| before[v.0].value.requires_grad();
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d { input, weight, bias } => {
            let (n, c, h, w) = match *val(*input).shape() {
                [n, c, h, w] => (n, c, h, w),
                _ => unreachable!("conv2d input validated on record"),
            };
            let f = val(*weight).shape()[0];
            let (hw, ckk) = (h * w, c * 9);
            let x = val(*input).data();
            let wt = val(*weight).data();
            let mut dw = wants(*weight).then(|| vec![0.0; f * ckk]);
            let mut db = wants(*bias).then(|| vec![0.0; f]);
            let mut dx = wants(*input).then(|| vec![0.0; n * c * hw]);
            let mut cols = vec![0.0; ckk * hw];
            let mut dcols = vec![0.0; ckk * hw];
            for i in 0..n {
                let g_i = &g[i * f * hw..(i + 1) * f * hw];
                if let Some(dw) = dw.as_mut() {
                    im2col(&x[i * c * hw..(i + 1) * c * hw], c, h, w, &mut cols);
                    gemm(Mat::new(g_i, f, hw), Mat::t(&cols, ckk, hw), 1.0, dw);
                }
                if let Some(db) = db.as_mut() {
                    for (acc, row) in db.iter_mut().zip(g_i.chunks_exact(hw)) {
                        *acc += row.iter().sum::<f64>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    gemm(Mat::t(wt, f, ckk), Mat::new(g_i, f, hw), 0.0, &mut dcols);
                    col2im_add(&dcols, c, h, w, &mut dx[i * c * hw..(i + 1) * c * hw]);
                }
            }
            out.extend(dx.map(|d| (*input, d)));
            out.extend(dw.map(|d| (*weight, d)));
            out.extend(db.map(|d| (*bias, d)));
        }
        Op::MaxPool2 { input, argmax } => {
            if wants(*input) {
                let mut dx = vec![0.0; val(*input).numel()];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx] += gv;
                }
                out.push((*input, dx));
            }
        }
        Op::Linear { input, weight, bias } => {
            let (n, d) = (val(*input).shape()[0], val(*input).shape()[1]);
            let e = val(*weight).shape()[1];
            if wants(*input) {
                let mut dx = vec![0.0; n * d];
                gemm(Mat::new(g, n, e), Mat::t(val(*weight).data(), d, e), 0.0, &mut dx);
                out.push((*input, dx));
            }
            if wants(*weight) {
                let mut dw = vec![0.0; d * e];
                gemm(Mat::t(val(*input).data(), n, d), Mat::new(g, n, e), 0.0, &mut dw);
                out.push((*weight, dw));
            }
            if wants(*bias) {
                let mut db = vec![0.0; e];
                for row in g.chunks_exact(e) {
                    for (acc, gv) in db.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                out.push((*bias, db));
            }
        }
        Op::Relu { input } => {
            if wants(*input) {
                let dx = val(*input).data().iter().zip(g).map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 }).collect();
                out.push((*input, dx));
            }
        }
        Op::Softmax { input } => {
            if wants(*input) {
                let k = node.value.shape()[1];
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dx_row, y_row), g_row) in dx.chunks_exact_mut(k).zip(y.chunks_exact(k)).zip(g.chunks_exact(k)) {
                    let dot: f64 = y_row.iter().zip(g_row).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dx_row[j] = y_row[j] * (g_row[j] - dot);
                    }
                }
                out.push((*input, dx));
            }
        }
        Op::CrossEntropy { probs, labels } => {
            if wants(*probs) {
                let p = val(*probs);
                let k = p.shape()[1];
                let n = labels.len() as f64;
                let mut dp = vec![0.0; p.numel()];
                for (i, &l) in labels.iter().enumerate() {
                    let pv = p.data()[i * k + l];
                    if pv > PROB_FLOOR {
                        dp[i * k + l] = -g[0] / (n * pv);
                    }
                }
                out.push((*probs, dp));
            }
        }
        Op::Sum { input } => {
            if wants(*input) {
                out.push((*input, vec![g[0]; val(*input).numel()]));
            }
        }
        Op::Mul { lhs, rhs } => {
            if wants(*lhs) {
                out.push((*lhs, val(*rhs).data().iter().zip(g).map(|(r, gv)| r * gv).collect()));
            }
            if wants(*rhs) {
                out.push((*rhs, val(*lhs).data().iter().zip(g).map(|(l, gv)| l * gv).collect()));
            }
        }
        Op::Reshape { input } => {
            if wants(*input) {
                out.push((*input, g.to_vec()));
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Unfolds one `[C,H,W]` image into `[C*9, H*W]` columns for a padded 3x3 kernel.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y + ky;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if iy < 1 || iy > h {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy - 1) * w..iy * w];
                    for (xx, d) in dst.iter_mut().enumerate() {
                        let ix = xx + kx;
                        *d = if ix < 1 || ix > w { 0.0 } else { src[ix - 1] };
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut dx[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ch * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let iy = y + ky;
                    if iy < 1 || iy > h {
                        continue;
                    }
                    let dst = &mut plane[(iy - 1) * w..iy * w];
                    for xx in 0..w {
                        let ix = xx + kx;
                        if ix >= 1 && ix <= w {
                            dst[ix - 1] += row[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}
