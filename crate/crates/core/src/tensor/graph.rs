use super::kernels::{conv3, conv3_backward, gemm, sigmoid, Grid};
use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities fed to binary cross-entropy are clamped to
/// `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

struct BatchNormCache {
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    valid: Vec<bool>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    count: f64,
    mean: Vec<f64>,
    var: Vec<f64>,
}

struct GruCache {
    x: NodeId,
    w_ih: NodeId,
    w_hh: NodeId,
    bias: NodeId,
    lengths: Vec<usize>,
    reverse: bool,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

enum Op {
    Input,
    Param,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Conv2d { x: NodeId, w: NodeId },
    BatchNorm(Box<BatchNormCache>),
    ChannelAffine { x: NodeId, scale: Vec<f64>, valid: Vec<bool> },
    MaxPoolFreq { x: NodeId, argmax: Vec<usize> },
    ConcatLast(NodeId, NodeId),
    Reshape(NodeId),
    Gru(Box<GruCache>),
    SliceLast { x: NodeId, start: usize },
    Select0 { x: NodeId, index: usize },
    Stack(Vec<NodeId>),
    TakeBag { x: NodeId, bag: usize },
    ReduceArg { x: NodeId, arg: Vec<usize> },
    ReduceMean(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Bce { p: NodeId, target: Vec<f64> },
    SquaredError { x: NodeId, target: Vec<f64> },
}

/// Per-leaf gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf. `None` when the loss
    /// does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

/// A recorded forward computation. Nodes are appended in evaluation order,
/// so the tape is topologically sorted by construction.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// Validity of each position (everything except the channel axis) of a
/// `[B, T, ...]` tensor under per-item lengths along the time axis.
fn time_validity(shape: &[usize], lengths: Option<&[usize]>) -> Result<Vec<bool>> {
    let chans = shape.last().copied().unwrap_or(1).max(1);
    let positions: usize = shape.iter().product::<usize>() / chans;
    let Some(lengths) = lengths else {
        return Ok(vec![true; positions]);
    };
    if shape.len() < 3 || lengths.len() != shape[0] {
        return Err(Error::shape("time mask", shape, &[lengths.len()]));
    }
    let time = shape[1];
    let inner: usize = shape[2..shape.len() - 1].iter().product();
    let mut valid = Vec::with_capacity(positions);
    for &len in lengths {
        if len > time {
            return Err(Error::Contract(format!("length {len} exceeds time axis {time}")));
        }
        for t in 0..time {
            valid.extend(std::iter::repeat_n(t < len, inner));
        }
    }
    Ok(valid)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Batch mean and biased variance recorded by a training-mode
    /// batch-norm node.
    pub fn batch_norm_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm(c) => Some((&c.mean, &c.var)),
            _ => None,
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// `[..., K] · [K, N] -> [..., N]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.rank() != 2 || av.last_dim() != bv.shape()[0] || av.rank() == 0 {
            return Err(Error::shape("matmul", av.shape(), bv.shape()));
        }
        let (k, n) = (bv.shape()[0], bv.shape()[1]);
        let m = av.len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rank() != 1 || bv.len() != xv.last_dim() {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let c = bv.len();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same(name, av, bv)?;
        let out = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let xv = self.value(x);
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: xv.data().iter().map(|&v| f(v)).collect(),
        };
        self.push(value, op, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// 3×3 convolution with zero "same" padding on both spatial axes.
    /// `x: [B, T, F, C]`, `w: [3, 3, C, O]` -> `[B, T, F, O]`.
    pub fn conv2d_same(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let xs = xv.shape();
        let ws = wv.shape();
        if xs.len() != 4 || ws.len() != 4 || ws[0] != 3 || ws[1] != 3 || ws[2] != xs[3] {
            return Err(Error::shape("conv2d_same", xs, ws));
        }
        let g = Grid {
            batch: xs[0],
            time: xs[1],
            freq: xs[2],
            chans: xs[3],
        };
        let o = ws[3];
        let out = conv3(xv.data(), wv.data(), g, o);
        let value = Tensor::new(vec![g.batch, g.time, g.freq, o], out)?;
        Ok(self.push(value, Op::Conv2d { x, w }, &[x, w]))
    }

    /// Training-mode batch normalisation over every axis except the last.
    ///
    /// With `lengths`, positions at or beyond each item's length on axis 1
    /// are excluded from the statistics and produce zero output.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        lengths: Option<&[usize]>,
    ) -> Result<NodeId> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.last_dim();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::shape("batch_norm", xv.shape(), gv.shape()));
        }
        let valid = time_validity(xv.shape(), lengths)?;
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::Contract("batch_norm over zero valid positions".into()));
        }
        let data = xv.data();
        let mut mean = vec![0.0; c];
        for (row, _) in data.chunks(c).zip(&valid).filter(|(_, &v)| v) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; c];
        for (row, _) in data.chunks(c).zip(&valid).filter(|(_, &v)| v) {
            for ((s, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; data.len()];
        let mut out = vec![0.0; data.len()];
        for (p, row) in data.chunks(c).enumerate() {
            if !valid[p] {
                continue;
            }
            for ch in 0..c {
                let h = (row[ch] - mean[ch]) * inv_std[ch];
                xhat[p * c + ch] = h;
                out[p * c + ch] = h * gv.data()[ch] + bv.data()[ch];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let cache = BatchNormCache {
            x,
            gamma,
            beta,
            valid,
            xhat,
            inv_std,
            count: count as f64,
            mean,
            var,
        };
        Ok(self.push(value, Op::BatchNorm(Box::new(cache)), &[x, gamma, beta]))
    }

    /// `y = x · scale[c] + shift[c]` per channel, zero at masked positions.
    /// This is inference-mode batch normalisation with frozen statistics;
    /// only `x` receives a gradient.
    pub fn channel_affine(
        &mut self,
        x: NodeId,
        scale: &[f64],
        shift: &[f64],
        lengths: Option<&[usize]>,
    ) -> Result<NodeId> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if scale.len() != c || shift.len() != c {
            return Err(Error::shape("channel_affine", xv.shape(), &[scale.len()]));
        }
        let valid = time_validity(xv.shape(), lengths)?;
        let mut out = vec![0.0; xv.len()];
        for (p, row) in xv.data().chunks(c).enumerate() {
            if valid[p] {
                for ch in 0..c {
                    out[p * c + ch] = row[ch] * scale[ch] + shift[ch];
                }
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::ChannelAffine {
            x,
            scale: scale.to_vec(),
            valid,
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Non-overlapping max pooling of width `k` along axis 2 of
    /// `[B, T, F, C]`; trailing frequency bins that do not fill a window are
    /// dropped.
    pub fn max_pool_freq(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 4 || k == 0 || s[2] < k {
            return Err(Error::shape("max_pool_freq", s, &[k]));
        }
        let (rows, f, c) = (s[0] * s[1], s[2], s[3]);
        let fo = f / k;
        let mut out = vec![0.0; rows * fo * c];
        let mut argmax = vec![0; out.len()];
        let d = xv.data();
        for r in 0..rows {
            for po in 0..fo {
                for ch in 0..c {
                    let mut best = (r * f + po * k) * c + ch;
                    for j in 1..k {
                        let idx = (r * f + po * k + j) * c + ch;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    let o = (r * fo + po) * c + ch;
                    out[o] = d[best];
                    argmax[o] = best;
                }
            }
        }
        let value = Tensor::new(vec![s[0], s[1], fo, c], out)?;
        Ok(self.push(value, Op::MaxPoolFreq { x, argmax }, &[x]))
    }

    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::shape("concat_last", sa, sb));
        }
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks(ca).zip(bv.data().chunks(cb)) {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConcatLast(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// One direction of a GRU over `x: [B, T, I]` with zero initial state.
    ///
    /// Gate blocks along the `3H` axis are ordered update, reset, candidate:
    ///
    /// ```text
    /// z = σ(x·Wz + h·Uz + bz)
    /// r = σ(x·Wr + h·Ur + br)
    /// n = tanh(x·Wn + (r ⊙ h)·Un + bn)
    /// h' = z ⊙ h + (1 − z) ⊙ n
    /// ```
    ///
    /// Item `b` only runs over its first `lengths[b]` frames (in reverse
    /// order when `reverse`); outputs beyond that are zero.
    pub fn gru(
        &mut self,
        x: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        bias: NodeId,
        lengths: &[usize],
        reverse: bool,
    ) -> Result<NodeId> {
        let (xv, wv, uv, bv) = (
            self.value(x),
            self.value(w_ih),
            self.value(w_hh),
            self.value(bias),
        );
        let xs = xv.shape();
        if xs.len() != 3 || wv.rank() != 2 || wv.shape()[0] != xs[2] {
            return Err(Error::shape("gru", xs, wv.shape()));
        }
        let h3 = wv.shape()[1];
        let h = h3 / 3;
        if h3 % 3 != 0 || uv.shape() != [h, h3] || bv.shape() != [h3] {
            return Err(Error::shape("gru", wv.shape(), uv.shape()));
        }
        let (nb, nt, ni) = (xs[0], xs[1], xs[2]);
        if lengths.len() != nb || lengths.iter().any(|&l| l > nt) {
            return Err(Error::shape("gru lengths", xs, lengths));
        }
        let mut xp = vec![0.0; nb * nt * h3];
        gemm(nb * nt, ni, h3, xv.data(), false, wv.data(), false, &mut xp, false);
        for row in xp.chunks_mut(h3) {
            for (v, b) in row.iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        let u = uv.data();
        let size = nb * nt * h;
        let (mut h_prev, mut zs, mut rs, mut ns) =
            (vec![0.0; size], vec![0.0; size], vec![0.0; size], vec![0.0; size]);
        let mut out = vec![0.0; size];
        let mut state = vec![0.0; h];
        let mut acc = vec![0.0; h3];
        let mut rh = vec![0.0; h];
        for b in 0..nb {
            let len = lengths[b];
            state.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..len {
                let t = if reverse { len - 1 - s } else { s };
                let row = b * nt + t;
                let pre = &xp[row * h3..(row + 1) * h3];
                acc[..2 * h].copy_from_slice(&pre[..2 * h]);
                for (i, &hi) in state.iter().enumerate() {
                    let urow = &u[i * h3..i * h3 + 2 * h];
                    for (a, w) in acc[..2 * h].iter_mut().zip(urow) {
                        *a += hi * w;
                    }
                }
                let base = row * h;
                for j in 0..h {
                    zs[base + j] = sigmoid(acc[j]);
                    rs[base + j] = sigmoid(acc[h + j]);
                    rh[j] = rs[base + j] * state[j];
                }
                acc[2 * h..].copy_from_slice(&pre[2 * h..]);
                for (i, &ri) in rh.iter().enumerate() {
                    let urow = &u[i * h3 + 2 * h..(i + 1) * h3];
                    for (a, w) in acc[2 * h..].iter_mut().zip(urow) {
                        *a += ri * w;
                    }
                }
                for j in 0..h {
                    let n = acc[2 * h + j].tanh();
                    let z = zs[base + j];
                    ns[base + j] = n;
                    h_prev[base + j] = state[j];
                    let next = z * state[j] + (1.0 - z) * n;
                    out[base + j] = next;
                    state[j] = next;
                }
            }
        }
        let value = Tensor::new(vec![nb, nt, h], out)?;
        let cache = GruCache {
            x,
            w_ih,
            w_hh,
            bias,
            lengths: lengths.to_vec(),
            reverse,
            h_prev,
            z: zs,
            r: rs,
            n: ns,
        };
        Ok(self.push(value, Op::Gru(Box::new(cache)), &[x, w_ih, w_hh, bias]))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let c = xv.last_dim();
        if xv.rank() == 0 || start >= end || end > c {
            return Err(Error::shape("slice_last", xv.shape(), &[start, end]));
        }
        let out = xv
            .data()
            .chunks(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::SliceLast { x, start }, &[x]))
    }

    /// Entry `index` along axis 0.
    pub fn select0(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() == 0 || index >= xv.shape()[0] {
            return Err(Error::shape("select0", xv.shape(), &[index]));
        }
        let inner = xv.len() / xv.shape()[0];
        let value = Tensor::new(
            xv.shape()[1..].to_vec(),
            xv.data()[index * inner..(index + 1) * inner].to_vec(),
        )?;
        Ok(self.push(value, Op::Select0 { x, index }, &[x]))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = xs.first() else {
            return Err(Error::Contract("stack of zero tensors".into()));
        };
        let shape = self.value(first).shape().to_vec();
        let mut out = Vec::new();
        for &x in xs {
            let v = self.value(x);
            if v.shape() != shape.as_slice() {
                return Err(Error::shape("stack", &shape, v.shape()));
            }
            out.extend_from_slice(v.data());
        }
        let mut full = vec![xs.len()];
        full.extend(shape);
        let value = Tensor::new(full, out)?;
        Ok(self.push(value, Op::Stack(xs.to_vec()), xs))
    }

    /// The first `len` frames of batch item `bag` from `x: [B, T, ...]`,
    /// shaped `[len, ...]`.
    pub fn take_bag(&mut self, x: NodeId, bag: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() < 2 || bag >= s[0] || len == 0 || len > s[1] {
            return Err(Error::shape("take_bag", s, &[bag, len]));
        }
        let inner: usize = s[2..].iter().product();
        let start = bag * s[1] * inner;
        let mut shape = vec![len];
        shape.extend_from_slice(&s[2..]);
        let value = Tensor::new(shape, xv.data()[start..start + len * inner].to_vec())?;
        Ok(self.push(value, Op::TakeBag { x, bag }, &[x]))
    }

    fn reduce_arg(&mut self, x: NodeId, better: fn(f64, f64) -> bool) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.shape()[0] == 0 {
            return Err(Error::shape("reduce", xv.shape(), &[]));
        }
        let t = xv.shape()[0];
        let inner = xv.len() / t;
        let d = xv.data();
        let mut arg = vec![0usize; inner];
        for (j, a) in arg.iter_mut().enumerate() {
            for i in 1..t {
                if better(d[i * inner + j], d[*a * inner + j]) {
                    *a = i;
                }
            }
        }
        let out = arg.iter().enumerate().map(|(j, &i)| d[i * inner + j]).collect();
        let value = Tensor::new(xv.shape()[1..].to_vec(), out)?;
        Ok(self.push(value, Op::ReduceArg { x, arg }, &[x]))
    }

    /// Maximum over axis 0. Ties go to the lowest index.
    pub fn reduce_max(&mut self, x: NodeId) -> Result<NodeId> {
        self.reduce_arg(x, |a, b| a > b)
    }

    /// Minimum over axis 0. Ties go to the lowest index.
    pub fn reduce_min(&mut self, x: NodeId) -> Result<NodeId> {
        self.reduce_arg(x, |a, b| a < b)
    }

    /// Mean over axis 0.
    pub fn reduce_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.shape()[0] == 0 {
            return Err(Error::shape("reduce_mean", xv.shape(), &[]));
        }
        let t = xv.shape()[0];
        let inner = xv.len() / t;
        let mut out = vec![0.0; inner];
        for row in xv.data().chunks(inner) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= t as f64);
        let value = Tensor::new(xv.shape()[1..].to_vec(), out)?;
        Ok(self.push(value, Op::ReduceMean(x), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Elementwise `−(y ln p + (1 − y) ln(1 − p))` with `p` clamped to
    /// `[BCE_CLAMP, 1 − BCE_CLAMP]`.
    ///
    /// The gradient is evaluated at the clamped probability and passed
    /// through unchanged, so saturated predictions still receive a signal.
    pub fn bce(&mut self, p: NodeId, target: &Tensor) -> Result<NodeId> {
        let pv = self.value(p);
        check_same("bce", pv, target)?;
        let out = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| bce_value(p, y))
            .collect();
        let value = Tensor::new(pv.shape().to_vec(), out)?;
        let op = Op::Bce {
            p,
            target: target.data().to_vec(),
        };
        Ok(self.push(value, op, &[p]))
    }

    /// Elementwise `(x − y)²`.
    pub fn squared_error(&mut self, x: NodeId, target: &Tensor) -> Result<NodeId> {
        let xv = self.value(x);
        check_same("squared_error", xv, target)?;
        let out = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .collect();
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let op = Op::SquaredError {
            x,
            target: target.data().to_vec(),
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Reverse pass from a single-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Param | Op::Input) {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, dout, &mut grads);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Param | Op::Input) => Some(Tensor {
                    shape: n.value.shape().to_vec(),
                    data: g,
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    // Elementwise ops rewrite `dout` in place and pass it on.
    fn backprop_node(&self, node: &Node, mut dout: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        let mut send = |id: NodeId, g: Vec<f64>| {
            if !self.needs(id) {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.len() / k;
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, &dout, false, bv.data(), true, &mut da, false);
                    send(*a, da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, &dout, false, &mut db, false);
                    send(*b, db);
                }
            }
            Op::AddBias(x, bias) => {
                let c = self.value(*bias).len();
                if self.needs(*bias) {
                    let mut db = vec![0.0; c];
                    for row in dout.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*bias, db);
                }
                send(*x, dout);
            }
            Op::Add(a, b) => {
                send(*a, dout.clone());
                send(*b, dout);
            }
            Op::Sub(a, b) => {
                send(*a, dout.clone());
                dout.iter_mut().for_each(|v| *v = -*v);
                send(*b, dout);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.needs(*a) {
                    send(*a, dout.iter().zip(bv).map(|(d, v)| d * v).collect());
                }
                if self.needs(*b) {
                    send(*b, dout.iter().zip(av).map(|(d, v)| d * v).collect());
                }
            }
            Op::Scale(x, c) => {
                dout.iter_mut().for_each(|d| *d *= c);
                send(*x, dout);
            }
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, dout),
            Op::Relu(x) => {
                dout.iter_mut().zip(y).for_each(|(d, &v)| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
                send(*x, dout);
            }
            Op::Tanh(x) => {
                dout.iter_mut().zip(y).for_each(|(d, v)| *d *= 1.0 - v * v);
                send(*x, dout);
            }
            Op::Sigmoid(x) => {
                dout.iter_mut().zip(y).for_each(|(d, v)| *d *= v * (1.0 - v));
                send(*x, dout);
            }
            Op::Conv2d { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let xs = xv.shape();
                let g = Grid {
                    batch: xs[0],
                    time: xs[1],
                    freq: xs[2],
                    chans: xs[3],
                };
                let o = wv.shape()[3];
                let (want_w, want_x) = (self.needs(*w), self.needs(*x));
                let (dw, dx) = conv3_backward(xv.data(), wv.data(), &dout, g, o, want_w, want_x);
                if want_w {
                    send(*w, dw);
                }
                if want_x {
                    send(*x, dx);
                }
            }
            Op::BatchNorm(c) => {
                let gv = self.value(c.gamma).data();
                let ch = gv.len();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for (p, row) in dout.chunks(ch).enumerate() {
                    if !c.valid[p] {
                        continue;
                    }
                    for k in 0..ch {
                        dgamma[k] += row[k] * c.xhat[p * ch + k];
                        dbeta[k] += row[k];
                    }
                }
                if self.needs(c.x) {
                    // With dxhat = dy·γ: Σdxhat = γ·dβ and Σ(dxhat·xhat) = γ·dγ.
                    let mut dx = vec![0.0; dout.len()];
                    for (p, row) in dout.chunks(ch).enumerate() {
                        if !c.valid[p] {
                            continue;
                        }
                        for k in 0..ch {
                            let dxhat = row[k] * gv[k];
                            let xh = c.xhat[p * ch + k];
                            dx[p * ch + k] = c.inv_std[k] / c.count
                                * (c.count * dxhat - gv[k] * dbeta[k] - xh * gv[k] * dgamma[k]);
                        }
                    }
                    send(c.x, dx);
                }
                send(c.gamma, dgamma);
                send(c.beta, dbeta);
            }
            Op::ChannelAffine { x, scale, valid } => {
                let ch = scale.len();
                let mut dx = vec![0.0; dout.len()];
                for (p, row) in dout.chunks(ch).enumerate() {
                    if valid[p] {
                        for k in 0..ch {
                            dx[p * ch + k] = row[k] * scale[k];
                        }
                    }
                }
                send(*x, dx);
            }
            Op::MaxPoolFreq { x, argmax } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (d, &i) in dout.iter().zip(argmax) {
                    dx[i] += d;
                }
                send(*x, dx);
            }
            Op::ConcatLast(a, b) => {
                let (ca, cb) = (self.value(*a).last_dim(), self.value(*b).last_dim());
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in dout.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Gru(c) => self.backprop_gru(c, &dout, &mut send),
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let w = node.value.last_dim();
                let mut dx = vec![0.0; xv.len()];
                for (drow, orow) in dx.chunks_mut(c).zip(dout.chunks(w)) {
                    drow[*start..*start + w].copy_from_slice(orow);
                }
                send(*x, dx);
            }
            Op::Select0 { x, index } => {
                let mut dx = vec![0.0; self.value(*x).len()];
                let inner = dout.len();
                dx[index * inner..(index + 1) * inner].copy_from_slice(&dout);
                send(*x, dx);
            }
            Op::Stack(xs) => {
                let inner = dout.len() / xs.len();
                for (x, chunk) in xs.iter().zip(dout.chunks(inner)) {
                    send(*x, chunk.to_vec());
                }
            }
            Op::TakeBag { x, bag } => {
                let s = self.value(*x).shape();
                let inner: usize = s[2..].iter().product();
                let start = bag * s[1] * inner;
                let mut dx = vec![0.0; self.value(*x).len()];
                dx[start..start + dout.len()].copy_from_slice(&dout);
                send(*x, dx);
            }
            Op::ReduceArg { x, arg } => {
                let inner = arg.len();
                let mut dx = vec![0.0; self.value(*x).len()];
                for (j, (&i, d)) in arg.iter().zip(dout).enumerate() {
                    dx[i * inner + j] = d;
                }
                send(*x, dx);
            }
            Op::ReduceMean(x) => {
                let xv = self.value(*x);
                let t = xv.shape()[0] as f64;
                let mut dx = Vec::with_capacity(xv.len());
                for _ in 0..xv.shape()[0] {
                    dx.extend(dout.iter().map(|d| d / t));
                }
                send(*x, dx);
            }
            Op::Sum(x) => send(*x, vec![dout[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![dout[0] / n as f64; n]);
            }
            Op::Bce { p, target } => {
                let pv = self.value(*p).data();
                let dx = dout
                    .iter()
                    .zip(pv)
                    .zip(target)
                    .map(|((d, &p), &t)| d * bce_grad(p, t))
                    .collect();
                send(*p, dx);
            }
            Op::SquaredError { x, target } => {
                let xv = self.value(*x).data();
                let dx = dout
                    .iter()
                    .zip(xv)
                    .zip(target)
                    .map(|((d, a), b)| d * 2.0 * (a - b))
                    .collect();
                send(*x, dx);
            }
        }
    }

    fn backprop_gru(&self, c: &GruCache, dout: &[f64], send: &mut impl FnMut(NodeId, Vec<f64>)) {
        let xv = self.value(c.x);
        let (nb, nt, ni) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let wv = self.value(c.w_ih);
        let u = self.value(c.w_hh).data();
        let h3 = wv.shape()[1];
        let h = h3 / 3;
        let mut dxp = vec![0.0; nb * nt * h3];
        let mut du = vec![0.0; h * h3];
        let mut carry = vec![0.0; h];
        let mut dh = vec![0.0; h];
        let mut dhp = vec![0.0; h];
        let mut dgate = vec![0.0; h3];
        for b in 0..nb {
            let len = c.lengths[b];
            carry.iter_mut().for_each(|v| *v = 0.0);
            for s in (0..len).rev() {
                let t = if c.reverse { len - 1 - s } else { s };
                let row = b * nt + t;
                let base = row * h;
                let hp = &c.h_prev[base..base + h];
                let z = &c.z[base..base + h];
                let r = &c.r[base..base + h];
                let n = &c.n[base..base + h];
                for j in 0..h {
                    dh[j] = dout[base + j] + carry[j];
                    let dz = dh[j] * (hp[j] - n[j]);
                    let dn = dh[j] * (1.0 - z[j]);
                    dhp[j] = dh[j] * z[j];
                    dgate[j] = dz * z[j] * (1.0 - z[j]);
                    dgate[2 * h + j] = dn * (1.0 - n[j] * n[j]);
                }
                for i in 0..h {
                    let urow = &u[i * h3 + 2 * h..(i + 1) * h3];
                    let drh: f64 = urow.iter().zip(&dgate[2 * h..]).map(|(w, g)| w * g).sum();
                    let rh = r[i] * hp[i];
                    let durow = &mut du[i * h3 + 2 * h..(i + 1) * h3];
                    for (d, g) in durow.iter_mut().zip(&dgate[2 * h..]) {
                        *d += rh * g;
                    }
                    dhp[i] += drh * r[i];
                    let dr = drh * hp[i];
                    dgate[h + i] = dr * r[i] * (1.0 - r[i]);
                }
                for i in 0..h {
                    let urow = &u[i * h3..i * h3 + 2 * h];
                    let back: f64 = urow.iter().zip(&dgate[..2 * h]).map(|(w, g)| w * g).sum();
                    dhp[i] += back;
                    let durow = &mut du[i * h3..i * h3 + 2 * h];
                    for (d, g) in durow.iter_mut().zip(&dgate[..2 * h]) {
                        *d += hp[i] * g;
                    }
                }
                dxp[row * h3..(row + 1) * h3].copy_from_slice(&dgate);
                carry.copy_from_slice(&dhp);
            }
        }
        if self.needs(c.bias) {
            let mut db = vec![0.0; h3];
            for row in dxp.chunks(h3) {
                db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
            send(c.bias, db);
        }
        if self.needs(c.w_ih) {
            let mut dw = vec![0.0; ni * h3];
            gemm(ni, nb * nt, h3, xv.data(), true, &dxp, false, &mut dw, false);
            send(c.w_ih, dw);
        }
        if self.needs(c.x) {
            let mut dx = vec![0.0; nb * nt * ni];
            gemm(nb * nt, h3, ni, &dxp, false, wv.data(), true, &mut dx, false);
            send(c.x, dx);
        }
        send(c.w_hh, du);
    }
}

/// Clamped binary cross-entropy of a single probability.
pub fn bce_value(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    (p - y) / (p * (1.0 - p))
}

