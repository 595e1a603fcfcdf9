use super::tensor::{ensure_finite, Scalar, Tensor};
use crate::error::{Error, Result};

/// Batch-norm epsilon added to the variance.
pub const BN_EPS: f64 = 1e-5;

/// Floor applied to probabilities inside every cross-entropy.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel statistics of one train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used to update running statistics.
    pub var: Vec<T>,
}

#[derive(Clone, Copy, Debug)]
pub enum BatchNormMode<'a, T> {
    Train,
    Eval { running_mean: &'a [T], running_var: &'a [T] },
}

enum Op<T> {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    Conv2d { x: Var, k: Var, b: Var },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Relu { x: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Reshape { x: Var },
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, target: Vec<T> },
    Sum { x: Var },
    Scale { x: Var, factor: T },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    MeanOf { x: Var, indices: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are stored in creation order, which is a
/// topological order; `backward` walks them in exact reverse.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let requires_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated for `v` by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Clears accumulated gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        ensure_finite(name, value.data())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    /// `y = x W + b` for `x: [N, D_in]`, `W: [D_in, D_out]`, `b: [D_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::dim(
                "affine",
                format!("x {xs:?}, W {ws:?}, b {bs:?} do not conform"),
            ));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[1]);
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let bd = self.value(b).data();
        let mut out = vec![T::zero(); n * dout];
        for i in 0..n {
            let row = &mut out[i * dout..(i + 1) * dout];
            row.copy_from_slice(bd);
            for k in 0..din {
                let a = xd[i * din + k];
                if a == T::zero() {
                    continue;
                }
                let wrow = &wd[k * dout..(k + 1) * dout];
                for (o, &wv) in row.iter_mut().zip(wrow) {
                    *o += a * wv;
                }
            }
        }
        let value = Tensor::new([n, dout], out)?;
        self.push_checked("affine", value, Op::Affine { x, w, b }, &[x, w, b])
    }

    /// 3×3 cross-correlation, stride 1, zero padding 1.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (xs, ks, bs) = (self.value(x).shape(), self.value(k).shape(), self.value(b).shape());
        if xs.len() != 4 || ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::dim(
                "conv2d",
                format!("expected x [N,C,H,W] and 3x3 kernel, got x {xs:?}, k {ks:?}"),
            ));
        }
        if xs[1] != ks[1] || bs != [ks[0]] {
            return Err(Error::dim(
                "conv2d",
                format!("channel mismatch: x {xs:?}, k {ks:?}, b {bs:?}"),
            ));
        }
        let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ks[0];
        let xd = self.value(x).data();
        let kd = self.value(k).data();
        let bd = self.value(b).data();
        let plane = h * w;
        let mut out = vec![T::zero(); n * cout * plane];
        for ni in 0..n {
            for co in 0..cout {
                let o = &mut out[(ni * cout + co) * plane..(ni * cout + co + 1) * plane];
                o.iter_mut().for_each(|v| *v = bd[co]);
                for ci in 0..cin {
                    let inp = &xd[(ni * cin + ci) * plane..(ni * cin + ci + 1) * plane];
                    let kern = &kd[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                    conv_plane_accumulate(o, inp, kern, h, w);
                }
            }
        }
        let value = Tensor::new([n, cout, h, w], out)?;
        self.push_checked("conv2d", value, Op::Conv2d { x, k, b }, &[x, k, b])
    }

    /// 2×2 max pooling with stride 2; ties resolve to the first element in
    /// window order (row-major).
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() != 4 || !xs[2].is_multiple_of(2) || !xs[3].is_multiple_of(2) {
            return Err(Error::dim(
                "maxpool2d",
                format!("expected [N,C,H,W] with even H and W, got {xs:?}"),
            ));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out)?;
        self.push_checked("maxpool2d", value, Op::MaxPool2d { x, argmax }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > T::zero() { a } else { T::zero() }).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push_checked("relu", value, Op::Relu { x }, &[x])
    }

    /// Per-channel batch normalization over `[N, C, ...]`. Train mode
    /// normalizes by batch statistics and returns them for the caller to
    /// fold into running statistics.
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(Error::dim("batchnorm2d", format!("expected [N,C,...], got {xs:?}")));
        }
        let (n, c) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::dim(
                "batchnorm2d",
                format!(
                    "gamma {:?} / beta {:?} must be [{c}]",
                    self.value(gamma).shape(),
                    self.value(beta).shape()
                ),
            ));
        }
        let train = matches!(mode, BatchNormMode::Train);
        if train && n < 2 {
            return Err(Error::Config(
                "batch norm in train mode needs a batch of at least 2".into(),
            ));
        }
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let eps = T::from_f64(BN_EPS);
        let m = n * spatial;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        match mode {
            BatchNormMode::Train => {
                for ch in 0..c {
                    let mut s = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ch) * spatial;
                        s += xd[base..base + spatial].iter().copied().sum::<T>();
                    }
                    let mu = s / T::from_f64(m as f64);
                    let mut sq = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ch) * spatial;
                        for &v in &xd[base..base + spatial] {
                            sq += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = sq / T::from_f64(m as f64);
                }
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::dim("batchnorm2d", "running statistics length mismatch"));
                }
                mean.copy_from_slice(running_mean);
                var.copy_from_slice(running_var);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for ni in 0..n {
            for ch in 0..c {
                let base = (ni * c + ch) * spatial;
                for i in base..base + spatial {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gd[ch] * h + bd[ch];
                }
            }
        }
        let stats = train.then(|| {
            let correction = if m > 1 { T::from_f64(m as f64 / (m as f64 - 1.0)) } else { T::one() };
            BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|&v| v * correction).collect(),
            }
        });
        let value = Tensor::new(xs, out)?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        let out = self.push_checked("batchnorm2d", value, op, &[x, gamma, beta])?;
        Ok((out, stats))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().with_requires_grad(false).reshape(shape.to_vec())?;
        self.push_checked("reshape", value, Op::Reshape { x }, &[x])
    }

    /// Flattens `[N, ...]` to `[N, D]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape();
        let n = s[0];
        let d = s[1..].iter().product::<usize>();
        self.reshape(x, &[n, d])
    }

    /// Per-sample cross-entropy between `softmax(logits)` and a constant
    /// target distribution. Returns the `[N]` loss node and the softmax
    /// probabilities. The backward pass into the logits is `probs - target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor<T>) -> Result<(Var, Tensor<T>)> {
        let ls = self.value(logits).shape();
        if ls.len() != 2 || target.shape() != ls {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("logits {ls:?} vs target {:?}", target.shape()),
            ));
        }
        let (n, c) = (ls[0], ls[1]);
        for i in 0..n {
            let s: f64 = target.row(i).iter().map(|v| v.as_f64()).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "target row {i} sums to {s}, expected 1"
                )));
            }
        }
        let (probs, log_probs) = softmax_rows(self.value(logits).data(), n, c);
        let floor = T::from_f64(LOG_FLOOR.ln());
        let td = target.data();
        let loss: Vec<T> = (0..n)
            .map(|i| {
                let mut s = T::zero();
                for j in 0..c {
                    let t = td[i * c + j];
                    if t != T::zero() {
                        s -= t * log_probs[i * c + j].max(floor);
                    }
                }
                s
            })
            .collect();
        let probs_t = Tensor::new([n, c], probs.clone())?;
        let value = Tensor::new([n], loss)?;
        let op = Op::SoftmaxCrossEntropy {
            logits,
            probs,
            target: td.to_vec(),
        };
        let out = self.push_checked("softmax_cross_entropy", value, op, &[logits])?;
        Ok((out, probs_t))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let f = T::from_f64(factor);
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| a * f).collect())?;
        self.push_checked("scale", value, Op::Scale { x, factor: f }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("add", a, b, |x, y| x + y)?;
        self.push_checked("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("sub", a, b, |x, y| x - y)?;
        self.push_checked("sub", value, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip("mul", a, b, |x, y| x * y)?;
        self.push_checked("mul", value, Op::Mul { a, b }, &[a, b])
    }

    /// Arithmetic mean of the listed elements of a flat vector.
    pub fn mean_of(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let xd = self.value(x).data();
        if indices.is_empty() {
            return Err(Error::Validation("mean over an empty index set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= xd.len()) {
            return Err(Error::dim(
                "mean_of",
                format!("index {bad} out of range for {} elements", xd.len()),
            ));
        }
        let s: T = indices.iter().map(|&i| xd[i]).sum();
        let value = Tensor::scalar(s / T::from_f64(indices.len() as f64));
        let op = Op::MeanOf {
            x,
            indices: indices.to_vec(),
        };
        self.push_checked("mean_of", value, op, &[x])
    }

    fn zip(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Reverse pass from a scalar node. Gradient accumulators start at
    /// zero; a second call without [`Graph::reset_grads`] is a state error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; call reset_grads first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        self.grads = grads;
        self.backward_done = true;
        Ok(())
    }

    fn backward_node(&self, node: &Node<T>, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = nodes[w.0].value.shape()[1];
                if wants(*x) {
                    let wd = nodes[w.0].value.data();
                    let mut gx = take_grad(nodes, grads, *x);
                    for i in 0..n {
                        let grow = &gout[i * dout..(i + 1) * dout];
                        for k in 0..din {
                            let wrow = &wd[k * dout..(k + 1) * dout];
                            gx[i * din + k] += dot(grow, wrow);
                        }
                    }
                    grads[x.0] = Some(gx);
                }
                if wants(*w) {
                    let xd = nodes[x.0].value.data();
                    let mut gw = take_grad(nodes, grads, *w);
                    for i in 0..n {
                        let grow = &gout[i * dout..(i + 1) * dout];
                        for k in 0..din {
                            let a = xd[i * din + k];
                            if a == T::zero() {
                                continue;
                            }
                            for (o, &g) in gw[k * dout..(k + 1) * dout].iter_mut().zip(grow) {
                                *o += a * g;
                            }
                        }
                    }
                    grads[w.0] = Some(gw);
                }
                if wants(*b) {
                    let mut gb = take_grad(nodes, grads, *b);
                    for i in 0..n {
                        for (o, &g) in gb.iter_mut().zip(&gout[i * dout..(i + 1) * dout]) {
                            *o += g;
                        }
                    }
                    grads[b.0] = Some(gb);
                }
            }
            Op::Conv2d { x, k, b } => {
                let xs = nodes[x.0].value.shape();
                let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = nodes[k.0].value.shape()[0];
                let plane = h * w;
                if wants(*x) {
                    let kd = nodes[k.0].value.data();
                    let mut gx = take_grad(nodes, grads, *x);
                    for ni in 0..n {
                        for co in 0..cout {
                            let go = &gout[(ni * cout + co) * plane..(ni * cout + co + 1) * plane];
                            for ci in 0..cin {
                                let kern = &kd[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                                let gi = &mut gx[(ni * cin + ci) * plane..(ni * cin + ci + 1) * plane];
                                conv_plane_transpose_accumulate(gi, go, kern, h, w);
                            }
                        }
                    }
                    grads[x.0] = Some(gx);
                }
                if wants(*k) {
                    let xd = nodes[x.0].value.data();
                    let mut gk = take_grad(nodes, grads, *k);
                    for ni in 0..n {
                        for co in 0..cout {
                            let go = &gout[(ni * cout + co) * plane..(ni * cout + co + 1) * plane];
                            for ci in 0..cin {
                                let inp = &xd[(ni * cin + ci) * plane..(ni * cin + ci + 1) * plane];
                                let gkern = &mut gk[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                                conv_plane_kernel_grad(gkern, go, inp, h, w);
                            }
                        }
                    }
                    grads[k.0] = Some(gk);
                }
                if wants(*b) {
                    let mut gb = take_grad(nodes, grads, *b);
                    for ni in 0..n {
                        for (co, o) in gb.iter_mut().enumerate() {
                            let go = &gout[(ni * cout + co) * plane..(ni * cout + co + 1) * plane];
                            *o += go.iter().copied().sum::<T>();
                        }
                    }
                    grads[b.0] = Some(gb);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = take_grad(nodes, grads, *x);
                for (&src, &g) in argmax.iter().zip(gout) {
                    gx[src] += g;
                }
                grads[x.0] = Some(gx);
            }
            Op::Relu { x } => {
                let xd = nodes[x.0].value.data();
                let mut gx = take_grad(nodes, grads, *x);
                for ((o, &a), &g) in gx.iter_mut().zip(xd).zip(gout) {
                    if a > T::zero() {
                        *o += g;
                    }
                }
                grads[x.0] = Some(gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = nodes[x.0].value.shape();
                let (n, c) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let m = T::from_f64((n * spatial) as f64);
                let gd = nodes[gamma.0].value.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for ni in 0..n {
                    for ch in 0..c {
                        let base = (ni * c + ch) * spatial;
                        for i in base..base + spatial {
                            sum_dy[ch] += gout[i];
                            sum_dy_xhat[ch] += gout[i] * xhat[i];
                        }
                    }
                }
                if wants(*x) {
                    let mut gx = take_grad(nodes, grads, *x);
                    for ni in 0..n {
                        for ch in 0..c {
                            let base = (ni * c + ch) * spatial;
                            let scale = gd[ch] * inv_std[ch];
                            for i in base..base + spatial {
                                if *train {
                                    // dx = g*istd/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                                    gx[i] += scale / m * (m * gout[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]);
                                } else {
                                    gx[i] += scale * gout[i];
                                }
                            }
                        }
                    }
                    grads[x.0] = Some(gx);
                }
                if wants(*gamma) {
                    let mut gg = take_grad(nodes, grads, *gamma);
                    for ch in 0..c {
                        gg[ch] += sum_dy_xhat[ch];
                    }
                    grads[gamma.0] = Some(gg);
                }
                if wants(*beta) {
                    let mut gb = take_grad(nodes, grads, *beta);
                    for ch in 0..c {
                        gb[ch] += sum_dy[ch];
                    }
                    grads[beta.0] = Some(gb);
                }
            }
            Op::Reshape { x } => {
                let mut gx = take_grad(nodes, grads, *x);
                for (o, &g) in gx.iter_mut().zip(gout) {
                    *o += g;
                }
                grads[x.0] = Some(gx);
            }
            Op::SoftmaxCrossEntropy { logits, probs, target } => {
                let c = nodes[logits.0].value.shape()[1];
                let mut gl = take_grad(nodes, grads, *logits);
                for (i, &g) in gout.iter().enumerate() {
                    for j in i * c..(i + 1) * c {
                        gl[j] += g * (probs[j] - target[j]);
                    }
                }
                grads[logits.0] = Some(gl);
            }
            Op::Sum { x } => {
                let mut gx = take_grad(nodes, grads, *x);
                for o in gx.iter_mut() {
                    *o += gout[0];
                }
                grads[x.0] = Some(gx);
            }
            Op::Scale { x, factor } => {
                let mut gx = take_grad(nodes, grads, *x);
                for (o, &g) in gx.iter_mut().zip(gout) {
                    *o += g * *factor;
                }
                grads[x.0] = Some(gx);
            }
            Op::Add { a, b } | Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -T::one() } else { T::one() };
                if wants(*a) {
                    let mut ga = take_grad(nodes, grads, *a);
                    for (o, &g) in ga.iter_mut().zip(gout) {
                        *o += g;
                    }
                    grads[a.0] = Some(ga);
                }
                if wants(*b) {
                    let mut gb = take_grad(nodes, grads, *b);
                    for (o, &g) in gb.iter_mut().zip(gout) {
                        *o += sign * g;
                    }
                    grads[b.0] = Some(gb);
                }
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if wants(*a) {
                    let mut ga = take_grad(nodes, grads, *a);
                    for ((o, &g), &y) in ga.iter_mut().zip(gout).zip(bd) {
                        *o += g * y;
                    }
                    grads[a.0] = Some(ga);
                }
                if wants(*b) {
                    let mut gb = take_grad(nodes, grads, *b);
                    for ((o, &g), &y) in gb.iter_mut().zip(gout).zip(ad) {
                        *o += g * y;
                    }
                    grads[b.0] = Some(gb);
                }
            }
            Op::MeanOf { x, indices } => {
                let share = gout[0] / T::from_f64(indices.len() as f64);
                let mut gx = take_grad(nodes, grads, *x);
                for &i in indices {
                    gx[i] += share;
                }
                grads[x.0] = Some(gx);
            }
        }
    }
}

fn take_grad<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var) -> Vec<T> {
    grads[v.0]
        .take()
        .unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.numel()])
}

/// Row-wise softmax with max subtraction. Returns `(probs, log_probs)`.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], n: usize, c: usize) -> (Vec<T>, Vec<T>) {
    let mut probs = vec![T::zero(); n * c];
    let mut log_probs = vec![T::zero(); n * c];
    for i in 0..n {
        let row = &logits[i * c..(i + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (j, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            probs[i * c + j] = e;
            total += e;
        }
        let log_total = total.ln();
        for j in 0..c {
            probs[i * c + j] = probs[i * c + j] / total;
            log_probs[i * c + j] = row[j] - max - log_total;
        }
    }
    (probs, log_probs)
}

/// Valid output columns `[lo, hi)` for kernel column `kx` with padding 1.
#[inline]
/// Dot product with eight independent partial sums, so the loop
/// vectorizes; the summation order is fixed and hence deterministic.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x * y;
    }
    lanes.iter().fold(T::zero(), |acc, &l| acc + l) + s
}

fn col_range(kx: usize, w: usize) -> (usize, usize) {
    (if kx == 0 { 1 } else { 0 }, if kx == 2 { w - 1 } else { w })
}

fn conv_plane_accumulate<T: Scalar>(out: &mut [T], inp: &[T], kern: &[T], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let kv = kern[ky * 3 + kx];
            let (lo, hi) = col_range(kx, w);
            for oy in 0..h {
                let iy = oy + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                let irow = &inp[(iy - 1) * w..iy * w];
                let orow = &mut out[oy * w..(oy + 1) * w];
                for ox in lo..hi {
                    orow[ox] += kv * irow[ox + kx - 1];
                }
            }
        }
    }
}

fn conv_plane_transpose_accumulate<T: Scalar>(gin: &mut [T], gout: &[T], kern: &[T], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let kv = kern[ky * 3 + kx];
            let (lo, hi) = col_range(kx, w);
            for oy in 0..h {
                let iy = oy + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                let grow = &gout[oy * w..(oy + 1) * w];
                let irow = &mut gin[(iy - 1) * w..iy * w];
                for ox in lo..hi {
                    irow[ox + kx - 1] += kv * grow[ox];
                }
            }
        }
    }
}

fn conv_plane_kernel_grad<T: Scalar>(gkern: &mut [T], gout: &[T], inp: &[T], h: usize, w: usize) {
    for ky in 0..3 {
        for kx in 0..3 {
            let (lo, hi) = col_range(kx, w);
            let mut s = T::zero();
            for oy in 0..h {
                let iy = oy + ky;
                if iy < 1 || iy > h {
                    continue;
                }
                let grow = &gout[oy * w..(oy + 1) * w];
                let irow = &inp[(iy - 1) * w..iy * w];
                for ox in lo..hi {
                    s += grow[ox] * irow[ox + kx - 1];
                }
            }
            gkern[ky * 3 + kx] += s;
        }
    }
}
