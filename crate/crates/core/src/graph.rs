//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are stored in
//! construction order, every node's inputs precede it, and [`Graph::backward`]
//! walks the nodes exactly once in reverse construction order. All loops run
//! in a fixed order (parallel kernels are partitioned by output row), so
//! gradients are bitwise reproducible.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, matmul_tn_chunked, Scalar, Tensor};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op<T: Scalar> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    /// 3x3 cross-correlation, stride 1, zero padding 1. `cols` caches the
    /// im2col expansion of the input for the backward pass.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        cols: Vec<T>,
    },
    /// NCHW input plus a per-channel bias vector.
    ChannelBias {
        x: NodeId,
        bias: NodeId,
    },
    /// NxK input plus a length-K bias vector.
    RowBias {
        x: NodeId,
        bias: NodeId,
    },
    Relu {
        x: NodeId,
    },
    /// 2x2 window max, stride 2. `argmax` holds the flat input index that won
    /// each window (ties go to the first maximal element in row-major order).
    MaxPool2 {
        x: NodeId,
        argmax: Vec<u32>,
    },
    Reshape {
        x: NodeId,
    },
    LogSoftmax {
        x: NodeId,
    },
    /// Scalar mean over rows of -sum_k targets[i,k] * log_probs[i,k].
    /// Targets are constants; no gradient flows into them.
    SoftCrossEntropy {
        log_probs: NodeId,
        targets: Tensor<T>,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        factor: T,
    },
    Sum {
        x: NodeId,
    },
    Mean {
        x: NodeId,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
    op: Op<T>,
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        id
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Insert a leaf tensor. Gradients are accumulated for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Insert a non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the node populated by the last [`Graph::backward`] call.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, id: NodeId) -> Option<Tensor<T>> {
        self.nodes[id.0]
            .grad
            .as_ref()
            .map(|g| Tensor::new(self.nodes[id.0].value.shape(), g.clone()).expect("grad shape"))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0) {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let (m, k, n) = (va.dim(0), va.dim(1), vb.dim(1));
        let data = matmul_nn(va.data(), vb.data(), m, k, n);
        let out = Tensor::new(&[m, n], data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(out, rg, Op::Matmul { a, b }))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let (vx, vw) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
        if vx.ndim() != 4 || vw.ndim() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, kernel {:?}", vx.shape(), vw.shape()),
            ));
        }
        if vw.dim(2) != 3 || vw.dim(3) != 3 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {:?} is not 3x3", vw.shape()),
            ));
        }
        if vx.dim(1) != vw.dim(1) {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input channels {:?} vs kernel channels {:?}",
                    vx.shape(),
                    vw.shape()
                ),
            ));
        }
        let (n, c, h, w) = (vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3));
        let f = vw.dim(0);
        let cols = im2col(vx.data(), n, c, h, w);
        // cols is [N*H*W, C*9]; kernel [F,C,3,3] viewed as [F, C*9]
        let out_mat = matmul_nt(&cols, vw.data(), n * h * w, c * 9, f);
        let mut out = vec![T::zero(); n * f * h * w];
        let hw = h * w;
        for img in 0..n {
            for fo in 0..f {
                let dst = &mut out[img * f * hw + fo * hw..][..hw];
                let src = &out_mat[img * hw * f..(img + 1) * hw * f];
                for (pix, d) in dst.iter_mut().enumerate() {
                    *d = src[pix * f + fo];
                }
            }
        }
        let value = Tensor::new(&[n, f, h, w], out)?;
        let rg = self.requires(input) || self.requires(kernel);
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                kernel,
                cols,
            },
        ))
    }

    pub fn channel_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vx.ndim() != 4 || vb.ndim() != 1 || vb.dim(0) != vx.dim(1) {
            return Err(Error::shape(
                "channel_bias",
                format!("{:?} + {:?}", vx.shape(), vb.shape()),
            ));
        }
        let (n, c, h, w) = (vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3));
        let hw = h * w;
        let mut data = vx.data().to_vec();
        for img in 0..n {
            for ch in 0..c {
                let b = vb.data()[ch];
                for v in &mut data[img * c * hw + ch * hw..][..hw] {
                    *v = *v + b;
                }
            }
        }
        let value = Tensor::new(vx.shape(), data)?;
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(value, rg, Op::ChannelBias { x, bias }))
    }

    pub fn row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if vx.ndim() != 2 || vb.ndim() != 1 || vb.dim(0) != vx.dim(1) {
            return Err(Error::shape(
                "row_bias",
                format!("{:?} + {:?}", vx.shape(), vb.shape()),
            ));
        }
        let (n, k) = (vx.dim(0), vx.dim(1));
        let mut data = vx.data().to_vec();
        for row in 0..n {
            for col in 0..k {
                data[row * k + col] = data[row * k + col] + vb.data()[col];
            }
        }
        let value = Tensor::new(&[n, k], data)?;
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(value, rg, Op::RowBias { x, bias }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v.max(T::zero()));
        let rg = self.requires(x);
        self.push(value, rg, Op::Relu { x })
    }

    pub fn max_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        if vx.ndim() != 4 {
            return Err(Error::shape(
                "max_pool2",
                format!("expected NCHW, got {:?}", vx.shape()),
            ));
        }
        let (n, c, h, w) = (vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3));
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "max_pool2",
                format!("spatial dims must be even, got {:?}", vx.shape()),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; n * c * oh * ow];
        let data = vx.data();
        let mut oi = 0;
        for img in 0..n {
            for ch in 0..c {
                let base = img * c * h * w + ch * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best_idx = base + (2 * oy) * w + 2 * ox;
                        let mut best = data[best_idx];
                        // row-major window scan; strict > keeps the first max
                        for (dy, dx) in [(0usize, 1usize), (1, 0), (1, 1)] {
                            let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                        out[oi] = best;
                        argmax[oi] = best_idx as u32;
                        oi += 1;
                    }
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.requires(x);
        Ok(self.push(value, rg, Op::MaxPool2 { x, argmax }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.nodes[x.0].value.reshape(shape)?;
        let rg = self.requires(x);
        Ok(self.push(value, rg, Op::Reshape { x }))
    }

    /// Collapse an NCHW tensor to NxD, preserving the batch dimension.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        if vx.ndim() < 2 {
            return Err(Error::shape(
                "flatten",
                format!("need a batch dimension, got {:?}", vx.shape()),
            ));
        }
        let n = vx.dim(0);
        let rest = vx.numel() / n;
        self.reshape(x, &[n, rest])
    }

    /// Row-wise log-softmax with max-subtraction stabilization.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = &self.nodes[x.0].value;
        if vx.ndim() != 2 {
            return Err(Error::shape(
                "log_softmax",
                format!("expected NxK logits, got {:?}", vx.shape()),
            ));
        }
        if let Some(bad) = vx.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite logit {bad} passed to log_softmax"
            )));
        }
        let (n, k) = (vx.dim(0), vx.dim(1));
        let mut out = vec![T::zero(); n * k];
        for row in 0..n {
            let logits = &vx.data()[row * k..(row + 1) * k];
            let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut sum = T::zero();
            for &v in logits {
                sum = sum + (v - max).exp();
            }
            let log_z = max + sum.ln();
            for (o, &v) in out[row * k..(row + 1) * k].iter_mut().zip(logits) {
                *o = v - log_z;
            }
        }
        let value = Tensor::new(&[n, k], out)?;
        let rg = self.requires(x);
        Ok(self.push(value, rg, Op::LogSoftmax { x }))
    }

    /// Mean over rows of the cross-entropy between constant target rows and
    /// log-probability rows: -(1/N) sum_{i,k} targets[i,k] * log_probs[i,k].
    pub fn soft_cross_entropy(&mut self, log_probs: NodeId, targets: Tensor<T>) -> Result<NodeId> {
        let vp = &self.nodes[log_probs.0].value;
        if vp.ndim() != 2 || targets.shape() != vp.shape() {
            return Err(Error::shape(
                "soft_cross_entropy",
                format!("targets {:?} vs log_probs {:?}", targets.shape(), vp.shape()),
            ));
        }
        let n = vp.dim(0);
        let mut acc = T::zero();
        for (&t, &lp) in targets.data().iter().zip(vp.data()) {
            // 0 * -inf is defined as 0 here: a zero-probability target class
            // contributes nothing regardless of the prediction.
            if t != T::zero() {
                acc = acc - t * lp;
            }
        }
        let value = Tensor::scalar(acc / T::from_f64(n as f64));
        let rg = self.requires(log_probs);
        Ok(self.push(value, rg, Op::SoftCrossEntropy { log_probs, targets }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} + {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} * {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(va.shape(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, rg, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let value = self.nodes[x.0].value.map(|v| v * factor);
        let rg = self.requires(x);
        self.push(value, rg, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        let rg = self.requires(x);
        self.push(Tensor::scalar(s), rg, Op::Sum { x })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let numel = self.nodes[x.0].value.numel();
        let s: T = self.nodes[x.0].value.data().iter().copied().sum();
        let rg = self.requires(x);
        self.push(
            Tensor::scalar(s / T::from_f64(numel as f64)),
            rg,
            Op::Mean { x },
        )
    }

    /// Reverse-mode gradient accumulation from a scalar loss node.
    ///
    /// Every `requires_grad` node ends up with a gradient buffer; leaves not
    /// on the loss path keep zeros.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = self
            .nodes
            .iter()
            .map(|node| {
                if node.requires_grad {
                    Some(vec![T::zero(); node.value.numel()])
                } else {
                    None
                }
            })
            .collect();
        if let Some(g) = grads[loss.0].as_mut() {
            g[0] = T::one();
        }
        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_inputs(i, &g, &mut grads);
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate_inputs(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, contrib: &[T]) {
            if let Some(dst) = grads[id.0].as_mut() {
                for (d, &c) in dst.iter_mut().zip(contrib) {
                    *d = *d + c;
                }
            }
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (va.dim(0), va.dim(1), vb.dim(1));
                if grads[a.0].is_some() {
                    // dA = G * B^T ; B is [k,n] so pass it as the transposed factor
                    let da = matmul_nt(g, vb.data(), m, n, k);
                    add_into(grads, *a, &da);
                }
                if grads[b.0].is_some() {
                    // dB = A^T * G
                    let db = matmul_tn(va.data(), g, k, m, n);
                    add_into(grads, *b, &db);
                }
            }
            Op::Conv2d {
                input,
                kernel,
                cols,
            } => {
                let vx = &self.nodes[input.0].value;
                let vw = &self.nodes[kernel.0].value;
                let (n, c, h, w) = (vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3));
                let f = vw.dim(0);
                let hw = h * w;
                // regroup upstream grad from NCHW to [N*H*W, F]
                let mut g_mat = vec![T::zero(); n * hw * f];
                for img in 0..n {
                    for fo in 0..f {
                        let src = &g[img * f * hw + fo * hw..][..hw];
                        let dst = &mut g_mat[img * hw * f..(img + 1) * hw * f];
                        for (pix, &gv) in src.iter().enumerate() {
                            dst[pix * f + fo] = gv;
                        }
                    }
                }
                if grads[kernel.0].is_some() {
                    // dW [F, C*9] = G_mat^T * cols
                    let dw = matmul_tn_chunked(&g_mat, cols, f, n * hw, c * 9);
                    add_into(grads, *kernel, &dw);
                }
                if grads[input.0].is_some() {
                    // dcols [N*H*W, C*9] = G_mat * W, folded back onto the image
                    let dcols = matmul_nn(&g_mat, vw.data(), n * hw, f, c * 9);
                    let dx = col2im(&dcols, n, c, h, w);
                    add_into(grads, *input, &dx);
                }
            }
            Op::ChannelBias { x, bias } => {
                add_into(grads, *x, g);
                if grads[bias.0].is_some() {
                    let vx = &self.nodes[x.0].value;
                    let (n, c, h, w) = (vx.dim(0), vx.dim(1), vx.dim(2), vx.dim(3));
                    let hw = h * w;
                    let mut db = vec![T::zero(); c];
                    for img in 0..n {
                        for (ch, dv) in db.iter_mut().enumerate() {
                            for &gv in &g[img * c * hw + ch * hw..][..hw] {
                                *dv = *dv + gv;
                            }
                        }
                    }
                    add_into(grads, *bias, &db);
                }
            }
            Op::RowBias { x, bias } => {
                add_into(grads, *x, g);
                if grads[bias.0].is_some() {
                    let k = self.nodes[bias.0].value.dim(0);
                    let mut db = vec![T::zero(); k];
                    for row in g.chunks(k) {
                        for (dv, &gv) in db.iter_mut().zip(row) {
                            *dv = *dv + gv;
                        }
                    }
                    add_into(grads, *bias, &db);
                }
            }
            Op::Relu { x } => {
                if grads[x.0].is_some() {
                    let vx = &self.nodes[x.0].value;
                    let dx: Vec<T> = vx
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    add_into(grads, *x, &dx);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(dst) = grads[x.0].as_mut() {
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        dst[idx as usize] = dst[idx as usize] + gv;
                    }
                }
            }
            Op::Reshape { x } => add_into(grads, *x, g),
            Op::LogSoftmax { x } => {
                if grads[x.0].is_some() {
                    let out = &self.nodes[i].value;
                    let (n, k) = (out.dim(0), out.dim(1));
                    let mut dx = vec![T::zero(); n * k];
                    for row in 0..n {
                        let grow = &g[row * k..(row + 1) * k];
                        let orow = &out.data()[row * k..(row + 1) * k];
                        let gsum: T = grow.iter().copied().sum();
                        for col in 0..k {
                            dx[row * k + col] = grow[col] - orow[col].exp() * gsum;
                        }
                    }
                    add_into(grads, *x, &dx);
                }
            }
            Op::SoftCrossEntropy { log_probs, targets } => {
                if grads[log_probs.0].is_some() {
                    let n = targets.dim(0);
                    let scale = g[0] / T::from_f64(n as f64);
                    let dx: Vec<T> = targets.data().iter().map(|&t| -t * scale).collect();
                    add_into(grads, *log_probs, &dx);
                }
            }
            Op::Add { a, b } => {
                add_into(grads, *a, g);
                add_into(grads, *b, g);
            }
            Op::Mul { a, b } => {
                if grads[a.0].is_some() {
                    let vb = &self.nodes[b.0].value;
                    let da: Vec<T> = g.iter().zip(vb.data()).map(|(&gv, &bv)| gv * bv).collect();
                    add_into(grads, *a, &da);
                }
                if grads[b.0].is_some() {
                    let va = &self.nodes[a.0].value;
                    let db: Vec<T> = g.iter().zip(va.data()).map(|(&gv, &av)| gv * av).collect();
                    add_into(grads, *b, &db);
                }
            }
            Op::Scale { x, factor } => {
                if grads[x.0].is_some() {
                    let dx: Vec<T> = g.iter().map(|&gv| gv * *factor).collect();
                    add_into(grads, *x, &dx);
                }
            }
            Op::Sum { x } => {
                if let Some(dst) = grads[x.0].as_mut() {
                    for d in dst.iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            Op::Mean { x } => {
                if let Some(dst) = grads[x.0].as_mut() {
                    let gv = g[0] / T::from_f64(dst.len() as f64);
                    for d in dst.iter_mut() {
                        *d = *d + gv;
                    }
                }
            }
        }
    }
}

/// Expand an NCHW image batch into the [N*H*W, C*9] patch matrix for a 3x3
/// kernel with zero padding 1. Row r = (img*H + y)*W + x holds the patch
/// around (y, x), laid out as c*9 + ky*3 + kx.
fn im2col<T: Scalar>(x: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let c9 = c * 9;
    let mut cols = vec![T::zero(); n * hw * c9];
    for img in 0..n {
        for y in 0..h {
            let row_base = (img * hw + y * w) * c9;
            let interior_y = y >= 1 && y + 1 < h;
            for xx in 0..w {
                let dst = &mut cols[row_base + xx * c9..][..c9];
                if interior_y && xx >= 1 && xx + 1 < w {
                    for ch in 0..c {
                        let src = &x[(img * c + ch) * hw..];
                        for ky in 0..3 {
                            let s = &src[(y + ky - 1) * w + xx - 1..][..3];
                            dst[ch * 9 + ky * 3..][..3].copy_from_slice(s);
                        }
                    }
                } else {
                    for ch in 0..c {
                        let src = &x[(img * c + ch) * hw..];
                        for ky in 0..3 {
                            let iy = (y + ky).wrapping_sub(1);
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (xx + kx).wrapping_sub(1);
                                if ix < w {
                                    dst[ch * 9 + ky * 3 + kx] = src[iy * w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: fold a [N*H*W, C*9] gradient back onto NCHW.
fn col2im<T: Scalar>(dcols: &[T], n: usize, c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let c9 = c * 9;
    let mut dx = vec![T::zero(); n * c * hw];
    for img in 0..n {
        for y in 0..h {
            let row_base = (img * hw + y * w) * c9;
            for xx in 0..w {
                let src = &dcols[row_base + xx * c9..][..c9];
                for ch in 0..c {
                    let dst = &mut dx[(img * c + ch) * hw..][..hw];
                    for ky in 0..3 {
                        let iy = (y + ky).wrapping_sub(1);
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (xx + kx).wrapping_sub(1);
                            if ix < w {
                                dst[iy * w + ix] = dst[iy * w + ix] + src[ch * 9 + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}


#[cfg(test)]
impl<T: Scalar> Tensor<T> {
    /// Test helper: element of a 4-d tensor.
    fn at2_4(&self, a: usize, b: usize, c: usize, d: usize) -> T {
        let s = self.shape();
        self.data()[((a * s[1] + b) * s[2] + c) * s[3] + d]
    }
}
