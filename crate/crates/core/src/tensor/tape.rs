//! Wengert-style tape: forward ops append nodes to an arena, backward walks
//! it in reverse. One training step owns one tape.

use super::kernels;
use super::{Scalar, Tensor4, TensorError};

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        y: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Add {
        x: NodeId,
        y: NodeId,
    },
    ConcatChannels {
        x: NodeId,
        y: NodeId,
    },
    ChannelScale {
        x: NodeId,
        w: NodeId,
    },
    ChannelGate {
        x: NodeId,
        s: NodeId,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    Dense {
        v: NodeId,
        w: NodeId,
        b: NodeId,
    },
    PixelUnshuffle {
        x: NodeId,
        r: usize,
    },
    PixelShuffle {
        x: NodeId,
        r: usize,
    },
    AvgPool2 {
        x: NodeId,
    },
    Sum {
        x: NodeId,
    },
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor4<F>,
    op: Op,
    tracked: bool,
}

/// Recorded computation graph. Values live in the tape arena; every op
/// returns a [`NodeId`] into it.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enter a value into the graph. Gradients are produced only for leaves
    /// created with `requires_grad` (and interior nodes downstream of them).
    pub fn leaf(&mut self, value: Tensor4<F>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor4<F> {
        &self.nodes[id.0].value
    }

    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn push(&mut self, value: Tensor4<F>, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<(), TensorError> {
        if id.0 >= self.nodes.len() {
            return Err(TensorError::DanglingNode {
                id: id.0,
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn tracked_any(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    /// Cross-correlation with zero padding. Kernel layout is
    /// `(Cout, Cin, k, k)`, bias `(1, Cout, 1, 1)`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let out = kernels::conv2d_fwd(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        let mut ids = vec![x, w];
        ids.extend(b);
        let tracked = self.tracked_any(&ids);
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, tracked))
    }

    /// Transposed convolution (the adjoint of [`Tape::conv2d`] with the same
    /// kernel). Maps `(B, Cout, Ho, Wo)` back to `(B, Cin, H, W)`.
    pub fn conv2d_transpose(
        &mut self,
        y: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        self.check(y)?;
        self.check(w)?;
        let [b_n, co_n, ho, wo] = self.value(y).dims();
        let [wco, ci_n, k, kw] = self.value(w).dims();
        if k != kw {
            return Err(TensorError::ShapeMismatch {
                left: self.value(w).dims(),
                right: [wco, ci_n, k, k],
            });
        }
        if wco != co_n {
            return Err(TensorError::ChannelMismatch {
                input: co_n,
                kernel: wco,
            });
        }
        if stride == 0 {
            return Err(TensorError::ZeroStride);
        }
        let h = kernels::conv_transpose_extent(ho, k, stride, pad);
        let wd = kernels::conv_transpose_extent(wo, k, stride, pad);
        let out = kernels::conv2d_grad_input(
            self.value(y),
            self.value(w),
            [b_n, ci_n, h, wd],
            stride,
            pad,
        );
        let tracked = self.tracked_any(&[y, w]);
        Ok(self.push(out, Op::ConvTranspose2d { y, w, stride, pad }, tracked))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = kernels::relu_fwd(self.value(x));
        let tracked = self.nodes[x.0].tracked;
        self.push(out, Op::Relu { x }, tracked)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let out = kernels::sigmoid_fwd(self.value(x));
        let tracked = self.nodes[x.0].tracked;
        self.push(out, Op::Sigmoid { x }, tracked)
    }

    pub fn add(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, TensorError> {
        self.check(x)?;
        self.check(y)?;
        let out = kernels::add_fwd(self.value(x), self.value(y))?;
        let tracked = self.tracked_any(&[x, y]);
        Ok(self.push(out, Op::Add { x, y }, tracked))
    }

    /// Channel-wise concatenation, `x`'s channels first.
    pub fn concat_channels(&mut self, x: NodeId, y: NodeId) -> Result<NodeId, TensorError> {
        self.check(x)?;
        self.check(y)?;
        let out = kernels::concat_channels_fwd(self.value(x), self.value(y))?;
        let tracked = self.tracked_any(&[x, y]);
        Ok(self.push(out, Op::ConcatChannels { x, y }, tracked))
    }

    /// Multiply channel `i` of every batch element by `w[i]`; `w` is a
    /// `(1, C, 1, 1)` vector shared across the batch.
    pub fn channel_scale(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, TensorError> {
        self.check(x)?;
        self.check(w)?;
        let out = kernels::channel_scale_fwd(self.value(x), self.value(w))?;
        let tracked = self.tracked_any(&[x, w]);
        Ok(self.push(out, Op::ChannelScale { x, w }, tracked))
    }

    /// Per-batch channel gate: `out[b,c,·,·] = x[b,c,·,·] * s[b,c,0,0]`.
    pub fn channel_gate(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, TensorError> {
        self.check(x)?;
        self.check(s)?;
        let out = kernels::channel_gate_fwd(self.value(x), self.value(s))?;
        let tracked = self.tracked_any(&[x, s]);
        Ok(self.push(out, Op::ChannelGate { x, s }, tracked))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        let out = kernels::global_avg_pool_fwd(self.value(x));
        let tracked = self.nodes[x.0].tracked;
        self.push(out, Op::GlobalAvgPool { x }, tracked)
    }

    /// Affine map per batch: `v` is `(B, C, 1, 1)`, `w` is `(Cout, C, 1, 1)`,
    /// `b` is `(1, Cout, 1, 1)`.
    pub fn dense(&mut self, v: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.check(v)?;
        self.check(w)?;
        self.check(b)?;
        let out = kernels::dense_fwd(self.value(v), self.value(w), self.value(b))?;
        let tracked = self.tracked_any(&[v, w, b]);
        Ok(self.push(out, Op::Dense { v, w, b }, tracked))
    }

    pub fn pixel_unshuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId, TensorError> {
        self.check(x)?;
        let out = kernels::pixel_unshuffle_fwd(self.value(x), r)?;
        let tracked = self.nodes[x.0].tracked;
        Ok(self.push(out, Op::PixelUnshuffle { x, r }, tracked))
    }

    pub fn pixel_shuffle(&mut self, x: NodeId, r: usize) -> Result<NodeId, TensorError> {
        self.check(x)?;
        let out = kernels::pixel_shuffle_fwd(self.value(x), r)?;
        let tracked = self.nodes[x.0].tracked;
        Ok(self.push(out, Op::PixelShuffle { x, r }, tracked))
    }

    /// Non-overlapping 2x2 mean pool.
    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.check(x)?;
        let out = kernels::avg_pool2_fwd(self.value(x))?;
        let tracked = self.nodes[x.0].tracked;
        Ok(self.push(out, Op::AvgPool2 { x }, tracked))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let out = kernels::sum_fwd(self.value(x));
        let tracked = self.nodes[x.0].tracked;
        self.push(out, Op::Sum { x }, tracked)
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        self.check(pred)?;
        self.check(target)?;
        let out = kernels::mse_fwd(self.value(pred), self.value(target))?;
        let tracked = self.tracked_any(&[pred, target]);
        Ok(self.push(out, Op::MseLoss { pred, target }, tracked))
    }

    /// Reverse accumulation from a scalar loss. Gradients are produced for
    /// every tracked node on a path from a `requires_grad` leaf to the loss;
    /// untracked nodes receive none. Accumulation order is the reverse of
    /// recording order, so results are deterministic.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap<F>, TensorError> {
        self.check(loss)?;
        let loss_node = &self.nodes[loss.0];
        if loss_node.value.dims() != [1, 1, 1, 1] {
            return Err(TensorError::NonScalarLoss {
                dims: loss_node.value.dims(),
            });
        }
        let mut grads: Vec<Option<Tensor4<F>>> = vec![None; self.nodes.len()];
        if !loss_node.tracked {
            return Ok(GradientMap { grads });
        }
        grads[loss.0] = Some(Tensor4::ones([1, 1, 1, 1]));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].tracked {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(GradientMap { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor4<F>>], id: NodeId, contrib: Tensor4<F>) {
        if !self.nodes[id.0].tracked {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                    *e += *c;
                }
            }
            slot => *slot = Some(contrib),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor4<F>, grads: &mut [Option<Tensor4<F>>]) {
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                if self.nodes[x.0].tracked {
                    let dx =
                        kernels::conv2d_grad_input(g, self.value(w), self.value(x).dims(), stride, pad);
                    self.accum(grads, x, dx);
                }
                if self.nodes[w.0].tracked {
                    let dw = kernels::conv2d_grad_weight(
                        g,
                        self.value(x),
                        self.value(w).dims(),
                        stride,
                        pad,
                    );
                    self.accum(grads, w, dw);
                }
                if let Some(b) = b {
                    if self.nodes[b.0].tracked {
                        self.accum(grads, b, kernels::conv2d_grad_bias(g));
                    }
                }
            }
            Op::ConvTranspose2d { y, w, stride, pad } => {
                if self.nodes[y.0].tracked {
                    let dy = kernels::conv2d_fwd(g, self.value(w), None, stride, pad)
                        .expect("transpose adjoint shares forward geometry");
                    self.accum(grads, y, dy);
                }
                if self.nodes[w.0].tracked {
                    let dw = kernels::conv_transpose_grad_weight(
                        self.value(y),
                        g,
                        self.value(w).dims(),
                        stride,
                        pad,
                    );
                    self.accum(grads, w, dw);
                }
            }
            Op::Relu { x } => {
                let dx = kernels::relu_bwd(g, self.value(x));
                self.accum(grads, x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = kernels::sigmoid_bwd(g, &self.nodes[i].value);
                self.accum(grads, x, dx);
            }
            Op::Add { x, y } => {
                if self.nodes[x.0].tracked {
                    self.accum(grads, x, g.clone());
                }
                if self.nodes[y.0].tracked {
                    self.accum(grads, y, g.clone());
                }
            }
            Op::ConcatChannels { x, y } => {
                let (dx, dy) =
                    kernels::concat_channels_bwd(g, self.value(x).dims()[1], self.value(y).dims()[1]);
                self.accum(grads, x, dx);
                self.accum(grads, y, dy);
            }
            Op::ChannelScale { x, w } => {
                let (dx, dw) = kernels::channel_scale_bwd(g, self.value(x), self.value(w));
                self.accum(grads, x, dx);
                self.accum(grads, w, dw);
            }
            Op::ChannelGate { x, s } => {
                let (dx, ds) = kernels::channel_gate_bwd(g, self.value(x), self.value(s));
                self.accum(grads, x, dx);
                self.accum(grads, s, ds);
            }
            Op::GlobalAvgPool { x } => {
                let dx = kernels::global_avg_pool_bwd(g, self.value(x).dims());
                self.accum(grads, x, dx);
            }
            Op::Dense { v, w, b } => {
                let (dv, dw, db) = kernels::dense_bwd(g, self.value(v), self.value(w));
                self.accum(grads, v, dv);
                self.accum(grads, w, dw);
                self.accum(grads, b, db);
            }
            Op::PixelUnshuffle { x, r } => {
                let dx = kernels::pixel_shuffle_fwd(g, r).expect("inverse of recorded unshuffle");
                self.accum(grads, x, dx);
            }
            Op::PixelShuffle { x, r } => {
                let dx = kernels::pixel_unshuffle_fwd(g, r).expect("inverse of recorded shuffle");
                self.accum(grads, x, dx);
            }
            Op::AvgPool2 { x } => {
                let dx = kernels::avg_pool2_bwd(g, self.value(x).dims());
                self.accum(grads, x, dx);
            }
            Op::Sum { x } => {
                let dx = Tensor4::filled(self.value(x).dims(), g.item());
                self.accum(grads, x, dx);
            }
            Op::MseLoss { pred, target } => {
                let (dp, dt) = kernels::mse_bwd(g.item(), self.value(pred), self.value(target));
                if self.nodes[pred.0].tracked {
                    self.accum(grads, pred, dp);
                }
                if self.nodes[target.0].tracked {
                    self.accum(grads, target, dt);
                }
            }
        }
    }
}

/// Gradients keyed by node id, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct GradientMap<F> {
    grads: Vec<Option<Tensor4<F>>>,
}

impl<F: Scalar> GradientMap<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor4<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], data: &[f64]) -> Tensor4<f64> {
        Tensor4::new(dims, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_kernel_scales() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = tape.leaf(t([1, 1, 1, 1], &[2.0]), false);
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor4::from_fn([1, 1, 4, 4], |_, _, h, w| (h * 4 + w) as f64),
            false,
        );
        let mut k = Tensor4::zeros([1, 1, 3, 3]);
        k.set(0, 0, 1, 1, 1.0);
        let w = tape.leaf(k, false);
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        assert!(tape.value(y).bit_eq(tape.value(x)));
    }

    #[test]
    fn conv_strided_sum_block() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let w = tape.leaf(Tensor4::ones([1, 1, 2, 2]), false);
        let y = tape.conv2d(x, w, None, 2, 0).unwrap();
        assert_eq!(tape.value(y).dims(), [1, 1, 1, 1]);
        assert_eq!(tape.value(y).item(), 10.0);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::zeros([1, 2, 4, 4]), false);
        let w = tape.leaf(Tensor4::zeros([1, 3, 3, 3]), false);
        let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
        assert_eq!(err, TensorError::ChannelMismatch { input: 2, kernel: 3 });
    }

    #[test]
    fn conv_rejects_oversize_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::zeros([1, 1, 2, 2]), false);
        let w = tape.leaf(Tensor4::zeros([1, 1, 5, 5]), false);
        let err = tape.conv2d(x, w, None, 1, 0).unwrap_err();
        assert_eq!(err, TensorError::KernelTooLarge { kernel: 5, padded: 2 });
    }

    #[test]
    fn conv_with_bias_and_pad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::ones([1, 1, 2, 2]), false);
        let w = tape.leaf(Tensor4::ones([2, 1, 3, 3]), false);
        let b = tape.leaf(t([1, 2, 1, 1], &[10.0, 20.0]), false);
        let y = tape.conv2d(x, w, Some(b), 1, 1).unwrap();
        // Corner of an all-ones 2x2 sees 4 inputs under a 3x3 kernel.
        assert_eq!(tape.value(y).at(0, 0, 0, 0), 14.0);
        assert_eq!(tape.value(y).at(0, 1, 0, 0), 24.0);
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 1, 3], &[-1.0, 0.0, 2.0]), true);
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_positive_passthrough() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 1, 3], &[0.5, 1.0, 7.0]), false);
        let y = tape.relu(x);
        assert!(tape.value(y).bit_eq(tape.value(x)));
    }

    #[test]
    fn sigmoid_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 1, 3], &[0.0, 40.0, -40.0]), false);
        let y = tape.sigmoid(x);
        let out = tape.value(y).data();
        assert_eq!(out[0], 0.5);
        assert!((out[1] - 1.0).abs() < 1e-15);
        assert!(out[2] > 0.0 && out[2] < 1e-15);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn add_and_concat() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_fn([1, 2, 4, 4], |_, c, h, w| (c + h + w) as f64), true);
        let z = tape.leaf(Tensor4::zeros([1, 2, 4, 4]), true);
        let s = tape.add(x, z).unwrap();
        assert!(tape.value(s).bit_eq(tape.value(x)));

        let y3 = tape.leaf(Tensor4::ones([1, 3, 4, 4]), false);
        let c = tape.concat_channels(s, y3).unwrap();
        assert_eq!(tape.value(c).dims(), [1, 5, 4, 4]);

        // add routes the same upstream gradient to both inputs
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().bit_eq(grads.get(z).unwrap()));
    }

    #[test]
    fn concat_rejects_mismatched_spatial() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor4::zeros([1, 1, 4, 4]), false);
        let y = tape.leaf(Tensor4::zeros([1, 1, 2, 2]), false);
        assert!(tape.concat_channels(x, y).is_err());
    }

    #[test]
    fn channel_scale_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::from_fn([1, 2, 2, 2], |_, c, h, w| (1 + c + h + w) as f64), false);
        let ones = tape.leaf(Tensor4::ones([1, 2, 1, 1]), false);
        let y = tape.channel_scale(x, ones).unwrap();
        assert!(tape.value(y).bit_eq(tape.value(x)));

        let w = tape.leaf(Tensor4::channel_vec(vec![2.0, 0.0]), false);
        let y2 = tape.channel_scale(x, w).unwrap();
        assert_eq!(tape.value(y2).at(0, 0, 0, 0), 2.0);
        assert_eq!(tape.value(y2).at(0, 1, 1, 1), 0.0);

        let bad = tape.leaf(Tensor4::channel_vec(vec![1.0; 3]), false);
        assert!(matches!(
            tape.channel_scale(x, bad).unwrap_err(),
            TensorError::WeightCount { channels: 2, weights: 3 }
        ));
    }

    #[test]
    fn global_avg_pool_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]), true);
        let y = tape.global_avg_pool(x);
        assert_eq!(tape.value(y).item(), 4.0);

        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);

        let c = tape.leaf(Tensor4::filled([2, 3, 4, 4], 1.5), false);
        let yc = tape.global_avg_pool(c);
        assert!(tape.value(yc).data().iter().all(|v| *v == 1.5));
    }

    #[test]
    fn dense_examples() {
        let mut tape = Tape::new();
        let v = tape.leaf(t([1, 2, 1, 1], &[1.0, 2.0]), false);
        let ident = tape.leaf(t([2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]), false);
        let zero_b = tape.leaf(Tensor4::zeros([1, 2, 1, 1]), false);
        let y = tape.dense(v, ident, zero_b).unwrap();
        assert!(tape.value(y).bit_eq(tape.value(v)));

        let w = tape.leaf(t([2, 2, 1, 1], &[1.0, 1.0, 1.0, -1.0]), false);
        let y2 = tape.dense(v, w, zero_b).unwrap();
        assert_eq!(tape.value(y2).data(), &[3.0, -1.0]);
    }

    #[test]
    fn pixel_shuffle_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::<f64>::ones([1, 1, 4, 4]), false);
        let u = tape.pixel_unshuffle(x, 2).unwrap();
        assert_eq!(tape.value(u).dims(), [1, 4, 2, 2]);

        let q = tape.leaf(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), false);
        let uq = tape.pixel_unshuffle(q, 2).unwrap();
        assert_eq!(tape.value(uq).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.value(uq).dims(), [1, 4, 1, 1]);

        let back = tape.pixel_shuffle(uq, 2).unwrap();
        assert!(tape.value(back).bit_eq(tape.value(q)));

        assert!(tape.pixel_unshuffle(q, 3).is_err());
    }

    #[test]
    fn avg_pool2_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(t([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), true);
        let y = tape.avg_pool2(x).unwrap();
        assert_eq!(tape.value(y).item(), 2.5);

        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);

        let odd = tape.leaf(Tensor4::<f64>::ones([1, 1, 3, 3]), false);
        assert!(matches!(
            tape.avg_pool2(odd).unwrap_err(),
            TensorError::OddSpatial { .. }
        ));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::<f64>::from_fn([1, 2, 2, 2], |_, c, h, w| (c * h + w) as f64), true);
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 8]);
    }

    #[test]
    fn backward_channel_scale_weight_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::<f64>::ones([1, 1, 2, 2]), false);
        let w = tape.leaf(Tensor4::channel_vec(vec![3.0]), true);
        let y = tape.channel_scale(x, w).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor4::<f64>::ones([1, 1, 2, 2]), true);
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, TensorError::NonScalarLoss { .. }));
    }

    #[test]
    fn backward_rejects_dangling_node() {
        let tape = Tape::<f64>::new();
        let err = tape.backward(NodeId(3)).unwrap_err();
        assert_eq!(err, TensorError::DanglingNode { id: 3, len: 0 });
    }

    #[test]
    fn mse_on_tape() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor4::<f64>::filled([1, 1, 2, 2], 1.5), true);
        let t0 = tape.leaf(Tensor4::ones([1, 1, 2, 2]), false);
        let loss = tape.mse_loss(p, t0).unwrap();
        assert!((tape.value(loss).item() - 0.25).abs() < 1e-15);
        let grads = tape.backward(loss).unwrap();
        // d/dp mean((p-t)^2) = 2*(p-t)/n = 2*0.5/4
        assert_eq!(grads.get(p).unwrap().data(), &[0.25; 4]);
        assert!(grads.get(t0).is_none());
    }

    #[test]
    fn forward_is_pure_and_reproducible() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor4::<f32>::from_fn([2, 3, 16, 16], |b, c, h, w| {
                    ((b * 31 + c * 17 + h * 5 + w) % 13) as f32 * 0.37 - 1.0
                }),
                false,
            );
            let w = tape.leaf(
                Tensor4::from_fn([4, 3, 3, 3], |o, i, h, wd| {
                    ((o * 7 + i * 3 + h + wd) % 5) as f32 * 0.21 - 0.4
                }),
                false,
            );
            let y = tape.conv2d(x, w, None, 1, 1).unwrap();
            let z = tape.relu(y);
            let p = tape.avg_pool2(z).unwrap();
            tape.value(p).clone()
        };
        let a = run();
        let b = run();
        assert!(a.bit_eq(&b));
        assert!(a.all_finite());
    }
}
