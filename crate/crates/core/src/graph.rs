//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! the leaf nodes that asked for them. Parameters enter the tape through
//! [`Graph::bind_param`], which remembers which parameter set and slot the
//! leaf came from so the optimizer can collect gradients afterwards.

use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormEval {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
    },
    Concat(Vec<Var>),
    GroupSum {
        x: Var,
        groups: usize,
    },
    Add(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    BceMean {
        p: Var,
        target: Tensor<T>,
        eps: T,
    },
    MseMean {
        p: Var,
        target: Tensor<T>,
    },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Where a parameter leaf came from.
#[derive(Clone, Copy, Debug)]
struct Binding {
    set: u64,
    index: usize,
    var: Var,
}

/// Gradients of the leaves of a graph with respect to one scalar output.
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every slot of parameter set `set`, summed over all the
    /// places the parameter was bound. Slots never bound stay `None`.
    pub fn for_set(&self, graph: &Graph<T>, set: u64, slots: usize) -> Vec<Option<Tensor<T>>> {
        let mut out: Vec<Option<Tensor<T>>> = (0..slots).map(|_| None).collect();
        for b in graph.bindings.iter().filter(|b| b.set == set) {
            if let Some(g) = self.get(b.var) {
                match &mut out[b.index] {
                    Some(acc) => acc.add_assign(g),
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
        out
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bindings: Vec<Binding>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Output rows processed per im2col strip are capped so the column buffer
/// stays below this many elements.
const COL_BUDGET: usize = 1 << 21;

/// Per-axis bilinear sampling table (align-corners off).
fn bilinear_table<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    let ratio = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, T::from_f64_lossy(src - i0 as f64))
        })
        .collect()
}

/// Bilinear resize of every channel plane, align-corners off.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let ty = bilinear_table::<T>(h, out_h);
    let tx = bilinear_table::<T>(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let one = T::one();
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel_plane(s, ch);
            let dst = out.channel_plane_mut(s, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let r0 = &src[y0 * w..(y0 + 1) * w];
                let r1 = &src[y1 * w..(y1 + 1) * w];
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = r0[x0] * (one - lx) + r0[x1] * lx;
                    let bot = r1[x0] * (one - lx) + r1[x1] * lx;
                    dst[oy * out_w + ox] = top * (one - ly) + bot * ly;
                }
            }
        }
    }
    out
}

fn resize_bilinear_backward<T: Scalar>(dy: &Tensor<T>, in_shape: Shape) -> Tensor<T> {
    let [n, c, h, w] = in_shape;
    let [_, _, out_h, out_w] = dy.shape();
    let ty = bilinear_table::<T>(h, out_h);
    let tx = bilinear_table::<T>(w, out_w);
    let mut dx = Tensor::zeros(in_shape);
    let one = T::one();
    for s in 0..n {
        for ch in 0..c {
            let g = dy.channel_plane(s, ch);
            let dst = dx.channel_plane_mut(s, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let v = g[oy * out_w + ox];
                    let top = v * (one - ly);
                    let bot = v * ly;
                    dst[y0 * w + x0] = dst[y0 * w + x0] + top * (one - lx);
                    dst[y0 * w + x1] = dst[y0 * w + x1] + top * lx;
                    dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (one - lx);
                    dst[y1 * w + x1] = dst[y1 * w + x1] + bot * lx;
                }
            }
        }
    }
    dx
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn kdim(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn strip_rows(&self) -> usize {
        (COL_BUDGET / (self.kdim() * self.ow).max(1)).clamp(1, self.oh)
    }

    /// Fills `col` (`kdim x rows*ow`) for output rows `y0..y0+rows`.
    fn im2col<T: Scalar>(&self, x: &[T], y0: usize, rows: usize, col: &mut [T]) {
        let p = rows * self.ow;
        for c in 0..self.cin {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    for r in 0..rows {
                        let iy = (y0 + r + ky) as isize - self.pad as isize;
                        let out = &mut dst[r * self.ow..(r + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox + kx) as isize - self.pad as isize;
                            *o = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], y0: usize, rows: usize, dx: &mut [T]) {
        let p = rows * self.ow;
        for c in 0..self.cin {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    for r in 0..rows {
                        let iy = (y0 + r + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] = dst[ix as usize] + src[r * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn bind_param(&mut self, set: u64, index: usize, value: &Tensor<T>, trainable: bool) -> Var {
        let var = self.push(value.clone(), Op::Leaf, trainable);
        if trainable {
            self.bindings.push(Binding { set, index, var });
        }
        var
    }

    /// Stride-1 convolution with `pad` zeros on every side. `w` is
    /// `[out, in, k, k]`, `b` is `[1, out, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, cin, h, wd] = xv.shape();
        let [cout, wcin, k, k2] = wv.shape();
        assert_eq!(cin, wcin, "conv2d: input has {cin} channels, kernel expects {wcin}");
        assert_eq!(k, k2, "conv2d: square kernels only");
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            pad,
            oh: h + 2 * pad + 1 - k,
            ow: wd + 2 * pad + 1 - k,
        };
        let p_full = geom.oh * geom.ow;
        let kdim = geom.kdim();
        let mut out = Tensor::zeros([n, cout, geom.oh, geom.ow]);
        let per_in = cin * h * wd;
        let per_out = cout * p_full;
        let strip = geom.strip_rows();
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kdim * strip * geom.ow]
        };
        for s in 0..n {
            let xs = &xv.data()[s * per_in..(s + 1) * per_in];
            let os = &mut out.data_mut()[s * per_out..(s + 1) * per_out];
            if geom.is_pointwise() {
                T::gemm(cout, kdim, p_full, T::one(), wv.data(), (kdim as isize, 1), xs, (p_full as isize, 1), T::zero(), os, (p_full as isize, 1));
            } else {
                let mut y0 = 0;
                while y0 < geom.oh {
                    let rows = strip.min(geom.oh - y0);
                    let p = rows * geom.ow;
                    geom.im2col(xs, y0, rows, &mut col[..kdim * p]);
                    T::gemm(cout, kdim, p, T::one(), wv.data(), (kdim as isize, 1), &col[..kdim * p], (p as isize, 1), T::zero(), &mut os[y0 * geom.ow..], (p_full as isize, 1));
                    y0 += rows;
                }
            }
            if let Some(b) = b {
                let bv = self.nodes[b.0].value.data();
                for (co, plane) in os.chunks_mut(p_full).enumerate() {
                    for v in plane {
                        *v = *v + bv[co];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { x, w, b, pad }, rg)
    }

    /// Batch normalisation using the statistics of the current batch.
    /// Returns the output together with the per-channel batch mean and
    /// unbiased variance for running-statistics updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> (Var, Vec<T>, Vec<T>) {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let m = n * h * w;
        let mf = T::from_usize(m).unwrap();
        let g = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..n {
                acc = acc + xv.channel_plane(s, ch).iter().copied().sum::<T>();
            }
            mean[ch] = acc / mf;
            let mut sq = T::zero();
            for s in 0..n {
                for &v in xv.channel_plane(s, ch) {
                    let d = v - mean[ch];
                    sq = sq + d * d;
                }
            }
            var[ch] = sq / mf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        for s in 0..n {
            for ch in 0..c {
                let src = xv.channel_plane(s, ch);
                let xh = xhat.channel_plane_mut(s, ch);
                for (d, &v) in xh.iter_mut().zip(src) {
                    *d = (v - mean[ch]) * inv_std[ch];
                }
                let xh = xhat.channel_plane(s, ch).to_vec();
                for (o, v) in out.channel_plane_mut(s, ch).iter_mut().zip(xh) {
                    *o = g[ch] * v + bt[ch];
                }
            }
        }
        let unbiased: Vec<T> = if m > 1 {
            var.iter().map(|&v| v * mf / T::from_usize(m - 1).unwrap()).collect()
        } else {
            var.clone()
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let y = self.push(
            out,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat: xhat.into_vec(),
                inv_std,
            },
            rg,
        );
        (y, mean, unbiased)
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[T], var: &[T], eps: T) -> Var {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = Tensor::zeros(xv.shape());
        for s in 0..n {
            for ch in 0..c {
                let scale = g[ch] * inv_std[ch];
                let shift = bt[ch] - mean[ch] * scale;
                for (o, &v) in out.channel_plane_mut(s, ch).iter_mut().zip(xv.channel_plane(s, ch)) {
                    *o = v * scale + shift;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
            rg,
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut argmax = vec![0u32; n * c * oh * ow];
        let mut k = 0;
        for s in 0..n {
            for ch in 0..c {
                let src = xv.channel_plane(s, ch);
                let dst = out.channel_plane_mut(s, ch);
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (2 * oy) * w + 2 * ox;
                        for idx in [(2 * oy) * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1] {
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                        dst[oy * ow + ox] = src[best];
                        argmax[k] = best as u32;
                        k += 1;
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::MaxPool2 { x, argmax }, rg)
    }

    /// Bilinear resize to `out_h x out_w`.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let out = resize_bilinear(self.value(x), out_h, out_w);
        let rg = self.rg(x);
        self.push(out, Op::Resize { x }, rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let [n, _, h, w] = self.value(parts[0]).shape();
        let total: usize = parts.iter().map(|&p| self.value(p).channels()).sum();
        let mut out = Tensor::zeros([n, total, h, w]);
        for s in 0..n {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!([pv.batch(), pv.height(), pv.width()], [n, h, w], "concat: shape mismatch");
                for ch in 0..pv.channels() {
                    let src = pv.channel_plane(s, ch).to_vec();
                    out.channel_plane_mut(s, off + ch).copy_from_slice(&src);
                }
                off += pv.channels();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    /// Sums each run of `channels / groups` consecutive channels into one
    /// output channel.
    pub fn group_sum(&mut self, x: Var, groups: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        assert!(groups > 0 && c % groups == 0, "group_sum: {c} channels not divisible by {groups}");
        let size = c / groups;
        let mut out = Tensor::zeros([n, groups, h, w]);
        for s in 0..n {
            for g in 0..groups {
                let mut acc = vec![T::zero(); h * w];
                for i in 0..size {
                    for (a, &v) in acc.iter_mut().zip(xv.channel_plane(s, g * size + i)) {
                        *a = *a + v;
                    }
                }
                out.channel_plane_mut(s, g).copy_from_slice(&acc);
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::GroupSum { x, groups }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against a constant
    /// target, with `p` clamped to `[eps, 1 - eps]` before the logarithms.
    pub fn bce_mean(&mut self, p: Var, target: &Tensor<T>, eps: T) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.shape(), target.shape(), "bce: shape mismatch");
        let one = T::one();
        let total: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let pc = p.max(eps).min(one - eps);
                -(t * pc.ln() + (one - t) * (one - pc).ln())
            })
            .sum();
        let out = Tensor::scalar(total / T::from_usize(pv.len()).unwrap());
        let rg = self.rg(p);
        self.push(
            out,
            Op::BceMean {
                p,
                target: target.clone(),
                eps,
            },
            rg,
        )
    }

    pub fn mse_mean(&mut self, p: Var, target: &Tensor<T>) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.shape(), target.shape(), "mse: shape mismatch");
        let total: T = pv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let out = Tensor::scalar(total / T::from_usize(pv.len()).unwrap());
        let rg = self.rg(p);
        self.push(
            out,
            Op::MseMean {
                p,
                target: target.clone(),
            },
            rg,
        )
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut total = T::zero();
        for &(v, w) in terms {
            let val = self.value(v);
            assert_eq!(val.len(), 1, "weighted_sum expects scalars");
            total = total + w * val.data()[0];
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Reverse pass from the scalar `loss`. Only leaves keep their gradients.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar node");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }
        // Non-leaf entries were taken during the sweep.
        Gradients { leaves: grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let one = T::one();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, pad } => self.conv_backward(*x, *w, *b, *pad, dy, grads),
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, h, wd] = dy.shape();
                let plane = h * wd;
                let m = T::from_usize(n * plane).unwrap();
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * plane;
                        for (d, xh) in dy.channel_plane(s, ch).iter().zip(&xhat[off..off + plane]) {
                            dgamma[ch] = dgamma[ch] + *d * *xh;
                            dbeta[ch] = dbeta[ch] + *d;
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(dy.shape());
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * plane;
                            let k = g[ch] * inv_std[ch] / m;
                            let src = dy.channel_plane(s, ch);
                            let xh = &xhat[off..off + plane];
                            for ((o, &d), &xv) in dx.channel_plane_mut(s, ch).iter_mut().zip(src).zip(xh) {
                                *o = k * (m * d - dbeta[ch] - xv * dgamma[ch]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
                self.accumulate(grads, *gamma, Tensor::from_vec([1, c, 1, 1], dgamma));
                self.accumulate(grads, *beta, Tensor::from_vec([1, c, 1, 1], dbeta));
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let [n, c, _, _] = dy.shape();
                let xv = self.value(*x);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = Tensor::zeros(dy.shape());
                for s in 0..n {
                    for ch in 0..c {
                        let src = dy.channel_plane(s, ch);
                        for (&d, &v) in src.iter().zip(xv.channel_plane(s, ch)) {
                            dgamma[ch] = dgamma[ch] + d * (v - mean[ch]) * inv_std[ch];
                            dbeta[ch] = dbeta[ch] + d;
                        }
                        let k = g[ch] * inv_std[ch];
                        for (o, &d) in dx.channel_plane_mut(s, ch).iter_mut().zip(src) {
                            *o = d * k;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, Tensor::from_vec([1, c, 1, 1], dgamma));
                self.accumulate(grads, *beta, Tensor::from_vec([1, c, 1, 1], dbeta));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut dx = dy.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let mut dx = dy.clone();
                for (d, &s) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d = *d * s * (one - s);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MaxPool2 { x, argmax } => {
                let xs = self.value(*x).shape();
                let mut dx = Tensor::zeros(xs);
                let [n, c, _, _] = dy.shape();
                let mut k = 0;
                for s in 0..n {
                    for ch in 0..c {
                        let src = dy.channel_plane(s, ch).to_vec();
                        let dst = dx.channel_plane_mut(s, ch);
                        for v in src {
                            let idx = argmax[k] as usize;
                            dst[idx] = dst[idx] + v;
                            k += 1;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Resize { x } => {
                let dx = resize_bilinear_backward(dy, self.value(*x).shape());
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(parts) => {
                let n = dy.batch();
                let mut off = 0;
                for &p in parts {
                    let ps = self.value(p).shape();
                    if self.rg(p) {
                        let mut dp = Tensor::zeros(ps);
                        for s in 0..n {
                            for ch in 0..ps[1] {
                                dp.channel_plane_mut(s, ch).copy_from_slice(dy.channel_plane(s, off + ch));
                            }
                        }
                        self.accumulate(grads, p, dp);
                    }
                    off += ps[1];
                }
            }
            Op::GroupSum { x, groups } => {
                let xs = self.value(*x).shape();
                let size = xs[1] / groups;
                let mut dx = Tensor::zeros(xs);
                for s in 0..xs[0] {
                    for g in 0..*groups {
                        for i in 0..size {
                            dx.channel_plane_mut(s, g * size + i).copy_from_slice(dy.channel_plane(s, g));
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, dy.map(|d| d * s));
            }
            Op::BceMean { p, target, eps } => {
                let pv = self.value(*p);
                let k = dy.data()[0] / T::from_usize(pv.len()).unwrap();
                let mut dp = Tensor::zeros(pv.shape());
                for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                    let pc = p.max(*eps).min(one - *eps);
                    *d = k * (pc - t) / (pc * (one - pc));
                }
                self.accumulate(grads, *p, dp);
            }
            Op::MseMean { p, target } => {
                let pv = self.value(*p);
                let k = dy.data()[0] * T::from_f64_lossy(2.0) / T::from_usize(pv.len()).unwrap();
                let mut dp = Tensor::zeros(pv.shape());
                for ((d, &p), &t) in dp.data_mut().iter_mut().zip(pv.data()).zip(target.data()) {
                    *d = k * (p - t);
                }
                self.accumulate(grads, *p, dp);
            }
            Op::WeightedSum(terms) => {
                let d = dy.data()[0];
                for &(v, w) in terms {
                    self.accumulate(grads, v, Tensor::scalar(d * w));
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, b: Option<Var>, pad: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, cin, h, wd] = xv.shape();
        let [cout, _, k, _] = wv.shape();
        let geom = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            pad,
            oh: dy.height(),
            ow: dy.width(),
        };
        let p_full = geom.oh * geom.ow;
        let kdim = geom.kdim();
        let per_in = cin * h * wd;
        let per_out = cout * p_full;
        let need_w = self.rg(w);
        let need_x = self.rg(x);
        let mut dw = Tensor::zeros(wv.shape());
        let mut dx = if need_x { Tensor::zeros(xv.shape()) } else { Tensor::zeros([0, 0, 0, 0]) };
        let strip = geom.strip_rows();
        let mut col = if geom.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kdim * strip * geom.ow]
        };
        for s in 0..n {
            let xs = &xv.data()[s * per_in..(s + 1) * per_in];
            let gs = &dy.data()[s * per_out..(s + 1) * per_out];
            if geom.is_pointwise() {
                if need_w {
                    T::gemm(cout, p_full, kdim, T::one(), gs, (p_full as isize, 1), xs, (1, p_full as isize), T::one(), dw.data_mut(), (kdim as isize, 1));
                }
                if need_x {
                    let dxs = &mut dx.data_mut()[s * per_in..(s + 1) * per_in];
                    T::gemm(kdim, cout, p_full, T::one(), wv.data(), (1, kdim as isize), gs, (p_full as isize, 1), T::one(), dxs, (p_full as isize, 1));
                }
                continue;
            }
            let mut y0 = 0;
            while y0 < geom.oh {
                let rows = strip.min(geom.oh - y0);
                let p = rows * geom.ow;
                let g_strip = &gs[y0 * geom.ow..];
                if need_w {
                    geom.im2col(xs, y0, rows, &mut col[..kdim * p]);
                    T::gemm(cout, p, kdim, T::one(), g_strip, (p_full as isize, 1), &col[..kdim * p], (1, p as isize), T::one(), dw.data_mut(), (kdim as isize, 1));
                }
                if need_x {
                    T::gemm(kdim, cout, p, T::one(), wv.data(), (1, kdim as isize), g_strip, (p_full as isize, 1), T::zero(), &mut col[..kdim * p], (p as isize, 1));
                    let dxs = &mut dx.data_mut()[s * per_in..(s + 1) * per_in];
                    geom.col2im(&col[..kdim * p], y0, rows, dxs);
                }
                y0 += rows;
            }
        }
        if need_x {
            self.accumulate(grads, x, dx);
        }
        if need_w {
            self.accumulate(grads, w, dw);
        }
        if let Some(b) = b {
            if self.rg(b) {
                let mut db = vec![T::zero(); cout];
                for s in 0..n {
                    for (co, d) in db.iter_mut().enumerate() {
                        *d = *d + dy.channel_plane(s, co).iter().copied().sum::<T>();
                    }
                }
                self.accumulate(grads, b, Tensor::from_vec([1, cout, 1, 1], db));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(sum(w_i * out_i))/d(input) for a
    /// single-op graph builder.
    fn check_op(shape: Shape, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x0 = random(shape, &mut rng);
        let proj = {
            let mut g = Graph::new();
            let x = g.input(x0.clone());
            let y = build(&mut g, x);
            random(g.value(y).shape(), &mut rng)
        };
        let dot = |t: &Tensor<f64>| t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
        // 0.5 * M * mse(y, y0 - proj) has gradient proj with respect to y at y0.
        let analytic = {
            let mut g = Graph::new();
            let x = g.input(x0.clone());
            let y = build(&mut g, x);
            let m = g.value(y).len() as f64;
            let mut target = g.value(y).clone();
            for (v, p) in target.data_mut().iter_mut().zip(proj.data()) {
                *v -= p;
            }
            let l = g.mse_mean(y, &target);
            let l = g.weighted_sum(&[(l, 0.5 * m)]);
            g.backward(l).get(x).unwrap().clone()
        };
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let mut gp = Graph::new();
            let vp = gp.input(xp);
            let yp = build(&mut gp, vp);
            let mut gm = Graph::new();
            let vm = gm.input(xm);
            let ym = build(&mut gm, vm);
            let num = (dot(gp.value(yp)) - dot(gm.value(ym))) / (2.0 * h);
            let a = analytic.data()[i];
            assert!((num - a).abs() <= 1e-6 * (1.0 + num.abs()), "elem {i}: numeric {num} analytic {a}");
        }
    }

    #[test]
    fn conv3x3_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random([3, 2, 3, 3], &mut rng);
        let b = random([1, 3, 1, 1], &mut rng);
        check_op([2, 2, 5, 4], |g, x| {
            let w = g.constant(w.clone());
            let b = g.constant(b.clone());
            g.conv2d(x, w, Some(b), 1)
        });
    }

    #[test]
    fn conv1x1_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random([2, 3, 1, 1], &mut rng);
        check_op([1, 3, 3, 3], |g, x| {
            let w = g.constant(w.clone());
            g.conv2d(x, w, None, 0)
        });
    }

    #[test]
    fn conv_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 2, 4, 4], &mut rng);
        check_op([3, 2, 3, 3], |g, w| {
            let x = g.constant(x.clone());
            g.conv2d(x, w, None, 1)
        });
    }

    #[test]
    fn batch_norm_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gamma = random([1, 3, 1, 1], &mut rng);
        let beta = random([1, 3, 1, 1], &mut rng);
        check_op([2, 3, 3, 2], |g, x| {
            let ga = g.constant(gamma.clone());
            let be = g.constant(beta.clone());
            g.batch_norm_train(x, ga, be, 1e-5).0
        });
    }

    #[test]
    fn pooling_resize_and_channel_ops_gradients() {
        check_op([1, 2, 4, 6], |g, x| g.max_pool2(x));
        check_op([1, 2, 3, 4], |g, x| g.resize(x, 7, 5));
        check_op([1, 2, 4, 4], |g, x| g.resize(x, 8, 8));
        check_op([1, 4, 2, 2], |g, x| g.group_sum(x, 2));
        check_op([1, 2, 2, 2], |g, x| {
            let s = g.sigmoid(x);
            let r = g.relu(x);
            let a = g.affine(s, -2.0, 0.5);
            let c = g.concat(&[a, r, x]);
            let d = g.add(c, c);
            g.relu(d)
        });
    }

    #[test]
    fn bce_gradient_matches_closed_form() {
        let mut g = Graph::<f64>::new();
        let p = g.input(Tensor::from_vec([1, 1, 1, 2], vec![0.3, 0.8]));
        let t = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 0.0]);
        let l = g.bce_mean(p, &t, 1e-7);
        let expected = -(0.3f64.ln() + 0.2f64.ln()) / 2.0;
        assert!((g.value(l).data()[0] - expected).abs() < 1e-12);
        let grad = g.backward(l);
        let d = grad.get(p).unwrap().data();
        assert!((d[0] - (-1.0 / 0.3) / 2.0).abs() < 1e-9);
        assert!((d[1] - (1.0 / 0.2) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random([1, 2, 5, 3], &mut rng);
        assert!(resize_bilinear(&x, 5, 3).max_abs_diff(&x) < 1e-15);
        let c = Tensor::<f64>::full([1, 1, 4, 4], 0.25);
        let up = resize_bilinear(&c, 16, 12);
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn large_conv_uses_strips_consistently() {
        // 1x1 input channel, enough rows to need several strips.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = COL_BUDGET / (9 * 8) + 3;
        let x = Tensor::<f32>::from_vec([1, 1, h, 8], (0..h * 8).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w = Tensor::<f32>::from_vec([1, 1, 3, 3], vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w);
        let y = g.conv2d(xv, wv, None, 1);
        assert_eq!(g.value(y), &x);
    }
}
