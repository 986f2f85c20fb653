//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation performed on [`Var`]s. Node ids are
//! assigned in creation order, so walking the tape backwards is a valid
//! topological order. Nodes whose inputs all lack gradients keep no backward
//! closure at all.

use std::cell::RefCell;
use std::sync::Arc;

use crate::tensor::{gemm, Float, Tensor};

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }

    /// Gradient of `v`, or zeros shaped like it when nothing flowed back.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Arc::new(t), false)
    }

    pub fn constant_shared(&self, t: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_leaf(t, false)
    }

    /// A leaf that receives a gradient.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push_leaf(Arc::new(t), true)
    }

    pub fn leaf_shared(&self, t: Arc<Tensor<T>>) -> Var<'_, T> {
        self.push_leaf(t, true)
    }

    pub fn scalar(&self, v: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(v))
    }

    fn push(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = ids.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value: Arc::new(value),
            parents: ids,
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Back-propagate from a single-element `root`, seeding with 1.
    pub fn backward(&self, root: Var<'_, T>) -> Gradients<T> {
        let seed = Tensor::full(root.value().shape(), T::one());
        self.backward_with(root, seed)
    }

    /// Back-propagate from `root` with an explicit output gradient.
    pub fn backward_with(&self, root: Var<'_, T>, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        assert_eq!(seed.shape(), nodes[root.id].value.shape(), "seed shape");
        grads[root.id] = Some(seed);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].as_ref() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let parent_grads = backward(g, &needs);
            // Intermediate grads are dropped once consumed; leaves keep theirs.
            if !node.parents.is_empty() {
                grads[id] = None;
            }
            for ((&p, pg), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // Keep gradients only for leaves and the root.
        for (id, node) in nodes.iter().enumerate() {
            if !node.parents.is_empty() && id != root.id {
                grads[id] = None;
            }
        }
        Gradients { grads }
    }
}

/// Axis-aligned square crop of one image of a batch, resampled to a fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub image: usize,
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

/// Bilinear sample taps (index pairs and weights) along one axis.
fn resample_taps(start: usize, size: usize, out: usize) -> Vec<(usize, usize, f64)> {
    let scale = size as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (size - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(size - 1);
            let w1 = src - i0 as f64;
            (start + i0, start + i1, w1)
        })
        .collect()
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, T> {
        self.tape.constant_shared(self.value())
    }

    fn unary(self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<'t, T> {
        let x = self.value();
        let y = Arc::new(x.map(f));
        let y2 = y.clone();
        self.tape.push((*y).clone(), &[self], move |g, _| {
            let mut out = g.clone();
            for ((o, &xv), &yv) in out.data_mut().iter_mut().zip(x.data()).zip(y2.data()) {
                *o *= df(xv, yv);
            }
            vec![Some(out)]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add shape mismatch");
        let y = a.zip_map(&b, |x, y| x + y);
        self.tape
            .push(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "sub shape mismatch");
        let y = a.zip_map(&b, |x, y| x - y);
        self.tape
            .push(y, &[self, other], |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul shape mismatch");
        let y = a.zip_map(&b, |x, y| x * y);
        self.tape.push(y, &[self, other], move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&b, |g, b| g * b)),
                need[1].then(|| g.zip_map(&a, |g, a| g * a)),
            ]
        })
    }

    pub fn neg(self) -> Var<'t, T> {
        self.mul_scalar(-T::one())
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v + c);
        self.tape.push(y, &[self], |g, _| vec![Some(g.clone())])
    }

    pub fn mul_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v * c);
        self.tape.push(y, &[self], move |g, _| vec![Some(g.map(|v| v * c))])
    }

    /// Multiply by a single-element var.
    pub fn scale_by(self, s: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let sv = s.value();
        assert_eq!(sv.numel(), 1, "scale_by expects a scalar");
        let c = sv.item();
        let y = x.map(|v| v * c);
        self.tape.push(y, &[self, s], move |g, need| {
            vec![
                need[0].then(|| g.map(|v| v * c)),
                need[1].then(|| {
                    let dot: T = g.data().iter().zip(x.data()).map(|(&a, &b)| a * b).sum();
                    Tensor::new(sv.shape(), vec![dot]).unwrap()
                }),
            ]
        })
    }

    pub fn square(self) -> Var<'t, T> {
        let two = T::lit(2.0);
        self.unary(|v| v * v, move |x, _| two * x)
    }

    pub fn powf(self, p: f64) -> Var<'t, T> {
        let pt = T::lit(p);
        let pm1 = T::lit(p - 1.0);
        self.unary(move |v| v.powf(pt), move |x, _| pt * x.powf(pm1))
    }

    pub fn sqrt(self) -> Var<'t, T> {
        let half = T::lit(0.5);
        self.unary(|v| v.sqrt(), move |_, y| half / y)
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t, T> {
        let s = T::lit(slope);
        self.unary(
            move |v| if v > T::zero() { v } else { v * s },
            move |x, _| if x > T::zero() { T::one() } else { s },
        )
    }

    /// `ln(1 + e^x)` in the overflow-free form.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(softplus, |x, _| sigmoid(x))
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let y = Tensor::scalar(x.sum());
        self.tape
            .push(y, &[self], move |g, _| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::from_usize(self.value().numel().max(1)).unwrap();
        self.sum().mul_scalar(T::one() / n)
    }

    /// Sum over the trailing axis.
    pub fn sum_last(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let last = *shape.last().expect("sum_last on scalar");
        let out_shape = &shape[..shape.len() - 1];
        let data: Vec<T> = x.data().chunks(last.max(1)).map(|c| c.iter().copied().sum()).collect();
        let y = Tensor::new(out_shape, data).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut out = Vec::with_capacity(shape.iter().product());
            for &gv in g.data() {
                out.extend(std::iter::repeat_n(gv, last));
            }
            vec![Some(Tensor::new(&shape, out).unwrap())]
        })
    }

    /// Mean over the trailing axis.
    pub fn mean_last(self) -> Var<'t, T> {
        let last = *self.value().shape().last().expect("mean_last on scalar");
        self.sum_last()
            .mul_scalar(T::one() / T::from_usize(last.max(1)).unwrap())
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let y = (*x).clone().reshape(shape).expect("reshape");
        self.tape
            .push(y, &[self], move |g, _| vec![Some(g.clone().reshape(&old).unwrap())])
    }

    /// Batched or plain matrix product with optional transposes.
    ///
    /// Rank-2 operands multiply directly; rank-3 operands share a leading
    /// batch axis.
    pub fn matmul_ex(self, other: Var<'t, T>, ta: bool, tb: bool) -> Var<'t, T> {
        let a = self.value();
        let b = other.value();
        let (batch, ar, ac, br, bc) = match (a.shape(), b.shape()) {
            ([ar, ac], [br, bc]) => (1, *ar, *ac, *br, *bc),
            ([n, ar, ac], [m, br, bc]) if n == m => (*n, *ar, *ac, *br, *bc),
            (sa, sb) => panic!("matmul rank mismatch {:?} {:?}", sa, sb),
        };
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul inner dim mismatch");
        let (asz, bsz, csz) = (ar * ac, br * bc, m * n);
        let mut out = vec![T::zero(); batch * csz];
        for i in 0..batch {
            gemm(
                ta,
                tb,
                m,
                n,
                k,
                &a.data()[i * asz..(i + 1) * asz],
                &b.data()[i * bsz..(i + 1) * bsz],
                T::zero(),
                &mut out[i * csz..(i + 1) * csz],
            );
        }
        let shape: Vec<usize> = if a.rank() == 3 { vec![batch, m, n] } else { vec![m, n] };
        let y = Tensor::new(&shape, out).unwrap();
        self.tape.push(y, &[self, other], move |g, need| {
            let gd = g.data();
            let da = need[0].then(|| {
                let mut da = vec![T::zero(); batch * asz];
                for i in 0..batch {
                    let gi = &gd[i * csz..(i + 1) * csz];
                    let bi = &b.data()[i * bsz..(i + 1) * bsz];
                    let di = &mut da[i * asz..(i + 1) * asz];
                    match (ta, tb) {
                        (false, false) => gemm(false, true, m, k, n, gi, bi, T::zero(), di),
                        (false, true) => gemm(false, false, m, k, n, gi, bi, T::zero(), di),
                        (true, false) => gemm(false, true, k, m, n, bi, gi, T::zero(), di),
                        (true, true) => gemm(true, true, k, m, n, bi, gi, T::zero(), di),
                    }
                }
                Tensor::new(a.shape(), da).unwrap()
            });
            let db = need[1].then(|| {
                let mut db = vec![T::zero(); batch * bsz];
                for i in 0..batch {
                    let gi = &gd[i * csz..(i + 1) * csz];
                    let ai = &a.data()[i * asz..(i + 1) * asz];
                    let di = &mut db[i * bsz..(i + 1) * bsz];
                    match (ta, tb) {
                        (false, false) => gemm(true, false, k, n, m, ai, gi, T::zero(), di),
                        (true, false) => gemm(false, false, k, n, m, ai, gi, T::zero(), di),
                        (false, true) => gemm(true, false, n, k, m, gi, ai, T::zero(), di),
                        (true, true) => gemm(true, true, n, k, m, gi, ai, T::zero(), di),
                    }
                }
                Tensor::new(b.shape(), db).unwrap()
            });
            vec![da, db]
        })
    }

    pub fn matmul(self, other: Var<'t, T>) -> Var<'t, T> {
        self.matmul_ex(other, false, false)
    }

    /// `x · wᵀ + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(self, w: Var<'t, T>, b: Option<Var<'t, T>>) -> Var<'t, T> {
        let y = self.matmul_ex(w, false, true);
        match b {
            Some(b) => y.add_row_vector(b),
            None => y,
        }
    }

    /// `x[r, c] + b[c]` for `x: [R, C]`.
    pub fn add_row_vector(self, b: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let bv = b.value();
        let c = bv.numel();
        assert_eq!(x.shape().last(), Some(&c), "row vector length");
        let mut y = (*x).clone();
        for row in y.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.tape.push(y, &[self, b], move |g, need| {
            let db = need[1].then(|| {
                let mut acc = vec![T::zero(); c];
                for row in g.data().chunks(c) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::new(&[c], acc).unwrap()
            });
            vec![Some(g.clone()), db]
        })
    }

    /// 2-D convolution, `x: [N, C, H, W]`, `w: [O, C, kh, kw]`, optional bias `[O]`.
    pub fn conv2d(self, w: Var<'t, T>, b: Option<Var<'t, T>>, stride: usize, pad: usize) -> Var<'t, T> {
        let x = self.value();
        let wv = w.value();
        let [n, c, h, wd] = x.shape() else {
            panic!("conv2d input must be rank 4, got {:?}", x.shape())
        };
        let [o, c2, kh, kw] = wv.shape() else {
            panic!("conv2d weight must be rank 4")
        };
        let (n, c, h, wd, o, kh, kw) = (*n, *c, *h, *wd, *o, *kh, *kw);
        assert_eq!(c, *c2, "conv2d channel mismatch");
        assert!(
            h + 2 * pad >= kh && wd + 2 * pad >= kw,
            "conv2d kernel larger than input"
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geo = ConvGeom {
            n,
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let ckk = c * kh * kw;
        let l = ho * wo;
        let col = Arc::new(im2col(x.data(), &geo));
        let mut tmp = vec![T::zero(); o * n * l];
        gemm(false, false, o, n * l, ckk, wv.data(), &col, T::zero(), &mut tmp);
        let bias = b.map(|b| b.value());
        let mut out = vec![T::zero(); n * o * l];
        for ni in 0..n {
            for oi in 0..o {
                let bb = bias.as_ref().map_or(T::zero(), |b| b.data()[oi]);
                let src = &tmp[oi * n * l + ni * l..oi * n * l + (ni + 1) * l];
                let dst = &mut out[(ni * o + oi) * l..(ni * o + oi + 1) * l];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bb;
                }
            }
        }
        let y = Tensor::new(&[n, o, ho, wo], out).unwrap();
        let w_shape = wv.shape().to_vec();
        let x_shape = x.shape().to_vec();
        let mut parents = vec![self, w];
        if let Some(b) = b {
            parents.push(b);
        }
        let has_bias = b.is_some();
        self.tape.push(y, &parents, move |g, need| {
            // dtmp[o, n*l] from g[n, o, l]
            let gd = g.data();
            let mut dtmp = vec![T::zero(); o * n * l];
            for ni in 0..n {
                for oi in 0..o {
                    dtmp[oi * n * l + ni * l..oi * n * l + (ni + 1) * l]
                        .copy_from_slice(&gd[(ni * o + oi) * l..(ni * o + oi + 1) * l]);
                }
            }
            let dx = need[0].then(|| {
                let mut dcol = vec![T::zero(); ckk * n * l];
                gemm(true, false, ckk, n * l, o, wv.data(), &dtmp, T::zero(), &mut dcol);
                Tensor::new(&x_shape, col2im(&dcol, &geo)).unwrap()
            });
            let dw = need[1].then(|| {
                let mut dw = vec![T::zero(); o * ckk];
                gemm(false, true, o, ckk, n * l, &dtmp, &col, T::zero(), &mut dw);
                Tensor::new(&w_shape, dw).unwrap()
            });
            let mut res = vec![dx, dw];
            if has_bias {
                res.push(need[2].then(|| {
                    let db: Vec<T> = dtmp.chunks(n * l).map(|r| r.iter().copied().sum()).collect();
                    Tensor::new(&[o], db).unwrap()
                }));
            }
            res
        })
    }

    /// `x[n, c, ..] * s[n, c]`.
    pub fn scale_channels(self, s: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let sv = s.value();
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(sv.shape(), &[n, c], "scale_channels shape");
        let inner = x.numel() / (n * c).max(1);
        let mut y = (*x).clone();
        for (blk, &sc) in y.data_mut().chunks_mut(inner).zip(sv.data()) {
            for v in blk {
                *v *= sc;
            }
        }
        let s_shape = sv.shape().to_vec();
        self.tape.push(y, &[self, s], move |g, need| {
            let dx = need[0].then(|| {
                let mut dx = g.clone();
                for (blk, &sc) in dx.data_mut().chunks_mut(inner).zip(sv.data()) {
                    for v in blk {
                        *v *= sc;
                    }
                }
                dx
            });
            let ds = need[1].then(|| {
                let d: Vec<T> = g
                    .data()
                    .chunks(inner)
                    .zip(x.data().chunks(inner))
                    .map(|(gb, xb)| gb.iter().zip(xb).map(|(&a, &b)| a * b).sum())
                    .collect();
                Tensor::new(&s_shape, d).unwrap()
            });
            vec![dx, ds]
        })
    }

    /// `x[n, c, ..] + b[n, c]`.
    pub fn shift_channels(self, b: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let bv = b.value();
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(bv.shape(), &[n, c], "shift_channels shape");
        let inner = x.numel() / (n * c).max(1);
        let mut y = (*x).clone();
        for (blk, &bb) in y.data_mut().chunks_mut(inner).zip(bv.data()) {
            for v in blk {
                *v += bb;
            }
        }
        let b_shape = bv.shape().to_vec();
        self.tape.push(y, &[self, b], move |g, need| {
            let db = need[1].then(|| {
                let d: Vec<T> = g.data().chunks(inner).map(|blk| blk.iter().copied().sum()).collect();
                Tensor::new(&b_shape, d).unwrap()
            });
            vec![Some(g.clone()), db]
        })
    }

    /// `x[n, c, ..] + b[c]`.
    pub fn bias_channels(self, b: Var<'t, T>) -> Var<'t, T> {
        let x = self.value();
        let bv = b.value();
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(bv.numel(), c, "bias_channels length");
        let inner = x.numel() / (n * c).max(1);
        let mut y = (*x).clone();
        for (i, blk) in y.data_mut().chunks_mut(inner).enumerate() {
            let bb = bv.data()[i % c];
            for v in blk {
                *v += bb;
            }
        }
        let b_shape = bv.shape().to_vec();
        self.tape.push(y, &[self, b], move |g, need| {
            let db = need[1].then(|| {
                let mut d = vec![T::zero(); c];
                for (i, blk) in g.data().chunks(inner).enumerate() {
                    d[i % c] += blk.iter().copied().sum();
                }
                Tensor::new(&b_shape, d).unwrap()
            });
            vec![Some(g.clone()), db]
        })
    }

    /// Rows of a `[M, C]` table selected by `idx`, giving `[idx.len(), C]`.
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t, T> {
        let t = self.value();
        let (m, c) = (t.dim(0), t.dim(1));
        let idx = idx.to_vec();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < m, "gather_rows index {} out of range {}", i, m);
            data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
        }
        let y = Tensor::new(&[idx.len(), c], data).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); m * c];
            for (r, &i) in idx.iter().enumerate() {
                for (a, &v) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                    *a += v;
                }
            }
            vec![Some(Tensor::new(&[m, c], d).unwrap())]
        })
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "global_avg_pool expects rank 4");
        self.reshape(&[s[0], s[1], s[2] * s[3]]).mean_last()
    }

    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    pub fn upsample2x(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = *x.shape() else {
            panic!("upsample2x expects rank 4")
        };
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for yy in 0..h2 {
                for xx in 0..w2 {
                    dst[yy * w2 + xx] = src[(yy / 2) * w + xx / 2];
                }
            }
        }
        let y = Tensor::new(&[n, c, h2, w2], out).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); n * c * h * w];
            for (src, dst) in g.data().chunks(h2 * w2).zip(d.chunks_mut(h * w)) {
                for yy in 0..h2 {
                    for xx in 0..w2 {
                        dst[(yy / 2) * w + xx / 2] += src[yy * w2 + xx];
                    }
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        })
    }

    /// 2×2 average pooling of `[N, C, H, W]` (H, W even).
    pub fn avg_pool2x2(self) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = *x.shape() else {
            panic!("avg_pool2x2 expects rank 4")
        };
        let (h2, w2) = (h / 2, w / 2);
        let q = T::lit(0.25);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(h2 * w2)) {
            for yy in 0..h2 {
                for xx in 0..w2 {
                    let i = 2 * yy * w + 2 * xx;
                    dst[yy * w2 + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * q;
                }
            }
        }
        let y = Tensor::new(&[n, c, h2, w2], out).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); n * c * h * w];
            for (src, dst) in g.data().chunks(h2 * w2).zip(d.chunks_mut(h * w)) {
                for yy in 0..h2 {
                    for xx in 0..w2 {
                        let v = src[yy * w2 + xx] * q;
                        let i = 2 * yy * w + 2 * xx;
                        dst[i] += v;
                        dst[i + 1] += v;
                        dst[i + w] += v;
                        dst[i + w + 1] += v;
                    }
                }
            }
            vec![Some(Tensor::new(&[n, c, h, w], d).unwrap())]
        })
    }

    /// Crop square regions from `[N, C, H, W]` and bilinearly resample each to
    /// `out × out`, giving `[boxes.len(), C, out, out]`.
    pub fn crop_resize(self, boxes: &[CropBox], out: usize) -> Var<'t, T> {
        let x = self.value();
        let [n, c, h, w] = *x.shape() else {
            panic!("crop_resize expects rank 4")
        };
        let taps: Vec<_> = boxes
            .iter()
            .map(|b| {
                assert!(
                    b.image < n && b.top + b.size <= h && b.left + b.size <= w && b.size > 0,
                    "crop box {:?} outside image {}x{}",
                    b,
                    h,
                    w
                );
                (resample_taps(b.top, b.size, out), resample_taps(b.left, b.size, out))
            })
            .collect();
        let boxes = boxes.to_vec();
        let plane = h * w;
        let op = out * out;
        let mut data = vec![T::zero(); boxes.len() * c * op];
        for (bi, (b, (ty, tx))) in boxes.iter().zip(&taps).enumerate() {
            for ch in 0..c {
                let src = &x.data()[(b.image * c + ch) * plane..(b.image * c + ch + 1) * plane];
                let dst = &mut data[(bi * c + ch) * op..(bi * c + ch + 1) * op];
                for (i, &(y0, y1, wy)) in ty.iter().enumerate() {
                    let wy = T::lit(wy);
                    for (j, &(x0, x1, wx)) in tx.iter().enumerate() {
                        let wx = T::lit(wx);
                        let top = src[y0 * w + x0] * (T::one() - wx) + src[y0 * w + x1] * wx;
                        let bot = src[y1 * w + x0] * (T::one() - wx) + src[y1 * w + x1] * wx;
                        dst[i * out + j] = top * (T::one() - wy) + bot * wy;
                    }
                }
            }
        }
        let y = Tensor::new(&[boxes.len(), c, out, out], data).unwrap();
        let x_shape = x.shape().to_vec();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); n * c * plane];
            for (bi, (b, (ty, tx))) in boxes.iter().zip(&taps).enumerate() {
                for ch in 0..c {
                    let src = &g.data()[(bi * c + ch) * op..(bi * c + ch + 1) * op];
                    let dst = &mut d[(b.image * c + ch) * plane..(b.image * c + ch + 1) * plane];
                    for (i, &(y0, y1, wy)) in ty.iter().enumerate() {
                        let wy = T::lit(wy);
                        for (j, &(x0, x1, wx)) in tx.iter().enumerate() {
                            let wx = T::lit(wx);
                            let gv = src[i * out + j];
                            let gt = gv * (T::one() - wy);
                            let gb = gv * wy;
                            dst[y0 * w + x0] += gt * (T::one() - wx);
                            dst[y0 * w + x1] += gt * wx;
                            dst[y1 * w + x0] += gb * (T::one() - wx);
                            dst[y1 * w + x1] += gb * wx;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(&x_shape, d).unwrap())]
        })
    }

    /// `[G·k, F] → [G, F]`: mean over consecutive groups of `k` rows.
    pub fn group_mean_rows(self, k: usize) -> Var<'t, T> {
        let x = self.value();
        let (r, f) = (x.dim(0), x.dim(1));
        assert!(
            k > 0 && r % k == 0,
            "group_mean_rows: {} rows not divisible by {}",
            r,
            k
        );
        let groups = r / k;
        let inv = T::one() / T::from_usize(k).unwrap();
        // Summation runs over sorted values so the result does not depend on
        // row order within a group.
        let mut out = vec![T::zero(); groups * f];
        let mut buf = Vec::with_capacity(k);
        for gi in 0..groups {
            for col in 0..f {
                buf.clear();
                buf.extend((0..k).map(|r| x.data()[(gi * k + r) * f + col]));
                buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                out[gi * f + col] = buf.iter().copied().sum::<T>() * inv;
            }
        }
        let y = Tensor::new(&[groups, f], out).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); r * f];
            for (i, row) in d.chunks_mut(f).enumerate() {
                for (o, &v) in row.iter_mut().zip(&g.data()[(i / k) * f..(i / k + 1) * f]) {
                    *o = v * inv;
                }
            }
            vec![Some(Tensor::new(&[r, f], d).unwrap())]
        })
    }

    /// `[G, F] → [G·k, F]`: each row repeated `k` times consecutively.
    pub fn repeat_rows(self, k: usize) -> Var<'t, T> {
        let x = self.value();
        let (r, f) = (x.dim(0), x.dim(1));
        let mut out = Vec::with_capacity(r * k * f);
        for row in x.data().chunks(f) {
            for _ in 0..k {
                out.extend_from_slice(row);
            }
        }
        let y = Tensor::new(&[r * k, f], out).unwrap();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); r * f];
            for (i, row) in g.data().chunks(f).enumerate() {
                for (o, &v) in d[(i / k) * f..(i / k + 1) * f].iter_mut().zip(row) {
                    *o += v;
                }
            }
            vec![Some(Tensor::new(&[r, f], d).unwrap())]
        })
    }

    /// Column-wise concatenation of `[R, F1]` and `[R, F2]`.
    pub fn concat_cols(self, other: Var<'t, T>) -> Var<'t, T> {
        let a = self.value();
        let b = other.value();
        let (r, f1, f2) = (a.dim(0), a.dim(1), b.dim(1));
        assert_eq!(b.dim(0), r, "concat_cols row mismatch");
        let mut out = Vec::with_capacity(r * (f1 + f2));
        for i in 0..r {
            out.extend_from_slice(&a.data()[i * f1..(i + 1) * f1]);
            out.extend_from_slice(&b.data()[i * f2..(i + 1) * f2]);
        }
        let y = Tensor::new(&[r, f1 + f2], out).unwrap();
        self.tape.push(y, &[self, other], move |g, _| {
            let mut da = Vec::with_capacity(r * f1);
            let mut db = Vec::with_capacity(r * f2);
            for row in g.data().chunks(f1 + f2) {
                da.extend_from_slice(&row[..f1]);
                db.extend_from_slice(&row[f1..]);
            }
            vec![
                Some(Tensor::new(&[r, f1], da).unwrap()),
                Some(Tensor::new(&[r, f2], db).unwrap()),
            ]
        })
    }

    /// Concatenation along the leading axis.
    pub fn concat_outer(self, other: Var<'t, T>) -> Var<'t, T> {
        let a = self.value();
        let b = other.value();
        let y = Tensor::stack_outer(&[(*a).clone(), (*b).clone()]).expect("concat_outer");
        let split = a.numel();
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.tape.push(y, &[self, other], move |g, _| {
            vec![
                Some(Tensor::new(&sa, g.data()[..split].to_vec()).unwrap()),
                Some(Tensor::new(&sb, g.data()[split..].to_vec()).unwrap()),
            ]
        })
    }

    /// `[N, C, P] → [N, C, idx.len()]` selecting positions on the last axis.
    pub fn select_last(self, idx: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let p = *x.shape().last().unwrap();
        let outer = x.numel() / p.max(1);
        let idx = idx.to_vec();
        let r = idx.len();
        let mut out = Vec::with_capacity(outer * r);
        for row in x.data().chunks(p) {
            for &i in &idx {
                assert!(i < p, "select_last index {} out of range {}", i, p);
                out.push(row[i]);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = r;
        let y = Tensor::new(&shape, out).unwrap();
        let x_shape = x.shape().to_vec();
        self.tape.push(y, &[self], move |g, _| {
            let mut d = vec![T::zero(); outer * p];
            for (drow, grow) in d.chunks_mut(p).zip(g.data().chunks(r)) {
                for (&i, &v) in idx.iter().zip(grow) {
                    drow[i] += v;
                }
            }
            vec![Some(Tensor::new(&x_shape, d).unwrap())]
        })
    }

    /// Cosine similarity between matching rows (trailing axis) of two tensors.
    ///
    /// Degenerate rows: both zero gives 1, exactly one zero gives 0; neither
    /// case passes gradient.
    pub fn rowwise_cosine(self, other: Var<'t, T>) -> Var<'t, T> {
        let a = self.value();
        let b = other.value();
        assert_eq!(a.shape(), b.shape(), "rowwise_cosine shape mismatch");
        let p = *a.shape().last().unwrap();
        let rows = a.numel() / p.max(1);
        // per row: (dot, |a|², |b|²)
        let stats: Vec<(T, T, T)> = a
            .data()
            .chunks(p)
            .zip(b.data().chunks(p))
            .map(|(ra, rb)| {
                let mut dot = T::zero();
                let mut na = T::zero();
                let mut nb = T::zero();
                for (&x, &y) in ra.iter().zip(rb) {
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                (dot, na, nb)
            })
            .collect();
        let cos: Vec<T> = stats
            .iter()
            .map(|&(dot, na, nb)| match (na > T::zero(), nb > T::zero()) {
                // sqrt(s * s) == s exactly, so identical rows give exactly 1;
                // rounding can still push |cos| just past 1 otherwise
                (true, true) => (dot / (na * nb).sqrt()).max(-T::one()).min(T::one()),
                (false, false) => T::one(),
                _ => T::zero(),
            })
            .collect();
        let out_shape = &a.shape()[..a.rank() - 1];
        let y = Tensor::new(out_shape, cos.clone()).unwrap();
        let shape = a.shape().to_vec();
        self.tape.push(y, &[self, other], move |g, need| {
            let mut da = vec![T::zero(); rows * p];
            let mut db = vec![T::zero(); rows * p];
            for r in 0..rows {
                let (_, na2, nb2) = stats[r];
                if !(na2 > T::zero() && nb2 > T::zero()) {
                    continue;
                }
                let (na, nb) = (na2.sqrt(), nb2.sqrt());
                let gr = g.data()[r];
                let c = cos[r];
                let ra = &a.data()[r * p..(r + 1) * p];
                let rb = &b.data()[r * p..(r + 1) * p];
                let inv = T::one() / (na * nb);
                let ca = c / (na * na);
                let cb = c / (nb * nb);
                for i in 0..p {
                    da[r * p + i] = gr * (rb[i] * inv - ra[i] * ca);
                    db[r * p + i] = gr * (ra[i] * inv - rb[i] * cb);
                }
            }
            vec![
                need[0].then(|| Tensor::new(&shape, da).unwrap()),
                need[1].then(|| Tensor::new(&shape, db).unwrap()),
            ]
        })
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let (n, k) = (x.dim(0), x.dim(1));
        assert_eq!(labels.len(), n, "cross_entropy label count");
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (i, row) in x.data().chunks(k).enumerate() {
            assert!(labels[i] < k, "label {} out of range {}", labels[i], k);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[i * k + j] = e;
                z += e;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= z;
            }
            loss += z.ln() + m - row[labels[i]];
        }
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let y = Tensor::scalar(loss * inv_n);
        let labels = labels.to_vec();
        self.tape.push(y, &[self], move |g, _| {
            let gs = g.item() * inv_n;
            let mut d = probs.clone();
            for (i, &lab) in labels.iter().enumerate() {
                d[i * k + lab] -= T::one();
            }
            for v in &mut d {
                *v *= gs;
            }
            vec![Some(Tensor::new(&[n, k], d).unwrap())]
        })
    }
}

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// `[N, C, H, W] → [C·kh·kw, N·Ho·Wo]`.
fn im2col<T: Float>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let l = g.ho * g.wo;
    let nl = g.n * l;
    let mut col = vec![T::zero(); g.c * g.kh * g.kw * nl];
    for ci in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let dst_row = &mut col[row * nl..(row + 1) * nl];
                for ni in 0..g.n {
                    let plane = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let dst = &mut dst_row[ni * l..(ni + 1) * l];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Float>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let l = g.ho * g.wo;
    let nl = g.n * l;
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for ci in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (ci * g.kh + i) * g.kw + j;
                let src_row = &col[row * nl..(row + 1) * nl];
                for ni in 0..g.n {
                    let plane = &mut x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    let src = &src_row[ni * l..(ni + 1) * l];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                plane[iy as usize * g.w + ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}
