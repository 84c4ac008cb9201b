//! Wengert tape: reverse-mode differentiation by operation recording.
//!
//! Every op appends one node holding its output value. Nodes are only ever
//! appended, so the node list is already topologically ordered and
//! `backward` is a single reverse sweep.

use super::kernels::{self, ConvGeom};
use super::tensor::{Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-supplied op: `(inputs, output, grad_out) -> grad per input`.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom },
    Matmul { a: Var, b: Var },
    Relu { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, s: T },
    Reshape { x: Var },
    SwapLast2 { x: Var },
    SoftmaxRows { x: Var },
    Squash { x: Var },
    Norm { x: Var },
    Sum { x: Var },
    BroadcastBatch { x: Var },
    CapsuleTransform { u: Var, w: Var },
    WeightedSum { c: Var, uhat: Var },
    Agreement { v: Var, uhat: Var },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Matmul { .. } => "matmul",
            Op::Relu { .. } => "relu",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Reshape { .. } => "reshape",
            Op::SwapLast2 { .. } => "swap_last2",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::Squash { .. } => "squash",
            Op::Norm { .. } => "norm",
            Op::Sum { .. } => "sum",
            Op::BroadcastBatch { .. } => "broadcast_batch",
            Op::CapsuleTransform { .. } => "capsule_transform",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Agreement { .. } => "agreement",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    label: &'static str,
}

pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar w.r.t. every node that influenced it.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Name of the op that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    /// Tags the most recent node with a human-readable location for diagnostics.
    pub fn label(&mut self, v: Var, label: &'static str) -> Var {
        self.nodes[v.0].label = label;
        v
    }

    fn push_unchecked(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op, label: "" });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::NonFinite {
                op: format!("{} (node {})", op.name(), self.nodes.len()),
                detail: format!("entry {i} of output shape {:?}", value.shape()),
            });
        }
        Ok(self.push_unchecked(value, op))
    }

    /// Valid cross-correlation. `x` is `[C_in, H, W]` or `[N, C_in, H, W]`;
    /// `k` is `[C_out, C_in, kH, kW]`; `b` is `[C_out]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: (usize, usize)) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        let bs = self.shape(b).to_vec();
        let (n, batched) = match xs.len() {
            3 => (1, false),
            4 => (xs[0], true),
            _ => return dim_err(format!("conv2d input must be rank 3 or 4, got {xs:?}")),
        };
        let off = xs.len() - 3;
        let (c_in, h, w) = (xs[off], xs[off + 1], xs[off + 2]);
        if ks.len() != 4 {
            return dim_err(format!("conv2d kernel must be rank 4, got {ks:?}"));
        }
        if ks[1] != c_in {
            return dim_err(format!("conv2d input has {c_in} channels, kernel expects {}", ks[1]));
        }
        if bs != [ks[0]] {
            return dim_err(format!("conv2d bias {bs:?} does not match {} output channels", ks[0]));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return dim_err("conv2d stride must be positive");
        }
        if h < ks[2] || w < ks[3] {
            return dim_err(format!("conv2d input {h}x{w} smaller than kernel {}x{}", ks[2], ks[3]));
        }
        let geom = ConvGeom { n, c_in, h, w, c_out: ks[0], kh: ks[2], kw: ks[3], sh: stride.0, sw: stride.1 };
        let out = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(k).data(), self.value(b).data());
        let mut shape = vec![geom.c_out, geom.out_h(), geom.out_w()];
        if batched {
            shape.insert(0, n);
        }
        self.push(Tensor::from_vec(&shape, out)?, Op::Conv2d { x, k, b, geom })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return dim_err(format!("matmul needs rank-2 operands, got {sa:?} and {sb:?}"));
        }
        if sa[1] != sb[0] {
            return dim_err(format!("matmul inner dimensions differ: {sa:?} · {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::from_vec(&[m, n], out)?, Op::Matmul { a, b })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| if e > T::zero() { e } else { T::zero() }).collect();
        let t = Tensor::from_vec(v.shape(), data)?;
        self.push(t, Op::Relu { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("add shapes differ: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| p + q).collect();
        let t = Tensor::from_vec(va.shape(), data)?;
        self.push(t, Op::Add { a, b })
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::from_vec(v.shape(), v.data().iter().map(|&e| e * s).collect())?;
        self.push(t, Op::Scale { x, s })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape { x })
    }

    /// Transposes the last two axes of a rank-3 tensor: `[M, A, B] -> [M, B, A]`.
    pub fn swap_last2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let &[m, a, b] = v.shape() else {
            return dim_err(format!("swap_last2 needs rank 3, got {:?}", v.shape()));
        };
        let src = v.data();
        let mut out = vec![T::zero(); src.len()];
        for s in 0..m {
            for i in 0..a {
                for j in 0..b {
                    out[(s * b + j) * a + i] = src[(s * a + i) * b + j];
                }
            }
        }
        self.push(Tensor::from_vec(&[m, b, a], out)?, Op::SwapLast2 { x })
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::from_vec(v.shape(), softmax_rows_data(v.data(), last_dim(v.shape())))?;
        self.push(t, Op::SoftmaxRows { x })
    }

    /// Capsule squash over the last axis; the zero vector maps to zero.
    pub fn squash(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = last_dim(v.shape());
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(d) {
            let n2: T = row.iter().map(|&e| e * e).sum();
            let f = squash_factor(n2);
            row.iter_mut().for_each(|e| *e = *e * f);
        }
        let t = Tensor::from_vec(v.shape(), out)?;
        self.push(t, Op::Squash { x })
    }

    /// Euclidean norm over the last axis; drops that axis.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = last_dim(v.shape());
        let out: Vec<T> = v.data().chunks(d).map(|r| r.iter().map(|&e| e * e).sum::<T>().sqrt()).collect();
        let mut shape = v.shape()[..v.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::from_vec(&shape, out)?, Op::Norm { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    /// Repeats `x` along a new leading axis of length `n`.
    pub fn broadcast_batch(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return dim_err("broadcast_batch with n = 0");
        }
        let v = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(v.shape());
        let data = v.data().repeat(n);
        self.push(Tensor::from_vec(&shape, data)?, Op::BroadcastBatch { x })
    }

    /// Per-pair capsule predictions: `u [B, I, K]`, `w [I, J, K, D]` -> `[B, I, J, D]`
    /// with `out[b, i, j] = u[b, i] · w[i, j]`.
    pub fn capsule_transform(&mut self, u: Var, w: Var) -> Result<Var> {
        let (us, ws) = (self.shape(u).to_vec(), self.shape(w).to_vec());
        let (&[bsz, ni, k], &[wi, nj, wk, d]) = (us.as_slice(), ws.as_slice()) else {
            return dim_err(format!("capsule_transform needs [B,I,K] and [I,J,K,D], got {us:?} and {ws:?}"));
        };
        if wi != ni || wk != k {
            return dim_err(format!("capsule_transform shape mismatch: {us:?} vs {ws:?}"));
        }
        let (ud, wd) = (self.value(u).data(), self.value(w).data());
        let mut out = vec![T::zero(); bsz * ni * nj * d];
        for i in 0..ni {
            for j in 0..nj {
                T::gemm(
                    bsz,
                    k,
                    d,
                    &ud[i * k..],
                    (ni * k) as isize,
                    1,
                    &wd[(i * nj + j) * k * d..],
                    d as isize,
                    1,
                    T::zero(),
                    &mut out[(i * nj + j) * d..],
                    (ni * nj * d) as isize,
                    1,
                );
            }
        }
        self.push(Tensor::from_vec(&[bsz, ni, nj, d], out)?, Op::CapsuleTransform { u, w })
    }

    /// `out[b, j, :] = Σ_i c[b, i, j] · uhat[b, i, j, :]`.
    pub fn weighted_sum(&mut self, c: Var, uhat: Var) -> Result<Var> {
        let (cs, us) = (self.shape(c).to_vec(), self.shape(uhat).to_vec());
        let &[bsz, ni, nj, d] = us.as_slice() else {
            return dim_err(format!("weighted_sum needs uhat [B,I,J,D], got {us:?}"));
        };
        if cs != [bsz, ni, nj] {
            return dim_err(format!("weighted_sum coupling {cs:?} does not match uhat {us:?}"));
        }
        let (cd, ud) = (self.value(c).data(), self.value(uhat).data());
        let mut out = vec![T::zero(); bsz * nj * d];
        for b in 0..bsz {
            for i in 0..ni {
                for j in 0..nj {
                    let cij = cd[(b * ni + i) * nj + j];
                    let src = &ud[((b * ni + i) * nj + j) * d..][..d];
                    let dst = &mut out[(b * nj + j) * d..][..d];
                    for (o, &s) in dst.iter_mut().zip(src) {
                        *o = *o + cij * s;
                    }
                }
            }
        }
        self.push(Tensor::from_vec(&[bsz, nj, d], out)?, Op::WeightedSum { c, uhat })
    }

    /// `out[b, i, j] = v[b, j, :] · uhat[b, i, j, :]`.
    pub fn agreement(&mut self, v: Var, uhat: Var) -> Result<Var> {
        let (vs, us) = (self.shape(v).to_vec(), self.shape(uhat).to_vec());
        let &[bsz, ni, nj, d] = us.as_slice() else {
            return dim_err(format!("agreement needs uhat [B,I,J,D], got {us:?}"));
        };
        if vs != [bsz, nj, d] {
            return dim_err(format!("agreement capsules {vs:?} do not match uhat {us:?}"));
        }
        let (vd, ud) = (self.value(v).data(), self.value(uhat).data());
        let mut out = vec![T::zero(); bsz * ni * nj];
        for b in 0..bsz {
            for i in 0..ni {
                for j in 0..nj {
                    let a = &ud[((b * ni + i) * nj + j) * d..][..d];
                    let vv = &vd[(b * nj + j) * d..][..d];
                    out[(b * ni + i) * nj + j] = a.iter().zip(vv).map(|(&p, &q)| p * q).sum();
                }
            }
        }
        self.push(Tensor::from_vec(&[bsz, ni, nj], out)?, Op::Agreement { v, uhat })
    }

    /// Records an op whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Result<Var> {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward })
    }

    /// Reverse sweep from a single-element output.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, node {} has shape {:?}",
                loss.0,
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (var, contrib) in self.vjp(node, &g)? {
                if let Some(i) = contrib.first_non_finite() {
                    return Err(Error::NonFinite {
                        op: format!("{} backward (node {id}{})", node.op.name(), label_suffix(node.label)),
                        detail: format!("gradient entry {i}"),
                    });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let out = &node.value;
        let gd = g.data();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, k, b, geom } => {
                let grads = kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*k).data(), gd);
                vec![
                    (*x, Tensor::from_vec(self.shape(*x), grads.dx)?),
                    (*k, Tensor::from_vec(self.shape(*k), grads.dk)?),
                    (*b, Tensor::from_vec(self.shape(*b), grads.dbias)?),
                ]
            }
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                let mut da = vec![T::zero(); m * k];
                T::gemm(m, n, k, gd, n as isize, 1, vb.data(), 1, n as isize, T::zero(), &mut da, k as isize, 1);
                let mut db = vec![T::zero(); k * n];
                T::gemm(k, m, n, va.data(), 1, k as isize, gd, n as isize, 1, T::zero(), &mut db, n as isize, 1);
                vec![(*a, Tensor::from_vec(&[m, k], da)?), (*b, Tensor::from_vec(&[k, n], db)?)]
            }
            Op::Relu { x } => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(gd).map(|(&e, &gg)| if e > T::zero() { gg } else { T::zero() }).collect();
                vec![(*x, Tensor::from_vec(xv.shape(), d)?)]
            }
            Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Scale { x, s } => {
                vec![(*x, Tensor::from_vec(g.shape(), gd.iter().map(|&e| e * *s).collect())?)]
            }
            Op::Reshape { x } => vec![(*x, g.clone().reshape(self.shape(*x))?)],
            Op::SwapLast2 { x } => {
                let &[m, a, b] = self.shape(*x) else { unreachable!() };
                let mut d = vec![T::zero(); gd.len()];
                for s in 0..m {
                    for i in 0..a {
                        for j in 0..b {
                            d[(s * a + i) * b + j] = gd[(s * b + j) * a + i];
                        }
                    }
                }
                vec![(*x, Tensor::from_vec(&[m, a, b], d)?)]
            }
            Op::SoftmaxRows { x } => {
                let c = last_dim(out.shape());
                let mut d = vec![T::zero(); gd.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(out.data().chunks(c)).zip(gd.chunks(c)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gg)| y * gg).sum();
                    for ((o, &y), &gg) in dr.iter_mut().zip(yr).zip(gr) {
                        *o = y * (gg - dot);
                    }
                }
                vec![(*x, Tensor::from_vec(out.shape(), d)?)]
            }
            Op::Squash { x } => {
                let xv = self.value(*x);
                let c = last_dim(xv.shape());
                let mut d = vec![T::zero(); gd.len()];
                for ((dr, vr), gr) in d.chunks_mut(c).zip(xv.data().chunks(c)).zip(gd.chunks(c)) {
                    let n2: T = vr.iter().map(|&e| e * e).sum();
                    if n2 == T::zero() {
                        continue;
                    }
                    let one = T::one();
                    let f = squash_factor(n2);
                    // out = f(n)·v with f(n) = n/(1+n²); df holds f'(n)/n
                    let n = n2.sqrt();
                    let df = (one - n2) / ((one + n2) * (one + n2) * n);
                    let vg: T = vr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &vv), &gg) in dr.iter_mut().zip(vr).zip(gr) {
                        *o = f * gg + df * vg * vv;
                    }
                }
                vec![(*x, Tensor::from_vec(xv.shape(), d)?)]
            }
            Op::Norm { x } => {
                let xv = self.value(*x);
                let c = last_dim(xv.shape());
                let mut d = vec![T::zero(); xv.numel()];
                for (r, (dr, vr)) in d.chunks_mut(c).zip(xv.data().chunks(c)).enumerate() {
                    let n = out.data()[r];
                    if n > T::zero() {
                        for (o, &vv) in dr.iter_mut().zip(vr) {
                            *o = gd[r] * vv / n;
                        }
                    }
                }
                vec![(*x, Tensor::from_vec(xv.shape(), d)?)]
            }
            Op::Sum { x } => vec![(*x, Tensor::full(self.shape(*x), gd[0]))],
            Op::BroadcastBatch { x } => {
                let xs = self.shape(*x);
                let len = self.value(*x).numel();
                let mut d = vec![T::zero(); len];
                for chunk in gd.chunks(len) {
                    for (o, &gg) in d.iter_mut().zip(chunk) {
                        *o = *o + gg;
                    }
                }
                vec![(*x, Tensor::from_vec(xs, d)?)]
            }
            Op::CapsuleTransform { u, w } => {
                let (uv, wv) = (self.value(*u), self.value(*w));
                let &[bsz, ni, k] = uv.shape() else { unreachable!() };
                let &[_, nj, _, d] = wv.shape() else { unreachable!() };
                let mut du = vec![T::zero(); uv.numel()];
                let mut dw = vec![T::zero(); wv.numel()];
                for i in 0..ni {
                    for j in 0..nj {
                        let g_ij = &gd[(i * nj + j) * d..];
                        let w_ij = &wv.data()[(i * nj + j) * k * d..];
                        // du[:, i, :] += g_ij · w_ijᵀ
                        T::gemm(bsz, d, k, g_ij, (ni * nj * d) as isize, 1, w_ij, 1, d as isize, T::one(), &mut du[i * k..], (ni * k) as isize, 1);
                        // dw_ij = u[:, i, :]ᵀ · g_ij
                        T::gemm(
                            k,
                            bsz,
                            d,
                            &uv.data()[i * k..],
                            1,
                            (ni * k) as isize,
                            g_ij,
                            (ni * nj * d) as isize,
                            1,
                            T::zero(),
                            &mut dw[(i * nj + j) * k * d..],
                            d as isize,
                            1,
                        );
                    }
                }
                vec![(*u, Tensor::from_vec(uv.shape(), du)?), (*w, Tensor::from_vec(wv.shape(), dw)?)]
            }
            Op::WeightedSum { c, uhat } => {
                let (cv, uv) = (self.value(*c), self.value(*uhat));
                let &[bsz, ni, nj, d] = uv.shape() else { unreachable!() };
                let mut dc = vec![T::zero(); cv.numel()];
                let mut du = vec![T::zero(); uv.numel()];
                for b in 0..bsz {
                    for i in 0..ni {
                        for j in 0..nj {
                            let ci = (b * ni + i) * nj + j;
                            let gr = &gd[(b * nj + j) * d..][..d];
                            let ur = &uv.data()[ci * d..][..d];
                            dc[ci] = gr.iter().zip(ur).map(|(&p, &q)| p * q).sum();
                            let cij = cv.data()[ci];
                            for (o, &gg) in du[ci * d..][..d].iter_mut().zip(gr) {
                                *o = cij * gg;
                            }
                        }
                    }
                }
                vec![(*c, Tensor::from_vec(cv.shape(), dc)?), (*uhat, Tensor::from_vec(uv.shape(), du)?)]
            }
            Op::Agreement { v, uhat } => {
                let (vv, uv) = (self.value(*v), self.value(*uhat));
                let &[bsz, ni, nj, d] = uv.shape() else { unreachable!() };
                let mut dv = vec![T::zero(); vv.numel()];
                let mut du = vec![T::zero(); uv.numel()];
                for b in 0..bsz {
                    for i in 0..ni {
                        for j in 0..nj {
                            let ci = (b * ni + i) * nj + j;
                            let gg = gd[ci];
                            let ur = &uv.data()[ci * d..][..d];
                            let vr = &vv.data()[(b * nj + j) * d..][..d];
                            for (o, &uu) in dv[(b * nj + j) * d..][..d].iter_mut().zip(ur) {
                                *o = *o + gg * uu;
                            }
                            for (o, &x) in du[ci * d..][..d].iter_mut().zip(vr) {
                                *o = gg * x;
                            }
                        }
                    }
                }
                vec![(*v, Tensor::from_vec(vv.shape(), dv)?), (*uhat, Tensor::from_vec(uv.shape(), du)?)]
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = backward(&ins, out, g);
                if gs.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom backward returned {} gradients for {} inputs",
                        gs.len(),
                        inputs.len()
                    )));
                }
                for (gi, ti) in gs.iter().zip(&ins) {
                    if gi.shape() != ti.shape() {
                        return Err(Error::Contract(format!(
                            "custom backward gradient shape {:?} does not match input {:?}",
                            gi.shape(),
                            ti.shape()
                        )));
                    }
                }
                inputs.iter().copied().zip(gs).collect()
            }
        })
    }
}

fn label_suffix(label: &str) -> String {
    if label.is_empty() {
        String::new()
    } else {
        format!(", {label}")
    }
}

/// Scale factor `‖v‖/(1+‖v‖²)` applied to `v`; zero at the origin.
pub(crate) fn squash_factor<T: Real>(n2: T) -> T {
    if n2 == T::zero() {
        T::zero()
    } else {
        n2.sqrt() / (T::one() + n2)
    }
}

pub(crate) fn softmax_rows_data<T: Real>(x: &[T], c: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for e in row.iter_mut() {
            *e = (*e - m).exp();
            z = z + *e;
        }
        row.iter_mut().for_each(|e| *e = *e / z);
    }
    out
}
