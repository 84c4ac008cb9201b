//! Raw slice kernels behind the tape ops.
//!
//! Convolution is lowered to im2col + GEMM. Work is split into fixed-size
//! sample chunks; parameter gradients are reduced in chunk order so the
//! result does not depend on how many worker threads ran the chunks.

use rayon::prelude::*;

use super::tensor::Real;

/// Samples per im2col chunk.
const CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h - self.kh) / self.sh + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w - self.kw) / self.sw + 1
    }

    fn kdim(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.c_out * self.positions()
    }
}

/// Fills `cols` ([kdim × ns·P], column = sample·P + position) from `ns` samples.
fn im2col<T: Real>(g: &ConvGeom, x: &[T], ns: usize, cols: &mut [T]) {
    let p = g.positions();
    let (oh, ow) = (g.out_h(), g.out_w());
    let ld = ns * p;
    for s in 0..ns {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        for ci in 0..g.c_in {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * ld + s * p..row * ld + (s + 1) * p];
                    for oy in 0..oh {
                        let src = &xs[(ci * g.h + oy * g.sh + ki) * g.w + kj..];
                        for ox in 0..ow {
                            dst[oy * ow + ox] = src[ox * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into the input gradient layout.
fn col2im<T: Real>(g: &ConvGeom, cols: &[T], ns: usize, dx: &mut [T]) {
    let p = g.positions();
    let (oh, ow) = (g.out_h(), g.out_w());
    let ld = ns * p;
    for s in 0..ns {
        let dxs = &mut dx[s * g.in_len()..(s + 1) * g.in_len()];
        for ci in 0..g.c_in {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (ci * g.kh + ki) * g.kw + kj;
                    let src = &cols[row * ld + s * p..row * ld + (s + 1) * p];
                    for oy in 0..oh {
                        let base = (ci * g.h + oy * g.sh + ki) * g.w + kj;
                        for ox in 0..ow {
                            let idx = base + ox * g.sw;
                            dxs[idx] = dxs[idx] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], k: &[T], bias: &[T]) -> Vec<T> {
    let (kdim, p) = (g.kdim(), g.positions());
    let mut out = vec![T::zero(); g.n * g.out_len()];
    out.par_chunks_mut(CHUNK * g.out_len())
        .zip(x.par_chunks(CHUNK * g.in_len()))
        .for_each(|(out_c, x_c)| {
            let ns = x_c.len() / g.in_len();
            let mut cols = vec![T::zero(); kdim * ns * p];
            im2col(g, x_c, ns, &mut cols);
            for s in 0..ns {
                let o = &mut out_c[s * g.out_len()..(s + 1) * g.out_len()];
                for (co, row) in o.chunks_mut(p).enumerate() {
                    row.fill(bias[co]);
                }
                T::gemm(
                    g.c_out,
                    kdim,
                    p,
                    k,
                    kdim as isize,
                    1,
                    &cols[s * p..],
                    (ns * p) as isize,
                    1,
                    T::one(),
                    o,
                    p as isize,
                    1,
                );
            }
        });
    out
}

pub struct ConvGrads<T> {
    pub dx: Vec<T>,
    pub dk: Vec<T>,
    pub dbias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(g: &ConvGeom, x: &[T], k: &[T], gout: &[T]) -> ConvGrads<T> {
    let (kdim, p) = (g.kdim(), g.positions());
    let mut dx = vec![T::zero(); g.n * g.in_len()];
    let partials: Vec<(Vec<T>, Vec<T>)> = dx
        .par_chunks_mut(CHUNK * g.in_len())
        .zip(x.par_chunks(CHUNK * g.in_len()))
        .zip(gout.par_chunks(CHUNK * g.out_len()))
        .map(|((dx_c, x_c), g_c)| {
            let ns = x_c.len() / g.in_len();
            let ld = ns * p;
            // gout gathered as [c_out × ns·P]
            let mut gm = vec![T::zero(); g.c_out * ld];
            let mut db = vec![T::zero(); g.c_out];
            for s in 0..ns {
                for co in 0..g.c_out {
                    let src = &g_c[s * g.out_len() + co * p..s * g.out_len() + (co + 1) * p];
                    gm[co * ld + s * p..co * ld + (s + 1) * p].copy_from_slice(src);
                    db[co] = db[co] + src.iter().copied().sum::<T>();
                }
            }
            let mut cols = vec![T::zero(); kdim * ld];
            im2col(g, x_c, ns, &mut cols);
            let mut dk = vec![T::zero(); g.c_out * kdim];
            // dk = gm · colsᵀ
            T::gemm(g.c_out, ld, kdim, &gm, ld as isize, 1, &cols, 1, ld as isize, T::zero(), &mut dk, kdim as isize, 1);
            // dcols = kᵀ · gm
            T::gemm(kdim, g.c_out, ld, k, 1, kdim as isize, &gm, ld as isize, 1, T::zero(), &mut cols, ld as isize, 1);
            col2im(g, &cols, ns, dx_c);
            (dk, db)
        })
        .collect();
    let mut dk = vec![T::zero(); g.c_out * kdim];
    let mut dbias = vec![T::zero(); g.c_out];
    for (pk, pb) in partials {
        for (a, b) in dk.iter_mut().zip(pk) {
            *a = *a + b;
        }
        for (a, b) in dbias.iter_mut().zip(pb) {
            *a = *a + b;
        }
    }
    ConvGrads { dx, dk, dbias }
}

/// Row-major `[m × k] · [k × n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, T::zero(), &mut c, n as isize, 1);
    c
}
