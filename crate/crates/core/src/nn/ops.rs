//! Layer kernels with hand-written backward passes.
//!
//! All reductions run in a fixed order so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Tensor4};

/// c[m x n] += a[m x k] * b[k x n]
fn gemm_nn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// c[m x n] += a[k x m]^T * b[k x n]
fn gemm_tn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut tail = S::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// c[m x n] += a[m x k] * b[n x k]^T
fn gemm_nt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Unfolds one sample into [cin*ks*ks, h*w] patches with zero padding.
fn im2col<S: Scalar>(x: &[S], cin: usize, h: usize, w: usize, ks: usize, cols: &mut [S]) {
    let pad = (ks / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..ks {
            for kx in 0..ks {
                let row = (c * ks + ky) * ks + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let srow = &x[c * hw + sy as usize * w..c * hw + (sy as usize + 1) * w];
                    for (xo, d) in drow.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *d = if sx < 0 || sx >= w as isize { S::zero() } else { srow[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Folds patch gradients back onto the sample (adjoint of `im2col`).
fn col2im<S: Scalar>(cols: &[S], cin: usize, h: usize, w: usize, ks: usize, dx: &mut [S]) {
    let pad = (ks / 2) as isize;
    let hw = h * w;
    for c in 0..cin {
        for ky in 0..ks {
            for kx in 0..ks {
                let row = (c * ks + ky) * ks + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let ddx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xo in 0..w {
                        let sx = xo as isize + ddx;
                        if sx >= 0 && sx < w as isize {
                            dx[c * hw + sy as usize * w + sx as usize] += src[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution; `weight` is [cout, cin, ks, ks].
pub fn conv_forward<S: Scalar>(
    x: &Tensor4<S>,
    weight: &[S],
    bias: &[S],
    cout: usize,
    ks: usize,
    relu: bool,
) -> Tensor4<S> {
    let [n, cin, h, w] = x.dims;
    let hw = h * w;
    let kk = cin * ks * ks;
    let mut out = Tensor4::zeros([n, cout, h, w]);
    let mut cols = if ks == 1 { Vec::new() } else { vec![S::zero(); kk * hw] };
    for b in 0..n {
        let xs = x.sample(b);
        let ys = out.sample_mut(b);
        for (co, &bv) in bias.iter().enumerate() {
            ys[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = bv);
        }
        let src: &[S] = if ks == 1 {
            xs
        } else {
            im2col(xs, cin, h, w, ks, &mut cols);
            &cols
        };
        gemm_nn(cout, hw, kk, weight, src, ys);
        if relu {
            ys.iter_mut().for_each(|v| {
                if *v < S::zero() {
                    *v = S::zero()
                }
            });
        }
    }
    out
}

/// Backward of [`conv_forward`]. `y` is the forward output (used for the
/// ReLU gate). Accumulates into `dweight`/`dbias` and returns dL/dx when
/// `need_dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<S: Scalar>(
    x: &Tensor4<S>,
    y: &Tensor4<S>,
    dy: &Tensor4<S>,
    weight: &[S],
    ks: usize,
    relu: bool,
    dweight: &mut [S],
    dbias: &mut [S],
    need_dx: bool,
) -> Option<Tensor4<S>> {
    let [n, cin, h, w] = x.dims;
    let cout = y.channels();
    let hw = h * w;
    let kk = cin * ks * ks;
    let mut gate = vec![S::zero(); cout * hw];
    let mut cols = if ks == 1 { Vec::new() } else { vec![S::zero(); kk * hw] };
    let mut dcols = vec![S::zero(); kk * hw];
    let mut dx = if need_dx { Some(Tensor4::zeros(x.dims)) } else { None };
    for b in 0..n {
        let dys = dy.sample(b);
        if relu {
            for ((g, &d), &o) in gate.iter_mut().zip(dys).zip(y.sample(b)) {
                *g = if o > S::zero() { d } else { S::zero() };
            }
        } else {
            gate.copy_from_slice(dys);
        }
        for co in 0..cout {
            let mut s = S::zero();
            for &g in &gate[co * hw..(co + 1) * hw] {
                s += g;
            }
            dbias[co] += s;
        }
        let xs = x.sample(b);
        let src: &[S] = if ks == 1 {
            xs
        } else {
            im2col(xs, cin, h, w, ks, &mut cols);
            &cols
        };
        gemm_nt(cout, kk, hw, &gate, src, dweight);
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.sample_mut(b);
            if ks == 1 {
                gemm_tn(kk, hw, cout, weight, &gate, dxs);
            } else {
                dcols.iter_mut().for_each(|v| *v = S::zero());
                gemm_tn(kk, hw, cout, weight, &gate, &mut dcols);
                col2im(&dcols, cin, h, w, ks, dxs);
            }
        }
    }
    dx
}

/// 2x2 stride-2 max pooling. Returns the output and, per output element,
/// the flat input index of the winner (first maximum on ties).
pub fn maxpool_forward<S: Scalar>(x: &Tensor4<S>) -> (Tensor4<S>, Vec<u32>) {
    let [n, c, h, w] = x.dims;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut idx = vec![0u32; out.data.len()];
    for plane in 0..n * c {
        let ib = plane * h * w;
        let ob = plane * oh * ow;
        for y in 0..oh {
            for xo in 0..ow {
                let cands = [
                    ib + 2 * y * w + 2 * xo,
                    ib + 2 * y * w + 2 * xo + 1,
                    ib + (2 * y + 1) * w + 2 * xo,
                    ib + (2 * y + 1) * w + 2 * xo + 1,
                ];
                let mut best = cands[0];
                for &ci in &cands[1..] {
                    if x.data[ci] > x.data[best] {
                        best = ci;
                    }
                }
                out.data[ob + y * ow + xo] = x.data[best];
                idx[ob + y * ow + xo] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward<S: Scalar>(dy: &Tensor4<S>, idx: &[u32], in_dims: [usize; 4]) -> Tensor4<S> {
    let mut dx = Tensor4::zeros(in_dims);
    for (&g, &i) in dy.data.iter().zip(idx) {
        dx.data[i as usize] += g;
    }
    dx
}

/// Nearest-neighbour x2 upsampling.
pub fn upsample_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let [n, c, h, w] = x.dims;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                out.data[plane * oh * ow + y * ow + xo] = x.data[plane * h * w + (y / 2) * w + xo / 2];
            }
        }
    }
    out
}

pub fn upsample_backward<S: Scalar>(dy: &Tensor4<S>) -> Tensor4<S> {
    let [n, c, oh, ow] = dy.dims;
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor4::zeros([n, c, h, w]);
    for plane in 0..n * c {
        for y in 0..oh {
            for xo in 0..ow {
                dx.data[plane * h * w + (y / 2) * w + xo / 2] += dy.data[plane * oh * ow + y * ow + xo];
            }
        }
    }
    dx
}

/// Channel concatenation [a, b].
pub fn concat<S: Scalar>(a: &Tensor4<S>, b: &Tensor4<S>) -> Tensor4<S> {
    let [n, ca, h, w] = a.dims;
    let cb = b.channels();
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor4 { dims: [n, ca + cb, h, w], data }
}

/// Splits a gradient of `concat` into the parts for `a` (first `ca`
/// channels) and `b`.
pub fn split<S: Scalar>(d: &Tensor4<S>, ca: usize) -> (Tensor4<S>, Tensor4<S>) {
    let [n, c, h, w] = d.dims;
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for i in 0..n {
        let s = d.sample(i);
        a.extend_from_slice(&s[..ca * hw]);
        b.extend_from_slice(&s[ca * hw..]);
    }
    (Tensor4 { dims: [n, ca, h, w], data: a }, Tensor4 { dims: [n, c - ca, h, w], data: b })
}
