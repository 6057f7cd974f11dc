//! Dense fp64 kernels behind the graph primitives.
//!
//! Convolution is lowered to im2col + GEMM. Work is split into chunks whose
//! boundaries depend only on the geometry, never on the thread count, and
//! partial kernel gradients are summed in chunk order, so results are
//! bit-identical whether rayon runs one thread or many.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Target number of im2col columns per GEMM call.
const GROUP_COLUMNS: usize = 256;
/// Target number of output positions per parallel chunk.
const CHUNK_POSITIONS: usize = 1024;

#[inline]
pub(crate) fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Dot product with four fixed accumulation lanes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        lanes[0] += x[0] * y[0];
        lanes[1] += x[1] * y[1];
        lanes[2] += x[2] * y[2];
        lanes[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail
}

/// `c[m,n] = a[m,k] · b[k,n]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if n == 0 {
        return c;
    }
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for kk in 0..k {
            axpy(row, a[i * k + kk], &b[kk * n..(kk + 1) * n]);
        }
    });
    c
}

/// `da[m,k] = dc[m,n] · b[k,n]ᵀ`.
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    if k == 0 {
        return da;
    }
    da.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let dci = &dc[i * n..(i + 1) * n];
        for (kk, v) in row.iter_mut().enumerate() {
            *v = dot(dci, &b[kk * n..(kk + 1) * n]);
        }
    });
    da
}

/// `db[k,n] = a[m,k]ᵀ · dc[m,n]`.
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    if n == 0 {
        return db;
    }
    db.par_chunks_mut(n).enumerate().for_each(|(kk, row)| {
        for i in 0..m {
            axpy(row, a[i * k + kk], &dc[i * n..(i + 1) * n]);
        }
    });
    db
}

/// Geometry of a batched 3-D cross-correlation over `[N, C, T, H, W]` with a
/// `[C', C, kt, kh, kw]` kernel. 2-D convolution is the `T = kt = 1` case.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kt: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub to: usize,
    pub ho: usize,
    pub wo: usize,
}

/// `floor((d + 2p − k)/s) + 1`, or `None` when the kernel does not fit.
pub fn conv_out_len(d: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = d + 2 * p;
    if s == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / s + 1)
}

impl ConvGeom {
    pub fn new(
        input: [usize; 5],
        kernel: [usize; 5],
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Self> {
        let [n, c_in, t, h, w] = input;
        let [c_out, kc, kt, kh, kw] = kernel;
        if kc != c_in {
            return Err(Error::contract(format!(
                "conv kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        let dims = [(t, kt), (h, kh), (w, kw)];
        let mut out = [0usize; 3];
        for (i, &(d, k)) in dims.iter().enumerate() {
            out[i] = conv_out_len(d, k, stride[i], pad[i]).ok_or_else(|| {
                Error::contract(format!(
                    "conv kernel {k} (stride {}, pad {}) does not fit axis of length {d}",
                    stride[i], pad[i]
                ))
            })?;
        }
        Ok(ConvGeom {
            n,
            c_in,
            t,
            h,
            w,
            c_out,
            kt,
            kh,
            kw,
            stride,
            pad,
            to: out[0],
            ho: out[1],
            wo: out[2],
        })
    }

    fn k(&self) -> usize {
        self.c_in * self.kt * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn in_sample(&self) -> usize {
        self.c_in * self.t * self.h * self.w
    }

    fn out_sample(&self) -> usize {
        self.c_out * self.to * self.p()
    }

    pub fn output_len(&self) -> usize {
        self.n * self.out_sample()
    }

    fn samples_per_chunk(&self) -> usize {
        let per = (self.to * self.p()).max(1);
        CHUNK_POSITIONS.div_ceil(per).max(1)
    }

    fn group_items(&self) -> usize {
        GROUP_COLUMNS.div_ceil(self.p().max(1)).max(1)
    }

    /// Fills columns `[off, off + P)` of the `[K, cols]` matrix for output
    /// time step `tt` of one sample.
    fn im2col(&self, sample: &[f64], tt: usize, col: &mut [f64], cols: usize, off: usize) {
        let (hw, thw) = (self.h * self.w, self.t * self.h * self.w);
        let mut k = 0;
        for ci in 0..self.c_in {
            for dt in 0..self.kt {
                let ti = (tt * self.stride[0] + dt) as isize - self.pad[0] as isize;
                for dy in 0..self.kh {
                    for dx in 0..self.kw {
                        let row = &mut col[k * cols + off..k * cols + off + self.p()];
                        k += 1;
                        if ti < 0 || ti as usize >= self.t {
                            row.fill(0.0);
                            continue;
                        }
                        let base = ci * thw + ti as usize * hw;
                        for yo in 0..self.ho {
                            let yi = (yo * self.stride[1] + dy) as isize - self.pad[1] as isize;
                            let dst = &mut row[yo * self.wo..(yo + 1) * self.wo];
                            if yi < 0 || yi as usize >= self.h {
                                dst.fill(0.0);
                                continue;
                            }
                            let src = &sample
                                [base + yi as usize * self.w..base + (yi as usize + 1) * self.w];
                            for (xo, d) in dst.iter_mut().enumerate() {
                                let xi = (xo * self.stride[2] + dx) as isize - self.pad[2] as isize;
                                *d = if xi < 0 || xi as usize >= self.w {
                                    0.0
                                } else {
                                    src[xi as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds columns `[off, off + P)` back into one sample's gradient.
    fn col2im(&self, dsample: &mut [f64], tt: usize, dcol: &[f64], cols: usize, off: usize) {
        let (hw, thw) = (self.h * self.w, self.t * self.h * self.w);
        let mut k = 0;
        for ci in 0..self.c_in {
            for dt in 0..self.kt {
                let ti = (tt * self.stride[0] + dt) as isize - self.pad[0] as isize;
                for dy in 0..self.kh {
                    for dx in 0..self.kw {
                        let row = &dcol[k * cols + off..k * cols + off + self.p()];
                        k += 1;
                        if ti < 0 || ti as usize >= self.t {
                            continue;
                        }
                        let base = ci * thw + ti as usize * hw;
                        for yo in 0..self.ho {
                            let yi = (yo * self.stride[1] + dy) as isize - self.pad[1] as isize;
                            if yi < 0 || yi as usize >= self.h {
                                continue;
                            }
                            let dst = &mut dsample
                                [base + yi as usize * self.w..base + (yi as usize + 1) * self.w];
                            for (xo, &v) in row[yo * self.wo..(yo + 1) * self.wo].iter().enumerate()
                            {
                                let xi = (xo * self.stride[2] + dx) as isize - self.pad[2] as isize;
                                if xi >= 0 && (xi as usize) < self.w {
                                    dst[xi as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Item groups of one chunk: `(first item, item count)`; an item is a
    /// (sample, output time step) pair in row-major order.
    fn groups(&self, samples: usize) -> impl Iterator<Item = (usize, usize)> {
        let items = samples * self.to;
        let g = self.group_items();
        (0..items).step_by(g).map(move |s| (s, g.min(items - s)))
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (k, p) = (g.k(), g.p());
    let spc = g.samples_per_chunk();
    let mut out = vec![0.0; g.output_len()];
    if out.is_empty() {
        return out;
    }
    out.par_chunks_mut(spc * g.out_sample())
        .enumerate()
        .for_each(|(ci, out_chunk)| {
            let n0 = ci * spc;
            let samples = out_chunk.len() / g.out_sample();
            let mut col = Vec::new();
            let mut buf = Vec::new();
            for (start, count) in g.groups(samples) {
                let cols = count * p;
                col.resize(k * cols, 0.0);
                for gi in 0..count {
                    let it = start + gi;
                    let (n, tt) = (n0 + it / g.to, it % g.to);
                    let sample = &input[n * g.in_sample()..(n + 1) * g.in_sample()];
                    g.im2col(sample, tt, &mut col, cols, gi * p);
                }
                buf.clear();
                buf.resize(g.c_out * cols, 0.0);
                for co in 0..g.c_out {
                    let row = &mut buf[co * cols..(co + 1) * cols];
                    for kk in 0..k {
                        axpy(row, kernel[co * k + kk], &col[kk * cols..(kk + 1) * cols]);
                    }
                }
                for gi in 0..count {
                    let it = start + gi;
                    let (nl, tt) = (it / g.to, it % g.to);
                    for co in 0..g.c_out {
                        let dst = nl * g.out_sample() + co * g.to * p + tt * p;
                        out_chunk[dst..dst + p]
                            .copy_from_slice(&buf[co * cols + gi * p..co * cols + (gi + 1) * p]);
                    }
                }
            }
        });
    out
}

/// Returns `(d_input, d_kernel)`; each is computed only when requested.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    gout: &[f64],
    need_input: bool,
    need_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (k, p) = (g.k(), g.p());
    let spc = g.samples_per_chunk();
    let n_chunks = g.n.div_ceil(spc);

    let chunk_work = |ci: usize, mut din: Option<&mut [f64]>| -> Option<Vec<f64>> {
        let n0 = ci * spc;
        let samples = spc.min(g.n - n0);
        let mut dk = need_kernel.then(|| vec![0.0; g.c_out * k]);
        let (mut col, mut dcol, mut gbuf) = (Vec::new(), Vec::new(), Vec::new());
        for (start, count) in g.groups(samples) {
            let cols = count * p;
            gbuf.clear();
            gbuf.resize(g.c_out * cols, 0.0);
            for gi in 0..count {
                let it = start + gi;
                let (n, tt) = (n0 + it / g.to, it % g.to);
                for co in 0..g.c_out {
                    let src = n * g.out_sample() + co * g.to * p + tt * p;
                    gbuf[co * cols + gi * p..co * cols + (gi + 1) * p]
                        .copy_from_slice(&gout[src..src + p]);
                }
            }
            if let Some(dk) = dk.as_mut() {
                col.resize(k * cols, 0.0);
                for gi in 0..count {
                    let it = start + gi;
                    let (n, tt) = (n0 + it / g.to, it % g.to);
                    g.im2col(
                        &input[n * g.in_sample()..(n + 1) * g.in_sample()],
                        tt,
                        &mut col,
                        cols,
                        gi * p,
                    );
                }
                for co in 0..g.c_out {
                    let grow = &gbuf[co * cols..(co + 1) * cols];
                    for kk in 0..k {
                        dk[co * k + kk] += dot(grow, &col[kk * cols..(kk + 1) * cols]);
                    }
                }
            }
            if let Some(din) = din.as_deref_mut() {
                dcol.clear();
                dcol.resize(k * cols, 0.0);
                for kk in 0..k {
                    let row = &mut dcol[kk * cols..(kk + 1) * cols];
                    for co in 0..g.c_out {
                        axpy(row, kernel[co * k + kk], &gbuf[co * cols..(co + 1) * cols]);
                    }
                }
                for gi in 0..count {
                    let it = start + gi;
                    let (nl, tt) = (it / g.to, it % g.to);
                    let ds = &mut din[nl * g.in_sample()..(nl + 1) * g.in_sample()];
                    g.col2im(ds, tt, &dcol, cols, gi * p);
                }
            }
        }
        dk
    };

    let (d_input, partials): (Option<Vec<f64>>, Vec<Option<Vec<f64>>>) = if need_input {
        let mut din = vec![0.0; g.n * g.in_sample()];
        let partials = if din.is_empty() {
            Vec::new()
        } else {
            din.par_chunks_mut(spc * g.in_sample())
                .enumerate()
                .map(|(ci, chunk)| chunk_work(ci, Some(chunk)))
                .collect()
        };
        (Some(din), partials)
    } else {
        let partials = (0..n_chunks)
            .into_par_iter()
            .map(|ci| chunk_work(ci, None))
            .collect();
        (None, partials)
    };

    let d_kernel = need_kernel.then(|| {
        let mut dk = vec![0.0; g.c_out * k];
        for part in partials.into_iter().flatten() {
            for (a, b) in dk.iter_mut().zip(&part) {
                *a += b;
            }
        }
        dk
    });
    (d_input, d_kernel)
}
