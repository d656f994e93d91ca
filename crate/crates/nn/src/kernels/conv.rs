//! 1-D convolution and transposed convolution via im2col / col2im.
//!
//! Both operators share the index map `long = short * stride + tap - padding`,
//! where `short` runs over the low-resolution axis (conv output, transposed-conv
//! input). Transposed convolution is the adjoint of convolution under that map.

use crate::gemm::{gemm, Mat};

pub(crate) fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

pub(crate) fn conv_transpose_out_len(
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (len.checked_sub(1)?) * stride + k + output_padding;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

#[derive(Clone, Copy)]
pub(crate) struct Geom {
    pub channels: usize,
    pub long: usize,
    pub short: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Geom {
    #[inline]
    fn long_index(&self, i: usize, j: usize) -> Option<usize> {
        let pos = (i * self.stride + j) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.long).then_some(pos as usize)
    }
}

/// `x: [channels, long]` -> `cols: [channels * k, short]`.
pub(crate) fn im2col(x: &[f64], g: Geom, cols: &mut [f64]) {
    for c in 0..g.channels {
        let xc = &x[c * g.long..(c + 1) * g.long];
        for j in 0..g.k {
            let row = &mut cols[(c * g.k + j) * g.short..(c * g.k + j + 1) * g.short];
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = g.long_index(i, j).map_or(0.0, |p| xc[p]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `x`.
pub(crate) fn col2im(cols: &[f64], g: Geom, x: &mut [f64]) {
    for c in 0..g.channels {
        let xc = &mut x[c * g.long..(c + 1) * g.long];
        for j in 0..g.k {
            let row = &cols[(c * g.k + j) * g.short..(c * g.k + j + 1) * g.short];
            for (i, v) in row.iter().enumerate() {
                if let Some(p) = g.long_index(i, j) {
                    xc[p] += v;
                }
            }
        }
    }
}

pub(crate) struct ConvShape {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

/// x `[B, Cin, Lin]`, w `[Cout, Cin, k]`, b `[Cout]` -> `[B, Cout, Lout]`.
pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], s: &ConvShape) -> Vec<f64> {
    let g = Geom {
        channels: s.c_in,
        long: s.len_in,
        short: s.len_out,
        k: s.k,
        stride: s.stride,
        padding: s.padding,
    };
    let ck = s.c_in * s.k;
    let mut cols = vec![0.0; ck * s.len_out];
    let mut out = vec![0.0; s.batch * s.c_out * s.len_out];
    for n in 0..s.batch {
        im2col(&x[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in], g, &mut cols);
        let o = &mut out[n * s.c_out * s.len_out..(n + 1) * s.c_out * s.len_out];
        for (co, row) in o.chunks_exact_mut(s.len_out).enumerate() {
            row.fill(b[co]);
        }
        gemm(s.c_out, ck, s.len_out, Mat::rm(w, ck), Mat::rm(&cols, s.len_out), 1.0, o, s.len_out);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub(crate) fn conv1d_backward(x: &[f64], w: &[f64], dout: &[f64], s: &ConvShape, need_dx: bool) -> ConvGrads {
    let g = Geom {
        channels: s.c_in,
        long: s.len_in,
        short: s.len_out,
        k: s.k,
        stride: s.stride,
        padding: s.padding,
    };
    let ck = s.c_in * s.k;
    let mut cols = vec![0.0; ck * s.len_out];
    let mut dcols = vec![0.0; ck * s.len_out];
    let mut dw = vec![0.0; s.c_out * ck];
    let mut db = vec![0.0; s.c_out];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    for n in 0..s.batch {
        let d = &dout[n * s.c_out * s.len_out..(n + 1) * s.c_out * s.len_out];
        for (co, row) in d.chunks_exact(s.len_out).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        im2col(&x[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in], g, &mut cols);
        gemm(s.c_out, s.len_out, ck, Mat::rm(d, s.len_out), Mat::rm_t(&cols, s.len_out), 1.0, &mut dw, ck);
        if let Some(dx) = dx.as_mut() {
            gemm(ck, s.c_out, s.len_out, Mat::rm_t(w, ck), Mat::rm(d, s.len_out), 0.0, &mut dcols, s.len_out);
            col2im(&dcols, g, &mut dx[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in]);
        }
    }
    ConvGrads { dx, dw, db }
}

/// x `[B, Cin, Lin]`, w `[Cin, Cout, k]`, b `[Cout]` -> `[B, Cout, Lout]`.
pub(crate) fn conv_transpose1d_forward(x: &[f64], w: &[f64], b: &[f64], s: &ConvShape) -> Vec<f64> {
    let g = Geom {
        channels: s.c_out,
        long: s.len_out,
        short: s.len_in,
        k: s.k,
        stride: s.stride,
        padding: s.padding,
    };
    let ck = s.c_out * s.k;
    let mut cols = vec![0.0; ck * s.len_in];
    let mut out = vec![0.0; s.batch * s.c_out * s.len_out];
    for n in 0..s.batch {
        let xn = &x[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in];
        gemm(ck, s.c_in, s.len_in, Mat::rm_t(w, ck), Mat::rm(xn, s.len_in), 0.0, &mut cols, s.len_in);
        let o = &mut out[n * s.c_out * s.len_out..(n + 1) * s.c_out * s.len_out];
        for (co, row) in o.chunks_exact_mut(s.len_out).enumerate() {
            row.fill(b[co]);
        }
        col2im(&cols, g, o);
    }
    out
}

pub(crate) fn conv_transpose1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    s: &ConvShape,
    need_dx: bool,
) -> ConvGrads {
    let g = Geom {
        channels: s.c_out,
        long: s.len_out,
        short: s.len_in,
        k: s.k,
        stride: s.stride,
        padding: s.padding,
    };
    let ck = s.c_out * s.k;
    let mut dcols = vec![0.0; ck * s.len_in];
    let mut dw = vec![0.0; s.c_in * ck];
    let mut db = vec![0.0; s.c_out];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    for n in 0..s.batch {
        let d = &dout[n * s.c_out * s.len_out..(n + 1) * s.c_out * s.len_out];
        for (co, row) in d.chunks_exact(s.len_out).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        im2col(d, g, &mut dcols);
        let xn = &x[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in];
        gemm(s.c_in, s.len_in, ck, Mat::rm(xn, s.len_in), Mat::rm_t(&dcols, s.len_in), 1.0, &mut dw, ck);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * s.c_in * s.len_in..(n + 1) * s.c_in * s.len_in];
            gemm(s.c_in, ck, s.len_in, Mat::rm(w, ck), Mat::rm(&dcols, s.len_in), 0.0, dxn, s.len_in);
        }
    }
    ConvGrads { dx, dw, db }
}
