//! Whole-sequence LSTM and GRU layers with hand-written backpropagation through time.
//!
//! Layout is batch-major: inputs `[B, T, F]`, hidden states `[B, T, H]`.
//! Gate order is `i, f, g, o` for the LSTM and `r, z, n` for the GRU; the GRU
//! applies the reset gate to the recurrent candidate term after its bias.

use super::{col_sum_into, sigmoid};
use crate::gemm::{gemm, Mat};

#[derive(Clone, Copy, Debug)]
pub(crate) struct SeqShape {
    pub batch: usize,
    pub steps: usize,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct LstmCache {
    /// Activated gates `[B, T, 4H]`.
    gates: Vec<f64>,
    /// Cell states `[B, T, H]`.
    cells: Vec<f64>,
}

/// Returns hidden states `[B, T, H]`.
pub(crate) fn lstm_forward(x: &[f64], w_ih: &[f64], w_hh: &[f64], b: &[f64], s: SeqShape) -> (Vec<f64>, LstmCache) {
    let (bt, h4, h) = (s.batch * s.steps, 4 * s.hidden, s.hidden);
    let mut gates = vec![0.0; bt * h4];
    for row in gates.chunks_exact_mut(h4) {
        row.copy_from_slice(b);
    }
    gemm(bt, s.input, h4, Mat::rm(x, s.input), Mat::rm(w_ih, h4), 1.0, &mut gates, h4);
    let mut cells = vec![0.0; bt * h];
    let mut hs = vec![0.0; bt * h];
    for t in 0..s.steps {
        if t > 0 {
            let a = Mat::strided(&hs[(t - 1) * h..], s.steps * h, 1);
            gemm(s.batch, h, h4, a, Mat::rm(w_hh, h4), 1.0, &mut gates[t * h4..], s.steps * h4);
        }
        for n in 0..s.batch {
            let row = n * s.steps + t;
            let g = &mut gates[row * h4..(row + 1) * h4];
            for j in 0..h {
                let ig = sigmoid(g[j]);
                let fg = sigmoid(g[h + j]);
                let gg = g[2 * h + j].tanh();
                let og = sigmoid(g[3 * h + j]);
                g[j] = ig;
                g[h + j] = fg;
                g[2 * h + j] = gg;
                g[3 * h + j] = og;
                let c_prev = if t > 0 { cells[(row - 1) * h + j] } else { 0.0 };
                let c = fg * c_prev + ig * gg;
                cells[row * h + j] = c;
                hs[row * h + j] = og * c.tanh();
            }
        }
    }
    (hs, LstmCache { gates, cells })
}

pub(crate) struct RecurrentGrads {
    pub dx: Option<Vec<f64>>,
    pub dw_ih: Vec<f64>,
    pub dw_hh: Vec<f64>,
    pub db_ih: Vec<f64>,
    /// Only populated for the GRU, which carries a separate recurrent bias.
    pub db_hh: Vec<f64>,
}

/// Hidden states shifted one step forward in time (zeros at `t = 0`).
fn shifted_states(hs: &[f64], s: SeqShape) -> Vec<f64> {
    let h = s.hidden;
    let mut prev = vec![0.0; hs.len()];
    for n in 0..s.batch {
        for t in 1..s.steps {
            let dst = (n * s.steps + t) * h;
            let src = (n * s.steps + t - 1) * h;
            prev[dst..dst + h].copy_from_slice(&hs[src..src + h]);
        }
    }
    prev
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    hs: &[f64],
    cache: &LstmCache,
    dhs: &[f64],
    s: SeqShape,
    need_dx: bool,
) -> RecurrentGrads {
    let (bt, h4, h) = (s.batch * s.steps, 4 * s.hidden, s.hidden);
    let mut dpre = vec![0.0; bt * h4];
    let mut dh_next = vec![0.0; s.batch * h];
    let mut dc_next = vec![0.0; s.batch * h];
    for t in (0..s.steps).rev() {
        for n in 0..s.batch {
            let row = n * s.steps + t;
            let g = &cache.gates[row * h4..(row + 1) * h4];
            let d = &mut dpre[row * h4..(row + 1) * h4];
            for j in 0..h {
                let (ig, fg, gg, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c = cache.cells[row * h + j];
                let tc = c.tanh();
                let dh = dhs[row * h + j] + dh_next[n * h + j];
                let dc = dc_next[n * h + j] + dh * og * (1.0 - tc * tc);
                let c_prev = if t > 0 { cache.cells[(row - 1) * h + j] } else { 0.0 };
                dc_next[n * h + j] = dc * fg;
                d[j] = dc * gg * ig * (1.0 - ig);
                d[h + j] = dc * c_prev * fg * (1.0 - fg);
                d[2 * h + j] = dc * ig * (1.0 - gg * gg);
                d[3 * h + j] = dh * tc * og * (1.0 - og);
            }
        }
        if t > 0 {
            let a = Mat::strided(&dpre[t * h4..], s.steps * h4, 1);
            gemm(s.batch, h4, h, a, Mat::rm_t(w_hh, h4), 0.0, &mut dh_next, h);
        }
    }
    let prev = shifted_states(hs, s);
    let mut dw_hh = vec![0.0; h * h4];
    gemm(h, bt, h4, Mat::rm_t(&prev, h), Mat::rm(&dpre, h4), 0.0, &mut dw_hh, h4);
    let mut dw_ih = vec![0.0; s.input * h4];
    gemm(s.input, bt, h4, Mat::rm_t(x, s.input), Mat::rm(&dpre, h4), 0.0, &mut dw_ih, h4);
    let mut db_ih = vec![0.0; h4];
    col_sum_into(&dpre, h4, &mut db_ih);
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; x.len()];
        gemm(bt, h4, s.input, Mat::rm(&dpre, h4), Mat::rm_t(w_ih, h4), 0.0, &mut dx, s.input);
        dx
    });
    RecurrentGrads {
        dx,
        dw_ih,
        dw_hh,
        db_ih,
        db_hh: Vec::new(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    /// Activated gates `[B, T, 3H]` (r, z, n).
    gates: Vec<f64>,
    /// Recurrent candidate term `h_{t-1} W_hn + b_hn`, `[B, T, H]`.
    hn: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_forward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    b_ih: &[f64],
    b_hh: &[f64],
    s: SeqShape,
) -> (Vec<f64>, GruCache) {
    let (bt, h3, h) = (s.batch * s.steps, 3 * s.hidden, s.hidden);
    let mut gates = vec![0.0; bt * h3];
    for row in gates.chunks_exact_mut(h3) {
        row.copy_from_slice(b_ih);
    }
    gemm(bt, s.input, h3, Mat::rm(x, s.input), Mat::rm(w_ih, h3), 1.0, &mut gates, h3);
    let mut hn = vec![0.0; bt * h];
    let mut hs = vec![0.0; bt * h];
    let mut rec = vec![0.0; s.batch * h3];
    for t in 0..s.steps {
        for row in rec.chunks_exact_mut(h3) {
            row.copy_from_slice(b_hh);
        }
        if t > 0 {
            let a = Mat::strided(&hs[(t - 1) * h..], s.steps * h, 1);
            gemm(s.batch, h, h3, a, Mat::rm(w_hh, h3), 1.0, &mut rec, h3);
        }
        for n in 0..s.batch {
            let row = n * s.steps + t;
            let g = &mut gates[row * h3..(row + 1) * h3];
            let r_in = &rec[n * h3..(n + 1) * h3];
            for j in 0..h {
                let r = sigmoid(g[j] + r_in[j]);
                let z = sigmoid(g[h + j] + r_in[h + j]);
                let cand = g[2 * h + j] + r * r_in[2 * h + j];
                let nv = cand.tanh();
                g[j] = r;
                g[h + j] = z;
                g[2 * h + j] = nv;
                hn[row * h + j] = r_in[2 * h + j];
                let h_prev = if t > 0 { hs[(row - 1) * h + j] } else { 0.0 };
                hs[row * h + j] = (1.0 - z) * nv + z * h_prev;
            }
        }
    }
    (hs, GruCache { gates, hn })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_backward(
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    hs: &[f64],
    cache: &GruCache,
    dhs: &[f64],
    s: SeqShape,
    need_dx: bool,
) -> RecurrentGrads {
    let (bt, h3, h) = (s.batch * s.steps, 3 * s.hidden, s.hidden);
    let mut dpre_x = vec![0.0; bt * h3];
    let mut dpre_h = vec![0.0; bt * h3];
    let mut dh_next = vec![0.0; s.batch * h];
    let mut direct = vec![0.0; s.batch * h];
    for t in (0..s.steps).rev() {
        for n in 0..s.batch {
            let row = n * s.steps + t;
            let g = &cache.gates[row * h3..(row + 1) * h3];
            for j in 0..h {
                let (r, z, nv) = (g[j], g[h + j], g[2 * h + j]);
                let h_prev = if t > 0 { hs[(row - 1) * h + j] } else { 0.0 };
                let dh = dhs[row * h + j] + dh_next[n * h + j];
                let dn_pre = dh * (1.0 - z) * (1.0 - nv * nv);
                let dz_pre = dh * (h_prev - nv) * z * (1.0 - z);
                let dr_pre = dn_pre * cache.hn[row * h + j] * r * (1.0 - r);
                direct[n * h + j] = dh * z;
                let dx_row = &mut dpre_x[row * h3..(row + 1) * h3];
                dx_row[j] = dr_pre;
                dx_row[h + j] = dz_pre;
                dx_row[2 * h + j] = dn_pre;
                let dh_row = &mut dpre_h[row * h3..(row + 1) * h3];
                dh_row[j] = dr_pre;
                dh_row[h + j] = dz_pre;
                dh_row[2 * h + j] = dn_pre * r;
            }
        }
        if t > 0 {
            dh_next.copy_from_slice(&direct);
            let a = Mat::strided(&dpre_h[t * h3..], s.steps * h3, 1);
            gemm(s.batch, h3, h, a, Mat::rm_t(w_hh, h3), 1.0, &mut dh_next, h);
        }
    }
    let prev = shifted_states(hs, s);
    let mut dw_hh = vec![0.0; h * h3];
    gemm(h, bt, h3, Mat::rm_t(&prev, h), Mat::rm(&dpre_h, h3), 0.0, &mut dw_hh, h3);
    let mut dw_ih = vec![0.0; s.input * h3];
    gemm(s.input, bt, h3, Mat::rm_t(x, s.input), Mat::rm(&dpre_x, h3), 0.0, &mut dw_ih, h3);
    let mut db_ih = vec![0.0; h3];
    col_sum_into(&dpre_x, h3, &mut db_ih);
    let mut db_hh = vec![0.0; h3];
    col_sum_into(&dpre_h, h3, &mut db_hh);
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; x.len()];
        gemm(bt, h3, s.input, Mat::rm(&dpre_x, h3), Mat::rm_t(w_ih, h3), 0.0, &mut dx, s.input);
        dx
    });
    RecurrentGrads {
        dx,
        dw_ih,
        dw_hh,
        db_ih,
        db_hh,
    }
}
