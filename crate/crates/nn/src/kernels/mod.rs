pub(crate) mod conv;
pub(crate) mod recurrent;

/// Sums the rows of a `[rows, cols]` matrix into `out` (accumulating).
pub(crate) fn col_sum_into(data: &[f64], cols: usize, out: &mut [f64]) {
    for row in data.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
