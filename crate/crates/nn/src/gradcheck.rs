//! Central finite-difference checks of every operator's backward pass.
//!
//! Each [`Case`] builds `loss = mse(f(leaves), target)` from random leaves and
//! compares the analytic gradient of every leaf entry with
//! `(L(x + h) - L(x - h)) / 2h`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{conv_out_len, conv_transpose_out_len, Graph, Result, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Case {
    Dense,
    Activations,
    Softmax,
    Conv1d,
    ConvTranspose1d,
    Lstm,
    Gru,
    Attention,
    TwoHeadAttention,
    LayerNorm,
    Mse,
}

impl Case {
    pub const ALL: [Case; 11] = [
        Case::Dense,
        Case::Activations,
        Case::Softmax,
        Case::Conv1d,
        Case::ConvTranspose1d,
        Case::Lstm,
        Case::Gru,
        Case::Attention,
        Case::TwoHeadAttention,
        Case::LayerNorm,
        Case::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Case::Dense => "dense",
            Case::Activations => "activations",
            Case::Softmax => "softmax",
            Case::Conv1d => "conv1d",
            Case::ConvTranspose1d => "conv_transpose1d",
            Case::Lstm => "lstm",
            Case::Gru => "gru",
            Case::Attention => "attention",
            Case::TwoHeadAttention => "attention-2h",
            Case::LayerNorm => "layer_norm",
            Case::Mse => "mse",
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("valid shape")
}

/// Relative error with an absolute floor so near-zero entries do not blow up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error over all leaf entries.
pub fn check<F>(leaves: &[Tensor], target: &Tensor, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let loss = g.mse_loss(out, target)?;
        Ok(g.value(loss).item())
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.input(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let loss = g.mse_loss(out, target)?;
    let grads = g.backward(loss)?;

    let mut worst = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        // No gradient means zero; the numeric side must then agree.
        let analytic = grads.wrt(vars[li]).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()));
        for idx in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].data_mut()[idx] += STEP;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[idx] -= STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[idx], numeric));
        }
    }
    Ok(worst)
}

fn attention(g: &mut Graph, v: &[Var], heads: usize) -> Result<Var> {
    let x = v[0];
    let e = g.value(x).shape()[2];
    let proj = |g: &mut Graph, w: Var, b: Var| -> Result<Var> {
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    };
    let q = proj(g, v[1], v[2])?;
    let k = proj(g, v[3], v[4])?;
    let val = proj(g, v[5], v[6])?;
    let (q, k, val) = (g.split_heads(q, heads)?, g.split_heads(k, heads)?, g.split_heads(val, heads)?);
    let kt = g.transpose_last2(k)?;
    let scores = g.batch_matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / ((e / heads) as f64).sqrt());
    let attn = g.softmax(scores);
    let ctx = g.batch_matmul(attn, val)?;
    let ctx = g.merge_heads(ctx, heads)?;
    let o = g.matmul(ctx, v[7])?;
    g.add_bias(o, v[8])
}

fn attention_leaves(rng: &mut ChaCha8Rng, b: usize, t: usize, e: usize) -> Vec<Tensor> {
    let mut leaves = vec![rand_tensor(rng, &[b, t, e], 1.0)];
    for _ in 0..4 {
        leaves.push(rand_tensor(rng, &[e, e], 0.7));
        leaves.push(rand_tensor(rng, &[e], 0.3));
    }
    leaves
}

/// Runs one case with leaves drawn from `seed`; returns the worst relative error.
pub fn run_case(case: Case, seed: u64) -> Result<f64> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed.wrapping_mul(7919).wrapping_add(11));
    match case {
        Case::Dense => {
            let leaves = [
                rand_tensor(rng, &[2, 3, 4], 1.0),
                rand_tensor(rng, &[4, 5], 1.0),
                rand_tensor(rng, &[5], 1.0),
            ];
            let target = rand_tensor(rng, &[2, 3, 5], 1.0);
            check(&leaves, &target, |g, v| {
                let y = g.matmul(v[0], v[1])?;
                g.add_bias(y, v[2])
            })
        }
        Case::Activations => {
            let leaves = [rand_tensor(rng, &[3, 6], 2.0), rand_tensor(rng, &[3, 6], 2.0)];
            let target = rand_tensor(rng, &[3, 6], 1.0);
            check(&leaves, &target, |g, v| {
                let a = g.relu(v[0]);
                let b = g.sigmoid(v[1]);
                let c = g.tanh(v[0]);
                let ab = g.add(a, b)?;
                let s = g.scale(c, 0.7);
                g.add(ab, s)
            })
        }
        Case::Softmax => {
            let leaves = [rand_tensor(rng, &[2, 3, 5], 2.0)];
            let target = rand_tensor(rng, &[2, 3, 5], 0.5);
            check(&leaves, &target, |g, v| Ok(g.softmax(v[0])))
        }
        Case::Conv1d => {
            let leaves = [
                rand_tensor(rng, &[2, 2, 9], 1.0),
                rand_tensor(rng, &[3, 2, 4], 1.0),
                rand_tensor(rng, &[3], 1.0),
            ];
            let out_len = conv_out_len(9, 4, 2, 2).expect("fits");
            let target = rand_tensor(rng, &[2, 3, out_len], 1.0);
            check(&leaves, &target, |g, v| g.conv1d(v[0], v[1], v[2], 2, 2))
        }
        Case::ConvTranspose1d => {
            let leaves = [
                rand_tensor(rng, &[2, 3, 5], 1.0),
                rand_tensor(rng, &[3, 2, 4], 1.0),
                rand_tensor(rng, &[2], 1.0),
            ];
            let out_len = conv_transpose_out_len(5, 4, 2, 1, 1).expect("fits");
            let target = rand_tensor(rng, &[2, 2, out_len], 1.0);
            check(&leaves, &target, |g, v| g.conv_transpose1d(v[0], v[1], v[2], 2, 1, 1))
        }
        Case::Lstm => {
            let (b, t, f, h) = (2, 5, 3, 4);
            let leaves = [
                rand_tensor(rng, &[b, t, f], 1.0),
                rand_tensor(rng, &[f, 4 * h], 0.8),
                rand_tensor(rng, &[h, 4 * h], 0.8),
                rand_tensor(rng, &[4 * h], 0.5),
            ];
            let target = rand_tensor(rng, &[b, t, h], 0.5);
            check(&leaves, &target, |g, v| g.lstm(v[0], v[1], v[2], v[3]))
        }
        Case::Gru => {
            let (b, t, f, h) = (2, 5, 3, 4);
            let leaves = [
                rand_tensor(rng, &[b, t, f], 1.0),
                rand_tensor(rng, &[f, 3 * h], 0.8),
                rand_tensor(rng, &[h, 3 * h], 0.8),
                rand_tensor(rng, &[3 * h], 0.5),
                rand_tensor(rng, &[3 * h], 0.5),
            ];
            let target = rand_tensor(rng, &[b, t, h], 0.5);
            check(&leaves, &target, |g, v| g.gru(v[0], v[1], v[2], v[3], v[4]))
        }
        Case::Attention => {
            let leaves = attention_leaves(rng, 2, 6, 4);
            let target = rand_tensor(rng, &[2, 6, 4], 1.0);
            check(&leaves, &target, |g, v| attention(g, v, 1))
        }
        Case::TwoHeadAttention => {
            let leaves = attention_leaves(rng, 1, 5, 4);
            let target = rand_tensor(rng, &[1, 5, 4], 1.0);
            check(&leaves, &target, |g, v| attention(g, v, 2))
        }
        Case::LayerNorm => {
            let leaves = [
                rand_tensor(rng, &[3, 5], 2.0),
                rand_tensor(rng, &[5], 1.5),
                rand_tensor(rng, &[5], 1.0),
            ];
            let target = rand_tensor(rng, &[3, 5], 1.0);
            check(&leaves, &target, |g, v| g.layer_norm(v[0], v[1], v[2]))
        }
        Case::Mse => {
            // An identity body leaves only the loss gradient under test.
            let leaves = [rand_tensor(rng, &[4, 7], 1.0)];
            let target = rand_tensor(rng, &[4, 7], 1.0);
            check(&leaves, &target, |_, v| Ok(v[0]))
        }
    }
}

/// Worst error of `case` over seeds `0..seeds`.
pub fn worst_over_seeds(case: Case, seeds: u64) -> Result<f64> {
    (0..seeds).try_fold(0.0f64, |w, s| Ok(w.max(run_case(case, s)?)))
}
