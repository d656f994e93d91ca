//! The four reconstruction autoencoders.
//!
//! * CNN: four stride-2 convolutions (1 -> 64 -> 128 -> 256 -> 512, kernel 14,
//!   ReLU) and four mirrored transposed convolutions back to one channel, the
//!   last one linear. Output padding of each decoder layer is chosen so the
//!   decoder retraces the encoder's length chain exactly.
//! * LSTM / GRU: recurrent encoder 1 -> 64 -> 32 -> 16 -> 8 emitting per-step
//!   outputs, recurrent decoder 8 -> 16 -> 32 -> 64 and a per-step linear head
//!   to one value. Sequences are cut into fixed-length windows first.
//! * Transformer: linear projection 1 -> 8, sinusoidal positions, one post-norm
//!   encoder block (self-attention, feed-forward 8 -> 32 -> 8 with ReLU) and a
//!   linear projection 8 -> 1.

use mpcd_nn::{conv_out_len, conv_transpose_out_len, Graph, ParamId, ParamStore, PositionalEncoding, Tensor, Var};

use super::config::{
    Arch, ModelConfig, CNN_STRIDE, TRANSFORMER_FFN,
};
use crate::data::{ChunkConfig, ChunkPlan};
use crate::error::{CoreError, Result};
use crate::seed::rng;

/// Sequences per forward pass during evaluation.
pub const EVAL_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Recurrent {
    Lstm { w_ih: ParamId, w_hh: ParamId, b: ParamId },
    Gru { w_ih: ParamId, w_hh: ParamId, b_ih: ParamId, b_hh: ParamId },
}

#[derive(Debug, Clone, PartialEq)]
enum Layout {
    Cnn {
        encoder: Vec<Dense>,
        decoder: Vec<Dense>,
        padding: usize,
    },
    Recurrent {
        layers: Vec<Recurrent>,
        head: Dense,
    },
    Transformer {
        input: Dense,
        query: Dense,
        key: Dense,
        value: Dense,
        attn_out: Dense,
        norm1: (ParamId, ParamId),
        ffn1: Dense,
        ffn2: Dense,
        norm2: (ParamId, ParamId),
        output: Dense,
        heads: usize,
    },
}

/// An autoencoder: configuration, parameters and the wiring between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
    seed: u64,
}

fn dense(store: &mut ParamStore, rng: &mut impl rand::Rng, name: &str, fan_in: usize, fan_out: usize) -> Dense {
    Dense {
        w: store.add_glorot(format!("{name}.w"), &[fan_in, fan_out], fan_in, fan_out, rng),
        b: store.add_zeros(format!("{name}.b"), &[fan_out]),
    }
}

impl Autoencoder {
    /// Builds an untrained model; identical `(config, seed)` give identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let layout = match config.arch {
            Arch::Cnn => {
                let k = config.kernel_size.expect("validated");
                let mut chans = vec![1];
                chans.extend_from_slice(&config.channels_or_embedding);
                let mut encoder = Vec::new();
                for (i, pair) in chans.windows(2).enumerate() {
                    let (ci, co) = (pair[0], pair[1]);
                    encoder.push(Dense {
                        w: store.add_glorot(format!("enc{i}.w"), &[co, ci, k], ci * k, co * k, &mut r),
                        b: store.add_zeros(format!("enc{i}.b"), &[co]),
                    });
                }
                let mut decoder = Vec::new();
                for (i, pair) in chans.iter().rev().collect::<Vec<_>>().windows(2).enumerate() {
                    let (ci, co) = (*pair[0], *pair[1]);
                    decoder.push(Dense {
                        w: store.add_glorot(format!("dec{i}.w"), &[ci, co, k], co * k, ci * k, &mut r),
                        b: store.add_zeros(format!("dec{i}.b"), &[co]),
                    });
                }
                Layout::Cnn {
                    encoder,
                    decoder,
                    padding: k / 2,
                }
            }
            Arch::Lstm | Arch::Gru => {
                let hidden = &config.channels_or_embedding;
                let mut sizes = vec![1];
                sizes.extend_from_slice(hidden);
                sizes.extend(hidden.iter().rev().skip(1));
                let gates = if config.arch == Arch::Lstm { 4 } else { 3 };
                let mut layers = Vec::new();
                for (i, pair) in sizes.windows(2).enumerate() {
                    let (f, h) = (pair[0], pair[1]);
                    let name = if i < hidden.len() {
                        format!("enc{i}")
                    } else {
                        format!("dec{}", i - hidden.len())
                    };
                    let w_ih = store.add_glorot(format!("{name}.w_ih"), &[f, gates * h], f, gates * h, &mut r);
                    let w_hh = store.add_glorot(format!("{name}.w_hh"), &[h, gates * h], h, gates * h, &mut r);
                    layers.push(if config.arch == Arch::Lstm {
                        Recurrent::Lstm {
                            w_ih,
                            w_hh,
                            b: store.add_zeros(format!("{name}.b"), &[4 * h]),
                        }
                    } else {
                        Recurrent::Gru {
                            w_ih,
                            w_hh,
                            b_ih: store.add_zeros(format!("{name}.b_ih"), &[3 * h]),
                            b_hh: store.add_zeros(format!("{name}.b_hh"), &[3 * h]),
                        }
                    });
                }
                let last = *sizes.last().expect("non-empty");
                let head = dense(&mut store, &mut r, "head", last, 1);
                Layout::Recurrent { layers, head }
            }
            Arch::Transformer => {
                let e = config.channels_or_embedding[0];
                let heads = config.attention_heads.expect("validated");
                let input = dense(&mut store, &mut r, "in", 1, e);
                let query = dense(&mut store, &mut r, "attn.q", e, e);
                let key = dense(&mut store, &mut r, "attn.k", e, e);
                let value = dense(&mut store, &mut r, "attn.v", e, e);
                let attn_out = dense(&mut store, &mut r, "attn.o", e, e);
                let norm1 = (store.add_filled("ln1.gamma", &[e], 1.0), store.add_zeros("ln1.beta", &[e]));
                let ffn1 = dense(&mut store, &mut r, "ffn1", e, TRANSFORMER_FFN);
                let ffn2 = dense(&mut store, &mut r, "ffn2", TRANSFORMER_FFN, e);
                let norm2 = (store.add_filled("ln2.gamma", &[e], 1.0), store.add_zeros("ln2.beta", &[e]));
                let output = dense(&mut store, &mut r, "out", e, 1);
                Layout::Transformer {
                    input,
                    query,
                    key,
                    value,
                    attn_out,
                    norm1,
                    ffn1,
                    ffn2,
                    norm2,
                    output,
                    heads,
                }
            }
        };
        Ok(Self {
            config: config.clone(),
            params: store,
            layout,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Replaces parameter values from a checkpoint with matching names and shapes.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        self.params.copy_values_from(store).map_err(CoreError::from)
    }

    /// How a sequence of `len` samples is cut into model windows.
    pub fn window_plan(&self, len: usize) -> Result<ChunkPlan> {
        let chunk = self.config.chunk_length.unwrap_or(len);
        ChunkPlan::new(len, ChunkConfig { chunk_length: chunk })
    }

    /// Lengths along the CNN encoder, input first.
    pub fn cnn_length_chain(&self, len: usize) -> Result<Vec<usize>> {
        let Layout::Cnn { encoder, padding, .. } = &self.layout else {
            return Err(CoreError::Config("length chain is defined for the CNN only".into()));
        };
        let k = self.config.kernel_size.expect("validated");
        let mut lens = vec![len];
        for _ in encoder {
            let cur = *lens.last().expect("non-empty");
            let next = conv_out_len(cur, k, CNN_STRIDE, *padding)
                .ok_or_else(|| CoreError::Shape(format!("length {cur} too short for kernel {k}")))?;
            lens.push(next);
        }
        Ok(lens)
    }

    /// Forward pass over `windows` of shape `[n, T]`; returns a `[n, T]` node.
    pub fn forward(&self, g: &mut Graph, windows: &Tensor) -> Result<Var> {
        if windows.ndim() != 2 {
            return Err(CoreError::Shape(format!("expected [n, T] windows, got {:?}", windows.shape())));
        }
        let (n, t) = (windows.shape()[0], windows.shape()[1]);
        let p = |g: &mut Graph, id: ParamId| g.param(&self.params, id);
        let lin = |g: &mut Graph, x: Var, d: Dense| -> Result<Var> {
            let w = g.param(&self.params, d.w);
            let b = g.param(&self.params, d.b);
            let y = g.matmul(x, w)?;
            Ok(g.add_bias(y, b)?)
        };
        let out = match &self.layout {
            Layout::Cnn {
                encoder,
                decoder,
                padding,
            } => {
                let lens = self.cnn_length_chain(t)?;
                let k = self.config.kernel_size.expect("validated");
                let mut x = g.constant(windows.clone().reshape(&[n, 1, t])?);
                for d in encoder {
                    let (w, b) = (p(g, d.w), p(g, d.b));
                    let y = g.conv1d(x, w, b, CNN_STRIDE, *padding)?;
                    x = g.relu(y);
                }
                for (j, d) in decoder.iter().enumerate() {
                    let cur = lens[lens.len() - 1 - j];
                    let target = lens[lens.len() - 2 - j];
                    let base = conv_transpose_out_len(cur, k, CNN_STRIDE, *padding, 0).unwrap_or(0);
                    if target < base || target - base >= CNN_STRIDE {
                        return Err(CoreError::Shape(format!(
                            "decoder layer {j} cannot map length {cur} back to {target}"
                        )));
                    }
                    let (w, b) = (p(g, d.w), p(g, d.b));
                    let y = g.conv_transpose1d(x, w, b, CNN_STRIDE, *padding, target - base)?;
                    x = if j + 1 < decoder.len() { g.relu(y) } else { y };
                }
                x
            }
            Layout::Recurrent { layers, head } => {
                let mut x = g.constant(windows.clone().reshape(&[n, t, 1])?);
                for layer in layers {
                    x = match *layer {
                        Recurrent::Lstm { w_ih, w_hh, b } => {
                            let (wi, wh, bb) = (p(g, w_ih), p(g, w_hh), p(g, b));
                            g.lstm(x, wi, wh, bb)?
                        }
                        Recurrent::Gru { w_ih, w_hh, b_ih, b_hh } => {
                            let (wi, wh, bi, bh) = (p(g, w_ih), p(g, w_hh), p(g, b_ih), p(g, b_hh));
                            g.gru(x, wi, wh, bi, bh)?
                        }
                    };
                }
                lin(g, x, *head)?
            }
            Layout::Transformer {
                input,
                query,
                key,
                value,
                attn_out,
                norm1,
                ffn1,
                ffn2,
                norm2,
                output,
                heads,
            } => {
                let e = self.config.channels_or_embedding[0];
                let x = g.constant(windows.clone().reshape(&[n, t, 1])?);
                let emb = lin(g, x, *input)?;
                let pe = PositionalEncoding::new(t, e)?.batch_slice(n, t)?;
                let pe = g.constant(pe);
                let h0 = g.add(emb, pe)?;

                let q = lin(g, h0, *query)?;
                let q = g.scale(q, 1.0 / ((e / heads) as f64).sqrt());
                let kk = lin(g, h0, *key)?;
                let v = lin(g, h0, *value)?;
                let q = g.split_heads(q, *heads)?;
                let kk = g.split_heads(kk, *heads)?;
                let v = g.split_heads(v, *heads)?;
                let kt = g.transpose_last2(kk)?;
                let scores = g.batch_matmul(q, kt)?;
                let attn = g.softmax(scores);
                let ctx = g.batch_matmul(attn, v)?;
                let ctx = g.merge_heads(ctx, *heads)?;
                let a = lin(g, ctx, *attn_out)?;
                let r1 = g.add(h0, a)?;
                let (g1, b1) = (p(g, norm1.0), p(g, norm1.1));
                let h1 = g.layer_norm(r1, g1, b1)?;

                let f = lin(g, h1, *ffn1)?;
                let f = g.relu(f);
                let f = lin(g, f, *ffn2)?;
                let r2 = g.add(h1, f)?;
                let (g2, b2) = (p(g, norm2.0), p(g, norm2.1));
                let h2 = g.layer_norm(r2, g2, b2)?;
                lin(g, h2, *output)?
            }
        };
        Ok(g.reshape(out, &[n, t])?)
    }

    /// Stacks the windows of equal-length sequences into one `[n, T]` tensor.
    pub(crate) fn stack_windows(&self, seqs: &[&[f64]], plan: &ChunkPlan) -> Result<Tensor> {
        let mut flat = Vec::with_capacity(seqs.len() * plan.n_chunks() * plan.chunk_length);
        for s in seqs {
            flat.extend(plan.extract(s)?);
        }
        Ok(Tensor::new(vec![seqs.len() * plan.n_chunks(), plan.chunk_length], flat)?)
    }

    /// Reconstructs equal-length sequences. Parameters are never modified.
    pub fn reconstruct_batch(&self, seqs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = seqs.first() else {
            return Ok(Vec::new());
        };
        let len = first.len();
        if len == 0 {
            return Err(CoreError::Shape("cannot reconstruct an empty sequence".into()));
        }
        if let Some(s) = seqs.iter().find(|s| s.len() != len) {
            return Err(CoreError::Shape(format!("mixed sequence lengths {len} and {}", s.len())));
        }
        let plan = self.window_plan(len)?;
        let per_seq = plan.n_chunks() * plan.chunk_length;
        let mut out = Vec::with_capacity(seqs.len());
        for group in seqs.chunks(EVAL_BATCH) {
            let windows = self.stack_windows(group, &plan)?;
            let mut g = Graph::new();
            let y = self.forward(&mut g, &windows)?;
            let yv = g.value(y);
            if !yv.is_finite() {
                return Err(CoreError::Shape("reconstruction produced non-finite values".into()));
            }
            for chunked in yv.data().chunks_exact(per_seq) {
                out.push(plan.reassemble(chunked)?);
            }
        }
        Ok(out)
    }

    pub fn reconstruct(&self, values: &[f64]) -> Result<Vec<f64>> {
        Ok(self.reconstruct_batch(&[values])?.remove(0))
    }
}
