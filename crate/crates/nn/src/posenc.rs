use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Fixed sinusoidal position table of shape `[max_len, d_model]`.
///
/// Even columns hold `sin(pos / 10000^(2i/d_model))`, odd columns the matching cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    table: Tensor,
}

impl PositionalEncoding {
    pub fn new(max_len: usize, d_model: usize) -> Result<Self> {
        if d_model == 0 || !d_model.is_multiple_of(2) {
            return Err(NnError::Param(format!("d_model must be a positive even number, got {d_model}")));
        }
        if max_len == 0 {
            return Err(NnError::Param("max_len must be at least 1".into()));
        }
        let mut data = vec![0.0; max_len * d_model];
        for pos in 0..max_len {
            for i in 0..d_model / 2 {
                let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
                data[pos * d_model + 2 * i] = angle.sin();
                data[pos * d_model + 2 * i + 1] = angle.cos();
            }
        }
        Ok(Self {
            table: Tensor::from_parts(vec![max_len, d_model], data),
        })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn max_len(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.table.shape()[1]
    }

    /// First `len` rows, tiled `batch` times into `[batch, len, d_model]`.
    pub fn batch_slice(&self, batch: usize, len: usize) -> Result<Tensor> {
        if len > self.max_len() {
            return Err(NnError::Param(format!(
                "sequence length {len} exceeds positional table length {}",
                self.max_len()
            )));
        }
        let rows = &self.table.data()[..len * self.d_model()];
        let mut data = Vec::with_capacity(batch * rows.len());
        for _ in 0..batch {
            data.extend_from_slice(rows);
        }
        Ok(Tensor::from_parts(vec![batch, len, self.d_model()], data))
    }
}
