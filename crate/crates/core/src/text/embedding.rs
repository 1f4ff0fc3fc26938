use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{KrfError, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"KRFEMB";

/// `vocab_size × dim` word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    weights: Tensor,
}

impl EmbeddingTable {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 {
            return Err(KrfError::InvalidTensor(format!(
                "embedding table must be rank 2, got {:?}",
                weights.shape()
            )));
        }
        if !weights.is_finite() {
            return Err(KrfError::NonFinite("embedding table".into()));
        }
        Ok(EmbeddingTable { weights })
    }

    /// Uniform in `[-scale, scale]`.
    pub fn random<R: Rng>(vocab_size: usize, dim: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..vocab_size * dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        EmbeddingTable {
            weights: Tensor::new(&[vocab_size, dim], data).expect("non-zero sizes"),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        self.weights.row(index)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn into_tensor(self) -> Tensor {
        self.weights
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (va, vb) = (self.vector(a), self.vector(b));
        let dot: f64 = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        let na = va.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    /// Header `KRFEMB`, u32 vocab size, u32 dim (little endian), then
    /// row-major f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(14 + self.weights.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.vocab_size() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.weights.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 14 || &bytes[..6] != MAGIC {
            return Err("missing KRFEMB header".into());
        }
        let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let body = &bytes[14..];
        if rows == 0 || cols == 0 || body.len() != rows * cols * 8 {
            return Err(format!("expected {rows}×{cols} f64 values, found {} bytes", body.len()));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let weights = Tensor::new(&[rows, cols], data).map_err(|e| e.to_string())?;
        EmbeddingTable::new(weights).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| KrfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| KrfError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| KrfError::format(path, msg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_init_range_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = EmbeddingTable::random(10, 4, 0.05, &mut rng);
        assert!(table.weights().data().iter().all(|v| v.abs() <= 0.05));
        let back = EmbeddingTable::from_bytes(&table.to_bytes()).unwrap();
        assert_eq!(back, table);
        let mut bytes = table.to_bytes();
        bytes.pop();
        assert!(EmbeddingTable::from_bytes(&bytes).is_err());
        assert!(EmbeddingTable::from_bytes(b"KRFXXX").is_err());
    }
}
