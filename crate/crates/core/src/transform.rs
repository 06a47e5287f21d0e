//! The learned query-side map: a single affine layer `q' = W q + b`.
//!
//! It starts as the identity so an untrained model scores queries exactly as
//! the original embeddings do, and training nudges it away from identity only
//! as far as the distillation objective asks.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const TRANSFORM_MAGIC: &[u8; 8] = b"RVQXFORM";
const TRANSFORM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTransform {
    dim: usize,
    weight: Vec<f32>, // dim x dim, row-major
    bias: Vec<f32>,   // dim
}

impl QueryTransform {
    /// Identity weights, zero bias: `apply` reproduces its input bit-for-bit.
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0f32; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            dim,
            weight,
            bias: vec![0f32; dim],
        }
    }

    pub fn new(dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if dim == 0 || weight.len() != dim * dim || bias.len() != dim {
            return Err(Error::Config(format!(
                "transform buffers ({} weights, {} biases) do not match dim {dim}",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite transform parameter".into()));
        }
        Ok(Self { dim, weight, bias })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight_mut(&mut self) -> &mut [f32] {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut [f32] {
        &mut self.bias
    }

    /// `W q + b`, accumulated per row in f64 and rounded to f32.
    ///
    /// The identity transform reproduces its input exactly (every f32 round
    /// trips through f64), with one footnote: a negative zero comes back as
    /// positive zero, which no inner product can distinguish.
    pub fn apply(&self, q: &[f32]) -> Vec<f32> {
        assert_eq!(q.len(), self.dim, "dimension mismatch");
        let mut out = vec![0f32; self.dim];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weight[r * self.dim..(r + 1) * self.dim];
            let mut acc = self.bias[r] as f64;
            for (w, x) in row.iter().zip(q) {
                acc += *w as f64 * *x as f64;
            }
            *o = acc as f32;
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * (self.weight.len() + self.bias.len()) + 32);
        out.extend_from_slice(TRANSFORM_MAGIC);
        out.extend_from_slice(&TRANSFORM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in self.weight.iter().chain(self.bias.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 + 32 {
            return Err(Error::file(path, "file too short to be a query transform"));
        }
        if &bytes[..8] != TRANSFORM_MAGIC {
            return Err(Error::file(path, "bad magic: not a query transform file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::file(
                path,
                "checksum mismatch: file is truncated or corrupt",
            ));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != TRANSFORM_VERSION {
            return Err(Error::file(path, format!("unsupported version {version}")));
        }
        let dim = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let expected = 16 + 4 * (dim * dim + dim);
        if dim == 0 || body.len() != expected {
            return Err(Error::file(path, "transform payload size mismatch"));
        }
        let floats: Vec<f32> = body[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (weight, bias) = floats.split_at(dim * dim);
        Self::new(dim, weight.to_vec(), bias.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_reproduces_input_bits() {
        let t = QueryTransform::identity(5);
        let q = [0.1f32, 7.25, 3.5e-7, -2.0, 1.0];
        let out = t.apply(&q);
        for (a, b) in q.iter().zip(&out) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Signed zero is the lone exception: it normalizes to +0.0.
        let z = t.apply(&[-0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(z[0], 0.0);
        assert_eq!(z[0].to_bits(), 0);
    }

    #[test]
    fn affine_map_small_example() {
        let t = QueryTransform::new(2, vec![0.0, 1.0, -1.0, 0.0], vec![10.0, 20.0]).unwrap();
        assert_eq!(t.apply(&[3.0, 4.0]), vec![14.0, 17.0]);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let mut t = QueryTransform::identity(3);
        t.weight_mut()[1] = -0.25;
        t.bias_mut()[2] = 7.5;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xform.rvq");
        t.save(&path).unwrap();
        let back = QueryTransform::load(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn corrupt_transform_is_rejected() {
        let t = QueryTransform::identity(4);
        let mut bytes = t.to_bytes();
        bytes[20] ^= 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rvq");
        std::fs::write(&path, bytes).unwrap();
        assert!(QueryTransform::load(&path).is_err());
    }
}
