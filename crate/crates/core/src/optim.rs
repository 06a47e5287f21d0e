//! AdamW with decoupled weight decay and sparse (touched-only) updates.
//!
//! Parameters are organized in groups (query transform, coarse centroids,
//! codebooks), each with its own learning rate but shared moment hyper-
//! parameters. A step only visits the entries whose gradient is present, so
//! parameters outside the step's batch keep their exact previous value —
//! moments included. Bias correction uses the global step count.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0;

const STATE_MAGIC: &[u8; 8] = b"RVQADAMW";
const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            epsilon: DEFAULT_EPSILON,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// First/second moment buffers for one parameter group.
#[derive(Debug, Clone, PartialEq)]
struct GroupState {
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    groups: Vec<GroupState>,
    /// Completed optimizer steps (shared across groups).
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, group_sizes: &[usize]) -> Result<Self> {
        config.validate()?;
        let groups = group_sizes
            .iter()
            .map(|n| GroupState {
                m: vec![0.0; *n],
                v: vec![0.0; *n],
            })
            .collect();
        Ok(Self {
            config,
            groups,
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_len(&self, group: usize) -> usize {
        self.groups[group].m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter. Call once per batch, before the
    /// per-group `update` calls for that batch.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies one AdamW update to the listed entries of `group`.
    ///
    /// `sparse_grads` pairs flat parameter offsets with gradient values; only
    /// those entries move. A non-finite gradient aborts with no change to
    /// parameters or moments. Entries may appear at most once.
    pub fn update(
        &mut self,
        group: usize,
        lr: f64,
        params: &mut [f32],
        sparse_grads: &[(usize, f64)],
    ) -> Result<()> {
        if group >= self.groups.len() {
            return Err(Error::Config(format!(
                "optimizer group {group} out of range ({} groups)",
                self.groups.len()
            )));
        }
        if self.step == 0 {
            return Err(Error::Config(
                "optimizer update issued before begin_step".into(),
            ));
        }
        let state = &mut self.groups[group];
        if params.len() != state.m.len() {
            return Err(Error::Config(format!(
                "parameter group {group} has {} entries, optimizer state has {}",
                params.len(),
                state.m.len()
            )));
        }
        for (idx, g) in sparse_grads {
            if *idx >= params.len() {
                return Err(Error::Config(format!(
                    "gradient offset {idx} out of range for group {group}"
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {g} at offset {idx} of group {group}"
                )));
            }
        }

        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (idx, g) in sparse_grads {
            let m = &mut state.m[*idx];
            let v = &mut state.v[*idx];
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            let p = params[*idx] as f64;
            let decayed = p - lr * c.weight_decay * p;
            params[*idx] = (decayed - lr * m_hat / (v_hat.sqrt() + c.epsilon)) as f32;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.config.beta1.to_le_bytes());
        out.extend_from_slice(&self.config.beta2.to_le_bytes());
        out.extend_from_slice(&self.config.epsilon.to_le_bytes());
        out.extend_from_slice(&self.config.weight_decay.to_le_bytes());
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            out.extend_from_slice(&(g.m.len() as u64).to_le_bytes());
            for x in &g.m {
                out.extend_from_slice(&x.to_le_bytes());
            }
            for x in &g.v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |msg: &str| Error::Config(format!("optimizer state: {msg}"));
        if bytes.len() < STATE_MAGIC.len() + 32 {
            return Err(err("too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("checksum mismatch"));
        }
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            let s = body
                .get(*off..*off + n)
                .ok_or_else(|| err("truncated body"))?;
            *off += n;
            Ok(s)
        };
        if take(&mut off, 8)? != STATE_MAGIC {
            return Err(err("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != STATE_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let step = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        let f64s = |off: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(off, 8)?.try_into().unwrap()))
        };
        let config = AdamWConfig {
            beta1: f64s(&mut off)?,
            beta2: f64s(&mut off)?,
            epsilon: f64s(&mut off)?,
            weight_decay: f64s(&mut off)?,
        };
        config.validate()?;
        let n_groups = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut groups = Vec::with_capacity(n_groups);
        for _ in 0..n_groups {
            let len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
            let read_vec = |off: &mut usize| -> Result<Vec<f64>> {
                let raw = take(off, len * 8)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let m = read_vec(&mut off)?;
            let v = read_vec(&mut off)?;
            groups.push(GroupState { m, v });
        }
        if off != body.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Self {
            config,
            groups,
            step,
        })
    }
}
