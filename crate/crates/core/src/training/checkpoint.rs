//! Little-endian checkpoint file:
//!
//! ```text
//! "ARCC"  version u32
//! tensor count u32
//! per tensor: name length u16, UTF-8 name, rank u8, dims u64 × rank, f32 data
//! footer: epoch u32, validation loss f32, config hash [u8; 32]
//! ```
//!
//! Besides the model tensors, three `meta.*` tensors carry the routing and
//! margin hyperparameters and the shuffle generator position, each split
//! into values an `f32` holds exactly.

use std::path::Path;

use crate::capsules::RoutingConfig;
use crate::error::{Error, Result};
use crate::loss_metrics::MarginConfig;
use crate::model::{ModelParams, PARAM_NAMES};
use crate::numerics::Tensor;

const MAGIC: &[u8; 4] = b"ARCC";
pub const CHECKPOINT_VERSION: u32 = 1;

const META_ROUTING: &str = "meta.routing";
const META_MARGIN: &str = "meta.margin";
const META_RNG: &str = "meta.rng";

/// Shuffle generator position: the `u64` seed and the ChaCha word position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    fn to_tensor(self) -> Tensor {
        // 16-bit limbs are exact in f32
        let limbs = (0..4).map(|k| ((self.seed >> (16 * k)) & 0xffff) as f32).chain((0..8).map(|k| ((self.word_pos >> (16 * k)) & 0xffff) as f32));
        Tensor::from_vec(&[12], limbs.collect()).expect("12 limbs")
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let d = t.data();
        if d.len() != 12 || d.iter().any(|&x| !(0.0..65536.0).contains(&x) || x.fract() != 0.0) {
            return Err(Error::Format("malformed generator state".into()));
        }
        let seed = (0..4).fold(0u64, |acc, k| acc | ((d[k] as u64) << (16 * k)));
        let word_pos = (0..8).fold(0u128, |acc, k| acc | ((d[4 + k] as u128) << (16 * k)));
        Ok(RngState { seed, word_pos })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub routing: RoutingConfig,
    pub margin: MarginConfig,
    pub rng: RngState,
    pub epoch: u32,
    pub val_loss: f32,
    pub config_hash: [u8; 32],
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.pos.checked_add(n).filter(|&e| e <= self.buf.len()) {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = u16::from_le_bytes(self.array()?) as usize;
        let name = std::str::from_utf8(self.take(len)?).map_err(|e| Error::Format(format!("tensor name is not UTF-8: {e}")))?.to_string();
        let rank = self.array::<1>()?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(self.array()?);
            shape.push(usize::try_from(d).map_err(|_| Error::Format(format!("dimension {d} too large")))?);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("tensor too large".into()))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let routing = Tensor::from_vec(&[2], vec![self.routing.iters as f32, self.routing.eta]).expect("2 values");
        let margin = Tensor::from_vec(&[3], vec![self.margin.m_plus, self.margin.m_minus, self.margin.lambda_down]).expect("3 values");
        let rng = self.rng.to_tensor();
        let params = self.params.tensors();
        out.extend_from_slice(&((params.len() + 3) as u32).to_le_bytes());
        for (name, t) in PARAM_NAMES.iter().zip(params) {
            put_tensor(&mut out, name, t);
        }
        put_tensor(&mut out, META_ROUTING, &routing);
        put_tensor(&mut out, META_MARGIN, &margin);
        put_tensor(&mut out, META_RNG, &rng);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(r.array()?) as usize;
        let expected: Vec<&str> = PARAM_NAMES.iter().copied().chain([META_ROUTING, META_MARGIN, META_RNG]).collect();
        if count != expected.len() {
            return Err(Error::Format(format!("checkpoint holds {count} tensors, expected {}", expected.len())));
        }
        let mut tensors = Vec::with_capacity(count);
        for want in &expected {
            let (name, t) = r.tensor()?;
            if name != *want {
                return Err(Error::Format(format!("expected tensor {want:?}, found {name:?}")));
            }
            tensors.push(t);
        }
        let rng = RngState::from_tensor(&tensors.pop().expect("rng"))?;
        let margin = tensors.pop().expect("margin");
        let routing = tensors.pop().expect("routing");
        let (&[iters, eta], &[m_plus, m_minus, lambda_down]) = (routing.data(), margin.data()) else {
            return Err(Error::Format("malformed hyperparameter tensors".into()));
        };
        if iters < 1.0 || iters.fract() != 0.0 {
            return Err(Error::Format(format!("invalid routing iteration count {iters}")));
        }
        let params = ModelParams::from_tensors(tensors)?;
        let epoch = u32::from_le_bytes(r.array()?);
        let val_loss = f32::from_le_bytes(r.array()?);
        let config_hash = r.array::<32>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint footer", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params,
            routing: RoutingConfig { iters: iters as usize, eta },
            margin: MarginConfig { m_plus, m_minus, lambda_down },
            rng,
            epoch,
            val_loss,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Checkpoint::decode(&bytes)
    }
}
