//! Flat binary container shared by every persisted model.
//!
//! Layout (all integers `u32`, all floats `f64`, little-endian):
//!
//! ```text
//! magic            8 bytes  "QIMBMODL"
//! version          u32      1
//! kind             u32      1 = Q-network, 2 = supervised MLP
//! head             u32      Q-network: 0 single-stream, 1 dueling softmax-subtract,
//!                           2 dueling mean-subtract; MLP: 0 sigmoid, 1 softmax
//! action_count     u32      K (actions or classes)
//! dropout          f64      drop rate of the hidden layers
//! trunk_layers     u32      number of hidden (shared) layers
//! layer_count      u32      L
//! L x { rows u32, cols u32, activation u32 (0 identity, 1 relu) }
//! provenance_len   u32      followed by that many UTF-8 bytes
//! L x { weights rows*cols f64 (row-major), bias rows f64 }
//! ```
//!
//! Q-network layers are stored trunk first, then the value stream (dueling
//! only), then the advantage stream. MLP layers are hidden layers then the
//! output layer.

use crate::error::{Error, Result};
use crate::numkernel::{Activation, DenseLayer, Matrix};

pub const MAGIC: &[u8; 8] = b"QIMBMODL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    QNetwork,
    Supervised,
}

impl ModelKind {
    fn tag(self) -> u32 {
        match self {
            ModelKind::QNetwork => 1,
            ModelKind::Supervised => 2,
        }
    }

    fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            1 => Ok(ModelKind::QNetwork),
            2 => Ok(ModelKind::Supervised),
            other => Err(Error::Format(format!("unknown model kind tag {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub kind: ModelKind,
    pub head: u32,
    pub action_count: u32,
    pub dropout: f64,
    pub trunk_layers: u32,
    pub layers: Vec<DenseLayer>,
    pub provenance: String,
}

impl ModelRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            self.kind.tag(),
            self.head,
            self.action_count,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.dropout.to_le_bytes());
        out.extend_from_slice(&self.trunk_layers.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&layer.activation.tag().to_le_bytes());
        }
        out.extend_from_slice(&(self.provenance.len() as u32).to_le_bytes());
        out.extend_from_slice(self.provenance.as_bytes());
        for layer in &self.layers {
            for v in layer.weights.data().iter().chain(&layer.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("bad magic; not a model file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let kind = ModelKind::from_tag(r.u32()?)?;
        let head = r.u32()?;
        let action_count = r.u32()?;
        let dropout = r.f64()?;
        let trunk_layers = r.u32()?;
        let layer_count = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(layer_count.min(1024));
        for _ in 0..layer_count {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let act = Activation::from_tag(r.u32()?)?;
            shapes.push((rows, cols, act));
        }
        let plen = r.u32()? as usize;
        let provenance = String::from_utf8(r.take(plen)?.to_vec())
            .map_err(|_| Error::Format("provenance is not UTF-8".into()))?;
        let mut layers = Vec::with_capacity(layer_count);
        for (rows, cols, act) in shapes {
            let weights = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let bias = (0..rows).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(DenseLayer::new(Matrix::new(rows, cols, weights)?, bias, act)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after model payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            kind,
            head,
            action_count,
            dropout,
            trunk_layers,
            layers,
            provenance,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated model file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
