//! Checkpoint container.
//!
//! ```text
//! DEPTHFUSE-CKPT 1\n
//! key=value\n ...            model configuration, epoch, optimizer settings
//! \n
//! u32 tensor count
//! per tensor: u32 name length, name bytes, u32 rank, u32 extents, f32 data
//! ```
//!
//! Integers and floats are little-endian. Tensors appear in layout order:
//! parameters, then `adam.m.<name>`, then `adam.v.<name>`. Header keys are
//! written in a fixed order, so equal states produce identical bytes.

use std::path::Path;

use depthfuse_core::model::{Model, ModelConfig, Param};
use depthfuse_core::optim::{AdamConfig, AdamState};
use depthfuse_core::tensor::{Shape, Tensor};
use depthfuse_core::train::TrainState;

use super::keyvalue::parse_key_values;
use super::{read_bytes, write_bytes, FormatError, FormatResult};
use crate::config::{model_entries, set_model_key, MODEL_KEYS};

pub const CHECKPOINT_MAGIC: &str = "DEPTHFUSE-CKPT 1";

pub fn encode_checkpoint(state: &TrainState) -> Vec<u8> {
    let mut header = format!("{CHECKPOINT_MAGIC}\n");
    for (k, v) in model_entries(state.model.config()) {
        header.push_str(&format!("{k}={v}\n"));
    }
    let a = &state.adam.config;
    header.push_str(&format!(
        "epoch={}\nadam_step={}\nadam_beta1={}\nadam_beta2={}\nadam_epsilon={}\n\n",
        state.epoch, state.adam.step, a.beta1, a.beta2, a.epsilon
    ));
    let mut out = header.into_bytes();
    let params = state.model.params();
    let mut tensors: Vec<(String, &Tensor<f32>)> = params.iter().map(|p| (p.name.clone(), &p.value)).collect();
    tensors.extend(params.iter().zip(&state.adam.m).map(|(p, m)| (format!("adam.m.{}", p.name), m)));
    tensors.extend(params.iter().zip(&state.adam.v).map(|(p, v)| (format!("adam.v.{}", p.name), v)));
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let dims = t.shape().dims().to_vec();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> FormatResult<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::malformed(self.path, self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> FormatResult<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> FormatResult<TrainState> {
    let magic = format!("{CHECKPOINT_MAGIC}\n");
    if !bytes.starts_with(magic.as_bytes()) {
        return Err(FormatError::malformed(path, 0, format!("expected `{CHECKPOINT_MAGIC}`")));
    }
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| FormatError::malformed(path, magic.len(), "unterminated header"))?;
    let text = std::str::from_utf8(&bytes[magic.len()..end + 1])
        .map_err(|e| FormatError::malformed(path, magic.len() + e.valid_up_to(), "header is not UTF-8"))?;
    let kv = parse_key_values(text, path)?;
    let mut known: Vec<&str> = MODEL_KEYS.to_vec();
    known.extend(["epoch", "adam_step", "adam_beta1", "adam_beta2", "adam_epsilon"]);
    kv.reject_unknown(&known)?;
    let mut config = ModelConfig::default();
    for key in MODEL_KEYS {
        let value: String = kv.require(key)?;
        set_model_key(&mut config, key, &value).map_err(|e| FormatError::malformed(path, 0, e.to_string()))?;
    }
    let adam_config =
        AdamConfig { beta1: kv.require("adam_beta1")?, beta2: kv.require("adam_beta2")?, epsilon: kv.require("adam_epsilon")? };

    let mut cur = Cursor { bytes, pos: end + 2, path };
    let count = cur.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let start = cur.pos;
        let len = cur.u32("name length")? as usize;
        let name = String::from_utf8(cur.take(len, "tensor name")?.to_vec())
            .map_err(|_| FormatError::malformed(path, start + 4, "tensor name is not UTF-8"))?;
        let rank = cur.u32("rank")? as usize;
        if rank > 4 {
            return Err(FormatError::malformed(path, cur.pos - 4, format!("rank {rank} of `{name}` exceeds 4")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(cur.u32("extent")? as usize);
        }
        let shape = Shape::new(&dims).map_err(|e| FormatError::malformed(path, start, e.to_string()))?;
        let raw = cur.take(shape.numel() * 4, "tensor data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let value = Tensor::from_vec(shape, data).map_err(|e| FormatError::malformed(path, start, e.to_string()))?;
        tensors.push(Param { name, value });
    }
    if cur.pos != bytes.len() {
        return Err(FormatError::malformed(path, cur.pos, "trailing bytes"));
    }
    if tensors.len() % 3 != 0 {
        return Err(FormatError::malformed(path, end + 2, "tensor count is not parameters plus two moments"));
    }
    let n = tensors.len() / 3;
    let v: Vec<Param<f32>> = tensors.split_off(2 * n);
    let m: Vec<Param<f32>> = tensors.split_off(n);
    for (p, (m, v)) in tensors.iter().zip(m.iter().zip(&v)) {
        if m.name != format!("adam.m.{}", p.name) || v.name != format!("adam.v.{}", p.name) {
            return Err(FormatError::malformed(path, 0, format!("moments out of order for `{}`", p.name)));
        }
        if m.value.shape() != p.value.shape() || v.value.shape() != p.value.shape() {
            return Err(FormatError::malformed(path, 0, format!("moment shapes differ for `{}`", p.name)));
        }
    }
    let model = Model::from_params(config, tensors).map_err(|e| FormatError::malformed(path, end + 2, e.to_string()))?;
    let adam = AdamState {
        config: adam_config,
        m: m.into_iter().map(|p| p.value).collect(),
        v: v.into_iter().map(|p| p.value).collect(),
        step: kv.require("adam_step")?,
    };
    Ok(TrainState { model, adam, epoch: kv.require("epoch")? })
}

pub fn read_checkpoint(path: &Path) -> FormatResult<TrainState> {
    decode_checkpoint(&read_bytes(path)?, path)
}

pub fn write_checkpoint(path: &Path, state: &TrainState) -> FormatResult<()> {
    write_bytes(path, &encode_checkpoint(state))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState {
        let cfg = ModelConfig { input_height: 8, input_width: 8, base_channels: 2, encoder_stages: 1, ..ModelConfig::default() };
        let mut s = TrainState::new(Model::build(cfg).unwrap(), AdamConfig::default());
        s.epoch = 3;
        s.adam.step = 17;
        s.adam.m[0].data_mut()[0] = -0.5;
        s
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let p = Path::new("m.ckpt");
        let bytes = encode_checkpoint(&state());
        let back = decode_checkpoint(&bytes, p).unwrap();
        assert_eq!(back, state());
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_is_reported() {
        let p = Path::new("m.ckpt");
        let bytes = encode_checkpoint(&state());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        assert!(decode_checkpoint(b"NOPE", p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, p).is_err());
    }
}
