//! Binary model checkpoints.
//!
//! Layout: magic `FFI8CKPT`, `u32` format version, `u64` header length, a
//! JSON header describing the layers plus a config echo, then each layer's
//! weights and bias as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer};
use crate::error::{Error, Result};
use crate::qtensor::RealTensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FFI8CKPT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ff,
    Bp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerHeader {
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    normalize_input: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    layers: Vec<LayerHeader>,
    config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub layers: Vec<DenseLayer>,
    /// Free-form echo of the producing run's configuration.
    pub config: serde_json::Value,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        kind: ckpt.kind,
        layers: ckpt
            .layers
            .iter()
            .map(|l| LayerHeader {
                fan_in: l.fan_in(),
                fan_out: l.fan_out(),
                activation: l.activation,
                normalize_input: l.normalize_input,
            })
            .collect(),
        config: ckpt.config.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for l in &ckpt.layers {
        for v in l.weights.data().iter().chain(&l.bias) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    let mut rest: &[u8] = &bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if rest.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(hlen)?)?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for h in &header.layers {
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            Ok(take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let w = floats(h.fan_in * h.fan_out)?;
        let bias = floats(h.fan_out)?;
        layers.push(DenseLayer {
            weights: RealTensor::matrix(h.fan_out, h.fan_in, w)?,
            bias,
            activation: h.activation,
            normalize_input: h.normalize_input,
        });
    }
    if !rest.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        layers,
        config: header.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut l0 = DenseLayer::init(12, 5, Activation::Relu, false, &mut rng);
        l0.bias = vec![0.1, -0.0, f32::MIN_POSITIVE, 3.5e-40, 1.0];
        let l1 = DenseLayer::init(5, 3, Activation::Identity, true, &mut rng);
        Checkpoint {
            kind: ModelKind::Bp,
            layers: vec![l0, l1],
            config: serde_json::json!({"theta": 2.0, "seed": 7}),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = sample();
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.kind, c.kind);
        assert_eq!(back.config, c.config);
        for (a, b) in back.layers.iter().zip(&c.layers) {
            let bits = |l: &DenseLayer| {
                l.weights.data().iter().chain(&l.bias).map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            assert_eq!(bits(a), bits(b));
            assert_eq!(a.activation, b.activation);
            assert_eq!(a.normalize_input, b.normalize_input);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &sample()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&p, &extra).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        let mut magic = bytes;
        magic[0] = b'X';
        std::fs::write(&p, &magic).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        assert!(matches!(load_checkpoint(&dir.path().join("none")), Err(Error::Io(_))));
    }
}
