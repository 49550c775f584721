//! Model checkpoints: `"AGCK"`, a u32 header length, a JSON header, then
//! every layer's weights (row-major) and biases as little-endian f32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{DenseLayer, MlpModel};
use super::MlpConfig;
use crate::{Error, Result};

const MAGIC: [u8; 4] = *b"AGCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    input_dim: usize,
    hidden_layers: Vec<usize>,
    seed: u64,
    round: u32,
    param_count: usize,
    config: MlpConfig,
}

pub fn write_checkpoint(model: &MlpModel, mut w: impl Write) -> Result<()> {
    let header = Header {
        version: VERSION,
        input_dim: model.input_dim(),
        hidden_layers: model.hidden_layers(),
        seed: model.config.seed,
        round: model.trained_on_round,
        param_count: model.param_count(),
        config: model.config.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("checkpoint header", e))?;
    let mut bytes = Vec::with_capacity(8 + json.len() + model.param_count() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for layer in &model.layers {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<MlpModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    let short = |need: usize| Error::Truncated { expected: need as u64, actual: bytes.len() as u64 };
    if bytes.len() < 8 {
        return Err(short(8));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(short(8 + hlen));
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| Error::json("checkpoint header", e))?;
    if header.version != VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let blob = &bytes[8 + hlen..];
    if blob.len() != header.param_count * 4 {
        return Err(Error::Truncated { expected: header.param_count as u64 * 4, actual: blob.len() as u64 });
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut widths = vec![header.input_dim];
    widths.extend_from_slice(&header.hidden_layers);
    widths.push(1);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for pair in widths.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let w: Vec<f32> = values.by_ref().take(fan_in * fan_out).collect();
        let b: Vec<f32> = values.by_ref().take(fan_out).collect();
        if w.len() != fan_in * fan_out || b.len() != fan_out {
            return Err(Error::InvalidConfig("checkpoint blob does not match its architecture".into()));
        }
        layers.push(DenseLayer {
            weights: Array2::from_shape_vec((fan_out, fan_in), w).expect("shape checked"),
            bias: Array1::from_vec(b),
        });
    }
    if values.next().is_some() {
        return Err(Error::InvalidConfig("checkpoint blob does not match its architecture".into()));
    }
    MlpModel::from_layers(layers, header.config, header.round)
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn checkpoint_round_trips_bit_exactly(dim in 1usize..20, hidden in proptest::collection::vec(1usize..40, 0..4),
                                              seed in any::<u64>(), round in 0u32..10) {
            let cfg = MlpConfig { hidden_layers: hidden, seed, ..MlpConfig::default() };
            let mut model = MlpModel::initialize(dim, &cfg, &mut rng::seeded(seed));
            model.trained_on_round = round;
            let mut buf = Vec::new();
            write_checkpoint(&model, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &model);
            let mut again = Vec::new();
            write_checkpoint(&back, &mut again).unwrap();
            prop_assert_eq!(buf, again);
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let model = MlpModel::initialize(4, &MlpConfig::initial_round(), &mut rng::seeded(1));
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Truncated { .. })));
    }
}
