//! Versioned binary container for trained models.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 8    | magic `CMAUTOML`                              |
//! | 8      | 2    | format version (currently 1)                  |
//! | 10     | 2    | payload kind: 1 = pipeline, 2 = MLP           |
//! | 12     | 8    | payload length in bytes                       |
//! | 20     | n    | payload: the model encoded as CBOR (RFC 8949) |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TrainedPipeline;
use crate::error::{Error, Result};
use crate::mlp::MlpModel;

pub const MAGIC: &[u8; 8] = b"CMAUTOML";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadKind {
    Pipeline = 1,
    Mlp = 2,
}

impl PayloadKind {
    fn from_code(c: u16) -> Result<Self> {
        match c {
            1 => Ok(Self::Pipeline),
            2 => Ok(Self::Mlp),
            _ => Err(Error::Container(format!("unknown payload kind {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StoredModel {
    Pipeline(TrainedPipeline),
    Mlp(MlpModel),
}

impl StoredModel {
    pub fn kind(&self) -> PayloadKind {
        match self {
            StoredModel::Pipeline(_) => PayloadKind::Pipeline,
            StoredModel::Mlp(_) => PayloadKind::Mlp,
        }
    }

    /// Per-class scores of one raw signal.
    pub fn scores_row(&self, signal: &[f64]) -> Result<Vec<f64>> {
        match self {
            StoredModel::Pipeline(p) => p.scores_row(signal),
            StoredModel::Mlp(m) => m.score_row(signal),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            StoredModel::Pipeline(p) => p.signal_len(),
            StoredModel::Mlp(m) => m.input_dim,
        }
    }
}

pub fn encode(model: &StoredModel) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let res = match model {
        StoredModel::Pipeline(p) => ciborium::into_writer(p, &mut payload),
        StoredModel::Mlp(m) => ciborium::into_writer(m, &mut payload),
    };
    res.map_err(|e| Error::Container(format!("encoding failed: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.kind() as u16).to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<StoredModel> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Container("not a model container (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported format version {version}")));
    }
    let kind = PayloadKind::from_code(u16::from_le_bytes([bytes[10], bytes[11]]))?;
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != len {
        return Err(Error::Container(format!("payload length {} != header length {len}", payload.len())));
    }
    let err = |e: ciborium::de::Error<std::io::Error>| Error::Container(format!("decoding failed: {e}"));
    Ok(match kind {
        PayloadKind::Pipeline => StoredModel::Pipeline(ciborium::from_reader(payload).map_err(err)?),
        PayloadKind::Mlp => StoredModel::Mlp(ciborium::from_reader(payload).map_err(err)?),
    })
}

pub fn save(model: &StoredModel, path: &Path) -> Result<()> {
    let bytes = encode(model)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<StoredModel> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{build_mlp, MlpConfig};

    #[test]
    fn round_trip_and_corruption() {
        let m = StoredModel::Mlp(build_mlp(&MlpConfig::default(), 6, 3).unwrap());
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(decode(&bytes).unwrap(), m);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode(&bad).is_err());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
