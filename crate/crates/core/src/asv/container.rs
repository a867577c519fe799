//! Versioned binary container for toy embedders.
//!
//! Layout (little endian):
//!
//! ```text
//! magic   8 bytes  "OTSPMDL\0"
//! version u32
//! hlen    u32      length of the JSON header
//! header  hlen     ModelHeader as JSON
//! mean    f64 × feature_dimension
//! proj    f64 × embedding_dimension × feature_dimension (row major)
//! digest  32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::toy::{Architecture, ToyEmbedder};
use super::Embedder;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"OTSPMDL\0";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelHeader {
    pub model_id: String,
    pub architecture: Architecture,
    pub seed: u64,
    pub sample_rate: u32,
    pub embedding_dimension: usize,
    pub feature_dimension: usize,
}

pub fn encode_model(model: &ToyEmbedder) -> Result<Vec<u8>> {
    let header = ModelHeader {
        model_id: model.model_id().to_string(),
        architecture: model.architecture(),
        seed: model.seed(),
        sample_rate: model.sample_rate(),
        embedding_dimension: model.embedding_dimension(),
        feature_dimension: model.mean().len(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for v in model
        .mean()
        .iter()
        .chain(model.projection().iter().flatten())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ToyEmbedder> {
    let bad = |msg: &str| Error::Container(msg.to_string());
    if bytes.len() < 8 + 4 + 4 + 32 {
        return Err(bad("truncated container"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    if &body[..8] != CONTAINER_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16 + hlen;
    if body.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: ModelHeader = serde_json::from_slice(&body[16..header_end])?;
    let (fd, ed) = (header.feature_dimension, header.embedding_dimension);
    let payload = &body[header_end..];
    if payload.len() != 8 * fd * (1 + ed) {
        return Err(bad("parameter block size does not match header"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mean = values[..fd].to_vec();
    let projection = values[fd..].chunks_exact(fd).map(<[f64]>::to_vec).collect();
    ToyEmbedder::from_parts(
        header.model_id,
        header.architecture,
        header.seed,
        header.sample_rate,
        mean,
        projection,
    )
}

pub fn save_model(path: &Path, model: &ToyEmbedder) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ToyEmbedder> {
    if !path.exists() {
        return Err(Error::MissingResource(path.to_path_buf()));
    }
    decode_model(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ToyEmbedder {
        let fe = Architecture::WideLog.build_front_end(16_000);
        let dim = fe.feature_dimension();
        let mean: Vec<f64> = (0..dim).map(|i| i as f64 * 0.01).collect();
        let proj: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..dim).map(|c| ((r * dim + c) as f64).sin()).collect())
            .collect();
        ToyEmbedder::from_parts("tiny", Architecture::WideLog, 1, 16_000, mean, proj).unwrap()
    }

    #[test]
    fn roundtrip_preserves_parameters() {
        let model = tiny_model();
        let bytes = encode_model(&model).unwrap();
        assert_eq!(&bytes[..8], CONTAINER_MAGIC);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back.mean(), model.mean());
        assert_eq!(back.projection(), model.projection());
        assert_eq!(back.model_id(), "tiny");
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_model(&tiny_model()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(decode_model(&bytes).is_err());
        assert!(decode_model(&bytes[..20]).is_err());
    }
}
