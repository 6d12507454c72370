//! Versioned binary checkpoints: magic `NLCK`, version, length-prefixed JSON
//! config header, little-endian f32 parameter blob, trailing CRC32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamLayout};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NLCK";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    seq_len: usize,
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config.clone(),
            seq_len: self.seq_len,
        })
        .expect("header serialization cannot fail");
        let mut bytes = Vec::with_capacity(14 + header.len() + self.params.len() * 4);
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&header);
        for &p in &self.params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 4 + 2 + 4;
        if bytes.len() < HEADER + 4 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                needed: HEADER + 4 - bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().expect("length checked"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let body = &bytes[..bytes.len() - 4];
        let stored =
            u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("length checked"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let header_len =
            u32::from_le_bytes(bytes[6..10].try_into().expect("length checked")) as usize;
        if body.len() < HEADER + header_len {
            return Err(Error::Truncated {
                offset: body.len(),
                needed: HEADER + header_len - body.len(),
            });
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[HEADER..HEADER + header_len])
            .map_err(|e| Error::json("<checkpoint header>", e))?;
        header.config.validate()?;
        let layout = ParamLayout::new(
            header.config.vocab_size,
            header.seq_len,
            header.config.hidden_dim,
            header.config.num_heads,
            header.config.num_layers,
            header.config.num_classes,
        );
        let blob = &body[HEADER + header_len..];
        let expected = layout.total() * 4;
        if blob.len() != expected {
            return Err(Error::SizeMismatch {
                context: "checkpoint parameter blob bytes",
                expected,
                found: blob.len(),
            });
        }
        let params: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok(Model {
            config: header.config,
            seq_len: header.seq_len,
            layout,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
