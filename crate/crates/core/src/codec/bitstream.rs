//! Container: fixed header followed by length-prefixed chunks.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"3DWC";
pub const VERSION: u8 = 1;
/// magic 4 + version 1 + wavelet 1 + levels 1 + profile 1 + width 4 +
/// height 4 + λ index 1 + checksum 8.
pub const HEADER_LEN: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub wavelet_id: u8,
    pub spatial_levels: u8,
    pub profile_id: u8,
    pub width: u32,
    pub height: u32,
    pub lambda_index: u8,
    pub checksum: u64,
}

impl Header {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4] = self.version;
        b[5] = self.wavelet_id;
        b[6] = self.spatial_levels;
        b[7] = self.profile_id;
        b[8..12].copy_from_slice(&self.width.to_le_bytes());
        b[12..16].copy_from_slice(&self.height.to_le_bytes());
        b[16] = self.lambda_index;
        b[17..25].copy_from_slice(&self.checksum.to_le_bytes());
        b
    }

    pub fn parse(bytes: &[u8]) -> Result<Header> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Parse(format!("header needs {HEADER_LEN} bytes, got {}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Parse("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Parse(format!("unsupported version {}", bytes[4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        Ok(Header {
            version: bytes[4],
            wavelet_id: bytes[5],
            spatial_levels: bytes[6],
            profile_id: bytes[7],
            width: u32_at(8),
            height: u32_at(12),
            lambda_index: bytes[16],
            checksum: u64::from_le_bytes(bytes[17..25].try_into().expect("8 bytes")),
        })
    }
}

/// Header plus chunks in order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    pub header: Header,
    pub chunks: Vec<Vec<u8>>,
}

/// Bytes a chunk occupies in the stream, length prefix included.
pub fn chunk_size(payload: &[u8]) -> usize {
    4 + payload.len()
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.to_bytes().to_vec();
        for c in &self.chunks {
            out.extend_from_slice(&(c.len() as u32).to_le_bytes());
            out.extend_from_slice(c);
        }
        out
    }

    /// Parse a header and exactly `count` chunks.
    pub fn parse(bytes: &[u8], count: usize) -> Result<Container> {
        let header = Header::parse(bytes)?;
        let mut pos = HEADER_LEN;
        let mut chunks = Vec::with_capacity(count);
        for i in 0..count {
            let len_bytes = bytes.get(pos..pos + 4).ok_or_else(|| Error::Decode(format!("stream ends before chunk {i}")))?;
            let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
            pos += 4;
            let payload = bytes
                .get(pos..pos.saturating_add(len))
                .ok_or_else(|| Error::Decode(format!("chunk {i} is truncated")))?;
            chunks.push(payload.to_vec());
            pos += len;
        }
        if pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes after the last chunk", bytes.len() - pos)));
        }
        Ok(Container { header, chunks })
    }
}
