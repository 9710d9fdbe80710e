//! LFT binary interchange format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "LFTR"
//!      4     2  version (u16, = 1)
//!      6     2  flags (u16): bit0 cls_first_index, bit1 payload is fp16
//!      8     4  n_frames  (u32)
//!     12     4  n_patches (u32)
//!     16     4  dim       (u32)
//!     20     4  reserved  (u32, = 0)
//!     24     -  payload, little-endian, row-major [frame][patch][dim]
//! ```
//!
//! All integers are little-endian. fp16 payloads are upcast to f32 on load;
//! writes always produce f32 payloads. Text tokens reuse the layout with
//! `n_frames = 1` and `n_patches = length`.

use std::fs;
use std::io::Write;
use std::path::Path;

use half::f16;

use crate::error::{Error, Result};
use crate::tensor::{check_finite, ClsPolicy, TextTokens, TokenTensor};

pub const MAGIC: [u8; 4] = *b"LFTR";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

pub const FLAG_CLS_FIRST_INDEX: u16 = 1 << 0;
pub const FLAG_FP16: u16 = 1 << 1;
const KNOWN_FLAGS: u16 = FLAG_CLS_FIRST_INDEX | FLAG_FP16;

/// Parsed fixed-size LFT header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub flags: u16,
    pub n_frames: u32,
    pub n_patches: u32,
    pub dim: u32,
}

impl Header {
    pub fn for_tensor(t: &TokenTensor) -> Result<Self> {
        let flags = if t.has_cls() { FLAG_CLS_FIRST_INDEX } else { 0 };
        Ok(Self {
            version: VERSION,
            flags,
            n_frames: to_u32(t.n_frames())?,
            n_patches: to_u32(t.n_patches())?,
            dim: to_u32(t.dim())?,
        })
    }

    pub fn is_fp16(&self) -> bool {
        self.flags & FLAG_FP16 != 0
    }

    pub fn cls_policy(&self) -> ClsPolicy {
        if self.flags & FLAG_CLS_FIRST_INDEX != 0 {
            ClsPolicy::FirstIndex
        } else {
            ClsPolicy::None
        }
    }

    pub fn element_count(&self) -> usize {
        self.n_frames as usize * self.n_patches as usize * self.dim as usize
    }

    pub fn payload_len(&self) -> usize {
        let width = if self.is_fp16() { 2 } else { 4 };
        self.element_count() * width
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..12].copy_from_slice(&self.n_frames.to_le_bytes());
        out[12..16].copy_from_slice(&self.n_patches.to_le_bytes());
        out[16..20].copy_from_slice(&self.dim.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[0..4] != MAGIC {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            return Err(Error::BadMagic { found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedPayload {
                offset: bytes.len(),
                expected: HEADER_LEN,
                actual: bytes.len(),
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at =
            |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        let header = Header {
            version: u16_at(4),
            flags: u16_at(6),
            n_frames: u32_at(8),
            n_patches: u32_at(12),
            dim: u32_at(16),
        };
        if header.version != VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        if header.flags & !KNOWN_FLAGS != 0 {
            return Err(Error::InvalidHeader(format!(
                "unknown flag bits {:#06x}",
                header.flags & !KNOWN_FLAGS
            )));
        }
        let reserved = u32_at(20);
        if reserved != 0 {
            return Err(Error::InvalidHeader(format!(
                "reserved field at offset 20 is {reserved}, expected 0"
            )));
        }
        if header.n_frames == 0 || header.n_patches == 0 || header.dim == 0 {
            return Err(Error::InvalidHeader(format!(
                "zero extent in {}x{}x{}",
                header.n_frames, header.n_patches, header.dim
            )));
        }
        Ok(header)
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidHeader(format!("extent {v} exceeds u32")))
}

fn decode_payload(header: &Header, bytes: &[u8]) -> Result<Vec<f32>> {
    let payload = &bytes[HEADER_LEN..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            offset: bytes.len(),
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            offset: HEADER_LEN + expected,
            extra: payload.len() - expected,
        });
    }
    let data: Vec<f32> = if header.is_fp16() {
        payload
            .chunks_exact(2)
            .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32())
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    check_finite(&data)?;
    Ok(data)
}

pub fn decode_tokens(bytes: &[u8]) -> Result<TokenTensor> {
    let header = Header::decode(bytes)?;
    let data = decode_payload(&header, bytes)?;
    TokenTensor::new(
        header.n_frames as usize,
        header.n_patches as usize,
        header.dim as usize,
        data,
        header.cls_policy(),
    )
    .map_err(|e| match e {
        Error::Shape(msg) => Error::InvalidHeader(msg),
        other => other,
    })
}

pub fn decode_text(bytes: &[u8]) -> Result<TextTokens> {
    let header = Header::decode(bytes)?;
    if header.n_frames != 1 {
        return Err(Error::InvalidHeader(format!(
            "text tokens need n_frames = 1, found {}",
            header.n_frames
        )));
    }
    if header.cls_policy() == ClsPolicy::FirstIndex {
        return Err(Error::InvalidHeader(
            "text tokens cannot carry a cls flag".into(),
        ));
    }
    let data = decode_payload(&header, bytes)?;
    TextTokens::new(header.n_patches as usize, header.dim as usize, data)
}

fn encode_f32(header: Header, data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 4);
    out.extend_from_slice(&header.encode());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_tokens(t: &TokenTensor) -> Result<Vec<u8>> {
    Ok(encode_f32(Header::for_tensor(t)?, t.as_slice()))
}

pub fn encode_text(t: &TextTokens) -> Result<Vec<u8>> {
    let header = Header {
        version: VERSION,
        flags: 0,
        n_frames: 1,
        n_patches: to_u32(t.len())?,
        dim: to_u32(t.dim())?,
    };
    Ok(encode_f32(header, t.as_slice()))
}

/// Encode a flat list of equal-width vectors as a single-frame LFT blob.
pub fn encode_sequence<V: AsRef<[f32]>>(tokens: &[V], dim: usize) -> Result<Vec<u8>> {
    let header = Header {
        version: VERSION,
        flags: 0,
        n_frames: 1,
        n_patches: to_u32(tokens.len())?,
        dim: to_u32(dim)?,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + tokens.len() * dim * 4);
    out.extend_from_slice(&header.encode());
    for t in tokens {
        let t = t.as_ref();
        if t.len() != dim {
            return Err(Error::DimMismatch {
                left: t.len(),
                right: dim,
            });
        }
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<TokenTensor> {
    decode_tokens(&fs::read(path)?)
}

pub fn load_text(path: impl AsRef<Path>) -> Result<TextTokens> {
    decode_text(&fs::read(path)?)
}

pub fn save_tokens(t: &TokenTensor, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tokens(t)?)
}

pub fn save_text(t: &TextTokens, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_text(t)?)
}

/// Write `bytes` to a sibling temp file and rename it over `path`, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
