//! Binary container shared by snapshot, basis and model files:
//! magic, `u32` header length, JSON header, little-endian `f64` payload,
//! then a SHA-256 over everything before it.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SUBSURR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, serde::Deserialize)]
struct Envelope<H> {
    version: u32,
    kind: String,
    payload_len: usize,
    #[serde(flatten)]
    header: H,
}

#[derive(serde::Deserialize)]
struct VersionProbe {
    version: u32,
    kind: String,
    payload_len: usize,
}

pub fn encode<H: Serialize>(kind: &str, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    encode_versioned(kind, FORMAT_VERSION, header, payload)
}

pub(crate) fn encode_versioned<H: Serialize>(kind: &str, version: u32, header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let env = Envelope {
        version,
        kind: kind.to_string(),
        payload_len: payload.len(),
        header,
    };
    let json = serde_json::to_vec(&env)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * payload.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(kind: &str, bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
        if bytes.len() >= 8 && &bytes[..8] == MAGIC {
            return Err(Error::Checksum);
        }
        return Err(Error::Format("missing file signature".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    if 12 + hlen > body.len() {
        return Err(Error::Format("header length exceeds file".into()));
    }
    let json = &body[12..12 + hlen];
    let probe: VersionProbe = serde_json::from_slice(json)?;
    if probe.version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: probe.version,
            supported: FORMAT_VERSION,
        });
    }
    if probe.kind != kind {
        return Err(Error::Format(format!("expected a {kind} file, found {}", probe.kind)));
    }
    let raw = &body[12 + hlen..];
    if raw.len() != 8 * probe.payload_len {
        return Err(Error::Format("payload length does not match header".into()));
    }
    let env: Envelope<H> = serde_json::from_slice(json)?;
    let payload = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((env.header, payload))
}

pub fn write_file<H: Serialize>(path: &Path, kind: &str, header: &H, payload: &[f64]) -> Result<()> {
    std::fs::write(path, encode(kind, header, payload)?)?;
    Ok(())
}

pub fn read_file<H: DeserializeOwned>(path: &Path, kind: &str) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    decode(kind, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, serde::Deserialize)]
    struct H {
        rows: usize,
    }

    #[test]
    fn round_trip() {
        let bytes = encode("test", &H { rows: 3 }, &[1.0, f64::MIN_POSITIVE, -0.0]).unwrap();
        let (h, p): (H, Vec<f64>) = decode("test", &bytes).unwrap();
        assert_eq!(h, H { rows: 3 });
        assert_eq!(p[1].to_bits(), f64::MIN_POSITIVE.to_bits());
        assert_eq!(p[2].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn truncation_and_version() {
        let bytes = encode("test", &H { rows: 1 }, &[2.0; 5]).unwrap();
        for cut in [1, 8, 33, bytes.len() - 20] {
            let r: Result<(H, Vec<f64>)> = decode("test", &bytes[..bytes.len() - cut]);
            assert!(matches!(r, Err(Error::Checksum)), "cut {cut}");
        }
        let old = encode_versioned("test", 0, &H { rows: 1 }, &[]).unwrap();
        let r: Result<(H, Vec<f64>)> = decode("test", &old);
        assert!(matches!(r, Err(Error::UnsupportedVersion { found: 0, supported: 1 })));
        let r: Result<(H, Vec<f64>)> = decode("other", &bytes);
        assert!(matches!(r, Err(Error::Format(_))));
    }
}
