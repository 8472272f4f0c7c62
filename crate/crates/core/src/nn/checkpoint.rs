//! `EDMCKPT1` checkpoint codec.
//!
//! ```text
//! EDMCKPT1 role=<netd|nets> arch=<w0,w1,...>\n
//! parameters: for each layer, weight (row-major, in x out) then bias, f32 LE
//! trailer: FNV-1a-64 of everything above, u64 LE
//! ```
//!
//! Parameters are narrowed to `f32` on save.

use std::fs;
use std::path::Path;

use super::model::{Architecture, Mlp, Role};
use super::Matrix;
use crate::checksum::fnv1a64;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "EDMCKPT1";

const MAX_HEADER_LEN: usize = 4096;

pub fn encode_checkpoint(model: &Mlp) -> Vec<u8> {
    let mut out = format!("{CHECKPOINT_MAGIC} role={} arch={}\n", model.role.as_str(), model.arch).into_bytes();
    out.reserve(4 * model.num_params() + 8);
    for p in model.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let digest = fnv1a64(&out);
    out.extend_from_slice(&digest.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Mlp> {
    if bytes.len() < 8 {
        return Err(Error::Truncated { expected: 8, found: bytes.len() });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let digest = u64::from_le_bytes(trailer.try_into().expect("8 bytes"));
    let actual = fnv1a64(body);
    if digest != actual {
        return Err(Error::Checksum(format!("digest {digest:#018x} != computed {actual:#018x}")));
    }

    let newline = body
        .iter()
        .take(MAX_HEADER_LEN)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let line = std::str::from_utf8(&body[..newline])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let mut tokens = line.split(' ');
    if tokens.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::MalformedHeader(format!("expected magic {CHECKPOINT_MAGIC:?}")));
    }
    let (mut role, mut arch) = (None, None);
    for tok in tokens {
        match tok.split_once('=') {
            Some(("role", v)) if role.is_none() => {
                role = Some(v.parse::<Role>().map_err(|e| Error::MalformedHeader(e.to_string()))?)
            }
            Some(("arch", v)) if arch.is_none() => {
                arch = Some(v.parse::<Architecture>().map_err(|e| Error::MalformedHeader(e.to_string()))?)
            }
            _ => return Err(Error::MalformedHeader(format!("unexpected token {tok:?}"))),
        }
    }
    let role = role.ok_or_else(|| Error::MalformedHeader("missing role".into()))?;
    let arch = arch.ok_or_else(|| Error::MalformedHeader("missing arch".into()))?;

    let params = &body[newline + 1..];
    let expected = arch
        .widths
        .windows(2)
        .try_fold(0usize, |acc, w| w[0].checked_add(1)?.checked_mul(w[1])?.checked_add(acc))
        .and_then(|n| n.checked_mul(4));
    if expected != Some(params.len()) {
        return Err(Error::DimensionMismatch(format!(
            "architecture {arch} needs {expected:?} parameter bytes, file holds {}",
            params.len()
        )));
    }

    let mut values = params.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let layers = arch
        .widths
        .windows(2)
        .map(|w| {
            let weight = Matrix::from_vec(w[0], w[1], values.by_ref().take(w[0] * w[1]).collect());
            let bias = Matrix::from_vec(1, w[1], values.by_ref().take(w[1]).collect());
            super::model::Dense { weight, bias }
        })
        .collect();
    Ok(Mlp { arch, role, layers })
}

pub fn save_checkpoint(model: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Mlp {
        Mlp::init(&Architecture::mlp(8, &[16, 16], 4).unwrap(), Role::NetS, 21)
    }

    #[test]
    fn round_trip_narrows_to_f32() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back.arch, m.arch);
        assert_eq!(back.role, Role::NetS);
        for (a, b) in m.params().zip(back.params()) {
            assert_eq!(*b, f64::from(*a as f32));
        }
        // Already-narrow parameters survive exactly.
        assert_eq!(encode_checkpoint(&back), encode_checkpoint(&m));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&model());
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 3]), Err(Error::Checksum(_))));
        assert!(matches!(decode_checkpoint(&bytes[..4]), Err(Error::Truncated { .. })));
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Checksum(_))));
    }

    #[test]
    fn architecture_mismatch_is_reported() {
        let bytes = encode_checkpoint(&model());
        let body = &bytes[..bytes.len() - 8];
        let text = String::from_utf8_lossy(body);
        let nl = text.find('\n').unwrap();
        let mut forged = text[..nl].replace("arch=8,16,16,4", "arch=8,16,16,5").into_bytes();
        forged.extend_from_slice(&body[nl..]);
        let digest = fnv1a64(&forged);
        forged.extend_from_slice(&digest.to_le_bytes());
        assert!(matches!(decode_checkpoint(&forged), Err(Error::DimensionMismatch(_))));
    }
}
