//! `EDMv1` manifest codec.
//!
//! Layout:
//!
//! ```text
//! EDMv1 n=<N> d=<d> classes=<K> rho=<f64> omega=<f64> open_source=<id> flip=<name> seed=<u64> n_clean=<u> n_closed=<u> n_open=<u>\n
//! N records: id u64 | provenance u8 (0 clean, 1 closed, 2 open) | true_class i32 (-1 = none)
//!            | observed u32 | d x f32
//! trailer:   body length u64 | FNV-1a-64 of body u64
//! ```
//!
//! All integers and floats are little-endian; the body is the header line
//! plus the records. Reals in the header use Rust's shortest round-trip
//! formatting, so `decode(encode(m)) == m` bit for bit.

use std::fs;
use std::path::Path;

use super::{DatasetManifest, FlipDistribution, LabeledSample, NoiseSpec, Provenance, ProvenanceCounts};
use crate::checksum::fnv1a64;
use crate::error::{Error, Result};

pub const MANIFEST_MAGIC: &str = "EDMv1";

const TRAILER_LEN: usize = 16;
const RECORD_FIXED: usize = 8 + 1 + 4 + 4;
const MAX_HEADER_LEN: usize = 4096;

pub fn encode_manifest(m: &DatasetManifest) -> Result<Vec<u8>> {
    m.noise_spec.validate()?;
    let spec = &m.noise_spec;
    let mut out = format!(
        "{MANIFEST_MAGIC} n={} d={} classes={} rho={} omega={} open_source={} flip={} seed={} n_clean={} n_closed={} n_open={}\n",
        m.samples.len(),
        m.feature_dim,
        m.num_classes,
        spec.rho,
        spec.omega,
        spec.open_source,
        spec.flip_distribution.as_str(),
        spec.seed,
        m.counts.clean,
        m.counts.closed,
        m.counts.open,
    )
    .into_bytes();
    out.reserve(m.samples.len() * (RECORD_FIXED + 4 * m.feature_dim) + TRAILER_LEN);

    for s in &m.samples {
        if s.features.len() != m.feature_dim {
            return Err(Error::DimensionMismatch(format!(
                "sample {} has {} features, manifest declares {}",
                s.id,
                s.features.len(),
                m.feature_dim
            )));
        }
        out.extend_from_slice(&(s.id as u64).to_le_bytes());
        out.push(s.provenance.index() as u8);
        let t = s.true_class.map_or(-1i32, |t| t as i32);
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&(s.observed as u32).to_le_bytes());
        for v in &s.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let body_len = out.len() as u64;
    let digest = fnv1a64(&out);
    out.extend_from_slice(&body_len.to_le_bytes());
    out.extend_from_slice(&digest.to_le_bytes());
    Ok(out)
}

struct Header {
    n: usize,
    d: usize,
    classes: usize,
    spec: NoiseSpec,
    counts: ProvenanceCounts,
}

fn parse_header(line: &str) -> Result<Header> {
    let bad = |msg: String| Error::MalformedHeader(msg);
    let mut tokens = line.split(' ');
    match tokens.next() {
        Some(MANIFEST_MAGIC) => {}
        other => return Err(bad(format!("expected magic {MANIFEST_MAGIC:?}, found {other:?}"))),
    }

    let mut fields: [Option<&str>; 11] = [None; 11];
    const KEYS: [&str; 11] = [
        "n", "d", "classes", "rho", "omega", "open_source", "flip", "seed", "n_clean", "n_closed",
        "n_open",
    ];
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("token {tok:?} is not key=value")))?;
        let slot = KEYS
            .iter()
            .position(|&key| key == k)
            .ok_or_else(|| bad(format!("unknown key {k:?}")))?;
        if fields[slot].replace(v).is_some() {
            return Err(bad(format!("duplicate key {k:?}")));
        }
    }
    let get = |i: usize| fields[i].ok_or_else(|| bad(format!("missing key {:?}", KEYS[i])));
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::MalformedHeader(format!("{key}={v:?} is not a valid number")))
    }

    let flip = match get(6)? {
        "uniform_excluding_true" => FlipDistribution::UniformExcludingTrue,
        other => return Err(bad(format!("unknown flip distribution {other:?}"))),
    };
    let spec = NoiseSpec {
        rho: num("rho", get(3)?)?,
        omega: num("omega", get(4)?)?,
        open_source: get(5)?.to_string(),
        flip_distribution: flip,
        seed: num("seed", get(7)?)?,
    };
    spec.validate().map_err(|e| bad(e.to_string()))?;
    Ok(Header {
        n: num("n", get(0)?)?,
        d: num("d", get(1)?)?,
        classes: num("classes", get(2)?)?,
        spec,
        counts: ProvenanceCounts {
            clean: num("n_clean", get(8)?)?,
            closed: num("n_closed", get(9)?)?,
            open: num("n_open", get(10)?)?,
        },
    })
}

fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().expect("8 bytes"))
}

fn read_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

/// Splits off and verifies the length/FNV trailer, returning the body.
pub(crate) fn verify_trailer(bytes: &[u8]) -> Result<&[u8]> {
    if bytes.len() < TRAILER_LEN {
        return Err(Error::Truncated { expected: TRAILER_LEN, found: bytes.len() });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - TRAILER_LEN);
    let declared = read_u64(trailer);
    if declared != body.len() as u64 {
        if declared > body.len() as u64 {
            return Err(Error::Truncated {
                expected: usize::try_from(declared).unwrap_or(usize::MAX).saturating_add(TRAILER_LEN),
                found: bytes.len(),
            });
        }
        return Err(Error::Checksum(format!(
            "trailer declares {declared} body bytes, file holds {}",
            body.len()
        )));
    }
    let digest = read_u64(&trailer[8..]);
    let actual = fnv1a64(body);
    if digest != actual {
        return Err(Error::Checksum(format!("digest {digest:#018x} != computed {actual:#018x}")));
    }
    Ok(body)
}

pub fn decode_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let body = verify_trailer(bytes)?;

    let newline = body
        .iter()
        .take(MAX_HEADER_LEN)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let line = std::str::from_utf8(&body[..newline])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let h = parse_header(line)?;
    if h.classes < 2 || h.classes > u32::MAX as usize {
        return Err(Error::DimensionMismatch(format!("class count {} out of range", h.classes)));
    }
    if h.d == 0 {
        return Err(Error::DimensionMismatch("feature dimension is 0".into()));
    }

    let records = &body[newline + 1..];
    let record_len = h
        .d
        .checked_mul(4)
        .and_then(|x| x.checked_add(RECORD_FIXED))
        .ok_or_else(|| Error::DimensionMismatch(format!("d={} overflows record size", h.d)))?;
    let expected = h.n.checked_mul(record_len);
    if expected != Some(records.len()) {
        return Err(Error::DimensionMismatch(format!(
            "header declares n={} d={} ({} record bytes each) but body holds {} record bytes",
            h.n,
            h.d,
            record_len,
            records.len()
        )));
    }

    let mut samples = Vec::with_capacity(h.n);
    for rec in records.chunks_exact(record_len) {
        let id = read_u64(rec);
        let provenance = match rec[8] {
            0 => Provenance::Clean,
            1 => Provenance::Closed,
            2 => Provenance::Open,
            p => return Err(Error::Corrupt(format!("record {id}: provenance byte {p}"))),
        };
        let t = read_u32(&rec[9..]) as i32;
        let true_class = match t {
            -1 => None,
            t if t >= 0 && (t as usize) < h.classes => Some(t as usize),
            t => return Err(Error::Corrupt(format!("record {id}: true class {t}"))),
        };
        let observed = read_u32(&rec[13..]) as usize;
        let features = rec[RECORD_FIXED..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        samples.push(LabeledSample {
            id: usize::try_from(id).map_err(|_| Error::Corrupt(format!("id {id} overflows")))?,
            features,
            observed,
            true_class,
            provenance,
        });
    }

    let m = DatasetManifest {
        samples,
        num_classes: h.classes,
        feature_dim: h.d,
        noise_spec: h.spec,
        counts: h.counts,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(m: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_manifest(m)?)?;
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    decode_manifest(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{inject_noise, make_open_pool, make_synthetic_clean};
    use proptest::prelude::*;

    fn noisy() -> DatasetManifest {
        let clean = make_synthetic_clean(3, 20, 4, 0.5, 11).unwrap();
        let pool = make_open_pool(2, 20, 4, 0.5, 6.0, 12).unwrap();
        inject_noise(&clean, &pool, &NoiseSpec::new(0.6, 0.25, "blobs-pool", 13)).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let m = noisy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.edm");
        save_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
    }

    #[test]
    fn empty_manifest_round_trips() {
        let mut m = make_synthetic_clean(2, 1, 2, 0.5, 0).unwrap();
        m.samples.clear();
        m.counts = ProvenanceCounts::default();
        let bytes = encode_manifest(&m).unwrap();
        assert_eq!(decode_manifest(&bytes).unwrap(), m);
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = encode_manifest(&noisy()).unwrap();
        for cut in [0, 5, 15, 100, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_manifest(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Truncated { .. } | Error::Checksum(_)),
                "cut {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let mut bytes = encode_manifest(&noisy()).unwrap();
        let i = bytes.len() / 2;
        bytes[i] ^= 0x40;
        assert!(matches!(decode_manifest(&bytes), Err(Error::Checksum(_))));
    }

    fn reseal(body: &[u8]) -> Vec<u8> {
        let mut out = body.to_vec();
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
        out.extend_from_slice(&fnv1a64(body).to_le_bytes());
        out
    }

    #[test]
    fn malformed_header_and_dimension_errors_are_distinct() {
        let bytes = encode_manifest(&noisy()).unwrap();
        let body = &bytes[..bytes.len() - TRAILER_LEN];

        let mut wrong_magic = body.to_vec();
        wrong_magic[4] = b'2';
        assert!(matches!(decode_manifest(&reseal(&wrong_magic)), Err(Error::MalformedHeader(_))));

        let text = String::from_utf8_lossy(body).into_owned();
        let nl = text.find('\n').unwrap();
        let header = &text[..nl];
        let swapped = header.replace(" d=4 ", " d=5 ");
        let mut wrong_dim = swapped.into_bytes();
        wrong_dim.extend_from_slice(&body[nl..]);
        assert!(matches!(decode_manifest(&reseal(&wrong_dim)), Err(Error::DimensionMismatch(_))));

        let no_seed = header.replace(" seed=13", "");
        let mut missing = no_seed.into_bytes();
        missing.extend_from_slice(&body[nl..]);
        assert!(matches!(decode_manifest(&reseal(&missing)), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn inconsistent_counts_are_corrupt() {
        let mut m = noisy();
        m.counts.clean += 1;
        m.counts.open -= 1;
        let bytes = encode_manifest(&m).unwrap();
        assert!(matches!(decode_manifest(&bytes), Err(Error::Corrupt(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn encode_decode_identity(
            k in 2usize..6, per in 0usize..8, d in 2usize..6,
            rho in 0.0f64..=1.0, omega in 0.0f64..=1.0, seed in any::<u64>(),
        ) {
            let clean = match make_synthetic_clean(k, per.max(1), d.max(k.div_ceil(2)), 0.7, seed) {
                Ok(m) => m,
                Err(_) => return Ok(()),
            };
            let pool = make_open_pool(3, clean.len(), clean.feature_dim, 0.7, 5.0, seed ^ 1).unwrap();
            let m = inject_noise(&clean, &pool, &NoiseSpec::new(rho, omega, "pool", seed)).unwrap();
            let bytes = encode_manifest(&m).unwrap();
            prop_assert_eq!(decode_manifest(&bytes).unwrap(), m);
        }
    }
}
