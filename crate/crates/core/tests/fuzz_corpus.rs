//! Replays the checked-in fuzz seeds through the decoders.

use std::path::PathBuf;

use edm_core::benchgen::{decode_manifest, encode_manifest};
use edm_core::nn::{decode_checkpoint, encode_checkpoint};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn manifest_seeds() {
    for (name, bytes) in seeds("manifest_decode") {
        match decode_manifest(&bytes) {
            Ok(m) => assert_eq!(encode_manifest(&m).unwrap(), bytes, "{name} does not round-trip"),
            Err(_) => assert!(name.starts_with("truncated"), "{name} should decode"),
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint_decode") {
        match decode_checkpoint(&bytes) {
            Ok(m) => assert_eq!(encode_checkpoint(&m), bytes, "{name} does not round-trip"),
            Err(_) => assert!(name.starts_with("truncated"), "{name} should decode"),
        }
    }
}
