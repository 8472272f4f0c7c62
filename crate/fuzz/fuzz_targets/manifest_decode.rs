#![no_main]

use edm_core::benchgen::{decode_manifest, encode_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = decode_manifest(data) {
        let bytes = encode_manifest(&m).expect("decoded manifest re-encodes");
        let again = decode_manifest(&bytes).expect("re-encoded manifest decodes");
        assert_eq!(encode_manifest(&again).expect("re-encodes"), bytes);
    }
});
