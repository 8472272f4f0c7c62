#![no_main]

use edm_core::nn::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_checkpoint(data) {
        let again = decode_checkpoint(&encode_checkpoint(&model)).expect("re-encoded checkpoint decodes");
        assert_eq!(again.arch, model.arch);
        assert_eq!(again.role, model.role);
        let bits = |m: &edm_core::nn::Mlp| m.params().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&again), bits(&model));
    }
});
