//! Arbitrary bytes must never panic the decoder, and any image it
//! accepts must re-encode to the identical bytes: the format has no
//! redundancy, so decode followed by encode is the identity on valid
//! input.
#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = ztree::pointfile::decode(data) {
        let again = ztree::pointfile::encode(&file.points, file.box_lengths.as_deref())
            .expect("accepted image re-encodes");
        assert_eq!(again, data, "round trip changed the bytes");
    }
});
