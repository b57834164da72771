#![no_main]

use divgeo::ffpoly::PrimeField;
use divgeo::tree::{visual_distance, EndCode};
use libfuzzer_sys::fuzz_target;

const FIELDS: [u32; 4] = [2, 3, 5, 7];

fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let field = PrimeField::new(FIELDS[sel as usize % FIELDS.len()]).unwrap();
    let Some((a, b)) = text.split_once('|') else {
        if let Ok(e) = EndCode::parse(text, field) {
            assert_eq!(EndCode::parse(&e.to_string(), field).unwrap(), e);
        }
        return;
    };
    if let (Ok(a), Ok(b)) = (EndCode::parse(a, field), EndCode::parse(b, field)) {
        match visual_distance(&a, &b) {
            Ok(d) => {
                assert!(d > 0.0 && d <= 1.0);
                assert_eq!(visual_distance(&b, &a).unwrap(), d);
            }
            Err(_) => assert_eq!(a, b),
        }
    }
});
