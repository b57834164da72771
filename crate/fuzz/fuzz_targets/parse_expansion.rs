#![no_main]

use divgeo::ffpoly::{cf_eval, cf_expand, CFExpansion, PrimeField};
use divgeo::tree::height_profile;
use libfuzzer_sys::fuzz_target;

const FIELDS: [u32; 4] = [2, 3, 5, 7];

fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let field = PrimeField::new(FIELDS[sel as usize % FIELDS.len()]).unwrap();
    if let Ok(e) = CFExpansion::parse(text, field) {
        assert_eq!(CFExpansion::parse(&e.to_string(), field).unwrap(), e);
        if e.digits().len() <= 16 && e.shape().iter().sum::<usize>() <= 64 {
            assert_eq!(cf_expand(&cf_eval(&e)), e);
            if !e.is_empty() {
                let pr = height_profile(&e).unwrap();
                assert_eq!(pr.len() as u32, e.complexity().unwrap());
            }
        }
    }
});
