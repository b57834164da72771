#![no_main]

use divgeo::ffpoly::{Polynomial, PrimeField};
use libfuzzer_sys::fuzz_target;

const FIELDS: [u32; 4] = [2, 3, 5, 7];

fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let field = PrimeField::new(FIELDS[sel as usize % FIELDS.len()]).unwrap();
    if let Ok(p) = Polynomial::parse(text, field) {
        let again = Polynomial::parse(&p.to_string(), field).expect("display output parses");
        assert_eq!(again, p);
        if !p.is_zero() {
            let (quo, rem) = p.divmod(&p).unwrap();
            assert!(rem.is_zero());
            assert_eq!(quo.mul(&p.monic()), p.monic());
        }
    }
});
