#![no_main]

use divgeo::tree::{even_time_heights, HeightProfile};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(p) = text.parse::<HeightProfile>() {
        assert_eq!(p.to_string().parse::<HeightProfile>().unwrap(), p);
        assert!(even_time_heights(&p).iter().all(|h| h % 2 == 0));
    }
});
