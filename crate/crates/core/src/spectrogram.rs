//! Log-mel matrix export as CSV and as an 8-bit graymap.

use std::fmt::Write as _;

use crate::audio::{MelSpec, N_MELS};

/// One row per mel bin, one column per frame, values in shortest exact form.
pub fn to_csv(mel: &MelSpec) -> String {
    let mut out = String::new();
    for m in 0..N_MELS {
        let row: Vec<String> = (0..mel.frames).map(|t| mel.get(m, t).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Linear map of `[min, max]` onto `0..=255`. A constant matrix maps to 0.
pub fn gray_levels(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

/// Binary PGM (P5) with mel bin 0 in the first row.
pub fn to_pgm(mel: &MelSpec) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mel.frames, N_MELS).into_bytes();
    out.extend(gray_levels(&mel.data));
    out
}
