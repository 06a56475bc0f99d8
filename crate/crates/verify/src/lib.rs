//! Acceptance checks for the avcrn crates. Everything lives in
//! `tests/acceptance.rs`; run it with `cargo test -p avcrn-verify`.
