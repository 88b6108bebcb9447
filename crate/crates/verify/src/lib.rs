//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p rtn-verify --test acceptance -- --nocapture`.
