//! Doc-test harness for the book.
//!
//! Each chapter is included as module documentation so its fenced Rust
//! snippets run under `cargo test`. The crate exports nothing.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/respiratory-variation.md")]
pub mod respiratory_variation {}

#[doc = include_str!("../../../book/src/synthetic-scans.md")]
pub mod synthetic_scans {}

#[doc = include_str!("../../../book/src/windows-and-stitching.md")]
pub mod windows_and_stitching {}

#[doc = include_str!("../../../book/src/network-and-training.md")]
pub mod network_and_training {}

#[doc = include_str!("../../../book/src/spectra-and-grayplots.md")]
pub mod spectra_and_grayplots {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cross-validation.md")]
pub mod cross_validation {}

#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
