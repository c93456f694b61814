//! The guide's chapters, compiled so their code listings run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scoring.md")]
pub mod scoring {}

#[doc = include_str!("../../../book/src/mining.md")]
pub mod mining {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/formats.md")]
pub mod formats {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
