//! The guide's chapters, compiled so that `cargo test --doc` runs every
//! code listing. One module per chapter keeps failures traceable to their
//! source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/priors.md")]
pub mod priors {}
#[doc = include_str!("../../../book/src/codec.md")]
pub mod codec {}
#[doc = include_str!("../../../book/src/loss.md")]
pub mod loss {}
#[doc = include_str!("../../../book/src/syngen.md")]
pub mod syngen {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
