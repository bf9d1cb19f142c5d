//! The guide's chapters, compiled in as doc-tested modules.
//!
//! The rendered book lives under `book/` (build it with
//! `mdbook build book`); including the chapters here makes every code
//! listing a doc-test of this crate, so `cargo test --doc` keeps the book
//! honest.

#[doc = include_str!("../../../book/src/ch01-overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/ch02-environments.md")]
pub mod environments {}

#[doc = include_str!("../../../book/src/ch03-kernels.md")]
pub mod kernels {}

#[doc = include_str!("../../../book/src/ch04-evolving-sets.md")]
pub mod evolving_sets {}

#[doc = include_str!("../../../book/src/ch05-conditioning-coupling.md")]
pub mod conditioning_coupling {}

#[doc = include_str!("../../../book/src/ch06-isoperimetry.md")]
pub mod isoperimetry_growth {}

#[doc = include_str!("../../../book/src/ch07-embedding.md")]
pub mod continuous_embedding {}

#[doc = include_str!("../../../book/src/ch08-continuous-time.md")]
pub mod continuous_time {}

#[doc = include_str!("../../../book/src/ch09-percolation.md")]
pub mod percolation_playground {}

#[doc = include_str!("../../../book/src/ch10-harness.md")]
pub mod harness_and_cli {}
