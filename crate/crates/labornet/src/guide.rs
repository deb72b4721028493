//! The user guide, included from the mdbook sources in `book/`.
//!
//! Each chapter of the book is attached to a module here, so every Rust
//! snippet in the guide compiles and runs under `cargo test --doc`. One
//! module per chapter keeps doc-test failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/blockmodel.md")]
pub mod blockmodel {}

#[doc = include_str!("../../../book/src/equilibrium.md")]
pub mod equilibrium {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/shocks.md")]
pub mod shocks {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
