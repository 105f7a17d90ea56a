//! Runs the Rust snippets of the guide in `book/src` as doctests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/regularizers.md")]
pub mod regularizers {}

#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}

#[doc = include_str!("../../../book/src/costs.md")]
pub mod costs {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
