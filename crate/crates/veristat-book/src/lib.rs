//! Compiled mirror of the user guide in `book/`.
//!
//! Each chapter is attached as a module's documentation, so `cargo
//! test` runs every fenced code block in the book as a doctest. mdbook
//! renders the same files; this crate keeps them honest.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/cluster-statistics.md")]
pub mod cluster_statistics {}

#[doc = include_str!("../../../book/src/providers.md")]
pub mod providers {}

#[doc = include_str!("../../../book/src/polling.md")]
pub mod polling {}

#[doc = include_str!("../../../book/src/detection.md")]
pub mod detection {}

#[doc = include_str!("../../../book/src/epochs.md")]
pub mod epochs {}

#[doc = include_str!("../../../book/src/staking.md")]
pub mod staking {}

#[doc = include_str!("../../../book/src/ranking.md")]
pub mod ranking {}

#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
