//! Compiles every listing of the guide in `book/src` as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/pool.md")]
pub mod pool {}

#[doc = include_str!("../../../book/src/diversity.md")]
pub mod diversity {}

#[doc = include_str!("../../../book/src/criteria.md")]
pub mod criteria {}

#[doc = include_str!("../../../book/src/loop.md")]
pub mod selection_loop {}

#[doc = include_str!("../../../book/src/synthworld.md")]
pub mod synthworld {}

#[doc = include_str!("../../../book/src/report.md")]
pub mod report {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
