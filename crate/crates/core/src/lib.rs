//! Planning-oriented active data selection for pools of driving clips.
//!
//! The crate picks which clips of an unlabeled pool to annotate under a
//! fixed budget:
//!
//! * [`diversity`] chooses the initial set by stratifying the pool over
//!   weather/lighting and maneuver class and spreading the budget with
//!   `count^gamma` shares;
//! * [`criteria`] scores unlabeled clips from a model's predictions
//!   (displacement error, soft collision, agent uncertainty);
//! * [`active`] runs the train / score / select loop against any
//!   [`active::PredictionProvider`];
//! * [`synthworld`] generates a seeded long-tail driving world and a toy
//!   planner so the whole loop runs on a laptop;
//! * [`report`] computes evaluation tables and writes run manifests and
//!   reports.
//!
//! ```
//! use drivesel::diversity::{first_level_shares, integerize};
//!
//! let counts = [491, 125, 71, 13];
//! let shares = first_level_shares(&counts, 0.5)?;
//! assert_eq!(integerize(&shares, 70, &counts)?, vec![34, 17, 13, 6]);
//! # Ok::<(), drivesel::Error>(())
//! ```

pub mod active;
pub mod criteria;
pub mod diversity;
mod error;
pub mod experiment;
pub mod fsutil;
pub mod pool;
pub mod report;
pub mod synthworld;

pub use error::{Error, Result};
