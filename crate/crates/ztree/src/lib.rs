//! Z-order point trees for exact k-nearest-neighbour search and
//! friends-of-friends clustering.
//!
//! Points are comparable in z-order directly through their float encoding,
//! with no bounding box, origin or key length chosen in advance. Tree
//! hierarchies fall out of that order for free: a node is any maximal run
//! of points whose internal splits sit below a level threshold, so the
//! whole structure is a handful of index arrays over the sorted points.
//! Search and clustering walk pairs of nodes plane by plane, refining an
//! interaction list instead of recursing.
//!
//! The `partsim` module runs the same algorithms across several simulated
//! ranks in one process, exchanging data only through an explicit mailbox,
//! and reproduces single-rank results exactly.

// The working idiom is parallel index arrays advanced in lockstep, so
// indexed loops stay even where a single slice could be iterated.
#![allow(clippy::needless_range_loop)]

pub mod bounds;
pub mod datasets;
pub mod error;
pub mod fof;
pub mod ilist;
pub mod knn;
pub mod oracle;
pub mod partsim;
pub mod pointfile;
pub mod points;
pub mod treebuild;
pub mod zorder;

pub use error::{Error, Result};
pub use points::PointSet;
