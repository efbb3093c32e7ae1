//! Reference computations for testing `lmebn`.
//!
//! Everything here is written the slow, direct way: dense covariance
//! matrices instead of per-group updates, enumeration instead of search.
//! There is no dependency on `lmebn` itself.

pub mod dags;
pub mod gauss;
pub mod mixed;
