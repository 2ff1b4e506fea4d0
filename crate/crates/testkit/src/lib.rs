//! Reference oracles for the detkit test suites.
//!
//! Everything here works on plain arrays and is coded independently of the
//! library's implementation paths: center/size parametrisation for the box
//! losses, finite differences for gradients, and exhaustive score-cutoff
//! enumeration for average precision.

pub mod boxes;
pub mod map;
pub mod rng;
