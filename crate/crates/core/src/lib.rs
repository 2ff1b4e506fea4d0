//! Detection mathematics: the IoU regression-loss family with analytic
//! gradients, channel/spatial and EMA attention forward passes, EMA smoothing
//! of detection streams, exact mAP evaluation, and a small box-regression
//! convergence harness.

pub mod attention;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod formats;
pub mod geometry;
pub mod gradcheck;
pub mod smoothing;
pub mod tensor;

pub use attention::{EmaAttentionState, GomParams};
pub use error::{Error, Result};
pub use eval::{EvalReport, GroundTruth, Prediction};
pub use geometry::{BBox, EnclosureGeometry, LossReport, LossTerms, LossVariant};
pub use smoothing::{Detection, Track};
pub use tensor::Tensor;
