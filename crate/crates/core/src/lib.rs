//! Sliced mutual information (ŜI) for infomin representation learning.
//!
//! The crate estimates dependence between two multivariate samples by
//! projecting both onto random directions of their unit hyperspheres,
//! expanding every projection into bounded `tanh` polynomial features and
//! solving a single canonical correlation problem over all slices at once.
//! The resulting statistic is cheap enough to be refitted at every step of a
//! training loop, which is what [`train::train_infomin`] does: an analytic
//! max-step fits the ŜI weights, a gradient min-step pushes an encoder
//! towards representations that carry no information about a protected
//! target.
//!
//! Around that core live the pieces needed to evaluate it: baseline
//! dependence measures ([`baselines`]), the synthetic association data and
//! CSV ingestion ([`data`]), a small neural network stack ([`nn`]) and a
//! permutation-calibrated power harness ([`harness`]).

pub mod baselines;
pub mod cca;
pub mod data;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod slicing;
pub mod train;

pub use baselines::{DependenceScore, ScoreMethod};
pub use cca::{CcaSolution, Ridge, SiEstimate};
pub use data::{Dataset, Pattern, SyntheticSpec};
pub use error::{Error, Result};
pub use harness::{PowerResult, TestMethod, TestProtocol};
pub use linalg::Matrix;
pub use nn::{Activation, Mlp, Optimizer};
pub use slicing::{PolyConfig, SliceSet};
pub use train::{InfominConfig, TrainHistory};
