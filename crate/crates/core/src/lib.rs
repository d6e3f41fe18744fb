//! Identification of switched autoregressive systems from noisy
//! input/output records.
//!
//! Each mode is a hyperplane `t_i^T r = 0` in regressor space. The product
//! of the `n` linear forms is a homogeneous polynomial whose coefficient
//! vector spans the null space of the (bias-corrected) moment matrix of
//! Veronese-embedded regressors. The coefficient vector is recovered as a
//! minimum singular vector, then factored back into hyperplanes by
//! differentiation and deflation.

// Negated float comparisons in this crate are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod identify;
pub mod metrics;
pub mod model;
pub mod moment_matrix;
pub mod noise;
pub mod simulate;
pub mod veronese;

pub use error::{Error, Result};
pub use identify::{
    assign_modes, estimate_theta, gpca_extract, identify, identify_sar, identify_sarx, theta_curve, IdentifyConfig,
    IdentifyReport, NoiseSetting,
};
pub use model::{SubModel, SwitchedModel, SystemKind};
pub use moment_matrix::{min_singular, MomentKind, MomentMatrix, RawMomentTable, SvdResult};
pub use noise::{build_corrections, CorrectionPolySet, NoiseFamily, NoiseModel};
pub use simulate::{simulate, Dataset, SimConfig};
pub use veronese::{build_index, embed, product_of_forms, HomoPoly, LinearForm, VeroneseIndex};
