//! Singular-value-thresholded global Fréchet regression for responses in a
//! metric space, with covariates that may be observed with error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod linalg;
pub mod metric;
pub mod regression;
pub mod simulation;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, SvdFactors, ThresholdPolicy, Vector};
pub use metric::{
    distance, weighted_frechet_mean, CorrelationMatrix, MetricPoint, MetricSpaceKind,
    QuantileFunction, QuantileGrid,
};
pub use regression::{
    covariate_stats, fit, pcr_coefficients, predict_from_weights, weight_vector, CovariateStats, Dataset, FittedModel,
    PcrFit, QueryScores,
};
pub use diagnostics::{GrowthConstants, DenoisingReport};
