//! Cross-modal correlation learning for venue discovery.
//!
//! Six interchangeable methods map photo features and venue-article features
//! into a shared canonical space: linear CCA, kernel CCA and deep CCA, each
//! with an optional category-based variant whose cross-covariance blends
//! same-venue pairs with same-category pairs from different venues. Methods
//! are looked up by name in a [`methods::MethodRegistry`]; the fitted models
//! share the [`model::CorrelationModel`] trait and feed the ranking and
//! evaluation code in [`retrieval`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cca;
pub mod config;
pub mod dataio;
pub mod dcca;
pub mod error;
pub mod geo;
pub mod linalg;
pub mod kcca;
pub mod methods;
pub mod model;
pub mod neural;
pub mod retrieval;

pub use error::{Error, Result};
