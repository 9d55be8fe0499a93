//! Frequentist concept-based learning with expert rules.
//!
//! Images are cut into patches, patches are embedded and clustered, and
//! concept probabilities for a new image follow from cluster-occupancy counts
//! through a multinomial likelihood. Expert logic rules over concepts correct
//! the priors and conditionals before inference.

// Index loops over parallel count tables read better than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod clustering;
pub mod concept;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod freq_model;
pub mod inference;
pub mod model_file;
pub mod nodule;
pub mod pipeline;
pub mod rules;

pub use error::{Error, Result};
