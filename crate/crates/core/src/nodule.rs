//! A ten-image lung-nodule toy dataset with three clusters, small enough to
//! check every probability by hand.
//!
//! Concepts: diagnosis (malignant, benign), contour (smooth, grainy,
//! spicules), texture (homogeneous, necrosis). Each image has four patches.

use crate::concept::{ConceptSchema, ConceptVector};
use crate::freq_model::{fit_counts, CountTables};

pub fn schema() -> ConceptSchema {
    ConceptSchema::from_pairs([("diagnosis", 2), ("contour", 3), ("texture", 2)]).expect("valid schema")
}

/// `(label, per-image cluster assignments)`, clusters 0-based.
pub fn images() -> Vec<([u16; 3], [usize; 4])> {
    vec![
        ([2, 1, 1], [0, 0, 0, 2]),
        ([2, 1, 1], [0, 0, 0, 2]),
        ([2, 2, 1], [0, 0, 0, 2]),
        ([2, 2, 1], [0, 0, 0, 2]),
        ([1, 3, 1], [0, 0, 0, 1]),
        ([1, 3, 1], [0, 0, 0, 1]),
        ([1, 3, 1], [0, 0, 1, 1]),
        ([1, 3, 1], [0, 0, 1, 2]),
        ([1, 2, 2], [0, 0, 0, 1]),
        ([1, 2, 2], [0, 0, 0, 1]),
    ]
}

pub fn labels() -> Vec<ConceptVector> {
    let schema = schema();
    images()
        .iter()
        .map(|(z, _)| ConceptVector::full(&schema, z).expect("valid label"))
        .collect()
}

pub fn assignments() -> Vec<Vec<usize>> {
    images().iter().map(|(_, a)| a.to_vec()).collect()
}

pub fn counts() -> CountTables {
    fit_counts(&assignments(), &labels(), 3, &schema()).expect("valid counts")
}

/// Occupancy of the test nodule: two patches in cluster 0, two in cluster 2.
pub const TEST_OCCUPANCY: [u64; 3] = [2, 0, 2];

/// Pixel value that lands in each cluster when the toy dataset is rendered
/// as 2×2 images with one-pixel patches.
pub const CLUSTER_PIXELS: [f64; 3] = [0.0, 0.5, 1.0];
