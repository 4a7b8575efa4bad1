//! The core data record: one image-phrase pair with detector candidates and
//! optional ground truth, in normalized coordinates.

use serde::{Deserialize, Serialize};

use crate::geometry::BoxN;

/// One detector proposal: a box and its matching score in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BoxN,
    pub score: f64,
}

/// One referring-detection sample. The ground truth is optional so that
/// unlabeled scoring datasets ingest; operations that need it say so.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub phrase: String,
    pub candidates: Vec<Candidate>,
    pub gt: Option<BoxN>,
    pub category: String,
}
