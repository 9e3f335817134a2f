//! Location maps and narrative trajectories.
//!
//! Builds a corpus-wide map of locations from per-document model
//! extractions, places each document's trajectory on that map, and scores
//! maps and trajectories against references.

pub mod extraction;
pub mod format;
pub mod gateway;
pub mod merge;
pub mod metrics;
pub mod model;
pub mod refmap;
pub mod similarity;
pub mod viz;
