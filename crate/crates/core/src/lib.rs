//! Action recognition from 2D demonstrations.
//!
//! Hand keypoints and object bounding boxes are replayed frame by frame
//! against spatial-relation constraints and an affordance ontology; matched
//! constraint sequences become a timeline of actions, which is mapped to an
//! abstract robot command plan.

pub mod constraints;
pub mod ontology;
pub mod planner;
pub mod recognizer;
pub mod report;
pub mod scene;
pub mod synthgen;
pub mod trace;
