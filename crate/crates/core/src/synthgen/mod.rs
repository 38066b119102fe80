//! Synthetic demonstrations with ground-truth labels.
//!
//! A [`Template`] lists objects and a step script (pick, pour, place,
//! touch). [`compile`] turns it into a [`Scenario`]: per-frame hand and
//! object poses plus the labels the script implies. [`generate`] renders a
//! scenario to a trace and applies a [`NoiseModel`].

mod corpus;
mod template;

pub use corpus::{
    batch, generate_entry, load_manifest, plan_corpus, write_corpus, CorpusSpec, Manifest, ManifestEntry,
    NoiseParams, MANIFEST_FILE,
};
pub use template::{builtin_templates, compile, parse_template, template_to_toml, Step, Template, TemplateObject};

use crate::constraints::Thresholds;
use crate::planner::{GoalState, World};
use crate::recognizer::{ActionInstance, Timeline};
use crate::trace::{BBox, Detection, Frame, HandSide, ImageSize, Point2, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("template: {0}")]
    Template(String),
    #[error("unrealizable script at {label}: {reason}")]
    Unrealizable { label: String, reason: String },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Object centre and bottom-right-minus-top-left diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center: Point2,
    pub diagonal: Point2,
}

impl Pose {
    pub fn bbox(&self) -> BBox {
        BBox::from_center_diagonal(self.center, self.diagonal).expect("scripted diagonals are non-negative")
    }
}

/// What the hand is doing with an object in a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Contact {
    None,
    /// Moving toward an object it is about to grasp.
    Approach(String),
    /// Holding the object.
    Grip(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioObject {
    pub class: String,
    pub bbox: BBox,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub activity: String,
    pub seed: u64,
    pub image_size: ImageSize,
    pub table: BBox,
    pub thresholds: Thresholds,
    pub hand: HandSide,
    pub skip_table_check: bool,
    pub objects: Vec<ScenarioObject>,
    /// Hand position in every frame.
    pub hand_waypoints: Vec<Point2>,
    pub contact: Vec<Contact>,
    /// Pose of every object in every frame.
    pub object_paths: BTreeMap<String, Vec<Pose>>,
    pub labels: Vec<ActionInstance>,
    pub goal: GoalState,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.hand_waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hand_waypoints.is_empty()
    }

    pub fn initial_world(&self) -> World {
        World::initial(self.objects.iter().map(|o| (o.class.as_str(), o.active)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of a per-detection shift, pixels.
    #[serde(default)]
    pub centroid_jitter_px: f64,
    /// Probability that an object detection is missing from a frame.
    #[serde(default)]
    pub dropout_prob: f64,
    /// Hand-to-centroid distance while holding an object; 0 keeps the
    /// scripted grip. During the approach the hand stays at least this far
    /// from the object.
    #[serde(default)]
    pub grip_offset_px: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseModel {
    pub fn clean() -> Self {
        NoiseModel::default()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidNoise(m));
        if !self.centroid_jitter_px.is_finite() || self.centroid_jitter_px < 0.0 {
            return bad(format!("centroid_jitter_px = {}", self.centroid_jitter_px));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return bad(format!("dropout_prob = {} is outside [0, 1]", self.dropout_prob));
        }
        if !self.grip_offset_px.is_finite() || self.grip_offset_px < 0.0 {
            return bad(format!("grip_offset_px = {}", self.grip_offset_px));
        }
        Ok(())
    }
}

/// Renders the scenario and applies noise. Labels come from the clean script.
pub fn generate(scenario: &Scenario, noise: &NoiseModel) -> Result<(Trace, Timeline), SynthError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let jitter = Normal::new(0.0, noise.centroid_jitter_px).map_err(|e| SynthError::InvalidNoise(e.to_string()))?;
    let mut frames = Vec::with_capacity(scenario.len());
    for (i, hand) in scenario.hand_waypoints.iter().enumerate() {
        let mut hand = *hand;
        if noise.grip_offset_px > 0.0 {
            let held = match &scenario.contact[i] {
                Contact::Grip(o) => Some((o, true)),
                Contact::Approach(o) => Some((o, false)),
                Contact::None => None,
            };
            if let Some((o, gripping)) = held {
                let c = scenario.object_paths[o][i].center;
                let v = hand.sub(&c);
                let d = v.norm();
                let dir = if d > 0.0 { v.scale(1.0 / d) } else { Point2::new(0.0, -1.0) };
                if gripping || d < noise.grip_offset_px {
                    hand = c.add(&dir.scale(noise.grip_offset_px));
                }
            }
        }
        let mut f = Frame::new(i as u64);
        f.timestamp = Some(i as f64 / 30.0);
        f.table = Some(scenario.table);
        f.hands.set(scenario.hand, Some(hand));
        for (class, path) in &scenario.object_paths {
            let mut bbox = path[i].bbox();
            if noise.centroid_jitter_px > 0.0 {
                bbox = bbox.translate(Point2::new(jitter.sample(&mut rng), jitter.sample(&mut rng)));
            }
            if noise.dropout_prob > 0.0 && rng.random_bool(noise.dropout_prob) {
                continue;
            }
            f.detections.push(Detection { class_name: class.clone(), bbox, confidence: 1.0 });
        }
        frames.push(f);
    }
    let trace = Trace { image_size: scenario.image_size, frames };
    let mut labels = Timeline::new(&scenario.name, scenario.thresholds);
    labels.instances = scenario.labels.clone();
    Ok((trace, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::Ontology;
    use crate::trace::serialize_trace;

    fn cup_bowl() -> Scenario {
        let t = builtin_templates().into_iter().find(|t| t.name == "cup_bowl").unwrap();
        compile(&t, 7, &Ontology::builtin()).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let s = cup_bowl();
        let noise = NoiseModel { centroid_jitter_px: 2.0, dropout_prob: 0.1, grip_offset_px: 0.0, seed: 3 };
        let (a, la) = generate(&s, &noise).unwrap();
        let (b, lb) = generate(&s, &noise).unwrap();
        assert_eq!(serialize_trace(&a), serialize_trace(&b));
        assert_eq!(la, lb);
    }

    #[test]
    fn clean_labels_cover_script() {
        let s = cup_bowl();
        let actions: Vec<&str> = s.labels.iter().map(|l| l.action.as_str()).collect();
        assert_eq!(actions, vec!["Pick", "Pour", "wateringPlant", "Place"]);
        assert!(s.goal.contains["bowl"].contains("cup_contents"));
        assert!(s.goal.on_table.contains("cup"));
    }

    #[test]
    fn grip_offset_keeps_hand_away() {
        let s = cup_bowl();
        let off = 1.5 * s.thresholds.th_d;
        let (t, _) = generate(&s, &NoiseModel { grip_offset_px: off, ..NoiseModel::clean() }).unwrap();
        for (i, f) in t.frames.iter().enumerate() {
            if s.contact[i] != Contact::None {
                let c = crate::trace::centroid(&f.detection("cup").unwrap().bbox);
                assert!(f.hands.right.unwrap().distance(&c) >= off - 1e-9);
            }
        }
    }

    #[test]
    fn invalid_noise_rejected() {
        let s = cup_bowl();
        assert!(generate(&s, &NoiseModel { dropout_prob: 1.5, ..NoiseModel::clean() }).is_err());
        assert!(generate(&s, &NoiseModel { centroid_jitter_px: f64::NAN, ..NoiseModel::clean() }).is_err());
    }
}
