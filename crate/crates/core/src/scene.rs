//! Initial scene analysis over the first frames of a trace.

use crate::ontology::{Ontology, OntologyError};
use crate::trace::{centroid, local_changes, BBox, Point2, Trace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const DEFAULT_INIT_WINDOW: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("frame {frame}: object class '{class}' is not in the ontology")]
    UnknownClass { class: String, frame: u64 },
    #[error("no table observation in the first {0} frames")]
    NoTable(usize),
    #[error("initialization window is empty")]
    EmptyWindow,
    #[error("frame {frame}: object '{class}' first appears after the initialization window")]
    LateObject { class: String, frame: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectRole {
    Active,
    Passive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub assignments: BTreeMap<String, ObjectRole>,
    pub initial_centroids: BTreeMap<String, Point2>,
    /// Per-corner median box, used where an object's current extent is unknown.
    pub initial_boxes: BTreeMap<String, BBox>,
    /// Angle of the median local-changes vector, active objects only.
    pub rotation_baselines: BTreeMap<String, f64>,
    pub table: BBox,
    pub init_frame_span: (u64, u64),
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn median_box(boxes: &[BBox]) -> BBox {
    let col = |f: fn(&BBox) -> f64| median(&mut boxes.iter().map(f).collect::<Vec<_>>());
    BBox {
        x_t: col(|b| b.x_t),
        y_t: col(|b| b.y_t),
        x_b: col(|b| b.x_b),
        y_b: col(|b| b.y_b),
    }
}

fn role_of(ontology: &Ontology, class: &str, frame: u64) -> Result<ObjectRole, SceneError> {
    match ontology.manipulable(class) {
        Ok(true) => Ok(ObjectRole::Active),
        Ok(false) => Ok(ObjectRole::Passive),
        Err(OntologyError::UnknownClass(_)) | Err(_) => {
            Err(SceneError::UnknownClass { class: class.to_string(), frame })
        }
    }
}

/// Classifies every object seen in the first `init_window` frames and stores
/// its median centroid, median box and the median table box.
pub fn analyze_initial(
    trace: &Trace,
    ontology: &Ontology,
    init_window: usize,
) -> Result<SceneState, SceneError> {
    let window = &trace.frames[..init_window.min(trace.frames.len())];
    let (first, last) = match (window.first(), window.last()) {
        (Some(a), Some(b)) => (a.index, b.index),
        _ => return Err(SceneError::EmptyWindow),
    };

    let mut assignments = BTreeMap::new();
    let mut boxes: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    let mut tables = Vec::new();
    for frame in window {
        if let Some(t) = frame.table {
            tables.push(t);
        }
        let mut classes: Vec<&str> = frame.detections.iter().map(|d| d.class_name.as_str()).collect();
        classes.sort_unstable();
        classes.dedup();
        for class in classes {
            let role = role_of(ontology, class, frame.index)?;
            assignments.insert(class.to_string(), role);
            let det = frame.detection(class).expect("class taken from this frame");
            boxes.entry(class.to_string()).or_default().push(det.bbox);
        }
    }
    if tables.is_empty() {
        return Err(SceneError::NoTable(window.len()));
    }

    let mut scene = SceneState {
        assignments,
        initial_centroids: BTreeMap::new(),
        initial_boxes: BTreeMap::new(),
        rotation_baselines: BTreeMap::new(),
        table: median_box(&tables),
        init_frame_span: (first, last),
    };
    for (class, bs) in &boxes {
        let mut xs: Vec<f64> = bs.iter().map(|b| centroid(b).x).collect();
        let mut ys: Vec<f64> = bs.iter().map(|b| centroid(b).y).collect();
        scene.initial_centroids.insert(class.clone(), Point2::new(median(&mut xs), median(&mut ys)));
        scene.initial_boxes.insert(class.clone(), median_box(bs));
        if scene.assignments[class] == ObjectRole::Active {
            let mut vx: Vec<f64> = bs.iter().map(|b| local_changes(b).x).collect();
            let mut vy: Vec<f64> = bs.iter().map(|b| local_changes(b).y).collect();
            scene.rotation_baselines.insert(class.clone(), median(&mut vy).atan2(median(&mut vx)));
        }
    }
    Ok(scene)
}

impl SceneState {
    pub fn role(&self, class: &str) -> Option<ObjectRole> {
        self.assignments.get(class).copied()
    }

    pub fn classes_with(&self, role: ObjectRole) -> impl Iterator<Item = &str> {
        self.assignments.iter().filter(move |(_, r)| **r == role).map(|(c, _)| c.as_str())
    }

    /// Fails with the first class the ontology does not know, or (unless
    /// `lenient`) the first class absent from the initialization window.
    /// In lenient mode late classes are admitted with their first observation
    /// as the initial state. Returns the admitted class names.
    pub fn check_trace(
        &mut self,
        trace: &Trace,
        ontology: &Ontology,
        lenient: bool,
    ) -> Result<Vec<String>, SceneError> {
        let mut admitted = Vec::new();
        for frame in &trace.frames {
            for det in &frame.detections {
                let class = det.class_name.as_str();
                if self.assignments.contains_key(class) {
                    continue;
                }
                let role = role_of(ontology, class, frame.index)?;
                if !lenient {
                    return Err(SceneError::LateObject { class: class.to_string(), frame: frame.index });
                }
                let b = frame.detection(class).expect("present").bbox;
                self.assignments.insert(class.to_string(), role);
                self.initial_centroids.insert(class.to_string(), centroid(&b));
                self.initial_boxes.insert(class.to_string(), b);
                if role == ObjectRole::Active {
                    let v = local_changes(&b);
                    self.rotation_baselines.insert(class.to_string(), v.y.atan2(v.x));
                }
                admitted.push(class.to_string());
            }
        }
        Ok(admitted)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Detection, Frame, ImageSize};

    fn det(class: &str, b: [f64; 4]) -> Detection {
        Detection { class_name: class.into(), bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(), confidence: 1.0 }
    }

    fn frame(i: u64, dets: Vec<Detection>, table: bool) -> Frame {
        let mut f = Frame::new(i);
        f.detections = dets;
        if table {
            f.table = Some(BBox::new(0.0, 200.0, 640.0, 480.0).unwrap());
        }
        f
    }

    fn trace(frames: Vec<Frame>) -> Trace {
        Trace { image_size: ImageSize::new(640, 480), frames }
    }

    #[test]
    fn classifies_cup_and_bowl() {
        let t = trace(vec![frame(
            0,
            vec![det("cup", [100.0, 250.0, 140.0, 310.0]), det("bowl", [300.0, 300.0, 400.0, 350.0])],
            true,
        )]);
        let s = analyze_initial(&t, &Ontology::builtin(), 10).unwrap();
        assert_eq!(s.role("cup"), Some(ObjectRole::Active));
        assert_eq!(s.role("bowl"), Some(ObjectRole::Passive));
        assert_eq!(s.initial_centroids["cup"], Point2::new(120.0, 280.0));
        assert_eq!(s.initial_centroids["bowl"], Point2::new(350.0, 325.0));
        assert!(s.rotation_baselines.contains_key("cup"));
        assert!(!s.rotation_baselines.contains_key("bowl"));
        assert_eq!(s.table, BBox::new(0.0, 200.0, 640.0, 480.0).unwrap());
        assert_eq!(s.init_frame_span, (0, 0));
    }

    #[test]
    fn median_suppresses_single_outlier() {
        let mut frames: Vec<Frame> = (0..5)
            .map(|i| frame(i, vec![det("cup", [100.0, 250.0, 140.0, 310.0])], true))
            .collect();
        frames[2].detections[0] = det("cup", [400.0, 250.0, 440.0, 310.0]);
        let s = analyze_initial(&trace(frames), &Ontology::builtin(), 10).unwrap();
        assert_eq!(s.initial_centroids["cup"], Point2::new(120.0, 280.0));
    }

    #[test]
    fn window_limits_frames_used() {
        let mut frames: Vec<Frame> = (0..4)
            .map(|i| frame(i, vec![det("cup", [100.0, 250.0, 140.0, 310.0])], true))
            .collect();
        frames.push(frame(4, vec![det("cup", [500.0, 250.0, 540.0, 310.0])], true));
        let s = analyze_initial(&trace(frames), &Ontology::builtin(), 4).unwrap();
        assert_eq!(s.initial_centroids["cup"].x, 120.0);
        assert_eq!(s.init_frame_span, (0, 3));
    }

    #[test]
    fn errors() {
        let o = Ontology::builtin();
        assert_eq!(analyze_initial(&trace(vec![]), &o, 10), Err(SceneError::EmptyWindow));
        let no_table = trace(vec![frame(0, vec![], false)]);
        assert_eq!(analyze_initial(&no_table, &o, 10), Err(SceneError::NoTable(1)));
        let unicorn = trace(vec![frame(7, vec![det("unicorn", [0.0, 0.0, 1.0, 1.0])], true)]);
        assert_eq!(
            analyze_initial(&unicorn, &o, 10),
            Err(SceneError::UnknownClass { class: "unicorn".into(), frame: 7 })
        );
    }

    #[test]
    fn late_objects_strict_and_lenient() {
        let o = Ontology::builtin();
        let t = trace(vec![
            frame(0, vec![det("cup", [100.0, 250.0, 140.0, 310.0])], true),
            frame(1, vec![det("mug", [200.0, 250.0, 240.0, 310.0])], true),
        ]);
        let mut s = analyze_initial(&t, &o, 1).unwrap();
        assert_eq!(
            s.clone().check_trace(&t, &o, false),
            Err(SceneError::LateObject { class: "mug".into(), frame: 1 })
        );
        assert_eq!(s.check_trace(&t, &o, true).unwrap(), vec!["mug".to_string()]);
        assert_eq!(s.initial_centroids["mug"], Point2::new(220.0, 280.0));
        assert_eq!(s.role("mug"), Some(ObjectRole::Active));
    }

    #[test]
    fn even_count_median_averages() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [5.0]), 5.0);
    }
}
