//! Spatial-relation constraints C1-C12 evaluated frame by frame.
//!
//! [`EvalContext`] is advanced one frame at a time. Each advance resolves
//! object and hand tracks (observed, coasting on the last observation for at
//! most `k_miss` frames, or missing) and updates the consecutive-frame
//! counters behind C7/C8. Evaluation at any already-advanced frame is a read.
//!
//! A constraint whose operand is missing evaluates to false. A constraint
//! computed from a coasting operand yields its value on the last-known data
//! but is flagged, so that counters and phase machines can freeze instead of
//! resetting on detector dropouts.

use crate::ontology::{Ontology, OntologyError};
use crate::scene::SceneState;
use crate::trace::{centroid, local_changes, BBox, HandSide, ImageSize, Point2, Trace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
    C10,
    C11,
    C12,
}

/// Which binding slots a constraint reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Operands {
    pub active: bool,
    pub passive: bool,
    pub hand: bool,
    pub affordance: bool,
}

impl ConstraintId {
    pub const ALL: [ConstraintId; 12] = [
        ConstraintId::C1,
        ConstraintId::C2,
        ConstraintId::C3,
        ConstraintId::C4,
        ConstraintId::C5,
        ConstraintId::C6,
        ConstraintId::C7,
        ConstraintId::C8,
        ConstraintId::C9,
        ConstraintId::C10,
        ConstraintId::C11,
        ConstraintId::C12,
    ];

    /// Ontology lookups that do not change over a demonstration.
    pub fn is_static(self) -> bool {
        matches!(self, ConstraintId::C1 | ConstraintId::C2 | ConstraintId::C3 | ConstraintId::C4)
    }

    /// Geometric predicates of a single frame (or frame pair); the only ones
    /// that may be negated in an action definition.
    pub fn is_per_frame(self) -> bool {
        matches!(
            self,
            ConstraintId::C5
                | ConstraintId::C6
                | ConstraintId::C9
                | ConstraintId::C10
                | ConstraintId::C11
                | ConstraintId::C12
        )
    }

    pub fn operands(self) -> Operands {
        use ConstraintId::*;
        let (active, passive, hand, affordance) = match self {
            C1 => (true, false, false, false),
            C2 => (false, true, false, false),
            C3 => (true, false, false, true),
            C4 => (false, true, false, true),
            C5 | C6 | C7 | C8 | C9 => (true, false, true, false),
            C10 | C11 => (true, false, false, false),
            C12 => (true, true, false, false),
        };
        Operands { active, passive, hand, affordance }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.number())
    }
}

impl FromStr for ConstraintId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: usize = s
            .strip_prefix('C')
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| format!("unknown constraint '{s}'"))?;
        if (1..=12).contains(&n) {
            Ok(ConstraintId::ALL[n - 1])
        } else {
            Err(format!("unknown constraint '{s}'"))
        }
    }
}

impl Serialize for ConstraintId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConstraintId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// How C9 compares object and hand motion between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMatch {
    /// Displacement magnitudes agree within `sigma_pos`.
    #[default]
    Magnitude,
    /// Displacement vectors agree within `sigma_pos`.
    Vector,
}

/// Tolerance on the horizontal alignment in C12.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTolerance {
    Pixels(f64),
    /// Fraction of the passive object's box width at the evaluated frame.
    PassiveWidth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub th_d: f64,
    pub th_n: u32,
    pub sigma_pos: f64,
    pub eps_rot: f64,
    pub eps_col: ColumnTolerance,
    pub k_miss: u32,
    #[serde(default)]
    pub c9_mode: MotionMatch,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid threshold {name} = {value}: {reason}")]
pub struct ThresholdError {
    pub name: &'static str,
    pub value: f64,
    pub reason: &'static str,
}

impl Thresholds {
    pub const DEFAULT_TH_D_FRACTION: f64 = 0.05;
    pub const DEFAULT_TH_N: u32 = 5;
    pub const DEFAULT_SIGMA_POS: f64 = 3.0;
    pub const DEFAULT_EPS_ROT: f64 = 0.1;
    pub const DEFAULT_EPS_COL_FRACTION: f64 = 0.25;
    pub const DEFAULT_K_MISS: u32 = 2;

    pub fn for_image(size: ImageSize) -> Self {
        Thresholds {
            th_d: Self::DEFAULT_TH_D_FRACTION * size.diagonal(),
            th_n: Self::DEFAULT_TH_N,
            sigma_pos: Self::DEFAULT_SIGMA_POS,
            eps_rot: Self::DEFAULT_EPS_ROT,
            eps_col: ColumnTolerance::PassiveWidth(Self::DEFAULT_EPS_COL_FRACTION),
            k_miss: Self::DEFAULT_K_MISS,
            c9_mode: MotionMatch::Magnitude,
        }
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(ThresholdError { name, value, reason: "must be finite and > 0" })
            }
        };
        positive("th_d", self.th_d)?;
        positive("sigma_pos", self.sigma_pos)?;
        positive("eps_rot", self.eps_rot)?;
        match self.eps_col {
            ColumnTolerance::Pixels(v) => positive("eps_col", v)?,
            ColumnTolerance::PassiveWidth(v) => positive("eps_col_fraction", v)?,
        }
        if self.th_n < 1 {
            return Err(ThresholdError { name: "th_n", value: 0.0, reason: "must be >= 1" });
        }
        Ok(())
    }
}

/// Optional per-field overrides, as read from config files and CLI flags.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdOverrides {
    pub th_d: Option<f64>,
    pub th_n: Option<u32>,
    pub sigma_pos: Option<f64>,
    pub eps_rot: Option<f64>,
    pub eps_col: Option<f64>,
    pub k_miss: Option<u32>,
    pub vector_c9: Option<bool>,
}

impl ThresholdOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ThresholdOverrides::default()
    }

    /// Later (`other`) values win.
    pub fn merge(self, other: ThresholdOverrides) -> ThresholdOverrides {
        ThresholdOverrides {
            th_d: other.th_d.or(self.th_d),
            th_n: other.th_n.or(self.th_n),
            sigma_pos: other.sigma_pos.or(self.sigma_pos),
            eps_rot: other.eps_rot.or(self.eps_rot),
            eps_col: other.eps_col.or(self.eps_col),
            k_miss: other.k_miss.or(self.k_miss),
            vector_c9: other.vector_c9.or(self.vector_c9),
        }
    }

    pub fn resolve(&self, image: ImageSize) -> Result<Thresholds, ThresholdError> {
        self.apply(Thresholds::for_image(image))
    }

    /// Replaces the set fields of `base`.
    pub fn apply(&self, base: Thresholds) -> Result<Thresholds, ThresholdError> {
        let mut t = base;
        if let Some(v) = self.th_d {
            t.th_d = v;
        }
        if let Some(v) = self.th_n {
            t.th_n = v;
        }
        if let Some(v) = self.sigma_pos {
            t.sigma_pos = v;
        }
        if let Some(v) = self.eps_rot {
            t.eps_rot = v;
        }
        if let Some(v) = self.eps_col {
            t.eps_col = ColumnTolerance::Pixels(v);
        }
        if let Some(v) = self.k_miss {
            t.k_miss = v;
        }
        if let Some(v) = self.vector_c9 {
            t.c9_mode = if v { MotionMatch::Vector } else { MotionMatch::Magnitude };
        }
        t.validate()?;
        Ok(t)
    }
}

/// Role assignment a constraint is evaluated under.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Binding {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandSide>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passive: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affordance: Option<String>,
}

impl Binding {
    pub fn active(class: &str) -> Self {
        Binding { active: Some(class.to_string()), ..Default::default() }
    }

    pub fn with_hand(mut self, hand: HandSide) -> Self {
        self.hand = Some(hand);
        self
    }

    pub fn with_passive(mut self, class: &str) -> Self {
        self.passive = Some(class.to_string());
        self
    }

    pub fn with_affordance(mut self, a: &str) -> Self {
        self.affordance = Some(a.to_string());
        self
    }

    pub fn check(&self, c: ConstraintId) -> Result<(), EvalError> {
        let ops = c.operands();
        let missing = if ops.active && self.active.is_none() {
            Some("active object")
        } else if ops.passive && self.passive.is_none() {
            Some("passive object")
        } else if ops.hand && self.hand.is_none() {
            Some("hand")
        } else if ops.affordance && self.affordance.is_none() {
            Some("affordance")
        } else {
            None
        };
        match missing {
            Some(role) => Err(EvalError::Arity { constraint: c, missing: role }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Binding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(a) = &self.active {
            parts.push(a.clone());
        }
        if let Some(h) = self.hand {
            parts.push(h.to_string());
        }
        if let Some(p) = &self.passive {
            parts.push(p.clone());
        }
        if let Some(a) = &self.affordance {
            parts.push(a.clone());
        }
        write!(f, "({})", parts.join(", "))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{constraint} needs a {missing} binding")]
    Arity { constraint: ConstraintId, missing: &'static str },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
    #[error("frame {frame} has not been advanced (advanced through {advanced})")]
    NotAdvanced { frame: usize, advanced: usize },
    #[error("advance expected frame {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
}

/// Three-valued result used by counters and phase machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    True,
    False,
    /// Computed from coasting data: neither confirms nor breaks a run.
    Unknown,
}

impl Truth {
    pub fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

}

impl std::ops::Not for Truth {
    type Output = Truth;

    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }
}

/// A constraint value plus whether any operand was coasting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eval {
    pub value: bool,
    pub coasted: bool,
}

impl Eval {
    const FALSE: Eval = Eval { value: false, coasted: false };

    fn definite(value: bool) -> Eval {
        Eval { value, coasted: false }
    }

    pub fn truth(self) -> Truth {
        match (self.coasted, self.value) {
            (true, _) => Truth::Unknown,
            (false, true) => Truth::True,
            (false, false) => Truth::False,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sample<T> {
    value: T,
    coasted: bool,
}

#[derive(Debug, Clone, Copy)]
struct Cursor<T> {
    last: Option<T>,
    age: u32,
}

impl<T: Copy> Cursor<T> {
    fn new() -> Self {
        Cursor { last: None, age: 0 }
    }

    fn step(&mut self, observed: Option<T>, k_miss: u32) -> Option<Sample<T>> {
        match observed {
            Some(v) => {
                self.last = Some(v);
                self.age = 0;
                Some(Sample { value: v, coasted: false })
            }
            None => {
                self.age = self.age.saturating_add(1);
                match self.last {
                    Some(v) if self.age <= k_miss => Some(Sample { value: v, coasted: true }),
                    _ => None,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct FrameState {
    objects: BTreeMap<String, Option<Sample<BBox>>>,
    hands: [Option<Sample<Point2>>; 2],
    /// Consecutive C5 / C6 runs per (object, hand).
    runs: BTreeMap<(String, HandSide), (u32, u32)>,
}

fn hand_slot(h: HandSide) -> usize {
    match h {
        HandSide::Left => 0,
        HandSide::Right => 1,
    }
}

pub struct EvalContext<'a> {
    trace: &'a Trace,
    scene: &'a SceneState,
    ontology: &'a Ontology,
    thresholds: Thresholds,
    states: Vec<FrameState>,
    object_cursors: BTreeMap<String, Cursor<BBox>>,
    hand_cursors: [Cursor<Point2>; 2],
}

impl<'a> EvalContext<'a> {
    pub fn new(trace: &'a Trace, scene: &'a SceneState, ontology: &'a Ontology, thresholds: Thresholds) -> Self {
        let object_cursors = scene.assignments.keys().map(|c| (c.clone(), Cursor::new())).collect();
        EvalContext {
            trace,
            scene,
            ontology,
            thresholds,
            states: Vec::with_capacity(trace.frames.len()),
            object_cursors,
            hand_cursors: [Cursor::new(), Cursor::new()],
        }
    }

    /// Builds a context and advances it through every frame.
    pub fn advanced(trace: &'a Trace, scene: &'a SceneState, ontology: &'a Ontology, thresholds: Thresholds) -> Self {
        let mut ctx = Self::new(trace, scene, ontology, thresholds);
        for i in 0..trace.frames.len() {
            ctx.advance(i).expect("sequential advance");
        }
        ctx
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn trace(&self) -> &Trace {
        self.trace
    }

    pub fn scene(&self) -> &SceneState {
        self.scene
    }

    /// Number of frames advanced so far.
    pub fn advanced_frames(&self) -> usize {
        self.states.len()
    }

    /// Consumes frame `i` (a position in the trace, not a frame label).
    pub fn advance(&mut self, i: usize) -> Result<(), EvalError> {
        if i != self.states.len() || i >= self.trace.frames.len() {
            return Err(EvalError::OutOfOrder { expected: self.states.len(), got: i });
        }
        let frame = &self.trace.frames[i];
        let k_miss = self.thresholds.k_miss;
        let mut state = FrameState::default();
        for (class, cursor) in self.object_cursors.iter_mut() {
            let observed = frame.detection(class).map(|d| d.bbox);
            state.objects.insert(class.clone(), cursor.step(observed, k_miss));
        }
        for side in HandSide::BOTH {
            let slot = hand_slot(side);
            state.hands[slot] = self.hand_cursors[slot].step(frame.hands.get(side), k_miss);
        }
        let prev_runs = self.states.last().map(|s| s.runs.clone()).unwrap_or_default();
        self.states.push(state);
        let mut runs = BTreeMap::new();
        for class in self.scene.assignments.keys() {
            for side in HandSide::BOTH {
                let (r5, r6) = prev_runs.get(&(class.clone(), side)).copied().unwrap_or((0, 0));
                let near = self.distance_test(class, side, i, |d, th| d < th);
                let far = self.distance_test(class, side, i, |d, th| d > th);
                runs.insert((class.clone(), side), (bump(r5, near), bump(r6, far)));
            }
        }
        self.states[i].runs = runs;
        Ok(())
    }

    fn state(&self, i: usize) -> Result<&FrameState, EvalError> {
        self.states.get(i).ok_or(EvalError::NotAdvanced { frame: i, advanced: self.states.len() })
    }

    fn object(&self, class: &str, i: usize) -> Option<Sample<BBox>> {
        self.states.get(i).and_then(|s| s.objects.get(class).copied().flatten())
    }

    fn hand(&self, side: HandSide, i: usize) -> Option<Sample<Point2>> {
        self.states.get(i).and_then(|s| s.hands[hand_slot(side)])
    }

    fn distance_test(&self, class: &str, side: HandSide, i: usize, cmp: fn(f64, f64) -> bool) -> Eval {
        match (self.object(class, i), self.hand(side, i)) {
            (Some(o), Some(h)) => Eval {
                value: cmp(centroid(&o.value).distance(&h.value), self.thresholds.th_d),
                coasted: o.coasted || h.coasted,
            },
            _ => Eval::FALSE,
        }
    }

    /// Passive objects are assumed static: when undetected their initial box stands in.
    fn passive_box(&self, class: &str, i: usize) -> Option<BBox> {
        self.trace.frames[i]
            .detection(class)
            .map(|d| d.bbox)
            .or_else(|| self.scene.initial_boxes.get(class).copied())
    }

    fn passive_centroid(&self, class: &str, i: usize) -> Option<Point2> {
        match self.trace.frames[i].detection(class) {
            Some(d) => Some(centroid(&d.bbox)),
            None => self.scene.initial_centroids.get(class).copied(),
        }
    }

    pub fn eval(&self, c: ConstraintId, b: &Binding, i: usize) -> Result<bool, EvalError> {
        Ok(self.evaluate(c, b, i)?.value)
    }

    pub fn truth(&self, c: ConstraintId, b: &Binding, i: usize) -> Result<Truth, EvalError> {
        Ok(self.evaluate(c, b, i)?.truth())
    }

    pub fn evaluate(&self, c: ConstraintId, b: &Binding, i: usize) -> Result<Eval, EvalError> {
        b.check(c)?;
        self.state(i)?;
        use ConstraintId::*;
        let active = || b.active.as_deref().expect("checked");
        let passive = || b.passive.as_deref().expect("checked");
        let hand = || b.hand.expect("checked");
        let th = &self.thresholds;
        let out = match c {
            C1 => Eval::definite(self.ontology.manipulable(active())?),
            C2 => Eval::definite(!self.ontology.manipulable(passive())?),
            C3 => Eval::definite(self.ontology.has_affordance(active(), b.affordance.as_deref().expect("checked"))?),
            C4 => Eval::definite(self.ontology.has_affordance(passive(), b.affordance.as_deref().expect("checked"))?),
            C5 => self.distance_test(active(), hand(), i, |d, th| d < th),
            C6 => self.distance_test(active(), hand(), i, |d, th| d > th),
            C7 | C8 => {
                let (r5, r6) = self.states[i].runs.get(&(active().to_string(), hand())).copied().unwrap_or((0, 0));
                let run = if c == C7 { r5 } else { r6 };
                Eval::definite(run >= th.th_n)
            }
            C9 => self.co_motion(active(), hand(), i),
            C10 => self.rotation(active(), i),
            C11 => match self.object(active(), i) {
                Some(o) => {
                    let p = centroid(&o.value);
                    let t = &self.scene.table;
                    Eval {
                        value: t.x_t < p.x && p.x < t.x_b && t.y_t < p.y && p.y < t.y_b,
                        coasted: o.coasted,
                    }
                }
                None => Eval::FALSE,
            },
            C12 => {
                let (a, p, pbox) = match (
                    self.object(active(), i),
                    self.passive_centroid(passive(), i),
                    self.passive_box(passive(), i),
                ) {
                    (Some(a), Some(p), Some(pb)) => (a, p, pb),
                    _ => return Ok(Eval::FALSE),
                };
                let pa = centroid(&a.value);
                let tol = match th.eps_col {
                    ColumnTolerance::Pixels(px) => px,
                    ColumnTolerance::PassiveWidth(frac) => frac * pbox.width(),
                };
                Eval { value: (pa.x - p.x).abs() <= tol && pa.y < p.y, coasted: a.coasted }
            }
        };
        Ok(out)
    }

    fn co_motion(&self, class: &str, side: HandSide, i: usize) -> Eval {
        if i == 0 {
            return Eval::FALSE;
        }
        let (o0, o1, h0, h1) = match (
            self.object(class, i - 1),
            self.object(class, i),
            self.hand(side, i - 1),
            self.hand(side, i),
        ) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Eval::FALSE,
        };
        let sigma = self.thresholds.sigma_pos;
        let d_obj = centroid(&o1.value).sub(&centroid(&o0.value));
        let d_hand = h1.value.sub(&h0.value);
        let (m_obj, m_hand) = (d_obj.norm(), d_hand.norm());
        let agree = match self.thresholds.c9_mode {
            MotionMatch::Magnitude => (m_obj - m_hand).abs() <= sigma,
            MotionMatch::Vector => d_obj.sub(&d_hand).norm() <= sigma,
        };
        Eval {
            value: agree && m_obj > sigma && m_hand > sigma,
            coasted: o0.coasted || o1.coasted || h0.coasted || h1.coasted,
        }
    }

    fn rotation(&self, class: &str, i: usize) -> Eval {
        let Some(cur) = self.object(class, i) else {
            return Eval::FALSE;
        };
        let angle = |b: &BBox| {
            let v = local_changes(b);
            v.y.atan2(v.x)
        };
        let (prev_angle, prev_coasted) = if i == 0 {
            match self.scene.rotation_baselines.get(class) {
                Some(a) => (*a, false),
                None => return Eval::FALSE,
            }
        } else {
            match self.object(class, i - 1) {
                Some(p) => (angle(&p.value), p.coasted),
                None => return Eval::FALSE,
            }
        };
        Eval {
            value: (angle(&cur.value) - prev_angle).abs() > self.thresholds.eps_rot,
            coasted: cur.coasted || prev_coasted,
        }
    }

    /// Every constraint under every binding the scene admits, at frame `i`,
    /// in a fixed order: actives (with hands, then passives), then passives.
    pub fn frame_records(&self, i: usize) -> Result<Vec<ConstraintRecord>, EvalError> {
        let mut out = Vec::new();
        let frame = self.trace.frames[i].index;
        let affordances: Vec<String> =
            self.ontology.affordance_registry().iter().map(|a| a.as_str().to_string()).collect();
        let mut push = |c: ConstraintId, binding: Binding| -> Result<(), EvalError> {
            let value = self.eval(c, &binding, i)?;
            out.push(ConstraintRecord { frame, constraint: c, binding, value });
            Ok(())
        };
        let actives: Vec<&str> = self.scene.classes_with(crate::scene::ObjectRole::Active).collect();
        let passives: Vec<&str> = self.scene.classes_with(crate::scene::ObjectRole::Passive).collect();
        for a in &actives {
            push(ConstraintId::C1, Binding::active(a))?;
            for aff in &affordances {
                push(ConstraintId::C3, Binding::active(a).with_affordance(aff))?;
            }
            for side in HandSide::BOTH {
                for c in [ConstraintId::C5, ConstraintId::C6, ConstraintId::C7, ConstraintId::C8, ConstraintId::C9] {
                    push(c, Binding::active(a).with_hand(side))?;
                }
            }
            push(ConstraintId::C10, Binding::active(a))?;
            push(ConstraintId::C11, Binding::active(a))?;
            for p in &passives {
                push(ConstraintId::C12, Binding::active(a).with_passive(p))?;
            }
        }
        for p in &passives {
            let b = Binding { passive: Some(p.to_string()), ..Default::default() };
            push(ConstraintId::C2, b.clone())?;
            for aff in &affordances {
                push(ConstraintId::C4, b.clone().with_affordance(aff))?;
            }
        }
        Ok(out)
    }
}

fn bump(run: u32, e: Eval) -> u32 {
    match e.truth() {
        Truth::True => run + 1,
        Truth::Unknown => run,
        Truth::False => 0,
    }
}

/// One line of the constraint truth stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintRecord {
    pub frame: u64,
    pub constraint: ConstraintId,
    pub binding: Binding,
    pub value: bool,
}

/// Writes the full per-frame truth stream as JSON lines.
pub fn write_truth_stream<W: std::io::Write>(ctx: &EvalContext<'_>, mut out: W) -> std::io::Result<()> {
    for i in 0..ctx.advanced_frames() {
        let records = ctx.frame_records(i).map_err(std::io::Error::other)?;
        for r in records {
            serde_json::to_writer(&mut out, &r)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
