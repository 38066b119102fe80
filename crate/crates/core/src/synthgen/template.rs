//! Scenario templates and their compilation into frame-level scripts.

use super::{Contact, Pose, Scenario, ScenarioObject, SynthError};
use crate::constraints::{Binding, ColumnTolerance, ThresholdOverrides, Thresholds};
use crate::ontology::Ontology;
use crate::planner::{contents_token, GoalState};
use crate::recognizer::ActionInstance;
use crate::trace::{centroid, BBox, HandSide, ImageSize, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateObject {
    pub class: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    Pick { object: String },
    Pour { object: String, target: String },
    /// Puts the held object down at `at`, or where it was picked up.
    Place {
        object: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at: Option<[f64; 2]>,
    },
    /// Brief contact that must not count as a pick.
    Touch { object: String, frames: u32 },
}

impl Step {
    fn object(&self) -> &str {
        match self {
            Step::Pick { object } | Step::Pour { object, .. } | Step::Place { object, .. } | Step::Touch { object, .. } => {
                object
            }
        }
    }

    fn label(&self) -> String {
        match self {
            Step::Pick { object } => format!("pick({object})"),
            Step::Pour { object, target } => format!("pour({object}, {target})"),
            Step::Place { object, .. } => format!("place({object})"),
            Step::Touch { object, frames } => format!("touch({object}, {frames})"),
        }
    }
}

fn default_image_size() -> [u32; 2] {
    [640, 480]
}

fn default_hand() -> HandSide {
    HandSide::Right
}

fn default_position_jitter() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    pub activity: String,
    #[serde(default = "default_image_size")]
    pub image_size: [u32; 2],
    pub table: [f64; 4],
    #[serde(default = "default_hand")]
    pub hand: HandSide,
    /// Where the hand waits between actions; defaults to the top-right area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand_rest: Option<[f64; 2]>,
    /// The poured object is kept in hand afterwards instead of being put
    /// back on the table.
    #[serde(default)]
    pub skip_table_check: bool,
    /// Per-seed uniform shift applied to object positions.
    #[serde(default = "default_position_jitter")]
    pub position_jitter_px: f64,
    #[serde(default)]
    pub thresholds: ThresholdOverrides,
    pub objects: Vec<TemplateObject>,
    pub steps: Vec<Step>,
}

pub fn parse_template(source: &str) -> Result<Template, SynthError> {
    toml::from_str(source).map_err(|e| SynthError::Template(e.to_string()))
}

pub fn template_to_toml(t: &Template) -> String {
    toml::to_string(t).expect("templates serialize to TOML")
}

const TEMPLATE_SOURCES: [&str; 6] = [
    include_str!("../../data/templates/cup_bowl.toml"),
    include_str!("../../data/templates/watering_plant.toml"),
    include_str!("../../data/templates/mug_pot.toml"),
    include_str!("../../data/templates/spaghetti_pot.toml"),
    include_str!("../../data/templates/cups_rearrange.toml"),
    include_str!("../../data/templates/two_pours.toml"),
];

/// Shipped templates.
pub fn builtin_templates() -> Vec<Template> {
    TEMPLATE_SOURCES.iter().map(|s| parse_template(s).expect("shipped template is valid")).collect()
}

// Script geometry, in pixels per frame and frames.
const APPROACH_SPEED: f64 = 12.0;
const CARRY_SPEED: f64 = 8.0;
const RETREAT_SPEED: f64 = 10.0;
const POUR_DESCENT: f64 = 5.0;
const HOVER_CLEARANCE: f64 = 20.0;
const LIFT: f64 = 40.0;
const SET_DOWN_FRAMES: usize = 3;
const HOVER_STOP_FRAMES: usize = 2;

fn unit(v: Point2) -> Point2 {
    let n = v.norm();
    if n == 0.0 {
        Point2::new(0.0, -1.0)
    } else {
        v.scale(1.0 / n)
    }
}

struct Builder {
    hand: Vec<Point2>,
    contact: Vec<Contact>,
    poses: BTreeMap<String, Vec<Pose>>,
    cur_hand: Point2,
    cur: BTreeMap<String, Pose>,
    held: Option<(String, Point2)>,
}

impl Builder {
    fn frames(&self) -> usize {
        self.hand.len()
    }

    fn push(&mut self, contact: Contact) {
        self.hand.push(self.cur_hand);
        self.contact.push(contact);
        for (class, pose) in &self.cur {
            self.poses.get_mut(class).expect("registered").push(*pose);
        }
    }

    fn idle(&mut self, n: usize) {
        for _ in 0..n {
            let c = match &self.held {
                Some((o, _)) => Contact::Grip(o.clone()),
                None => Contact::None,
            };
            self.push(c);
        }
    }

    fn set_hand(&mut self, p: Point2) {
        self.cur_hand = p;
        if let Some((o, grip)) = &self.held {
            let pose = self.cur.get_mut(o).expect("held object exists");
            pose.center = p.sub(grip);
        }
    }

    /// Straight-line hand motion; a held object follows.
    fn move_to(&mut self, to: Point2, speed: f64, contact: &Contact) {
        let from = self.cur_hand;
        let d = from.distance(&to);
        if d == 0.0 {
            return;
        }
        let n = (d / speed).floor().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            self.set_hand(from.add(&to.sub(&from).scale(t)));
            self.push(contact.clone());
        }
    }

    /// Carries along waypoints, merging legs shorter than one frame of
    /// motion into their neighbours so every frame moves at carry speed.
    fn carry(&mut self, waypoints: &[Point2], contact: &Contact) {
        let mut kept: Vec<Point2> = Vec::new();
        let mut last = self.cur_hand;
        for p in waypoints {
            if last.distance(p) >= CARRY_SPEED {
                kept.push(*p);
                last = *p;
            }
        }
        let dest = *waypoints.last().expect("at least one waypoint");
        match kept.last() {
            Some(p) if *p == dest => {}
            Some(_) => {
                kept.pop();
                kept.push(dest);
            }
            None => kept.push(dest),
        }
        for p in kept {
            self.move_to(p, CARRY_SPEED, contact);
        }
    }

    fn center(&self, class: &str) -> Point2 {
        self.cur[class].center
    }

    fn hand_distance(&self, frame: usize, class: &str) -> f64 {
        self.hand[frame].distance(&self.poses[class][frame].center)
    }
}

fn column_tolerance(th: &Thresholds, passive_width: f64) -> f64 {
    match th.eps_col {
        ColumnTolerance::Pixels(px) => px,
        ColumnTolerance::PassiveWidth(f) => f * passive_width,
    }
}

/// Compiles a template into a scenario. The seed shifts object positions by
/// up to `position_jitter_px` and varies idle and dwell lengths.
pub fn compile(template: &Template, seed: u64, ontology: &Ontology) -> Result<Scenario, SynthError> {
    let unrealizable =
        |label: &str, reason: String| SynthError::Unrealizable { label: label.to_string(), reason };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = ImageSize::new(template.image_size[0], template.image_size[1]);
    let th = template.thresholds.resolve(image).map_err(|e| unrealizable("thresholds", e.to_string()))?;
    let [tx, ty, tbx, tby] = template.table;
    let table = BBox::new(tx, ty, tbx, tby).map_err(|e| unrealizable("table", e.to_string()))?;

    let mut objects = Vec::new();
    for o in &template.objects {
        let active = ontology.manipulable(&o.class).map_err(|e| unrealizable(&o.class, e.to_string()))?;
        let [x, y, bx, by] = o.bbox;
        let j = template.position_jitter_px;
        let shift = if j > 0.0 {
            Point2::new(rng.random_range(-j..=j), rng.random_range(-j..=j))
        } else {
            Point2::new(0.0, 0.0)
        };
        let bbox = BBox::new(x, y, bx, by).map_err(|e| unrealizable(&o.class, e.to_string()))?.translate(shift);
        if objects.iter().any(|s: &ScenarioObject| s.class == o.class) {
            return Err(unrealizable(&o.class, "object listed twice".into()));
        }
        objects.push(ScenarioObject { class: o.class.clone(), bbox, active });
    }
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            let gap = centroid(&a.bbox).distance(&centroid(&b.bbox));
            if gap <= 2.0 * th.th_d {
                return Err(unrealizable(
                    &format!("{}/{}", a.class, b.class),
                    format!("objects {gap:.1} px apart, need more than {:.1}", 2.0 * th.th_d),
                ));
            }
        }
    }

    let rest = match template.hand_rest {
        Some([x, y]) => Point2::new(x, y),
        None => Point2::new(0.85 * f64::from(image.width), 0.12 * f64::from(image.height)),
    };
    for o in &objects {
        if rest.distance(&centroid(&o.bbox)) <= 2.0 * th.th_d {
            return Err(unrealizable("hand_rest", format!("too close to {}", o.class)));
        }
    }

    let mut b = Builder {
        hand: Vec::new(),
        contact: Vec::new(),
        poses: objects.iter().map(|o| (o.class.clone(), Vec::new())).collect(),
        cur_hand: rest,
        cur: objects
            .iter()
            .map(|o| (o.class.clone(), Pose { center: centroid(&o.bbox), diagonal: Point2::new(o.bbox.width(), o.bbox.height()) }))
            .collect(),
        held: None,
    };
    let th_n = th.th_n as usize;
    let min_motion = th.sigma_pos + 1.0;
    if CARRY_SPEED <= min_motion || POUR_DESCENT <= min_motion {
        return Err(unrealizable("thresholds", format!("sigma_pos {} too large for scripted motion", th.sigma_pos)));
    }
    let tilt_step = (th.eps_rot * 1.4).max(0.14);

    let mut labels: Vec<ActionInstance> = Vec::new();
    let binding = |o: &str| Binding::active(o).with_hand(template.hand);
    // Open pick label index per held object.
    let mut pick_label: Option<usize> = None;
    let mut pending_place_labels: Vec<(usize, String)> = Vec::new();
    let mut pour_labels: Vec<usize> = Vec::new();
    let mut goal = GoalState::default();

    b.idle(12 + rng.random_range(0..=4));

    let steps = &template.steps;
    for (si, step) in steps.iter().enumerate() {
        let label = step.label();
        let o = step.object().to_string();
        if !b.cur.contains_key(&o) {
            return Err(unrealizable(&label, format!("no object '{o}' in the scene")));
        }
        match step {
            Step::Pick { .. } => {
                if b.held.is_some() {
                    return Err(unrealizable(&label, "hand is already holding an object".into()));
                }
                if !ontology.has_affordance(&o, "pick").unwrap_or(false) {
                    return Err(unrealizable(&label, format!("'{o}' cannot be picked")));
                }
                let c = b.center(&o);
                let grip_vec = unit(b.cur_hand.sub(&c)).scale(th.th_d / 4.0);
                let first = b.frames();
                b.move_to(c.add(&grip_vec), APPROACH_SPEED, &Contact::Approach(o.clone()));
                let start = (first..b.frames())
                    .find(|&f| b.hand_distance(f, &o) < th.th_d)
                    .ok_or_else(|| unrealizable(&label, "approach never comes within th_d".into()))?;
                b.held = Some((o.clone(), grip_vec));
                b.idle((th_n + 1).max(6) + rng.random_range(0..=3));

                // Carry: lift, travel, and lower to the destination set by the next step.
                let (dx, dy) = match steps.get(si + 1) {
                    Some(Step::Pour { object, target }) if *object == o => {
                        let p = b.cur.get(target).ok_or_else(|| {
                            unrealizable(&steps[si + 1].label(), format!("no object '{target}' in the scene"))
                        })?;
                        let h_a = b.cur[&o].diagonal.y;
                        let pc = p.center;
                        let descent = POUR_DESCENT * tilt_frames(th_n) as f64;
                        (pc.x, pc.y - (p.diagonal.y / 2.0 + h_a / 2.0 + HOVER_CLEARANCE + descent))
                    }
                    Some(Step::Place { object, at }) if *object == o => match at {
                        Some([x, y]) => (*x, *y),
                        None => (c.x, c.y),
                    },
                    None => (c.x, c.y - LIFT),
                    Some(other) => {
                        return Err(unrealizable(
                            &other.label(),
                            format!("must pour or place '{o}' before {}", other.label()),
                        ))
                    }
                };
                let dest_obj = Point2::new(dx, dy);
                let mut lift = LIFT;
                loop {
                    let top = (c.y - lift).min(dest_obj.y);
                    let len = (c.y - top) + (dest_obj.x - c.x).abs() + (dest_obj.y - top);
                    if len / CARRY_SPEED >= (th_n + 6).max(12) as f64 {
                        break;
                    }
                    lift += CARRY_SPEED;
                }
                let top = (c.y - lift).min(dest_obj.y);
                if top - b.cur[&o].diagonal.y / 2.0 < 0.0 {
                    return Err(unrealizable(&label, "carry path leaves the image".into()));
                }
                let grip = Contact::Grip(o.clone());
                b.carry(
                    &[
                        Point2::new(c.x, top).add(&grip_vec),
                        Point2::new(dest_obj.x, top).add(&grip_vec),
                        dest_obj.add(&grip_vec),
                    ],
                    &grip,
                );
                let end = b.frames() - 1;
                labels.push(ActionInstance::new("Pick", binding(&o), start as u64, end as u64));
                pick_label = Some(labels.len() - 1);
            }
            Step::Pour { target, .. } => {
                if b.held.as_ref().map(|h| h.0.as_str()) != Some(o.as_str()) || si == 0 {
                    return Err(unrealizable(&label, format!("'{o}' is not held")));
                }
                if !matches!(&steps[si - 1], Step::Pick { object } if *object == o) {
                    return Err(unrealizable(&label, "pour must directly follow the pick".into()));
                }
                if !ontology.has_affordance(&o, "pour").unwrap_or(false)
                    || !ontology.has_affordance(target, "accept_pouring").unwrap_or(false)
                {
                    return Err(unrealizable(&label, "affordances do not admit this pour".into()));
                }
                b.idle(HOVER_STOP_FRAMES);
                let base = b.cur[&o].diagonal;
                let base_angle = base.y.atan2(base.x);
                let sign = if base_angle > std::f64::consts::FRAC_PI_4 { -1.0 } else { 1.0 };
                let mut angle = base_angle;
                let len = base.norm();
                for k in 0..tilt_frames(th_n) {
                    angle += if (k / 3) % 2 == 0 { sign * tilt_step } else { -sign * tilt_step };
                    let d = Point2::new(len * angle.cos(), len * angle.sin());
                    if d.x <= 0.0 || d.y <= 0.0 {
                        return Err(unrealizable(&label, "tilt flips the bounding box".into()));
                    }
                    b.cur.get_mut(&o).expect("held").diagonal = d;
                    let next = b.cur_hand.add(&Point2::new(0.0, POUR_DESCENT));
                    b.set_hand(next);
                    b.push(Contact::Grip(o.clone()));
                }
                b.cur.get_mut(&o).expect("held").diagonal = base;
                let end = b.frames() - 1;

                // Column alignment holds over the target and nowhere else.
                let tilt_start = end + 1 - tilt_frames(th_n);
                for f in tilt_start..=end {
                    let a = b.poses[&o][f].center;
                    for obj in objects.iter().filter(|x| !x.active) {
                        let p = centroid(&obj.bbox);
                        let tol = column_tolerance(&th, obj.bbox.width());
                        let aligned = (a.x - p.x).abs() <= tol && a.y < p.y;
                        if obj.class == *target && !aligned {
                            return Err(unrealizable(&label, format!("not above '{target}' at frame {f}")));
                        }
                        if obj.class != *target && aligned {
                            return Err(unrealizable(&label, format!("also above '{}' at frame {f}", obj.class)));
                        }
                    }
                }
                let pick = pick_label.ok_or_else(|| unrealizable(&label, "no pick to pour from".into()))?;
                let start = labels[pick].start;
                labels.push(
                    ActionInstance::new("Pour", binding(&o).with_passive(target), start, end as u64)
                        .with_children(vec![labels[pick].clone()]),
                );
                pour_labels.push(labels.len() - 1);
                goal.contains.entry(target.clone()).or_default().insert(contents_token(&o));
            }
            Step::Place { at, .. } => {
                let Some((_, grip_vec)) = b.held.clone().filter(|h| h.0 == o) else {
                    return Err(unrealizable(&label, format!("'{o}' is not held")));
                };
                if !ontology.has_affordance(&o, "place").unwrap_or(false) {
                    return Err(unrealizable(&label, format!("'{o}' cannot be placed")));
                }
                let spot = match at {
                    Some([x, y]) => Point2::new(*x, *y),
                    None => objects.iter().find(|x| x.class == o).map(|x| centroid(&x.bbox)).expect("known"),
                };
                if !(table.x_t < spot.x && spot.x < table.x_b && table.y_t < spot.y && spot.y < table.y_b) {
                    return Err(unrealizable(&label, "placement point is off the table".into()));
                }
                if b.center(&o).distance(&spot) > 1e-9 {
                    // Coming from a pour: travel over, then lower.
                    let grip = Contact::Grip(o.clone());
                    let here = b.center(&o);
                    let top = here.y.min(spot.y - LIFT);
                    b.carry(
                        &[
                            Point2::new(here.x, top).add(&grip_vec),
                            Point2::new(spot.x, top).add(&grip_vec),
                            spot.add(&grip_vec),
                        ],
                        &grip,
                    );
                }
                b.idle(SET_DOWN_FRAMES);
                b.held = None;
                let first = b.frames();
                b.move_to(rest, RETREAT_SPEED, &Contact::None);
                let start = (first..b.frames())
                    .find(|&f| b.hand_distance(f, &o) > th.th_d)
                    .ok_or_else(|| unrealizable(&label, "hand never leaves th_d".into()))?;
                pending_place_labels.push((start, o.clone()));
                pick_label = None;
            }
            Step::Touch { frames, .. } => {
                if b.held.is_some() {
                    return Err(unrealizable(&label, "hand is holding an object".into()));
                }
                let c = b.center(&o);
                let dir = unit(b.cur_hand.sub(&c));
                b.move_to(c.add(&dir.scale(2.0 * th.th_d)), APPROACH_SPEED, &Contact::None);
                b.set_hand(c.add(&dir.scale(th.th_d / 4.0)));
                for _ in 0..*frames {
                    b.push(Contact::None);
                }
                b.set_hand(c.add(&dir.scale(2.0 * th.th_d)));
                b.push(Contact::None);
                b.move_to(rest, RETREAT_SPEED, &Contact::None);
            }
        }
    }
    b.idle(th_n + 5 + rng.random_range(0..=3));

    let n = b.frames();
    for (start, o) in pending_place_labels {
        let mut end = start;
        while end + 1 < n && b.hand_distance(end + 1, &o) > th.th_d {
            end += 1;
        }
        labels.push(ActionInstance::new("Place", binding(&o), start as u64, end as u64));
    }
    // A pour followed by a place of the same object, with no other pour of
    // that object between them, composes into one watering action.
    for &pi in &pour_labels {
        let pour = labels[pi].clone();
        let a = pour.bindings.active.clone();
        let next_place = labels
            .iter()
            .filter(|l| l.action == "Place" && l.bindings.active == a && l.start >= pour.end)
            .min_by_key(|l| l.start)
            .cloned();
        let Some(place) = next_place else { continue };
        let interleaved = pour_labels
            .iter()
            .any(|&q| q != pi && labels[q].bindings.active == a && labels[q].start > pour.end && labels[q].end <= place.start);
        if interleaved {
            continue;
        }
        labels.push(
            ActionInstance::new("wateringPlant", pour.bindings.clone(), pour.start, place.end)
                .with_children(vec![pour, place]),
        );
    }
    labels.sort_by(|a, b| (a.start, a.end, &a.action, &a.bindings).cmp(&(b.start, b.end, &b.action, &b.bindings)));

    for o in &objects {
        let last_pose = *b.poses[&o.class].last().expect("at least one frame");
        let held_at_end = b.held.as_ref().is_some_and(|h| h.0 == o.class);
        if held_at_end {
            goal.off_table.insert(o.class.clone());
        } else if table.x_t < last_pose.center.x
            && last_pose.center.x < table.x_b
            && table.y_t < last_pose.center.y
            && last_pose.center.y < table.y_b
        {
            goal.on_table.insert(o.class.clone());
        }
    }

    Ok(Scenario {
        name: template.name.clone(),
        activity: template.activity.clone(),
        seed,
        image_size: image,
        table,
        thresholds: th,
        hand: template.hand,
        skip_table_check: template.skip_table_check,
        objects,
        hand_waypoints: b.hand,
        contact: b.contact,
        object_paths: b.poses,
        labels,
        goal,
    })
}

/// Tilt frames: whole down-and-up cycles of six, at least `th_n + 1`.
fn tilt_frames(th_n: usize) -> usize {
    (th_n + 1).div_ceil(6).max(1) * 6
}
