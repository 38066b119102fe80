//! Shared helpers for integration tests: randomized traces and a
//! straight-line reimplementation of the per-frame constraints.
#![allow(dead_code)]

use mimic_core::constraints::{Binding, ColumnTolerance, ConstraintId, EvalContext, MotionMatch, Thresholds};
use mimic_core::ontology::Ontology;
use mimic_core::scene::analyze_initial;
use mimic_core::trace::{BBox, Detection, Frame, HandSide, ImageSize, Point2, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ACTIVES: [&str; 2] = ["cup", "mug"];
pub const PASSIVES: [&str; 2] = ["bowl", "plant"];
pub const AFFORDANCES: [&str; 4] = ["pick", "place", "pour", "accept_pouring"];
pub const INIT_WINDOW: usize = 3;

/// Written out by hand from the shipped ontology file.
fn manipulable(class: &str) -> bool {
    matches!(class, "cup" | "mug")
}

fn has_affordance(class: &str, a: &str) -> bool {
    match class {
        "cup" | "mug" => matches!(a, "pick" | "place" | "pour"),
        "bowl" | "plant" => a == "accept_pouring",
        _ => false,
    }
}

fn bbox(cx: f64, cy: f64, vx: f64, vy: f64) -> BBox {
    BBox::new(cx - vx / 2.0, cy - vy / 2.0, cx + vx / 2.0, cy + vy / 2.0).unwrap()
}

fn int(rng: &mut ChaCha8Rng, lo: i32, hi: i32) -> f64 {
    f64::from(rng.random_range(lo..=hi))
}

/// Integer-valued coordinates so that translation and power-of-two scaling
/// are exact in floating point.
pub fn random_thresholds(rng: &mut ChaCha8Rng) -> Thresholds {
    Thresholds {
        th_d: int(rng, 6, 60),
        th_n: rng.random_range(1..=6),
        sigma_pos: int(rng, 1, 6),
        eps_rot: rng.random_range(0.02..0.5),
        eps_col: if rng.random_bool(0.5) {
            ColumnTolerance::Pixels(int(rng, 2, 30))
        } else {
            ColumnTolerance::PassiveWidth(rng.random_range(0.1..0.6))
        },
        k_miss: rng.random_range(0..=3),
        c9_mode: if rng.random_bool(0.5) { MotionMatch::Magnitude } else { MotionMatch::Vector },
    }
}

/// A trace where hands hover around and sometimes carry the active objects,
/// objects occasionally tilt, and detections drop out after the init window.
pub fn random_trace(seed: u64, frames: usize) -> (Trace, Thresholds) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let th = random_thresholds(&mut rng);
    let table = BBox::new(int(&mut rng, 0, 80), int(&mut rng, 150, 250), int(&mut rng, 520, 640), int(&mut rng, 380, 480))
        .unwrap();
    let mut active: Vec<(f64, f64, f64, f64)> = ACTIVES
        .iter()
        .map(|_| (int(&mut rng, 60, 580), int(&mut rng, 60, 420), int(&mut rng, 20, 70), int(&mut rng, 20, 70)))
        .collect();
    let passive: Vec<(f64, f64, f64, f64)> = PASSIVES
        .iter()
        .map(|_| (int(&mut rng, 60, 580), int(&mut rng, 200, 440), int(&mut rng, 30, 90), int(&mut rng, 20, 60)))
        .collect();
    let reach = (th.th_d * 1.5) as i32;
    let mut offsets = [(0.0, 0.0); 2];
    let mut targets = [0usize, 1usize];
    let mut out = Vec::with_capacity(frames);
    for i in 0..frames {
        let mut f = Frame::new(i as u64);
        f.table = Some(table);
        for (h, side) in HandSide::BOTH.into_iter().enumerate() {
            if rng.random_bool(0.15) {
                offsets[h] = (int(&mut rng, -reach, reach), int(&mut rng, -reach, reach));
                targets[h] = rng.random_range(0..ACTIVES.len());
            }
            let carry = rng.random_bool(0.5);
            if carry && h == 1 {
                let (dx, dy) = (int(&mut rng, -12, 12), int(&mut rng, -12, 12));
                let o = &mut active[targets[h]];
                o.0 = (o.0 + dx).clamp(20.0, 620.0);
                o.1 = (o.1 + dy).clamp(20.0, 460.0);
            }
            let o = active[targets[h]];
            let jitter = (int(&mut rng, -2, 2), int(&mut rng, -2, 2));
            let p = Point2::new(o.0 + offsets[h].0 + jitter.0, o.1 + offsets[h].1 + jitter.1);
            if i < INIT_WINDOW || !rng.random_bool(0.1) {
                f.hands.set(side, Some(p));
            }
        }
        for (k, class) in ACTIVES.iter().enumerate() {
            let o = &mut active[k];
            if rng.random_bool(0.05) {
                let target = passive[rng.random_range(0..PASSIVES.len())];
                o.0 = target.0 + int(&mut rng, -10, 10);
                o.1 = (target.1 - int(&mut rng, 30, 80)).max(20.0);
            }
            if rng.random_bool(0.1) {
                o.2 = int(&mut rng, 15, 80);
                o.3 = int(&mut rng, 15, 80);
            }
            if i < INIT_WINDOW || !rng.random_bool(0.12) {
                f.detections.push(Detection { class_name: class.to_string(), bbox: bbox(o.0, o.1, o.2, o.3), confidence: 1.0 });
            }
        }
        for (k, class) in PASSIVES.iter().enumerate() {
            let p = passive[k];
            if i < INIT_WINDOW || !rng.random_bool(0.2) {
                f.detections.push(Detection { class_name: class.to_string(), bbox: bbox(p.0, p.1, p.2, p.3), confidence: 1.0 });
            }
        }
        out.push(f);
    }
    (Trace { image_size: ImageSize::new(640, 480), frames: out }, th)
}

/// Every binding each constraint is checked under.
pub fn bindings(c: ConstraintId) -> Vec<Binding> {
    use ConstraintId::*;
    let mut out = Vec::new();
    match c {
        C1 | C10 | C11 => out.extend(ACTIVES.iter().map(|a| Binding::active(a))),
        C2 => out.extend(PASSIVES.iter().map(|p| Binding { passive: Some(p.to_string()), ..Default::default() })),
        C3 => {
            for a in ACTIVES {
                out.extend(AFFORDANCES.iter().map(|f| Binding::active(a).with_affordance(f)));
            }
        }
        C4 => {
            for p in PASSIVES {
                out.extend(AFFORDANCES.iter().map(|f| Binding {
                    passive: Some(p.to_string()),
                    affordance: Some(f.to_string()),
                    ..Default::default()
                }));
            }
        }
        C5 | C6 | C7 | C8 | C9 => {
            for a in ACTIVES {
                out.extend(HandSide::BOTH.map(|h| Binding::active(a).with_hand(h)));
            }
        }
        C12 => {
            for a in ACTIVES {
                out.extend(PASSIVES.iter().map(|p| Binding::active(a).with_passive(p)));
            }
        }
    }
    out
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

/// Brute-force evaluation straight from the raw frames. Returns the value
/// and whether it was computed from a coasted (recently missing) operand.
pub struct Oracle<'a> {
    pub trace: &'a Trace,
    pub th: Thresholds,
}

impl Oracle<'_> {
    fn object_at(&self, class: &str, i: usize) -> Option<(BBox, bool)> {
        for back in 0..=self.th.k_miss as usize {
            if back > i {
                break;
            }
            if let Some(d) = self.trace.frames[i - back].detections.iter().find(|d| d.class_name == class) {
                return Some((d.bbox, back > 0));
            }
        }
        None
    }

    fn hand_at(&self, side: HandSide, i: usize) -> Option<(Point2, bool)> {
        for back in 0..=self.th.k_miss as usize {
            if back > i {
                break;
            }
            if let Some(p) = self.trace.frames[i - back].hands.get(side) {
                return Some((p, back > 0));
            }
        }
        None
    }

    fn center(b: &BBox) -> Point2 {
        Point2::new((b.x_t + b.x_b) / 2.0, (b.y_t + b.y_b) / 2.0)
    }

    fn diag_angle(b: &BBox) -> f64 {
        (b.y_b - b.y_t).atan2(b.x_b - b.x_t)
    }

    fn dist(&self, class: &str, side: HandSide, i: usize, near: bool) -> (bool, bool) {
        let (Some((o, oc)), Some((h, hc))) = (self.object_at(class, i), self.hand_at(side, i)) else {
            return (false, false);
        };
        let c = Self::center(&o);
        let d = ((c.x - h.x).powi(2) + (c.y - h.y).powi(2)).sqrt();
        (if near { d < self.th.th_d } else { d > self.th.th_d }, oc || hc)
    }

    fn run(&self, class: &str, side: HandSide, i: usize, near: bool) -> u32 {
        let mut n = 0;
        for j in 0..=i {
            n = match self.dist(class, side, j, near) {
                (_, true) => n,
                (true, false) => n + 1,
                (false, false) => 0,
            };
        }
        n
    }

    fn passive_box(&self, class: &str, i: usize) -> BBox {
        match self.trace.frames[i].detections.iter().find(|d| d.class_name == class) {
            Some(d) => d.bbox,
            // Passives are static and always seen during the init window.
            None => self.trace.frames[0].detections.iter().find(|d| d.class_name == class).unwrap().bbox,
        }
    }

    pub fn eval(&self, c: ConstraintId, b: &Binding, i: usize) -> (bool, bool) {
        use ConstraintId::*;
        let a = b.active.as_deref().unwrap_or("");
        let p = b.passive.as_deref().unwrap_or("");
        let h = b.hand.unwrap_or(HandSide::Right);
        let aff = b.affordance.as_deref().unwrap_or("");
        match c {
            C1 => (manipulable(a), false),
            C2 => (!manipulable(p), false),
            C3 => (has_affordance(a, aff), false),
            C4 => (has_affordance(p, aff), false),
            C5 => self.dist(a, h, i, true),
            C6 => self.dist(a, h, i, false),
            C7 => (self.run(a, h, i, true) >= self.th.th_n, false),
            C8 => (self.run(a, h, i, false) >= self.th.th_n, false),
            C9 => {
                if i == 0 {
                    return (false, false);
                }
                let (Some((o0, c0)), Some((o1, c1)), Some((h0, c2)), Some((h1, c3))) =
                    (self.object_at(a, i - 1), self.object_at(a, i), self.hand_at(h, i - 1), self.hand_at(h, i))
                else {
                    return (false, false);
                };
                let (p0, p1) = (Self::center(&o0), Self::center(&o1));
                let (ox, oy) = (p1.x - p0.x, p1.y - p0.y);
                let (hx, hy) = (h1.x - h0.x, h1.y - h0.y);
                let mo = (ox * ox + oy * oy).sqrt();
                let mh = (hx * hx + hy * hy).sqrt();
                let s = self.th.sigma_pos;
                let agree = match self.th.c9_mode {
                    MotionMatch::Magnitude => (mo - mh).abs() <= s,
                    MotionMatch::Vector => ((ox - hx).powi(2) + (oy - hy).powi(2)).sqrt() <= s,
                };
                (agree && mo > s && mh > s, c0 || c1 || c2 || c3)
            }
            C10 => {
                let Some((cur, cc)) = self.object_at(a, i) else {
                    return (false, false);
                };
                let (prev, pc) = if i == 0 {
                    let boxes: Vec<BBox> = (0..INIT_WINDOW)
                        .map(|j| self.trace.frames[j].detections.iter().find(|d| d.class_name == a).unwrap().bbox)
                        .collect();
                    let vx = median3([0, 1, 2].map(|k| boxes[k].x_b - boxes[k].x_t));
                    let vy = median3([0, 1, 2].map(|k| boxes[k].y_b - boxes[k].y_t));
                    (vy.atan2(vx), false)
                } else {
                    match self.object_at(a, i - 1) {
                        Some((pb, pc)) => (Self::diag_angle(&pb), pc),
                        None => return (false, false),
                    }
                };
                ((Self::diag_angle(&cur) - prev).abs() > self.th.eps_rot, cc || pc)
            }
            C11 => {
                let Some((o, oc)) = self.object_at(a, i) else {
                    return (false, false);
                };
                let t = self.trace.frames[0].table.unwrap();
                let q = Self::center(&o);
                (t.x_t < q.x && q.x < t.x_b && t.y_t < q.y && q.y < t.y_b, oc)
            }
            C12 => {
                let Some((o, oc)) = self.object_at(a, i) else {
                    return (false, false);
                };
                let pb = self.passive_box(p, i);
                let (qa, qp) = (Self::center(&o), Self::center(&pb));
                let tol = match self.th.eps_col {
                    ColumnTolerance::Pixels(px) => px,
                    ColumnTolerance::PassiveWidth(f) => f * (pb.x_b - pb.x_t),
                };
                ((qa.x - qp.x).abs() <= tol && qa.y < qp.y, oc)
            }
        }
    }
}

/// Compares the engine with the oracle on every frame, constraint and
/// binding. Returns (checks, mismatch descriptions).
pub fn compare_with_oracle(trace: &Trace, th: Thresholds) -> (usize, Vec<String>) {
    let ontology = Ontology::builtin();
    let scene = analyze_initial(trace, &ontology, INIT_WINDOW).unwrap();
    let ctx = EvalContext::advanced(trace, &scene, &ontology, th);
    let oracle = Oracle { trace, th };
    let mut checks = 0;
    let mut mismatches = Vec::new();
    for i in 0..trace.len() {
        for c in ConstraintId::ALL {
            for b in bindings(c) {
                let got = ctx.evaluate(c, &b, i).unwrap();
                let want = oracle.eval(c, &b, i);
                checks += 1;
                if (got.value, got.coasted) != want {
                    mismatches.push(format!("frame {i} {c} {b}: engine {:?}, oracle {want:?}", (got.value, got.coasted)));
                }
            }
        }
    }
    (checks, mismatches)
}

/// 1,000 frames: ten randomized traces of 100 frames each.
pub fn oracle_suite(seed: u64) -> (usize, usize, Vec<String>) {
    let (mut frames, mut checks, mut bad) = (0, 0, Vec::new());
    for k in 0..10 {
        let (trace, th) = random_trace(seed.wrapping_add(k), 100);
        frames += trace.len();
        let (n, m) = compare_with_oracle(&trace, th);
        checks += n;
        bad.extend(m);
    }
    (frames, checks, bad)
}
