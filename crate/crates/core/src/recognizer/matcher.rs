//! Per-binding phase machines over the constraint stream.
//!
//! Each candidate binding of a phased action runs a machine through the
//! frames. A phase completes once its conjunction has held for its duration;
//! unknown (coasted) frames freeze the count, false frames reset it. After a
//! later phase resets, the machine waits while the previous phase still holds
//! and returns to idle otherwise. Once the final phase completes the instance
//! stays open while that phase keeps holding and is emitted when it breaks
//! (or at the end of the trace). A new instance only starts after the first
//! phase has been observed false again, so one long contact yields one
//! instance.

use super::dsl::{validate_library, ActionDefinition, DslError, Literal, RoleKind, SubKind};
use super::timeline::{ActionInstance, Timeline};
use super::bind_hand;
use crate::constraints::{Binding, EvalContext, EvalError, Thresholds, Truth};
use crate::ontology::Ontology;
use crate::scene::{ObjectRole, SceneError, SceneState};
use crate::trace::{centroid, HandSide, Trace};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("trace has no frames")]
    EmptyTrace,
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("action '{action}' uses affordance '{affordance}' which the ontology does not declare")]
    UnknownAffordance { action: String, affordance: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchOptions {
    /// Admit classes first seen after the initialization window.
    pub lenient_scene: bool,
}

/// A matched instance with trace positions (not frame labels).
#[derive(Debug, Clone)]
struct Found {
    inst: ActionInstance,
    start: usize,
    end: usize,
    completed: usize,
}

struct Matcher<'c, 'a> {
    ctx: &'c EvalContext<'a>,
    trace: &'a Trace,
    found: BTreeMap<String, Vec<Found>>,
    /// (consumer action, sub clause index, consumed instance index).
    consumed: HashSet<(usize, usize, usize)>,
}

pub fn match_actions(
    trace: &Trace,
    scene: &SceneState,
    ontology: &Ontology,
    thresholds: &Thresholds,
    definitions: &[ActionDefinition],
) -> Result<Timeline, MatchError> {
    match_actions_with(trace, scene, ontology, thresholds, definitions, MatchOptions::default())
}

pub fn match_actions_with(
    trace: &Trace,
    scene: &SceneState,
    ontology: &Ontology,
    thresholds: &Thresholds,
    definitions: &[ActionDefinition],
    options: MatchOptions,
) -> Result<Timeline, MatchError> {
    if trace.is_empty() {
        return Err(MatchError::EmptyTrace);
    }
    let order = validate_library(definitions)?;
    for def in definitions {
        for a in def.affordances() {
            if ontology.affordance(a).is_err() {
                return Err(MatchError::UnknownAffordance { action: def.name.clone(), affordance: a.to_string() });
            }
        }
    }
    let mut scene = scene.clone();
    scene.check_trace(trace, ontology, options.lenient_scene)?;
    let ctx = EvalContext::advanced(trace, &scene, ontology, *thresholds);

    let mut m = Matcher { ctx: &ctx, trace, found: BTreeMap::new(), consumed: HashSet::new() };
    for &di in &order {
        let def = &definitions[di];
        let mut list = Vec::new();
        for binding in m.candidates(def)? {
            if def.is_composite() {
                list.extend(m.compose(di, def, &binding));
            } else {
                list.extend(m.run_phases(di, def, &binding)?);
            }
        }
        if def.role_of_kind(RoleKind::Hand).is_some() {
            list = m.resolve_hands(list);
        }
        list.sort_by(|a, b| (a.start, a.end, &a.inst.bindings).cmp(&(b.start, b.end, &b.inst.bindings)));
        m.found.insert(def.name.clone(), list);
    }

    let mut timeline = Timeline::new("", *thresholds);
    timeline.instances = m.found.into_values().flatten().map(|f| f.inst).collect();
    timeline.sort();
    Ok(timeline)
}

/// Binding restricted to the slots of the given role kinds.
fn project(b: &Binding, kinds: impl Iterator<Item = RoleKind>) -> Binding {
    let mut out = Binding::default();
    for k in kinds {
        match k {
            RoleKind::Active => out.active = b.active.clone(),
            RoleKind::Passive => out.passive = b.passive.clone(),
            RoleKind::Hand => out.hand = b.hand,
        }
    }
    out
}

fn sub_kinds<'d>(def: &'d ActionDefinition, roles: &'d [String]) -> impl Iterator<Item = RoleKind> + 'd {
    roles.iter().map(move |r| def.role(r).expect("validated").kind)
}

impl Matcher<'_, '_> {
    /// Cartesian product of scene objects and hands over the action's roles,
    /// filtered by its static constraints.
    fn candidates(&self, def: &ActionDefinition) -> Result<Vec<Binding>, MatchError> {
        let scene = self.ctx.scene();
        let mut out = vec![Binding::default()];
        for role in &def.roles {
            let mut next = Vec::new();
            for b in &out {
                match role.kind {
                    RoleKind::Active => {
                        for c in scene.classes_with(ObjectRole::Active) {
                            next.push(Binding { active: Some(c.to_string()), ..b.clone() });
                        }
                    }
                    RoleKind::Passive => {
                        for c in scene.classes_with(ObjectRole::Passive) {
                            next.push(Binding { passive: Some(c.to_string()), ..b.clone() });
                        }
                    }
                    RoleKind::Hand => {
                        for h in HandSide::BOTH {
                            next.push(Binding { hand: Some(h), ..b.clone() });
                        }
                    }
                }
            }
            out = next;
        }
        let mut kept = Vec::new();
        'bindings: for b in out {
            for atom in &def.static_constraints {
                let mut with = b.clone();
                with.affordance = atom.affordance.clone();
                if !self.ctx.eval(atom.constraint, &with, 0)? {
                    continue 'bindings;
                }
            }
            kept.push(b);
        }
        Ok(kept)
    }

    fn literal_truth(&self, lit: &Literal, b: &Binding, i: usize) -> Result<Truth, EvalError> {
        let t = self.ctx.truth(lit.atom.constraint, b, i)?;
        Ok(if lit.negated { !t } else { t })
    }

    /// Sub-action instances matching the projected binding that this action
    /// has not yet consumed, as indices into `found[sub]`.
    fn eligible(&self, di: usize, def: &ActionDefinition, b: &Binding, clause: usize, before: usize) -> Vec<usize> {
        let sub = &def.sub_actions[clause];
        let want = project(b, sub_kinds(def, &sub.roles));
        let Some(list) = self.found.get(&sub.action) else {
            return Vec::new();
        };
        list.iter()
            .enumerate()
            .filter(|(k, f)| {
                let done = match sub.kind {
                    SubKind::After => f.end,
                    SubKind::Includes => f.completed,
                };
                f.inst.bindings == want && done < before && !self.consumed.contains(&(di, clause, *k))
            })
            .map(|(k, _)| k)
            .collect()
    }

    fn subs_available(&self, di: usize, def: &ActionDefinition, b: &Binding, start: usize) -> bool {
        (0..def.sub_actions.len()).all(|c| !self.eligible(di, def, b, c, start).is_empty())
    }

    fn emit(&mut self, di: usize, def: &ActionDefinition, b: &Binding, start: usize, completed: usize, end: usize) -> Found {
        let mut children = Vec::new();
        let mut first = start;
        for clause in 0..def.sub_actions.len() {
            let list = &self.found[&def.sub_actions[clause].action];
            let pick = self
                .eligible(di, def, b, clause, start)
                .into_iter()
                .max_by_key(|&k| (list[k].completed, list[k].end, list[k].start))
                .expect("availability checked at phase start");
            self.consumed.insert((di, clause, pick));
            if def.sub_actions[clause].kind == SubKind::Includes {
                let child = &self.found[&def.sub_actions[clause].action][pick];
                first = first.min(child.start);
                children.push(child.inst.clone());
            }
        }
        let frames = &self.trace.frames;
        let inst = ActionInstance::new(&def.name, b.clone(), frames[first].index, frames[end].index)
            .with_children(children);
        Found { inst, start: first, end, completed }
    }

    #[allow(clippy::needless_range_loop)]
    fn run_phases(&mut self, di: usize, def: &ActionDefinition, b: &Binding) -> Result<Vec<Found>, MatchError> {
        enum St {
            Idle { armed: bool },
            Phase { k: usize, count: u32, start: usize },
            Open { start: usize, completed: usize, end: usize },
        }
        let n = self.trace.len();
        let th_n = self.ctx.thresholds().th_n;
        let last = def.phases.len() - 1;
        let durations: Vec<u32> = def.phases.iter().map(|p| p.duration(th_n)).collect();
        let mut truth = vec![vec![Truth::True; n]; def.phases.len()];
        for (k, phase) in def.phases.iter().enumerate() {
            for (i, slot) in truth[k].iter_mut().enumerate() {
                for lit in &phase.literals {
                    *slot = slot.and(self.literal_truth(lit, b, i)?);
                }
            }
        }

        let mut out = Vec::new();
        let mut st = St::Idle { armed: true };
        for i in 0..n {
            st = match st {
                St::Idle { armed: false } => St::Idle { armed: truth[0][i] == Truth::False },
                St::Idle { armed: true } => {
                    if truth[0][i] == Truth::True && self.subs_available(di, def, b, i) {
                        if durations[0] <= 1 {
                            if last == 0 {
                                St::Open { start: i, completed: i, end: i }
                            } else {
                                St::Phase { k: 1, count: 0, start: i }
                            }
                        } else {
                            St::Phase { k: 0, count: 1, start: i }
                        }
                    } else {
                        St::Idle { armed: true }
                    }
                }
                St::Phase { k, count, start } => match truth[k][i] {
                    Truth::True if count + 1 >= durations[k] => {
                        if k == last {
                            St::Open { start, completed: i, end: i }
                        } else {
                            St::Phase { k: k + 1, count: 0, start }
                        }
                    }
                    Truth::True => St::Phase { k, count: count + 1, start },
                    Truth::Unknown => St::Phase { k, count, start },
                    Truth::False if k == 0 => St::Idle { armed: true },
                    Truth::False => {
                        if truth[k - 1][i] == Truth::False {
                            St::Idle { armed: truth[0][i] == Truth::False }
                        } else {
                            St::Phase { k, count: 0, start }
                        }
                    }
                },
                St::Open { start, completed, end } => match truth[last][i] {
                    Truth::True => St::Open { start, completed, end: i },
                    Truth::Unknown => St::Open { start, completed, end },
                    Truth::False => {
                        out.push(self.emit(di, def, b, start, completed, end));
                        St::Idle { armed: truth[0][i] == Truth::False }
                    }
                },
            };
        }
        if let St::Open { start, completed, end } = st {
            out.push(self.emit(di, def, b, start, completed, end));
        }
        Ok(out)
    }

    /// Chains included actions in order: each starts at or after the previous
    /// one ends, with no other instance of the previous action in between.
    fn compose(&mut self, di: usize, def: &ActionDefinition, b: &Binding) -> Vec<Found> {
        let clauses: Vec<usize> =
            (0..def.sub_actions.len()).filter(|&c| def.sub_actions[c].kind == SubKind::Includes).collect();
        let lists: Vec<Vec<usize>> =
            clauses.iter().map(|&c| self.eligible(di, def, b, c, usize::MAX)).collect();
        let mut out = Vec::new();
        for &head in &lists[0] {
            if self.consumed.contains(&(di, clauses[0], head)) {
                continue;
            }
            let mut chain = vec![head];
            for (step, &clause) in clauses.iter().enumerate().skip(1) {
                let prev_clause = clauses[step - 1];
                let prev = &self.found[&def.sub_actions[prev_clause].action][*chain.last().expect("non-empty")];
                let cur_list = &self.found[&def.sub_actions[clause].action];
                let next = lists[step]
                    .iter()
                    .copied()
                    .filter(|&k| !self.consumed.contains(&(di, clause, k)) && cur_list[k].start >= prev.end)
                    .min_by_key(|&k| (cur_list[k].start, cur_list[k].end));
                let Some(next) = next else {
                    break;
                };
                let next_start = cur_list[next].start;
                let superseded = lists[step - 1].iter().any(|&k| {
                    let other = &self.found[&def.sub_actions[prev_clause].action][k];
                    other.start > prev.end && other.end <= next_start
                });
                if superseded {
                    break;
                }
                chain.push(next);
            }
            if chain.len() < clauses.len() {
                continue;
            }
            let mut children = Vec::new();
            for (&clause, &k) in clauses.iter().zip(&chain) {
                self.consumed.insert((di, clause, k));
                children.push(self.found[&def.sub_actions[clause].action][k].clone());
            }
            let (start, end) = (children[0].start, children.last().expect("non-empty").end);
            let frames = &self.trace.frames;
            let inst = ActionInstance::new(&def.name, b.clone(), frames[start].index, frames[end].index)
                .with_children(children.into_iter().map(|c| c.inst).collect());
            out.push(Found { inst, start, end, completed: end });
        }
        out
    }

    /// Among overlapping instances that differ only in the hand, keeps the one
    /// whose hand is closest to the active object where the earlier starts.
    fn resolve_hands(&self, list: Vec<Found>) -> Vec<Found> {
        let mut order: Vec<usize> = (0..list.len()).collect();
        order.sort_by_key(|&k| (list[k].start, list[k].end));
        let mut dropped = vec![false; list.len()];
        for (x, &a) in order.iter().enumerate() {
            for &c in &order[x + 1..] {
                if dropped[a] {
                    break;
                }
                if dropped[c] || list[c].start > list[a].end {
                    continue;
                }
                let (ba, bc) = (&list[a].inst.bindings, &list[c].inst.bindings);
                let same_objects = (&ba.active, &ba.passive, &ba.affordance) == (&bc.active, &bc.passive, &bc.affordance);
                if ba.hand == bc.hand || !same_objects {
                    continue;
                }
                let frame = &self.trace.frames[list[a].start];
                let class = ba.active.as_deref();
                let object = class.and_then(|cl| {
                    frame
                        .detection(cl)
                        .map(|d| centroid(&d.bbox))
                        .or_else(|| self.ctx.scene().initial_centroids.get(cl).copied())
                });
                let chosen = object.and_then(|p| bind_hand(&frame.hands, p)).or(ba.hand);
                if chosen == ba.hand {
                    dropped[c] = true;
                } else {
                    dropped[a] = true;
                }
            }
        }
        list.into_iter().zip(dropped).filter(|(_, d)| !d).map(|(f, _)| f).collect()
    }
}
