//! Abstract robot command plans derived from timelines, and a symbolic
//! executor used to check them.

use crate::ontology::{Ontology, OntologyError};
use crate::recognizer::{ActionInstance, Timeline};
use crate::scene::SceneState;
use crate::trace::{centroid, Point2};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verb {
    Grasp,
    MoveOver,
    PourInto,
    PlaceOnTable,
    Release,
}

impl Verb {
    pub fn arity(self) -> usize {
        match self {
            Verb::MoveOver | Verb::PourInto => 2,
            _ => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Grasp => "grasp",
            Verb::MoveOver => "move_over",
            Verb::PourInto => "pour_into",
            Verb::PlaceOnTable => "place_on_table",
            Verb::Release => "release",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Command {
    pub verb: Verb,
    pub args: Vec<String>,
    pub source_action: String,
    pub source_interval: [u64; 2],
    /// Where to put the object down: the table region centroid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Point2>,
    /// The object's initial position, for executors that restore placement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Point2>,
}

impl Command {
    fn new(verb: Verb, args: &[&str], source: &ActionInstance) -> Self {
        Command {
            verb,
            args: args.iter().map(|s| s.to_string()).collect(),
            source_action: source.action.clone(),
            source_interval: [source.start, source.end],
            target: None,
            origin: None,
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.verb, self.args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CommandPlan {
    pub source: String,
    pub commands: Vec<Command>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{verb}: object '{object}' lacks affordance '{affordance}' (from {action} at frames {start}-{end})")]
    AffordanceViolation { verb: Verb, object: String, affordance: String, action: String, start: u64, end: u64 },
    #[error("{verb}({object}) at frames {start}-{end} without a prior grasp")]
    DanglingManipulation { verb: Verb, object: String, start: u64, end: u64 },
    #[error("{action} at frames {start}-{end} has no {role} binding")]
    MissingBinding { action: String, role: &'static str, start: u64, end: u64 },
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

struct Planner<'o> {
    ontology: &'o Ontology,
    held: BTreeSet<String>,
    commands: Vec<Command>,
}

impl Planner<'_> {
    fn require(&self, verb: Verb, object: &str, affordance: &str, src: &ActionInstance) -> Result<(), PlanError> {
        if self.ontology.has_affordance(object, affordance)? {
            Ok(())
        } else {
            Err(PlanError::AffordanceViolation {
                verb,
                object: object.to_string(),
                affordance: affordance.to_string(),
                action: src.action.clone(),
                start: src.start,
                end: src.end,
            })
        }
    }

    fn holding(&self, verb: Verb, object: &str, src: &ActionInstance) -> Result<(), PlanError> {
        if self.held.contains(object) {
            Ok(())
        } else {
            Err(PlanError::DanglingManipulation { verb, object: object.to_string(), start: src.start, end: src.end })
        }
    }

    fn emit(&mut self, inst: &ActionInstance) -> Result<(), PlanError> {
        let binding = |role: &'static str, v: Option<&str>| -> Result<String, PlanError> {
            v.map(str::to_string).ok_or(PlanError::MissingBinding {
                action: inst.action.clone(),
                role,
                start: inst.start,
                end: inst.end,
            })
        };
        match inst.action.as_str() {
            "Pick" => {
                let o = binding("active", inst.bindings.active.as_deref())?;
                self.require(Verb::Grasp, &o, "pick", inst)?;
                if self.held.insert(o.clone()) {
                    self.commands.push(Command::new(Verb::Grasp, &[&o], inst));
                }
            }
            "Pour" => {
                let a = binding("active", inst.bindings.active.as_deref())?;
                let p = binding("passive", inst.bindings.passive.as_deref())?;
                self.require(Verb::MoveOver, &a, "pour", inst)?;
                self.require(Verb::PourInto, &p, "accept_pouring", inst)?;
                self.holding(Verb::MoveOver, &a, inst)?;
                self.commands.push(Command::new(Verb::MoveOver, &[&a, &p], inst));
                self.commands.push(Command::new(Verb::PourInto, &[&a, &p], inst));
            }
            "Place" => {
                let o = binding("active", inst.bindings.active.as_deref())?;
                self.require(Verb::PlaceOnTable, &o, "place", inst)?;
                self.holding(Verb::PlaceOnTable, &o, inst)?;
                self.held.remove(&o);
                self.commands.push(Command::new(Verb::PlaceOnTable, &[&o], inst));
            }
            _ => {}
        }
        Ok(())
    }
}

fn collect<'t>(inst: &'t ActionInstance, out: &mut Vec<&'t ActionInstance>) {
    if !out.iter().any(|o| o.same_occurrence(inst)) {
        out.push(inst);
    }
    for c in &inst.children {
        collect(c, out);
    }
}

/// Expands a timeline into commands. Instances run in start order with
/// children before their parent; an instance reached both directly and as a
/// child emits once. Objects still held at the end are released.
pub fn plan(timeline: &Timeline, ontology: &Ontology) -> Result<CommandPlan, PlanError> {
    let mut all = Vec::new();
    for inst in &timeline.instances {
        collect(inst, &mut all);
    }
    all.sort_by_key(|i| (i.start, i.end));

    let mut p = Planner { ontology, held: BTreeSet::new(), commands: Vec::new() };
    let mut done = vec![false; all.len()];
    fn visit(
        k: usize,
        all: &[&ActionInstance],
        done: &mut [bool],
        p: &mut Planner<'_>,
    ) -> Result<(), PlanError> {
        if done[k] {
            return Ok(());
        }
        done[k] = true;
        for c in &all[k].children {
            let ck = all.iter().position(|o| o.same_occurrence(c)).expect("collected");
            visit(ck, all, done, p)?;
        }
        p.emit(all[k])
    }
    for k in 0..all.len() {
        visit(k, &all, &mut done, &mut p)?;
    }

    let still_held: Vec<String> = p.held.iter().cloned().collect();
    for o in still_held {
        let last = p
            .commands
            .iter()
            .rev()
            .find(|c| c.args.first() == Some(&o))
            .expect("held objects were grasped")
            .clone();
        p.commands.push(Command {
            verb: Verb::Release,
            args: vec![o],
            source_action: last.source_action,
            source_interval: last.source_interval,
            target: None,
            origin: None,
        });
    }
    Ok(CommandPlan { source: timeline.trace.clone(), commands: p.commands })
}

/// Like [`plan`], with placement target (table centroid) and the object's
/// initial position attached to every `place_on_table`.
pub fn plan_with_scene(timeline: &Timeline, ontology: &Ontology, scene: &SceneState) -> Result<CommandPlan, PlanError> {
    let mut out = plan(timeline, ontology)?;
    let table = centroid(&scene.table);
    for c in &mut out.commands {
        if c.verb == Verb::PlaceOnTable {
            c.target = Some(table);
            c.origin = scene.initial_centroids.get(&c.args[0]).copied();
        }
    }
    Ok(out)
}

// --- plan files -------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PlanFileError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing plan header line")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanHeader {
    source: String,
}

pub fn write_plan<W: Write>(p: &CommandPlan, mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &PlanHeader { source: p.source.clone() })?;
    out.write_all(b"\n")?;
    for c in &p.commands {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_plan(p: &CommandPlan) -> String {
    let mut buf = Vec::new();
    write_plan(p, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn parse_plan<R: BufRead>(source: R) -> Result<CommandPlan, PlanFileError> {
    let mut plan: Option<CommandPlan> = None;
    for (n, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| PlanFileError::Malformed { line: n + 1, message: e.to_string() };
        match plan.as_mut() {
            None => {
                let h: PlanHeader = serde_json::from_str(&line).map_err(|e| {
                    if line.contains("\"verb\"") {
                        PlanFileError::MissingHeader
                    } else {
                        malformed(e)
                    }
                })?;
                plan = Some(CommandPlan { source: h.source, commands: Vec::new() });
            }
            Some(p) => {
                let c: Command = serde_json::from_str(&line).map_err(malformed)?;
                if c.args.len() != c.verb.arity() {
                    return Err(PlanFileError::Malformed {
                        line: n + 1,
                        message: format!("{} takes {} argument(s)", c.verb, c.verb.arity()),
                    });
                }
                p.commands.push(c);
            }
        }
    }
    plan.ok_or(PlanFileError::MissingHeader)
}

pub fn parse_plan_str(source: &str) -> Result<CommandPlan, PlanFileError> {
    parse_plan(source.as_bytes())
}

// --- symbolic execution -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    OnTable,
    Held,
    /// Let go somewhere other than the table.
    Released,
}

/// Symbolic world: one gripper, object locations and container contents.
/// Every active object starts filled with `<class>_contents`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct World {
    pub held: Option<String>,
    pub locations: BTreeMap<String, Location>,
    pub over: BTreeMap<String, String>,
    pub contents: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalState {
    #[serde(default)]
    pub on_table: BTreeSet<String>,
    #[serde(default)]
    pub off_table: BTreeSet<String>,
    /// Container class -> content tokens it must hold.
    #[serde(default)]
    pub contains: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("command {step} {command}: {reason}")]
    Precondition { step: usize, command: String, reason: String },
}

pub fn contents_token(class: &str) -> String {
    format!("{class}_contents")
}

impl World {
    /// All objects on the table; active ones filled.
    pub fn initial<'a>(objects: impl IntoIterator<Item = (&'a str, bool)>) -> World {
        let mut w = World::default();
        for (class, active) in objects {
            w.locations.insert(class.to_string(), Location::OnTable);
            let mut c = BTreeSet::new();
            if active {
                c.insert(contents_token(class));
            }
            w.contents.insert(class.to_string(), c);
        }
        w
    }

    pub fn apply(&mut self, step: usize, c: &Command) -> Result<(), ExecError> {
        let fail = |reason: String| ExecError::Precondition { step, command: c.to_string(), reason };
        if c.args.len() != c.verb.arity() {
            return Err(fail(format!("expected {} argument(s)", c.verb.arity())));
        }
        for a in &c.args {
            if !self.locations.contains_key(a) {
                return Err(fail(format!("no object '{a}' in the world")));
            }
        }
        let o = c.args[0].clone();
        let holding = |w: &World| w.held.as_deref() == Some(o.as_str());
        match c.verb {
            Verb::Grasp => {
                if let Some(h) = &self.held {
                    return Err(fail(format!("already holding '{h}'")));
                }
                self.held = Some(o.clone());
                self.locations.insert(o, Location::Held);
            }
            Verb::MoveOver => {
                if !holding(self) {
                    return Err(fail(format!("'{o}' is not held")));
                }
                self.over.insert(o, c.args[1].clone());
            }
            Verb::PourInto => {
                let p = &c.args[1];
                if !holding(self) {
                    return Err(fail(format!("'{o}' is not held")));
                }
                if self.over.get(&o) != Some(p) {
                    return Err(fail(format!("'{o}' is not over '{p}'")));
                }
                let poured = std::mem::take(self.contents.get_mut(&o).expect("known object"));
                self.contents.get_mut(p).expect("known object").extend(poured);
            }
            Verb::PlaceOnTable | Verb::Release => {
                if !holding(self) {
                    return Err(fail(format!("'{o}' is not held")));
                }
                self.held = None;
                self.over.remove(&o);
                let loc = if c.verb == Verb::PlaceOnTable { Location::OnTable } else { Location::Released };
                self.locations.insert(o, loc);
            }
        }
        Ok(())
    }

    pub fn satisfies(&self, goal: &GoalState) -> bool {
        goal.on_table.iter().all(|o| self.locations.get(o) == Some(&Location::OnTable))
            && goal
                .off_table
                .iter()
                .all(|o| matches!(self.locations.get(o), Some(Location::Held | Location::Released)))
            && goal
                .contains
                .iter()
                .all(|(p, want)| self.contents.get(p).is_some_and(|have| want.is_subset(have)))
    }
}

/// Runs `plan` from `initial` and returns the final world.
pub fn simulate(plan: &CommandPlan, initial: World) -> Result<World, ExecError> {
    let mut w = initial;
    for (step, c) in plan.commands.iter().enumerate() {
        w.apply(step, c)?;
    }
    Ok(w)
}

/// Runs `plan` from the scenario's initial placement.
pub fn simulate_plan(plan: &CommandPlan, scenario: &crate::synthgen::Scenario) -> Result<World, ExecError> {
    simulate(plan, scenario.initial_world())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{Binding, Thresholds};
    use crate::trace::{HandSide, ImageSize};

    fn timeline(instances: Vec<ActionInstance>) -> Timeline {
        let mut t = Timeline::new("t", Thresholds::for_image(ImageSize::new(640, 480)));
        t.instances = instances;
        t
    }

    fn cup_r() -> Binding {
        Binding::active("cup").with_hand(HandSide::Right)
    }

    fn pick_pour_place(passive: &str) -> Timeline {
        let pick = ActionInstance::new("Pick", cup_r(), 10, 45);
        let pour = ActionInstance::new("Pour", cup_r().with_passive(passive), 10, 70).with_children(vec![pick.clone()]);
        let place = ActionInstance::new("Place", cup_r(), 75, 90);
        timeline(vec![pick, pour, place])
    }

    fn verbs(p: &CommandPlan) -> Vec<String> {
        p.commands.iter().map(|c| c.to_string()).collect()
    }

    #[test]
    fn expands_pick_pour_place() {
        let p = plan(&pick_pour_place("bowl"), &Ontology::builtin()).unwrap();
        assert_eq!(verbs(&p), vec!["grasp(cup)", "move_over(cup, bowl)", "pour_into(cup, bowl)", "place_on_table(cup)"]);
        assert_eq!(p.commands[1].source_interval, [10, 70]);
    }

    #[test]
    fn empty_timeline_gives_empty_plan() {
        assert!(plan(&timeline(vec![]), &Ontology::builtin()).unwrap().commands.is_empty());
    }

    #[test]
    fn pour_into_non_container_rejected() {
        let err = plan(&pick_pour_place("mug"), &Ontology::builtin()).unwrap_err();
        assert!(matches!(err, PlanError::AffordanceViolation { verb: Verb::MoveOver, ref object, .. } if object == "mug")
            || matches!(err, PlanError::AffordanceViolation { verb: Verb::PourInto, ref object, ref affordance, .. } if object == "mug" && affordance == "accept_pouring"), "{err}");
    }

    #[test]
    fn place_without_grasp_is_dangling() {
        let t = timeline(vec![ActionInstance::new("Place", cup_r(), 5, 9)]);
        assert!(matches!(plan(&t, &Ontology::builtin()), Err(PlanError::DanglingManipulation { .. })));
    }

    #[test]
    fn held_object_is_released() {
        let sp = Binding::active("spaghetti").with_hand(HandSide::Right);
        let pick = ActionInstance::new("Pick", sp.clone(), 10, 30);
        let pour = ActionInstance::new("Pour", sp.with_passive("pot"), 10, 50).with_children(vec![pick.clone()]);
        let p = plan(&timeline(vec![pick, pour]), &Ontology::builtin()).unwrap();
        assert_eq!(verbs(&p).last().unwrap(), "release(spaghetti)");
    }

    #[test]
    fn simulate_reaches_containment() {
        let p = plan(&pick_pour_place("bowl"), &Ontology::builtin()).unwrap();
        let w = simulate(&p, World::initial([("cup", true), ("bowl", false)])).unwrap();
        assert!(w.contents["bowl"].contains("cup_contents"));
        assert_eq!(w.locations["cup"], Location::OnTable);
        assert_eq!(w.held, None);
    }

    #[test]
    fn simulate_preconditions() {
        let init = World::initial([("cup", true), ("bowl", false)]);
        let src = ActionInstance::new("Place", cup_r(), 0, 0);
        let place = CommandPlan { source: "x".into(), commands: vec![Command::new(Verb::PlaceOnTable, &["cup"], &src)] };
        assert!(matches!(simulate(&place, init.clone()), Err(ExecError::Precondition { step: 0, .. })));
        let pour = CommandPlan {
            source: "x".into(),
            commands: vec![Command::new(Verb::Grasp, &["cup"], &src), Command::new(Verb::PourInto, &["cup", "bowl"], &src)],
        };
        assert!(matches!(simulate(&pour, init.clone()), Err(ExecError::Precondition { step: 1, .. })));
        let empty = CommandPlan::default();
        assert_eq!(simulate(&empty, init.clone()).unwrap(), init);
    }

    #[test]
    fn plan_file_round_trip() {
        let o = Ontology::builtin();
        let mut p = plan(&pick_pour_place("bowl"), &o).unwrap();
        p.commands[3].target = Some(Point2::new(320.0, 340.0));
        p.commands[3].origin = Some(Point2::new(120.0, 280.0));
        let text = serialize_plan(&p);
        assert_eq!(parse_plan_str(&text).unwrap(), p);
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"verb":"grasp","args":["cup"],"source_action":"Pick","source_interval":[10,45]}"#));
    }
}
