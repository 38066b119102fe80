//! Evaluation of recognized timelines against ground-truth labels.
//!
//! Three success-rate tables are produced: per activity and action, per
//! active object and action, and per active object and per-frame
//! constraint. A ground-truth instance counts as recognized when a predicted
//! instance of the same action and bindings overlaps it with temporal IoU at
//! or above `min_overlap` (pairs are matched one-to-one, best overlap first).
//! A constraint counts as satisfied for a ground-truth instance when it is
//! true on at least one frame of the labeled interval.

use crate::constraints::{ConstraintId, EvalContext, ThresholdError, ThresholdOverrides};
use crate::ontology::Ontology;
use crate::recognizer::dsl::{ActionDefinition, HoldCount};
use crate::recognizer::{
    match_actions_with, parse_timeline, ActionInstance, MatchError, MatchOptions, Timeline, TimelineError,
};
use crate::scene::{analyze_initial, SceneError};
use crate::synthgen::{load_manifest, SynthError};
use crate::trace::{parse_trace, Trace, TraceError};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("{id}: {source}")]
    Trace { id: String, source: TraceError },
    #[error("{id}: labels: {source}")]
    Labels { id: String, source: TimelineError },
    #[error("{id}: {source}")]
    Scene { id: String, source: SceneError },
    #[error("{id}: {source}")]
    Match { id: String, source: MatchError },
    #[error("{id}: {source}")]
    Thresholds { id: String, source: ThresholdError },
    #[error(transparent)]
    Manifest(#[from] SynthError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One labeled trace.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub id: String,
    pub activity: String,
    pub trace: Trace,
    pub labels: Timeline,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub min_overlap: f64,
    pub init_window: usize,
    pub lenient_scene: bool,
    /// Applied on top of the thresholds stored with each label file.
    pub overrides: ThresholdOverrides,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            min_overlap: 0.5,
            init_window: crate::scene::DEFAULT_INIT_WINDOW,
            lenient_scene: false,
            overrides: ThresholdOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Cell {
    pub successes: usize,
    pub total: usize,
}

impl Cell {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.successes += usize::from(ok);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub name: &'static str,
    pub title: &'static str,
    pub row_label: &'static str,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: BTreeMap<(String, String), Cell>,
}

impl RateTable {
    fn new(name: &'static str, title: &'static str, row_label: &'static str, columns: Vec<String>) -> Self {
        RateTable { name, title, row_label, rows: Vec::new(), columns, cells: BTreeMap::new() }
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<Cell> {
        self.cells.get(&(row.to_string(), column.to_string())).copied()
    }

    fn add(&mut self, row: &str, column: &str, ok: bool) {
        self.cells.entry((row.to_string(), column.to_string())).or_default().add(ok);
    }

    fn finish(&mut self) {
        let rows: BTreeSet<String> = self.cells.keys().map(|(r, _)| r.clone()).collect();
        self.rows = rows.into_iter().collect();
    }

    /// Every populated cell with its rate.
    pub fn rates(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.cells.iter().filter_map(|((r, c), cell)| cell.rate().map(|x| (r.as_str(), c.as_str(), x)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub activities: RateTable,
    pub objects: RateTable,
    pub constraints: RateTable,
    pub ground_truth: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl Report {
    pub fn precision(&self) -> f64 {
        if self.predicted == 0 {
            1.0
        } else {
            self.matched as f64 / self.predicted as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.ground_truth == 0 {
            1.0
        } else {
            self.matched as f64 / self.ground_truth as f64
        }
    }

    pub fn tables(&self) -> [&RateTable; 3] {
        [&self.activities, &self.objects, &self.constraints]
    }
}

/// Greedy one-to-one pairing of ground truth and predictions with equal
/// action and bindings, best overlap first. Returns (gt, prediction) index
/// pairs.
pub fn match_instances(
    truth: &[ActionInstance],
    predicted: &[ActionInstance],
    min_overlap: f64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (g, gt) in truth.iter().enumerate() {
        for (p, pr) in predicted.iter().enumerate() {
            if gt.action == pr.action && gt.bindings == pr.bindings {
                let iou = gt.temporal_iou(pr);
                if iou >= min_overlap {
                    pairs.push((iou, g, p));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let (mut used_g, mut used_p) = (vec![false; truth.len()], vec![false; predicted.len()]);
    let mut out = Vec::new();
    for (_, g, p) in pairs {
        if !used_g[g] && !used_p[p] {
            used_g[g] = true;
            used_p[p] = true;
            out.push((g, p));
        }
    }
    out.sort_unstable();
    out
}

/// Per-frame constraints an action's phases expect to see true, with holds
/// on C5/C6 also expecting their windowed forms C7/C8.
pub fn expected_constraints(def: &ActionDefinition) -> BTreeSet<ConstraintId> {
    let mut out = BTreeSet::new();
    for phase in &def.phases {
        for lit in phase.literals.iter().filter(|l| !l.negated) {
            out.insert(lit.atom.constraint);
            if let Some(h) = lit.hold {
                if h != HoldCount::Frames(1) {
                    match lit.atom.constraint {
                        ConstraintId::C5 => {
                            out.insert(ConstraintId::C7);
                        }
                        ConstraintId::C6 => {
                            out.insert(ConstraintId::C8);
                        }
                        _ => {}
                    }
                }
            }
        }
    }
    out
}

struct ItemResult {
    activity: String,
    /// (action, active object, recognized) per ground-truth instance.
    outcomes: Vec<(String, String, bool)>,
    /// (active object, constraint, satisfied) per expected check.
    checks: Vec<(String, ConstraintId, bool)>,
    predicted: usize,
}

fn evaluate_item(
    item: &CorpusItem,
    ontology: &Ontology,
    defs: &[ActionDefinition],
    options: &ReportOptions,
) -> Result<(ItemResult, Timeline), ReportError> {
    let id = || item.id.clone();
    let th = options
        .overrides
        .apply(item.labels.thresholds)
        .map_err(|source| ReportError::Thresholds { id: id(), source })?;
    let scene = analyze_initial(&item.trace, ontology, options.init_window)
        .map_err(|source| ReportError::Scene { id: id(), source })?;
    let opts = MatchOptions { lenient_scene: options.lenient_scene };
    let mut timeline = match_actions_with(&item.trace, &scene, ontology, &th, defs, opts)
        .map_err(|source| ReportError::Match { id: id(), source })?;
    timeline.trace = item.id.clone();

    let truth = &item.labels.instances;
    let pairs = match_instances(truth, &timeline.instances, options.min_overlap);
    let hit: BTreeSet<usize> = pairs.iter().map(|&(g, _)| g).collect();
    let outcomes = truth
        .iter()
        .enumerate()
        .map(|(g, gt)| (gt.action.clone(), gt.bindings.active.clone().unwrap_or_default(), hit.contains(&g)))
        .collect();

    let mut checks = Vec::new();
    let mut scene = scene;
    scene.check_trace(&item.trace, ontology, true).map_err(|source| ReportError::Scene { id: id(), source })?;
    let ctx = EvalContext::advanced(&item.trace, &scene, ontology, th);
    let position: BTreeMap<u64, usize> = item.trace.frames.iter().enumerate().map(|(i, f)| (f.index, i)).collect();
    for gt in truth {
        let Some(def) = defs.iter().find(|d| d.name == gt.action) else { continue };
        let (Some(&from), Some(&to)) = (position.get(&gt.start), position.get(&gt.end)) else { continue };
        let object = gt.bindings.active.clone().unwrap_or_default();
        for c in expected_constraints(def) {
            let mut ok = false;
            for i in from..=to {
                if ctx.eval(c, &gt.bindings, i).unwrap_or(false) {
                    ok = true;
                    break;
                }
            }
            checks.push((object.clone(), c, ok));
        }
    }
    Ok((ItemResult { activity: item.activity.clone(), outcomes, checks, predicted: timeline.instances.len() }, timeline))
}

/// Recognizes every item (in parallel) and aggregates the three tables.
/// Also returns the predicted timeline of each item.
pub fn evaluate_corpus(
    items: &[CorpusItem],
    ontology: &Ontology,
    defs: &[ActionDefinition],
    options: &ReportOptions,
) -> Result<(Report, Vec<Timeline>), ReportError> {
    if items.is_empty() {
        return Err(ReportError::EmptyCorpus);
    }
    let results: Vec<(ItemResult, Timeline)> =
        items.par_iter().map(|it| evaluate_item(it, ontology, defs, options)).collect::<Result<_, _>>()?;

    let mut actions: Vec<String> = defs.iter().map(|d| d.name.clone()).collect();
    actions.sort();
    let per_frame: Vec<String> =
        ConstraintId::ALL.iter().filter(|c| !c.is_static()).map(|c| c.to_string()).collect();
    let mut activities = RateTable::new("activity", "Success rate per activity and action", "activity", actions.clone());
    let mut objects = RateTable::new("object", "Success rate per active object and action", "object", actions);
    let mut constraints =
        RateTable::new("constraint", "Success rate per active object and constraint", "object", per_frame);
    let (mut ground_truth, mut predicted, mut matched) = (0, 0, 0);
    for (r, _) in &results {
        for (action, object, ok) in &r.outcomes {
            activities.add(&r.activity, action, *ok);
            objects.add(object, action, *ok);
            ground_truth += 1;
            matched += usize::from(*ok);
        }
        for (object, c, ok) in &r.checks {
            constraints.add(object, &c.to_string(), *ok);
        }
        predicted += r.predicted;
    }
    for t in [&mut activities, &mut objects, &mut constraints] {
        t.finish();
    }
    let report = Report { activities, objects, constraints, ground_truth, predicted, matched };
    Ok((report, results.into_iter().map(|(_, t)| t).collect()))
}

/// Reads a generated corpus: manifest, traces and label files.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>, ReportError> {
    let manifest = load_manifest(dir)?;
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let open = |name: &str| {
                let path = dir.join(name);
                File::open(&path)
                    .map(BufReader::new)
                    .map_err(|source| ReportError::Io { path: path.display().to_string(), source })
            };
            let trace = parse_trace(open(&e.trace)?).map_err(|source| ReportError::Trace { id: e.id.clone(), source })?;
            let labels =
                parse_timeline(open(&e.labels)?).map_err(|source| ReportError::Labels { id: e.id.clone(), source })?;
            Ok(CorpusItem { id: e.id.clone(), activity: e.activity.clone(), trace, labels })
        })
        .collect()
}

fn format_rate(cell: Option<Cell>) -> String {
    match cell.and_then(|c| c.rate()) {
        Some(r) => format!("{r:.2}"),
        None => "---".to_string(),
    }
}

/// Fixed-width text rendering of the three tables and a summary line.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    for table in report.tables() {
        let first = table.rows.iter().map(|r| r.chars().count()).chain([table.row_label.len()]).max().unwrap_or(0);
        let widths: Vec<usize> = table.columns.iter().map(|c| c.chars().count().max(4)).collect();
        writeln!(out, "{}", table.title).ok();
        write!(out, "{:<first$}", table.row_label).ok();
        for (c, w) in table.columns.iter().zip(&widths) {
            write!(out, "  {c:>w$}").ok();
        }
        out.push('\n');
        for row in &table.rows {
            write!(out, "{row:<first$}").ok();
            for (c, w) in table.columns.iter().zip(&widths) {
                write!(out, "  {:>w$}", format_rate(table.cell(row, c))).ok();
            }
            out.push('\n');
        }
        out.push('\n');
    }
    writeln!(
        out,
        "instances: {} labeled, {} recognized, {} matched; precision {:.3}, recall {:.3}",
        report.ground_truth,
        report.predicted,
        report.matched,
        report.precision(),
        report.recall()
    )
    .ok();
    out
}

/// Long-format CSV: one line per populated cell.
pub fn render_csv(report: &Report) -> String {
    let mut out = String::from("table,row,column,successes,total,rate\n");
    for table in report.tables() {
        for row in &table.rows {
            for col in &table.columns {
                if let Some(cell) = table.cell(row, col) {
                    let rate = cell.rate().map(|r| format!("{r:.4}")).unwrap_or_default();
                    writeln!(out, "{},{row},{col},{},{},{rate}", table.name, cell.successes, cell.total).ok();
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::Binding;
    use crate::recognizer::builtin_actions;

    fn inst(action: &str, active: &str, s: u64, e: u64) -> ActionInstance {
        ActionInstance::new(action, Binding::active(active), s, e)
    }

    #[test]
    fn one_to_one_matching() {
        let truth = vec![inst("Pick", "cup", 10, 20), inst("Pick", "cup", 40, 50)];
        let pred = vec![inst("Pick", "cup", 11, 21), inst("Pick", "mug", 40, 50), inst("Place", "cup", 40, 50)];
        assert_eq!(match_instances(&truth, &pred, 0.5), vec![(0, 0)]);
        let pred = vec![inst("Pick", "cup", 10, 50)];
        assert!(match_instances(&truth, &pred, 0.5).is_empty());
    }

    #[test]
    fn expected_constraint_sets() {
        let defs = builtin_actions(false);
        let get = |n: &str| expected_constraints(defs.iter().find(|d| d.name == n).unwrap());
        use ConstraintId::*;
        assert_eq!(get("Pick"), [C5, C7, C9].into());
        assert_eq!(get("Place"), [C6, C8, C11].into());
        assert_eq!(get("Pour"), [C9, C10, C12].into());
        assert!(get("wateringPlant").is_empty());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let r = evaluate_corpus(&[], &Ontology::builtin(), &builtin_actions(false), &ReportOptions::default());
        assert!(matches!(r, Err(ReportError::EmptyCorpus)));
    }

    #[test]
    fn cell_rates() {
        let mut c = Cell::default();
        assert_eq!(c.rate(), None);
        c.add(true);
        c.add(false);
        assert_eq!(c.rate(), Some(0.5));
    }
}
