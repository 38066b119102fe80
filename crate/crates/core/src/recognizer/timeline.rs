//! Recognized action instances and their line-delimited file format.

use crate::constraints::{Binding, Thresholds};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionInstance {
    pub action: String,
    pub bindings: Binding,
    /// First frame label of the instance.
    pub start: u64,
    /// Last frame label of the instance (inclusive).
    pub end: u64,
    #[serde(default)]
    pub children: Vec<ActionInstance>,
}

impl ActionInstance {
    pub fn new(action: &str, bindings: Binding, start: u64, end: u64) -> Self {
        ActionInstance { action: action.to_string(), bindings, start, end, children: Vec::new() }
    }

    pub fn with_children(mut self, children: Vec<ActionInstance>) -> Self {
        self.children = children;
        self
    }

    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Overlap length over union length of the two closed intervals.
    pub fn temporal_iou(&self, other: &ActionInstance) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if hi < lo {
            return 0.0;
        }
        let inter = (hi - lo + 1) as f64;
        let union = (self.len() + other.len()) as f64 - inter;
        inter / union
    }

    /// Same action, bindings and interval; children are not compared.
    pub fn same_occurrence(&self, other: &ActionInstance) -> bool {
        self.action == other.action
            && self.bindings == other.bindings
            && self.start == other.start
            && self.end == other.end
    }

    /// Shifts this instance and all of its children by `offset` frames.
    pub fn shifted(&self, offset: i64) -> ActionInstance {
        let shift = |v: u64| (v as i64 + offset) as u64;
        ActionInstance {
            action: self.action.clone(),
            bindings: self.bindings.clone(),
            start: shift(self.start),
            end: shift(self.end),
            children: self.children.iter().map(|c| c.shifted(offset)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub trace: String,
    pub thresholds: Thresholds,
    pub instances: Vec<ActionInstance>,
}

impl Timeline {
    pub fn new(trace: &str, thresholds: Thresholds) -> Self {
        Timeline { trace: trace.to_string(), thresholds, instances: Vec::new() }
    }

    pub fn of_action<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a ActionInstance> {
        self.instances.iter().filter(move |i| i.action == action)
    }

    /// Orders instances by start, end, action name and bindings.
    pub fn sort(&mut self) {
        self.instances.sort_by(|a, b| {
            (a.start, a.end, &a.action, &a.bindings).cmp(&(b.start, b.end, &b.action, &b.bindings))
        });
    }
}

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("missing timeline header line")]
    MissingHeader,
    #[error("line {line}: instance start {start} is after end {end}")]
    Interval { line: usize, start: u64, end: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    trace: String,
    thresholds: Thresholds,
}

fn check_intervals(inst: &ActionInstance, line: usize) -> Result<(), TimelineError> {
    if inst.start > inst.end {
        return Err(TimelineError::Interval { line, start: inst.start, end: inst.end });
    }
    inst.children.iter().try_for_each(|c| check_intervals(c, line))
}

pub fn parse_timeline<R: BufRead>(source: R) -> Result<Timeline, TimelineError> {
    let mut timeline: Option<Timeline> = None;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| TimelineError::Malformed { line: line_no, message: e.to_string() };
        match timeline.as_mut() {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(|e| {
                    if line.contains("\"action\"") {
                        TimelineError::MissingHeader
                    } else {
                        malformed(e)
                    }
                })?;
                timeline = Some(Timeline::new(&h.trace, h.thresholds));
            }
            Some(t) => {
                let inst: ActionInstance = serde_json::from_str(&line).map_err(malformed)?;
                check_intervals(&inst, line_no)?;
                t.instances.push(inst);
            }
        }
    }
    timeline.ok_or(TimelineError::MissingHeader)
}

pub fn parse_timeline_str(source: &str) -> Result<Timeline, TimelineError> {
    parse_timeline(source.as_bytes())
}

pub fn write_timeline<W: Write>(t: &Timeline, mut out: W) -> std::io::Result<()> {
    let header = Header { trace: t.trace.clone(), thresholds: t.thresholds };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for inst in &t.instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_timeline(t: &Timeline) -> String {
    let mut buf = Vec::new();
    write_timeline(t, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{HandSide, ImageSize};

    fn sample() -> Timeline {
        let mut t = Timeline::new("0001", Thresholds::for_image(ImageSize::new(640, 480)));
        let pick = ActionInstance::new("Pick", Binding::active("cup").with_hand(HandSide::Right), 10, 45);
        let pour = ActionInstance::new(
            "Pour",
            Binding::active("cup").with_hand(HandSide::Right).with_passive("bowl"),
            10,
            70,
        )
        .with_children(vec![pick.clone()]);
        t.instances = vec![pick, pour];
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let text = serialize_timeline(&t);
        assert_eq!(parse_timeline_str(&text).unwrap(), t);
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"action":"Pick","bindings":{"active":"cup","hand":"right"},"start":10,"end":45"#));
    }

    #[test]
    fn rejects_bad_records() {
        let text = serialize_timeline(&sample());
        let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_timeline_str(&body), Err(TimelineError::MissingHeader)));
        assert!(matches!(parse_timeline_str(""), Err(TimelineError::MissingHeader)));
        let header = text.lines().next().unwrap();
        let inverted = format!("{header}\n{{\"action\":\"Pick\",\"bindings\":{{}},\"start\":5,\"end\":4}}\n");
        assert!(matches!(parse_timeline_str(&inverted), Err(TimelineError::Interval { line: 2, .. })));
    }

    #[test]
    fn iou() {
        let b = Binding::default();
        let a = ActionInstance::new("A", b.clone(), 0, 9);
        assert_eq!(a.temporal_iou(&ActionInstance::new("A", b.clone(), 5, 14)), 5.0 / 15.0);
        assert_eq!(a.temporal_iou(&a), 1.0);
        assert_eq!(a.temporal_iou(&ActionInstance::new("A", b, 10, 12)), 0.0);
    }
}
