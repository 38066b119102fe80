//! Observation traces: synchronized hand keypoints and object detections.
//!
//! A trace file is UTF-8, one JSON record per line. The first non-blank line
//! is a header carrying `image_size`; every following line is one frame:
//!
//! ```text
//! {"image_size":[640,480]}
//! {"frame":0,"t":0.0,"hands":{"right":[512.0,440.0]},"objects":[{"class":"cup","bbox":[100.0,200.0,140.0,260.0]}],"table":[40.0,180.0,600.0,470.0]}
//! ```
//!
//! Image coordinates: origin top-left, `y` grows downward.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: frame index {index} does not follow {previous}")]
    NonMonotoneIndex { line: usize, index: u64, previous: u64 },
    #[error("line {line}: timestamp {t} precedes {previous}")]
    NonMonotoneTimestamp { line: usize, t: f64, previous: f64 },
    #[error("trace has frames but no header line with image_size")]
    MissingHeader,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Pixel position in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn sub(&self, other: &Point2) -> Point2 {
        Point2::new(self.x - other.x, self.y - other.y)
    }

    pub fn add(&self, other: &Point2) -> Point2 {
        Point2::new(self.x + other.x, self.y + other.y)
    }

    pub fn scale(&self, k: f64) -> Point2 {
        Point2::new(self.x * k, self.y * k)
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }
}

impl Serialize for Point2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Point2 { x, y })
    }
}

/// Axis-aligned box from its top-left (`x_t`, `y_t`) and bottom-right
/// (`x_b`, `y_b`) pixel corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_t: f64,
    pub y_t: f64,
    pub x_b: f64,
    pub y_b: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid bbox [{x_t}, {y_t}, {x_b}, {y_b}]: {reason}")]
pub struct BBoxError {
    pub x_t: f64,
    pub y_t: f64,
    pub x_b: f64,
    pub y_b: f64,
    pub reason: &'static str,
}

impl BBox {
    pub fn new(x_t: f64, y_t: f64, x_b: f64, y_b: f64) -> Result<Self, BBoxError> {
        let err = |reason| BBoxError { x_t, y_t, x_b, y_b, reason };
        if ![x_t, y_t, x_b, y_b].iter().all(|v| v.is_finite()) {
            return Err(err("non-finite coordinate"));
        }
        if x_t > x_b {
            return Err(err("x_t > x_b"));
        }
        if y_t > y_b {
            return Err(err("y_t > y_b"));
        }
        Ok(Self { x_t, y_t, x_b, y_b })
    }

    /// Box centred on `c` whose diagonal vector is `v` (both components >= 0).
    pub fn from_center_diagonal(c: Point2, v: Point2) -> Result<Self, BBoxError> {
        let hx = v.x / 2.0;
        let hy = v.y / 2.0;
        BBox::new(c.x - hx, c.y - hy, c.x + hx, c.y + hy)
    }

    pub fn top_left(&self) -> Point2 {
        Point2::new(self.x_t, self.y_t)
    }

    pub fn bottom_right(&self) -> Point2 {
        Point2::new(self.x_b, self.y_b)
    }

    pub fn width(&self) -> f64 {
        self.x_b - self.x_t
    }

    pub fn height(&self) -> f64 {
        self.y_b - self.y_t
    }

    pub fn translate(&self, d: Point2) -> BBox {
        BBox {
            x_t: self.x_t + d.x,
            y_t: self.y_t + d.y,
            x_b: self.x_b + d.x,
            y_b: self.y_b + d.y,
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_t >= 0.0 && self.y_t >= 0.0 && self.x_b <= width && self.y_b <= height
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.x_t, self.y_t, self.x_b, self.y_b].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x_t, y_t, x_b, y_b] = <[f64; 4]>::deserialize(d)?;
        BBox::new(x_t, y_t, x_b, y_b).map_err(serde::de::Error::custom)
    }
}

/// Estimated centroid of a detection: the box midpoint.
pub fn centroid(b: &BBox) -> Point2 {
    Point2::new((b.x_t + b.x_b) / 2.0, (b.y_t + b.y_b) / 2.0)
}

/// Local-changes vector: bottom-right corner minus top-left corner.
pub fn local_changes(b: &BBox) -> Point2 {
    Point2::new(b.x_b - b.x_t, b.y_b - b.y_t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_name: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandSide {
    Left,
    Right,
}

impl HandSide {
    pub const BOTH: [HandSide; 2] = [HandSide::Left, HandSide::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            HandSide::Left => "left",
            HandSide::Right => "right",
        }
    }
}

impl fmt::Display for HandSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Wrist positions. Either hand may be missing in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Point2>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Point2>,
}

impl HandSet {
    pub fn get(&self, side: HandSide) -> Option<Point2> {
        match side {
            HandSide::Left => self.left,
            HandSide::Right => self.right,
        }
    }

    pub fn set(&mut self, side: HandSide, p: Option<Point2>) {
        match side {
            HandSide::Left => self.left = p,
            HandSide::Right => self.right = p,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub timestamp: Option<f64>,
    pub hands: HandSet,
    pub detections: Vec<Detection>,
    pub table: Option<BBox>,
}

impl Frame {
    pub fn new(index: u64) -> Self {
        Self {
            index,
            timestamp: None,
            hands: HandSet::default(),
            detections: Vec::new(),
            table: None,
        }
    }

    /// Best detection of `class` in this frame: highest confidence, first on ties.
    pub fn detection(&self, class: &str) -> Option<&Detection> {
        let mut best: Option<&Detection> = None;
        for d in self.detections.iter().filter(|d| d.class_name == class) {
            if best.is_none_or(|b| d.confidence > b.confidence) {
                best = Some(d);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn diagonal(&self) -> f64 {
        (f64::from(self.width).powi(2) + f64::from(self.height).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub image_size: ImageSize,
    pub frames: Vec<Frame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsWarning {
    pub frame: u64,
    pub class_name: String,
    pub bbox: BBox,
}

impl fmt::Display for BoundsWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frame {}: {} bbox [{}, {}, {}, {}] lies outside the image",
            self.frame, self.class_name, self.bbox.x_t, self.bbox.y_t, self.bbox.x_b, self.bbox.y_b
        )
    }
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Detections reaching outside the image. Not an error: detectors do this.
    pub fn lint(&self) -> Vec<BoundsWarning> {
        let w = f64::from(self.image_size.width);
        let h = f64::from(self.image_size.height);
        self.frames
            .iter()
            .flat_map(|f| {
                f.detections
                    .iter()
                    .filter(|d| !d.bbox.within(w, h))
                    .map(move |d| BoundsWarning {
                        frame: f.index,
                        class_name: d.class_name.clone(),
                        bbox: d.bbox,
                    })
            })
            .collect()
    }

    /// Sorted, de-duplicated set of detected class names.
    pub fn classes(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .frames
            .iter()
            .flat_map(|f| f.detections.iter().map(|d| d.class_name.clone()))
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

// --- wire records -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    image_size: [u32; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    class: String,
    bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conf: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(default, skip_serializing_if = "HandSet::is_empty")]
    hands: HandSet,
    #[serde(default)]
    objects: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<BBox>,
    // Full skeletons are accepted and dropped; only wrists are consumed.
    #[serde(default, skip_serializing)]
    #[allow(dead_code)]
    keypoints: Option<serde_json::Value>,
}

fn frame_from_record(rec: FrameRecord, line: usize) -> Result<Frame, TraceError> {
    let malformed = |message: String| TraceError::Malformed { line, message };
    if let Some(t) = rec.t {
        if !t.is_finite() {
            return Err(malformed("non-finite timestamp".into()));
        }
    }
    for (side, p) in [("left", rec.hands.left), ("right", rec.hands.right)] {
        if p.is_some_and(|p| !p.is_finite()) {
            return Err(malformed(format!("non-finite {side} hand")));
        }
    }
    let mut detections = Vec::with_capacity(rec.objects.len());
    for o in rec.objects {
        if o.class.is_empty() {
            return Err(malformed("empty object class".into()));
        }
        let confidence = o.conf.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(malformed(format!("confidence {confidence} outside [0, 1]")));
        }
        detections.push(Detection { class_name: o.class, bbox: o.bbox, confidence });
    }
    Ok(Frame {
        index: rec.frame,
        timestamp: rec.t,
        hands: rec.hands,
        detections,
        table: rec.table,
    })
}

fn record_from_frame(f: &Frame) -> FrameRecord {
    FrameRecord {
        frame: f.index,
        t: f.timestamp,
        hands: f.hands,
        objects: f
            .detections
            .iter()
            .map(|d| DetectionRecord {
                class: d.class_name.clone(),
                bbox: d.bbox,
                conf: (d.confidence != 1.0).then_some(d.confidence),
            })
            .collect(),
        table: f.table,
        keypoints: None,
    }
}

/// Parses a line-delimited trace. Blank lines are skipped; an input with no
/// records at all yields an empty trace.
pub fn parse_trace<R: BufRead>(source: R) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut have_header = false;
    let mut last_t: Option<f64> = None;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if !have_header {
            let header: HeaderRecord = serde_json::from_str(text).map_err(|e| {
                TraceError::Malformed { line: line_no, message: format!("bad header: {e}") }
            })?;
            trace.image_size = ImageSize::new(header.image_size[0], header.image_size[1]);
            have_header = true;
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(text)
            .map_err(|e| TraceError::Malformed { line: line_no, message: e.to_string() })?;
        let frame = frame_from_record(rec, line_no)?;
        if let Some(prev) = trace.frames.last() {
            if frame.index <= prev.index {
                return Err(TraceError::NonMonotoneIndex {
                    line: line_no,
                    index: frame.index,
                    previous: prev.index,
                });
            }
        }
        if let Some(t) = frame.timestamp {
            if let Some(prev) = last_t {
                if t < prev {
                    return Err(TraceError::NonMonotoneTimestamp { line: line_no, t, previous: prev });
                }
            }
            last_t = Some(t);
        }
        trace.frames.push(frame);
    }
    Ok(trace)
}

pub fn parse_trace_str(source: &str) -> Result<Trace, TraceError> {
    parse_trace(source.as_bytes())
}

pub fn write_trace<W: Write>(t: &Trace, mut out: W) -> std::io::Result<()> {
    let header = HeaderRecord { image_size: [t.image_size.width, t.image_size.height] };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in &t.frames {
        serde_json::to_writer(&mut out, &record_from_frame(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_trace(t: &Trace) -> String {
    let mut buf = Vec::new();
    write_trace(t, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(a: f64, b: f64, c: f64, d: f64) -> BBox {
        BBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(centroid(&bb(10.0, 20.0, 50.0, 100.0)), Point2::new(30.0, 60.0));
        assert_eq!(centroid(&bb(5.0, 5.0, 5.0, 5.0)), Point2::new(5.0, 5.0));
        assert_eq!(centroid(&bb(0.0, 0.0, 640.0, 480.0)), Point2::new(320.0, 240.0));
    }

    #[test]
    fn local_changes_examples() {
        assert_eq!(local_changes(&bb(10.0, 20.0, 50.0, 100.0)), Point2::new(40.0, 80.0));
        assert_eq!(local_changes(&bb(5.0, 5.0, 5.0, 5.0)), Point2::new(0.0, 0.0));
        assert_eq!(local_changes(&bb(0.0, 0.0, 640.0, 480.0)), Point2::new(640.0, 480.0));
    }

    #[test]
    fn parses_three_frames_in_order() {
        let src = r#"{"image_size":[640,480]}
{"frame":0,"hands":{"right":[1,2]},"objects":[{"class":"cup","bbox":[0,0,10,10]}]}
{"frame":1,"t":0.5,"objects":[]}
{"frame":4,"table":[0,200,640,480],"objects":[{"class":"bowl","bbox":[1,1,2,2],"conf":0.5}]}
"#;
        let t = parse_trace_str(src).unwrap();
        assert_eq!(t.frames.len(), 3);
        assert_eq!(t.frames.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 1, 4]);
        assert_eq!(t.frames[0].hands.right, Some(Point2::new(1.0, 2.0)));
        assert_eq!(t.frames[2].detections[0].confidence, 0.5);
        assert_eq!(t.frames[0].detections[0].confidence, 1.0);
    }

    #[test]
    fn inverted_bbox_reports_line() {
        let src = "{\"image_size\":[640,480]}\n{\"frame\":0,\"objects\":[]}\n{\"frame\":1,\"objects\":[{\"class\":\"cup\",\"bbox\":[50,0,10,10]}]}\n";
        match parse_trace_str(src) {
            Err(TraceError::Malformed { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("x_t > x_b"), "{message}");
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_monotone_index() {
        let src = "{\"image_size\":[10,10]}\n{\"frame\":3}\n{\"frame\":3}\n";
        assert!(matches!(
            parse_trace_str(src),
            Err(TraceError::NonMonotoneIndex { line: 3, index: 3, previous: 3 })
        ));
    }

    #[test]
    fn rejects_decreasing_timestamps() {
        let src = "{\"image_size\":[10,10]}\n{\"frame\":0,\"t\":1.0}\n{\"frame\":1,\"t\":0.5}\n";
        assert!(matches!(parse_trace_str(src), Err(TraceError::NonMonotoneTimestamp { .. })));
    }

    #[test]
    fn rejects_unknown_keys_and_accepts_keypoints() {
        let bad = "{\"image_size\":[10,10]}\n{\"frame\":0,\"speed\":1}\n";
        assert!(matches!(parse_trace_str(bad), Err(TraceError::Malformed { line: 2, .. })));
        let ok = "{\"image_size\":[10,10]}\n{\"frame\":0,\"keypoints\":[[1,2],[3,4]]}\n";
        assert_eq!(parse_trace_str(ok).unwrap().frames.len(), 1);
    }

    #[test]
    fn empty_stream_is_empty_trace() {
        let t = parse_trace_str("").unwrap();
        assert!(t.is_empty());
        assert_eq!(serialize_trace(&t), "{\"image_size\":[0,0]}\n");
    }

    #[test]
    fn lint_flags_out_of_bounds() {
        let mut t = Trace { image_size: ImageSize::new(100, 100), frames: vec![Frame::new(0)] };
        t.frames[0].detections.push(Detection {
            class_name: "cup".into(),
            bbox: bb(90.0, 90.0, 120.0, 95.0),
            confidence: 1.0,
        });
        assert_eq!(t.lint().len(), 1);
    }

    #[test]
    fn best_detection_prefers_confidence() {
        let mut f = Frame::new(0);
        for (c, conf) in [("cup", 0.4), ("cup", 0.9), ("cup", 0.9)] {
            f.detections.push(Detection {
                class_name: c.into(),
                bbox: bb(conf, 0.0, 1.0, 1.0),
                confidence: conf,
            });
        }
        assert_eq!(f.detection("cup").unwrap().bbox.x_t, 0.9);
        assert!(f.detection("bowl").is_none());
    }
}
