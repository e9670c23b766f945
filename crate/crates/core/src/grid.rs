//! Detector-output grids, context records and the encoder-input builder.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GRID: usize = 13;
pub const DEFAULT_FRAME_DIM: usize = 256;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// The eight detector categories, in channel order.
pub const DEFAULT_CLASSES: [&str; 8] = ["car", "pedestrian", "van", "truck", "bicycle", "motorbike", "trailer", "bus"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocabulary(pub Vec<String>);

impl Default for ClassVocabulary {
    fn default() -> Self {
        ClassVocabulary(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect())
    }
}

impl ClassVocabulary {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|c| c == name)
    }

    pub fn name(&self, i: usize) -> &str {
        &self.0[i]
    }
}

/// `S x S x C` per-cell class scores, row-major with the class axis contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionGrid {
    s: usize,
    c: usize,
    cells: Vec<f32>,
}

impl DetectionGrid {
    pub fn empty(s: usize, c: usize) -> Self {
        DetectionGrid { s, c, cells: vec![0.0; s * s * c] }
    }

    pub fn from_values(s: usize, c: usize, cells: Vec<f32>) -> Result<Self> {
        if cells.len() != s * s * c {
            return Err(Error::Shape(alloc::format!("grid {s}x{s}x{c} needs {} values, got {}", s * s * c, cells.len())));
        }
        if let Some(v) = cells.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(alloc::format!("grid value {v} outside [0, 1]")));
        }
        Ok(DetectionGrid { s, c, cells })
    }

    pub fn size(&self) -> usize {
        self.s
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn values(&self) -> &[f32] {
        &self.cells
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize, class: usize) -> usize {
        (row * self.s + col) * self.c + class
    }

    pub fn get(&self, row: usize, col: usize, class: usize) -> f32 {
        self.cells[self.offset(row, col, class)]
    }

    pub fn set(&mut self, row: usize, col: usize, class: usize, v: f32) -> Result<()> {
        if row >= self.s || col >= self.s || class >= self.c {
            return Err(Error::Data(alloc::format!("cell ({row}, {col}, {class}) outside {}x{}x{}", self.s, self.s, self.c)));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(alloc::format!("grid value {v} outside [0, 1]")));
        }
        let o = self.offset(row, col, class);
        self.cells[o] = v;
        Ok(())
    }

    /// Nonzero entries as `(row, col, class, value)`, in memory order.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, usize, f32)> + '_ {
        let (s, c) = (self.s, self.c);
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(move |(i, &v)| (i / (s * c), (i / c) % s, i % c, v))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextRecord {
    /// Seconds since midnight, in `[0, 86400)`.
    pub time_of_day: f64,
    pub latitude: f64,
    pub longitude: f64,
    pub frame_activation: Vec<f32>,
}

impl ContextRecord {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..SECONDS_PER_DAY).contains(&self.time_of_day) {
            return Err(Error::Data(alloc::format!("time_of_day {} outside [0, 86400)", self.time_of_day)));
        }
        if !(-90.0..=90.0).contains(&self.latitude) || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Data(alloc::format!("bad coordinate ({}, {})", self.latitude, self.longitude)));
        }
        if self.frame_activation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite frame activation".into()));
        }
        Ok(())
    }
}

/// One grid channel: `(row, col, class)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub row: u16,
    pub col: u16,
    pub class: u16,
}

impl CellRef {
    pub fn new(row: usize, col: usize, class: usize) -> Self {
        CellRef { row: row as u16, col: col as u16, class: class as u16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub monitoring_point_id: String,
    /// Camera heading in degrees; selects the rotated background layout.
    pub heading: u16,
    pub grid: DetectionGrid,
    pub context: ContextRecord,
    pub ground_truth: Option<Vec<CellRef>>,
}

impl Sample {
    pub fn validate(&self, frame_dim: usize) -> Result<()> {
        self.context.validate()?;
        if self.context.frame_activation.len() != frame_dim {
            return Err(Error::Shape(alloc::format!(
                "frame activation has {} values, expected {frame_dim}",
                self.context.frame_activation.len()
            )));
        }
        if let Some(gt) = &self.ground_truth {
            let (s, c) = (self.grid.size(), self.grid.classes());
            if let Some(g) = gt.iter().find(|g| g.row as usize >= s || g.col as usize >= s || g.class as usize >= c) {
                return Err(Error::Data(alloc::format!("ground truth {g:?} outside the grid")));
            }
        }
        Ok(())
    }
}

/// A single post-NMS detector box. Offsets are in cell units relative to the cell origin.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDetection {
    pub row: usize,
    pub col: usize,
    pub objectness: f32,
    pub class_probabilities: Vec<f32>,
    pub dx: f32,
    pub dy: f32,
    pub width: f32,
    pub height: f32,
}

impl RawDetection {
    pub fn class(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.class_probabilities.iter().enumerate() {
            if p > self.class_probabilities[best] {
                best = i;
            }
        }
        best
    }

    /// Box as `(x0, y0, x1, y1)` in grid units.
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        let cx = self.col as f32 + self.dx;
        let cy = self.row as f32 + self.dy;
        (cx - self.width / 2.0, cy - self.height / 2.0, cx + self.width / 2.0, cy + self.height / 2.0)
    }
}

pub fn iou(a: &RawDetection, b: &RawDetection) -> f32 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.width * a.height + b.width * b.height - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy per-class suppression by descending objectness.
pub fn nms(detections: &[RawDetection], iou_threshold: f32) -> Vec<RawDetection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| detections[j].objectness.total_cmp(&detections[i].objectness).then(i.cmp(&j)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept
            .iter()
            .any(|&k| detections[k].class() == d.class() && iou(&detections[k], d) >= iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| detections[i].clone()).collect()
}

/// Writes `objectness * p(class)` into each detection's cell, keeping the maximum per channel.
/// Box offsets are dropped.
pub fn build_encoder_input(detections: &[RawDetection], s: usize, c: usize) -> Result<DetectionGrid> {
    let mut grid = DetectionGrid::empty(s, c);
    for d in detections {
        if d.row >= s || d.col >= s {
            return Err(Error::Data(alloc::format!("detection cell ({}, {}) outside {s}x{s} grid", d.row, d.col)));
        }
        if d.class_probabilities.len() != c {
            return Err(Error::Data(alloc::format!(
                "detection has {} class probabilities, vocabulary has {c}",
                d.class_probabilities.len()
            )));
        }
        if !(0.0..=1.0).contains(&d.objectness) || d.class_probabilities.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data("detection scores outside [0, 1]".into()));
        }
        for (k, &p) in d.class_probabilities.iter().enumerate() {
            let o = grid.offset(d.row, d.col, k);
            grid.cells[o] = grid.cells[o].max(d.objectness * p);
        }
    }
    Ok(grid)
}
