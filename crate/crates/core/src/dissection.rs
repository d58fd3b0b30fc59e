//! Concept alignment of convolutional units by intersection over union.
//!
//! A unit's spatial maps are pooled to pick one activation threshold, each
//! map is upsampled bilinearly (corner-aligned) to the concept mask
//! resolution and binarized against that threshold, and the IoU with every
//! concept is aggregated over the dataset as sum of intersections over sum
//! of unions. A unit is a detector for its best concept when that IoU
//! exceeds [`DETECTOR_IOU`].

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::store::{csv_records, load_grid_records, parse_field, GridRecord};

/// IoU strictly above this marks a detector.
pub const DETECTOR_IOU: f64 = 0.04;
pub const DEFAULT_TOP_FRACTION: f64 = 0.005;

pub fn is_detector(iou: f64) -> bool {
    iou > DETECTOR_IOU
}

/// Per-image activation maps of one unit, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMapStack {
    pub unit_id: usize,
    height: usize,
    width: usize,
    maps: Vec<f32>,
}

impl ActivationMapStack {
    pub fn new(unit_id: usize, height: usize, width: usize, maps: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || maps.is_empty() || !maps.len().is_multiple_of(height * width) {
            return Err(Error::Shape(format!(
                "{} values do not form {height}x{width} maps",
                maps.len()
            )));
        }
        if let Some(pos) = maps.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                unit: unit_id,
                image: pos / (height * width),
                value: maps[pos],
            });
        }
        Ok(Self {
            unit_id,
            height,
            width,
            maps,
        })
    }

    pub fn from_record(unit_id: usize, record: GridRecord) -> Result<Self> {
        Self::new(unit_id, record.height, record.width, record.values)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_images(&self) -> usize {
        self.maps.len() / (self.height * self.width)
    }

    pub fn map(&self, image: usize) -> &[f32] {
        let cells = self.height * self.width;
        &self.maps[image * cells..(image + 1) * cells]
    }
}

/// Binary per-image location masks for one concept.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptMaskSet {
    pub concept_id: u32,
    pub name: String,
    height: usize,
    width: usize,
    masks: Vec<bool>,
}

impl ConceptMaskSet {
    pub fn new(concept_id: u32, name: impl Into<String>, height: usize, width: usize, masks: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || masks.is_empty() || !masks.len().is_multiple_of(height * width) {
            return Err(Error::Shape(format!(
                "{} pixels do not form {height}x{width} masks",
                masks.len()
            )));
        }
        Ok(Self {
            concept_id,
            name: name.into(),
            height,
            width,
            masks,
        })
    }

    /// Builds masks from grid values, which must be exactly 0 or 1.
    pub fn from_record(concept_id: u32, name: impl Into<String>, record: &GridRecord) -> Result<Self> {
        if let Some(pos) = record.values.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Shape(format!(
                "concept {concept_id} mask value {} at pixel {pos} is not 0 or 1",
                record.values[pos]
            )));
        }
        let masks = record.values.iter().map(|&v| v == 1.0).collect();
        Self::new(concept_id, name, record.height, record.width, masks)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn n_images(&self) -> usize {
        self.masks.len() / (self.height * self.width)
    }

    pub fn mask(&self, image: usize) -> &[bool] {
        let cells = self.height * self.width;
        &self.masks[image * cells..(image + 1) * cells]
    }
}

/// Loads mask records (record `i` is concept `i`) and names them from a
/// `concept_id,name` CSV covering every record.
pub fn load_concepts(masks: impl AsRef<Path>, names_csv: impl AsRef<Path>) -> Result<Vec<ConceptMaskSet>> {
    let records = load_grid_records(masks)?;
    let names_csv = names_csv.as_ref();
    let mut names = BTreeMap::new();
    for (i, (line, record)) in csv_records(names_csv)?.into_iter().enumerate() {
        if i == 0 && record.get(0) == Some("concept_id") {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                reason: "expected concept_id,name".into(),
            });
        }
        let id: u32 = parse_field(&record, 0, line, "concept_id")?;
        if names.insert(id, record[1].to_string()).is_some() {
            return Err(Error::Parse {
                line,
                reason: format!("duplicate concept_id {id}"),
            });
        }
    }
    if names.len() != records.len() || names.keys().enumerate().any(|(i, &id)| id as usize != i) {
        return Err(Error::Shape(format!(
            "concept names must list ids 0..{} for the mask records",
            records.len()
        )));
    }
    records
        .iter()
        .zip(names)
        .map(|(r, (id, name))| ConceptMaskSet::from_record(id, name, r))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissectionResult {
    pub unit_id: usize,
    pub best_concept: u32,
    pub best_name: String,
    pub iou: f64,
    pub is_detector: bool,
    pub binarization_threshold: f32,
}

/// Smallest pooled activation `v` such that the fraction of pixels strictly
/// above `v` is at most `top_fraction`.
pub fn binarize_threshold(stack: &ActivationMapStack, top_fraction: f64) -> Result<f32> {
    if !(top_fraction > 0.0 && top_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "top_fraction {top_fraction} must lie in (0, 1)"
        )));
    }
    let mut pooled = stack.maps.clone();
    if pooled.is_empty() {
        return Err(Error::Degenerate("empty activation map stack".into()));
    }
    pooled.sort_unstable_by(|a, b| b.total_cmp(a));
    let total = pooled.len() as f64;
    let mut chosen = pooled[0];
    let mut start = 0;
    while start < pooled.len() {
        // `start` pixels lie strictly above pooled[start]
        if start as f64 / total > top_fraction {
            break;
        }
        chosen = pooled[start];
        while start < pooled.len() && pooled[start] == chosen {
            start += 1;
        }
    }
    Ok(chosen)
}

/// Corner-aligned bilinear resize of a row-major grid from `src` to
/// `target` dims. Upsampling only.
pub fn upsample(map: &[f32], src: (usize, usize), target: (usize, usize)) -> Result<Vec<f32>> {
    let (h, w) = src;
    let (th, tw) = target;
    if map.len() != h * w || h == 0 || w == 0 {
        return Err(Error::Shape(format!("{} values are not a {h}x{w} grid", map.len())));
    }
    if th < h || tw < w {
        return Err(Error::Shape(format!("target {th}x{tw} is smaller than source {h}x{w}")));
    }
    let coord = |i: usize, from: usize, to: usize| -> (usize, usize, f64) {
        if to <= 1 || from <= 1 {
            return (0, 0, 0.0);
        }
        let pos = (i * (from - 1)) as f64 / (to - 1) as f64;
        let lo = (pos.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        (lo, hi, pos - lo as f64)
    };
    let cols: Vec<_> = (0..tw).map(|x| coord(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = coord(y, h, th);
        for &(x0, x1, fx) in &cols {
            let lerp = |a: f32, b: f32, t: f64| -> f64 {
                let (a, b) = (a as f64, b as f64);
                (a + (b - a) * t).clamp(a.min(b), a.max(b))
            };
            let top = lerp(map[y0 * w + x0], map[y0 * w + x1], fx);
            let bottom = lerp(map[y1 * w + x0], map[y1 * w + x1], fx);
            let v = (top + (bottom - top) * fy).clamp(top.min(bottom), top.max(bottom));
            out.push(v as f32);
        }
    }
    Ok(out)
}

fn overlap(a: &[bool], b: &[bool]) -> Result<(u64, u64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("mask sizes {} and {} differ", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).fold((0, 0), |(i, u), (&x, &y)| {
        (i + (x && y) as u64, u + (x || y) as u64)
    }))
}

/// |a AND b| / |a OR b|, or 0 when both masks are empty.
pub fn iou(a: &[bool], b: &[bool]) -> Result<f64> {
    let (inter, union) = overlap(a, b)?;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Best-aligned concept for one unit.
pub fn dissect_unit(stack: &ActivationMapStack, concepts: &[ConceptMaskSet], top_fraction: f64) -> Result<DissectionResult> {
    if concepts.is_empty() {
        return Err(Error::InvalidParameter("no concepts supplied".into()));
    }
    let (h, w) = stack.dims();
    for c in concepts {
        let (ch, cw) = c.dims();
        if c.n_images() != stack.n_images() {
            return Err(Error::Shape(format!(
                "concept {} has {} masks, unit {} has {} maps",
                c.concept_id,
                c.n_images(),
                stack.unit_id,
                stack.n_images()
            )));
        }
        if ch < h || cw < w {
            return Err(Error::Shape(format!(
                "concept {} masks are {ch}x{cw}, smaller than {h}x{w} activation maps",
                c.concept_id
            )));
        }
    }
    let threshold = binarize_threshold(stack, top_fraction)?;

    let mut by_dims: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, c) in concepts.iter().enumerate() {
        by_dims.entry(c.dims()).or_default().push(i);
    }
    let mut inter = vec![0u64; concepts.len()];
    let mut union = vec![0u64; concepts.len()];
    let mut binary = Vec::new();
    for image in 0..stack.n_images() {
        for (&dims, members) in &by_dims {
            let up = upsample(stack.map(image), (h, w), dims)?;
            binary.clear();
            binary.extend(up.iter().map(|&v| v > threshold));
            for &ci in members {
                let (i, u) = overlap(&binary, concepts[ci].mask(image))?;
                inter[ci] += i;
                union[ci] += u;
            }
        }
    }
    let score = |ci: usize| if union[ci] == 0 { 0.0 } else { inter[ci] as f64 / union[ci] as f64 };
    let best = (0..concepts.len())
        .max_by(|&a, &b| {
            score(a)
                .total_cmp(&score(b))
                .then(concepts[b].concept_id.cmp(&concepts[a].concept_id))
        })
        .expect("non-empty");
    let best_iou = score(best);
    Ok(DissectionResult {
        unit_id: stack.unit_id,
        best_concept: concepts[best].concept_id,
        best_name: concepts[best].name.clone(),
        iou: best_iou,
        is_detector: is_detector(best_iou),
        binarization_threshold: threshold,
    })
}
