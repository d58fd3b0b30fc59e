//! Per-unit selectivity measures.
//!
//! Every threshold-based measure reads from one [`ThresholdSweep`]: the
//! unit's activations sorted in descending order with ties broken by
//! ascending image index. A threshold `t` classifies an image as positive
//! when its activation is `>= t`; the candidate thresholds are the distinct
//! observed values plus one above the maximum (empty positive set).
//!
//! Sweeps are stored as packed `u64` keys (order-preserving value bits in the
//! high word, image index in the low word), so a sweep over `n` images costs
//! exactly `8 * n` bytes and class membership is read from the [`ClassIndex`].

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::{ActivationDataset, ActivationReader, ClassIndex, UnitActivations};

/// Default number of top images for precision.
pub const DEFAULT_PRECISION_K: usize = 60;
/// Default target precision for the relaxed recall measure.
pub const DEFAULT_PRECISION_TARGET: f64 = 0.95;

/// How boundary ties are resolved when the k-th and (k+1)-th most active
/// images share a value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieMode {
    /// Ties are ordered by ascending image index.
    Deterministic,
    /// Tied boundary images enter the top k as a uniform random draw; each
    /// class is credited with its expected count.
    #[default]
    Expected,
}

impl std::str::FromStr for TieMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(TieMode::Deterministic),
            "expected" => Ok(TieMode::Expected),
            other => Err(Error::InvalidParameter(format!("unknown tie mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for TieMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TieMode::Deterministic => "deterministic",
            TieMode::Expected => "expected",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsConfig {
    /// Top-k window for precision.
    pub k: usize,
    /// Top-k window for the distinct-class count; `None` reuses `k`.
    pub classes_k: Option<usize>,
    pub precision_target: f64,
    pub tie_mode: TieMode,
    /// External class id for the class statistics; `None` picks the CCMAS
    /// class, falling back to the maximum-informedness class.
    pub stats_class: Option<u32>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_PRECISION_K,
            classes_k: None,
            precision_target: DEFAULT_PRECISION_TARGET,
            tie_mode: TieMode::Expected,
            stats_class: None,
        }
    }
}

impl MetricsConfig {
    pub fn classes_k(&self) -> usize {
        self.classes_k.unwrap_or(self.k)
    }

    /// Rejects settings that cannot apply to a dataset of `n_images`.
    pub fn validate(&self, n_images: usize) -> Result<()> {
        for (name, k) in [("k", self.k), ("classes_k", self.classes_k())] {
            if k == 0 || k > n_images {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {k} must lie in 1..={n_images}"
                )));
            }
        }
        check_target(self.precision_target)
    }
}

fn check_target(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("precision target {p} must lie in (0, 1]")))
    }
}

// ---------------------------------------------------------------------------
// sweep

#[inline]
fn descending_bits(v: f32) -> u32 {
    // -0.0 and 0.0 must share a threshold
    let bits = if v == 0.0 { 0 } else { v.to_bits() };
    let ascending = if bits & 0x8000_0000 != 0 { !bits } else { bits ^ 0x8000_0000 };
    !ascending
}

#[inline]
fn value_from_bits(desc: u32) -> f32 {
    let ascending = !desc;
    let bits = if ascending & 0x8000_0000 != 0 {
        ascending ^ 0x8000_0000
    } else {
        !ascending
    };
    f32::from_bits(bits)
}

#[inline]
fn pack(value: f32, image: usize) -> u64 {
    ((descending_bits(value) as u64) << 32) | image as u64
}

/// One unit's activations in descending order, ties by ascending image index.
#[derive(Clone, Debug)]
pub struct ThresholdSweep<'a> {
    keys: Vec<u64>,
    labels: &'a ClassIndex,
}

impl<'a> ThresholdSweep<'a> {
    fn from_keys(mut keys: Vec<u64>, labels: &'a ClassIndex) -> Self {
        keys.sort_unstable();
        Self { keys, labels }
    }

    fn into_keys(self) -> Vec<u64> {
        self.keys
    }

    pub fn labels(&self) -> &'a ClassIndex {
        self.labels
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Activation at sorted position `i`.
    #[inline]
    pub fn value(&self, i: usize) -> f32 {
        value_from_bits((self.keys[i] >> 32) as u32)
    }

    #[inline]
    pub fn image(&self, i: usize) -> usize {
        (self.keys[i] & 0xffff_ffff) as usize
    }

    /// Class slot of the image at sorted position `i`.
    #[inline]
    pub fn slot(&self, i: usize) -> usize {
        self.labels.slot(self.image(i))
    }

    #[inline]
    fn same_value(&self, i: usize, j: usize) -> bool {
        self.keys[i] >> 32 == self.keys[j] >> 32
    }

    /// Sorted positions grouped by distinct activation value, highest first.
    pub fn groups(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let mut start = 0;
        std::iter::from_fn(move || {
            if start >= self.keys.len() {
                return None;
            }
            let mut end = start + 1;
            while end < self.keys.len() && self.same_value(start, end) {
                end += 1;
            }
            let range = start..end;
            start = end;
            Some(range)
        })
    }

    /// Number of distinct activation values.
    pub fn n_thresholds(&self) -> usize {
        self.groups().count()
    }

    pub fn sorted_values(&self) -> Vec<f32> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    /// External class id at each sorted position.
    pub fn sorted_classes(&self) -> Vec<u32> {
        (0..self.len()).map(|i| self.labels.class_id(self.slot(i))).collect()
    }

    /// Cumulative per-class counts at every distinct threshold, listing only
    /// the classes whose count changed there.
    pub fn prefix_counts(&self) -> Vec<(f32, Vec<(u32, usize)>)> {
        let mut running = vec![0usize; self.labels.n_classes()];
        self.groups()
            .map(|g| {
                let mut touched: Vec<usize> = g.clone().map(|i| self.slot(i)).collect();
                for &s in &touched {
                    running[s] += 1;
                }
                touched.sort_unstable();
                touched.dedup();
                let sparse = touched
                    .into_iter()
                    .map(|s| (self.labels.class_id(s), running[s]))
                    .collect();
                (self.value(g.start), sparse)
            })
            .collect()
    }

    /// Value of the boundary group containing position `k - 1`, plus that
    /// group's range.
    fn group_at(&self, pos: usize) -> Range<usize> {
        let mut start = pos;
        while start > 0 && self.same_value(start - 1, pos) {
            start -= 1;
        }
        let mut end = pos + 1;
        while end < self.len() && self.same_value(end, pos) {
            end += 1;
        }
        start..end
    }
}

pub fn build_sweep<'a>(acts: &UnitActivations, labels: &'a ClassIndex) -> Result<ThresholdSweep<'a>> {
    if acts.len() != labels.n_images() {
        return Err(Error::Shape(format!(
            "unit {} has {} activations, labels cover {} images",
            acts.unit_id,
            acts.len(),
            labels.n_images()
        )));
    }
    let keys = acts.values.iter().enumerate().map(|(i, &v)| pack(v, i)).collect();
    Ok(ThresholdSweep::from_keys(keys, labels))
}

// ---------------------------------------------------------------------------
// result types

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScore {
    pub class: u32,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionScore {
    pub k: usize,
    pub class: u32,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecallAtPrecision {
    pub target: f64,
    pub class: u32,
    pub value: f64,
}

/// The (class, threshold) pair with the highest informedness and the
/// signal-detection rates at that point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Informedness {
    pub class: u32,
    /// Positive means activation `>= threshold`; `+inf` is the empty set.
    pub threshold: f32,
    pub informedness: f64,
    pub recall: f64,
    pub specificity: f64,
    /// FP / (FP + TN).
    pub fallout: f64,
    /// FP / (FP + TP).
    pub false_discovery_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStats {
    pub class: u32,
    pub mean_in: f64,
    pub mean_out: f64,
    pub prop_nonzero_in: f64,
    pub prop_nonzero_out: f64,
}

/// Full scorecard for one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitMetrics {
    pub unit_id: usize,
    pub localist_class: Option<u32>,
    pub precision: PrecisionScore,
    pub n_classes_k: usize,
    pub n_classes_topk: usize,
    /// `None` when the denominator is not positive.
    pub ccmas: Option<ClassScore>,
    pub ccmas2: Option<ClassScore>,
    pub recall_perfect_precision: ClassScore,
    pub recall_at_precision: RecallAtPrecision,
    pub max_informedness: Informedness,
    pub class_stats: ClassStats,
    /// Filled in from dissection output when available.
    pub iou: Option<f64>,
}

// ---------------------------------------------------------------------------
// class totals (image order)

/// Per-class sums, positive counts, and extremes accumulated in image order.
#[derive(Clone, Debug)]
pub struct ClassTotals {
    sum: Vec<f64>,
    nonzero: Vec<u32>,
    total_sum: f64,
    total_nonzero: u32,
    n_images: usize,
}

impl ClassTotals {
    fn new(n_classes: usize) -> Self {
        Self {
            sum: vec![0.0; n_classes],
            nonzero: vec![0; n_classes],
            total_sum: 0.0,
            total_nonzero: 0,
            n_images: 0,
        }
    }

    fn reset(&mut self) {
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.nonzero.iter_mut().for_each(|c| *c = 0);
        self.total_sum = 0.0;
        self.total_nonzero = 0;
        self.n_images = 0;
    }

    #[inline]
    fn add(&mut self, slot: usize, v: f32) {
        let v64 = v as f64;
        self.sum[slot] += v64;
        self.total_sum += v64;
        if v > 0.0 {
            self.nonzero[slot] += 1;
            self.total_nonzero += 1;
        }
        self.n_images += 1;
    }

    pub fn from_values(values: &[f32], labels: &ClassIndex) -> Result<Self> {
        if values.len() != labels.n_images() {
            return Err(Error::Shape(format!(
                "{} activations for {} labelled images",
                values.len(),
                labels.n_images()
            )));
        }
        let mut t = Self::new(labels.n_classes());
        for (i, &v) in values.iter().enumerate() {
            t.add(labels.slot(i), v);
        }
        Ok(t)
    }

    fn means(&self, slot: usize, labels: &ClassIndex) -> (f64, f64) {
        let n_in = labels.count(slot);
        let n_out = self.n_images - n_in;
        let mean_in = self.sum[slot] / n_in as f64;
        let mean_out = if n_out == 0 {
            0.0
        } else {
            (self.total_sum - self.sum[slot]) / n_out as f64
        };
        (mean_in, mean_out)
    }

    fn stats(&self, slot: usize, labels: &ClassIndex) -> ClassStats {
        let n_in = labels.count(slot);
        let n_out = self.n_images - n_in;
        let (mean_in, mean_out) = self.means(slot, labels);
        let nz_out = self.total_nonzero - self.nonzero[slot];
        ClassStats {
            class: labels.class_id(slot),
            mean_in,
            mean_out,
            prop_nonzero_in: self.nonzero[slot] as f64 / n_in as f64,
            prop_nonzero_out: if n_out == 0 { 0.0 } else { nz_out as f64 / n_out as f64 },
        }
    }

    /// Classes with a defined CCMAS ranked by value descending, ties by
    /// ascending class id.
    fn ccmas_ranking(&self, labels: &ClassIndex) -> Vec<ClassScore> {
        let mut scores: Vec<ClassScore> = (0..labels.n_classes())
            .filter_map(|slot| {
                let (a, b) = self.means(slot, labels);
                let denom = a + b;
                (denom > 0.0).then(|| ClassScore {
                    class: labels.class_id(slot),
                    value: (a - b) / denom,
                })
            })
            .collect();
        scores.sort_by(|x, y| y.value.total_cmp(&x.value).then(x.class.cmp(&y.class)));
        scores
    }
}

fn require_classes(labels: &ClassIndex) -> Result<()> {
    if labels.n_classes() < 2 {
        return Err(Error::InvalidParameter(format!(
            "measure needs at least 2 classes, labels have {}",
            labels.n_classes()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// measures

/// The class whose every activation is strictly above every other class's
/// activations, if one exists.
pub fn localist_class(sweep: &ThresholdSweep) -> Option<u32> {
    let labels = sweep.labels();
    let top = sweep.slot(0);
    let size = labels.count(top);
    let block_pure = (0..size).all(|i| sweep.slot(i) == top);
    let separated = size == sweep.len() || !sweep.same_value(size - 1, size);
    (block_pure && separated).then(|| labels.class_id(top))
}

/// Largest single-class share among the `k` most active images.
pub fn precision_topk(sweep: &ThresholdSweep, k: usize, tie_mode: TieMode) -> Result<PrecisionScore> {
    if k == 0 || k > sweep.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must lie in 1..={}",
            sweep.len()
        )));
    }
    let labels = sweep.labels();
    let mut counts = vec![0u64; labels.n_classes()];
    let (slot, value) = match tie_mode {
        TieMode::Deterministic => {
            for i in 0..k {
                counts[sweep.slot(i)] += 1;
            }
            let best = argmax_lowest(&counts);
            (best, counts[best] as f64 / k as f64)
        }
        TieMode::Expected => {
            let boundary = sweep.group_at(k - 1);
            let above = boundary.start;
            let tied = boundary.len() as u64;
            let drawn = (k - above) as u64;
            let mut tied_counts = vec![0u64; labels.n_classes()];
            for i in 0..above {
                counts[sweep.slot(i)] += 1;
            }
            for i in boundary {
                tied_counts[sweep.slot(i)] += 1;
            }
            // expected count = above_c + drawn * tied_c / tied, scaled by `tied`
            let scaled: Vec<u64> = counts
                .iter()
                .zip(&tied_counts)
                .map(|(&a, &t)| a * tied + drawn * t)
                .collect();
            let best = argmax_lowest(&scaled);
            (best, scaled[best] as f64 / (tied * k as u64) as f64)
        }
    };
    Ok(PrecisionScore {
        k,
        class: labels.class_id(slot),
        value,
    })
}

fn argmax_lowest(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Distinct classes among the `k` most active images (deterministic ties).
pub fn n_classes_topk(sweep: &ThresholdSweep, k: usize) -> Result<usize> {
    if k == 0 || k > sweep.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} must lie in 1..={}",
            sweep.len()
        )));
    }
    let mut seen = vec![false; sweep.labels().n_classes()];
    Ok((0..k).filter(|&i| !std::mem::replace(&mut seen[sweep.slot(i)], true)).count())
}

/// CCMAS of the `rank`-th most selective class (1 or 2). `Ok(None)` is the
/// undefined outcome, when no class of that rank has a positive
/// denominator.
pub fn ccmas(acts: &UnitActivations, labels: &ClassIndex, rank: usize) -> Result<Option<ClassScore>> {
    require_classes(labels)?;
    if !(1..=2).contains(&rank) {
        return Err(Error::InvalidParameter(format!("CCMAS rank {rank} must be 1 or 2")));
    }
    let totals = ClassTotals::from_values(&acts.values, labels)?;
    Ok(totals.ccmas_ranking(labels).get(rank - 1).copied())
}

/// Fraction of the top image's class that lies strictly above every image
/// of any other class.
pub fn recall_perfect_precision(sweep: &ThresholdSweep) -> ClassScore {
    let labels = sweep.labels();
    let top = sweep.slot(0);
    let size = labels.count(top);
    let first_other = (0..sweep.len()).find(|&i| sweep.slot(i) != top);
    let above = match first_other {
        None => size,
        // positions before `first_other` are all `top`; drop those tied with it
        Some(j) => (0..j).filter(|&i| !sweep.same_value(i, j)).count(),
    };
    ClassScore {
        class: labels.class_id(top),
        value: above as f64 / size as f64,
    }
}

/// Highest recall over all (class, threshold) pairs whose precision reaches
/// `target`. Equal recalls go to the lower class id; with no feasible
/// non-empty threshold the result is recall 0 for the first class.
pub fn recall_at_precision(sweep: &ThresholdSweep, target: f64) -> Result<RecallAtPrecision> {
    check_target(target)?;
    let labels = sweep.labels();
    let mut tp = vec![0usize; labels.n_classes()];
    let mut best_slot = 0usize;
    let mut best = 0.0f64;
    for g in sweep.groups() {
        for i in g.clone() {
            tp[sweep.slot(i)] += 1;
        }
        let above = g.end;
        for i in g {
            let s = sweep.slot(i);
            let precision = tp[s] as f64 / above as f64;
            if precision < target {
                continue;
            }
            let recall = tp[s] as f64 / labels.count(s) as f64;
            if recall > best || (recall == best && s < best_slot) {
                best = recall;
                best_slot = s;
            }
        }
    }
    Ok(RecallAtPrecision {
        target,
        class: labels.class_id(best_slot),
        value: best,
    })
}

#[derive(Clone, Copy)]
struct Candidate {
    slot: usize,
    threshold: f32,
    informedness: f64,
    recall: f64,
    specificity: f64,
    tp: usize,
    fp: usize,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.informedness
            .total_cmp(&other.informedness)
            .then(self.recall.total_cmp(&other.recall))
            .then(other.threshold.total_cmp(&self.threshold))
            .then(other.slot.cmp(&self.slot))
            == Ordering::Greater
    }
}

/// Maximum of recall + specificity - 1 over every class and threshold.
///
/// Equal informedness is broken by higher recall, then lower threshold,
/// then lower class id.
pub fn max_informedness(sweep: &ThresholdSweep) -> Result<Informedness> {
    let labels = sweep.labels();
    require_classes(labels)?;
    let n = sweep.len();
    let mut tp = vec![0usize; labels.n_classes()];
    let mut best = Candidate {
        slot: 0,
        threshold: f32::INFINITY,
        informedness: 0.0,
        recall: 0.0,
        specificity: 1.0,
        tp: 0,
        fp: 0,
    };
    // Informedness for class c can only peak at a threshold whose group
    // contains c: any other group adds false positives and no hits.
    for g in sweep.groups() {
        for i in g.clone() {
            tp[sweep.slot(i)] += 1;
        }
        let above = g.end;
        let threshold = sweep.value(g.start);
        for i in g {
            let s = sweep.slot(i);
            let positives = labels.count(s);
            let negatives = n - positives;
            let hits = tp[s];
            let fp = above - hits;
            let recall = hits as f64 / positives as f64;
            let specificity = (negatives - fp) as f64 / negatives as f64;
            let cand = Candidate {
                slot: s,
                threshold,
                informedness: recall + specificity - 1.0,
                recall,
                specificity,
                tp: hits,
                fp,
            };
            if cand.beats(&best) {
                best = cand;
            }
        }
    }
    let negatives = n - labels.count(best.slot);
    Ok(Informedness {
        class: labels.class_id(best.slot),
        threshold: best.threshold,
        informedness: best.informedness,
        recall: best.recall,
        specificity: best.specificity,
        fallout: best.fp as f64 / negatives as f64,
        false_discovery_rate: if best.tp + best.fp == 0 {
            0.0
        } else {
            best.fp as f64 / (best.tp + best.fp) as f64
        },
    })
}

/// Means and strictly-positive proportions for members and non-members of
/// external class `class`. With no non-members the out-of-class fields are 0.
pub fn class_stats(acts: &UnitActivations, labels: &ClassIndex, class: u32) -> Result<ClassStats> {
    let slot = labels.slot_of_id(class).ok_or(Error::UnknownClass(class))?;
    Ok(ClassTotals::from_values(&acts.values, labels)?.stats(slot, labels))
}

fn assemble(
    unit_id: usize,
    sweep: &ThresholdSweep,
    totals: &ClassTotals,
    config: &MetricsConfig,
) -> Result<UnitMetrics> {
    let labels = sweep.labels();
    require_classes(labels)?;
    config.validate(sweep.len())?;
    let ranking = totals.ccmas_ranking(labels);
    let max_informedness = max_informedness(sweep)?;
    let stats_class = config
        .stats_class
        .or(ranking.first().map(|c| c.class))
        .unwrap_or(max_informedness.class);
    let stats_slot = labels.slot_of_id(stats_class).ok_or(Error::UnknownClass(stats_class))?;
    Ok(UnitMetrics {
        unit_id,
        localist_class: localist_class(sweep),
        precision: precision_topk(sweep, config.k, config.tie_mode)?,
        n_classes_k: config.classes_k(),
        n_classes_topk: n_classes_topk(sweep, config.classes_k())?,
        ccmas: ranking.first().copied(),
        ccmas2: ranking.get(1).copied(),
        recall_perfect_precision: recall_perfect_precision(sweep),
        recall_at_precision: recall_at_precision(sweep, config.precision_target)?,
        max_informedness,
        class_stats: totals.stats(stats_slot, labels),
        iou: None,
    })
}

/// Computes every measure for one unit from a single sweep.
pub fn analyze_unit(acts: &UnitActivations, labels: &ClassIndex, config: &MetricsConfig) -> Result<UnitMetrics> {
    let totals = ClassTotals::from_values(&acts.values, labels)?;
    let sweep = build_sweep(acts, labels)?;
    assemble(acts.unit_id, &sweep, &totals, config)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Analyzes `units` of an in-memory dataset; results come back in the order
/// of `units` regardless of `threads`.
pub fn analyze_dataset(
    dataset: &ActivationDataset,
    labels: &ClassIndex,
    config: &MetricsConfig,
    units: &[usize],
    threads: usize,
) -> Result<Vec<UnitMetrics>> {
    labels.check_against(dataset)?;
    config.validate(dataset.n_images())?;
    let run = || {
        units
            .par_iter()
            .map(|&u| {
                let values = dataset.unit(u)?;
                let acts = UnitActivations::new(u, values.to_vec());
                analyze_unit(&acts, labels, config)
            })
            .collect::<Result<Vec<_>>>()
    };
    if threads <= 1 {
        units
            .iter()
            .map(|&u| analyze_unit(&UnitActivations::new(u, dataset.unit(u)?.to_vec()), labels, config))
            .collect()
    } else {
        pool(threads)?.install(run)
    }
}

/// Reusable working buffer for streaming analysis. Holds `8 * n_images`
/// bytes: the raw unit payload is read into the upper half and expanded in
/// place into sweep keys.
#[derive(Debug, Default)]
pub struct UnitAnalyzer {
    keys: Vec<u64>,
    unit: Option<usize>,
    totals: Option<ClassTotals>,
}

impl UnitAnalyzer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads the next unit's payload. Returns its index, or `None` at the end
    /// of the file.
    pub fn load(&mut self, reader: &mut ActivationReader) -> Result<Option<usize>> {
        let n = reader.n_images();
        self.keys.resize(n, 0);
        let bytes: &mut [u8] = bytemuck::cast_slice_mut(&mut self.keys);
        self.unit = reader.read_unit_bytes(&mut bytes[4 * n..])?;
        Ok(self.unit)
    }

    /// Analyzes the loaded unit.
    pub fn compute(&mut self, labels: &ClassIndex, config: &MetricsConfig) -> Result<UnitMetrics> {
        let unit = self.unit.take().expect("compute called without a loaded unit");
        let n = self.keys.len();
        if n != labels.n_images() {
            return Err(Error::Shape(format!(
                "activations have {n} images, labels cover {}",
                labels.n_images()
            )));
        }
        let totals = self.totals.get_or_insert_with(|| ClassTotals::new(labels.n_classes()));
        if totals.sum.len() != labels.n_classes() {
            *totals = ClassTotals::new(labels.n_classes());
        }
        totals.reset();
        {
            let bytes: &mut [u8] = bytemuck::cast_slice_mut(&mut self.keys);
            // Key i occupies bytes [8i, 8i+8); source value i sits at
            // [4n+4i, 4n+4i+4). Writing key i only overwrites sources <= i.
            for i in 0..n {
                let src = 4 * n + 4 * i;
                let v = f32::from_le_bytes(bytes[src..src + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFinite { unit, image: i, value: v });
                }
                totals.add(labels.slot(i), v);
                bytes[8 * i..8 * i + 8].copy_from_slice(&pack(v, i).to_ne_bytes());
            }
        }
        let sweep = ThresholdSweep::from_keys(std::mem::take(&mut self.keys), labels);
        let result = assemble(unit, &sweep, totals, config);
        self.keys = sweep.into_keys();
        result
    }
}

/// Streams units from a binary activation file, analyzing those for which
/// `select` returns true and handing results to `sink` in unit order.
///
/// Working memory is `threads` analyzers of `8 * n_images` bytes each plus
/// per-class accumulators.
pub fn analyze_stream(
    reader: &mut ActivationReader,
    labels: &ClassIndex,
    config: &MetricsConfig,
    select: impl Fn(usize) -> bool,
    threads: usize,
    mut sink: impl FnMut(UnitMetrics) -> Result<()>,
) -> Result<()> {
    if reader.n_images() != labels.n_images() {
        return Err(Error::Shape(format!(
            "activations have {} images, labels cover {}",
            reader.n_images(),
            labels.n_images()
        )));
    }
    config.validate(reader.n_images())?;
    let threads = threads.max(1);
    let mut workers: Vec<UnitAnalyzer> = (0..threads).map(|_| UnitAnalyzer::new()).collect();
    let pool = if threads > 1 { Some(pool(threads)?) } else { None };
    loop {
        let mut filled = 0;
        while filled < threads && reader.position() < reader.n_units() {
            if select(reader.position()) {
                workers[filled].load(reader)?;
                filled += 1;
            } else {
                reader.skip_unit()?;
            }
        }
        if filled == 0 {
            break;
        }
        let batch = &mut workers[..filled];
        let results: Vec<Result<UnitMetrics>> = match &pool {
            Some(p) => p.install(|| batch.par_iter_mut().map(|w| w.compute(labels, config)).collect()),
            None => batch.iter_mut().map(|w| w.compute(labels, config)).collect(),
        };
        for r in results {
            sink(r?)?;
        }
    }
    Ok(())
}
