//! Brute-force reference for every per-unit measure. Deliberately naive:
//! each (class, threshold) pair is recounted from scratch over the raw
//! activations, with no sorting structure shared with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct Instance {
    pub values: Vec<f32>,
    /// External class id per image.
    pub classes: Vec<u32>,
}

impl Instance {
    pub fn class_ids(&self) -> Vec<u32> {
        let mut ids = self.classes.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn count(&self, c: u32) -> usize {
        self.classes.iter().filter(|&&x| x == c).count()
    }

    /// Distinct values plus +inf (the empty positive set).
    fn thresholds(&self) -> Vec<f32> {
        let mut t: Vec<f32> = self.values.iter().map(|&v| if v == 0.0 { 0.0 } else { v }).collect();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        t.insert(0, f32::INFINITY);
        t
    }

    /// (tp, fp) for class c with positives = activation >= t.
    fn confusion(&self, c: u32, t: f32) -> (usize, usize) {
        let mut tp = 0;
        let mut fp = 0;
        for (&v, &k) in self.values.iter().zip(&self.classes) {
            if v >= t {
                if k == c {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        (tp, fp)
    }
}

/// Random instance: 2..=max_classes classes of 1..=max_per_class items, with
/// values on a coarse dyadic grid (exact sums, frequent ties), optional zero
/// inflation and negatives, shuffled image order and non-dense class ids.
pub fn random_instance(seed: u64, max_classes: usize, max_per_class: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = rng.gen_range(2..=max_classes);
    let id_stride = rng.gen_range(1..=3u32);
    let zero_p = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.7) } else { 0.0 };
    let allow_negative = rng.gen_bool(0.15);
    let grid = *[2.0f32, 4.0, 16.0].get(rng.gen_range(0..3)).unwrap();
    let mut cells = Vec::new();
    for c in 0..n_classes {
        let size = rng.gen_range(1..=max_per_class);
        let gain = rng.gen_range(1..=4) as f32;
        for _ in 0..size {
            let v = if rng.gen_bool(zero_p) {
                0.0
            } else {
                let raw = rng.gen_range(0..=(8.0 * grid) as i32) as f32 / grid;
                let signed = if allow_negative && rng.gen_bool(0.3) { -raw } else { raw };
                signed * gain
            };
            cells.push((v, c as u32 * id_stride + 1));
        }
    }
    // Fisher-Yates
    for i in (1..cells.len()).rev() {
        let j = rng.gen_range(0..=i);
        cells.swap(i, j);
    }
    Instance {
        values: cells.iter().map(|c| c.0).collect(),
        classes: cells.iter().map(|c| c.1).collect(),
    }
}

pub fn localist(inst: &Instance) -> Option<u32> {
    inst.class_ids().into_iter().find(|&c| {
        let min_in = inst
            .values
            .iter()
            .zip(&inst.classes)
            .filter(|(_, &k)| k == c)
            .map(|(&v, _)| v)
            .fold(f32::INFINITY, f32::min);
        let max_out = inst
            .values
            .iter()
            .zip(&inst.classes)
            .filter(|(_, &k)| k != c)
            .map(|(&v, _)| v)
            .fold(f32::NEG_INFINITY, f32::max);
        min_in > max_out
    })
}

/// Images ranked by selection sort: repeatedly take the highest remaining
/// value, lowest image index on ties.
pub fn ranked_images(inst: &Instance, k: usize) -> Vec<usize> {
    let mut taken = vec![false; inst.values.len()];
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..inst.values.len() {
            if taken[i] {
                continue;
            }
            if best.map_or(true, |b| inst.values[i] > inst.values[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        order.push(b);
    }
    order
}

pub fn precision_deterministic(inst: &Instance, k: usize) -> (u32, f64) {
    let top = ranked_images(inst, k);
    let mut best = (0u32, 0usize);
    for c in inst.class_ids() {
        let n = top.iter().filter(|&&i| inst.classes[i] == c).count();
        if n > best.1 {
            best = (c, n);
        }
    }
    if best.1 == 0 {
        best.0 = inst.class_ids()[0];
    }
    (best.0, best.1 as f64 / k as f64)
}

pub fn precision_expected(inst: &Instance, k: usize) -> (u32, f64) {
    let mut sorted = inst.values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let boundary = sorted[k - 1];
    let above_total = inst.values.iter().filter(|&&v| v > boundary).count() as u64;
    let tied_total = inst.values.iter().filter(|&&v| v == boundary).count() as u64;
    let drawn = k as u64 - above_total;
    let mut best: Option<(u32, u64)> = None;
    for c in inst.class_ids() {
        let members = inst.values.iter().zip(&inst.classes).filter(|(_, &x)| x == c);
        let above = members.clone().filter(|(&v, _)| v > boundary).count() as u64;
        let tied = members.filter(|(&v, _)| v == boundary).count() as u64;
        let scaled = above * tied_total + drawn * tied;
        if best.map_or(true, |b| scaled > b.1) {
            best = Some((c, scaled));
        }
    }
    let (c, s) = best.unwrap();
    (c, s as f64 / (tied_total * k as u64) as f64)
}

pub fn n_classes_topk(inst: &Instance, k: usize) -> usize {
    let mut cs: Vec<u32> = ranked_images(inst, k).iter().map(|&i| inst.classes[i]).collect();
    cs.sort_unstable();
    cs.dedup();
    cs.len()
}

/// (mean_in, mean_out, prop_nonzero_in, prop_nonzero_out) by direct sums.
pub fn class_stats(inst: &Instance, c: u32) -> (f64, f64, f64, f64) {
    let (mut s_in, mut s_out, mut n_in, mut n_out, mut z_in, mut z_out) = (0.0f64, 0.0f64, 0, 0, 0, 0);
    for (&v, &k) in inst.values.iter().zip(&inst.classes) {
        if k == c {
            s_in += v as f64;
            n_in += 1;
            z_in += (v > 0.0) as usize;
        } else {
            s_out += v as f64;
            n_out += 1;
            z_out += (v > 0.0) as usize;
        }
    }
    let div = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
    (div(s_in, n_in), div(s_out, n_out), div(z_in as f64, n_in), div(z_out as f64, n_out))
}

/// Defined CCMAS values ranked descending, ties by class id.
pub fn ccmas_ranking(inst: &Instance) -> Vec<(u32, f64)> {
    let mut out: Vec<(u32, f64)> = inst
        .class_ids()
        .into_iter()
        .filter_map(|c| {
            let (a, b, _, _) = class_stats(inst, c);
            (a + b > 0.0).then(|| (c, (a - b) / (a + b)))
        })
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

pub fn recall_perfect_precision(inst: &Instance) -> (u32, f64) {
    let top = ranked_images(inst, 1)[0];
    let c = inst.classes[top];
    let m = inst
        .values
        .iter()
        .zip(&inst.classes)
        .filter(|(_, &k)| k != c)
        .map(|(&v, _)| v)
        .fold(f32::NEG_INFINITY, f32::max);
    let above = inst
        .values
        .iter()
        .zip(&inst.classes)
        .filter(|(&v, &k)| k == c && v > m)
        .count();
    (c, above as f64 / inst.count(c) as f64)
}

pub fn recall_at_precision(inst: &Instance, p: f64) -> (u32, f64) {
    let ids = inst.class_ids();
    let mut best = (ids[0], 0.0f64);
    for &c in &ids {
        for t in inst.thresholds() {
            let (tp, fp) = inst.confusion(c, t);
            if tp + fp == 0 {
                continue;
            }
            if (tp as f64 / (tp + fp) as f64) < p {
                continue;
            }
            let recall = tp as f64 / inst.count(c) as f64;
            if recall > best.1 {
                best = (c, recall);
            }
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
pub struct InfPoint {
    pub class: u32,
    pub threshold: f32,
    pub informedness: f64,
    pub recall: f64,
    pub specificity: f64,
    pub fallout: f64,
    pub fdr: f64,
}

/// Every (class, threshold) pair, in class then descending-threshold order.
pub fn all_informedness(inst: &Instance) -> Vec<InfPoint> {
    let n = inst.values.len();
    let mut out = Vec::new();
    for c in inst.class_ids() {
        let pos = inst.count(c);
        let neg = n - pos;
        for t in inst.thresholds() {
            let (tp, fp) = inst.confusion(c, t);
            let recall = tp as f64 / pos as f64;
            let specificity = (neg - fp) as f64 / neg as f64;
            out.push(InfPoint {
                class: c,
                threshold: t,
                informedness: recall + specificity - 1.0,
                recall,
                specificity,
                fallout: fp as f64 / neg as f64,
                fdr: if tp + fp == 0 { 0.0 } else { fp as f64 / (tp + fp) as f64 },
            });
        }
    }
    out
}

pub fn max_informedness(inst: &Instance) -> InfPoint {
    let all = all_informedness(inst);
    let mut best = all[0];
    for p in &all[1..] {
        let better = p.informedness > best.informedness
            || (p.informedness == best.informedness
                && (p.recall > best.recall
                    || (p.recall == best.recall
                        && (p.threshold < best.threshold
                            || (p.threshold == best.threshold && p.class < best.class)))));
        if better {
            best = *p;
        }
    }
    best
}
