//! Layer summaries, cross-measure correlations, rankings, tables and plots.

mod jitter;
mod table;

pub use jitter::{jitter_y, jitterplot, jitterplot_data, render_svg, Annotation, JitterPoint, JitterplotData, Marker};
pub use table::{export_csv, format_sig6, parse_metrics_csv, write_summary_csv, METRICS_HEADER};

use crate::error::{Error, Result};
use crate::metrics::UnitMetrics;

/// A scalar read off a [`UnitMetrics`] for summaries and correlations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    Localist,
    Precision,
    NClassesTopk,
    Ccmas,
    Ccmas2,
    RecallPerfectPrecision,
    RecallAtPrecision,
    Informedness,
    Recall,
    Specificity,
    Fallout,
    FalseDiscoveryRate,
    MeanIn,
    MeanOut,
    PropNonzeroIn,
    PropNonzeroOut,
    Iou,
}

impl Measure {
    pub const ALL: [Measure; 17] = [
        Measure::Localist,
        Measure::Precision,
        Measure::NClassesTopk,
        Measure::Ccmas,
        Measure::Ccmas2,
        Measure::RecallPerfectPrecision,
        Measure::RecallAtPrecision,
        Measure::Informedness,
        Measure::Recall,
        Measure::Specificity,
        Measure::Fallout,
        Measure::FalseDiscoveryRate,
        Measure::MeanIn,
        Measure::MeanOut,
        Measure::PropNonzeroIn,
        Measure::PropNonzeroOut,
        Measure::Iou,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::Localist => "localist",
            Measure::Precision => "precision",
            Measure::NClassesTopk => "n_classes_topk",
            Measure::Ccmas => "ccmas",
            Measure::Ccmas2 => "ccmas2",
            Measure::RecallPerfectPrecision => "recall_perfect_precision",
            Measure::RecallAtPrecision => "recall_at_precision",
            Measure::Informedness => "informedness",
            Measure::Recall => "recall",
            Measure::Specificity => "specificity",
            Measure::Fallout => "fallout",
            Measure::FalseDiscoveryRate => "false_discovery_rate",
            Measure::MeanIn => "mu_a",
            Measure::MeanOut => "mu_not_a",
            Measure::PropNonzeroIn => "prop_nonzero_a",
            Measure::PropNonzeroOut => "prop_nonzero_not_a",
            Measure::Iou => "iou",
        }
    }

    /// The measure's value for one unit, or `None` when undefined.
    pub fn value(self, m: &UnitMetrics) -> Option<f64> {
        let inf = &m.max_informedness;
        let st = &m.class_stats;
        Some(match self {
            Measure::Localist => m.localist_class.is_some() as u8 as f64,
            Measure::Precision => m.precision.value,
            Measure::NClassesTopk => m.n_classes_topk as f64,
            Measure::Ccmas => return m.ccmas.map(|c| c.value),
            Measure::Ccmas2 => return m.ccmas2.map(|c| c.value),
            Measure::RecallPerfectPrecision => m.recall_perfect_precision.value,
            Measure::RecallAtPrecision => m.recall_at_precision.value,
            Measure::Informedness => inf.informedness,
            Measure::Recall => inf.recall,
            Measure::Specificity => inf.specificity,
            Measure::Fallout => inf.fallout,
            Measure::FalseDiscoveryRate => inf.false_discovery_rate,
            Measure::MeanIn => st.mean_in,
            Measure::MeanOut => st.mean_out,
            Measure::PropNonzeroIn => st.prop_nonzero_in,
            Measure::PropNonzeroOut => st.prop_nonzero_out,
            Measure::Iou => return m.iou,
        })
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown measure '{s}'")))
    }
}

/// Box-plot style distribution summary. Quartiles interpolate linearly
/// between order statistics; whiskers reach the most extreme values within
/// 1.5 IQR of the quartiles.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSummary {
    pub measure: Measure,
    pub n: usize,
    pub undefined_count: usize,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over sqrt(n); 0 for a single value.
    pub standard_error: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of raw values; exposed for callers that carry their own columns.
pub fn summarize_values(measure: Measure, values: &[Option<f64>]) -> Result<LayerSummary> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    let undefined_count = values.len() - v.len();
    if v.is_empty() {
        return Err(Error::NoDefinedValues(measure.name().into()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = v.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
    let whisker_low = inside.clone().fold(f64::INFINITY, f64::min);
    let whisker_high = inside.fold(f64::NEG_INFINITY, f64::max);
    let outliers = v.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect();
    let mean = v.iter().sum::<f64>() / n as f64;
    let standard_error = if n > 1 {
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(LayerSummary {
        measure,
        n,
        undefined_count,
        min: v[0],
        max: v[n - 1],
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
        outliers,
        mean,
        standard_error,
    })
}

pub fn layer_summary(metrics: &[UnitMetrics], measure: Measure) -> Result<LayerSummary> {
    let values: Vec<Option<f64>> = metrics.iter().map(|m| measure.value(m)).collect();
    summarize_values(measure, &values)
}

/// Pearson correlation over units where both measures are defined.
pub fn correlate(metrics: &[UnitMetrics], x: Measure, y: Measure) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = metrics
        .iter()
        .filter_map(|m| Some((x.value(m)?, y.value(m)?)))
        .collect();
    pearson(&pairs, x, y)
}

pub fn pearson(pairs: &[(f64, f64)], x: Measure, y: Measure) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "correlating {x} with {y} needs at least 3 paired values, found {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(a, b) in pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance(x.name().into()));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance(y.name().into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Units with a defined value for `measure`, highest first, ties by unit id.
pub fn rank_units(metrics: &[UnitMetrics], measure: Measure, top_n: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = metrics
        .iter()
        .filter_map(|m| Some((m.unit_id, measure.value(m)?)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    ranked
}
