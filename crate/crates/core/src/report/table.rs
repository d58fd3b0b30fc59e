use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::LayerSummary;
use crate::error::{Error, Result};
use crate::metrics::{
    ClassScore, ClassStats, Informedness, PrecisionScore, RecallAtPrecision, UnitMetrics,
};

pub const METRICS_HEADER: &str = "unit_id,localist_class,precision_k,precision_class,precision,\
n_classes_k,n_classes_topk,ccmas_class,ccmas,ccmas2_class,ccmas2,rpp_class,recall_perfect_precision,\
rap_target,rap_class,recall_at_precision,maxinf_class,maxinf_threshold,informedness,recall,specificity,\
fallout,false_discovery_rate,stats_class,mu_a,mu_not_a,prop_nonzero_a,prop_nonzero_not_a,iou";

const NA: &str = "NA";

/// Six significant digits, shortest form.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { NA.into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float");
    // avoid "-0"
    format!("{}", if rounded == 0.0 { 0.0 } else { rounded })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn opt_real(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), format_sig6)
}

fn row(m: &UnitMetrics) -> String {
    let inf = &m.max_informedness;
    let st = &m.class_stats;
    let fields = [
        m.unit_id.to_string(),
        opt(m.localist_class),
        m.precision.k.to_string(),
        m.precision.class.to_string(),
        format_sig6(m.precision.value),
        m.n_classes_k.to_string(),
        m.n_classes_topk.to_string(),
        opt(m.ccmas.map(|c| c.class)),
        opt_real(m.ccmas.map(|c| c.value)),
        opt(m.ccmas2.map(|c| c.class)),
        opt_real(m.ccmas2.map(|c| c.value)),
        m.recall_perfect_precision.class.to_string(),
        format_sig6(m.recall_perfect_precision.value),
        format_sig6(m.recall_at_precision.target),
        m.recall_at_precision.class.to_string(),
        format_sig6(m.recall_at_precision.value),
        inf.class.to_string(),
        format_sig6(inf.threshold as f64),
        format_sig6(inf.informedness),
        format_sig6(inf.recall),
        format_sig6(inf.specificity),
        format_sig6(inf.fallout),
        format_sig6(inf.false_discovery_rate),
        st.class.to_string(),
        format_sig6(st.mean_in),
        format_sig6(st.mean_out),
        format_sig6(st.prop_nonzero_in),
        format_sig6(st.prop_nonzero_out),
        opt_real(m.iou),
    ];
    fields.join(",")
}

/// One row per unit under [`METRICS_HEADER`]; reals carry six significant
/// digits and undefined cells read `NA`.
pub fn export_csv(metrics: &[UnitMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let run = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for m in metrics {
            writeln!(out, "{}", row(m))?;
        }
        out.flush()
    };
    run(&mut out).map_err(|e| Error::io(path, e))
}

struct Cells<'a> {
    fields: Vec<&'a str>,
    line: usize,
    at: usize,
}

impl<'a> Cells<'a> {
    fn next_raw(&mut self) -> Result<&'a str> {
        let f = self.fields.get(self.at).copied().ok_or_else(|| Error::Parse {
            line: self.line,
            reason: format!("row has {} fields, expected 29", self.fields.len()),
        })?;
        self.at += 1;
        Ok(f)
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let raw = self.next_raw()?;
        raw.parse().map_err(|_| Error::Parse {
            line: self.line,
            reason: format!("bad value '{raw}' in column {}", self.at),
        })
    }

    fn maybe<T: std::str::FromStr>(&mut self) -> Result<Option<T>> {
        if self.fields.get(self.at) == Some(&NA) {
            self.at += 1;
            return Ok(None);
        }
        self.parse().map(Some)
    }
}

/// Reads a table written by [`export_csv`].
pub fn parse_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<UnitMetrics>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                reason: "metrics header does not match".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut c = Cells {
            fields: line.trim().split(',').collect(),
            line: i + 1,
            at: 0,
        };
        let unit_id = c.parse()?;
        let localist_class = c.maybe()?;
        let precision = PrecisionScore {
            k: c.parse()?,
            class: c.parse()?,
            value: c.parse()?,
        };
        let n_classes_k = c.parse()?;
        let n_classes_topk = c.parse()?;
        let ccmas = score(c.maybe()?, c.maybe()?);
        let ccmas2 = score(c.maybe()?, c.maybe()?);
        let recall_perfect_precision = ClassScore {
            class: c.parse()?,
            value: c.parse()?,
        };
        let recall_at_precision = RecallAtPrecision {
            target: c.parse()?,
            class: c.parse()?,
            value: c.parse()?,
        };
        let max_informedness = Informedness {
            class: c.parse()?,
            threshold: c.parse()?,
            informedness: c.parse()?,
            recall: c.parse()?,
            specificity: c.parse()?,
            fallout: c.parse()?,
            false_discovery_rate: c.parse()?,
        };
        let class_stats = ClassStats {
            class: c.parse()?,
            mean_in: c.parse()?,
            mean_out: c.parse()?,
            prop_nonzero_in: c.parse()?,
            prop_nonzero_out: c.parse()?,
        };
        let iou = c.maybe()?;
        if c.at != c.fields.len() {
            return Err(Error::Parse {
                line: c.line,
                reason: format!("row has {} fields, expected 29", c.fields.len()),
            });
        }
        out.push(UnitMetrics {
            unit_id,
            localist_class,
            precision,
            n_classes_k,
            n_classes_topk,
            ccmas,
            ccmas2,
            recall_perfect_precision,
            recall_at_precision,
            max_informedness,
            class_stats,
            iou,
        });
    }
    Ok(out)
}

fn score(class: Option<u32>, value: Option<f64>) -> Option<ClassScore> {
    Some(ClassScore {
        class: class?,
        value: value?,
    })
}

/// One row per measure summary.
pub fn write_summary_csv(summaries: &[LayerSummary], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let run = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(
            out,
            "measure,n,undefined,min,q1,median,q3,max,whisker_low,whisker_high,mean,standard_error,n_outliers,outliers"
        )?;
        for s in summaries {
            let outliers: Vec<String> = s.outliers.iter().map(|&v| format_sig6(v)).collect();
            let cols = [s.min, s.q1, s.median, s.q3, s.max, s.whisker_low, s.whisker_high, s.mean, s.standard_error]
                .map(format_sig6)
                .join(",");
            writeln!(
                out,
                "{},{},{},{},{},{}",
                s.measure,
                s.n,
                s.undefined_count,
                cols,
                s.outliers.len(),
                outliers.join(";")
            )?;
        }
        out.flush()
    };
    run(&mut out).map_err(|e| Error::io(path, e))
}
