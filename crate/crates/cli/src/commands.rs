use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use selectivity::dissection::{self, ActivationMapStack, DEFAULT_TOP_FRACTION};
use selectivity::metrics::{self, MetricsConfig, TieMode, DEFAULT_PRECISION_K, DEFAULT_PRECISION_TARGET};
use selectivity::report::{self, Annotation, Marker, Measure};
use selectivity::store::{self, ActivationFormat, ActivationReader};
use selectivity::synthetic::{self, ScenarioKind, ScenarioSpec};
use selectivity::{ActivationDataset, ClassIndex, Error, UnitActivations, UnitMetrics};

use crate::settings::{Settings, UnitSelection};
use crate::{Cli, Command, Input};

const PROGRESS_EVERY: usize = 256;

pub fn run(cli: Cli) -> Result<()> {
    let mut s = Settings::load(cli.config.as_deref())?;
    match cli.command {
        Command::Analyze {
            input,
            units,
            seed,
            threads,
            k,
            classes_k,
            precision_target,
            tie_mode,
            target_class,
            iou,
            out,
        } => {
            let config = MetricsConfig {
                k: s.or("k", k, DEFAULT_PRECISION_K)?,
                classes_k: s.opt("classes_k", classes_k)?,
                precision_target: s.or("precision_target", precision_target, DEFAULT_PRECISION_TARGET)?,
                tie_mode: s.or("tie_mode", tie_mode, TieMode::Expected.to_string())?.parse()?,
                stats_class: s.opt("target_class", target_class)?,
            };
            let units = s.or("units", units, UnitSelection::All)?;
            let seed = s.or("seed", seed, 0u64)?;
            let threads = s.or("threads", threads, default_threads())?;
            let iou = s.optional_input("iou", iou)?;
            analyze(s, input, config, units, seed, threads, iou, out)
        }
        Command::Jitter {
            input,
            unit,
            highlight,
            annotate,
            seed,
            out,
        } => {
            let unit = s
                .opt("unit", unit)?
                .ok_or_else(|| anyhow!("missing --unit"))?;
            let seed = s.or("seed", seed, 0u64)?;
            jitter(s, input, unit, &highlight, &annotate, seed, out)
        }
        Command::Dissect {
            maps,
            masks,
            concepts,
            top_fraction,
            units,
            seed,
            out,
        } => {
            let maps = s.input("maps", maps)?;
            let masks = s.input("masks", masks)?;
            let concepts = s.input("concepts", concepts)?;
            let top_fraction = s.or("top_fraction", top_fraction, DEFAULT_TOP_FRACTION)?;
            let units = s.or("units", units, UnitSelection::All)?;
            let seed = s.or("seed", seed, 0u64)?;
            let out = out_dir(&mut s, out)?;
            dissect(&maps, &masks, &concepts, top_fraction, &units, seed, &out)?;
            write_manifest(&out, "dissect", s)
        }
        Command::Synth {
            scenario,
            classes,
            per_class,
            n_units,
            seed,
            delta,
            baseline,
            target_ccmas,
            noise,
            active_value,
            on_value,
            zero_fraction,
            out,
        } => {
            let kind: ScenarioKind = s
                .opt("scenario", scenario)?
                .ok_or_else(|| anyhow!("missing scenario name"))?
                .parse()?;
            let mut spec = ScenarioSpec::new(kind, s.or("classes", classes, 10)?, s.or("per_class", per_class, 100)?);
            spec.n_units = s.or("n_units", n_units, 1)?;
            spec.seed = s.or("seed", seed, 0)?;
            spec.delta = s.or("delta", delta, spec.delta)?;
            spec.active_value = s.or("active_value", active_value, spec.active_value)?;
            spec.on_value = s.or("on_value", on_value, spec.on_value)?;
            spec.zero_fraction = s.or("zero_fraction", zero_fraction, spec.zero_fraction)?;
            spec.noise = s.opt("noise", noise)?;
            let baseline = s.opt("baseline", baseline)?;
            let target = s.opt("target_ccmas", target_ccmas)?;
            spec.baseline = match (baseline, target) {
                (Some(_), Some(_)) => bail!("--baseline and --target-ccmas are mutually exclusive"),
                (Some(b), None) => b,
                (None, Some(t)) => {
                    if !(t > 0.0 && t < 1.0) {
                        bail!("--target-ccmas {t} must lie in (0, 1)");
                    }
                    synthetic::baseline_for_ccmas(spec.delta, t)
                }
                (None, None) => spec.baseline,
            };
            s.note("baseline", spec.baseline);
            spec.validate()?;
            let out = out_dir(&mut s, out)?;
            synthetic::write_scenario(&spec, out.join("activations.sela"), out.join("labels.csv"))?;
            eprintln!(
                "synth: {} units x {} images ({} classes) written to {}",
                spec.n_units,
                spec.n_images(),
                spec.n_classes,
                out.display()
            );
            write_manifest(&out, "synth", s)
        }
        Command::Summarize {
            metrics,
            measures,
            rank,
            top,
            out,
        } => {
            let path = s.input("metrics", metrics)?;
            let measures = parse_measures(s.opt("measures", measures)?.as_deref())?;
            let rank: Option<Measure> = s.opt("rank", rank)?.map(|r| r.parse()).transpose()?;
            let top = s.or("top", top, 10usize)?;
            let out = out_dir(&mut s, out)?;
            let table = report::parse_metrics_csv(&path)?;
            write_summaries(&table, &measures, &out.join("summary.csv"))?;
            if let Some(m) = rank {
                let mut text = String::from("rank,unit_id,value\n");
                for (i, (u, v)) in report::rank_units(&table, m, top).into_iter().enumerate() {
                    writeln!(text, "{},{u},{}", i + 1, report::format_sig6(v))?;
                }
                write_file(&out.join("ranking.csv"), &text)?;
            }
            write_manifest(&out, "summarize", s)
        }
        Command::Correlate { metrics, pairs, out } => {
            let path = s.input("metrics", metrics)?;
            let pairs = parse_pairs(s.opt("pairs", pairs)?.as_deref())?;
            let out = out_dir(&mut s, out)?;
            let table = report::parse_metrics_csv(&path)?;
            correlate(&table, &pairs, &out.join("correlations.csv"))?;
            write_manifest(&out, "correlate", s)
        }
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn out_dir(s: &mut Settings, flag: Option<PathBuf>) -> Result<PathBuf> {
    let out = s.required_path("out", flag)?;
    fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Sorted key=value record of the resolved configuration. The output
/// directory itself is left out so relocated runs compare equal.
fn write_manifest(out: &Path, command: &str, s: Settings) -> Result<()> {
    let mut entries = s.finish()?;
    entries.remove("out");
    entries.insert("command".into(), command.into());
    entries.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    entries.insert("activation_format".into(), format!("SELA v{}", store::VERSION_MATRIX));
    entries.insert("map_format".into(), format!("SELA v{}", store::VERSION_MAPS));
    entries.insert("metrics_columns".into(), report::METRICS_HEADER.split(',').count().to_string());
    let mut text = String::new();
    for (k, v) in entries {
        writeln!(text, "{k}={v}")?;
    }
    write_file(&out.join("manifest.txt"), &text)
}

struct ResolvedInput {
    activations: PathBuf,
    format: ActivationFormat,
    labels: PathBuf,
    predictions: Option<PathBuf>,
}

fn resolve_input(s: &mut Settings, input: Input) -> Result<ResolvedInput> {
    let activations = s.input("activations", input.activations)?;
    let guess = match activations.extension().and_then(|e| e.to_str()) {
        Some("csv") => "csv",
        _ => "binary",
    };
    let format = s.or("format", input.format, guess.to_string())?.parse()?;
    let labels = s.input("labels", input.labels)?;
    let predictions = s.optional_input("predictions", input.predictions)?;
    Ok(ResolvedInput {
        activations,
        format,
        labels,
        predictions,
    })
}

/// Whole dataset in memory, restricted to correctly classified images when
/// predictions are given.
fn load_in_memory(input: &ResolvedInput, labels: ClassIndex) -> Result<(ActivationDataset, ClassIndex)> {
    let dataset = store::load_activations(&input.activations, input.format)?;
    labels.check_against(&dataset)?;
    match &input.predictions {
        None => Ok((dataset, labels)),
        Some(p) => {
            let predictions = store::load_predictions(p)?;
            let (d, l) = store::filter_correct(&dataset, &labels, &predictions)?;
            eprintln!("kept {} of {} correctly classified images", d.n_images(), dataset.n_images());
            Ok((d, l))
        }
    }
}

fn streaming(input: &ResolvedInput) -> bool {
    input.format == ActivationFormat::Binary && input.predictions.is_none()
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    mut s: Settings,
    input: Input,
    config: MetricsConfig,
    units: UnitSelection,
    seed: u64,
    threads: usize,
    iou: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let input = resolve_input(&mut s, input)?;
    let out = out_dir(&mut s, out)?;
    let labels = store::load_labels(&input.labels)?;
    let started = Instant::now();
    let mut metrics = if streaming(&input) {
        let mut reader = ActivationReader::open(&input.activations)?;
        let ids = units.resolve(reader.n_units(), seed)?;
        eprintln!(
            "analyze: {} of {} units, {} images, {} threads (streaming)",
            ids.len(),
            reader.n_units(),
            reader.n_images(),
            threads
        );
        let mut collected = Vec::with_capacity(ids.len());
        metrics::analyze_stream(
            &mut reader,
            &labels,
            &config,
            |u| ids.binary_search(&u).is_ok(),
            threads,
            |m| {
                collected.push(m);
                if collected.len() % PROGRESS_EVERY == 0 {
                    eprintln!("  {}/{} units", collected.len(), ids.len());
                }
                Ok(())
            },
        )?;
        collected
    } else {
        let (dataset, labels) = load_in_memory(&input, labels)?;
        let ids = units.resolve(dataset.n_units(), seed)?;
        eprintln!(
            "analyze: {} of {} units, {} images, {} threads",
            ids.len(),
            dataset.n_units(),
            dataset.n_images(),
            threads
        );
        metrics::analyze_dataset(&dataset, &labels, &config, &ids, threads)?
    };
    eprintln!("analyze: {} units in {:.2?}", metrics.len(), started.elapsed());
    if let Some(path) = iou {
        attach_iou(&mut metrics, &load_iou(&path)?);
    }
    report::export_csv(&metrics, out.join("metrics.csv"))?;
    write_summaries(&metrics, &Measure::ALL, &out.join("summary.csv"))?;
    write_manifest(&out, "analyze", s)
}

fn load_iou(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: header lacks a '{name}' column", path.display()))
    };
    let (unit_col, iou_col) = (col("unit_id")?, col("iou")?);
    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.with_context(|| format!("cannot parse {}", path.display()))?;
        let line = record.position().map_or(0, |p| p.line());
        let get = |c: usize| record.get(c).unwrap_or("");
        let unit: usize = get(unit_col)
            .parse()
            .with_context(|| format!("{}:{line}: bad unit_id", path.display()))?;
        let iou: f64 = get(iou_col)
            .parse()
            .with_context(|| format!("{}:{line}: bad iou", path.display()))?;
        out.insert(unit, iou);
    }
    Ok(out)
}

fn attach_iou(metrics: &mut [UnitMetrics], iou: &BTreeMap<usize, f64>) {
    for m in metrics.iter_mut() {
        m.iou = iou.get(&m.unit_id).copied();
    }
}

fn write_summaries(metrics: &[UnitMetrics], measures: &[Measure], path: &Path) -> Result<()> {
    let mut summaries = Vec::new();
    for &m in measures {
        match report::layer_summary(metrics, m) {
            Ok(s) => summaries.push(s),
            Err(Error::NoDefinedValues(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    report::write_summary_csv(&summaries, path)?;
    Ok(())
}

fn parse_measures(list: Option<&str>) -> Result<Vec<Measure>> {
    match list {
        None => Ok(Measure::ALL.to_vec()),
        Some(l) => l.split(',').map(|m| Ok(m.trim().parse()?)).collect(),
    }
}

const DEFAULT_CORRELATES: [Measure; 7] = [
    Measure::Precision,
    Measure::Ccmas,
    Measure::RecallPerfectPrecision,
    Measure::RecallAtPrecision,
    Measure::Informedness,
    Measure::NClassesTopk,
    Measure::Iou,
];

fn parse_pairs(list: Option<&str>) -> Result<Vec<(Measure, Measure)>> {
    match list {
        None => {
            let mut pairs = Vec::new();
            for (i, &x) in DEFAULT_CORRELATES.iter().enumerate() {
                for &y in &DEFAULT_CORRELATES[i + 1..] {
                    pairs.push((x, y));
                }
            }
            Ok(pairs)
        }
        Some(l) => l
            .split(',')
            .map(|p| {
                let (x, y) = p
                    .split_once(':')
                    .ok_or_else(|| anyhow!("pair '{p}' is not X:Y"))?;
                Ok((x.trim().parse()?, y.trim().parse()?))
            })
            .collect(),
    }
}

/// One row per pair; `NA` when a pair has too few values or no variance.
fn correlate(table: &[UnitMetrics], pairs: &[(Measure, Measure)], path: &Path) -> Result<()> {
    let mut text = String::from("x,y,n,r\n");
    for &(x, y) in pairs {
        let n = table
            .iter()
            .filter(|m| x.value(m).is_some() && y.value(m).is_some())
            .count();
        let r = match report::correlate(table, x, y) {
            Ok(r) => report::format_sig6(r),
            Err(e @ (Error::InvalidParameter(_) | Error::ZeroVariance(_))) => {
                eprintln!("correlate: {x} vs {y}: {e}");
                "NA".into()
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(text, "{x},{y},{n},{r}")?;
    }
    write_file(path, &text)
}

fn parse_highlight(spec: &str, index: usize) -> Result<(u32, Marker)> {
    let (class, marker) = match spec.split_once(':') {
        Some((c, m)) => (c, m.parse()?),
        None => (spec, Marker::CYCLE[index % Marker::CYCLE.len()]),
    };
    let class = class
        .trim()
        .parse()
        .map_err(|_| anyhow!("bad class id in --highlight '{spec}'"))?;
    Ok((class, marker))
}

fn jitter(
    mut s: Settings,
    input: Input,
    unit: usize,
    highlight: &[String],
    annotate: &[String],
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let input = resolve_input(&mut s, input)?;
    let out = out_dir(&mut s, out)?;
    let highlight: Vec<(u32, Marker)> = highlight
        .iter()
        .enumerate()
        .map(|(i, h)| parse_highlight(h, i))
        .collect::<Result<_>>()?;
    s.note(
        "highlight",
        highlight.iter().map(|(c, m)| format!("{c}:{}", m.name())).collect::<Vec<_>>().join(","),
    );
    s.note("annotate", annotate.join(","));
    let labels = store::load_labels(&input.labels)?;
    let (acts, labels) = if streaming(&input) {
        let mut reader = ActivationReader::open(&input.activations)?;
        if unit >= reader.n_units() {
            bail!("unit {unit} out of range: the file has {} units", reader.n_units());
        }
        for _ in 0..unit {
            reader.skip_unit()?;
        }
        let mut values = Vec::new();
        reader.read_unit(&mut values)?;
        (UnitActivations::new(unit, values), labels)
    } else {
        let (dataset, labels) = load_in_memory(&input, labels)?;
        (store::slice_unit(&dataset, unit)?, labels)
    };
    let mut annotations = Vec::new();
    for a in annotate {
        if a == "maxinf" {
            let sweep = metrics::build_sweep(&acts, &labels)?;
            let best = metrics::max_informedness(&sweep)?;
            if !best.threshold.is_finite() {
                bail!("unit {unit} has no finite maximum-informedness threshold to annotate");
            }
            annotations.push(Annotation {
                name: format!("maxinf class {}", best.class),
                x: best.threshold as f64,
            });
        } else {
            let (name, x) = a
                .split_once('=')
                .ok_or_else(|| anyhow!("--annotate '{a}' is neither maxinf nor NAME=VALUE"))?;
            let x: f64 = x.trim().parse().map_err(|_| anyhow!("bad value in --annotate '{a}'"))?;
            annotations.push(Annotation {
                name: name.trim().to_string(),
                x,
            });
        }
    }
    let svg = report::jitterplot(&acts, &labels, &highlight, &annotations, seed)?;
    let path = out.join(format!("jitter_unit{unit}.svg"));
    write_file(&path, &svg)?;
    eprintln!("jitter: {} points written to {}", acts.len(), path.display());
    write_manifest(&out, "jitter", s)
}

fn dissect(
    maps: &Path,
    masks: &Path,
    concepts: &Path,
    top_fraction: f64,
    units: &UnitSelection,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let concepts = dissection::load_concepts(masks, concepts)?;
    let records = store::load_grid_records(maps)?;
    let ids = units.resolve(records.len(), seed)?;
    eprintln!("dissect: {} units against {} concepts", ids.len(), concepts.len());
    let path = out.join("detectors.csv");
    let mut table = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    table.write_record(["unit_id", "best_concept", "best_name", "iou", "is_detector", "binarization_threshold"])?;
    let mut detectors = 0;
    for (u, record) in records.into_iter().enumerate() {
        if ids.binary_search(&u).is_err() {
            continue;
        }
        let stack = ActivationMapStack::from_record(u, record)?;
        let r = dissection::dissect_unit(&stack, &concepts, top_fraction)?;
        detectors += r.is_detector as usize;
        table.write_record([
            r.unit_id.to_string(),
            r.best_concept.to_string(),
            r.best_name,
            report::format_sig6(r.iou),
            r.is_detector.to_string(),
            report::format_sig6(r.binarization_threshold as f64),
        ])?;
    }
    table.flush()?;
    eprintln!("dissect: {detectors} of {} units are detectors", ids.len());
    Ok(())
}
