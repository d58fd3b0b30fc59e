//! Generated activation scenarios.
//!
//! The three pathological kinds are the canonical cases where the measures
//! disagree: a single active item, an archetypal grandmother unit, and a
//! uniformly active unit with one class offset slightly upwards. `Random`
//! produces seeded positive activations for stress and oracle testing.
//!
//! Images are laid out class-major: image `i` belongs to class
//! `i / n_per_class`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::store::{write_labels, ActivationDataset, ActivationWriter, ClassIndex};

/// Baseline `b` at which a `+delta` class offset yields CCMAS `target`,
/// from `delta / (2b + delta) = target`.
pub fn baseline_for_ccmas(delta: f64, target: f64) -> f64 {
    (delta / target - delta) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RandomDistribution {
    Uniform,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScenarioKind {
    /// One image of class 0 at `active_value`; everything else 0.
    SingleActive,
    /// Every class-0 image at `on_value`; everything else 0.
    Grandmother,
    /// Every image near `baseline`, class 0 shifted by `+delta`.
    UniformOffset,
    /// Seeded positive activations with a per-class gain.
    Random(RandomDistribution),
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "single_active" | "single-active" => ScenarioKind::SingleActive,
            "grandmother" => ScenarioKind::Grandmother,
            "uniform_offset" | "uniform-offset" => ScenarioKind::UniformOffset,
            "random" => ScenarioKind::Random(RandomDistribution::Uniform),
            "random_exponential" | "random-exponential" => ScenarioKind::Random(RandomDistribution::Exponential),
            other => return Err(Error::InvalidParameter(format!("unknown scenario '{other}'"))),
        })
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::SingleActive => "single_active",
            ScenarioKind::Grandmother => "grandmother",
            ScenarioKind::UniformOffset => "uniform_offset",
            ScenarioKind::Random(RandomDistribution::Uniform) => "random",
            ScenarioKind::Random(RandomDistribution::Exponential) => "random_exponential",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub n_units: usize,
    pub active_value: f64,
    pub on_value: f64,
    pub baseline: f64,
    pub delta: f64,
    /// Jitter half-width for `UniformOffset` (`None` = `0.01 * delta`), or the
    /// value scale for `Random` (`None` = 1).
    pub noise: Option<f64>,
    /// Probability that a `Random` activation is exactly zero.
    pub zero_fraction: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, n_classes: usize, n_per_class: usize) -> Self {
        Self {
            kind,
            n_classes,
            n_per_class,
            n_units: 1,
            active_value: 1.0,
            on_value: 1.0,
            baseline: baseline_for_ccmas(0.1, 0.06),
            delta: 0.1,
            noise: None,
            zero_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn n_images(&self) -> usize {
        self.n_classes * self.n_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} must be at least 2", self.n_classes));
        }
        if self.n_per_class < 1 || self.n_units < 1 {
            return bad("n_per_class and n_units must be at least 1".into());
        }
        if self.n_images() > u32::MAX as usize {
            return bad("too many images".into());
        }
        match self.kind {
            ScenarioKind::SingleActive if !(self.active_value > 0.0) => {
                bad(format!("active_value = {} must be positive", self.active_value))
            }
            ScenarioKind::Grandmother if !(self.on_value > 0.0) => {
                bad(format!("on_value = {} must be positive", self.on_value))
            }
            ScenarioKind::UniformOffset if !(self.delta > 0.0) => bad(format!("delta = {} must be positive", self.delta)),
            ScenarioKind::UniformOffset if !(self.baseline.is_finite()) => bad("baseline must be finite".into()),
            _ if self.noise.is_some_and(|n| !(n >= 0.0) || !n.is_finite()) => {
                bad(format!("noise = {:?} must be a finite non-negative number", self.noise))
            }
            _ if !(0.0..1.0).contains(&self.zero_fraction) => {
                bad(format!("zero_fraction = {} must lie in [0, 1)", self.zero_fraction))
            }
            _ => Ok(()),
        }
    }

    pub fn labels(&self) -> Result<ClassIndex> {
        let ids: Vec<u32> = (0..self.n_images()).map(|i| (i / self.n_per_class) as u32).collect();
        ClassIndex::from_class_ids(&ids)
    }

    fn rng(&self, unit: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(unit as u64);
        rng
    }

    /// Activations of one unit. Deterministic in (spec, unit).
    pub fn unit_values(&self, unit: usize) -> Vec<f32> {
        let n = self.n_images();
        let per = self.n_per_class;
        let mut rng = self.rng(unit);
        match self.kind {
            ScenarioKind::SingleActive => {
                let mut values = vec![0.0f32; n];
                values[rng.gen_range(0..per)] = self.active_value as f32;
                values
            }
            ScenarioKind::Grandmother => (0..n)
                .map(|i| if i < per { self.on_value as f32 } else { 0.0 })
                .collect(),
            ScenarioKind::UniformOffset => {
                let jitter = self.noise.unwrap_or(0.01 * self.delta);
                (0..n)
                    .map(|i| {
                        let offset = if i < per { self.delta } else { 0.0 };
                        let noise = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
                        (self.baseline + offset + noise) as f32
                    })
                    .collect()
            }
            ScenarioKind::Random(dist) => {
                let scale = self.noise.unwrap_or(1.0);
                let gains: Vec<f64> = (0..self.n_classes).map(|_| rng.gen_range(0.5..2.0)).collect();
                (0..n)
                    .map(|i| {
                        if self.zero_fraction > 0.0 && rng.gen_bool(self.zero_fraction) {
                            return 0.0;
                        }
                        let draw: f64 = match dist {
                            RandomDistribution::Uniform => 1.0 - rng.gen::<f64>(),
                            RandomDistribution::Exponential => Exp1.sample(&mut rng),
                        };
                        (scale * gains[i / per] * draw) as f32
                    })
                    .collect()
            }
        }
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<(ActivationDataset, ClassIndex)> {
    spec.validate()?;
    let mut data = Vec::with_capacity(spec.n_units * spec.n_images());
    for unit in 0..spec.n_units {
        data.extend(spec.unit_values(unit));
    }
    Ok((ActivationDataset::new(spec.n_units, spec.n_images(), data)?, spec.labels()?))
}

/// Writes the scenario unit by unit, never holding more than one unit.
pub fn write_scenario(spec: &ScenarioSpec, activations: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    spec.validate()?;
    let mut w = ActivationWriter::create(activations, spec.n_units, spec.n_images())?;
    for unit in 0..spec.n_units {
        w.write_unit(&spec.unit_values(unit))?;
    }
    w.finish()?;
    write_labels(&spec.labels()?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{analyze_unit, MetricsConfig, TieMode};
    use crate::store::slice_unit;

    fn analyze(spec: &ScenarioSpec, k: usize) -> crate::metrics::UnitMetrics {
        let (d, l) = generate(spec).unwrap();
        let cfg = MetricsConfig { k, tie_mode: TieMode::Expected, ..MetricsConfig::default() };
        analyze_unit(&slice_unit(&d, 0).unwrap(), &l, &cfg).unwrap()
    }

    #[test]
    fn baseline_inversion() {
        let b = baseline_for_ccmas(0.1, 0.06);
        assert!((b - 0.783_333_333).abs() < 1e-8);
        assert!((0.1 / (2.0 * b + 0.1) - 0.06).abs() < 1e-12);
    }

    #[test]
    fn grandmother_scores() {
        let m = analyze(&ScenarioSpec::new(ScenarioKind::Grandmother, 10, 100), 100);
        assert_eq!(m.ccmas.unwrap().value, 1.0);
        assert_eq!(m.precision.value, 1.0);
    }

    #[test]
    fn single_active_scores() {
        let m = analyze(&ScenarioSpec::new(ScenarioKind::SingleActive, 10, 100), 100);
        assert_eq!(m.ccmas.unwrap().value, 1.0);
        assert!((m.precision.value - 0.11).abs() < 0.005);
    }

    #[test]
    fn uniform_offset_scores() {
        let mut spec = ScenarioSpec::new(ScenarioKind::UniformOffset, 10, 100);
        for noise in [Some(0.0), None] {
            spec.noise = noise;
            let m = analyze(&spec, 100);
            assert!((m.ccmas.unwrap().value - 0.06).abs() < 0.005, "{noise:?}");
            assert_eq!(m.precision.value, 1.0);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Random(RandomDistribution::Exponential), 4, 25);
        spec.n_units = 3;
        spec.seed = 11;
        spec.zero_fraction = 0.3;
        let (a, la) = generate(&spec).unwrap();
        let (b, lb) = generate(&spec).unwrap();
        assert_eq!((a.clone(), la), (b, lb));
        assert!(a.as_slice().iter().all(|&v| v >= 0.0));
        assert!(a.as_slice().iter().any(|&v| v == 0.0));
        spec.seed = 12;
        assert_ne!(generate(&spec).unwrap().0, a);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = ScenarioSpec::new(ScenarioKind::UniformOffset, 10, 100);
        spec.delta = 0.0;
        assert!(generate(&spec).is_err());
        spec.delta = -1.0;
        assert!(generate(&spec).is_err());
        assert!(generate(&ScenarioSpec::new(ScenarioKind::Grandmother, 1, 100)).is_err());
        assert!(generate(&ScenarioSpec::new(ScenarioKind::Grandmother, 2, 0)).is_err());
        let mut spec = ScenarioSpec::new(ScenarioKind::Grandmother, 2, 2);
        spec.on_value = 0.0;
        assert!(generate(&spec).is_err());
    }
}
