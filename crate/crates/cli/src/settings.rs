//! Flag/config-file resolution. A config file holds `key = value` lines;
//! a flag on the command line always wins. Every resolved value is recorded
//! for the run manifest.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

pub struct Settings {
    file: BTreeMap<String, String>,
    consumed: Vec<String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), i + 1))?;
                if file.insert(normalize(k), v.trim().to_string()).is_some() {
                    bail!("{}:{}: key '{}' set twice", path.display(), i + 1, k.trim());
                }
            }
        }
        Ok(Self {
            file,
            consumed: Vec::new(),
            resolved: BTreeMap::new(),
        })
    }

    fn file_value<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.consumed.push(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key '{key}': cannot parse '{raw}': {e}")),
        }
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file);
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    pub fn or<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = self.opt(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let file: Option<String> = self.file_value(key)?;
        let v = flag.or(file.map(PathBuf::from));
        if let Some(p) = &v {
            self.resolved.insert(key.to_string(), p.display().to_string());
        }
        Ok(v)
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| anyhow!("missing --{} (or '{key}' in the config file)", key.replace('_', "-")))
    }

    /// An input file that must already exist.
    pub fn input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let p = self.required_path(key, flag)?;
        if !p.is_file() {
            bail!("{} file not found: {}", key.replace('_', " "), p.display());
        }
        Ok(p)
    }

    pub fn optional_input(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        match self.path(key, flag)? {
            Some(p) if !p.is_file() => bail!("{} file not found: {}", key.replace('_', " "), p.display()),
            other => Ok(other),
        }
    }

    /// Records a value that has no flag of its own.
    pub fn note(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Fails on config keys no setting asked for, then returns the manifest.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.file.keys().find(|k| !self.consumed.contains(k)) {
            bail!("unknown config key '{k}'");
        }
        Ok(self.resolved)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UnitSelection {
    All,
    List(Vec<usize>),
    Random(usize),
}

impl FromStr for UnitSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if s == "all" {
            return Ok(Self::All);
        }
        if let Some(list) = s.strip_prefix("list:") {
            let ids = list
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad unit id '{x}'")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if ids.is_empty() {
                return Err("empty unit list".into());
            }
            return Ok(Self::List(ids));
        }
        if let Some(n) = s.strip_prefix("random:") {
            let n = n.trim().parse().map_err(|_| format!("bad sample size '{n}'"))?;
            if n == 0 {
                return Err("random sample size must be positive".into());
            }
            return Ok(Self::Random(n));
        }
        Err(format!("expected all, list:ID,... or random:N, found '{s}'"))
    }
}

impl Display for UnitSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::List(ids) => {
                let ids: Vec<String> = ids.iter().map(usize::to_string).collect();
                write!(f, "list:{}", ids.join(","))
            }
            Self::Random(n) => write!(f, "random:{n}"),
        }
    }
}

impl UnitSelection {
    /// Sorted, de-duplicated unit ids. Random samples depend only on `seed`
    /// and `n_units`.
    pub fn resolve(&self, n_units: usize, seed: u64) -> Result<Vec<usize>> {
        let mut ids = match self {
            Self::All => (0..n_units).collect(),
            Self::List(ids) => {
                if let Some(&bad) = ids.iter().find(|&&u| u >= n_units) {
                    bail!("unit {bad} out of range: the file has {n_units} units");
                }
                ids.clone()
            }
            Self::Random(n) => {
                if *n > n_units {
                    bail!("cannot sample {n} units from {n_units}");
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample(&mut rng, n_units, *n).into_vec()
            }
        };
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}
