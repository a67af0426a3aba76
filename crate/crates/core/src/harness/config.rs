//! Flat `key = value` configuration format.
//!
//! Lines are `key = value`; `#` starts a comment; list values are
//! comma-separated. Every key is optional. Keys:
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `seed` | u64 | 1 |
//! | `n_devices` | usize >= 1 | 128 |
//! | `spread_len` | usize >= 1 | 64 |
//! | `n_data_symbols` | usize | 9 |
//! | `activity_prob` | one value, or `n_devices` values in (0, 1) | 0.1 |
//! | `cell_radius_km` | f64 > 0 | 0.2 |
//! | `min_distance_km` | f64 in [0, radius) | 0.01 |
//! | `tx_power_dbm` | f64 | 20 |
//! | `noise_psd_dbm_hz` | f64 | -170 |
//! | `bandwidth_hz` | f64 > 0 | 1e6 |
//! | `alphabet` | `bpsk`, `qpsk`, `qam16` | qpsk |
//! | `pilot_symbol` | `re` or `re, im` | 1 |
//! | `spreading` | `gaussian`, `bernoulli` | gaussian |
//! | `mmse.regularizer` | `scaled`, `literal` | scaled |
//! | `ep.max_iters` | usize >= 1 | 10 |
//! | `ep.tol` | f64 >= 0 | 1e-4 |
//! | `ep.damping` | f64 in (0, 1] | 0.9 |
//! | `ep.min_site_variance` | f64 > 0 | 1e-12 |
//! | `baseline.omp_max_atoms` | usize >= 1, or `auto` | auto |
//! | `baseline.omp_residual_factor` | f64 > 0 | 1 |
//! | `baseline.amp_max_iters` | usize >= 1 | 30 |
//! | `baseline.amp_threshold_mult` | f64 > 0 | 1.4 |
//! | `baseline.amp_damping` | f64 in (0, 1] | 0.7 |
//! | `sweep.variable` | `tx_power_dbm`, `spread_len`, `activity_prob`, `ep_iters` | tx_power_dbm |
//! | `sweep.values` | strictly monotone list | 20 |
//! | `sweep.trials_per_point` | usize >= 1 | 1000 |
//! | `sweep.algorithms` | subset of `ep, omp, amp, oracle` | all four |
//! | `sweep.output` | path | results.csv |
//! | `sweep.record_wall_time` | bool | false |

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::BaselineConfig;
use crate::detection::Regularizer;
use crate::error::{Error, Result};
use crate::pipeline::Algorithm;
use crate::scenario::{Alphabet, SpreadingEnsemble, SystemConfig};
use crate::C64;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "n_devices",
    "spread_len",
    "n_data_symbols",
    "activity_prob",
    "cell_radius_km",
    "min_distance_km",
    "tx_power_dbm",
    "noise_psd_dbm_hz",
    "bandwidth_hz",
    "alphabet",
    "pilot_symbol",
    "spreading",
    "mmse.regularizer",
    "ep.max_iters",
    "ep.tol",
    "ep.damping",
    "ep.min_site_variance",
    "baseline.omp_max_atoms",
    "baseline.omp_residual_factor",
    "baseline.amp_max_iters",
    "baseline.amp_threshold_mult",
    "baseline.amp_damping",
    "sweep.variable",
    "sweep.values",
    "sweep.trials_per_point",
    "sweep.algorithms",
    "sweep.output",
    "sweep.record_wall_time",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    TxPowerDbm,
    SpreadLen,
    ActivityProb,
    EpIters,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::TxPowerDbm => "tx_power_dbm",
            SweepVariable::SpreadLen => "spread_len",
            SweepVariable::ActivityProb => "activity_prob",
            SweepVariable::EpIters => "ep_iters",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepVariable::SpreadLen | SweepVariable::EpIters)
    }

    /// Returns `base` with this variable set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> SystemConfig {
        let mut cfg = base.clone();
        match self {
            SweepVariable::TxPowerDbm => cfg.tx_power_dbm = value,
            SweepVariable::SpreadLen => cfg.spread_len = value as usize,
            SweepVariable::ActivityProb => cfg.set_uniform_activity(value),
            SweepVariable::EpIters => cfg.ep.max_iters = value as usize,
        }
        cfg
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tx_power_dbm" => Ok(SweepVariable::TxPowerDbm),
            "spread_len" => Ok(SweepVariable::SpreadLen),
            "activity_prob" => Ok(SweepVariable::ActivityProb),
            "ep_iters" => Ok(SweepVariable::EpIters),
            _ => Err(format!(
                "unknown sweep variable `{s}` (expected tx_power_dbm, spread_len, activity_prob or ep_iters)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub trials_per_point: usize,
    /// Sorted by name, no duplicates.
    pub algorithms: Vec<Algorithm>,
    pub base: SystemConfig,
    pub baseline: BaselineConfig,
    pub output_path: PathBuf,
    /// When false, `wall_s` is written as 0 so output bytes depend only on inputs.
    pub record_wall_time: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            variable: SweepVariable::TxPowerDbm,
            values: vec![20.0],
            trials_per_point: 1000,
            algorithms: Algorithm::ALL.to_vec(),
            base: SystemConfig::default(),
            baseline: BaselineConfig::default(),
            output_path: PathBuf::from("results.csv"),
            record_wall_time: false,
        }
    }
}

impl SweepSpec {
    /// Checks the spec and every configuration it will visit.
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::constraint("sweep.values", "must be non-empty"));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::constraint("sweep.values", "must be finite"));
        }
        let increasing = self.values.windows(2).all(|w| w[0] < w[1]);
        let decreasing = self.values.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return Err(Error::constraint("sweep.values", "must be strictly monotone"));
        }
        if self.variable.is_integer() && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(Error::constraint("sweep.values", format!("{} values must be integers >= 1", self.variable)));
        }
        if self.trials_per_point < 1 {
            return Err(Error::constraint("sweep.trials_per_point", "must be >= 1"));
        }
        if self.algorithms.is_empty() {
            return Err(Error::constraint("sweep.algorithms", "must name at least one algorithm"));
        }
        self.baseline.validate()?;
        self.base.validate()?;
        for &v in &self.values {
            self.variable.apply(&self.base, v).validate().map_err(|e| match e {
                Error::Constraint { key, message } => {
                    Error::constraint("sweep.values", format!("value {v} makes {key} invalid: {message}"))
                }
                other => other,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    line: usize,
    value: String,
}

/// Raw key/value pairs from a config file, before typing and validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, Entry>,
}

impl ConfigMap {
    /// Parses the text format. Rejects duplicate and unknown keys.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut unknown = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse { line, message: "empty key".into() });
            }
            if !KNOWN_KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            let value = value.trim().to_string();
            if let Some(prev) = entries.insert(key.to_string(), Entry { line, value }) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key `{key}` (first set on line {})", prev.line),
                });
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownKeys(unknown));
        }
        Ok(Self { entries })
    }

    /// Sets or replaces one key, as a command-line override would.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::UnknownKeys(vec![key.to_string()]));
        }
        self.entries.insert(key.to_string(), Entry { line: 0, value: value.trim().to_string() });
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: 0, message: format!("override `{pair}` is not `key=value`") })?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn typed<T: FromStr>(&self, key: &'static str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::constraint(key, format!("cannot parse `{v}`: {e}"))))
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &'static str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<T>().map_err(|e| Error::constraint(key, format!("cannot parse `{s}`: {e}"))))
                    .collect()
            })
            .transpose()
    }

    /// Builds and validates the sweep specification.
    pub fn into_spec(self) -> Result<SweepSpec> {
        let mut spec = SweepSpec::default();
        let base = &mut spec.base;

        if let Some(v) = self.typed("seed")? {
            base.seed = v;
        }
        if let Some(v) = self.typed("n_devices")? {
            base.n_devices = v;
        }
        if let Some(v) = self.typed("spread_len")? {
            base.spread_len = v;
        }
        if let Some(v) = self.typed("n_data_symbols")? {
            base.n_data_symbols = v;
        }
        match self.list::<f64>("activity_prob")? {
            Some(ps) if ps.len() == 1 => base.activity_prob = vec![ps[0]; base.n_devices],
            Some(ps) => base.activity_prob = ps,
            None => base.activity_prob = vec![0.1; base.n_devices],
        }
        if let Some(v) = self.typed("cell_radius_km")? {
            base.cell_radius_km = v;
        }
        if let Some(v) = self.typed("min_distance_km")? {
            base.min_distance_km = v;
        }
        if let Some(v) = self.typed("tx_power_dbm")? {
            base.tx_power_dbm = v;
        }
        if let Some(v) = self.typed("noise_psd_dbm_hz")? {
            base.noise_psd_dbm_hz = v;
        }
        if let Some(v) = self.typed("bandwidth_hz")? {
            base.bandwidth_hz = v;
        }
        if let Some(v) = self.get("alphabet") {
            base.alphabet = Alphabet::from_name(v)
                .ok_or_else(|| Error::constraint("alphabet", format!("unknown alphabet `{v}` (expected bpsk, qpsk or qam16)")))?;
        }
        if let Some(parts) = self.list::<f64>("pilot_symbol")? {
            base.pilot_symbol = match parts.as_slice() {
                [re] => C64::new(*re, 0.0),
                [re, im] => C64::new(*re, *im),
                _ => return Err(Error::constraint("pilot_symbol", "expected `re` or `re, im`")),
            };
        }
        if let Some(v) = self.get("spreading") {
            base.spreading = SpreadingEnsemble::from_name(v)
                .ok_or_else(|| Error::constraint("spreading", format!("unknown ensemble `{v}` (expected gaussian or bernoulli)")))?;
        }
        if let Some(v) = self.get("mmse.regularizer") {
            base.regularizer = Regularizer::from_name(v)
                .ok_or_else(|| Error::constraint("mmse.regularizer", format!("unknown regularizer `{v}` (expected scaled or literal)")))?;
        }
        if let Some(v) = self.typed("ep.max_iters")? {
            base.ep.max_iters = v;
        }
        if let Some(v) = self.typed("ep.tol")? {
            base.ep.tol = v;
        }
        if let Some(v) = self.typed("ep.damping")? {
            base.ep.damping = v;
        }
        if let Some(v) = self.typed("ep.min_site_variance")? {
            base.ep.min_site_variance = v;
        }

        let bl = &mut spec.baseline;
        match self.get("baseline.omp_max_atoms") {
            None | Some("auto") => {}
            Some(_) => bl.omp_max_atoms = self.typed("baseline.omp_max_atoms")?,
        }
        if let Some(v) = self.typed("baseline.omp_residual_factor")? {
            bl.omp_residual_factor = v;
        }
        if let Some(v) = self.typed("baseline.amp_max_iters")? {
            bl.amp_max_iters = v;
        }
        if let Some(v) = self.typed("baseline.amp_threshold_mult")? {
            bl.amp_threshold_mult = v;
        }
        if let Some(v) = self.typed("baseline.amp_damping")? {
            bl.amp_damping = v;
        }

        if let Some(v) = self.typed::<SweepVariable>("sweep.variable")? {
            spec.variable = v;
        }
        match self.list::<f64>("sweep.values")? {
            Some(vs) => spec.values = vs,
            None => spec.values = vec![default_value(spec.variable, &spec.base)],
        }
        if let Some(v) = self.typed("sweep.trials_per_point")? {
            spec.trials_per_point = v;
        }
        if let Some(mut algs) = self.list::<Algorithm>("sweep.algorithms")? {
            algs.sort();
            algs.dedup();
            spec.algorithms = algs;
        }
        if let Some(v) = self.get("sweep.output") {
            if v.is_empty() {
                return Err(Error::constraint("sweep.output", "must not be empty"));
            }
            spec.output_path = PathBuf::from(v);
        }
        if let Some(v) = self.typed("sweep.record_wall_time")? {
            spec.record_wall_time = v;
        }

        spec.validate()?;
        Ok(spec)
    }
}

fn default_value(var: SweepVariable, base: &SystemConfig) -> f64 {
    match var {
        SweepVariable::TxPowerDbm => base.tx_power_dbm,
        SweepVariable::SpreadLen => base.spread_len as f64,
        SweepVariable::ActivityProb => base.activity_prob.first().copied().unwrap_or(0.1),
        SweepVariable::EpIters => base.ep.max_iters as f64,
    }
}

/// Parses config text into a validated spec.
pub fn parse_config(text: &str) -> Result<SweepSpec> {
    ConfigMap::parse(text)?.into_spec()
}

/// Reads the raw key/value map of a config file.
pub fn read_config_map(path: &Path) -> Result<ConfigMap> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    ConfigMap::parse(&text)
}

/// Loads and validates a config file.
pub fn load_config(path: &Path) -> Result<SweepSpec> {
    read_config_map(path)?.into_spec()
}
