//! `key = value` configuration files and their merge with command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use frameless_core::{BetaGrid, SlotType, SystemConfig};

/// Failure that maps onto a process exit code.
#[derive(Debug)]
pub enum CliError {
    Config { field: String, reason: String },
    Budget(String),
    Io(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl fmt::Display) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config { .. } => 2,
            Self::Budget(_) => 3,
            Self::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config { field, reason } => write!(f, "invalid `{field}`: {reason}"),
            Self::Budget(msg) => write!(f, "state budget exceeded: {msg}"),
            Self::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<frameless_core::Error> for CliError {
    fn from(e: frameless_core::Error) -> Self {
        use frameless_core::Error as E;
        match e {
            E::InvalidConfig { field, reason } => Self::config(field, reason),
            E::InvalidProbability { name, .. } => Self::config(name, e),
            E::BudgetExceeded { .. } => Self::Budget(e.to_string()),
            E::InvalidDistribution(ref msg) => Self::config("degrees", msg),
            other => Self::config("input", other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Keys accepted in configuration files.
const KNOWN_KEYS: &[&str] = &[
    "n",
    "slots",
    "trials",
    "seed",
    "out",
    "prune_eps",
    "budget",
    "strict_thinning",
    "beta_grid",
    "t",
    "m_target",
    "estimator",
    "frame",
    "degrees",
    "plot",
];

/// Values read from a configuration file, keyed with underscores.
#[derive(Debug, Default, Clone)]
pub struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(
                    "config",
                    format!("line {}: expected `key = value`", i + 1),
                ));
            };
            let key = key.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::config(key, "unknown configuration key"));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    /// Flag value if given, else the parsed file value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::config(key.replace('_', "-"), format!("`{v}`: {e}"))),
        }
    }

    pub fn require<T>(&self, flag: Option<T>, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::config(key.replace('_', "-"), "missing value"))
    }

    pub fn flag(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

/// `60x2.68, 10x5` into slot types.
pub fn parse_slots(text: &str) -> CliResult<Vec<SlotType>> {
    let mut types = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (count, beta) = part
            .split_once(['x', 'X'])
            .ok_or_else(|| CliError::config("slots", format!("`{part}` is not COUNTxBETA")))?;
        let count: usize = count
            .trim()
            .parse()
            .map_err(|e| CliError::config("slots", format!("count in `{part}`: {e}")))?;
        let beta: f64 = beta
            .trim()
            .parse()
            .map_err(|e| CliError::config("slots", format!("mean degree in `{part}`: {e}")))?;
        types.push(SlotType::new(count, beta));
    }
    if types.is_empty() {
        return Err(CliError::config("slots", "no slot types given"));
    }
    Ok(types)
}

pub fn system(settings: &FileSettings, n: Option<usize>, slots: Option<String>) -> CliResult<SystemConfig> {
    let n: usize = settings.require(n, "n")?;
    let slots: String = settings.require(slots, "slots")?;
    Ok(SystemConfig::new(n, parse_slots(&slots)?)?)
}

/// `lower:upper:step`.
pub fn parse_grid(text: &str) -> CliResult<BetaGrid> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::config("beta-grid", format!("`{text}` is not LOWER:UPPER:STEP")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p
            .parse()
            .map_err(|e| CliError::config("beta-grid", format!("`{p}`: {e}")))?;
    }
    Ok(BetaGrid::new(v[0], v[1], v[2])?)
}

/// `2:0.25,3:0.6,8:0.15` (degree:probability) into a coefficient vector.
pub fn parse_degrees(text: &str) -> CliResult<Vec<f64>> {
    let mut coeffs = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (d, p) = part
            .split_once(':')
            .ok_or_else(|| CliError::config("degrees", format!("`{part}` is not DEGREE:PROB")))?;
        let d: usize = d
            .trim()
            .parse()
            .map_err(|e| CliError::config("degrees", format!("`{part}`: {e}")))?;
        let p: f64 = p
            .trim()
            .parse()
            .map_err(|e| CliError::config("degrees", format!("`{part}`: {e}")))?;
        if coeffs.len() <= d {
            coeffs.resize(d + 1, 0.0);
        }
        coeffs[d] += p;
    }
    Ok(coeffs)
}

/// `n=100,trials=500` overrides for figure reproduction.
pub fn parse_scale(text: &str) -> CliResult<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::config("scale", format!("`{part}` is not KEY=VALUE")))?;
        let k = k.trim();
        if !["n", "trials"].contains(&k) {
            return Err(CliError::config("scale", format!("unknown key `{k}`")));
        }
        let v: usize = v
            .trim()
            .parse()
            .map_err(|e| CliError::config("scale", format!("`{part}`: {e}")))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}
