//! `key=value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key any subcommand reads; anything else in a file is a typo.
pub const KNOWN_KEYS: &[&str] = &[
    "model", "mu", "sigma", "s0", "kappa", "theta", "xi", "rho", "v0", "paths", "steps", "dt", "seed",
    "antithetic", "hedge", "atm-ttm", "kind", "rate", "epochs", "batch-size", "lr", "strike-low", "strike-high",
    "ttm-low", "ttm-high", "train-paths", "val-paths", "patience", "clip-norm", "abort-norm", "runs", "tag", "out-dir",
    "engine", "spots", "strikes", "ttms", "vols", "spot", "strike", "ttm",
];

/// Parse `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str, origin: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected key=value, got `{line}`", i + 1)))?;
        let k = k.trim();
        if !KNOWN_KEYS.contains(&k) {
            return Err(CliError::Usage(format!("{origin}:{}: unknown key `{k}`", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Flag values over file values over defaults.
#[derive(Debug, Default, Clone)]
pub struct Layers {
    file: BTreeMap<String, String>,
    origin: String,
}

impl Layers {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Layers::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Ok(Layers {
                    origin: p.display().to_string(),
                    file: parse_kv(&text, &p.display().to_string())?,
                })
            }
        }
    }

    pub fn from_map(file: BTreeMap<String, String>, origin: &str) -> Self {
        Layers {
            file,
            origin: origin.into(),
        }
    }


    /// Fill `key` unless the file already sets it.
    pub fn set_default(&mut self, key: &str, value: String) {
        self.file.entry(key.to_string()).or_insert(value);
    }

    /// The flag if given, else the file value, else `None`.
    pub fn opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("{}: bad value `{v}` for `{key}`", self.origin))),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required value --{key}")))
    }

    /// Comma-separated list, or `lo:hi:step` for an inclusive range.
    pub fn list(&self, key: &str, flag: Option<String>) -> Result<Option<Vec<f64>>, CliError> {
        self.opt::<String>(key, flag)?.map(|s| parse_list(&s, key)).transpose()
    }
}

pub fn parse_list(s: &str, key: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("bad list `{s}` for `{key}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let [lo, hi, step]: [f64; 3] = [parts[0], parts[1], parts[2]]
            .map(|p| p.trim().parse::<f64>().unwrap_or(f64::NAN));
        if !(lo.is_finite() && hi >= lo && step > 0.0) {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        // Round to the step's decimals so 0.24:0.48:0.04 yields 0.28, not 0.28000000000000003.
        let scale = 1e9;
        return Ok((0..=n).map(|i| ((lo + step * i as f64) * scale).round() / scale).collect());
    }
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect()
}
