//! Hyper-parameters and the `key = value` config file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Mini-batch SGD settings for the embedder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 128,
            epochs_per_round: 5,
        }
    }
}

/// All tunables of the training objective and the alternating optimizer.
///
/// `alpha`, `lambda` and `gamma` weight the quantization, center and
/// discriminative terms of the total loss. `zeta` is the center learning
/// rate and `k_perturb` the number of subindices perturbed per local-search
/// restart while encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub k_perturb: usize,
    pub m: usize,
    pub h: usize,
    pub p: usize,
    pub sgd: SgdSettings,
    /// Alternation rounds of the outer optimizer.
    pub rounds: usize,
    /// Local-search restarts per encoded point.
    pub sls_rounds: usize,
    /// Full coordinate passes per local search.
    pub icm_iters: usize,
    /// Proximal ridge applied to the codebook normal matrix.
    pub ridge: f64,
    /// Nonzero budget for sparse codebooks. `None` keeps codebooks dense.
    pub sparsity_eps: Option<usize>,
    /// Optional early stop when the relative total-loss improvement between
    /// rounds falls below this threshold.
    pub stop_threshold: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.01,
            gamma: 0.1,
            zeta: 0.5,
            k_perturb: 4,
            m: 4,
            h: 256,
            p: 256,
            sgd: SgdSettings::default(),
            rounds: 5,
            sls_rounds: 8,
            icm_iters: 3,
            ridge: 1e-6,
            sparsity_eps: None,
            stop_threshold: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.lambda < 0.0 || self.gamma < 0.0 {
            return Err(Error::Invalid(
                "alpha, lambda and gamma must be non-negative".into(),
            ));
        }
        if !(self.zeta > 0.0 && self.zeta <= 1.0) {
            return Err(Error::Invalid(format!(
                "zeta must be in (0, 1], got {}",
                self.zeta
            )));
        }
        if self.m == 0 || self.h < 2 || self.h > 256 || self.p == 0 {
            return Err(Error::Invalid(format!(
                "need m >= 1, 2 <= h <= 256, p >= 1, got m={} h={} p={}",
                self.m, self.h, self.p
            )));
        }
        if self.sgd.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be >= 1".into()));
        }
        if self.sls_rounds == 0 || self.icm_iters == 0 {
            return Err(Error::Invalid(
                "sls_rounds and icm_iters must be >= 1".into(),
            ));
        }
        if self.ridge < 0.0 {
            return Err(Error::Invalid("ridge must be >= 0".into()));
        }
        if let Some(eps) = self.sparsity_eps {
            let budget = self.m * self.h * self.p;
            if eps == 0 || eps > budget {
                return Err(Error::Invalid(format!(
                    "sparsity_eps must be in (0, m*h*p] = (0, {budget}], got {eps}"
                )));
            }
        }
        Ok(())
    }

    /// Effective number of perturbed positions, clipped to `m`.
    pub fn effective_k(&self) -> usize {
        self.k_perturb.min(self.m)
    }

    /// Code length in bits, `m * log2(h)`.
    pub fn bits(&self) -> usize {
        self.m * (self.h as f64).log2().round() as usize
    }

    /// Render as a config file string; parsing it back reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "zeta = {}", self.zeta);
        let _ = writeln!(s, "k_perturb = {}", self.k_perturb);
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "h = {}", self.h);
        let _ = writeln!(s, "p = {}", self.p);
        let _ = writeln!(s, "learning_rate = {}", self.sgd.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.sgd.momentum);
        let _ = writeln!(s, "weight_decay = {}", self.sgd.weight_decay);
        let _ = writeln!(s, "batch_size = {}", self.sgd.batch_size);
        let _ = writeln!(s, "epochs_per_round = {}", self.sgd.epochs_per_round);
        let _ = writeln!(s, "rounds = {}", self.rounds);
        let _ = writeln!(s, "sls_rounds = {}", self.sls_rounds);
        let _ = writeln!(s, "icm_iters = {}", self.icm_iters);
        let _ = writeln!(s, "ridge = {}", self.ridge);
        if let Some(eps) = self.sparsity_eps {
            let _ = writeln!(s, "sparsity_eps = {eps}");
        }
        if let Some(t) = self.stop_threshold {
            let _ = writeln!(s, "stop_threshold = {t}");
        }
        s
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "alpha",
    "lambda",
    "gamma",
    "zeta",
    "k_perturb",
    "m",
    "h",
    "p",
    "learning_rate",
    "momentum",
    "weight_decay",
    "batch_size",
    "epochs_per_round",
    "rounds",
    "sls_rounds",
    "icm_iters",
    "ridge",
    "sparsity_eps",
    "stop_threshold",
];

/// Parse `key = value` lines. `#` starts a comment, blank lines are ignored.
pub fn parse_config_str(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        let value = value.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::Config(format!(
                "unknown key `{key}` on line {}; valid keys: {}",
                lineno + 1,
                CONFIG_KEYS.join(", ")
            )));
        }
        map.insert(key.to_string(), value.to_string());
    }
    Ok(map)
}

pub fn load_config_file(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
}

/// Apply config-file entries on top of `hp`. Callers overlay explicit CLI
/// flags afterwards, so flags win over the file.
pub fn apply_config(hp: &mut HyperParams, entries: &BTreeMap<String, String>) -> Result<()> {
    for (key, value) in entries {
        match key.as_str() {
            "alpha" => hp.alpha = parse_as(key, value)?,
            "lambda" => hp.lambda = parse_as(key, value)?,
            "gamma" => hp.gamma = parse_as(key, value)?,
            "zeta" => hp.zeta = parse_as(key, value)?,
            "k_perturb" => hp.k_perturb = parse_as(key, value)?,
            "m" => hp.m = parse_as(key, value)?,
            "h" => hp.h = parse_as(key, value)?,
            "p" => hp.p = parse_as(key, value)?,
            "learning_rate" => hp.sgd.learning_rate = parse_as(key, value)?,
            "momentum" => hp.sgd.momentum = parse_as(key, value)?,
            "weight_decay" => hp.sgd.weight_decay = parse_as(key, value)?,
            "batch_size" => hp.sgd.batch_size = parse_as(key, value)?,
            "epochs_per_round" => hp.sgd.epochs_per_round = parse_as(key, value)?,
            "rounds" => hp.rounds = parse_as(key, value)?,
            "sls_rounds" => hp.sls_rounds = parse_as(key, value)?,
            "icm_iters" => hp.icm_iters = parse_as(key, value)?,
            "ridge" => hp.ridge = parse_as(key, value)?,
            "sparsity_eps" => hp.sparsity_eps = Some(parse_as(key, value)?),
            "stop_threshold" => hp.stop_threshold = Some(parse_as(key, value)?),
            _ => unreachable!("key validated by parse_config_str"),
        }
    }
    Ok(())
}

/// Derive `(m, h)` from a bit budget: `bits = m * log2(h)`.
pub fn bits_to_m(bits: usize, h: usize) -> Result<usize> {
    if !h.is_power_of_two() || h < 2 {
        return Err(Error::Invalid(format!("h = {h} must be a power of two")));
    }
    let log2h = h.trailing_zeros() as usize;
    if bits == 0 || !bits.is_multiple_of(log2h) {
        return Err(Error::Invalid(format!(
            "bits = {bits} is not divisible by log2(h) = {log2h}"
        )));
    }
    Ok(bits / log2h)
}
