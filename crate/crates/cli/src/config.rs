use std::path::Path;

use memxfer::fgat::FgatConfig;
use memxfer::metrics::EvalOptions;
use memxfer::synth::SynthConfig;
use memxfer::tgn::TgnConfig;
use memxfer::transfer::TransferConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a command may read from a config file. Missing sections and
/// keys take their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub pool_size: PoolSize,
    pub tgn: TgnConfig,
    pub fgat: FgatConfig,
    pub eval: EvalOptions,
    pub nt_epochs: Option<usize>,
    pub ft_epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoolSize(pub usize);

impl Default for PoolSize {
    fn default() -> Self {
        PoolSize(4)
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn transfer(&self, nt_epochs: Option<usize>, ft_epochs: Option<usize>) -> TransferConfig {
        let d = TransferConfig::default();
        TransferConfig {
            tgn: self.tgn.clone(),
            nt_epochs: nt_epochs.or(self.nt_epochs).unwrap_or(d.nt_epochs),
            ft_epochs: ft_epochs.or(self.ft_epochs).unwrap_or(d.ft_epochs),
            eval: self.eval.clone(),
        }
    }
}

/// `"0.1,0.45,0.45"` → `(0.1, 0.45, 0.45)`.
pub fn parse_split(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts = parse_floats(s)?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Invalid(format!(
            "split {s:?} needs three fractions"
        ))),
    }
}

pub fn parse_floats(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Invalid(format!("not a number: {p:?}")))
        })
        .collect()
}

/// `"3"`, `"1..5"` (inclusive) or `"1,4,9"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Invalid(format!("bad seed list {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}
