//! TOML configuration. Command-line flags override file values, which
//! override the built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub bench: BenchConfig,
    pub render: RenderConfig,
    pub convert: ConvertConfig,
    pub elo: EloSection,
    pub review: ReviewConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub corpus: Option<PathBuf>,
    pub outputs: Option<PathBuf>,
    pub iterations: Option<usize>,
    /// "test" or "page"
    pub resample: Option<String>,
    pub lenient: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    /// Command line of the render bridge, e.g. `["node", "bridge/katex.js"]`.
    pub bridge_cmd: Option<Vec<String>>,
    pub pool: Option<usize>,
    /// Recorded renderings used instead of a live bridge.
    pub fixtures: Option<PathBuf>,
    pub tau: Option<f64>,
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertConfig {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_retries: Option<u32>,
    pub temperatures: Option<Vec<f64>>,
    pub char_limit: Option<usize>,
    pub min_char_limit: Option<usize>,
    pub max_prompt_tokens: Option<usize>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub use_schema: Option<bool>,
    /// "raw" or "empty"
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EloSection {
    pub k: Option<f64>,
    pub shuffles: Option<usize>,
    pub resamples: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    pub addr: Option<String>,
    pub judgments: Option<PathBuf>,
    pub pairs: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// First of flag, file value, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn positive<T: PartialOrd + Default + std::fmt::Display>(name: &str, v: T) -> Result<T> {
    if v <= T::default() {
        bail!("{name} must be positive, got {v}");
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let c: Config = toml::from_str(
            "seed = 3\n[bench]\niterations = 500\n[convert]\ntemperatures = [0.1, 0.4]\nfallback = \"empty\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.bench.iterations, Some(500));
        assert_eq!(c.convert.temperatures, Some(vec![0.1, 0.4]));
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(toml::from_str::<Config>("[bench]\nitertions = 5\n").is_err());
    }

    #[test]
    fn precedence() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick(None, None, 3), 3);
        assert!(positive("k", 0.0).is_err());
    }
}
