use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dlab_core::Tolerances;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SEED_ENV: &str = "DLAB_SEED";

fn default_z() -> f64 {
    3.0
}

/// Global settings shared by every subcommand plus its `experiment` section.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig<P> {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Monte Carlo pass threshold in standard errors.
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub experiment: P,
}

impl<P: Default> Default for ExperimentConfig<P> {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            out: None,
            jobs: None,
            tolerances: Tolerances::default(),
            z: default_z(),
            experiment: P::default(),
        }
    }
}

pub struct Loaded<P> {
    pub config: ExperimentConfig<P>,
    /// SHA-256 of the config file bytes, or of the empty string without a file.
    pub sha256: String,
    /// Relative paths inside the config resolve against this directory.
    pub base_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses a config, reporting schema errors with the offending field path.
pub fn parse<P: DeserializeOwned + Default>(text: &str) -> Result<ExperimentConfig<P>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig<P> = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("config error at `{path}`: {}", e.into_inner())
    })?;
    if !(config.z.is_finite() && config.z >= 0.0) {
        bail!("config error at `z`: must be a non-negative number");
    }
    if config.jobs == Some(0) {
        bail!("config error at `jobs`: must be at least 1");
    }
    Ok(config)
}

pub fn load<P: DeserializeOwned + Default>(path: Option<&Path>) -> Result<Loaded<P>> {
    match path {
        None => Ok(Loaded {
            config: ExperimentConfig::default(),
            sha256: sha256_hex(b""),
            base_dir: PathBuf::from("."),
        }),
        Some(p) => {
            let bytes =
                std::fs::read(p).with_context(|| format!("reading config {}", p.display()))?;
            let text = std::str::from_utf8(&bytes)
                .with_context(|| format!("config {} is not UTF-8", p.display()))?;
            let config = parse(text).with_context(|| format!("in {}", p.display()))?;
            let base_dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok(Loaded {
                config,
                sha256: sha256_hex(&bytes),
                base_dir,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Env,
    Config,
    Default,
}

/// `--seed` beats `DLAB_SEED`, which beats the config; the fallback is 0.
pub fn resolve_seed(
    flag: Option<u64>,
    env: Option<&str>,
    config: Option<u64>,
) -> Result<(u64, SeedSource)> {
    if let Some(s) = flag {
        return Ok((s, SeedSource::Flag));
    }
    if let Some(v) = env {
        let s = v
            .trim()
            .parse::<u64>()
            .map_err(|_| anyhow!("{SEED_ENV}={v:?} is not an unsigned 64-bit integer"))?;
        return Ok((s, SeedSource::Env));
    }
    match config {
        Some(s) => Ok((s, SeedSource::Config)),
        None => Ok((0, SeedSource::Default)),
    }
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
