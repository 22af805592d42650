use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use serde::Deserialize;

use crate::Invalid;

/// Settings shared by every subcommand. The same fields can come from a TOML
/// file (`--config` or `SPANCODE_CONFIG`) or from flags; flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    /// Tabular order file
    #[arg(long, global = true, value_name = "FILE")]
    pub kb: Option<PathBuf>,
    /// Alphabetic Index term file (JSONL)
    #[arg(long, global = true, value_name = "FILE")]
    pub index: Option<PathBuf>,
    /// Chat-completions URL
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model name for the model-backed step of this subcommand
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Environment variable holding the endpoint's bearer token
    #[arg(long, global = true, value_name = "VAR")]
    pub api_key_env: Option<String>,
    /// Directory for the completion cache
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Answer model calls from a recorded transcript instead of an endpoint
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Concurrent model calls
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Shuffle seed for the mixed dataset
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Copies of each document sample in the mixed dataset
    #[arg(long, global = true)]
    pub duplication: Option<usize>,
    /// Most consolidated silver spans per code
    #[arg(long, global = true)]
    pub cap: Option<usize>,
    /// Similarity threshold for local evidence matching, in (0, 1]
    #[arg(long, global = true)]
    pub tau: Option<f64>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DUPLICATION: usize = 1;
pub const DEFAULT_TAU: f64 = 0.5;

impl ToolConfig {
    /// Reads a config file; relative paths in it are taken from the file's
    /// directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ToolConfig =
            toml::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.kb, &mut cfg.index, &mut cfg.cache_dir, &mut cfg.mock_transcript].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Fields set in `self` take precedence over `base`.
    pub fn over(self, base: ToolConfig) -> ToolConfig {
        ToolConfig {
            kb: self.kb.or(base.kb),
            index: self.index.or(base.index),
            endpoint: self.endpoint.or(base.endpoint),
            model: self.model.or(base.model),
            api_key_env: self.api_key_env.or(base.api_key_env),
            cache_dir: self.cache_dir.or(base.cache_dir),
            mock_transcript: self.mock_transcript.or(base.mock_transcript),
            temperature: self.temperature.or(base.temperature),
            parallelism: self.parallelism.or(base.parallelism),
            seed: self.seed.or(base.seed),
            duplication: self.duplication.or(base.duplication),
            cap: self.cap.or(base.cap),
            tau: self.tau.or(base.tau),
        }
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        for (name, path) in [("kb", &self.kb), ("index", &self.index), ("mock_transcript", &self.mock_transcript)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Invalid(format!("{name}: {} is not a readable file", p.display())));
                }
            }
        }
        if let Some(t) = self.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(Invalid(format!("temperature {t} outside [0, 2]")));
            }
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Invalid(format!("tau {t} outside (0, 1]")));
            }
        }
        for (name, v) in [("parallelism", self.parallelism), ("duplication", self.duplication), ("cap", self.cap)] {
            if v == Some(0) {
                return Err(Invalid(format!("{name} must be at least 1")));
            }
        }
        if let Some(url) = &self.endpoint {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                return Err(Invalid(format!("endpoint {url} is not an http(s) URL")));
            }
        }
        Ok(())
    }

    pub fn kb_path(&self) -> Result<&Path, Invalid> {
        self.kb.as_deref().ok_or_else(|| Invalid("no code hierarchy given (--kb or `kb` in the config)".into()))
    }

    pub fn index_path(&self) -> Result<&Path, Invalid> {
        self.index.as_deref().ok_or_else(|| Invalid("no Alphabetic Index given (--index or `index` in the config)".into()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn duplication(&self) -> usize {
        self.duplication.unwrap_or(DEFAULT_DUPLICATION)
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(DEFAULT_TAU)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spancode.toml");
        fs::write(&path, "kb = \"order.txt\"\nseed = 7\ntau = 0.8\nmodel = \"m\"\n").unwrap();
        let file = ToolConfig::load(&path).unwrap();
        assert_eq!(file.kb, Some(dir.path().join("order.txt")));
        let flags = ToolConfig {
            seed: Some(9),
            ..ToolConfig::default()
        };
        let merged = flags.over(file);
        assert_eq!(merged.seed(), 9);
        assert_eq!(merged.tau(), 0.8);
        assert_eq!(merged.model.as_deref(), Some("m"));
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "sede = 7\n").unwrap();
        assert!(ToolConfig::load(&path).unwrap_err().downcast_ref::<Invalid>().is_some());
        for bad in [
            ToolConfig { tau: Some(0.0), ..Default::default() },
            ToolConfig { tau: Some(f64::NAN), ..Default::default() },
            ToolConfig { temperature: Some(3.0), ..Default::default() },
            ToolConfig { parallelism: Some(0), ..Default::default() },
            ToolConfig { kb: Some(dir.path().join("missing.txt")), ..Default::default() },
            ToolConfig { endpoint: Some("localhost:8000".into()), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(ToolConfig { tau: Some(1.0), ..Default::default() }.validate().is_ok());
    }
}
