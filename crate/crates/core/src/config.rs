//! Run configuration: an optional TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::seeker::{SeekParams, DEFAULT_BEAM};

pub const OUT_DIR_ENV: &str = "KGSEEK_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub scorer: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub refiner: Option<PathBuf>,
    pub beam: Option<usize>,
    pub tau_max: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub add_inverses: Option<bool>,
    pub emit_plots_data: Option<bool>,
    pub workers: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Values set in `flags` win; the rest come from `self`.
    pub fn overlay(self, flags: RunConfig) -> RunConfig {
        RunConfig {
            graph: flags.graph.or(self.graph),
            dataset: flags.dataset.or(self.dataset),
            scorer: flags.scorer.or(self.scorer),
            checkpoint: flags.checkpoint.or(self.checkpoint),
            refiner: flags.refiner.or(self.refiner),
            beam: flags.beam.or(self.beam),
            tau_max: flags.tau_max.or(self.tau_max),
            k: flags.k.or(self.k),
            seed: flags.seed.or(self.seed),
            out_dir: flags.out_dir.or(self.out_dir),
            add_inverses: flags.add_inverses.or(self.add_inverses),
            emit_plots_data: flags.emit_plots_data.or(self.emit_plots_data),
            workers: flags.workers.or(self.workers),
        }
    }

    pub fn seek_params(&self) -> Result<SeekParams, String> {
        let p = SeekParams {
            beam: self.beam.unwrap_or(DEFAULT_BEAM),
            tau_max: self.tau_max.unwrap_or(2),
            k: self.k.unwrap_or(1),
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn add_inverses(&self) -> bool {
        self.add_inverses.unwrap_or(false)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(0)
    }

    /// Flag or file value, then the environment variable, then `.`.
    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = RunConfig::from_toml("beam = 20\nk = 3\nseed = 7\nscorer = \"oracle\"\n").unwrap();
        let flags = RunConfig { beam: Some(5), ..Default::default() };
        let merged = file.overlay(flags);
        assert_eq!(merged.beam, Some(5));
        assert_eq!(merged.k, Some(3));
        assert_eq!(merged.seed(), 7);
        assert_eq!(merged.scorer.as_deref(), Some("oracle"));
    }

    #[test]
    fn bad_files_and_params() {
        assert!(RunConfig::from_toml("beem = 3").is_err());
        assert!(RunConfig::from_toml("beam = \"wide\"").is_err());
        let c = RunConfig { beam: Some(2), k: Some(3), ..Default::default() };
        assert!(c.seek_params().is_err());
        assert!(RunConfig { tau_max: Some(0), ..Default::default() }.seek_params().is_err());
        assert_eq!(RunConfig::default().seek_params().unwrap(), SeekParams::default());
    }

    #[test]
    fn explicit_out_dir_beats_environment() {
        let c = RunConfig { out_dir: Some("x".into()), ..Default::default() };
        assert_eq!(c.out_dir(), PathBuf::from("x"));
    }
}
