//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapedeform::inference::{MatchConfig, RefinementConfig};
use shapedeform::network::NetworkConfig;
use shapedeform::training::TrainingConfig;
use shapedeform::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingSection {
    pub orientations: usize,
    /// Template samples for correspondence extraction; unset means 20× the
    /// template vertex count.
    pub template_resolution: Option<usize>,
}

impl Default for MatchingSection {
    fn default() -> Self {
        let m = MatchConfig::default();
        Self {
            orientations: m.orientations,
            template_resolution: m.template_resolution,
        }
    }
}

/// Everything a subcommand needs besides its input and output paths. The
/// top-level `seed` is the single source of randomness and overrides
/// `training.seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub refinement: RefinementConfig,
    pub matching: MatchingSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Precondition(format!("{}: {e}", path.display())))
    }

    /// Fixes derived fields and checks every section.
    pub fn resolve(mut self) -> Result<Self> {
        self.training.seed = self.seed;
        self.network.validate()?;
        self.training.validate()?;
        self.refinement.validate()?;
        if self.matching.orientations == 0 {
            return Err(Error::Precondition("matching.orientations must be at least 1".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            orientations: self.matching.orientations,
            refinement: self.refinement.clone(),
            template_resolution: self.matching.template_resolution,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default().resolve().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 4\n[training]\nepochs_phase1 = 2\n[training.weights]\nlambda_lap = 0.0\n").unwrap();
        let c = c.resolve().unwrap();
        assert_eq!(c.training.epochs_phase1, 2);
        assert_eq!(c.training.seed, 4);
        assert_eq!(c.training.weights.lambda_lap, 0.0);
        assert_eq!(c.training.weights.lambda_edges, 5e-3);
        assert_eq!(c.training.batch_size, 32);
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```toml\n").unwrap() + 8;
        let end = start + readme[start..].find("```").unwrap();
        let c: RunConfig = toml::from_str(&readme[start..end]).unwrap();
        let c = c.resolve().unwrap();
        assert_eq!(c.training.batch_size, 4);
        assert_eq!(c.training.epochs_phase1, 25);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[training]\nepochs = 2\n").is_err());
    }
}
