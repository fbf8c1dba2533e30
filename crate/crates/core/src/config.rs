//! Experiment configuration (TOML).
//!
//! ```toml
//! [experiment]
//! domain = "particles"
//! out = "runs/particles"
//! seed = 0
//! train_envs = ["particles-1", "particles-2"]
//! adapt_env = "particles-adapt"
//!
//! [data]
//! episodes_per_env = 2000
//!
//! [competition]
//! mechanisms = 6
//! ```
//!
//! Every section except `[experiment]` is optional and falls back to its
//! defaults. Unknown keys anywhere are rejected. Extra environments can be
//! declared with `[[env]]` tables and referenced by `env_id`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineConfig;
use crate::competition::CompetitionConfig;
use crate::composition::CompositionConfig;
use crate::envs::{builtin, builtin_names, Domain, EnvSpec};
use crate::eval::AdaptationConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub domain: Domain,
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub train_envs: Vec<String>,
    pub adapt_env: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub episodes_per_env: usize,
    pub episode_len: usize,
    /// Per-environment fraction of training episodes held out for monitoring.
    pub holdout_frac: f64,
    /// Adaptation pool size; must cover the largest adaptation budget.
    pub adapt_pool: usize,
    pub test_episodes: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            episodes_per_env: 2000,
            episode_len: 50,
            holdout_frac: 0.05,
            adapt_pool: 1000,
            test_episodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Adaptation episodes for the single-budget `train-composition` and
    /// `finetune-baseline` commands.
    pub adapt_episodes: usize,
    pub rollout_horizon: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            adapt_episodes: 50,
            rollout_horizon: 10,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub competition: CompetitionConfig,
    #[serde(default)]
    pub composition: CompositionConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default = "finetune_default")]
    pub finetune: BaselineConfig,
    #[serde(default)]
    pub adaptation: AdaptationConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub env: Vec<EnvSpec>,
}

fn finetune_default() -> BaselineConfig {
    BaselineConfig {
        steps: 5000,
        log_interval: 100,
        ..BaselineConfig::default()
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Built-ins first, then `[[env]]` declarations.
    pub fn env(&self, id: &str) -> Result<EnvSpec> {
        if let Some(spec) = self.env.iter().find(|e| e.env_id == id) {
            return Ok(spec.clone());
        }
        builtin(id).ok_or_else(|| {
            Error::Config(format!(
                "unknown environment '{id}' (built-ins: {})",
                builtin_names().join(", ")
            ))
        })
    }

    pub fn train_specs(&self) -> Result<Vec<EnvSpec>> {
        self.experiment
            .train_envs
            .iter()
            .map(|id| self.env(id))
            .collect()
    }

    pub fn adapt_spec(&self) -> Result<EnvSpec> {
        self.env(&self.experiment.adapt_env)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.experiment.train_envs.is_empty() {
            return bad("experiment.train_envs is empty".into());
        }
        for spec in &self.env {
            spec.validate()?;
            if builtin(&spec.env_id).is_some() {
                return bad(format!(
                    "[[env]] '{}' shadows a built-in environment",
                    spec.env_id
                ));
            }
        }
        let domain = self.experiment.domain;
        for spec in self
            .train_specs()?
            .iter()
            .chain(std::iter::once(&self.adapt_spec()?))
        {
            if spec.domain != domain {
                return bad(format!(
                    "environment '{}' is not in the {domain:?} domain",
                    spec.env_id
                ));
            }
        }
        let d = &self.data;
        if d.episodes_per_env == 0 || d.episode_len < 2 {
            return bad("data: need episodes_per_env >= 1 and episode_len >= 2".into());
        }
        if !(0.0..1.0).contains(&d.holdout_frac) {
            return bad("data.holdout_frac must lie in [0, 1)".into());
        }
        if d.test_episodes == 0 {
            return bad("data.test_episodes must be >= 1".into());
        }
        let budget = self
            .adaptation
            .n_grid
            .iter()
            .copied()
            .chain([self.eval.adapt_episodes])
            .max()
            .unwrap_or(0);
        if budget > d.adapt_pool {
            return bad(format!(
                "data.adapt_pool = {} is smaller than the adaptation budget {budget}",
                d.adapt_pool
            ));
        }
        let horizon = self
            .competition
            .horizon
            .max(self.adaptation.label_horizon)
            .max(self.eval.rollout_horizon);
        if d.episode_len < horizon + 1 {
            return bad(format!(
                "data.episode_len = {} cannot hold a horizon of {horizon}",
                d.episode_len
            ));
        }
        if self.eval.seeds.is_empty() {
            return bad("eval.seeds is empty".into());
        }
        self.competition.validate()?;
        self.composition.validate()?;
        self.baseline.validate()?;
        self.finetune.validate()
    }

    /// Applies a `--seed` override to every seeded component.
    pub fn override_seed(&mut self, seed: u64) {
        self.experiment.seed = seed;
        self.competition.seed = seed;
        self.composition.seed = seed;
        self.baseline.seed = seed;
        self.finetune.seed = seed;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[experiment]
domain = "particles"
out = "runs/x"
train_envs = ["particles-1", "particles-5"]
adapt_env = "particles-adapt"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.competition, CompetitionConfig::default());
        assert_eq!(cfg.data.episode_len, 50);
        assert_eq!(cfg.train_specs().unwrap().len(), 2);
        let again = ExperimentConfig::parse(&cfg.to_toml(), Path::new("y.toml")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[competition]\nmechanisms = 4\nbogus = 1\n");
        let err = ExperimentConfig::parse(&text, Path::new("x.toml")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn cross_domain_env_is_rejected() {
        let text = MINIMAL.replace("particles-adapt", "lane-adapt");
        assert!(ExperimentConfig::parse(&text, Path::new("x.toml")).is_err());
    }

    #[test]
    fn custom_env_table() {
        let text = format!(
            "{}\n[[env]]\nenv_id = \"my-env\"\ndomain = \"particles\"\nroster = {{ random_colours = 2 }}\nrules = [{{ condition = \"always\", interaction = \"spiral_centre\" }}]\n",
            MINIMAL.replace("\"particles-5\"", "\"my-env\"")
        );
        let cfg = ExperimentConfig::parse(&text, Path::new("x.toml")).unwrap();
        assert_eq!(cfg.env("my-env").unwrap().k(), 2);
    }
}
