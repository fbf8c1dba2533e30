//! Rollout error in an unseen environment as a function of how many of its
//! episodes each method may learn from.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::{mean_rollout, RolloutSummary, Selector};
use crate::baseline::{finetune_baseline, BaselineConfig, GnnParams};
use crate::competition::MechanismBank;
use crate::composition::{extract_labels, train_composition, CompositionConfig, ConfidenceBank};
use crate::dataset::Episode;
use crate::nn::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptationConfig {
    pub n_grid: Vec<usize>,
    pub horizon: usize,
    pub label_horizon: usize,
    /// Adds `n = 0` rows: random selection for the mechanisms, the
    /// pretrained model for the baseline.
    pub control: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![1, 2, 5, 10, 20, 50, 100, 1000],
            horizon: 10,
            label_horizon: 10,
            control: true,
        }
    }
}

pub const METHOD_COMET: &str = "comet";
pub const METHOD_GNN: &str = "gnn_finetune";

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub mse: Vec<f64>,
    pub mean_mse: f64,
    pub mean_position_mse: f64,
}

impl CurveRow {
    fn new(method: &str, n: usize, seed: u64, s: &RolloutSummary) -> Self {
        Self {
            method: method.to_string(),
            n,
            seed,
            mse: s.mse.clone(),
            mean_mse: s.mean_mse(),
            mean_position_mse: s.position_mse.iter().sum::<f64>() / s.position_mse.len() as f64,
        }
    }
}

pub fn curve_csv(rows: &[CurveRow], horizon: usize) -> String {
    let mut s = String::from("method,n,seed");
    for h in 1..=horizon {
        let _ = write!(s, ",mse_step_{h}");
    }
    s.push_str(",mean_mse,mean_position_mse\n");
    for r in rows {
        let _ = write!(s, "{},{},{}", r.method, r.n, r.seed);
        for v in &r.mse {
            let _ = write!(s, ",{v:.9e}");
        }
        let _ = writeln!(s, ",{:.9e},{:.9e}", r.mean_mse, r.mean_position_mse);
    }
    s
}

/// The first `n` episodes of a seed-specific shuffle of the pool.
pub fn adaptation_subset(pool: &[Episode], n: usize, seed: u64) -> Result<Vec<Episode>> {
    if n > pool.len() {
        return Err(Error::Config(format!(
            "adaptation budget {n} exceeds the pool of {}",
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xada9));
    Ok(order[..n].iter().map(|&i| pool[i].clone()).collect())
}

/// Composition on frozen mechanisms from `n` episodes; returns the trained
/// confidence bank.
pub fn adapt_composition(
    bank: &MechanismBank,
    episodes: &[Episode],
    label_horizon: usize,
    config: &CompositionConfig,
) -> Result<ConfidenceBank> {
    let mut conf = ConfidenceBank::new(
        bank.len(),
        bank.d(),
        &config.hidden,
        config.seed,
        AdamConfig::with_lr(config.lr),
    )?;
    let labels = extract_labels(bank, episodes, label_horizon)?;
    train_composition(&mut conf, &labels, episodes, config)?;
    Ok(conf)
}

/// One seed's rows: for every budget, composition-only adaptation and full
/// baseline finetuning, both scored on the same test episodes.
pub fn adaptation_curve(
    bank: &MechanismBank,
    pretrained: &GnnParams,
    pool: &[Episode],
    test: &[Episode],
    seed: u64,
    config: &AdaptationConfig,
    composition: &CompositionConfig,
    finetune: &BaselineConfig,
) -> Result<Vec<CurveRow>> {
    let h = config.horizon;
    let mut rows = Vec::new();
    if config.control {
        let random = mean_rollout(&Selector::Random { bank, seed }, test, h)?;
        rows.push(CurveRow::new(METHOD_COMET, 0, seed, &random));
        let frozen = mean_rollout(&Selector::Baseline { gnn: pretrained }, test, h)?;
        rows.push(CurveRow::new(METHOD_GNN, 0, seed, &frozen));
    }
    for &n in &config.n_grid {
        let episodes = adaptation_subset(pool, n, seed)?;
        let comp_cfg = CompositionConfig {
            seed: composition.seed ^ seed,
            ..composition.clone()
        };
        let conf = adapt_composition(bank, &episodes, config.label_horizon, &comp_cfg)?;
        let comet = mean_rollout(&Selector::Confidence { bank, conf: &conf }, test, h)?;
        rows.push(CurveRow::new(METHOD_COMET, n, seed, &comet));

        let mut gnn = pretrained.clone();
        let ft_cfg = BaselineConfig {
            seed: finetune.seed ^ seed,
            ..finetune.clone()
        };
        finetune_baseline(&mut gnn, &episodes, &ft_cfg)?;
        let base = mean_rollout(&Selector::Baseline { gnn: &gnn }, test, h)?;
        rows.push(CurveRow::new(METHOD_GNN, n, seed, &base));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_mean_is_mean_of_steps() {
        let s = RolloutSummary {
            mse: vec![1.0, 2.0, 6.0],
            position_mse: vec![0.0, 0.0, 3.0],
        };
        let row = CurveRow::new(METHOD_COMET, 5, 1, &s);
        assert_eq!(row.mean_mse, 3.0);
        assert_eq!(row.mean_position_mse, 1.0);
        let csv = curve_csv(&[row], 3);
        assert!(csv.starts_with(
            "method,n,seed,mse_step_1,mse_step_2,mse_step_3,mean_mse,mean_position_mse\n"
        ));
        assert!(csv.contains(
            "\ncomet,5,1,1.000000000e0,2.000000000e0,6.000000000e0,3.000000000e0,1.000000000e0\n"
        ));
    }
}
