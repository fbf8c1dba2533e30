//! Rollouts, disentanglement analysis and adaptation curves.

mod adaptation;
mod disentangle;
mod rollout;

pub use adaptation::{
    adapt_composition, adaptation_curve, adaptation_subset, curve_csv, AdaptationConfig, CurveRow,
    METHOD_COMET, METHOD_GNN,
};
pub use disentangle::{best_matching, disentanglement_matrix, DisentanglementMatrix};
pub use rollout::{mean_rollout, rollout, RolloutResult, RolloutSummary, Selector};
