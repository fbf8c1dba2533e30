//! Autoregressive rollouts from a true initial state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{gnn_forward, GnnParams};
use crate::competition::MechanismBank;
use crate::composition::{select_pair, ConfidenceBank};
use crate::dataset::Episode;
use crate::envs::Domain;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Selector<'a> {
    /// Highest confidence score on the predicted current state.
    Confidence {
        bank: &'a MechanismBank,
        conf: &'a ConfidenceBank,
    },
    /// Pair whose one-step prediction from the predicted current state lands
    /// closest to the true next state; the truth only picks the pair.
    Oracle {
        bank: &'a MechanismBank,
    },
    Random {
        bank: &'a MechanismBank,
        seed: u64,
    },
    Baseline {
        gnn: &'a GnnParams,
    },
}

impl Selector<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Selector::Confidence { .. } => "confidence",
            Selector::Oracle { .. } => "oracle",
            Selector::Random { .. } => "random",
            Selector::Baseline { .. } => "baseline",
        }
    }

    fn d(&self) -> usize {
        match self {
            Selector::Confidence { bank, .. }
            | Selector::Oracle { bank }
            | Selector::Random { bank, .. } => bank.d(),
            Selector::Baseline { gnn } => gnn.d(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// `H x K x d`.
    pub predicted: Vec<f64>,
    pub mse: Vec<f64>,
    pub position_mse: Vec<f64>,
    /// Chosen `(m, j)` per step and object; empty for the baseline.
    pub trace: Vec<Vec<(usize, usize)>>,
}

impl RolloutResult {
    pub fn mean_mse(&self) -> f64 {
        self.mse.iter().sum::<f64>() / self.mse.len() as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn rollout(
    selector: &Selector,
    episode: &Episode,
    start: usize,
    horizon: usize,
) -> Result<RolloutResult> {
    let (k, d) = (episode.k, episode.d);
    if horizon == 0 || start + horizon >= episode.t {
        return Err(Error::Index(format!(
            "rollout of {horizon} steps from {start} overruns an episode of {} states",
            episode.t
        )));
    }
    if selector.d() != d {
        return Err(Error::Shape(format!(
            "model has d = {}, episode has d = {d}",
            selector.d()
        )));
    }
    let positions = Domain::from_state_dim(d)
        .map(|dom| dom.position_dims())
        .unwrap_or(0..d);
    let mut rng = match selector {
        Selector::Random { seed, .. } => {
            Some(ChaCha8Rng::seed_from_u64(seed ^ ((start as u64) << 40)))
        }
        _ => None,
    };
    let mut current = episode.state(start).to_vec();
    let mut result = RolloutResult {
        predicted: Vec::with_capacity(horizon * k * d),
        mse: Vec::with_capacity(horizon),
        position_mse: Vec::with_capacity(horizon),
        trace: Vec::with_capacity(horizon),
    };
    for h in 0..horizon {
        let truth = episode.state(start + h + 1);
        let mut next = current.clone();
        match selector {
            Selector::Baseline { gnn } => {
                let delta = gnn_forward(gnn, &current, k)?;
                next.iter_mut().zip(&delta).for_each(|(z, dz)| *z += dz);
            }
            Selector::Confidence { bank, .. }
            | Selector::Oracle { bank }
            | Selector::Random { bank, .. } => {
                let mut chosen = Vec::with_capacity(k);
                for i in 0..k {
                    let zi = &current[i * d..(i + 1) * d];
                    let (m, j, delta) = match selector {
                        Selector::Confidence { conf, .. } => {
                            let (m, j) = select_pair(conf, &current, k, i)?;
                            (
                                m,
                                j,
                                bank.predict_delta(m, zi, &current[j * d..(j + 1) * d])?,
                            )
                        }
                        Selector::Random { .. } => {
                            let rng = rng.as_mut().unwrap();
                            let (m, j) = (rng.gen_range(0..bank.len()), rng.gen_range(0..k));
                            (
                                m,
                                j,
                                bank.predict_delta(m, zi, &current[j * d..(j + 1) * d])?,
                            )
                        }
                        _ => {
                            let target = &truth[i * d..(i + 1) * d];
                            let mut best: Option<(f64, usize, usize, Vec<f64>)> = None;
                            for m in 0..bank.len() {
                                for j in 0..k {
                                    let delta =
                                        bank.predict_delta(m, zi, &current[j * d..(j + 1) * d])?;
                                    let pred: Vec<f64> =
                                        zi.iter().zip(&delta).map(|(a, b)| a + b).collect();
                                    let err = sq_dist(&pred, target);
                                    if best.as_ref().map_or(true, |b| err < b.0) {
                                        best = Some((err, m, j, delta));
                                    }
                                }
                            }
                            let (_, m, j, delta) = best.unwrap();
                            (m, j, delta)
                        }
                    };
                    for (z, dz) in next[i * d..(i + 1) * d].iter_mut().zip(&delta) {
                        *z += dz;
                    }
                    chosen.push((m, j));
                }
                result.trace.push(chosen);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation(format!(
                "rollout diverged at step {}",
                h + 1
            )));
        }
        result.mse.push(sq_dist(&next, truth) / (k * d) as f64);
        let pos: f64 = (0..k)
            .map(|i| {
                sq_dist(
                    &next[i * d + positions.start..i * d + positions.end],
                    &truth[i * d + positions.start..i * d + positions.end],
                )
            })
            .sum();
        result.position_mse.push(pos / (k * positions.len()) as f64);
        result.predicted.extend_from_slice(&next);
        current = next;
    }
    Ok(result)
}

/// Per-step MSE averaged over episodes, each rolled out from `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSummary {
    pub mse: Vec<f64>,
    pub position_mse: Vec<f64>,
}

impl RolloutSummary {
    pub fn mean_mse(&self) -> f64 {
        self.mse.iter().sum::<f64>() / self.mse.len() as f64
    }
}

pub fn mean_rollout(
    selector: &Selector,
    episodes: &[Episode],
    horizon: usize,
) -> Result<RolloutSummary> {
    if episodes.is_empty() {
        return Err(Error::Sampling("no episodes to roll out".into()));
    }
    let results = episodes
        .par_iter()
        .enumerate()
        .map(|(e, ep)| match selector {
            Selector::Random { bank, seed } => rollout(
                &Selector::Random {
                    bank,
                    seed: seed.wrapping_add((e as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
                },
                ep,
                0,
                horizon,
            ),
            _ => rollout(selector, ep, 0, horizon),
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let mut summary = RolloutSummary {
        mse: vec![0.0; horizon],
        position_mse: vec![0.0; horizon],
    };
    for r in &results {
        for h in 0..horizon {
            summary.mse[h] += r.mse[h] / n;
            summary.position_mse[h] += r.position_mse[h] / n;
        }
    }
    Ok(summary)
}
