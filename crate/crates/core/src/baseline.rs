//! Monolithic message-passing transition model.
//!
//! `e_ij = edge([z_i ; z_j])` for every `j != i`, averaged into one message;
//! `dz_i = node([z_i ; mean_j e_ij])`. A lone object gets a zero message.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Episode, StateStats};
use crate::nn::{checkpoint, Adam, AdamConfig, BatchTrace, Grads, Mlp};
use crate::{Error, Result};

pub const MESSAGE_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    pub edge: Mlp,
    pub node: Mlp,
    edge_opt: Adam,
    node_opt: Adam,
}

impl GnnParams {
    pub fn new(
        d: usize,
        hidden: &[usize],
        message_dim: usize,
        seed: u64,
        adam: AdamConfig,
    ) -> Result<Self> {
        let mut edge_sizes = vec![2 * d];
        edge_sizes.extend_from_slice(hidden);
        edge_sizes.push(message_dim);
        let mut node_sizes = vec![d + message_dim];
        node_sizes.extend_from_slice(hidden);
        node_sizes.push(d);
        Self::from_networks(
            Mlp::new(&edge_sizes, seed.wrapping_mul(31).wrapping_add(0xed9e))?,
            Mlp::new(&node_sizes, seed.wrapping_mul(37).wrapping_add(0x90de))?,
            adam,
        )
    }

    pub fn from_networks(edge: Mlp, node: Mlp, adam: AdamConfig) -> Result<Self> {
        let d = node.output_dim();
        if edge.input_dim() != 2 * d || node.input_dim() != d + edge.output_dim() {
            return Err(Error::Shape(format!(
                "edge {:?} / node {:?} do not chain for d = {d}",
                edge.layer_sizes(),
                node.layer_sizes()
            )));
        }
        Ok(Self {
            edge_opt: Adam::new(&edge, adam),
            node_opt: Adam::new(&node, adam),
            edge,
            node,
        })
    }

    /// Standardizes states on the way in and deltas on the way out.
    pub fn set_scaling(&mut self, stats: &StateStats) -> Result<()> {
        self.edge
            .set_scaling(Some(stats.pair_to_features(self.edge.output_dim())))?;
        self.node
            .set_scaling(Some(stats.state_and_extra_to_delta(self.edge.output_dim())))
    }

    pub fn d(&self) -> usize {
        self.node.output_dim()
    }

    pub fn message_dim(&self) -> usize {
        self.edge.output_dim()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &[&self.edge, &self.node])
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        let mut nets = checkpoint::load(path)?;
        if nets.len() != 2 {
            return Err(Error::load(
                path,
                format!(
                    "baseline checkpoint holds {} networks, expected 2",
                    nets.len()
                ),
            ));
        }
        let node = nets.pop().unwrap();
        let edge = nets.pop().unwrap();
        Self::from_networks(edge, node, adam)
    }

    /// Fresh optimizer state, e.g. before finetuning.
    pub fn reset_optimizers(&mut self, adam: AdamConfig) {
        self.edge_opt = Adam::new(&self.edge, adam);
        self.node_opt = Adam::new(&self.node, adam);
    }
}

struct Forward {
    edge: Option<BatchTrace>,
    node: BatchTrace,
    /// Per scene: first node row, first edge row, K.
    layout: Vec<(usize, usize, usize)>,
}

fn forward_scenes(p: &GnnParams, scenes: &[(&[f64], usize)]) -> Result<Forward> {
    let d = p.d();
    let h = p.message_dim();
    let mut edge_rows = Vec::new();
    let mut layout = Vec::with_capacity(scenes.len());
    let (mut n_nodes, mut n_edges) = (0, 0);
    for &(z, k) in scenes {
        if k == 0 || z.len() != k * d {
            return Err(Error::Shape(format!(
                "scene of {} values is not {k}x{d}",
                z.len()
            )));
        }
        layout.push((n_nodes, n_edges, k));
        for i in 0..k {
            for j in (0..k).filter(|&j| j != i) {
                edge_rows.extend_from_slice(&z[i * d..(i + 1) * d]);
                edge_rows.extend_from_slice(&z[j * d..(j + 1) * d]);
            }
        }
        n_nodes += k;
        n_edges += k * (k - 1);
    }
    let edge = if n_edges > 0 {
        Some(p.edge.forward_batch_traced(&edge_rows, n_edges)?)
    } else {
        None
    };
    let mut node_rows = Vec::with_capacity(n_nodes * (d + h));
    for (&(z, k), &(_, e0, _)) in scenes.iter().zip(&layout) {
        for i in 0..k {
            node_rows.extend_from_slice(&z[i * d..(i + 1) * d]);
            let mut msg = vec![0.0; h];
            if k > 1 {
                let out = edge.as_ref().unwrap().output();
                for r in 0..k - 1 {
                    let row = e0 + i * (k - 1) + r;
                    for (m, v) in msg.iter_mut().zip(&out[row * h..(row + 1) * h]) {
                        *m += v;
                    }
                }
                let inv = 1.0 / (k - 1) as f64;
                msg.iter_mut().for_each(|m| *m *= inv);
            }
            node_rows.extend_from_slice(&msg);
        }
    }
    let node = p.node.forward_batch_traced(&node_rows, n_nodes)?;
    Ok(Forward { edge, node, layout })
}

/// Predicted state changes `K x d` for one scene.
pub fn gnn_forward(p: &GnnParams, states: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(forward_scenes(p, &[(states, k)])?.node.output().to_vec())
}

/// Gradients of `<upstream, deltas>` summed over scenes.
fn backward_scenes(p: &GnnParams, fwd: &Forward, upstream: &[f64]) -> Result<(Grads, Grads)> {
    let d = p.d();
    let h = p.message_dim();
    let mut g_node = Grads::zeros_like(&p.node);
    let mut g_edge = Grads::zeros_like(&p.edge);
    let node_in = p.node.backward_batch(&fwd.node, upstream, &mut g_node)?;
    if let Some(edge) = &fwd.edge {
        let mut edge_up = vec![0.0; edge.rows() * h];
        for &(n0, e0, k) in &fwd.layout {
            if k < 2 {
                continue;
            }
            let inv = 1.0 / (k - 1) as f64;
            for i in 0..k {
                let g_msg = &node_in[(n0 + i) * (d + h) + d..(n0 + i + 1) * (d + h)];
                for r in 0..k - 1 {
                    let row = e0 + i * (k - 1) + r;
                    for (u, g) in edge_up[row * h..(row + 1) * h].iter_mut().zip(g_msg) {
                        *u = g * inv;
                    }
                }
            }
        }
        p.edge.backward_batch(edge, &edge_up, &mut g_edge)?;
    }
    Ok((g_edge, g_node))
}

/// One transition: scene at `t` and the next scene.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub now: &'a [f64],
    pub next: &'a [f64],
    pub k: usize,
}

pub fn transitions(episodes: &[Episode]) -> Vec<Transition<'_>> {
    episodes
        .iter()
        .flat_map(|ep| {
            (0..ep.t.saturating_sub(1)).map(move |t| Transition {
                now: ep.state(t),
                next: ep.state(t + 1),
                k: ep.k,
            })
        })
        .collect()
}

/// Mean over objects of the squared one-step error, with its gradients
/// (edge, node).
pub fn gnn_loss(p: &GnnParams, batch: &[Transition]) -> Result<(f64, Grads, Grads)> {
    let d = p.d();
    let scenes: Vec<(&[f64], usize)> = batch.iter().map(|t| (t.now, t.k)).collect();
    let fwd = forward_scenes(p, &scenes)?;
    let objects: usize = batch.iter().map(|t| t.k).sum();
    let scale = 1.0 / objects as f64;
    let out = fwd.node.output();
    let mut upstream = vec![0.0; out.len()];
    let mut loss = 0.0;
    let mut row = 0;
    for t in batch {
        for c in 0..t.k * d {
            let e = t.now[c] + out[row * d + c] - t.next[c];
            loss += e * e;
            upstream[row * d + c] = 2.0 * e * scale;
        }
        row += t.k;
    }
    if !loss.is_finite() {
        return Err(Error::Training("non-finite baseline loss".into()));
    }
    let (ge, gn) = backward_scenes(p, &fwd, &upstream)?;
    Ok((loss * scale, ge, gn))
}

pub fn gnn_mse(p: &GnnParams, set: &[Transition]) -> Result<f64> {
    if set.is_empty() {
        return Ok(f64::NAN);
    }
    let d = p.d();
    let mut sum = 0.0;
    let mut objects = 0;
    for chunk in set.chunks(2048) {
        let scenes: Vec<(&[f64], usize)> = chunk.iter().map(|t| (t.now, t.k)).collect();
        let fwd = forward_scenes(p, &scenes)?;
        let out = fwd.node.output();
        let mut row = 0;
        for t in chunk {
            for c in 0..t.k * d {
                let e = t.now[c] + out[row * d + c] - t.next[c];
                sum += e * e;
            }
            row += t.k;
            objects += t.k;
        }
    }
    Ok(sum / objects as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub hidden: Vec<usize>,
    pub message_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub log_interval: usize,
    /// Finetuning only: held-out fraction and early-stopping patience
    /// measured in log intervals.
    pub holdout_frac: f64,
    pub patience: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 300],
            message_dim: MESSAGE_DIM,
            lr: 1e-4,
            batch_size: 1024,
            steps: 30_000,
            seed: 0,
            log_interval: 500,
            holdout_frac: 0.1,
            patience: 10,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("baseline: {m}")));
        if self.batch_size == 0 || self.log_interval == 0 || self.message_dim == 0 {
            return bad("batch_size, log_interval and message_dim must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return bad("holdout_frac must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineLogRow {
    pub step: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineLog {
    pub rows: Vec<BaselineLogRow>,
    pub best_step: usize,
}

impl BaselineLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_mse,val_mse\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.9e},{:.9e}", r.step, r.train_mse, r.val_mse);
        }
        s
    }
}

fn adam_step(p: &mut GnnParams, ge: &Grads, gn: &Grads) -> Result<()> {
    p.edge_opt
        .step(&mut p.edge, ge)
        .map_err(|e| Error::Training(format!("edge net: {e}")))?;
    p.node_opt
        .step(&mut p.node, gn)
        .map_err(|e| Error::Training(format!("node net: {e}")))
}

/// Pretraining on the environment mixture: uniform transition batches.
pub fn train_baseline(
    p: &mut GnnParams,
    episodes: &[Episode],
    config: &BaselineConfig,
) -> Result<BaselineLog> {
    config.validate()?;
    let all = transitions(episodes);
    let mut log = BaselineLog::default();
    if config.steps == 0 {
        return Ok(log);
    }
    if all.is_empty() {
        return Err(Error::Sampling(
            "baseline needs at least one transition".into(),
        ));
    }
    p.set_scaling(&StateStats::from_episodes(episodes)?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba5e);
    let mut acc = (0.0, 0usize);
    for step in 0..config.steps {
        let batch: Vec<Transition> = (0..config.batch_size)
            .map(|_| all[rng.gen_range(0..all.len())])
            .collect();
        let (loss, ge, gn) = gnn_loss(p, &batch)?;
        adam_step(p, &ge, &gn)?;
        acc.0 += loss;
        acc.1 += 1;
        if (step + 1) % config.log_interval == 0 || step + 1 == config.steps {
            log.rows.push(BaselineLogRow {
                step: step + 1,
                train_mse: acc.0 / acc.1 as f64,
                val_mse: f64::NAN,
            });
            acc = (0.0, 0);
        }
    }
    log.best_step = config.steps;
    Ok(log)
}

/// Full finetuning on adaptation transitions with early stopping on a
/// held-out slice; the parameters at the best held-out MSE are kept.
pub fn finetune_baseline(
    p: &mut GnnParams,
    episodes: &[Episode],
    config: &BaselineConfig,
) -> Result<BaselineLog> {
    config.validate()?;
    let mut all = transitions(episodes);
    let mut log = BaselineLog::default();
    if all.is_empty() || config.steps == 0 {
        return Ok(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xf1e7);
    all.shuffle(&mut rng);
    let n_val = if all.len() >= 10 {
        ((all.len() as f64 * config.holdout_frac).round() as usize).max(1)
    } else {
        0
    };
    let (val, train) = all.split_at(n_val);
    p.reset_optimizers(AdamConfig::with_lr(config.lr));
    let mut best = (
        if val.is_empty() {
            f64::INFINITY
        } else {
            gnn_mse(p, val)?
        },
        p.clone(),
    );
    let mut stale = 0;
    let mut perm: Vec<usize> = (0..train.len()).collect();
    let mut cursor = perm.len();
    let mut acc = (0.0, 0usize);
    for step in 0..config.steps {
        let batch: Vec<Transition> = if train.len() <= config.batch_size {
            train.to_vec()
        } else {
            (0..config.batch_size)
                .map(|_| {
                    if cursor == perm.len() {
                        perm.shuffle(&mut rng);
                        cursor = 0;
                    }
                    cursor += 1;
                    train[perm[cursor - 1]]
                })
                .collect()
        };
        let (loss, ge, gn) = gnn_loss(p, &batch)?;
        adam_step(p, &ge, &gn)?;
        acc.0 += loss;
        acc.1 += 1;
        let done = step + 1;
        if done % config.log_interval == 0 || done == config.steps {
            let val_mse = if val.is_empty() {
                f64::NAN
            } else {
                gnn_mse(p, val)?
            };
            log.rows.push(BaselineLogRow {
                step: done,
                train_mse: acc.0 / acc.1 as f64,
                val_mse,
            });
            acc = (0.0, 0);
            if val.is_empty() || val_mse < best.0 {
                best = (val_mse, p.clone());
                log.best_step = done;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    if !val.is_empty() {
        *p = best.1;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_episodes;
    use crate::envs::builtin;

    fn tiny(d: usize, seed: u64) -> GnnParams {
        GnnParams::new(d, &[5], 3, seed, AdamConfig::with_lr(1e-2)).unwrap()
    }

    #[test]
    fn zero_node_output_gives_zero_delta() {
        let mut p = tiny(2, 0);
        p.node.zero_output_layer();
        assert_eq!(
            gnn_forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 3).unwrap(),
            vec![0.0; 6]
        );
    }

    #[test]
    fn hand_composed_pair() {
        let p = tiny(2, 1);
        let z = [0.3, -0.1, 0.7, 0.2];
        let got = gnn_forward(&p, &z, 2).unwrap();
        for (i, j) in [(0, 1), (1, 0)] {
            let msg = p
                .edge
                .forward(&[&z[i * 2..i * 2 + 2], &z[j * 2..j * 2 + 2]].concat())
                .unwrap();
            let delta = p
                .node
                .forward(&[&z[i * 2..i * 2 + 2], &msg[..]].concat())
                .unwrap();
            for c in 0..2 {
                assert!((got[i * 2 + c] - delta[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lone_object_uses_zero_message() {
        let p = tiny(2, 2);
        let got = gnn_forward(&p, &[0.4, -0.3], 1).unwrap();
        let want = p.node.forward(&[0.4, -0.3, 0.0, 0.0, 0.0]).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn permutation_equivariance() {
        let p = tiny(2, 3);
        let z = [0.1, 0.2, -0.5, 0.3, 0.9, -0.4];
        let out = gnn_forward(&p, &z, 3).unwrap();
        let perm = [2, 0, 1];
        let zp: Vec<f64> = perm
            .iter()
            .flat_map(|&i| z[i * 2..i * 2 + 2].to_vec())
            .collect();
        let outp = gnn_forward(&p, &zp, 3).unwrap();
        for (n, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((outp[n * 2 + c] - out[i * 2 + c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_steps_and_empty_finetune_are_no_ops() {
        let eps = generate_episodes(&builtin("particles-1").unwrap(), 0, 1, 5, 0).unwrap();
        let mut p = GnnParams::new(7, &[4], 3, 0, AdamConfig::default()).unwrap();
        let before = p.clone();
        let cfg = BaselineConfig {
            steps: 0,
            ..BaselineConfig::default()
        };
        train_baseline(&mut p, &eps, &cfg).unwrap();
        assert_eq!(p, before);
        finetune_baseline(&mut p, &[], &BaselineConfig::default()).unwrap();
        assert_eq!(p, before);
    }
}
