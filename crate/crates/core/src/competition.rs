//! Winner-takes-all training of the mechanism bank.
//!
//! For every object `i` of a window the bank predicts the next state with
//! every mechanism `m` and every context object `j` (including `j = i`).
//! The squared prediction errors, summed over the window's transitions
//! with ground-truth inputs at each step, form a `K x M x K` tensor. Only
//! the arg-min pair of each object sends gradient into its mechanism.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Episode, StateStats, Window, WindowBatch, WindowSampler};
use crate::envs::InteractionMode;
use crate::nn::{checkpoint, Adam, AdamConfig, Grads, Mlp, Scaling};
use crate::{Error, Result};

/// `M` independently parameterized networks `2d -> ... -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismBank {
    d: usize,
    mechanisms: Vec<Mlp>,
    optimizers: Vec<Adam>,
}

impl MechanismBank {
    pub fn new(m: usize, d: usize, hidden: &[usize], seed: u64, adam: AdamConfig) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("bank needs at least one mechanism".into()));
        }
        let mut sizes = vec![2 * d];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        let mechanisms = (0..m)
            .map(|k| Mlp::new(&sizes, seed.wrapping_mul(1_000_003).wrapping_add(k as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_networks(mechanisms, adam)?)
    }

    pub fn from_networks(mechanisms: Vec<Mlp>, adam: AdamConfig) -> Result<Self> {
        let first = mechanisms
            .first()
            .ok_or_else(|| Error::Config("bank needs at least one mechanism".into()))?;
        let sizes = first.layer_sizes();
        let d = first.output_dim();
        if first.input_dim() != 2 * d {
            return Err(Error::Shape(format!(
                "mechanism maps {} -> {}, expected 2d -> d",
                first.input_dim(),
                d
            )));
        }
        if mechanisms.iter().any(|m| m.layer_sizes() != sizes) {
            return Err(Error::Shape("mechanisms must share layer sizes".into()));
        }
        let optimizers = mechanisms.iter().map(|m| Adam::new(m, adam)).collect();
        Ok(Self {
            d,
            mechanisms,
            optimizers,
        })
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        Self::from_networks(checkpoint::load(path)?, adam)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.mechanisms.iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.mechanisms.len()
    }

    /// Same fixed input/output standardization on every mechanism.
    pub fn set_scaling(&mut self, scaling: Option<Scaling>) -> Result<()> {
        for m in &mut self.mechanisms {
            m.set_scaling(scaling.clone())?;
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.mechanisms.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn mechanism(&self, m: usize) -> &Mlp {
        &self.mechanisms[m]
    }

    pub fn mechanism_mut(&mut self, m: usize) -> &mut Mlp {
        &mut self.mechanisms[m]
    }

    pub fn mechanisms(&self) -> &[Mlp] {
        &self.mechanisms
    }

    pub fn set_lr(&mut self, lr: f64) {
        for opt in &mut self.optimizers {
            opt.config.lr = lr;
        }
    }

    pub fn optimizer(&self, m: usize) -> &Adam {
        &self.optimizers[m]
    }

    /// `f_m([z_i ; z_j])`: the predicted state change of object `i`.
    pub fn predict_delta(&self, m: usize, zi: &[f64], zj: &[f64]) -> Result<Vec<f64>> {
        let net = self
            .mechanisms
            .get(m)
            .ok_or_else(|| Error::Index(format!("mechanism {m} of {}", self.len())))?;
        if zi.len() != self.d || zj.len() != self.d {
            return Err(Error::Shape(format!(
                "object states must have {} entries",
                self.d
            )));
        }
        let mut input = Vec::with_capacity(2 * self.d);
        input.extend_from_slice(zi);
        input.extend_from_slice(zj);
        net.forward(&input)
    }
}

/// Loss of every `(object, mechanism, context)` triple, row-major `K x M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLossTensor {
    pub k: usize,
    pub m: usize,
    pub loss: Vec<f64>,
}

impl PairLossTensor {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            loss: vec![0.0; k * m * k],
        }
    }

    #[inline]
    pub fn index(&self, i: usize, m: usize, j: usize) -> usize {
        (i * self.m + m) * self.k + j
    }

    #[inline]
    pub fn get(&self, i: usize, m: usize, j: usize) -> f64 {
        self.loss[self.index(i, m, j)]
    }

    /// Entries of object `i`, ordered `(m, j)`.
    pub fn object(&self, i: usize) -> &[f64] {
        let n = self.m * self.k;
        &self.loss[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinnerRecord {
    pub mechanism: usize,
    pub context: usize,
    pub loss: f64,
    /// Ground-truth `(mode, context)` at the window start, when known.
    pub truth: Option<(InteractionMode, usize)>,
}

/// Per-object arg-min; ties go to the smallest `m`, then the smallest `j`.
pub fn select_winners(tensor: &PairLossTensor) -> Vec<WinnerRecord> {
    (0..tensor.k)
        .map(|i| {
            let mut best = (0, 0, f64::INFINITY);
            for m in 0..tensor.m {
                for j in 0..tensor.k {
                    let l = tensor.get(i, m, j);
                    if l < best.2 {
                        best = (m, j, l);
                    }
                }
            }
            if !best.2.is_finite() {
                best = (0, 0, tensor.get(i, 0, 0));
            }
            WinnerRecord {
                mechanism: best.0,
                context: best.1,
                loss: best.2,
                truth: None,
            }
        })
        .collect()
}

/// Network inputs `[z_i ; z_j]` and targets `z_i' - z_i` for every
/// `(unit, tau, i, j)`, where a unit is a window of consecutive transitions.
#[derive(Debug, Clone)]
pub(crate) struct PairRows {
    d: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    units: Vec<Unit>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Unit {
    offset: usize,
    k: usize,
    horizon: usize,
}

impl PairRows {
    /// `states` holds `horizon + 1` frames of `k x d` per unit.
    pub(crate) fn build<'a>(
        d: usize,
        units: impl IntoIterator<Item = (&'a [f64], usize)>,
    ) -> Result<Self> {
        let mut rows = PairRows {
            d,
            inputs: Vec::new(),
            targets: Vec::new(),
            units: Vec::new(),
        };
        for (states, k) in units {
            let frame = k * d;
            if k == 0 || states.len() % frame != 0 || states.len() < 2 * frame {
                return Err(Error::Shape(format!(
                    "window of {} values is not a sequence of >= 2 frames of {k}x{d}",
                    states.len()
                )));
            }
            let horizon = states.len() / frame - 1;
            let offset = rows.inputs.len() / (2 * d);
            for tau in 0..horizon {
                let now = &states[tau * frame..(tau + 1) * frame];
                let next = &states[(tau + 1) * frame..(tau + 2) * frame];
                for i in 0..k {
                    let zi = &now[i * d..(i + 1) * d];
                    for j in 0..k {
                        rows.inputs.extend_from_slice(zi);
                        rows.inputs.extend_from_slice(&now[j * d..(j + 1) * d]);
                        rows.targets
                            .extend(next[i * d..(i + 1) * d].iter().zip(zi).map(|(a, b)| a - b));
                    }
                }
            }
            rows.units.push(Unit { offset, k, horizon });
        }
        Ok(rows)
    }

    pub(crate) fn from_windows(d: usize, windows: &[Window]) -> Result<Self> {
        if let Some(w) = windows.iter().find(|w| w.d != d) {
            return Err(Error::Shape(format!(
                "window has d = {}, bank expects {d}",
                w.d
            )));
        }
        Self::build(d, windows.iter().map(|w| (w.states.as_slice(), w.k)))
    }

    pub(crate) fn len(&self) -> usize {
        self.inputs.len() / (2 * self.d)
    }

    #[inline]
    pub(crate) fn row(&self, u: usize, tau: usize, i: usize, j: usize) -> usize {
        let unit = self.units[u];
        unit.offset + (tau * unit.k + i) * unit.k + j
    }

    pub(crate) fn unit(&self, u: usize) -> (usize, usize) {
        (self.units[u].k, self.units[u].horizon)
    }

    pub(crate) fn units(&self) -> usize {
        self.units.len()
    }

    pub(crate) fn gather(&self, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (d, w) = (self.d, 2 * self.d);
        let mut inputs = Vec::with_capacity(rows.len() * w);
        let mut targets = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            inputs.extend_from_slice(&self.inputs[r * w..(r + 1) * w]);
            targets.extend_from_slice(&self.targets[r * d..(r + 1) * d]);
        }
        (inputs, targets)
    }

    /// Squared error of every row under network `net`.
    pub(crate) fn squared_errors(&self, net: &Mlp) -> Result<Vec<f64>> {
        let out = net.forward_batch(&self.inputs, self.len())?;
        Ok(sq_rows(&out, &self.targets, self.d))
    }

    /// Per-unit windowed tensors given per-mechanism row errors.
    pub(crate) fn tensors(&self, errors: &[Vec<f64>]) -> Vec<PairLossTensor> {
        let m_count = errors.len();
        (0..self.units.len())
            .map(|u| {
                let (k, horizon) = self.unit(u);
                let mut t = PairLossTensor::zeros(k, m_count);
                for (m, err) in errors.iter().enumerate() {
                    for i in 0..k {
                        for j in 0..k {
                            let mut acc = 0.0;
                            for tau in 0..horizon {
                                acc += err[self.row(u, tau, i, j)];
                            }
                            let idx = t.index(i, m, j);
                            t.loss[idx] = acc;
                        }
                    }
                }
                t
            })
            .collect()
    }
}

fn sq_rows(out: &[f64], targets: &[f64], d: usize) -> Vec<f64> {
    out.chunks_exact(d)
        .zip(targets.chunks_exact(d))
        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

fn bank_errors(bank: &MechanismBank, rows: &PairRows) -> Result<Vec<Vec<f64>>> {
    bank.mechanisms
        .par_iter()
        .map(|net| rows.squared_errors(net))
        .collect()
}

/// Windowed pair losses for one window of `horizon + 1` frames.
pub fn windowed_pair_loss(bank: &MechanismBank, window: &Window) -> Result<PairLossTensor> {
    let rows = PairRows::from_windows(bank.d, std::slice::from_ref(window))?;
    let tensor = rows.tensors(&bank_errors(bank, &rows)?).pop().unwrap();
    if tensor.loss.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite pair loss".into()));
    }
    Ok(tensor)
}

/// Windowed tensors for many windows at once.
pub fn windowed_pair_losses(
    bank: &MechanismBank,
    windows: &[Window],
) -> Result<Vec<PairLossTensor>> {
    let rows = PairRows::from_windows(bank.d, windows)?;
    let tensors = rows.tensors(&bank_errors(bank, &rows)?);
    if tensors
        .iter()
        .any(|t| t.loss.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training("non-finite pair loss".into()));
    }
    Ok(tensors)
}

/// Windowed tensors for every start `t` of an episode, sharing one-step
/// losses between overlapping windows.
pub fn episode_pair_losses(
    bank: &MechanismBank,
    ep: &Episode,
    horizon: usize,
) -> Result<Vec<PairLossTensor>> {
    if ep.d != bank.d {
        return Err(Error::Shape(format!(
            "episode has d = {}, bank expects {}",
            ep.d, bank.d
        )));
    }
    if horizon == 0 || ep.t < horizon + 1 {
        return Ok(Vec::new());
    }
    let rows = PairRows::build(bank.d, [(ep.states.as_slice(), ep.k)])?;
    let errors = bank_errors(bank, &rows)?;
    let k = ep.k;
    let out: Vec<PairLossTensor> = (0..ep.window_count(horizon))
        .map(|t| {
            let mut tensor = PairLossTensor::zeros(k, bank.len());
            for (m, err) in errors.iter().enumerate() {
                for i in 0..k {
                    for j in 0..k {
                        let mut acc = 0.0;
                        for tau in 0..horizon {
                            acc += err[rows.row(0, t + tau, i, j)];
                        }
                        let idx = tensor.index(i, m, j);
                        tensor.loss[idx] = acc;
                    }
                }
            }
            tensor
        })
        .collect();
    if out.iter().any(|t| t.loss.iter().any(|v| !v.is_finite())) {
        return Err(Error::Training("non-finite pair loss".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    WarmStart,
    Compete,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::WarmStart => "warm_start",
            Phase::Compete => "compete",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub mean_winner_loss: f64,
    pub median_winner_loss: f64,
    pub win_counts: Vec<usize>,
}

/// One optimizer step on a batch of windows.
///
/// `Compete` sends each object's winning windowed loss into the winning
/// mechanism only, averaged over that mechanism's wins; mechanisms without
/// wins (and their optimizer state) are left untouched. `WarmStart` sends
/// the loss averaged over all `(m, j)` pairs into every mechanism.
pub fn competition_update(
    bank: &mut MechanismBank,
    batch: &WindowBatch,
    phase: Phase,
) -> Result<StepMetrics> {
    if batch.windows.is_empty() {
        return Err(Error::Sampling("empty batch".into()));
    }
    let rows = PairRows::from_windows(bank.d, &batch.windows)?;
    let d = bank.d;
    let m_count = bank.len();

    let (errors, traces): (Vec<Vec<f64>>, Vec<Option<crate::nn::BatchTrace>>) = match phase {
        Phase::Compete => (bank_errors(bank, &rows)?, vec![None; m_count]),
        Phase::WarmStart => {
            let traced = bank
                .mechanisms
                .par_iter()
                .map(|net| {
                    let tr = net.forward_batch_traced(&rows.inputs, rows.len())?;
                    Ok((sq_rows(tr.output(), &rows.targets, d), Some(tr)))
                })
                .collect::<Result<Vec<_>>>()?;
            traced.into_iter().unzip()
        }
    };
    let tensors = rows.tensors(&errors);
    if tensors
        .iter()
        .any(|t| t.loss.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training("non-finite pair loss".into()));
    }
    let winners: Vec<Vec<WinnerRecord>> = tensors.iter().map(select_winners).collect();
    let mut win_counts = vec![0usize; m_count];
    let mut losses = Vec::with_capacity(winners.len() * 4);
    for ws in &winners {
        for w in ws {
            win_counts[w.mechanism] += 1;
            losses.push(w.loss);
        }
    }
    let mean_winner_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let mid = losses.len() / 2;
    let median_winner_loss = *losses.select_nth_unstable_by(mid, f64::total_cmp).1;

    match phase {
        Phase::Compete => {
            let mut selected: Vec<Vec<usize>> = vec![Vec::new(); m_count];
            for (u, ws) in winners.iter().enumerate() {
                let (_, horizon) = rows.unit(u);
                for (i, w) in ws.iter().enumerate() {
                    for tau in 0..horizon {
                        selected[w.mechanism].push(rows.row(u, tau, i, w.context));
                    }
                }
            }
            let updates = bank
                .mechanisms
                .par_iter()
                .zip(&selected)
                .zip(&win_counts)
                .map(|((net, sel), &wins)| {
                    if wins == 0 {
                        return Ok(None);
                    }
                    let (inputs, targets) = rows.gather(sel);
                    let trace = net.forward_batch_traced(&inputs, sel.len())?;
                    let scale = 2.0 / wins as f64;
                    let upstream: Vec<f64> = trace
                        .output()
                        .iter()
                        .zip(&targets)
                        .map(|(o, t)| scale * (o - t))
                        .collect();
                    let mut grads = Grads::zeros_like(net);
                    net.backward_batch(&trace, &upstream, &mut grads)?;
                    Ok(Some(grads))
                })
                .collect::<Result<Vec<_>>>()?;
            for (m, g) in updates.into_iter().enumerate() {
                if let Some(g) = g {
                    bank.optimizers[m]
                        .step(&mut bank.mechanisms[m], &g)
                        .map_err(|e| Error::Training(format!("mechanism {m}: {e}")))?;
                }
            }
        }
        Phase::WarmStart => {
            let b = batch.windows.len() as f64;
            // per-row weight 1 / (B * K * M * K) of its unit
            let mut weights = vec![0.0; rows.len()];
            for u in 0..rows.units() {
                let (k, horizon) = rows.unit(u);
                let wgt = 1.0 / (b * (k * m_count * k) as f64);
                for tau in 0..horizon {
                    for i in 0..k {
                        for j in 0..k {
                            weights[rows.row(u, tau, i, j)] = wgt;
                        }
                    }
                }
            }
            let updates = bank
                .mechanisms
                .par_iter()
                .zip(&traces)
                .map(|(net, trace)| {
                    let trace = trace.as_ref().unwrap();
                    let upstream: Vec<f64> = trace
                        .output()
                        .chunks_exact(d)
                        .zip(rows.targets.chunks_exact(d))
                        .zip(&weights)
                        .flat_map(|((o, t), &w)| {
                            o.iter().zip(t).map(move |(a, b)| 2.0 * w * (a - b))
                        })
                        .collect();
                    let mut grads = Grads::zeros_like(net);
                    net.backward_batch(trace, &upstream, &mut grads)?;
                    Ok(grads)
                })
                .collect::<Result<Vec<_>>>()?;
            for (m, g) in updates.into_iter().enumerate() {
                bank.optimizers[m]
                    .step(&mut bank.mechanisms[m], &g)
                    .map_err(|e| Error::Training(format!("mechanism {m}: {e}")))?;
            }
        }
    }

    Ok(StepMetrics {
        mean_winner_loss,
        median_winner_loss,
        win_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompetitionConfig {
    pub mechanisms: usize,
    pub horizon: usize,
    pub warm_start_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// When set, the competitive phase decays the learning rate
    /// geometrically from `lr` to this value.
    pub lr_final: Option<f64>,
    pub log_interval: usize,
}

impl Default for CompetitionConfig {
    fn default() -> Self {
        Self {
            mechanisms: 6,
            horizon: 10,
            warm_start_steps: 1000,
            total_steps: 30_000,
            batch_size: 1024,
            seed: 0,
            hidden: vec![300, 300],
            lr: 1e-4,
            lr_final: None,
            log_interval: 500,
        }
    }
}

impl CompetitionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("competition: {m}")));
        if self.mechanisms == 0 {
            return bad("mechanisms must be >= 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1");
        }
        if self.warm_start_steps > self.total_steps {
            return bad("warm_start_steps must not exceed total_steps");
        }
        if self.batch_size == 0 || self.log_interval == 0 {
            return bad("batch_size and log_interval must be >= 1");
        }
        if !(self.lr > 0.0) || self.lr_final.is_some_and(|l| !(l > 0.0)) {
            return bad("lr and lr_final must be positive");
        }
        Ok(())
    }

    /// Learning rate for a 0-based step.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_final {
            Some(end) if step >= self.warm_start_steps => {
                let span = (self.total_steps - self.warm_start_steps).max(1) as f64;
                let frac = (step - self.warm_start_steps) as f64 / span;
                self.lr * (end / self.lr).powf(frac)
            }
            _ => self.lr,
        }
    }
}

/// One line of the usage log, aggregated over a logging interval.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageRow {
    pub step: usize,
    pub phase: Phase,
    pub mean_winner_loss: f64,
    pub win_fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UsageLog {
    pub rows: Vec<UsageRow>,
    pub competitive_steps: usize,
}

impl UsageLog {
    pub fn to_csv(&self, m: usize) -> String {
        let mut s = String::from("step,phase,mean_winner_loss");
        for k in 0..m {
            let _ = write!(s, ",win_frac_mech_{k}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{:.9e}",
                r.step,
                r.phase.name(),
                r.mean_winner_loss
            );
            for f in &r.win_fractions {
                let _ = write!(s, ",{f:.6}");
            }
            s.push('\n');
        }
        s
    }

    /// Entropy (nats) of the last logged usage distribution.
    pub fn final_usage_entropy(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| entropy(&r.win_fractions))
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// Warm start followed by competition. `on_interval` sees every usage row
/// and the bank at that point (checkpointing hooks in here).
pub fn train_competition(
    config: &CompetitionConfig,
    episodes: &[Episode],
    mut on_interval: impl FnMut(&UsageRow, &MechanismBank) -> Result<()>,
) -> Result<(MechanismBank, UsageLog)> {
    config.validate()?;
    let first = episodes
        .first()
        .ok_or_else(|| Error::Sampling("competition needs a nonempty dataset".into()))?;
    let mut bank = MechanismBank::new(
        config.mechanisms,
        first.d,
        &config.hidden,
        config.seed,
        AdamConfig::with_lr(config.lr),
    )?;
    bank.set_scaling(Some(StateStats::from_episodes(episodes)?.pair_to_delta()))?;
    let mut sampler = WindowSampler::new(episodes, config.horizon, config.seed ^ 0x5eed)?;
    let mut log = UsageLog::default();
    let mut acc_loss = 0.0;
    let mut acc_wins = vec![0usize; config.mechanisms];
    let mut acc_steps = 0usize;
    for step in 0..config.total_steps {
        let phase = if step < config.warm_start_steps {
            Phase::WarmStart
        } else {
            Phase::Compete
        };
        let batch = sampler.sample(episodes, config.batch_size)?;
        if config.lr_final.is_some() {
            bank.set_lr(config.lr_at(step));
        }
        let metrics = competition_update(&mut bank, &batch, phase)?;
        if phase == Phase::Compete {
            log.competitive_steps += 1;
        }
        acc_loss += metrics.mean_winner_loss;
        for (a, w) in acc_wins.iter_mut().zip(&metrics.win_counts) {
            *a += w;
        }
        acc_steps += 1;
        let done = step + 1;
        if done % config.log_interval == 0 || done == config.total_steps {
            let total: usize = acc_wins.iter().sum();
            let row = UsageRow {
                step: done,
                phase,
                mean_winner_loss: acc_loss / acc_steps as f64,
                win_fractions: acc_wins
                    .iter()
                    .map(|&w| w as f64 / total.max(1) as f64)
                    .collect(),
            };
            on_interval(&row, &bank)?;
            log.rows.push(row);
            acc_loss = 0.0;
            acc_wins.fill(0);
            acc_steps = 0;
        }
    }
    Ok((bank, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_episodes, sample_windows};
    use crate::envs::builtin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_bank(m: usize, d: usize, seed: u64) -> MechanismBank {
        MechanismBank::new(m, d, &[6], seed, AdamConfig::with_lr(1e-2)).unwrap()
    }

    fn random_window(rng: &mut ChaCha8Rng, k: usize, d: usize, horizon: usize) -> Window {
        Window {
            episode: 0,
            start: 0,
            k,
            d,
            states: (0..(horizon + 1) * k * d)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            gt_mode: vec![0; horizon * k],
            gt_ctx: vec![0; horizon * k],
        }
    }

    #[test]
    fn predict_delta_shapes_and_zero_case() {
        let mut bank = MechanismBank::new(2, 7, &[8, 8], 0, AdamConfig::default()).unwrap();
        assert_eq!(bank.mechanism(0).input_dim(), 14);
        assert_eq!(bank.mechanism(0).output_dim(), 7);
        bank.mechanism_mut(1).zero_output_layer();
        let zi = [0.1, 0.2, 0.3, 0.4, 1.0, 0.0, 0.0];
        let zj = [0.5; 7];
        assert_eq!(bank.predict_delta(1, &zi, &zj).unwrap(), vec![0.0; 7]);
        assert!(matches!(
            bank.predict_delta(2, &zi, &zj),
            Err(Error::Index(_))
        ));
        let mut cat = zi.to_vec();
        cat.extend_from_slice(&zj);
        assert_eq!(
            bank.predict_delta(0, &zi, &zj).unwrap(),
            bank.mechanism(0).forward(&cat).unwrap()
        );
    }

    #[test]
    fn static_object_and_zero_mechanism_has_zero_loss() {
        let mut bank = small_bank(1, 3, 0);
        bank.mechanism_mut(0).zero_output_layer();
        let frame = [0.1, -0.4, 0.7];
        let w = Window {
            episode: 0,
            start: 0,
            k: 1,
            d: 3,
            states: frame.repeat(3),
            gt_mode: vec![0; 2],
            gt_ctx: vec![0; 2],
        };
        assert_eq!(windowed_pair_loss(&bank, &w).unwrap().loss, vec![0.0]);
    }

    #[test]
    fn single_step_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = small_bank(2, 3, 4);
        let w = random_window(&mut rng, 2, 3, 1);
        let t = windowed_pair_loss(&bank, &w).unwrap();
        for i in 0..2 {
            for m in 0..2 {
                for j in 0..2 {
                    let delta = bank
                        .predict_delta(m, w.object(0, i), w.object(0, j))
                        .unwrap();
                    let expect: f64 = (0..3)
                        .map(|c| (w.object(0, i)[c] + delta[c] - w.object(1, i)[c]).powi(2))
                        .sum();
                    assert!((t.get(i, m, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn window_is_sum_of_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bank = small_bank(3, 4, 5);
        let w = random_window(&mut rng, 3, 4, 3);
        let whole = windowed_pair_loss(&bank, &w).unwrap();
        let mut sum = PairLossTensor::zeros(3, 3);
        for tau in 0..3 {
            let n = 3 * 4;
            let step = Window {
                states: w.states[tau * n..(tau + 2) * n].to_vec(),
                ..w.clone()
            };
            let t = windowed_pair_loss(&bank, &step).unwrap();
            for (a, b) in sum.loss.iter_mut().zip(&t.loss) {
                *a += b;
            }
        }
        for (a, b) in whole.loss.iter().zip(&sum.loss) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn winners_argmin_and_ties() {
        let mut t = PairLossTensor::zeros(2, 3);
        t.loss.fill(1.0);
        assert!(select_winners(&t)
            .iter()
            .all(|w| (w.mechanism, w.context) == (0, 0)));
        let idx = t.index(1, 2, 1);
        t.loss[idx] = 0.5;
        let idx = t.index(0, 1, 0);
        t.loss[idx] = 0.25;
        let w = select_winners(&t);
        assert_eq!((w[0].mechanism, w[0].context, w[0].loss), (1, 0, 0.25));
        assert_eq!((w[1].mechanism, w[1].context, w[1].loss), (2, 1, 0.5));
    }

    #[test]
    fn compete_leaves_losers_untouched() {
        let spec = builtin("particles-1").unwrap();
        let eps = generate_episodes(&spec, 0, 4, 12, 0).unwrap();
        let mut bank = MechanismBank::new(3, 7, &[8], 1, AdamConfig::with_lr(1e-3)).unwrap();
        // mechanism 2 predicts a huge constant change and can never win
        let last = bank.mechanism(2).layers().len() - 1;
        bank.mechanism_mut(2).layers_mut()[last]
            .biases_mut()
            .fill(100.0);
        let before = bank.clone();
        let batch = sample_windows(&eps, 3, 16, 9).unwrap();
        let metrics = competition_update(&mut bank, &batch, Phase::Compete).unwrap();
        assert_eq!(metrics.win_counts[2], 0);
        assert_eq!(metrics.win_counts.iter().sum::<usize>(), 16 * 3);
        assert_eq!(bank.mechanism(2), before.mechanism(2));
        assert_eq!(bank.optimizer(2), before.optimizer(2));
    }

    #[test]
    fn warm_start_moves_every_mechanism() {
        let spec = builtin("particles-5").unwrap();
        let eps = generate_episodes(&spec, 0, 2, 12, 0).unwrap();
        let mut bank = MechanismBank::new(4, 7, &[8], 3, AdamConfig::default()).unwrap();
        let before = bank.clone();
        let batch = sample_windows(&eps, 2, 8, 1).unwrap();
        competition_update(&mut bank, &batch, Phase::WarmStart).unwrap();
        for m in 0..4 {
            assert_ne!(bank.mechanism(m), before.mechanism(m));
            assert_eq!(bank.optimizer(m).steps(), 1);
        }
    }

    #[test]
    fn episode_losses_match_windows() {
        let spec = builtin("particles-2").unwrap();
        let eps = generate_episodes(&spec, 0, 1, 15, 2).unwrap();
        let bank = small_bank(2, 7, 8);
        let all = episode_pair_losses(&bank, &eps[0], 4).unwrap();
        assert_eq!(all.len(), 11);
        for t in [0, 5, 10] {
            let w = Window::from_episode(&eps[0], 0, t, 4).unwrap();
            let direct = windowed_pair_loss(&bank, &w).unwrap();
            for (a, b) in all[t].loss.iter().zip(&direct.loss) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_pure_warm_start() {
        let spec = builtin("particles-1").unwrap();
        let eps = generate_episodes(&spec, 0, 2, 8, 0).unwrap();
        let cfg = CompetitionConfig {
            mechanisms: 2,
            horizon: 2,
            warm_start_steps: 3,
            total_steps: 3,
            batch_size: 4,
            hidden: vec![4],
            log_interval: 1,
            ..CompetitionConfig::default()
        };
        let (_, log) = train_competition(&cfg, &eps, |_, _| Ok(())).unwrap();
        assert_eq!(log.competitive_steps, 0);
        assert_eq!(log.rows.len(), 3);
        assert!(log.rows.iter().all(|r| r.phase == Phase::WarmStart));
        let csv = log.to_csv(2);
        assert!(csv.starts_with("step,phase,mean_winner_loss,win_frac_mech_0,win_frac_mech_1\n"));
    }

    #[test]
    fn lr_decays_only_while_competing() {
        let cfg = CompetitionConfig {
            warm_start_steps: 10,
            total_steps: 30,
            lr: 1e-2,
            lr_final: Some(1e-4),
            ..CompetitionConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 1e-2);
        assert_eq!(cfg.lr_at(10), 1e-2);
        assert!((cfg.lr_at(20) - 1e-3).abs() < 1e-15);
        assert!((cfg.lr_at(30) - 1e-4).abs() < 1e-17);
        let flat = CompetitionConfig {
            lr_final: None,
            ..cfg
        };
        assert_eq!(flat.lr_at(25), 1e-2);
    }

    #[test]
    fn config_validation() {
        let bad = CompetitionConfig {
            warm_start_steps: 10,
            total_steps: 5,
            ..CompetitionConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(CompetitionConfig {
            lr_final: Some(0.0),
            ..CompetitionConfig::default()
        }
        .validate()
        .is_err());
        assert!(CompetitionConfig {
            horizon: 0,
            ..CompetitionConfig::default()
        }
        .validate()
        .is_err());
    }
}
