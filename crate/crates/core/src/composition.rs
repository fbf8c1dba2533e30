//! Selecting frozen mechanisms in a new environment.
//!
//! One scalar confidence network per mechanism scores every
//! `(mechanism, context)` pair of an object; a softmax over the `M x K`
//! scores is the classifier. Its labels are the competition winners of the
//! frozen bank on adaptation episodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bytes::{put_u32, Reader};
use crate::competition::{episode_pair_losses, select_winners, MechanismBank};
use crate::dataset::Episode;
use crate::nn::{checkpoint, Adam, AdamConfig, BatchTrace, Grads, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBank {
    d: usize,
    nets: Vec<Mlp>,
    optimizers: Vec<Adam>,
}

impl ConfidenceBank {
    pub fn new(m: usize, d: usize, hidden: &[usize], seed: u64, adam: AdamConfig) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config(
                "confidence bank needs at least one network".into(),
            ));
        }
        let mut sizes = vec![2 * d];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let nets = (0..m)
            .map(|k| {
                Mlp::new(
                    &sizes,
                    seed.wrapping_mul(7_919).wrapping_add(k as u64 + 0xc0f),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_networks(nets, adam)
    }

    pub fn from_networks(nets: Vec<Mlp>, adam: AdamConfig) -> Result<Self> {
        let first = nets
            .first()
            .ok_or_else(|| Error::Config("confidence bank needs at least one network".into()))?;
        let sizes = first.layer_sizes();
        if first.output_dim() != 1 || first.input_dim() % 2 != 0 {
            return Err(Error::Shape(format!(
                "confidence net maps {} -> {}, expected 2d -> 1",
                first.input_dim(),
                first.output_dim()
            )));
        }
        if nets.iter().any(|n| n.layer_sizes() != sizes) {
            return Err(Error::Shape(
                "confidence nets must share layer sizes".into(),
            ));
        }
        let optimizers = nets.iter().map(|n| Adam::new(n, adam)).collect();
        Ok(Self {
            d: first.input_dim() / 2,
            nets,
            optimizers,
        })
    }

    pub fn load(path: &Path, adam: AdamConfig) -> Result<Self> {
        Self::from_networks(checkpoint::load(path)?, adam)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.nets.iter().collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    pub fn net_mut(&mut self, m: usize) -> &mut Mlp {
        &mut self.nets[m]
    }
}

fn pair_rows(
    states: &[f64],
    k: usize,
    d: usize,
    objects: impl Iterator<Item = usize>,
    out: &mut Vec<f64>,
) {
    for i in objects {
        let zi = &states[i * d..(i + 1) * d];
        for j in 0..k {
            out.extend_from_slice(zi);
            out.extend_from_slice(&states[j * d..(j + 1) * d]);
        }
    }
}

/// Scores `K x M x K` (object, mechanism, context) for one scene.
pub fn confidence_scores(conf: &ConfidenceBank, states: &[f64], k: usize) -> Result<Vec<f64>> {
    let d = conf.d;
    if k == 0 || states.len() != k * d {
        return Err(Error::Shape(format!(
            "scene of {} values is not {k}x{d}",
            states.len()
        )));
    }
    let mut rows = Vec::with_capacity(k * k * 2 * d);
    pair_rows(states, k, d, 0..k, &mut rows);
    let m_count = conf.len();
    let per_net = conf
        .nets
        .iter()
        .map(|n| n.forward_batch(&rows, k * k))
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; k * m_count * k];
    for (m, out) in per_net.iter().enumerate() {
        for i in 0..k {
            for j in 0..k {
                scores[(i * m_count + m) * k + j] = out[i * k + j];
            }
        }
    }
    Ok(scores)
}

/// Softmax over one object's `M x K` scores.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Per-object distributions over pairs, each of length `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    pub m: usize,
    pub k: usize,
    pub probs: Vec<Vec<f64>>,
}

pub fn pair_distribution(
    conf: &ConfidenceBank,
    states: &[f64],
    k: usize,
) -> Result<PairDistribution> {
    let scores = confidence_scores(conf, states, k)?;
    let n = conf.len() * k;
    Ok(PairDistribution {
        m: conf.len(),
        k,
        probs: scores.chunks_exact(n).map(softmax).collect(),
    })
}

/// First index of the maximum; with `(m, j)` row-major order this breaks
/// ties toward the smallest `m`, then the smallest `j`.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (n, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = n;
        }
    }
    best
}

/// Highest-scoring `(m, j)` for object `i`.
pub fn select_pair(
    conf: &ConfidenceBank,
    states: &[f64],
    k: usize,
    i: usize,
) -> Result<(usize, usize)> {
    if i >= k {
        return Err(Error::Index(format!("object {i} of {k}")));
    }
    let d = conf.d;
    if states.len() != k * d {
        return Err(Error::Shape(format!(
            "scene of {} values is not {k}x{d}",
            states.len()
        )));
    }
    let mut rows = Vec::with_capacity(k * 2 * d);
    pair_rows(states, k, d, std::iter::once(i), &mut rows);
    let mut scores = Vec::with_capacity(conf.len() * k);
    for net in &conf.nets {
        scores.extend(net.forward_batch(&rows, k)?);
    }
    let best = argmax(&scores);
    Ok((best / k, best % k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub episode: u32,
    pub t: u32,
    pub object: u32,
    pub mechanism: u32,
    pub context: u32,
}

impl LabelRecord {
    pub fn class(&self, k: usize) -> usize {
        self.mechanism as usize * k + self.context as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionLabelSet {
    pub horizon: usize,
    pub mechanisms: usize,
    pub records: Vec<LabelRecord>,
    /// Episodes too short for one window.
    pub skipped: usize,
}

pub const LABEL_MAGIC: &[u8; 4] = b"CMTL";
pub const LABEL_VERSION: u32 = 1;

impl CompositionLabelSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `"CMTL" | version | horizon | M | skipped | count | count x 5 u32`.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.records.len() * 20);
        out.extend_from_slice(LABEL_MAGIC);
        for v in [
            LABEL_VERSION,
            self.horizon as u32,
            self.mechanisms as u32,
            self.skipped as u32,
            self.records.len() as u32,
        ] {
            put_u32(&mut out, v);
        }
        for r in &self.records {
            for v in [r.episode, r.t, r.object, r.mechanism, r.context] {
                put_u32(&mut out, v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, origin);
        if r.take(4)? != LABEL_MAGIC {
            return Err(Error::load(origin, "bad magic, not a CMTL label file"));
        }
        let version = r.u32()?;
        if version != LABEL_VERSION {
            return Err(Error::load(
                origin,
                format!("label version {version}, expected {LABEL_VERSION}"),
            ));
        }
        let horizon = r.u32()? as usize;
        let mechanisms = r.u32()? as usize;
        let skipped = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut records = Vec::with_capacity(count.min(10_000_000));
        for _ in 0..count {
            let rec = LabelRecord {
                episode: r.u32()?,
                t: r.u32()?,
                object: r.u32()?,
                mechanism: r.u32()?,
                context: r.u32()?,
            };
            if rec.mechanism as usize >= mechanisms {
                return Err(Error::load(
                    origin,
                    format!("label names mechanism {} of {mechanisms}", rec.mechanism),
                ));
            }
            records.push(rec);
        }
        if !r.is_empty() {
            return Err(Error::load(origin, "trailing bytes after last label"));
        }
        Ok(Self {
            horizon,
            mechanisms,
            records,
            skipped,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// Checks that every record addresses a valid transition and pair.
    pub fn validate_against(&self, episodes: &[Episode]) -> Result<()> {
        for r in &self.records {
            let ep = episodes.get(r.episode as usize).ok_or_else(|| {
                Error::Index(format!(
                    "label names episode {} of {}",
                    r.episode,
                    episodes.len()
                ))
            })?;
            if r.t as usize + 1 >= ep.t || r.object as usize >= ep.k || r.context as usize >= ep.k {
                return Err(Error::Index(format!(
                    "label {r:?} does not fit its episode"
                )));
            }
        }
        Ok(())
    }
}

/// Competition winners of a frozen bank at every window of every episode.
pub fn extract_labels(
    bank: &MechanismBank,
    episodes: &[Episode],
    horizon: usize,
) -> Result<CompositionLabelSet> {
    if horizon == 0 {
        return Err(Error::Config("label horizon must be >= 1".into()));
    }
    let per_episode = episodes
        .par_iter()
        .enumerate()
        .map(|(e, ep)| {
            if ep.t < horizon + 1 {
                return Ok(None);
            }
            let mut out = Vec::with_capacity(ep.window_count(horizon) * ep.k);
            for (t, tensor) in episode_pair_losses(bank, ep, horizon)?.iter().enumerate() {
                for (i, w) in select_winners(tensor).iter().enumerate() {
                    out.push(LabelRecord {
                        episode: e as u32,
                        t: t as u32,
                        object: i as u32,
                        mechanism: w.mechanism as u32,
                        context: w.context as u32,
                    });
                }
            }
            Ok(Some(out))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = per_episode.iter().filter(|r| r.is_none()).count();
    Ok(CompositionLabelSet {
        horizon,
        mechanisms: bank.len(),
        records: per_episode.into_iter().flatten().flatten().collect(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluations without held-out improvement before stopping.
    pub patience: usize,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 300],
            lr: 1e-4,
            batch_size: 1024,
            max_steps: 5000,
            eval_interval: 100,
            patience: 10,
            holdout_frac: 0.1,
            seed: 0,
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("composition: {m}")));
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch_size and eval_interval must be >= 1");
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
pub struct TraceRow {
    pub step: usize,
    pub nll: f64,
    pub top1_acc: f64,
    pub val_nll: f64,
    pub val_top1_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTrace {
    pub rows: Vec<TraceRow>,
    pub best_step: usize,
}

impl AccuracyTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,nll,top1_acc,val_nll,val_top1_acc\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.9e},{:.6},{:.9e},{:.6}",
                r.step, r.nll, r.top1_acc, r.val_nll, r.val_top1_acc
            );
        }
        s
    }
}

struct Labelled<'a> {
    states: &'a [f64],
    k: usize,
    object: usize,
    class: usize,
}

fn gather<'a>(labels: &CompositionLabelSet, episodes: &'a [Episode]) -> Result<Vec<Labelled<'a>>> {
    labels.validate_against(episodes)?;
    labels
        .records
        .iter()
        .map(|r| {
            let ep = &episodes[r.episode as usize];
            Ok(Labelled {
                states: ep.state(r.t as usize),
                k: ep.k,
                object: r.object as usize,
                class: r.class(ep.k),
            })
        })
        .collect()
}

/// Mean NLL, accuracy and (optionally) summed parameter gradients over a
/// set of labelled objects.
fn nll_pass(
    conf: &ConfidenceBank,
    items: &[&Labelled],
    want_grads: bool,
) -> Result<(f64, f64, Vec<Grads>)> {
    let d = conf.d;
    let m_count = conf.len();
    let mut rows = Vec::new();
    let mut offsets = Vec::with_capacity(items.len());
    for it in items {
        offsets.push(rows.len() / (2 * d));
        pair_rows(it.states, it.k, d, std::iter::once(it.object), &mut rows);
    }
    let n_rows = rows.len() / (2 * d);
    let traces: Vec<BatchTrace> = conf
        .nets
        .par_iter()
        .map(|n| n.forward_batch_traced(&rows, n_rows))
        .collect::<Result<_>>()?;
    let scale = 1.0 / items.len() as f64;
    let mut nll = 0.0;
    let mut correct = 0usize;
    let mut upstream = vec![vec![0.0; n_rows]; m_count];
    for (it, &off) in items.iter().zip(&offsets) {
        let k = it.k;
        let mut scores = Vec::with_capacity(m_count * k);
        for tr in &traces {
            scores.extend_from_slice(&tr.output()[off..off + k]);
        }
        let p = softmax(&scores);
        nll -= p[it.class].max(f64::MIN_POSITIVE).ln();
        if argmax(&scores) == it.class {
            correct += 1;
        }
        if want_grads {
            for (c, &pc) in p.iter().enumerate() {
                let g = pc - if c == it.class { 1.0 } else { 0.0 };
                upstream[c / k][off + c % k] = g * scale;
            }
        }
    }
    if !nll.is_finite() {
        return Err(Error::Training("non-finite composition loss".into()));
    }
    let mut grads = Vec::new();
    if want_grads {
        grads = conf
            .nets
            .par_iter()
            .zip(&traces)
            .zip(&upstream)
            .map(|((net, tr), up)| {
                let mut g = Grads::zeros_like(net);
                net.backward_batch(tr, up, &mut g)?;
                Ok(g)
            })
            .collect::<Result<_>>()?;
    }
    Ok((nll * scale, correct as f64 * scale, grads))
}

/// Mean NLL and gradients of the labelled set, for gradient checks.
pub fn composition_loss(
    conf: &ConfidenceBank,
    labels: &CompositionLabelSet,
    episodes: &[Episode],
) -> Result<(f64, Vec<Grads>)> {
    let items = gather(labels, episodes)?;
    if items.is_empty() {
        return Err(Error::Training("no labels".into()));
    }
    let refs: Vec<&Labelled> = items.iter().collect();
    let (nll, _, grads) = nll_pass(conf, &refs, true)?;
    Ok((nll, grads))
}

/// Top-1 accuracy of the bank against a label set.
pub fn label_accuracy(
    conf: &ConfidenceBank,
    labels: &CompositionLabelSet,
    episodes: &[Episode],
) -> Result<f64> {
    let items = gather(labels, episodes)?;
    if items.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&Labelled> = items.iter().collect();
    let mut acc = 0.0;
    for chunk in refs.chunks(4096) {
        acc += nll_pass(conf, chunk, false)?.1 * chunk.len() as f64;
    }
    Ok(acc / refs.len() as f64)
}

/// NLL training with early stopping on a held-out slice of the labels;
/// returns the bank at the best held-out NLL.
pub fn train_composition(
    conf: &mut ConfidenceBank,
    labels: &CompositionLabelSet,
    episodes: &[Episode],
    config: &CompositionConfig,
) -> Result<AccuracyTrace> {
    config.validate()?;
    if conf.len() != labels.mechanisms {
        return Err(Error::Shape(format!(
            "{} confidence nets for labels over {} mechanisms",
            conf.len(),
            labels.mechanisms
        )));
    }
    let items = gather(labels, episodes)?;
    if items.is_empty() {
        return Err(Error::Training(
            "composition needs at least one label".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if items.len() >= 10 {
        ((items.len() as f64 * config.holdout_frac).round() as usize).max(1)
    } else {
        0
    };
    let val: Vec<&Labelled> = order[..n_val].iter().map(|&n| &items[n]).collect();
    let train: Vec<&Labelled> = order[n_val..].iter().map(|&n| &items[n]).collect();
    let val_eval = |c: &ConfidenceBank| -> Result<(f64, f64)> {
        if val.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let (mut nll, mut acc) = (0.0, 0.0);
        for chunk in val.chunks(4096) {
            let (l, a, _) = nll_pass(c, chunk, false)?;
            nll += l * chunk.len() as f64;
            acc += a * chunk.len() as f64;
        }
        Ok((nll / val.len() as f64, acc / val.len() as f64))
    };

    let mut trace = AccuracyTrace::default();
    let mut best = (val_eval(conf)?.0, conf.nets.clone());
    let mut stale = 0;
    let mut cursor = train.len();
    let mut perm: Vec<usize> = (0..train.len()).collect();
    let (mut acc_nll, mut acc_top1, mut acc_n) = (0.0, 0.0, 0usize);
    for step in 0..config.max_steps {
        let mut batch = Vec::with_capacity(config.batch_size.min(train.len()));
        if train.len() <= config.batch_size {
            batch.extend(train.iter().copied());
        } else {
            while batch.len() < config.batch_size {
                if cursor == perm.len() {
                    perm.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(train[perm[cursor]]);
                cursor += 1;
            }
        }
        let (nll, acc, grads) = nll_pass(conf, &batch, true)?;
        for (m, g) in grads.iter().enumerate() {
            conf.optimizers[m]
                .step(&mut conf.nets[m], g)
                .map_err(|e| Error::Training(format!("confidence net {m}: {e}")))?;
        }
        acc_nll += nll;
        acc_top1 += acc;
        acc_n += 1;
        let done = step + 1;
        if done % config.eval_interval == 0 || done == config.max_steps {
            let (val_nll, val_acc) = val_eval(conf)?;
            trace.rows.push(TraceRow {
                step: done,
                nll: acc_nll / acc_n as f64,
                top1_acc: acc_top1 / acc_n as f64,
                val_nll,
                val_top1_acc: val_acc,
            });
            (acc_nll, acc_top1, acc_n) = (0.0, 0.0, 0);
            if val.is_empty() || !(val_nll >= best.0) {
                best = (val_nll, conf.nets.clone());
                trace.best_step = done;
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
        conf.nets = best.1;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_episodes;
    use crate::envs::builtin;

    fn tiny(m: usize, d: usize, seed: u64) -> ConfidenceBank {
        ConfidenceBank::new(m, d, &[5], seed, AdamConfig::with_lr(1e-2)).unwrap()
    }

    #[test]
    fn zero_bank_is_uniform() {
        let mut conf = tiny(5, 7, 0);
        for m in 0..5 {
            conf.net_mut(m).zero_output_layer();
        }
        let states: Vec<f64> = (0..21).map(|v| v as f64 * 0.01).collect();
        let dist = pair_distribution(&conf, &states, 3).unwrap();
        assert_eq!(dist.probs.len(), 3);
        for p in &dist.probs {
            assert_eq!(p.len(), 15);
            assert!(p.iter().all(|&v| (v - 1.0 / 15.0).abs() < 1e-15));
        }
        assert_eq!(select_pair(&conf, &states, 3, 1).unwrap(), (0, 0));
    }

    #[test]
    fn scores_match_per_pair_forward() {
        let conf = tiny(2, 3, 4);
        let states = [0.1, -0.2, 0.3, 0.5, 0.4, -0.9];
        let scores = confidence_scores(&conf, &states, 2).unwrap();
        for i in 0..2 {
            for m in 0..2 {
                for j in 0..2 {
                    let mut x = states[i * 3..i * 3 + 3].to_vec();
                    x.extend_from_slice(&states[j * 3..j * 3 + 3]);
                    let direct = conf.nets()[m].forward(&x).unwrap()[0];
                    assert!((scores[(i * 2 + m) * 2 + j] - direct).abs() < 1e-14);
                }
            }
        }
        let (m, j) = select_pair(&conf, &states, 2, 1).unwrap();
        assert_eq!(m * 2 + j, argmax(&scores[4..8]));
    }

    #[test]
    fn softmax_normalizes_and_argmax_breaks_ties_low() {
        let p = softmax(&[1000.0, 999.0, 990.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 1.0, 2.0, 3.0]), 3);
    }

    #[test]
    fn label_count_and_round_trip() {
        let eps = generate_episodes(&builtin("particles-1").unwrap(), 0, 2, 50, 0).unwrap();
        let bank = MechanismBank::new(4, 7, &[6], 1, AdamConfig::default()).unwrap();
        let labels = extract_labels(&bank, &eps, 10).unwrap();
        assert_eq!(labels.len(), 2 * 40 * 3);
        assert_eq!(labels, extract_labels(&bank, &eps, 10).unwrap());
        let back = CompositionLabelSet::decode(&labels.encode(), Path::new("mem")).unwrap();
        assert_eq!(back, labels);
        let short = generate_episodes(&builtin("particles-1").unwrap(), 0, 1, 5, 0).unwrap();
        assert_eq!(extract_labels(&bank, &short, 10).unwrap().skipped, 1);
    }

    #[test]
    fn single_label_is_learned() {
        let eps = generate_episodes(&builtin("particles-6").unwrap(), 0, 1, 3, 0).unwrap();
        let labels = CompositionLabelSet {
            horizon: 1,
            mechanisms: 2,
            records: vec![LabelRecord {
                episode: 0,
                t: 0,
                object: 1,
                mechanism: 1,
                context: 2,
            }],
            skipped: 0,
        };
        let mut conf = tiny(2, 7, 3);
        for m in 0..2 {
            conf.net_mut(m).zero_output_layer();
        }
        let (nll0, _) = composition_loss(&conf, &labels, &eps).unwrap();
        assert!((nll0 - 6f64.ln()).abs() < 1e-12);
        let cfg = CompositionConfig {
            lr: 1e-2,
            max_steps: 300,
            eval_interval: 50,
            ..CompositionConfig::default()
        };
        let trace = train_composition(&mut conf, &labels, &eps, &cfg).unwrap();
        let last = trace.rows.last().unwrap();
        assert!(last.nll < 0.05 && last.top1_acc == 1.0, "{last:?}");
        assert_eq!(select_pair(&conf, eps[0].state(0), 3, 1).unwrap(), (1, 2));
    }
}
