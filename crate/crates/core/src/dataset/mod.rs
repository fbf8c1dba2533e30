//! Episodes, dataset files and window sampling.

mod io;

pub use io::{
    decode_episodes, encode_episodes, load_episodes, load_manifest, save_episodes, DatasetManifest,
    ManifestEntry,
};

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envs::{self, EnvSpec, InteractionMode, WorldState};
use crate::nn::Scaling;
use crate::{Error, Result};

pub const GENERATOR_VERSION: u32 = 1;

/// One simulated trajectory: `T` states of `K` objects and the `T - 1`
/// label rows of the transitions between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub env_id: String,
    pub k: usize,
    pub t: usize,
    pub d: usize,
    /// `T x K x d`, row-major.
    pub states: Vec<f64>,
    /// `(T - 1) x K` interaction-mode codes.
    pub gt_mode: Vec<i32>,
    /// `(T - 1) x K` context indices.
    pub gt_ctx: Vec<i32>,
}

impl Episode {
    pub fn from_rollout(
        env_id: &str,
        states: &[WorldState],
        labels: &[envs::StepLabels],
    ) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::Shape("episode needs at least one state".into()))?;
        let (k, d) = (first.k, first.d);
        let mut flat = Vec::with_capacity(states.len() * k * d);
        for s in states {
            flat.extend_from_slice(&s.z);
        }
        let gt_mode = labels
            .iter()
            .flat_map(|l| l.modes.iter().map(|m| m.code()))
            .collect();
        let gt_ctx = labels
            .iter()
            .flat_map(|l| l.contexts.iter().map(|&c| c as i32))
            .collect();
        let ep = Self {
            env_id: env_id.to_string(),
            k,
            t: states.len(),
            d,
            states: flat,
            gt_mode,
            gt_ctx,
        };
        ep.validate()?;
        Ok(ep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 1 || self.k < 1 || self.d < 1 {
            return Err(Error::Shape(format!(
                "episode of '{}' has an empty dimension",
                self.env_id
            )));
        }
        if self.states.len() != self.t * self.k * self.d {
            return Err(Error::Shape(format!(
                "episode of '{}': state block size mismatch",
                self.env_id
            )));
        }
        let rows = self.t - 1;
        if self.gt_mode.len() != rows * self.k || self.gt_ctx.len() != rows * self.k {
            return Err(Error::Shape(format!(
                "episode of '{}': expected {rows} label rows for {} states",
                self.env_id, self.t
            )));
        }
        if !self.states.iter().all(|v| v.is_finite()) {
            return Err(Error::Shape(format!(
                "episode of '{}' has non-finite states",
                self.env_id
            )));
        }
        if let Some(m) = self
            .gt_mode
            .iter()
            .find(|&&m| InteractionMode::from_code(m).is_none())
        {
            return Err(Error::Shape(format!("unknown interaction code {m}")));
        }
        if let Some(c) = self.gt_ctx.iter().find(|&&c| c < 0 || c as usize >= self.k) {
            return Err(Error::Shape(format!("context index {c} out of range")));
        }
        Ok(())
    }

    /// All objects at time `t`: `K x d`.
    #[inline]
    pub fn state(&self, t: usize) -> &[f64] {
        let n = self.k * self.d;
        &self.states[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn object(&self, t: usize, i: usize) -> &[f64] {
        let off = (t * self.k + i) * self.d;
        &self.states[off..off + self.d]
    }

    pub fn mode(&self, t: usize, i: usize) -> InteractionMode {
        InteractionMode::from_code(self.gt_mode[t * self.k + i]).expect("validated")
    }

    pub fn context(&self, t: usize, i: usize) -> usize {
        self.gt_ctx[t * self.k + i] as usize
    }

    pub fn world_state(&self, t: usize) -> WorldState {
        WorldState::new(self.k, self.d, self.state(t).to_vec()).expect("validated")
    }

    /// Number of windows of `horizon` transitions.
    pub fn window_count(&self, horizon: usize) -> usize {
        self.t.saturating_sub(horizon)
    }
}

/// Rolls `episode_len` states per episode. Episode `e` of environment `n`
/// uses seed `seed ^ (n << 32) ^ e`.
pub fn generate_episodes(
    spec: &EnvSpec,
    env_index: usize,
    count: usize,
    episode_len: usize,
    seed: u64,
) -> Result<Vec<Episode>> {
    if episode_len < 2 {
        return Err(Error::Config(format!(
            "episode_len must be >= 2, got {episode_len}"
        )));
    }
    (0..count)
        .into_par_iter()
        .map(|e| {
            let ep_seed = seed ^ ((env_index as u64) << 32) ^ e as u64;
            let (states, labels) = envs::rollout(spec, ep_seed, episode_len)?;
            Episode::from_rollout(&spec.env_id, &states, &labels)
        })
        .collect()
}

/// Generates one file per environment plus `manifest.txt` under `out_dir`.
pub fn generate_dataset(
    dataset_id: &str,
    specs: &[EnvSpec],
    episodes_per_env: usize,
    episode_len: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if episodes_per_env < 1 {
        return Err(Error::Config("episodes_per_env must be >= 1".into()));
    }
    if specs.is_empty() {
        return Err(Error::Config("no environments to generate".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries = Vec::with_capacity(specs.len());
    for (n, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let episodes = generate_episodes(spec, n, episodes_per_env, episode_len, seed)?;
        let file = format!("{}.cmtd", spec.env_id);
        save_episodes(&out_dir.join(&file), &episodes)?;
        entries.push(ManifestEntry {
            env_id: spec.env_id.clone(),
            episodes: episodes_per_env,
            file,
        });
    }
    let manifest = DatasetManifest {
        dataset_id: dataset_id.to_string(),
        seed,
        episode_len,
        generator_version: GENERATOR_VERSION,
        entries,
    };
    manifest.save(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Splits off the last `ceil(frac * n)` episodes of every environment.
pub fn split_holdout(episodes: Vec<Episode>, frac: f64) -> (Vec<Episode>, Vec<Episode>) {
    let mut ids: Vec<String> = Vec::new();
    for e in &episodes {
        if !ids.contains(&e.env_id) {
            ids.push(e.env_id.clone());
        }
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for id in ids {
        let group: Vec<Episode> = episodes
            .iter()
            .filter(|e| e.env_id == id)
            .cloned()
            .collect();
        let n_held = if frac > 0.0 {
            ((group.len() as f64 * frac).ceil() as usize).min(group.len().saturating_sub(1))
        } else {
            0
        };
        let cut = group.len() - n_held;
        for (i, ep) in group.into_iter().enumerate() {
            if i < cut {
                train.push(ep);
            } else {
                held.push(ep);
            }
        }
    }
    (train, held)
}

/// Per-dimension mean and standard deviation of object states and of
/// one-step state deltas over a set of episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
}

/// Spreads below this are treated as constant dimensions (scale 1).
const MIN_SPREAD: f64 = 1e-9;

impl StateStats {
    pub fn from_episodes(episodes: &[Episode]) -> Result<Self> {
        let d = episodes
            .first()
            .ok_or_else(|| Error::Sampling("statistics need at least one episode".into()))?
            .d;
        if episodes.iter().any(|e| e.d != d) {
            return Err(Error::Shape(
                "episodes disagree on the state dimension".into(),
            ));
        }
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut dsum = vec![0.0; d];
        let mut dsq = vec![0.0; d];
        let (mut n, mut dn) = (0usize, 0usize);
        for ep in episodes {
            for t in 0..ep.t {
                for i in 0..ep.k {
                    let z = ep.object(t, i);
                    for c in 0..d {
                        sum[c] += z[c];
                        sq[c] += z[c] * z[c];
                    }
                    n += 1;
                    if t + 1 < ep.t {
                        let next = ep.object(t + 1, i);
                        for c in 0..d {
                            let dz = next[c] - z[c];
                            dsum[c] += dz;
                            dsq[c] += dz * dz;
                        }
                        dn += 1;
                    }
                }
            }
        }
        let moments = |s: &[f64], q: &[f64], n: usize| -> (Vec<f64>, Vec<f64>) {
            let n = n.max(1) as f64;
            let mean: Vec<f64> = s.iter().map(|v| v / n).collect();
            let std = q
                .iter()
                .zip(&mean)
                .map(|(q, m)| {
                    let sd = (q / n - m * m).max(0.0).sqrt();
                    if sd < MIN_SPREAD {
                        1.0
                    } else {
                        sd
                    }
                })
                .collect();
            (mean, std)
        };
        let (mean, std) = moments(&sum, &sq, n);
        let (delta_mean, mut delta_std) = moments(&dsum, &dsq, dn);
        // A dimension that never changes (colour) is scaled like the
        // quietest moving one, so an untrained output starts small there too.
        let raw: Vec<f64> = dsq
            .iter()
            .zip(&delta_mean)
            .map(|(q, m)| (q / dn.max(1) as f64 - m * m).max(0.0).sqrt())
            .collect();
        if let Some(quiet) = raw
            .iter()
            .copied()
            .filter(|&s| s >= MIN_SPREAD)
            .min_by(f64::total_cmp)
        {
            for (s, r) in delta_std.iter_mut().zip(&raw) {
                if *r < MIN_SPREAD {
                    *s = quiet;
                }
            }
        }
        Ok(Self {
            mean,
            std,
            delta_mean,
            delta_std,
        })
    }

    /// For a network `[z_a ; z_b] -> delta`.
    pub fn pair_to_delta(&self) -> Scaling {
        Scaling {
            in_shift: [self.mean.as_slice(), &self.mean].concat(),
            in_scale: [self.std.as_slice(), &self.std].concat(),
            out_shift: self.delta_mean.clone(),
            out_scale: self.delta_std.clone(),
        }
    }

    /// For a network `[z ; extra] -> delta`, leaving `extra` untouched.
    pub fn state_and_extra_to_delta(&self, extra: usize) -> Scaling {
        Scaling {
            in_shift: [self.mean.clone(), vec![0.0; extra]].concat(),
            in_scale: [self.std.clone(), vec![1.0; extra]].concat(),
            out_shift: self.delta_mean.clone(),
            out_scale: self.delta_std.clone(),
        }
    }

    /// For a network `[z_a ; z_b] -> features`, leaving the output untouched.
    pub fn pair_to_features(&self, out: usize) -> Scaling {
        Scaling {
            in_shift: [self.mean.as_slice(), &self.mean].concat(),
            in_scale: [self.std.as_slice(), &self.std].concat(),
            out_shift: vec![0.0; out],
            out_scale: vec![1.0; out],
        }
    }
}

/// `horizon + 1` consecutive states of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    pub k: usize,
    pub d: usize,
    /// `(horizon + 1) x K x d`.
    pub states: Vec<f64>,
    /// `horizon x K` label codes and contexts aligned with the transitions.
    pub gt_mode: Vec<i32>,
    pub gt_ctx: Vec<i32>,
}

impl Window {
    pub fn from_episode(
        ep: &Episode,
        episode: usize,
        start: usize,
        horizon: usize,
    ) -> Result<Self> {
        if horizon == 0 || start + horizon >= ep.t {
            return Err(Error::Sampling(format!(
                "window [{start}, {}] does not fit an episode of {} states",
                start + horizon,
                ep.t
            )));
        }
        let n = ep.k * ep.d;
        Ok(Self {
            episode,
            start,
            k: ep.k,
            d: ep.d,
            states: ep.states[start * n..(start + horizon + 1) * n].to_vec(),
            gt_mode: ep.gt_mode[start * ep.k..(start + horizon) * ep.k].to_vec(),
            gt_ctx: ep.gt_ctx[start * ep.k..(start + horizon) * ep.k].to_vec(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.states.len() / (self.k * self.d) - 1
    }

    #[inline]
    pub fn object(&self, tau: usize, i: usize) -> &[f64] {
        let off = (tau * self.k + i) * self.d;
        &self.states[off..off + self.d]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub horizon: usize,
    pub windows: Vec<Window>,
}

/// Uniform sampler over every `(episode, start)` pair with room for a
/// window of `horizon` transitions.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    horizon: usize,
    cumulative: Vec<usize>,
    rng: ChaCha8Rng,
}

impl WindowSampler {
    pub fn new(episodes: &[Episode], horizon: usize, seed: u64) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Sampling("no episodes to sample from".into()));
        }
        if horizon == 0 {
            return Err(Error::Sampling("horizon must be >= 1".into()));
        }
        if let Some(ep) = episodes.iter().find(|e| e.t < horizon + 1) {
            return Err(Error::Sampling(format!(
                "episode of '{}' has {} states, horizon {horizon} needs {}",
                ep.env_id,
                ep.t,
                horizon + 1
            )));
        }
        let mut total = 0;
        let cumulative = episodes
            .iter()
            .map(|e| {
                total += e.window_count(horizon);
                total
            })
            .collect();
        Ok(Self {
            horizon,
            cumulative,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn total_windows(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    /// Maps a flat window index to `(episode, start)`.
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let ep = self.cumulative.partition_point(|&c| c <= flat);
        let before = if ep == 0 { 0 } else { self.cumulative[ep - 1] };
        (ep, flat - before)
    }

    pub fn sample(&mut self, episodes: &[Episode], batch: usize) -> Result<WindowBatch> {
        if episodes.len() != self.cumulative.len() {
            return Err(Error::Sampling(format!(
                "sampler built for {} episodes, given {}",
                self.cumulative.len(),
                episodes.len()
            )));
        }
        let total = self.total_windows();
        let windows = (0..batch)
            .map(|_| {
                let flat = self.rng.gen_range(0..total);
                let (ep, start) = self.locate(flat);
                Window::from_episode(&episodes[ep], ep, start, self.horizon)
            })
            .collect::<Result<_>>()?;
        Ok(WindowBatch {
            horizon: self.horizon,
            windows,
        })
    }
}

pub fn sample_windows(
    episodes: &[Episode],
    horizon: usize,
    batch: usize,
    seed: u64,
) -> Result<WindowBatch> {
    WindowSampler::new(episodes, horizon, seed)?.sample(episodes, batch)
}
