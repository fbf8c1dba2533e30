//! Deterministic multi-object simulators.
//!
//! Every environment is an ordered list of `(condition, interaction)` rules.
//! At each step every object takes the first rule whose condition holds and
//! interacts with the nearest object that satisfies it. The resulting
//! `(mode, context)` labels are emitted alongside the states; models never
//! see them, they exist for evaluation.

mod builtin;
mod lane;
mod particles;

pub use builtin::{builtin, builtin_names};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PARTICLE_DIM: usize = 7;
pub const LANE_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    StraightLine,
    Repulsion,
    Attraction,
    Spring,
    SpiralCentre,
    CruiseNormal,
    CruiseSlow,
    BrakeForLight,
    FollowLead,
    StaticLight,
}

impl InteractionMode {
    pub const ALL: [InteractionMode; 10] = [
        Self::StraightLine,
        Self::Repulsion,
        Self::Attraction,
        Self::Spring,
        Self::SpiralCentre,
        Self::CruiseNormal,
        Self::CruiseSlow,
        Self::BrakeForLight,
        Self::FollowLead,
        Self::StaticLight,
    ];

    /// Stable code used in dataset files.
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn from_code(code: i32) -> Option<Self> {
        usize::try_from(code)
            .ok()
            .and_then(|c| Self::ALL.get(c).copied())
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::StraightLine => "straight_line",
            Self::Repulsion => "repulsion",
            Self::Attraction => "attraction",
            Self::Spring => "spring",
            Self::SpiralCentre => "spiral_centre",
            Self::CruiseNormal => "cruise_normal",
            Self::CruiseSlow => "cruise_slow",
            Self::BrakeForLight => "brake_for_light",
            Self::FollowLead => "follow_lead",
            Self::StaticLight => "static_light",
        }
    }

    /// Unary modes act on the object alone and carry self-context.
    pub fn is_unary(self) -> bool {
        matches!(
            self,
            Self::StraightLine
                | Self::SpiralCentre
                | Self::CruiseNormal
                | Self::CruiseSlow
                | Self::StaticLight
        )
    }

    pub fn domain(self) -> Domain {
        if self.code() <= Self::SpiralCentre.code() {
            Domain::Particles
        } else {
            Domain::Lane
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    SameColour,
    OppositeColour,
    CloseTogether,
    IsBlue,
    IsRed,
    Always,
    Otherwise,
    RedLightAhead,
    CarAhead,
}

impl Condition {
    pub fn is_unary(self) -> bool {
        matches!(
            self,
            Self::Otherwise | Self::Always | Self::IsBlue | Self::IsRed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub condition: Condition,
    pub interaction: InteractionMode,
}

impl Rule {
    pub const fn new(condition: Condition, interaction: InteractionMode) -> Self {
        Self {
            condition,
            interaction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Particles,
    Lane,
}

impl Domain {
    pub fn state_dim(self) -> usize {
        match self {
            Domain::Particles => PARTICLE_DIM,
            Domain::Lane => LANE_DIM,
        }
    }

    pub fn modes(self) -> Vec<InteractionMode> {
        InteractionMode::ALL
            .iter()
            .copied()
            .filter(|m| m.domain() == self)
            .collect()
    }

    pub fn from_state_dim(d: usize) -> Option<Self> {
        match d {
            PARTICLE_DIM => Some(Domain::Particles),
            LANE_DIM => Some(Domain::Lane),
            _ => None,
        }
    }

    /// Indices of the position entries within an object state.
    pub fn position_dims(self) -> std::ops::Range<usize> {
        match self {
            Domain::Particles => 0..2,
            Domain::Lane => 0..1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Red,
    Green,
    Blue,
    CarOrange,
    CarBlue,
    Light,
}

impl ObjectKind {
    pub const PARTICLES: [ObjectKind; 3] = [Self::Red, Self::Green, Self::Blue];

    /// Index into the three-way one-hot of the object's domain.
    pub fn slot(self) -> usize {
        match self {
            Self::Red | Self::CarOrange => 0,
            Self::Green | Self::CarBlue => 1,
            Self::Blue | Self::Light => 2,
        }
    }

    pub fn domain(self) -> Domain {
        match self {
            Self::Red | Self::Green | Self::Blue => Domain::Particles,
            _ => Domain::Lane,
        }
    }

    pub fn is_car(self) -> bool {
        matches!(self, Self::CarOrange | Self::CarBlue)
    }

    fn is_blue(self) -> bool {
        matches!(self, Self::Blue | Self::CarBlue)
    }

    fn from_slot(domain: Domain, slot: usize) -> Self {
        match (domain, slot) {
            (Domain::Particles, 0) => Self::Red,
            (Domain::Particles, 1) => Self::Green,
            (Domain::Particles, _) => Self::Blue,
            (Domain::Lane, 0) => Self::CarOrange,
            (Domain::Lane, 1) => Self::CarBlue,
            (Domain::Lane, _) => Self::Light,
        }
    }
}

/// Who is in the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Roster {
    /// `k` particles, each colour drawn uniformly per episode.
    RandomColours(usize),
    Fixed(Vec<ObjectKind>),
}

impl Roster {
    pub fn len(&self) -> usize {
        match self {
            Roster::RandomColours(k) => *k,
            Roster::Fixed(kinds) => kinds.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Physical constants of both domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub dt: f64,
    pub max_speed: f64,
    pub close_distance: f64,
    pub attraction: f64,
    pub repulsion: f64,
    pub spring_k: f64,
    pub spring_rest: f64,
    pub spiral_pull: f64,
    pub spiral_swirl: f64,
    pub speed_normal: f64,
    pub speed_slow: f64,
    pub relax_rate: f64,
    pub light_ahead: f64,
    pub car_ahead: f64,
    pub light_cycle: u32,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_speed: 1.0,
            close_distance: 0.5,
            attraction: 0.05,
            repulsion: 0.05,
            spring_k: 0.2,
            spring_rest: 0.5,
            spiral_pull: 0.1,
            spiral_swirl: 0.05,
            speed_normal: 0.05,
            speed_slow: 0.02,
            relax_rate: 0.5,
            light_ahead: 0.3,
            car_ahead: 0.2,
            light_cycle: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub env_id: String,
    pub domain: Domain,
    pub roster: Roster,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub physics: Physics,
}

impl EnvSpec {
    pub fn k(&self) -> usize {
        self.roster.len()
    }

    pub fn d(&self) -> usize {
        self.domain.state_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("env '{}': {msg}", self.env_id)));
        if self.roster.is_empty() {
            return bad("needs at least one object".into());
        }
        match self.rules.last() {
            None => return bad("rule list is empty".into()),
            Some(r) if !matches!(r.condition, Condition::Otherwise | Condition::Always) => {
                return bad("rule list must end with an otherwise/always rule".into())
            }
            _ => {}
        }
        if let Some(r) = self
            .rules
            .iter()
            .find(|r| r.interaction.domain() != self.domain)
        {
            return bad(format!(
                "interaction {} does not belong to this domain",
                r.interaction.name()
            ));
        }
        if let Roster::Fixed(kinds) = &self.roster {
            if let Some(k) = kinds.iter().find(|k| k.domain() != self.domain) {
                return bad(format!("object {k:?} does not belong to this domain"));
            }
        }
        if self.domain == Domain::Lane && !matches!(self.roster, Roster::Fixed(_)) {
            return bad("lane environments need a fixed roster".into());
        }
        let p = &self.physics;
        if !(p.dt > 0.0 && p.max_speed > 0.0 && p.light_cycle > 0) {
            return bad("dt, max_speed and light_cycle must be positive".into());
        }
        Ok(())
    }
}

/// Object states `z_i`, row-major `K x d`, plus the hidden light timer of
/// the lane world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub k: usize,
    pub d: usize,
    pub z: Vec<f64>,
    pub light_timer: u32,
}

impl WorldState {
    pub fn new(k: usize, d: usize, z: Vec<f64>) -> Result<Self> {
        if z.len() != k * d {
            return Err(Error::Shape(format!(
                "state needs {} values, got {}",
                k * d,
                z.len()
            )));
        }
        Ok(Self {
            k,
            d,
            z,
            light_timer: 0,
        })
    }

    #[inline]
    pub fn object(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn object_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.z[i * self.d..(i + 1) * self.d]
    }

    pub fn kind(&self, domain: Domain, i: usize) -> ObjectKind {
        let o = self.object(i);
        let offset = match domain {
            Domain::Particles => 4,
            Domain::Lane => 2,
        };
        let slot = (0..3)
            .max_by(|&a, &b| o[offset + a].total_cmp(&o[offset + b]).then(b.cmp(&a)))
            .unwrap();
        ObjectKind::from_slot(domain, slot)
    }

    /// Object rows reordered so that row `r` of the result is row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut z = Vec::with_capacity(self.z.len());
        for &p in perm {
            z.extend_from_slice(self.object(p));
        }
        Self { z, ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepLabels {
    pub modes: Vec<InteractionMode>,
    pub contexts: Vec<usize>,
}

/// Distance between two objects' positions.
pub fn distance(domain: Domain, state: &WorldState, i: usize, j: usize) -> f64 {
    let (a, b) = (state.object(i), state.object(j));
    match domain {
        Domain::Particles => ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt(),
        Domain::Lane => (a[0] - b[0]).abs(),
    }
}

/// Objects other than `i` satisfying a binary condition with `i`.
fn candidates(cond: Condition, i: usize, state: &WorldState, spec: &EnvSpec) -> Vec<usize> {
    let dom = spec.domain;
    let me = state.kind(dom, i);
    let p = &spec.physics;
    (0..state.k)
        .filter(|&j| j != i)
        .filter(|&j| {
            let other = state.kind(dom, j);
            match cond {
                Condition::SameColour => other == me,
                Condition::OppositeColour => {
                    other != me && !(dom == Domain::Lane && other == ObjectKind::Light)
                }
                Condition::CloseTogether => distance(dom, state, i, j) < p.close_distance,
                Condition::RedLightAhead => {
                    let gap = state.object(j)[0] - state.object(i)[0];
                    other == ObjectKind::Light
                        && state.object(j)[5] > 0.5
                        && gap > 0.0
                        && gap < p.light_ahead
                }
                Condition::CarAhead => {
                    let gap = state.object(j)[0] - state.object(i)[0];
                    other.is_car() && gap > 0.0 && gap < p.car_ahead
                }
                _ => false,
            }
        })
        .collect()
}

fn nearest(domain: Domain, state: &WorldState, i: usize, pool: &[usize]) -> Option<usize> {
    // strict < keeps the lowest index on ties
    let mut best: Option<(usize, f64)> = None;
    for &j in pool {
        let dist = distance(domain, state, i, j);
        if best.map_or(true, |(_, b)| dist < b) {
            best = Some((j, dist));
        }
    }
    best.map(|(j, _)| j)
}

/// First-match rule resolution for object `i`: the active mode and the
/// context object it interacts with.
///
/// A binary interaction reached through a unary condition (for example
/// `otherwise -> spring`) pairs with the nearest other object.
pub fn resolve_rule(i: usize, state: &WorldState, spec: &EnvSpec) -> (InteractionMode, usize) {
    let dom = spec.domain;
    if dom == Domain::Lane && state.kind(dom, i) == ObjectKind::Light {
        return (InteractionMode::StaticLight, i);
    }
    let me = state.kind(dom, i);
    for rule in &spec.rules {
        let pool = match rule.condition {
            Condition::Always | Condition::Otherwise => None,
            Condition::IsBlue if me.is_blue() => None,
            Condition::IsRed if me == ObjectKind::Red => None,
            Condition::IsBlue | Condition::IsRed => continue,
            binary => {
                let c = candidates(binary, i, state, spec);
                if c.is_empty() {
                    continue;
                }
                Some(c)
            }
        };
        if rule.interaction.is_unary() {
            return (rule.interaction, i);
        }
        let pool = pool.unwrap_or_else(|| {
            (0..state.k)
                .filter(|&j| {
                    j != i && !(dom == Domain::Lane && state.kind(dom, j) == ObjectKind::Light)
                })
                .collect()
        });
        if let Some(j) = nearest(dom, state, i, &pool) {
            return (rule.interaction, j);
        }
    }
    let fallback = match dom {
        Domain::Particles => InteractionMode::StraightLine,
        Domain::Lane => InteractionMode::CruiseNormal,
    };
    (fallback, i)
}

pub fn resolve_all(state: &WorldState, spec: &EnvSpec) -> StepLabels {
    let (modes, contexts) = (0..state.k).map(|i| resolve_rule(i, state, spec)).unzip();
    StepLabels { modes, contexts }
}

/// Advances one step and returns the labels that governed it.
pub fn step(state: &WorldState, spec: &EnvSpec) -> Result<(WorldState, StepLabels)> {
    if !state.is_finite() {
        return Err(Error::Simulation(format!(
            "non-finite state in env '{}'",
            spec.env_id
        )));
    }
    if state.k != spec.k() || state.d != spec.d() {
        return Err(Error::Shape(format!(
            "state is {}x{}, env '{}' is {}x{}",
            state.k,
            state.d,
            spec.env_id,
            spec.k(),
            spec.d()
        )));
    }
    let labels = resolve_all(state, spec);
    let next = match spec.domain {
        Domain::Particles => particles::step(state, spec, &labels),
        Domain::Lane => lane::step(state, spec, &labels),
    };
    if !next.is_finite() {
        return Err(Error::Simulation(format!(
            "simulation of '{}' produced non-finite state",
            spec.env_id
        )));
    }
    Ok((next, labels))
}

pub fn init_world(spec: &EnvSpec, seed: u64) -> Result<WorldState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match spec.domain {
        Domain::Particles => particles::init(spec, &mut rng),
        Domain::Lane => lane::init(spec, &mut rng),
    }
}

/// Convenience: `len` states from `init_world`, with the `len - 1` label rows.
pub fn rollout(
    spec: &EnvSpec,
    seed: u64,
    len: usize,
) -> Result<(Vec<WorldState>, Vec<StepLabels>)> {
    let mut states = vec![init_world(spec, seed)?];
    let mut labels = Vec::with_capacity(len.saturating_sub(1));
    while states.len() < len {
        let (next, lab) = step(states.last().unwrap(), spec)?;
        states.push(next);
        labels.push(lab);
    }
    Ok((states, labels))
}
