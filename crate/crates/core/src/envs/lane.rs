//! One-dimensional lane with two cars and a traffic light.
//!
//! State row: `[x, v, car_orange, car_blue, light, red]`. The light never
//! moves; its red flag flips every `light_cycle` steps. Cars leaving at
//! `x > 1` re-enter at the other end of the lane.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{
    Condition, EnvSpec, InteractionMode, ObjectKind, Roster, StepLabels, WorldState, LANE_DIM,
};
use crate::{Error, Result};

const MIN_GAP: f64 = 0.05;
const MAX_ATTEMPTS: usize = 10_000;

fn target_speed(
    spec: &EnvSpec,
    state: &WorldState,
    mode: InteractionMode,
    ctx: usize,
) -> Option<f64> {
    match mode {
        InteractionMode::CruiseNormal => Some(spec.physics.speed_normal),
        InteractionMode::CruiseSlow => Some(spec.physics.speed_slow),
        InteractionMode::BrakeForLight => Some(0.0),
        InteractionMode::FollowLead => Some(state.object(ctx)[1]),
        _ => None,
    }
}

pub(super) fn step(state: &WorldState, spec: &EnvSpec, labels: &StepLabels) -> WorldState {
    let p = &spec.physics;
    let mut next = state.clone();
    for i in 0..state.k {
        if state.kind(spec.domain, i) == ObjectKind::Light {
            let o = next.object_mut(i);
            o[1] = 0.0;
            if state.light_timer + 1 >= p.light_cycle {
                o[5] = 1.0 - o[5];
            }
            continue;
        }
        if let Some(target) = target_speed(spec, state, labels.modes[i], labels.contexts[i]) {
            let o = next.object_mut(i);
            o[1] += p.relax_rate * (target - o[1]) * p.dt;
            o[0] += o[1] * p.dt;
            if o[0] > 1.0 {
                o[0] -= 2.0;
            }
        }
    }
    next.light_timer = if state.light_timer + 1 >= p.light_cycle {
        0
    } else {
        state.light_timer + 1
    };
    next
}

/// Speed a car settles at when nothing is in its way.
fn cruise_speed(spec: &EnvSpec, kind: ObjectKind) -> f64 {
    for rule in &spec.rules {
        let fires = match rule.condition {
            Condition::Always | Condition::Otherwise => true,
            Condition::IsBlue => kind == ObjectKind::CarBlue,
            _ => false,
        };
        if fires {
            return match rule.interaction {
                InteractionMode::CruiseSlow => spec.physics.speed_slow,
                _ => spec.physics.speed_normal,
            };
        }
    }
    spec.physics.speed_normal
}

pub(super) fn init(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let Roster::Fixed(kinds) = &spec.roster else {
        return Err(Error::Config(
            "lane environments need a fixed roster".into(),
        ));
    };
    let mut car_positions: Vec<f64> = Vec::new();
    let mut attempts = 0;
    let mut z = Vec::with_capacity(kinds.len() * LANE_DIM);
    for &kind in kinds {
        let mut hot = [0.0; 3];
        hot[kind.slot()] = 1.0;
        if kind == ObjectKind::Light {
            let x = rng.gen_range(0.3..=0.7);
            let red = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
            z.extend_from_slice(&[x, 0.0, hot[0], hot[1], hot[2], red]);
            continue;
        }
        let x = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(Error::Generation("could not place cars on the lane".into()));
            }
            let x: f64 = rng.gen_range(-0.9..=0.0);
            if car_positions.iter().all(|q| (q - x).abs() >= MIN_GAP) {
                break x;
            }
        };
        car_positions.push(x);
        z.extend_from_slice(&[x, cruise_speed(spec, kind), hot[0], hot[1], hot[2], 0.0]);
    }
    let mut state = WorldState::new(kinds.len(), LANE_DIM, z)?;
    state.light_timer = rng.gen_range(0..spec.physics.light_cycle);
    Ok(state)
}
