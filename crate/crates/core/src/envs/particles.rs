//! 2-D particles in the `[-1, 1]^2` box.
//!
//! State row: `[x, y, vx, vy, red, green, blue]`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvSpec, InteractionMode, ObjectKind, Roster, StepLabels, WorldState, PARTICLE_DIM};
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 10_000;
const MIN_SEPARATION: f64 = 0.2;

pub(super) fn acceleration(
    state: &WorldState,
    spec: &EnvSpec,
    i: usize,
    mode: InteractionMode,
    j: usize,
) -> [f64; 2] {
    let p = &spec.physics;
    let me = state.object(i);
    let (dx, dy) = if i == j {
        (0.0, 0.0)
    } else {
        let other = state.object(j);
        (other[0] - me[0], other[1] - me[1])
    };
    let r = (dx * dx + dy * dy).sqrt();
    let unit = if r > 0.0 {
        [dx / r, dy / r]
    } else {
        [0.0, 0.0]
    };
    let scaled = |s: f64| [s * unit[0], s * unit[1]];
    match mode {
        InteractionMode::Attraction => scaled(p.attraction),
        InteractionMode::Repulsion => scaled(-p.repulsion),
        InteractionMode::Spring => scaled(p.spring_k * (r - p.spring_rest)),
        InteractionMode::SpiralCentre => [
            -p.spiral_pull * me[0] - p.spiral_swirl * me[3],
            -p.spiral_pull * me[1] + p.spiral_swirl * me[2],
        ],
        _ => [0.0, 0.0],
    }
}

pub(super) fn step(state: &WorldState, spec: &EnvSpec, labels: &StepLabels) -> WorldState {
    let p = &spec.physics;
    let mut next = state.clone();
    for i in 0..state.k {
        let a = acceleration(state, spec, i, labels.modes[i], labels.contexts[i]);
        let o = next.object_mut(i);
        let mut v = [o[2] + a[0] * p.dt, o[3] + a[1] * p.dt];
        let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if speed > p.max_speed {
            v = [v[0] * p.max_speed / speed, v[1] * p.max_speed / speed];
        }
        for axis in 0..2 {
            let mut x = o[axis] + v[axis] * p.dt;
            if x > 1.0 {
                x = 2.0 - x;
                v[axis] = -v[axis];
            } else if x < -1.0 {
                x = -2.0 - x;
                v[axis] = -v[axis];
            }
            o[axis] = x;
        }
        o[2] = v[0];
        o[3] = v[1];
    }
    next
}

pub(super) fn init(spec: &EnvSpec, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let k = spec.k();
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(k);
    let mut attempts = 0;
    while positions.len() < k {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Generation(format!(
                "could not place {k} particles at separation {MIN_SEPARATION} in {MAX_ATTEMPTS} attempts"
            )));
        }
        let cand = [rng.gen_range(-0.8..=0.8), rng.gen_range(-0.8..=0.8)];
        let clear = positions.iter().all(|q| {
            ((q[0] - cand[0]).powi(2) + (q[1] - cand[1]).powi(2)).sqrt() >= MIN_SEPARATION
        });
        if clear {
            positions.push(cand);
        }
    }
    let mut z = Vec::with_capacity(k * PARTICLE_DIM);
    for pos in &positions {
        let v = [rng.gen_range(-0.05..=0.05), rng.gen_range(-0.05..=0.05)];
        let kind = match &spec.roster {
            Roster::RandomColours(_) => ObjectKind::PARTICLES[rng.gen_range(0..3)],
            Roster::Fixed(kinds) => kinds[z.len() / PARTICLE_DIM],
        };
        let mut hot = [0.0; 3];
        hot[kind.slot()] = 1.0;
        z.extend_from_slice(&[pos[0], pos[1], v[0], v[1], hot[0], hot[1], hot[2]]);
    }
    WorldState::new(k, PARTICLE_DIM, z)
}

#[cfg(test)]
mod tests {
    use super::super::tests::particle_state;
    use super::super::*;
    use InteractionMode::*;

    fn spec_with(rules: Vec<Rule>, k: usize) -> EnvSpec {
        EnvSpec {
            env_id: "test".into(),
            domain: Domain::Particles,
            roster: Roster::RandomColours(k),
            rules,
            physics: Physics::default(),
        }
    }

    #[test]
    fn straight_line_integrator() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 1);
        let s = particle_state(&[([0.0, 0.0, 0.1, 0.0], ObjectKind::Red)]);
        let (next, labels) = step(&s, &spec).unwrap();
        assert!((next.object(0)[0] - 0.01).abs() < 1e-15);
        assert_eq!(next.object(0)[1], 0.0);
        assert_eq!(&next.object(0)[2..4], &[0.1, 0.0]);
        assert_eq!(labels.modes, vec![StraightLine]);
    }

    #[test]
    fn spring_at_rest_length_has_no_force() {
        let spec = spec_with(vec![Rule::new(Condition::Always, Spring)], 2);
        let s = particle_state(&[
            ([-0.25, 0.0, 0.0, 0.0], ObjectKind::Red),
            ([0.25, 0.0, 0.0, 0.0], ObjectKind::Red),
        ]);
        for i in 0..2 {
            assert_eq!(super::acceleration(&s, &spec, i, Spring, 1 - i), [0.0, 0.0]);
        }
        let (next, _) = step(&s, &spec).unwrap();
        assert_eq!(next.z, s.z);
    }

    #[test]
    fn repulsion_separates_more_than_free_flight() {
        let spec = spec_with(vec![Rule::new(Condition::Always, Repulsion)], 2);
        let free = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 2);
        let s = particle_state(&[
            ([-0.1, 0.05, 0.02, -0.01], ObjectKind::Red),
            ([0.15, 0.0, -0.03, 0.0], ObjectKind::Blue),
        ]);
        let sep = |w: &WorldState| distance(Domain::Particles, w, 0, 1);
        let (mut a, mut b) = (s.clone(), s.clone());
        for _ in 0..5 {
            a = step(&a, &spec).unwrap().0;
            b = step(&b, &free).unwrap().0;
            assert!(sep(&a) > sep(&b));
        }
    }

    #[test]
    fn wall_reflection() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 1);
        let s = particle_state(&[([0.99, -0.995, 0.5, -0.1], ObjectKind::Green)]);
        let (next, _) = step(&s, &spec).unwrap();
        let o = next.object(0);
        assert!((o[0] - 0.96).abs() < 1e-12);
        assert!((o[1] - (-0.995)).abs() < 1e-12);
        assert_eq!(o[2], -0.5);
        assert_eq!(o[3], 0.1);
    }

    #[test]
    fn speed_is_clamped() {
        let spec = spec_with(vec![Rule::new(Condition::Always, Spring)], 2);
        let s = particle_state(&[
            ([-0.9, -0.9, 0.7, 0.7], ObjectKind::Red),
            ([0.9, 0.9, -0.7, -0.7], ObjectKind::Red),
        ]);
        let (next, _) = step(&s, &spec).unwrap();
        let o = next.object(0);
        assert!((o[2].hypot(o[3]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_rejected() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 1);
        let s = particle_state(&[([f64::NAN, 0.0, 0.0, 0.0], ObjectKind::Red)]);
        assert!(matches!(step(&s, &spec), Err(crate::Error::Simulation(_))));
    }

    #[test]
    fn init_is_deterministic_and_separated() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 4);
        for seed in 0..50 {
            let a = init_world(&spec, seed).unwrap();
            assert_eq!(a, init_world(&spec, seed).unwrap());
            for i in 0..4 {
                let o = a.object(i);
                assert!(o[0].abs() <= 0.8 && o[1].abs() <= 0.8);
                assert!(o[2].abs() <= 0.05 && o[3].abs() <= 0.05);
                assert_eq!(o[4..].iter().sum::<f64>(), 1.0);
                for j in 0..i {
                    assert!(distance(Domain::Particles, &a, i, j) >= 0.2);
                }
            }
        }
    }

    #[test]
    fn init_fails_when_crowded() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 200);
        assert!(matches!(
            init_world(&spec, 0),
            Err(crate::Error::Generation(_))
        ));
    }

    #[test]
    fn init_covers_all_quadrants() {
        let spec = spec_with(vec![Rule::new(Condition::Otherwise, StraightLine)], 1);
        let mut quadrants = [0usize; 4];
        for seed in 0..1000 {
            let o = init_world(&spec, seed).unwrap();
            let q = (o.z[0] >= 0.0) as usize * 2 + (o.z[1] >= 0.0) as usize;
            quadrants[q] += 1;
        }
        // each quadrant expects 250; a binomial(1000, 1/4) is within 250 +- 70 with
        // overwhelming probability
        assert!(
            quadrants.iter().all(|&c| (180..=320).contains(&c)),
            "{quadrants:?}"
        );
    }
}
