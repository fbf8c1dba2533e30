//! Named environments shipped with the crate.

use super::{Condition::*, Domain, EnvSpec, InteractionMode::*, ObjectKind, Physics, Roster, Rule};

const NAMES: [&str; 11] = [
    "particles-1",
    "particles-2",
    "particles-3",
    "particles-4",
    "particles-5",
    "particles-6",
    "particles-adapt",
    "lane-1",
    "lane-2",
    "lane-3",
    "lane-adapt",
];

pub fn builtin_names() -> &'static [&'static str] {
    &NAMES
}

pub fn builtin(name: &str) -> Option<EnvSpec> {
    let particles = |k: usize, rules: Vec<Rule>| EnvSpec {
        env_id: name.to_string(),
        domain: Domain::Particles,
        roster: Roster::RandomColours(k),
        rules,
        physics: Physics::default(),
    };
    let lane = |rules: Vec<Rule>| EnvSpec {
        env_id: name.to_string(),
        domain: Domain::Lane,
        roster: Roster::Fixed(vec![
            ObjectKind::CarOrange,
            ObjectKind::CarBlue,
            ObjectKind::Light,
        ]),
        rules,
        physics: Physics::default(),
    };
    let spec = match name {
        "particles-1" => particles(
            3,
            vec![
                Rule::new(CloseTogether, Repulsion),
                Rule::new(Otherwise, StraightLine),
            ],
        ),
        "particles-2" => particles(
            3,
            vec![
                Rule::new(SameColour, Spring),
                Rule::new(CloseTogether, Attraction),
                Rule::new(Otherwise, StraightLine),
            ],
        ),
        "particles-3" => particles(
            3,
            vec![
                Rule::new(SameColour, Repulsion),
                Rule::new(OppositeColour, Spring),
                Rule::new(Otherwise, StraightLine),
            ],
        ),
        "particles-4" => particles(
            3,
            vec![
                Rule::new(SameColour, Attraction),
                Rule::new(IsBlue, SpiralCentre),
                Rule::new(IsRed, SpiralCentre),
                Rule::new(Otherwise, StraightLine),
            ],
        ),
        "particles-5" => particles(
            3,
            vec![
                Rule::new(SameColour, Repulsion),
                Rule::new(Otherwise, Spring),
            ],
        ),
        "particles-6" => particles(3, vec![Rule::new(Always, SpiralCentre)]),
        "particles-adapt" => particles(
            4,
            vec![
                Rule::new(SameColour, Spring),
                Rule::new(Otherwise, Repulsion),
            ],
        ),
        "lane-1" => lane(vec![
            Rule::new(RedLightAhead, BrakeForLight),
            Rule::new(CarAhead, FollowLead),
            Rule::new(Otherwise, CruiseNormal),
        ]),
        "lane-2" => lane(vec![
            Rule::new(RedLightAhead, BrakeForLight),
            Rule::new(CarAhead, FollowLead),
            Rule::new(Otherwise, CruiseSlow),
        ]),
        "lane-3" => lane(vec![
            Rule::new(CarAhead, FollowLead),
            Rule::new(Otherwise, CruiseNormal),
        ]),
        "lane-adapt" => lane(vec![
            Rule::new(RedLightAhead, BrakeForLight),
            Rule::new(CarAhead, FollowLead),
            Rule::new(IsBlue, CruiseNormal),
            Rule::new(Otherwise, CruiseSlow),
        ]),
        _ => return None,
    };
    Some(spec)
}
