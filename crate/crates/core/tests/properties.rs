use std::path::Path;

use comet::competition::{
    competition_update, select_winners, windowed_pair_loss, MechanismBank, Phase,
};
use comet::dataset::{decode_episodes, encode_episodes, generate_episodes, sample_windows, Window};
use comet::envs::{builtin, init_world, resolve_rule, step, Domain};
use comet::nn::AdamConfig;
use proptest::prelude::*;

const PARTICLE_ENVS: [&str; 7] = [
    "particles-1",
    "particles-2",
    "particles-3",
    "particles-4",
    "particles-5",
    "particles-6",
    "particles-adapt",
];
const LANE_ENVS: [&str; 4] = ["lane-1", "lane-2", "lane-3", "lane-adapt"];

fn any_env() -> impl Strategy<Value = &'static str> {
    prop::sample::select(
        PARTICLE_ENVS
            .iter()
            .chain(LANE_ENVS.iter())
            .copied()
            .collect::<Vec<_>>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn particles_stay_in_bounds(env in prop::sample::select(PARTICLE_ENVS.to_vec()), seed in 0u64..10_000) {
        let spec = builtin(env).unwrap();
        let mut s = init_world(&spec, seed).unwrap();
        for _ in 0..80 {
            s = step(&s, &spec).unwrap().0;
            for i in 0..s.k {
                let o = s.object(i);
                prop_assert!(o[0].abs() <= 1.0 && o[1].abs() <= 1.0, "{o:?}");
                prop_assert!(o[2].hypot(o[3]) <= 1.0 + 1e-12);
                prop_assert!((o[4..7].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn labels_reproduce_and_unary_is_self(env in any_env(), seed in 0u64..10_000) {
        let spec = builtin(env).unwrap();
        let mut s = init_world(&spec, seed).unwrap();
        for _ in 0..40 {
            let (next, labels) = step(&s, &spec).unwrap();
            for i in 0..s.k {
                prop_assert_eq!(resolve_rule(i, &s, &spec), (labels.modes[i], labels.contexts[i]));
                if labels.modes[i].is_unary() {
                    prop_assert_eq!(labels.contexts[i], i);
                } else {
                    prop_assert_ne!(labels.contexts[i], i);
                }
            }
            s = next;
        }
    }

    #[test]
    fn simulator_is_permutation_equivariant(seed in 0u64..10_000, rot in 1usize..3) {
        let spec = builtin("particles-2").unwrap();
        let mut s = init_world(&spec, seed).unwrap();
        for _ in 0..5 {
            s = step(&s, &spec).unwrap().0;
        }
        let perm: Vec<usize> = (0..s.k).map(|i| (i + rot) % s.k).collect();
        let direct = step(&s, &spec).unwrap().0.permuted(&perm);
        let via = step(&s.permuted(&perm), &spec).unwrap().0;
        for (a, b) in direct.z.iter().zip(&via.z) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn episodes_survive_encoding(env in any_env(), seed in 0u64..1000, n in 1usize..4, len in 2usize..12) {
        let eps = generate_episodes(&builtin(env).unwrap(), 0, n, len, seed).unwrap();
        let back = decode_episodes(&encode_episodes(&eps), Path::new("mem")).unwrap();
        prop_assert_eq!(back, eps);
    }
}

fn naive_window_loss(bank: &MechanismBank, w: &Window, i: usize, m: usize, j: usize) -> f64 {
    let mut total = 0.0;
    for tau in 0..w.horizon() {
        let delta = bank
            .predict_delta(m, w.object(tau, i), w.object(tau, j))
            .unwrap();
        for (c, dz) in delta.iter().enumerate() {
            let target = w.object(tau + 1, i)[c] - w.object(tau, i)[c];
            total += (dz - target).powi(2);
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn windowed_loss_matches_per_pair_oracle(seed in 0u64..1000, m in 1usize..4, horizon in 1usize..4) {
        let eps = generate_episodes(&builtin("particles-1").unwrap(), 0, 2, 12, seed).unwrap();
        let bank = MechanismBank::new(m, Domain::Particles.state_dim(), &[6], seed, AdamConfig::default()).unwrap();
        let w = Window::from_episode(&eps[1], 1, (seed as usize) % (12 - horizon), horizon).unwrap();
        let tensor = windowed_pair_loss(&bank, &w).unwrap();
        for i in 0..w.k {
            for mm in 0..m {
                for j in 0..w.k {
                    let want = naive_window_loss(&bank, &w, i, mm, j);
                    prop_assert!((tensor.get(i, mm, j) - want).abs() <= 1e-12 * want.max(1.0));
                }
            }
        }
        let winners = select_winners(&tensor);
        for (i, r) in winners.iter().enumerate() {
            let best = tensor.object(i).iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(r.loss, best);
        }
    }

    #[test]
    fn win_counts_cover_every_object(seed in 0u64..1000, batch in 1usize..6) {
        let eps = generate_episodes(&builtin("particles-5").unwrap(), 0, 3, 10, seed).unwrap();
        let mut bank = MechanismBank::new(3, 7, &[5], seed, AdamConfig::default()).unwrap();
        let b = sample_windows(&eps, 3, batch, seed).unwrap();
        let metrics = competition_update(&mut bank, &b, Phase::Compete).unwrap();
        prop_assert_eq!(metrics.win_counts.iter().sum::<usize>(), batch * 3);
        prop_assert!(metrics.mean_winner_loss.is_finite());
    }
}
