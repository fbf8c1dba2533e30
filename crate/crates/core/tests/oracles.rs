//! Independent reference computations checked against the library.

use comet::baseline::{
    finetune_baseline, gnn_forward, gnn_mse, train_baseline, transitions, BaselineConfig, GnnParams,
};
use comet::competition::{competition_update, windowed_pair_loss, MechanismBank, Phase};
use comet::composition::{argmax, extract_labels};
use comet::dataset::{generate_episodes, Episode, Window, WindowBatch};
use comet::envs::{builtin, Condition, Domain, EnvSpec, InteractionMode, Physics, Roster, Rule};
use comet::eval::best_matching;
use comet::nn::{Adam, AdamConfig, Grads, Mlp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn straight_line_env() -> EnvSpec {
    EnvSpec {
        env_id: "straight".into(),
        domain: Domain::Particles,
        roster: Roster::RandomColours(3),
        rules: vec![Rule::new(
            Condition::Otherwise,
            InteractionMode::StraightLine,
        )],
        physics: Physics::default(),
    }
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

#[test]
fn predict_delta_is_forward_on_concatenation() {
    let bank = MechanismBank::new(3, 5, &[7, 4], 11, AdamConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for m in 0..3 {
        let zi: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zj: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = bank.mechanism(m).forward(&concat(&zi, &zj)).unwrap();
        assert_eq!(bank.predict_delta(m, &zi, &zj).unwrap(), want);
    }
}

fn tiny_window(seed: u64, k: usize, d: usize, horizon: usize) -> Window {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..(horizon + 1) * k * d)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    Window {
        episode: 0,
        start: 0,
        k,
        d,
        states,
        gt_mode: vec![0; horizon * k],
        gt_ctx: vec![0; horizon * k],
    }
}

/// Gradient of `sum_tau ||f([z_i; z_j]) - (z_i' - z_i)||^2` for one pair.
fn pair_grad(net: &Mlp, w: &Window, i: usize, j: usize) -> Grads {
    let mut g = Grads::zeros_like(net);
    for tau in 0..w.horizon() {
        let x = concat(w.object(tau, i), w.object(tau, j));
        let out = net.forward(&x).unwrap();
        let up: Vec<f64> = (0..w.d)
            .map(|c| 2.0 * (out[c] - (w.object(tau + 1, i)[c] - w.object(tau, i)[c])))
            .collect();
        g.add_assign(&net.backward(&x, &up).unwrap().0);
    }
    g
}

fn assert_close(a: &Mlp, b: &Mlp) {
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        for (x, y) in la
            .weights()
            .iter()
            .zip(lb.weights())
            .chain(la.biases().iter().zip(lb.biases()))
        {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }
}

#[test]
fn compete_update_matches_hand_assembled_gradient() {
    for seed in 0..5 {
        let (k, d) = (2, 3);
        let w = tiny_window(seed, k, d, 1);
        let mut bank = MechanismBank::new(2, d, &[5], seed, AdamConfig::default()).unwrap();
        let before: Vec<Mlp> = bank.mechanisms().to_vec();

        let tensor = windowed_pair_loss(&bank, &w).unwrap();
        let mut sums: Vec<Option<(Grads, usize)>> = vec![None, None];
        for i in 0..k {
            let (mut best, mut arg) = (f64::INFINITY, (0, 0));
            for m in 0..2 {
                for j in 0..k {
                    if tensor.get(i, m, j) < best {
                        best = tensor.get(i, m, j);
                        arg = (m, j);
                    }
                }
            }
            let g = pair_grad(&before[arg.0], &w, i, arg.1);
            match &mut sums[arg.0] {
                Some((acc, n)) => {
                    acc.add_assign(&g);
                    *n += 1;
                }
                slot => *slot = Some((g, 1)),
            }
        }
        let mut expected = before.clone();
        for (m, s) in sums.into_iter().enumerate() {
            if let Some((mut g, n)) = s {
                g.scale(1.0 / n as f64);
                Adam::new(&before[m], AdamConfig::default())
                    .step(&mut expected[m], &g)
                    .unwrap();
            }
        }

        let batch = WindowBatch {
            horizon: 1,
            windows: vec![w],
        };
        competition_update(&mut bank, &batch, Phase::Compete).unwrap();
        for m in 0..2 {
            assert_close(bank.mechanism(m), &expected[m]);
        }
    }
}

#[test]
fn warm_start_gradient_is_all_pair_average() {
    let (k, d, mm, h) = (3, 2, 2, 2);
    let w = tiny_window(9, k, d, h);
    let mut bank = MechanismBank::new(mm, d, &[4], 2, AdamConfig::default()).unwrap();
    let before: Vec<Mlp> = bank.mechanisms().to_vec();
    let mut expected = before.clone();
    for m in 0..mm {
        let mut g = Grads::zeros_like(&before[m]);
        for i in 0..k {
            for j in 0..k {
                g.add_assign(&pair_grad(&before[m], &w, i, j));
            }
        }
        g.scale(1.0 / (k * mm * k) as f64);
        Adam::new(&before[m], AdamConfig::default())
            .step(&mut expected[m], &g)
            .unwrap();
    }
    let batch = WindowBatch {
        horizon: h,
        windows: vec![w],
    };
    competition_update(&mut bank, &batch, Phase::WarmStart).unwrap();
    for m in 0..mm {
        assert_close(bank.mechanism(m), &expected[m]);
    }
}

fn median_winner_loss(bank: &MechanismBank, eps: &[Episode], horizon: usize) -> f64 {
    let mut v = Vec::new();
    for (e, ep) in eps.iter().enumerate() {
        for start in (0..ep.t - horizon).step_by(5) {
            let w = Window::from_episode(ep, e, start, horizon).unwrap();
            let t = windowed_pair_loss(bank, &w).unwrap();
            for i in 0..w.k {
                v.push(t.object(i).iter().cloned().fold(f64::INFINITY, f64::min));
            }
        }
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn straight_line_training_cuts_winner_loss_tenfold() {
    let env = straight_line_env();
    let train = generate_episodes(&env, 0, 40, 20, 1).unwrap();
    let held = generate_episodes(&env, 1, 10, 20, 2).unwrap();
    let mut bank = MechanismBank::new(2, 7, &[16], 0, AdamConfig::with_lr(3e-3)).unwrap();
    let before = median_winner_loss(&bank, &held, 3);
    let mut sampler = comet::dataset::WindowSampler::new(&train, 3, 5).unwrap();
    for s in 0..400 {
        let phase = if s < 50 {
            Phase::WarmStart
        } else {
            Phase::Compete
        };
        let b = sampler.sample(&train, 16).unwrap();
        competition_update(&mut bank, &b, phase).unwrap();
    }
    let after = median_winner_loss(&bank, &held, 3);
    assert!(after * 10.0 <= before, "before {before:e}, after {after:e}");
}

#[test]
fn labels_match_brute_force_enumeration() {
    let eps = generate_episodes(&builtin("particles-2").unwrap(), 0, 3, 9, 4).unwrap();
    let bank = MechanismBank::new(4, 7, &[6], 8, AdamConfig::default()).unwrap();
    let horizon = 3;
    let labels = extract_labels(&bank, &eps, horizon).unwrap();
    assert_eq!(labels.records.len(), 3 * (9 - horizon) * 3);
    for r in &labels.records {
        let ep = &eps[r.episode as usize];
        let (t, i) = (r.t as usize, r.object as usize);
        let mut best = (f64::INFINITY, 0, 0);
        for m in 0..4 {
            for j in 0..3 {
                let mut loss = 0.0;
                for tau in t..t + horizon {
                    let d = bank
                        .predict_delta(m, ep.object(tau, i), ep.object(tau, j))
                        .unwrap();
                    for c in 0..7 {
                        loss += (ep.object(tau, i)[c] + d[c] - ep.object(tau + 1, i)[c]).powi(2);
                    }
                }
                if loss < best.0 * (1.0 - 1e-12) {
                    best = (loss, m, j);
                }
            }
        }
        assert_eq!(
            (r.mechanism as usize, r.context as usize),
            (best.1, best.2),
            "record {r:?}"
        );
    }
}

#[test]
fn argmax_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.gen_range(1..20);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
        let mut best = 0;
        for (i, x) in v.iter().enumerate() {
            if *x > v[best] {
                best = i;
            }
        }
        assert_eq!(argmax(&v), best);
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn matching_equals_permutation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..60 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        let counts: Vec<Vec<u64>> = (0..rows)
            .map(|_| (0..cols).map(|_| rng.gen_range(0..50)).collect())
            .collect();
        // Pad to square with zeros; a permutation of the padded matrix is an
        // injective partial assignment of the original.
        let n = rows.max(cols);
        let cell = |r: usize, c: usize| {
            if r < rows && c < cols {
                counts[r][c]
            } else {
                0
            }
        };
        let brute = permutations(n)
            .iter()
            .map(|p| (0..n).map(|r| cell(r, p[r])).sum::<u64>())
            .max()
            .unwrap();
        assert_eq!(best_matching(&counts), brute, "{counts:?}");
    }
}

#[test]
fn gnn_two_objects_by_hand() {
    let p = GnnParams::new(3, &[5], 4, 6, AdamConfig::default()).unwrap();
    let s = [0.2, -0.1, 0.4, -0.3, 0.5, 0.0];
    let out = gnn_forward(&p, &s, 2).unwrap();
    for i in 0..2 {
        let j = 1 - i;
        let msg = p
            .edge
            .forward(&concat(&s[i * 3..i * 3 + 3], &s[j * 3..j * 3 + 3]))
            .unwrap();
        let want = p.node.forward(&concat(&s[i * 3..i * 3 + 3], &msg)).unwrap();
        for c in 0..3 {
            assert!((out[i * 3 + c] - want[c]).abs() < 1e-15);
        }
    }
}

fn small_baseline(steps: usize) -> BaselineConfig {
    BaselineConfig {
        hidden: vec![32, 32],
        message_dim: 8,
        lr: 3e-3,
        batch_size: 32,
        steps,
        log_interval: 50,
        ..BaselineConfig::default()
    }
}

#[test]
fn gnn_straight_line_mse_drops_tenfold() {
    let env = straight_line_env();
    let train = generate_episodes(&env, 0, 30, 20, 3).unwrap();
    let held = generate_episodes(&env, 1, 10, 20, 4).unwrap();
    let cfg = small_baseline(600);
    let mut p = GnnParams::new(
        7,
        &cfg.hidden,
        cfg.message_dim,
        0,
        AdamConfig::with_lr(cfg.lr),
    )
    .unwrap();
    let before = gnn_mse(&p, &transitions(&held)).unwrap();
    train_baseline(&mut p, &train, &cfg).unwrap();
    let after = gnn_mse(&p, &transitions(&held)).unwrap();
    assert!(after * 10.0 <= before, "before {before:e}, after {after:e}");
}

#[test]
fn finetuning_sanity() {
    let pre_env = builtin("particles-1").unwrap();
    let pre = generate_episodes(&pre_env, 0, 40, 20, 7).unwrap();
    let pre_held = generate_episodes(&pre_env, 1, 10, 20, 8).unwrap();
    let cfg = small_baseline(500);
    let mut p = GnnParams::new(
        7,
        &cfg.hidden,
        cfg.message_dim,
        0,
        AdamConfig::with_lr(cfg.lr),
    )
    .unwrap();
    train_baseline(&mut p, &pre, &cfg).unwrap();

    // Fresh episodes from the same distribution: early stopping keeps
    // held-out error from growing.
    let fresh = generate_episodes(&pre_env, 4, 40, 20, 11).unwrap();
    let base = gnn_mse(&p, &transitions(&pre_held)).unwrap();
    let mut same = p.clone();
    finetune_baseline(&mut same, &fresh, &small_baseline(200)).unwrap();
    let after = gnn_mse(&same, &transitions(&pre_held)).unwrap();
    assert!(
        after <= base * 1.05,
        "pretrained {base:e}, finetuned {after:e}"
    );

    // New environment: finetuning helps on that environment.
    let adapt_env = builtin("particles-adapt").unwrap();
    let adapt = generate_episodes(&adapt_env, 2, 30, 20, 9).unwrap();
    let adapt_held = generate_episodes(&adapt_env, 3, 10, 20, 10).unwrap();
    let before = gnn_mse(&p, &transitions(&adapt_held)).unwrap();
    let mut tuned = p.clone();
    finetune_baseline(&mut tuned, &adapt, &small_baseline(300)).unwrap();
    let after = gnn_mse(&tuned, &transitions(&adapt_held)).unwrap();
    assert!(after < before, "pretrained {before:e}, finetuned {after:e}");
}
