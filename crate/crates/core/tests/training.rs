mod common;

use approx::assert_abs_diff_eq;

use robust_pref::losses::{group_losses, rebel_loss};
use robust_pref::numerics::{fit_loglog, norm, sub};
use robust_pref::simulator::{bt_probability, mix_rewards, mixture_reward, sample_dataset_with};
use robust_pref::trainer::{batch_objective, train_radius_coverage_logged};
use robust_pref::*;

#[test]
fn erm_recovers_truth_on_noise_free_targets() {
    let env = default_env(3).without_target_noise();
    let data = sample_dataset(&env, 2000, 9).unwrap();
    let theta = train_radius_coverage(&data, 0.0, &TrainConfig::default()).unwrap();
    let err = norm(&sub(&theta, &env.theta_star));
    assert!(err < 1e-3, "error {err}");
}

#[test]
fn robust_solution_approaches_erm_as_radius_shrinks() {
    let env = default_env(8);
    let data = sample_dataset(&env, 3000, 2).unwrap();
    let cfg = TrainConfig::default();
    let erm = train_radius_coverage(&data, 0.0, &cfg).unwrap();
    let gaps: Vec<f64> = [1e-2, 1e-4, 1e-6]
        .iter()
        .map(|&rho| norm(&sub(&train_radius_coverage(&data, rho, &cfg).unwrap(), &erm)))
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    // the gap scales like √ρ
    let rev: Vec<f64> = gaps.iter().rev().cloned().collect();
    let slope = fit_loglog(&[1e-6, 1e-4, 1e-2], &rev).unwrap().slope;
    assert!((slope - 0.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn training_log_tracks_error_and_dual() {
    let env = default_env(1);
    let data = sample_dataset(&env, 800, 5).unwrap();
    let cfg = TrainConfig {
        steps: 40,
        ..TrainConfig::default()
    };
    let (theta, log) = train_radius_coverage_logged(&data, 0.02, &cfg, Some(&env.theta_star)).unwrap();
    assert_eq!(log.len(), 40);
    let last = log.last().unwrap();
    assert_eq!(last.step, 40);
    assert_abs_diff_eq!(last.error.unwrap(), norm(&sub(&theta, &env.theta_star)), epsilon = 1e-15);
    assert!(log.iter().all(|l| l.dual > 0.0));
    assert!(log[0].objective > last.objective);
}

#[test]
fn zero_noise_losses_vanish_at_truth() {
    let env = default_env(12).without_noise();
    let data = sample_dataset(&env, 500, 1).unwrap();
    for i in 0..data.len() {
        let mu = &env.means[data.group(i)];
        let t: f64 = mu.iter().zip(&env.theta_star).map(|(a, b)| a * b).sum();
        assert_eq!(data.target(i), t);
    }
    assert!(group_losses(&data, &env.theta_star).iter().all(|&l| l < 1e-28));
}

#[test]
fn group_counts_match_mixture() {
    let env = default_env(0);
    let n = 100_000usize;
    let data = sample_dataset(&env, n, 77).unwrap();
    assert_eq!(data.counts().iter().sum::<u64>(), n as u64);
    for (k, &c) in data.counts().iter().enumerate() {
        let p = env.mixture[k];
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0, "group {k}");
    }
}

#[test]
fn env_invariants() {
    let env = default_env(21);
    assert_eq!((env.groups(), env.dim()), (15, 12));
    assert_abs_diff_eq!(norm(&env.theta_star), 1.0, epsilon = 1e-12);
    assert!(env.noise_scales.iter().all(|&s| (0.05..=0.35).contains(&s)));
    assert!(env.mixture.as_slice().iter().all(|&p| p > 1e-9));
    for row in &env.means {
        assert_abs_diff_eq!(norm(row), 1.0, epsilon = 1e-12);
    }
    assert_eq!(default_env(21), env);
    assert!(make_env(1, 4, 3, 5).is_err());
}

#[test]
fn dataset_dump_has_expected_columns() {
    let env = default_env(2);
    let data = sample_dataset(&env, 3, 1).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("group,v_1,"));
    assert!(header.ends_with("v_12,t"));
    assert_eq!(lines.count(), 3);
}

fn flat_env(dim: usize) -> PreferenceEnv {
    PreferenceEnv {
        seed: 0,
        actions_per_prompt: 4,
        reward_scale: 1.0,
        omega: [vec![0.0; dim], vec![0.0; dim]],
    }
}

#[test]
fn equal_rewards_give_fair_coin_labels() {
    let env = flat_env(3);
    let n = 20_000;
    let set = sample_preferences(&env, n, 0.1, Mixing::Convex, &mut RngStream::new(4)).unwrap();
    let wins = set.samples.iter().filter(|s| s.preferred_first).count() as f64 / n as f64;
    assert!((wins - 0.5).abs() <= 3.0 * 0.5 / (n as f64).sqrt());
    assert!(set.probabilities.iter().all(|&p| p == 0.5));
}

#[test]
fn bradley_terry_labels_are_calibrated() {
    let env = make_preference_env(3, 6, 6, 3.0).unwrap();
    let n = 10_000;
    let set = sample_preferences(&env, n, 0.1, Mixing::Convex, &mut RngStream::new(8)).unwrap();
    let mut bins = vec![(0.0, 0.0, 0usize); 10];
    for (s, &p) in set.samples.iter().zip(&set.probabilities) {
        let b = ((p * 10.0) as usize).min(9);
        bins[b].0 += if s.preferred_first { 1.0 } else { 0.0 };
        bins[b].1 += p;
        bins[b].2 += 1;
    }
    for (wins, psum, count) in bins {
        if count < 30 {
            continue;
        }
        let c = count as f64;
        let pbar = psum / c;
        let se = (pbar * (1.0 - pbar) / c).sqrt().max(1e-3);
        assert!((wins / c - pbar).abs() <= 3.0 * se, "bin mean {pbar}");
    }
    assert_abs_diff_eq!(bt_probability(3f64.ln()), 0.75, epsilon = 1e-15);
    let bound = 2.0 * env.reward_scale;
    assert!(set.samples.iter().all(|s| s.delta_r.abs() <= bound + 1e-12));
}

#[test]
fn nominal_alpha_one_uses_first_objective_only() {
    let env = make_preference_env(5, 4, 5, 1.0).unwrap();
    let set = sample_preferences(&env, 200, 1.0, Mixing::Convex, &mut RngStream::new(1)).unwrap();
    for s in &set.samples {
        let r1: f64 = env.omega[0].iter().zip(&s.delta_psi).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(s.delta_r, r1, epsilon = 1e-12);
    }
    assert!(mix_rewards(-0.2, 0.5, 0.3, Mixing::Geometric).is_err());
    assert!(sample_preferences(&env, 5, 1.5, Mixing::Convex, &mut RngStream::new(1)).is_err());
}

#[test]
fn convex_mixture_reward_is_affine_and_bracketed() {
    let env = make_preference_env(6, 5, 6, 1.0).unwrap();
    let prompts = env.draw_prompts(400, 2);
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let theta = vec![0.8, -0.3, 0.1, 0.5, -0.6];
    let curve = mixture_reward(&env, &theta, &prompts, &alphas, Mixing::Convex).unwrap();
    let ys: Vec<f64> = curve.iter().map(|c| c.mean).collect();
    let mx = alphas.iter().sum::<f64>() / 11.0;
    let my = ys.iter().sum::<f64>() / 11.0;
    let sxy: f64 = alphas.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = alphas.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    assert!(sxy * sxy / (sxx * syy) > 0.999);

    let uniform = mixture_reward(&env, &[0.0; 5], &prompts, &alphas, Mixing::Convex).unwrap();
    let (r2, r1) = (uniform[0].mean, uniform[10].mean);
    for c in &uniform {
        assert!(c.mean >= r1.min(r2) - 1e-12 && c.mean <= r1.max(r2) + 1e-12);
    }
    let geo = mixture_reward(&env, &theta, &prompts, &alphas, Mixing::Geometric).unwrap();
    assert!(geo.iter().all(|c| c.mean > 0.0 && c.mean < 1.0));
}

#[test]
fn rebel_loss_decreases_on_a_fixed_noiseless_batch() {
    let env = make_preference_env(2, 4, 4, 1.0).unwrap();
    let batch = sample_preferences(&env, 64, 0.1, Mixing::Convex, &mut RngStream::new(3)).unwrap();
    let anchor = vec![0.0; 4];
    let loss = PreferenceLoss::Rebel { eta: 1.0 };
    let mut theta = anchor.clone();
    let mut prev = f64::INFINITY;
    for _ in 0..30 {
        let obj = batch_objective(&batch.samples, &theta, &anchor, loss, None).unwrap();
        assert!(obj.value < prev);
        prev = obj.value;
        for (t, g) in theta.iter_mut().zip(&obj.gradient) {
            *t -= 0.1 * g;
        }
    }
}

#[test]
fn preference_training_properties() {
    let env = make_preference_env(4, 6, 6, 1.0).unwrap();
    let cfg = PreferenceConfig {
        lr: 0.5,
        bound: 0.4,
        ..PreferenceConfig::default()
    };
    for loss in [PreferenceLoss::Rebel { eta: 1.0 }, PreferenceLoss::Dpo { beta: 1.0 }] {
        let chi2 = train_preference(&env, loss, Some(AmbiguitySpec::Chi2 { rho: 0.5 }), &cfg).unwrap();
        assert_eq!(chi2.log.len(), 40);
        assert!(chi2.log.iter().all(|l| l.robust_value >= l.mean_loss - 1e-12));
        assert!(chi2.trajectory.iter().all(|t| norm(t) <= 0.4 + 1e-12));

        let plain = train_preference(&env, loss, None, &cfg).unwrap();
        let tilted = train_preference(&env, loss, Some(AmbiguitySpec::Kl { tau: f64::INFINITY }), &cfg).unwrap();
        assert_eq!(plain.trajectory, tilted.trajectory);
        let again = train_preference(&env, loss, None, &cfg).unwrap();
        assert_eq!(plain, again);
    }
}

#[test]
fn rebel_anchor_makes_first_loss_the_reward_gap() {
    let env = make_preference_env(9, 3, 4, 1.0).unwrap();
    let batch = sample_preferences(&env, 16, 0.1, Mixing::Convex, &mut RngStream::new(0)).unwrap();
    let theta = [0.3, -0.2, 0.9];
    for s in &batch.samples {
        let l = rebel_loss(s, &theta, &theta, 2.0).unwrap();
        assert_abs_diff_eq!(l, s.delta_r * s.delta_r, epsilon = 1e-15);
    }
}

#[test]
fn datasets_depend_only_on_the_stream() {
    let env = default_env(4);
    let a = sample_dataset_with(&env, 300, &mut RngStream::with_stream(10, 1)).unwrap();
    let b = sample_dataset_with(&env, 300, &mut RngStream::with_stream(10, 1)).unwrap();
    let c = sample_dataset_with(&env, 300, &mut RngStream::with_stream(10, 2)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
