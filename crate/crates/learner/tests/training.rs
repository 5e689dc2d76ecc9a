use entsim_core::baselines::BaselineKind;
use entsim_core::environment::Role;
use entsim_core::scenario::ScenarioConfig;
use entsim_learner::checkpoint;
use entsim_learner::gae::{compute_gae, standardize};
use entsim_learner::ppo::Adam;
use entsim_learner::trainer::{critic_input_len, role_head};
use entsim_learner::{LearnerConfig, LearnerError, PolicySet, Scheme, Trainer};

fn tiny() -> LearnerConfig {
    LearnerConfig { actor_hidden: vec![16], critic_hidden: vec![16], ..LearnerConfig::desk() }
}

#[test]
fn gae_matches_hand_recursion() {
    let (gamma, lambda) = (0.9, 0.96);
    let g = compute_gae(&[1.0, 0.0, 1.0], &[0.5, 0.5, 0.5], gamma, lambda);
    // Worked by hand, last frame first.
    let d3 = 1.0 + 0.0 - 0.5;
    let d2 = 0.0 + 0.9 * 0.5 - 0.5;
    let d1 = 1.0 + 0.9 * 0.5 - 0.5;
    let a3 = d3;
    let a2 = d2 + 0.864 * a3;
    let a1 = d1 + 0.864 * a2;
    let expect = [a1, a2, a3];
    for i in 0..3 {
        assert!((g.advantages[i] - expect[i]).abs() < 1e-12);
        assert!((g.returns[i] - expect[i] - 0.5).abs() < 1e-12);
    }
    assert!((g.deltas[0] - 0.95).abs() < 1e-12);
    assert!((g.advantages[0] - 1.280048).abs() < 1e-12);
}

#[test]
fn role_standardisation_moments() {
    let groups = vec![
        compute_gae(&[1.0, -0.5, 2.0, 0.1], &[0.2, 0.4, -0.1, 0.0], 0.9, 0.96).advantages,
        compute_gae(&[1.0, -0.5, 2.0, 0.1], &[-1.0, 0.3, 0.7, 0.2], 0.9, 0.96).advantages,
    ];
    let all = standardize(&groups).concat();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let std = (all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
}

#[test]
fn adam_matches_hand_steps() {
    let mut p = vec![1.0, -2.0];
    let mut opt = Adam::new(2, 0.1);
    opt.step(&mut p, &[0.5, -0.1]);
    opt.step(&mut p, &[0.2, 0.3]);
    // Second step by hand for both coordinates.
    let hand = |p0: f64, g1: f64, g2: f64| {
        let x1 = p0 - 0.1 * g1 / (g1.abs() + 1e-8);
        let m = 0.9 * (0.1 * g1) + 0.1 * g2;
        let v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
        let mh = m / (1.0 - 0.81);
        let vh = v / (1.0 - 0.999 * 0.999);
        x1 - 0.1 * mh / (vh.sqrt() + 1e-8)
    };
    assert!((p[0] - hand(1.0, 0.5, 0.2)).abs() < 1e-10);
    assert!((p[1] - hand(-2.0, -0.1, 0.3)).abs() < 1e-10);
}

#[test]
fn heads_cover_every_action_component() {
    for cfg in [ScenarioConfig::desk(), ScenarioConfig::reference()] {
        for role in Role::ALL {
            assert_eq!(role_head(role, &cfg).action_len(), role.action_len(&cfg), "{}", role.name());
        }
        assert_eq!(critic_input_len(Role::Fg, &cfg), cfg.cells * Role::Lcp.observation_len(&cfg) + Role::Fg.observation_len(&cfg) + 1);
    }
}

#[test]
fn anneal_runs_from_start_to_end() {
    let mut t = Trainer::new(ScenarioConfig::desk(), tiny(), Scheme::Proposed, 1, 3).unwrap();
    assert_eq!(t.coefficients(), (0.3, 1e-3));
    t.train_episode().unwrap();
    t.train_episode().unwrap();
    let (clip, ent) = t.coefficients();
    assert!((clip - 0.15).abs() < 1e-15 && (ent - 1e-4).abs() < 1e-18);
}

#[test]
fn equal_seeds_give_bitwise_equal_updates() {
    let run = || {
        let mut t = Trainer::new(ScenarioConfig::desk(), tiny(), Scheme::Proposed, 5, 10).unwrap();
        let s = t.train_episode().unwrap();
        (t.policies.clone(), s.usr, s.update)
    };
    let (a, ua, sa) = run();
    let (b, ub, sb) = run();
    assert_eq!(a, b);
    assert_eq!(ua.to_bits(), ub.to_bits());
    assert_eq!(sa, sb);
    let fresh = PolicySet::new(&ScenarioConfig::desk(), &tiny(), 5).unwrap();
    assert_ne!(a, fresh, "an update must move some parameters");
}

#[test]
fn first_update_starts_on_policy() {
    let mut t = Trainer::new(ScenarioConfig::desk(), LearnerConfig { epochs: 1, ..tiny() }, Scheme::Proposed, 2, 10).unwrap();
    let s = t.train_episode().unwrap().update;
    assert!((s.mean_ratio - 1.0).abs() < 1e-12);
    assert!(s.actor_loss.is_finite() && s.critic_loss.is_finite());
}

#[test]
fn baselines_only_move_their_live_roles() {
    let cfg = ScenarioConfig::desk();
    for (kind, live) in [(BaselineKind::CcnOnly, vec![Role::Lpb]), (BaselineKind::CfnOnly, vec![Role::Fg, Role::Fpb])] {
        let mut t = Trainer::new(cfg.clone(), tiny(), Scheme::Baseline(kind), 3, 5).unwrap();
        let before = t.policies.clone();
        let s = t.train_episode().unwrap();
        for role in Role::ALL {
            let moved = before.actor(role, 0) != t.policies.actor(role, 0);
            assert_eq!(moved, live.contains(&role), "{:?} {}", kind, role.name());
        }
        for d in &s.frames {
            match kind {
                BaselineKind::CcnOnly => assert!(d.ledger.o_fed.iter().chain(&d.ledger.o2).all(|&o| o == 0)),
                _ => assert!(d.user_federated.iter().chain(&d.target_federated).all(|&f| f)),
            }
        }
    }
}

#[test]
fn random_mrt_needs_no_training() {
    let mut t = Trainer::new(ScenarioConfig::desk(), tiny(), Scheme::Baseline(BaselineKind::RandomMrt), 4, 5).unwrap();
    assert!(!t.is_learning());
    let before = t.policies.clone();
    let s = t.train_episode().unwrap();
    assert_eq!(before, t.policies);
    assert_eq!(s.frames.len(), 20);
    assert!(s.usr.is_finite() && s.usr > 0.0);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let cfg = ScenarioConfig::desk();
    let mut t = Trainer::new(cfg.clone(), tiny(), Scheme::Proposed, 6, 4).unwrap();
    t.train_episode().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ck");
    checkpoint::save(&t.policies, &path).unwrap();
    let mut loaded = PolicySet::new(&cfg, &tiny(), 99).unwrap();
    checkpoint::load(&mut loaded, &path).unwrap();
    assert_eq!(loaded, t.policies);
    let x = vec![0.25; Role::Fpb.observation_len(&cfg)];
    let a = t.policies.actor(Role::Fpb, 1).net.forward(&x).unwrap();
    let b = loaded.actor(Role::Fpb, 1).net.forward(&x).unwrap();
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
}

#[test]
fn incompatible_checkpoints_name_the_layer() {
    let cfg = ScenarioConfig::desk();
    let bytes = checkpoint::to_bytes(&PolicySet::new(&cfg, &tiny(), 1).unwrap());
    let wider = LearnerConfig { actor_hidden: vec![17], ..tiny() };
    let mut other = PolicySet::new(&cfg, &wider, 1).unwrap();
    let before = other.clone();
    match checkpoint::load_bytes(&mut other, &bytes) {
        Err(LearnerError::Checkpoint(msg)) => assert!(msg.contains("lcp actor 0"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(other, before);
    let mut same = PolicySet::new(&cfg, &tiny(), 2).unwrap();
    assert!(checkpoint::load_bytes(&mut same, &bytes[..bytes.len() - 3]).is_err());
    assert!(checkpoint::load_bytes(&mut same, b"not a checkpoint").is_err());
}
