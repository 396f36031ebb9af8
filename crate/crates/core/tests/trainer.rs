use ccem::config::ExperimentConfig;
use ccem::experiment;
use ccem::nn::{ema_group, AdamConfig, AdamState};
use ccem::trainer::{Event, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(extra: &[&str]) -> ExperimentConfig {
    let mut ov: Vec<String> = [
        "env.episode_length=40",
        "env.action_repeat=4",
        "model.latent_dim=4",
        "model.encoder_hidden=[8]",
        "model.head_hidden=[8]",
        "model.inverse_hidden=[8]",
        "model.action_encoder_hidden=[8]",
        "model.action_latent_dim=3",
        "cem.horizon=2",
        "cem.population=16",
        "cem.elites=4",
        "cem.iterations=2",
        "train.total_env_steps=400",
        "train.seed_steps=80",
        "train.eval_every=200",
        "train.eval_episodes=3",
        "train.batch_size=4",
        "train.horizon=2",
        "train.checkpoint=false",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ov.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::resolve(None, &ov).unwrap()
}

fn warm(cfg: &ExperimentConfig) -> Trainer {
    let mut t = Trainer::new(cfg, 5).unwrap();
    while t.buffer.len() < 4 * t.min_buffer() {
        t.collect_episode().unwrap();
    }
    t
}

#[test]
fn update_runs_told_then_inverse_then_contrastive_then_ema() {
    let cfg = config(&["train.augment_std=0", "train.target_q_every=1", "train.target_encoder_every=1"]);
    let mut t = warm(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let batch = t.buffer.sample(4, 2, &mut rng).unwrap();

    // Replay the update by hand with fresh optimiser states.
    let (told, icm) = (&t.model.told, &t.model.icm);
    let mut p = t.params.clone();
    let mut maxima = t.intrinsic;
    let mut raw = Vec::new();
    for j in 0..2 {
        raw.extend(icm.forward_errors(told, &p, &batch.obs[j], &batch.actions[j], &batch.obs[j + 1]).unwrap());
    }
    let intrinsic: Vec<Vec<f64>> = maxima.rewards(&raw, t.env_steps()).chunks(4).map(<[f64]>::to_vec).collect();
    let n = p.len();
    let obj = told.told_objective(&p, &batch, &intrinsic, &t.cfg.loss_weights()).unwrap();
    AdamState::new(n, AdamConfig::with_lr(t.cfg.lr_model)).step(&mut p, &obj.grad).unwrap();
    let inv = icm.inverse_objective(told, &p, &batch).unwrap();
    AdamState::new(n, AdamConfig::with_lr(t.cfg.lr_inverse)).step(&mut p, &inv.grad).unwrap();
    let mut g = p.zeros_like();
    for j in 0..2 {
        let l = icm.temporal_contrastive_loss(told, &p, &batch.obs[j], &batch.actions[j], &batch.obs[j + 1]).unwrap();
        g.add_scaled(&l.grad, t.cfg.contrastive_coef / 2.0).unwrap();
    }
    AdamState::new(n, AdamConfig::with_lr(t.cfg.lr_contrastive)).step(&mut p, &g).unwrap();
    ema_group(&mut p, &told.target_encoder.group(), &told.encoder.group(), t.cfg.tau).unwrap();
    for (tq, q) in told.target_q.iter().zip(&told.q) {
        ema_group(&mut p, &tq.group(), &q.group(), t.cfg.tau).unwrap();
    }

    t.update_batch(batch).unwrap();
    assert_eq!(t.params.values(), p.values());
}

#[test]
fn evaluation_leaves_state_alone_and_averages_episodes() {
    let cfg = config(&[]);
    let mut t = warm(&cfg);
    t.update().unwrap();
    let params = t.params.clone();
    let (len, episodes) = (t.buffer.len(), t.buffer.num_episodes());
    let steps = t.env_steps();
    let a = t.evaluate().unwrap();
    assert_eq!(t.params.values(), params.values());
    assert_eq!((t.buffer.len(), t.buffer.num_episodes(), t.env_steps()), (len, episodes, steps));
    assert_eq!(a.returns.len(), 3);
    assert_eq!(a.mean_return, a.returns.iter().sum::<f64>() / 3.0);
    // Training continues identically whether or not evaluation ran.
    let mut u = warm(&cfg);
    u.update().unwrap();
    t.update().unwrap();
    u.update().unwrap();
    assert_eq!(t.params.values(), u.params.values());
    assert_eq!(t.evaluate().unwrap(), u.evaluate().unwrap());
}

#[test]
fn non_ccem_zeroes_intrinsic_rewards() {
    let mut t = warm(&config(&["train.non_ccem=true"]));
    for _ in 0..3 {
        assert_eq!(t.update().unwrap().intrinsic_mean.to_bits(), 0.0f64.to_bits());
    }
    let mut t = warm(&config(&[]));
    assert!(t.update().unwrap().intrinsic_mean > 0.0);
}

#[test]
fn non_contrastive_leaves_action_encoder_and_bilinear_map_unchanged() {
    let mut t = warm(&config(&["train.non_contrastive=true"]));
    let before = t.params.clone();
    for _ in 0..3 {
        assert!(t.update().unwrap().contrastive.is_none());
    }
    for seg in t.params.layout().segments() {
        let untouched = seg.name.starts_with("action_encoder.") || seg.name.starts_with("contrastive.");
        if untouched {
            assert_eq!(t.params.segment(&seg.name).unwrap(), before.segment(&seg.name).unwrap(), "{}", seg.name);
        }
    }
    // With the flag off the same segments do move.
    let mut t = warm(&config(&[]));
    let before = t.params.clone();
    t.update().unwrap();
    assert_ne!(t.params.segment("contrastive.w").unwrap(), before.segment("contrastive.w").unwrap());
}

#[test]
fn warm_update_is_finite_with_nonzero_gradients() {
    let mut t = warm(&config(&[]));
    let r = t.update().unwrap();
    let c = &r.told;
    for v in [c.q, c.reward, c.consistency, c.policy, r.told_total, r.inverse, r.contrastive.unwrap()] {
        assert!(v.is_finite());
    }
    for g in [r.grad_norm_model, r.grad_norm_inverse, r.grad_norm_contrastive.unwrap()] {
        assert!(g.is_finite() && g > 0.0);
    }
}

#[test]
fn env_steps_are_decisions_times_action_repeat() {
    let cfg = config(&["env.action_repeat=4"]);
    let mut t = Trainer::new(&cfg, 1).unwrap();
    let ep = t.collect_episode().unwrap();
    assert_eq!(ep.decisions * 4, 40);
    assert_eq!(t.env_steps(), 40);
    assert_eq!(t.buffer.len(), ep.decisions);
}

#[test]
fn metrics_stream_is_bitwise_reproducible() {
    let cfg = config(&[]);
    let bytes = |seed| {
        let run = experiment::run_seed(&cfg, seed, "x", None).unwrap();
        let mut out = Vec::new();
        experiment::write_metrics(&mut out, &run.rows).unwrap();
        (out, run.rows)
    };
    let (a, rows) = bytes(2);
    assert_eq!(a, bytes(2).0);
    assert_ne!(a, bytes(3).0);
    assert!(rows.iter().any(|r| r.event == Event::Eval));
    assert!(rows.iter().all(|r| r.wall_clock_s.is_none()));
}

#[test]
fn replay_eviction_keeps_whole_episodes() {
    let mut t = Trainer::new(&config(&["train.buffer_capacity=25"]), 4).unwrap();
    for _ in 0..6 {
        t.collect_episode().unwrap();
        assert!(t.buffer.len() <= 25);
        assert!(t.buffer.episodes().all(|e| e.len() == 10));
        assert_eq!(t.buffer.len(), 10 * t.buffer.num_episodes());
    }
}
