//! Training loop: episode collection with the planner, sampled-trajectory
//! updates of the world model, curiosity and contrastive objectives, target
//! EMA and periodic evaluation.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::curiosity::IntrinsicConfig;
use crate::envs::{augment, Env, EnvSpec};
use crate::error::{Error, Result};
use crate::model::AgentModel;
use crate::nn::{checkpoint, ema_group, AdamConfig, AdamState, Matrix, ParamVector};
use crate::planner::{plan, CemConfig, ToldSnapshot};
use crate::replay::{Episode, ReplayBuffer, TrajectoryBatch};
use crate::told::{LossComponents, LossWeights};

/// Reset seeds of evaluation episodes are `EVAL_SEED_BASE + i`.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub total_env_steps: u64,
    /// Env steps of uniform random actions before planning starts.
    pub seed_steps: u64,
    /// Gradient updates after each episode; 0 means one per agent decision.
    pub updates_per_episode: usize,
    pub batch_size: usize,
    /// Length `k` of sampled trajectories.
    pub horizon: usize,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub lr_model: f64,
    pub lr_inverse: f64,
    pub lr_contrastive: f64,
    /// EMA coefficient ζ.
    pub tau: f64,
    pub target_q_every: u64,
    pub target_encoder_every: u64,
    pub lambda: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub contrastive_coef: f64,
    /// Discount in the TD target.
    pub gamma: f64,
    /// Capacity in transitions.
    pub buffer_capacity: usize,
    /// Gaussian observation noise applied to sampled batches.
    pub augment_std: f64,
    pub explore_std_start: f64,
    pub explore_std_end: f64,
    /// Env steps over which exploration noise decays linearly.
    pub explore_decay_steps: u64,
    pub non_contrastive: bool,
    pub non_ccem: bool,
    /// Fill `wall_clock_s`; off by default so reruns give identical CSVs.
    pub record_wall_clock: bool,
    pub checkpoint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 100_000,
            seed_steps: 1000,
            updates_per_episode: 0,
            batch_size: 256,
            horizon: 5,
            eval_every: 10_000,
            eval_episodes: 10,
            lr_model: 3e-4,
            lr_inverse: 3e-4,
            lr_contrastive: 1e-5,
            tau: 0.01,
            target_q_every: 2,
            target_encoder_every: 1,
            lambda: 0.5,
            c1: 0.1,
            c2: 0.5,
            c3: 2.0,
            contrastive_coef: 2.0,
            gamma: 0.99,
            buffer_capacity: 1_000_000,
            augment_std: 0.01,
            explore_std_start: 0.5,
            explore_std_end: 0.05,
            explore_decay_steps: 25_000,
            non_contrastive: false,
            non_ccem: false,
            record_wall_clock: false,
            checkpoint: true,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_owned()));
        if self.total_env_steps == 0 || self.batch_size == 0 || self.horizon == 0 {
            return bad("total_env_steps, batch_size and horizon must be >= 1");
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be >= 1");
        }
        if self.target_q_every == 0 || self.target_encoder_every == 0 {
            return bad("target update periods must be >= 1");
        }
        for (name, lr) in [
            ("lr_model", self.lr_model),
            ("lr_inverse", self.lr_inverse),
            ("lr_contrastive", self.lr_contrastive),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {lr}")));
            }
        }
        if !self.non_contrastive && self.batch_size < 2 {
            return bad("the contrastive loss needs batch_size >= 2");
        }
        if self.contrastive_coef < 0.0 || self.augment_std < 0.0 {
            return bad("contrastive_coef and augment_std must be >= 0");
        }
        if self.explore_std_start < 0.0 || self.explore_std_end < 0.0 {
            return bad("exploration noise must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        self.loss_weights().validate()
    }

    /// Linearly decayed exploration noise at `env_step`.
    pub fn explore_std(&self, env_step: u64) -> f64 {
        if self.explore_decay_steps == 0 {
            return self.explore_std_end;
        }
        let frac = (env_step as f64 / self.explore_decay_steps as f64).min(1.0);
        self.explore_std_start + frac * (self.explore_std_end - self.explore_std_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Event {
    Train,
    Eval,
}

/// One line of the metrics CSV. Empty cells mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_step: u64,
    pub event: Event,
    pub episode_return: f64,
    pub loss_q: Option<f64>,
    pub loss_reward: Option<f64>,
    pub loss_consistency: Option<f64>,
    pub loss_policy: Option<f64>,
    pub loss_inverse: Option<f64>,
    pub loss_contrastive: Option<f64>,
    pub intrinsic_mean: Option<f64>,
    pub elite_score_mean: Option<f64>,
    pub wall_clock_s: Option<f64>,
}

impl MetricsRow {
    fn new(env_step: u64, event: Event, episode_return: f64) -> Self {
        Self {
            env_step,
            event,
            episode_return,
            loss_q: None,
            loss_reward: None,
            loss_consistency: None,
            loss_policy: None,
            loss_inverse: None,
            loss_contrastive: None,
            intrinsic_mean: None,
            elite_score_mean: None,
            wall_clock_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    /// Global env step counter after the episode.
    pub env_step: u64,
    pub episode_return: f64,
    pub decisions: usize,
    /// Whether actions were uniform random warmup actions.
    pub random: bool,
    /// Mean over decisions of the final-iteration elite score.
    pub elite_score_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub told: LossComponents,
    pub told_total: f64,
    pub inverse: f64,
    pub contrastive: Option<f64>,
    pub intrinsic_mean: f64,
    pub grad_norm_model: f64,
    pub grad_norm_inverse: f64,
    pub grad_norm_contrastive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub env_step: u64,
    pub returns: Vec<f64>,
    pub mean_return: f64,
}

#[derive(Debug, Clone, Default)]
struct UpdateTotals {
    n: usize,
    q: f64,
    reward: f64,
    consistency: f64,
    policy: f64,
    inverse: f64,
    contrastive: f64,
    intrinsic: f64,
}

impl UpdateTotals {
    fn add(&mut self, r: &UpdateRecord) {
        self.n += 1;
        self.q += r.told.q;
        self.reward += r.told.reward;
        self.consistency += r.told.consistency;
        self.policy += r.told.policy;
        self.inverse += r.inverse;
        self.contrastive += r.contrastive.unwrap_or(0.0);
        self.intrinsic += r.intrinsic_mean;
    }

    fn fill(&self, row: &mut MetricsRow, contrastive: bool) {
        if self.n == 0 {
            return;
        }
        let n = self.n as f64;
        row.loss_q = Some(self.q / n);
        row.loss_reward = Some(self.reward / n);
        row.loss_consistency = Some(self.consistency / n);
        row.loss_policy = Some(self.policy / n);
        row.loss_inverse = Some(self.inverse / n);
        row.loss_contrastive = contrastive.then(|| self.contrastive / n);
        row.intrinsic_mean = Some(self.intrinsic / n);
    }
}

/// State of one training run for a single seed.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub cem: CemConfig,
    pub model: AgentModel,
    pub params: ParamVector,
    pub buffer: ReplayBuffer,
    pub intrinsic: IntrinsicConfig,
    env: Env,
    adam_model: AdamState,
    adam_inverse: AdamState,
    adam_contrastive: AdamState,
    rng: ChaCha8Rng,
    seed: u64,
    env_steps: u64,
    updates: u64,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = config.env_spec()?;
        let model = AgentModel::new(config.model_dims(&spec))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init_params(&mut rng)?;
        let n = params.len();
        let cfg = config.train.clone();
        Ok(Self {
            adam_model: AdamState::new(n, AdamConfig::with_lr(cfg.lr_model)),
            adam_inverse: AdamState::new(n, AdamConfig::with_lr(cfg.lr_inverse)),
            adam_contrastive: AdamState::new(n, AdamConfig::with_lr(cfg.lr_contrastive)),
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            intrinsic: IntrinsicConfig::new(config.intrinsic.weight, config.intrinsic.decay)
                .with_tracking(config.intrinsic.max_tracking),
            cem: config.cem.clone(),
            env: Env::new(spec)?,
            cfg,
            model,
            params,
            rng,
            seed,
            env_steps: 0,
            updates: 0,
            checkpoint_dir: None,
        })
    }

    /// Directory for evaluation checkpoints and non-finite diagnostics.
    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoint_dir = Some(dir.into());
        self
    }

    pub fn env_spec(&self) -> &EnvSpec {
        self.env.spec()
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn clamp_count(&self) -> u64 {
        self.env.clamp_count()
    }

    fn snapshot(&self) -> ToldSnapshot<'_> {
        ToldSnapshot {
            told: &self.model.told,
            params: &self.params,
        }
    }

    /// Runs one episode and stores it in the replay buffer. Episodes that
    /// start before `seed_steps` use uniform random actions.
    pub fn collect_episode(&mut self) -> Result<EpisodeStats> {
        let random = self.env_steps < self.cfg.seed_steps;
        let reset_seed: u64 = self.rng.random();
        let mut obs = self.env.reset(reset_seed);
        let mut episode = Episode::new(obs.clone());
        let noise = self.cfg.explore_std(self.env_steps);
        let d_a = self.env.spec().action_dim;
        let mut prev_mean: Option<Matrix> = None;
        let mut elite_sum = 0.0;
        let mut decisions = 0;
        let mut ret = 0.0;

        loop {
            let action: Vec<f64> = if random {
                (0..d_a).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
            } else {
                let snap = ToldSnapshot {
                    told: &self.model.told,
                    params: &self.params,
                };
                let out = plan(&snap, &self.cem, &obs, prev_mean.as_ref(), noise, &mut self.rng)?;
                elite_sum += out.final_elite_mean();
                prev_mean = Some(out.dist.mean);
                out.action
                    .iter()
                    .map(|&a| {
                        let eps: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut self.rng);
                        (a + noise * eps).clamp(-1.0, 1.0)
                    })
                    .collect()
            };
            let t = self.env.step(&action)?;
            self.intrinsic.observe_extrinsic(&[t.reward]);
            ret += t.reward;
            decisions += 1;
            obs = t.next_obs.clone();
            episode.push(t.action, t.reward, t.next_obs);
            if t.done {
                break;
            }
        }
        self.env_steps += self.env.elapsed() as u64;
        self.buffer.push_episode(episode);
        Ok(EpisodeStats {
            env_step: self.env_steps,
            episode_return: ret,
            decisions,
            random,
            elite_score_mean: (!random).then(|| elite_sum / decisions as f64),
        })
    }

    /// Transitions needed before [`Trainer::update`] may run.
    pub fn min_buffer(&self) -> usize {
        self.cfg.batch_size * (self.cfg.horizon + 1)
    }

    /// One training step: TOLD, inverse model, contrastive loss, then target EMA.
    pub fn update(&mut self) -> Result<UpdateRecord> {
        if self.buffer.len() < self.min_buffer() {
            return Err(Error::InsufficientData {
                have: self.buffer.len(),
                need: self.min_buffer(),
            });
        }
        match self.update_inner() {
            Err(e @ Error::NonFinite(_)) => {
                self.dump_diagnostics(&e);
                Err(e)
            }
            other => other,
        }
    }

    fn update_inner(&mut self) -> Result<UpdateRecord> {
        let batch = self.buffer.sample(self.cfg.batch_size, self.cfg.horizon, &mut self.rng)?;
        self.update_batch(batch)
    }

    /// The body of [`Trainer::update`] on a given batch instead of a sampled one.
    pub fn update_batch(&mut self, batch: TrajectoryBatch) -> Result<UpdateRecord> {
        let (b, k) = (batch.batch_size(), batch.horizon());
        let told = &self.model.told;
        let icm = &self.model.icm;

        // Intrinsic rewards from the current model on clean observations.
        let intrinsic: Vec<Vec<f64>> = if self.cfg.non_ccem {
            vec![vec![0.0; b]; k]
        } else {
            let mut raw = Vec::with_capacity(b * k);
            for j in 0..k {
                raw.extend(icm.forward_errors(told, &self.params, &batch.obs[j], &batch.actions[j], &batch.obs[j + 1])?);
            }
            let scaled = self.intrinsic.rewards(&raw, self.env_steps);
            scaled.chunks(b).map(<[f64]>::to_vec).collect()
        };
        let intrinsic_mean = intrinsic.iter().flatten().sum::<f64>() / (b * k) as f64;
        let batch = augment_batch(batch, self.cfg.augment_std, &mut self.rng)?;

        let obj = told.told_objective(&self.params, &batch, &intrinsic, &self.cfg.loss_weights())?;
        self.adam_model.step(&mut self.params, &obj.grad)?;

        let inv = icm.inverse_objective(told, &self.params, &batch)?;
        if !inv.loss.is_finite() {
            return Err(Error::NonFinite("inverse objective".into()));
        }
        self.adam_inverse.step(&mut self.params, &inv.grad)?;

        let mut contrastive = None;
        let mut grad_norm_contrastive = None;
        if !self.cfg.non_contrastive {
            let mut grad = self.params.zeros_like();
            let mut loss = 0.0;
            for j in 0..k {
                let l = icm.temporal_contrastive_loss(told, &self.params, &batch.obs[j], &batch.actions[j], &batch.obs[j + 1])?;
                loss += l.loss / k as f64;
                grad.add_scaled(&l.grad, self.cfg.contrastive_coef / k as f64)?;
            }
            self.adam_contrastive.step(&mut self.params, &grad)?;
            contrastive = Some(loss);
            grad_norm_contrastive = Some(grad.norm());
        }

        self.updates += 1;
        if self.updates.is_multiple_of(self.cfg.target_encoder_every) {
            ema_group(&mut self.params, &told.target_encoder.group(), &told.encoder.group(), self.cfg.tau)?;
        }
        if self.updates.is_multiple_of(self.cfg.target_q_every) {
            for (t, q) in told.target_q.iter().zip(&told.q) {
                ema_group(&mut self.params, &t.group(), &q.group(), self.cfg.tau)?;
            }
        }

        Ok(UpdateRecord {
            told: obj.components,
            told_total: obj.total,
            inverse: inv.loss,
            contrastive,
            intrinsic_mean,
            grad_norm_model: obj.grad.norm(),
            grad_norm_inverse: inv.grad.norm(),
            grad_norm_contrastive,
        })
    }

    fn dump_diagnostics(&self, err: &Error) {
        let Some(dir) = &self.checkpoint_dir else { return };
        let info = serde_json::json!({
            "error": err.to_string(),
            "seed": self.seed,
            "env_step": self.env_steps,
            "updates": self.updates,
            "first_non_finite_segment": self.params.first_non_finite(),
            "intrinsic": self.intrinsic,
        });
        // Best effort: the original error is what the caller reports.
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join("nonfinite.json"), info.to_string());
        let _ = checkpoint::save(&self.params, &dir.join("nonfinite"));
    }

    /// Mean return over `eval_episodes` noise-free episodes with fixed reset
    /// seeds. Leaves parameters, buffer and the training RNG untouched.
    pub fn evaluate(&self) -> Result<EvalResult> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ self.env_steps.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut env = Env::new(self.env.spec().clone())?;
        let snap = self.snapshot();
        let mut returns = Vec::with_capacity(self.cfg.eval_episodes);
        for i in 0..self.cfg.eval_episodes {
            let mut obs = env.reset(EVAL_SEED_BASE + i as u64);
            let mut prev_mean: Option<Matrix> = None;
            let mut ret = 0.0;
            loop {
                let out = plan(&snap, &self.cem, &obs, prev_mean.as_ref(), 0.0, &mut rng)?;
                let t = env.step(&out.action)?;
                prev_mean = Some(out.dist.mean);
                ret += t.reward;
                obs = t.next_obs;
                if t.done {
                    break;
                }
            }
            returns.push(ret);
        }
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok(EvalResult {
            env_step: self.env_steps,
            returns,
            mean_return,
        })
    }

    fn updates_for(&self, stats: &EpisodeStats) -> usize {
        match self.cfg.updates_per_episode {
            0 => stats.decisions,
            n => n,
        }
    }

    /// Runs to `total_env_steps`, passing each metrics row to `sink`.
    pub fn run(&mut self, mut sink: impl FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        let start = Instant::now();
        let record = self.cfg.record_wall_clock;
        let clock = |row: &mut MetricsRow| {
            if record {
                row.wall_clock_s = Some(start.elapsed().as_secs_f64());
            }
        };
        let mut next_eval = self.cfg.eval_every;
        while self.env_steps < self.cfg.total_env_steps {
            let stats = self.collect_episode()?;
            let mut totals = UpdateTotals::default();
            if self.env_steps >= self.cfg.seed_steps && self.buffer.len() >= self.min_buffer() {
                for _ in 0..self.updates_for(&stats) {
                    totals.add(&self.update()?);
                }
            }
            let mut row = MetricsRow::new(stats.env_step, Event::Train, stats.episode_return);
            totals.fill(&mut row, !self.cfg.non_contrastive);
            row.elite_score_mean = stats.elite_score_mean;
            clock(&mut row);
            sink(&row)?;

            if self.env_steps >= next_eval {
                let ev = self.evaluate()?;
                let mut row = MetricsRow::new(ev.env_step, Event::Eval, ev.mean_return);
                clock(&mut row);
                sink(&row)?;
                if self.cfg.checkpoint {
                    if let Some(dir) = &self.checkpoint_dir {
                        std::fs::create_dir_all(dir)?;
                        checkpoint::save(&self.params, &dir.join(format!("step_{}", self.env_steps)))?;
                    }
                }
                while next_eval <= self.env_steps {
                    next_eval += self.cfg.eval_every;
                }
            }
        }
        Ok(())
    }
}

fn augment_batch(mut batch: TrajectoryBatch, std: f64, rng: &mut ChaCha8Rng) -> Result<TrajectoryBatch> {
    if std == 0.0 {
        return Ok(batch);
    }
    for m in &mut batch.obs {
        let noisy = augment(m.as_slice(), std, rng)?;
        m.as_mut_slice().copy_from_slice(&noisy);
    }
    Ok(batch)
}

/// Env step of the first training episode with positive return.
pub fn first_success(rows: &[MetricsRow]) -> Option<u64> {
    rows.iter()
        .find(|r| r.event == Event::Train && r.episode_return > 0.0)
        .map(|r| r.env_step)
}

/// Return of the last evaluation row.
pub fn final_eval_return(rows: &[MetricsRow]) -> Option<f64> {
    rows.iter().rev().find(|r| r.event == Event::Eval).map(|r| r.episode_return)
}
