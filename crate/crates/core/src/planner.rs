//! Cross-entropy method planning over latent rollouts.
//!
//! Candidates are `(H+1) × d_a` action sequences. Each CEM iteration samples
//! from a per-timestep diagonal Gaussian, mixes in sequences produced by
//! rolling the policy through the latent dynamics, keeps the top-k by score
//! and refits the Gaussian to them. The first mean action is executed.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{Matrix, ParamVector};
use crate::told::Told;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// `Σ_{t=0}^{H} γ^t R(z_t, a_t)`
    SumRewards,
    /// `Σ_{t<H} γ^t R(z_t, a_t) + γ^H Q(z_H, a_H)`
    RewardsPlusTerminal,
    /// `Σ_{t=0}^{H} γ^t Q(z_t, a_t)`
    ValueSum,
    /// Same formula as [`Scoring::ValueSum`]; the Q network is trained on
    /// extrinsic plus intrinsic reward.
    CuriosityValueSum,
}

impl Scoring {
    pub const ALL: [Scoring; 4] = [
        Scoring::SumRewards,
        Scoring::RewardsPlusTerminal,
        Scoring::ValueSum,
        Scoring::CuriosityValueSum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scoring::SumRewards => "sum-rewards",
            Scoring::RewardsPlusTerminal => "rewards-plus-terminal",
            Scoring::ValueSum => "value-sum",
            Scoring::CuriosityValueSum => "curiosity-value-sum",
        }
    }

    /// Which per-step term a variant accumulates at step `t` of horizon `h`.
    fn term(self, t: usize, h: usize) -> Term {
        match self {
            Scoring::SumRewards => Term::Reward,
            Scoring::RewardsPlusTerminal if t < h => Term::Reward,
            Scoring::RewardsPlusTerminal => Term::Value,
            Scoring::ValueSum | Scoring::CuriosityValueSum => Term::Value,
        }
    }
}

impl fmt::Display for Scoring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scoring::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scoring `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Reward,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub policy_fraction: f64,
    pub min_std: f64,
    pub scoring: Scoring,
    /// Score-weighted refit over the elites instead of their plain mean.
    pub soft_refit: bool,
    pub temperature: f64,
    /// Start from the previous plan shifted by one step.
    pub warm_start: bool,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            population: 512,
            elites: 64,
            iterations: 6,
            gamma: 0.99,
            policy_fraction: 0.05,
            min_std: 0.05,
            scoring: Scoring::CuriosityValueSum,
            soft_refit: false,
            temperature: 0.5,
            warm_start: false,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.population == 0 || self.elites == 0 || self.elites > self.population {
            return bad(format!(
                "need 1 <= elites ({}) <= population ({})",
                self.elites, self.population
            ));
        }
        if self.iterations == 0 {
            return bad("CEM needs at least one iteration".into());
        }
        if !(0.0..=1.0).contains(&self.policy_fraction) {
            return bad(format!("policy fraction {} outside [0, 1]", self.policy_fraction));
        }
        if self.min_std <= 0.0 {
            return bad(format!("min std must be > 0, got {}", self.min_std));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("discount {} outside [0, 1]", self.gamma));
        }
        if self.soft_refit && self.temperature <= 0.0 {
            return bad("soft refit needs a positive temperature".into());
        }
        if self.sampled_candidates() < self.elites {
            return bad("fewer sampled candidates than elites".into());
        }
        Ok(())
    }

    pub fn policy_candidates(&self) -> usize {
        (self.population as f64 * self.policy_fraction).round() as usize
    }

    pub fn sampled_candidates(&self) -> usize {
        self.population - self.policy_candidates()
    }
}

/// Per-timestep diagonal Gaussian over action sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDistribution {
    /// `(H+1) × d_a`
    pub mean: Matrix,
    /// `(H+1) × d_a`
    pub std: Matrix,
}

impl PlanDistribution {
    /// Zero mean, unit standard deviation.
    pub fn standard(horizon: usize, action_dim: usize) -> Self {
        let mut std = Matrix::zeros(horizon + 1, action_dim);
        std.as_mut_slice().iter_mut().for_each(|v| *v = 1.0);
        Self {
            mean: Matrix::zeros(horizon + 1, action_dim),
            std,
        }
    }

    /// Previous mean shifted one step forward, last step reset to zero; unit std.
    pub fn shifted(prev_mean: &Matrix) -> Self {
        let mut d = Self::standard(prev_mean.rows() - 1, prev_mean.cols());
        for t in 0..prev_mean.rows() - 1 {
            d.mean.row_mut(t).copy_from_slice(prev_mean.row(t + 1));
        }
        d
    }
}

/// Scores for a population, time-major: `actions[t]` is `N × d_a`.
pub trait SequenceScorer {
    fn action_dim(&self) -> usize;

    fn score(&self, actions: &[Matrix]) -> Result<Vec<f64>>;

    /// Policy-generated candidates, time-major; none by default.
    fn policy_candidates(&self, _count: usize, _horizon: usize, _noise_std: f64, _rng: &mut dyn rand::RngCore) -> Result<Vec<Matrix>> {
        Ok(Vec::new())
    }
}

/// Learned latent model interface used for planning.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn encode(&self, observation: &[f64]) -> Result<Vec<f64>>;
    fn next_latent(&self, z: &Matrix, a: &Matrix) -> Result<Matrix>;
    fn reward(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>>;
    fn value(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>>;
    fn policy(&self, z: &Matrix) -> Result<Matrix>;
}

/// Read-only view of the TOLD networks at one parameter snapshot.
#[derive(Clone, Copy)]
pub struct ToldSnapshot<'a> {
    pub told: &'a Told,
    pub params: &'a ParamVector,
}

impl LatentModel for ToldSnapshot<'_> {
    fn latent_dim(&self) -> usize {
        self.told.latent_dim()
    }

    fn action_dim(&self) -> usize {
        self.told.action_dim()
    }

    fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.told.encode(self.params, observation)
    }

    fn next_latent(&self, z: &Matrix, a: &Matrix) -> Result<Matrix> {
        self.told.dynamics_batch(self.params, &z.hcat(a)?)
    }

    fn reward(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        self.told.reward_batch(self.params, &z.hcat(a)?)
    }

    fn value(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        self.told.q_batch(self.params, &z.hcat(a)?, false)
    }

    fn policy(&self, z: &Matrix) -> Result<Matrix> {
        self.told.policy_batch(self.params, z)
    }
}

/// Scores action sequences by rolling a latent model from `z0`.
pub struct ModelScorer<'a, M: LatentModel> {
    pub model: &'a M,
    pub z0: Vec<f64>,
    pub scoring: Scoring,
    pub gamma: f64,
}

impl<M: LatentModel> SequenceScorer for ModelScorer<'_, M> {
    fn action_dim(&self) -> usize {
        self.model.action_dim()
    }

    fn score(&self, actions: &[Matrix]) -> Result<Vec<f64>> {
        let h = actions.len() - 1;
        let n = actions[0].rows();
        let mut z = Matrix::broadcast(&self.z0, n);
        let mut score = vec![0.0; n];
        for (t, a) in actions.iter().enumerate() {
            let disc = self.gamma.powi(t as i32);
            let term = match self.scoring.term(t, h) {
                Term::Reward => self.model.reward(&z, a)?,
                Term::Value => self.model.value(&z, a)?,
            };
            for (s, v) in score.iter_mut().zip(term) {
                *s += disc * v;
            }
            if t < h {
                z = self.model.next_latent(&z, a)?;
            }
        }
        for s in &mut score {
            if !s.is_finite() {
                *s = f64::NEG_INFINITY;
            }
        }
        Ok(score)
    }

    fn policy_candidates(&self, count: usize, horizon: usize, noise_std: f64, rng: &mut dyn rand::RngCore) -> Result<Vec<Matrix>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let mut z = Matrix::broadcast(&self.z0, count);
        let mut out = Vec::with_capacity(horizon + 1);
        for t in 0..=horizon {
            let mut a = self.model.policy(&z)?;
            if noise_std > 0.0 {
                for v in a.as_mut_slice() {
                    let eps: f64 = StandardNormal.sample(rng);
                    *v = (*v + noise_std * eps).clamp(-1.0, 1.0);
                }
            }
            if t < horizon {
                z = self.model.next_latent(&z, &a)?;
            }
            out.push(a);
        }
        Ok(out)
    }
}

/// Scores each sequence with a closure over its row-major `(H+1) × d_a` values.
pub struct FnScorer<F> {
    pub action_dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64> SequenceScorer for FnScorer<F> {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn score(&self, actions: &[Matrix]) -> Result<Vec<f64>> {
        let n = actions[0].rows();
        let mut buf = Vec::with_capacity(actions.len() * self.action_dim);
        Ok((0..n)
            .map(|i| {
                buf.clear();
                for a in actions {
                    buf.extend_from_slice(a.row(i));
                }
                let s = (self.f)(&buf);
                if s.is_finite() {
                    s
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect())
    }
}

/// Score of a single `(H+1) × d_a` sequence under `scoring`.
pub fn score_sequence<M: LatentModel>(model: &M, z0: &[f64], seq: &Matrix, scoring: Scoring, gamma: f64) -> Result<f64> {
    check_dim("action", model.action_dim(), seq.cols())?;
    let actions: Vec<Matrix> = seq.iter_rows().map(Matrix::row_vector).collect();
    let scorer = ModelScorer {
        model,
        z0: z0.to_vec(),
        scoring,
        gamma,
    };
    Ok(scorer.score(&actions)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationStats {
    pub elite_mean: f64,
    pub elite_max: f64,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub action: Vec<f64>,
    pub dist: PlanDistribution,
    pub iterations: Vec<IterationStats>,
}

impl PlanOutcome {
    /// Mean elite score of the final iteration.
    pub fn final_elite_mean(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |s| s.elite_mean)
    }
}

/// Runs CEM on an arbitrary scorer from `init`.
pub fn cem<S: SequenceScorer + ?Sized, R: Rng>(
    scorer: &S,
    cfg: &CemConfig,
    init: PlanDistribution,
    policy_noise: f64,
    rng: &mut R,
) -> Result<PlanOutcome> {
    cfg.validate()?;
    let d_a = scorer.action_dim();
    let h = cfg.horizon;
    check_dim("plan distribution", (h + 1) * d_a, init.mean.as_slice().len())?;
    let n_smp = cfg.sampled_candidates();
    let policy_seqs = scorer.policy_candidates(cfg.policy_candidates(), h, policy_noise, rng)?;
    // Scorers without a policy contribute no candidates.
    let n_pol = policy_seqs.first().map_or(0, Matrix::rows);
    let n = n_smp + n_pol;
    let policy_scores = if policy_seqs.is_empty() {
        Vec::new()
    } else {
        scorer.score(&policy_seqs)?
    };

    let mut dist = init;
    let mut stats = Vec::with_capacity(cfg.iterations);
    let mut actions: Vec<Matrix> = (0..=h).map(|_| Matrix::zeros(n, d_a)).collect();
    for (t, a) in actions.iter_mut().enumerate() {
        for i in 0..n_pol {
            a.row_mut(n_smp + i).copy_from_slice(policy_seqs[t].row(i));
        }
    }

    for _ in 0..cfg.iterations {
        for (t, a) in actions.iter_mut().enumerate() {
            let (mu, sd) = (dist.mean.row(t), dist.std.row(t));
            for i in 0..n_smp {
                for (c, v) in a.row_mut(i).iter_mut().enumerate() {
                    let eps: f64 = StandardNormal.sample(rng);
                    *v = (mu[c] + sd[c] * eps).clamp(-1.0, 1.0);
                }
            }
        }
        let mut scores = if n_smp > 0 {
            let sampled: Vec<Matrix> = actions
                .iter()
                .map(|a| Matrix::from_vec(n_smp, d_a, a.as_slice()[..n_smp * d_a].to_vec()))
                .collect::<Result<_>>()?;
            scorer.score(&sampled)?
        } else {
            Vec::new()
        };
        scores.extend_from_slice(&policy_scores);

        let mut order: Vec<usize> = (0..n).collect();
        // Highest score first; equal scores keep the lower candidate index.
        order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
        let elites = &order[..cfg.elites];
        if scores[elites[0]] == f64::NEG_INFINITY {
            return Err(Error::DegenerateModel);
        }
        let finite: Vec<usize> = elites.iter().copied().filter(|&i| scores[i].is_finite()).collect();

        let weights: Vec<f64> = if cfg.soft_refit {
            let best = scores[finite[0]];
            let raw: Vec<f64> = finite.iter().map(|&i| (cfg.temperature * (scores[i] - best)).exp()).collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / finite.len() as f64; finite.len()]
        };

        for (t, a) in actions.iter().enumerate() {
            for c in 0..d_a {
                let mean: f64 = finite.iter().zip(&weights).map(|(&i, w)| w * a.get(i, c)).sum();
                let var: f64 = finite
                    .iter()
                    .zip(&weights)
                    .map(|(&i, w)| w * (a.get(i, c) - mean).powi(2))
                    .sum();
                dist.mean.set(t, c, mean);
                dist.std.set(t, c, var.sqrt().max(cfg.min_std));
            }
        }
        stats.push(IterationStats {
            elite_mean: finite.iter().map(|&i| scores[i]).sum::<f64>() / finite.len() as f64,
            elite_max: scores[finite[0]],
        });
    }

    let action = dist.mean.row(0).iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Ok(PlanOutcome {
        action,
        dist,
        iterations: stats,
    })
}

/// Plans one action for `observation` with a latent model.
///
/// The sampling distribution starts from a unit Gaussian unless warm starting
/// is enabled and a previous mean is supplied. `policy_noise` perturbs the
/// policy-generated candidates.
pub fn plan<M: LatentModel, R: Rng>(
    model: &M,
    cfg: &CemConfig,
    observation: &[f64],
    prev_mean: Option<&Matrix>,
    policy_noise: f64,
    rng: &mut R,
) -> Result<PlanOutcome> {
    let z0 = model.encode(observation)?;
    let init = match prev_mean {
        Some(m) if cfg.warm_start && m.rows() == cfg.horizon + 1 => PlanDistribution::shifted(m),
        _ => PlanDistribution::standard(cfg.horizon, model.action_dim()),
    };
    let scorer = ModelScorer {
        model,
        z0,
        scoring: cfg.scoring,
        gamma: cfg.gamma,
    };
    cem(&scorer, cfg, init, policy_noise, rng)
}
