//! Low-dimensional continuous-control tasks with action repeat.
//!
//! `pointmass-sparse`: a damped 2D point mass pulled toward the origin by a
//! spring, so a held action settles at a matching position in the unit
//! square; reward 1 per unit step spent within 0.1 of a fixed goal. `pendulum-dense`: a torque
//! limited pendulum with reward `(1 + cos θ) / 2`, θ = 0 upright.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    PointmassSparse,
    PendulumDense,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::PointmassSparse, EnvKind::PendulumDense];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::PointmassSparse => "pointmass-sparse",
            EnvKind::PendulumDense => "pendulum-dense",
        }
    }

    pub fn reward_type(self) -> RewardType {
        match self {
            EnvKind::PointmassSparse => RewardType::Sparse,
            EnvKind::PendulumDense => RewardType::Dense,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::PointmassSparse => 4,
            EnvKind::PendulumDense => 3,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvKind::PointmassSparse => 2,
            EnvKind::PendulumDense => 1,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown env `{s}` (expected pointmass-sparse or pendulum-dense)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardType {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Unit environment steps per episode.
    pub episode_length: usize,
    pub action_repeat: usize,
    pub reward_type: RewardType,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, episode_length: usize, action_repeat: usize) -> Result<Self> {
        let spec = Self {
            kind,
            obs_dim: kind.obs_dim(),
            action_dim: kind.action_dim(),
            episode_length,
            action_repeat,
            reward_type: kind.reward_type(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.action_repeat == 0 || self.episode_length == 0 {
            return Err(Error::InvalidConfig("episode length and action repeat must be >= 1".into()));
        }
        if !self.episode_length.is_multiple_of(self.action_repeat) {
            return Err(Error::InvalidConfig(format!(
                "episode length {} is not a multiple of action repeat {}",
                self.episode_length, self.action_repeat
            )));
        }
        Ok(())
    }

    /// Agent decisions per episode.
    pub fn decisions(&self) -> usize {
        self.episode_length / self.action_repeat
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// The action actually applied, after clamping.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

pub mod pointmass {
    /// Velocity retained per unit step.
    pub const DAMPING: f64 = 0.95;
    /// Velocity added per unit step at full action.
    pub const GAIN: f64 = 0.004;
    /// Velocity removed per unit step per unit of displacement, inside the well.
    pub const SPRING: f64 = 0.02;
    /// Radius of the well around the origin. Outside it there is no restoring force.
    pub const WELL_RADIUS: f64 = 0.5;
    pub const GOAL: [f64; 2] = [0.8, -0.8];
    pub const GOAL_RADIUS: f64 = 0.1;
    /// Half-width of the square of start positions around the origin.
    pub const START_SPREAD: f64 = 0.1;
    /// Scale applied to velocities in the observation.
    pub const VELOCITY_SCALE: f64 = 10.0;
}

pub mod pendulum {
    pub const GRAVITY: f64 = 9.81;
    /// Angular acceleration at full torque.
    pub const TORQUE: f64 = 4.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
}

#[derive(Debug, Clone, PartialEq)]
enum Physics {
    PointMass { pos: [f64; 2], vel: [f64; 2] },
    Pendulum { theta: f64, omega: f64 },
}

impl Physics {
    fn reset(kind: EnvKind, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            EnvKind::PointmassSparse => {
                let s = pointmass::START_SPREAD;
                Physics::PointMass {
                    pos: [rng.random_range(-s..=s), rng.random_range(-s..=s)],
                    vel: [0.0; 2],
                }
            }
            EnvKind::PendulumDense => Physics::Pendulum {
                theta: std::f64::consts::PI + rng.random_range(-0.1..=0.1),
                omega: 0.0,
            },
        }
    }

    fn observe(&self) -> Vec<f64> {
        match self {
            Physics::PointMass { pos, vel } => vec![
                pos[0],
                pos[1],
                pointmass::VELOCITY_SCALE * vel[0],
                pointmass::VELOCITY_SCALE * vel[1],
            ],
            Physics::Pendulum { theta, omega } => vec![theta.cos(), theta.sin(), *omega],
        }
    }

    /// Advances one unit step under an in-bounds action and returns its reward.
    fn advance(&mut self, a: &[f64]) -> f64 {
        match self {
            Physics::PointMass { pos, vel } => {
                let spring = if pos[0].hypot(pos[1]) < pointmass::WELL_RADIUS {
                    pointmass::SPRING
                } else {
                    0.0
                };
                for i in 0..2 {
                    vel[i] = pointmass::DAMPING * vel[i] + pointmass::GAIN * a[i] - spring * pos[i];
                    pos[i] += vel[i];
                    if pos[i].abs() > 1.0 {
                        pos[i] = pos[i].clamp(-1.0, 1.0);
                        vel[i] = 0.0;
                    }
                }
                let d2 = (pos[0] - pointmass::GOAL[0]).powi(2) + (pos[1] - pointmass::GOAL[1]).powi(2);
                if d2 < pointmass::GOAL_RADIUS * pointmass::GOAL_RADIUS {
                    1.0
                } else {
                    0.0
                }
            }
            Physics::Pendulum { theta, omega } => {
                let acc = pendulum::GRAVITY * theta.sin() + pendulum::TORQUE * a[0];
                *omega = (*omega + acc * pendulum::DT).clamp(-pendulum::MAX_SPEED, pendulum::MAX_SPEED);
                *theta = wrap_angle(*theta + *omega * pendulum::DT);
                (1.0 + theta.cos()) / 2.0
            }
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// A seeded environment instance. Pure state machine: the same seed and
/// action sequence reproduce the same transitions.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    physics: Physics,
    elapsed: usize,
    clamped: u64,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        let physics = Physics::reset(spec.kind, &mut ChaCha8Rng::seed_from_u64(0));
        Ok(Self {
            spec,
            physics,
            elapsed: 0,
            clamped: 0,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.physics = Physics::reset(self.spec.kind, &mut ChaCha8Rng::seed_from_u64(seed));
        self.elapsed = 0;
        self.physics.observe()
    }

    pub fn observe(&self) -> Vec<f64> {
        self.physics.observe()
    }

    /// Unit steps taken since the last reset.
    pub fn elapsed(&self) -> usize {
        self.elapsed
    }

    pub fn is_done(&self) -> bool {
        self.elapsed >= self.spec.episode_length
    }

    /// Number of actions that had a component outside `[-1, 1]`.
    pub fn clamp_count(&self) -> u64 {
        self.clamped
    }

    fn clamp_action(&mut self, a: &[f64]) -> Result<Vec<f64>> {
        check_dim("action", self.spec.action_dim, a.len())?;
        if let Some(v) = a.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("action component {v}")));
        }
        if a.iter().any(|v| v.abs() > 1.0) {
            self.clamped += 1;
        }
        Ok(a.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    /// One unit step, ignoring action repeat.
    pub fn unit_step(&mut self, a: &[f64]) -> Result<f64> {
        if self.is_done() {
            return Err(Error::EpisodeOver(self.elapsed));
        }
        let a = self.clamp_action(a)?;
        self.elapsed += 1;
        Ok(self.physics.advance(&a))
    }

    /// Applies `a` for `action_repeat` unit steps and sums the rewards.
    pub fn step(&mut self, a: &[f64]) -> Result<Transition> {
        if self.is_done() {
            return Err(Error::EpisodeOver(self.elapsed));
        }
        let obs = self.observe();
        let action = self.clamp_action(a)?;
        let mut reward = 0.0;
        for _ in 0..self.spec.action_repeat {
            reward += self.physics.advance(&action);
            self.elapsed += 1;
        }
        Ok(Transition {
            obs,
            action,
            reward,
            next_obs: self.observe(),
            done: self.is_done(),
        })
    }
}

/// Adds independent Gaussian noise with standard deviation `noise_std`.
pub fn augment<R: Rng + ?Sized>(obs: &[f64], noise_std: f64, rng: &mut R) -> Result<Vec<f64>> {
    if noise_std.is_nan() || noise_std < 0.0 {
        return Err(Error::InvalidConfig(format!("augmentation std must be >= 0, got {noise_std}")));
    }
    if noise_std == 0.0 {
        return Ok(obs.to_vec());
    }
    let normal = Normal::new(0.0, noise_std).expect("std checked");
    Ok(obs.iter().map(|v| v + normal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pm(repeat: usize) -> Env {
        Env::new(EnvSpec::new(EnvKind::PointmassSparse, 200, repeat).unwrap()).unwrap()
    }

    #[test]
    fn zero_action_at_origin_is_a_fixed_point() {
        let mut env = pm(1);
        env.reset(3);
        env.physics = Physics::PointMass {
            pos: [0.0; 2],
            vel: [0.0; 2],
        };
        let t = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(t.next_obs, vec![0.0; 4]);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn zero_action_only_decays_and_recentres() {
        let mut env = pm(1);
        env.reset(3);
        env.physics = Physics::PointMass {
            pos: [0.4, 0.0],
            vel: [0.01, 0.0],
        };
        let t = env.step(&[0.0, 0.0]).unwrap();
        let v = pointmass::DAMPING * 0.01 - pointmass::SPRING * 0.4;
        assert!((t.next_obs[2] - pointmass::VELOCITY_SCALE * v).abs() < 1e-15);
        assert!((t.next_obs[0] - (0.4 + v)).abs() < 1e-15);
    }

    #[test]
    fn no_restoring_force_outside_the_well() {
        let mut env = pm(1);
        env.reset(3);
        env.physics = Physics::PointMass {
            pos: [0.0, -0.8],
            vel: [0.0, 0.01],
        };
        let t = env.step(&[0.0, 0.0]).unwrap();
        let v = pointmass::DAMPING * 0.01;
        assert!((t.next_obs[3] - pointmass::VELOCITY_SCALE * v).abs() < 1e-15);
    }

    #[test]
    fn held_action_cannot_leave_the_well() {
        let mut env = Env::new(EnvSpec::new(EnvKind::PointmassSparse, 1000, 1).unwrap()).unwrap();
        for dir in [[1.0, 0.0], [0.0, -1.0], [-1.0, 1.0], [0.6, -0.8]] {
            env.reset(0);
            for _ in 0..1000 {
                let o = env.step(&dir).unwrap().next_obs;
                assert!(o[0].hypot(o[1]) < pointmass::WELL_RADIUS);
            }
        }
    }

    #[test]
    fn pumping_escapes_the_well_and_the_goal_can_be_held() {
        let mut env = Env::new(EnvSpec::new(EnvKind::PointmassSparse, 1000, 1).unwrap()).unwrap();
        env.reset(0);
        let mut escaped = false;
        for _ in 0..400 {
            let o = env.observe();
            if o[0].hypot(o[1]) >= pointmass::WELL_RADIUS {
                escaped = true;
                break;
            }
            let a = if o[3] <= 0.0 { -1.0 } else { 1.0 };
            env.step(&[0.0, a]).unwrap();
        }
        assert!(escaped);
        let mut last = 0.0;
        for _ in 0..500 {
            let o = env.observe();
            let a = (10.0 * (pointmass::GOAL[1] - o[1]) - o[3]).clamp(-1.0, 1.0);
            let b = (10.0 * (pointmass::GOAL[0] - o[0]) - o[2]).clamp(-1.0, 1.0);
            last = env.step(&[b, a]).unwrap().reward;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn held_action_settles_at_matching_position() {
        let mut env = Env::new(EnvSpec::new(EnvKind::PointmassSparse, 1000, 1).unwrap()).unwrap();
        env.reset(0);
        for _ in 0..1000 {
            env.step(&[0.8, 0.5]).unwrap();
        }
        let o = env.observe();
        let ratio = pointmass::GAIN / pointmass::SPRING;
        assert!((o[0] - 0.8 * ratio).abs() < 1e-6 && (o[1] - 0.5 * ratio).abs() < 1e-6);
    }

    #[test]
    fn upright_pendulum_earns_full_reward() {
        let mut env = Env::new(EnvSpec::new(EnvKind::PendulumDense, 100, 1).unwrap()).unwrap();
        env.reset(0);
        env.physics = Physics::Pendulum { theta: 0.0, omega: 0.0 };
        assert_eq!(env.step(&[0.0]).unwrap().reward, 1.0);
    }

    #[test]
    fn action_repeat_matches_unit_steps() {
        let mut a = pm(4);
        let mut b = pm(1);
        a.reset(9);
        b.reset(9);
        for k in 0..10 {
            let act = [0.9 * (k as f64).sin(), -0.7];
            let t = a.step(&act).unwrap();
            let r: f64 = (0..4).map(|_| b.unit_step(&act).unwrap()).sum();
            assert_eq!(t.reward, r);
            assert_eq!(t.next_obs, b.observe());
        }
    }

    #[test]
    fn episode_ends_at_length() {
        let mut env = pm(4);
        env.reset(0);
        let mut n = 0;
        loop {
            let t = env.step(&[0.0, 0.0]).unwrap();
            n += 1;
            if t.done {
                break;
            }
        }
        assert_eq!(n * 4, 200);
        assert!(matches!(env.step(&[0.0, 0.0]), Err(Error::EpisodeOver(200))));
    }

    #[test]
    fn out_of_bounds_actions_are_clamped_and_counted() {
        let mut env = pm(1);
        env.reset(0);
        let t = env.step(&[3.0, -0.5]).unwrap();
        assert_eq!(t.action, vec![1.0, -0.5]);
        assert_eq!(env.clamp_count(), 1);
    }

    #[test]
    fn walls_stop_the_mass() {
        let mut env = pm(1);
        env.reset(0);
        for _ in 0..200 {
            let t = env.step(&[1.0, 1.0]).unwrap();
            assert!(t.next_obs[..2].iter().all(|p| p.abs() <= 1.0));
        }
    }

    #[test]
    fn goal_region_pays_one() {
        let mut env = pm(1);
        env.reset(0);
        env.physics = Physics::PointMass {
            pos: pointmass::GOAL,
            vel: [0.0; 2],
        };
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().reward, 1.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(EnvSpec::new(EnvKind::PointmassSparse, 100, 3).is_err());
        assert!(EnvSpec::new(EnvKind::PointmassSparse, 100, 0).is_err());
        assert!("cartpole".parse::<EnvKind>().is_err());
    }

    #[test]
    fn zero_noise_augment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = vec![0.1, -2.0, 3.5];
        assert_eq!(augment(&o, 0.0, &mut rng).unwrap(), o);
        assert!(augment(&o, -1.0, &mut rng).is_err());
    }
}
