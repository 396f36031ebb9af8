//! Episode-structured replay buffer with uniform trajectory sampling.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// One stored episode: `T + 1` observations around `T` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    obs: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

impl Episode {
    pub fn new(first_obs: Vec<f64>) -> Self {
        Self {
            obs: vec![first_obs],
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Vec<f64>, reward: f64, next_obs: Vec<f64>) {
        self.actions.push(action);
        self.rewards.push(reward);
        self.obs.push(next_obs);
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }
}

/// `K` consecutive transitions for each of `B` trajectories, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    /// `K + 1` matrices of shape `B × obs_dim`.
    pub obs: Vec<Matrix>,
    /// `K` matrices of shape `B × action_dim`.
    pub actions: Vec<Matrix>,
    /// `K` vectors of length `B`.
    pub rewards: Vec<Vec<f64>>,
}

impl TrajectoryBatch {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn batch_size(&self) -> usize {
        self.actions.first().map_or(0, Matrix::rows)
    }

    /// Assembles a batch from per-trajectory slices `(obs[0..=K], actions[0..K], rewards[0..K])`.
    pub fn from_slices(slices: &[(&[Vec<f64>], &[Vec<f64>], &[f64])]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::InvalidConfig("empty trajectory batch".into()))?;
        let k = first.1.len();
        let mut obs = Vec::with_capacity(k + 1);
        for t in 0..=k {
            let rows: Vec<&[f64]> = slices.iter().map(|s| s.0[t].as_slice()).collect();
            obs.push(Matrix::from_rows(&rows)?);
        }
        let mut actions = Vec::with_capacity(k);
        let mut rewards = Vec::with_capacity(k);
        for t in 0..k {
            let rows: Vec<&[f64]> = slices.iter().map(|s| s.1[t].as_slice()).collect();
            actions.push(Matrix::from_rows(&rows)?);
            rewards.push(slices.iter().map(|s| s.2[t]).collect());
        }
        Ok(Self { obs, actions, rewards })
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    episodes: VecDeque<Episode>,
    capacity: usize,
    transitions: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            episodes: VecDeque::new(),
            capacity,
            transitions: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions
    }

    pub fn is_empty(&self) -> bool {
        self.transitions == 0
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Appends an episode, evicting whole episodes from the front while the
    /// buffer is over capacity. The newest episode is always kept.
    pub fn push_episode(&mut self, episode: Episode) {
        self.transitions += episode.len();
        self.episodes.push_back(episode);
        while self.transitions > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().expect("non-empty");
            self.transitions -= old.len();
        }
    }

    /// Samples `batch` length-`k` slices uniformly over every start position
    /// whose slice stays inside one episode.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, k: usize, rng: &mut R) -> Result<TrajectoryBatch> {
        if k == 0 || batch == 0 {
            return Err(Error::InvalidConfig("batch size and trajectory length must be >= 1".into()));
        }
        let mut cumulative = Vec::with_capacity(self.episodes.len());
        let mut total = 0usize;
        for ep in &self.episodes {
            total += (ep.len() + 1).saturating_sub(k);
            cumulative.push(total);
        }
        if total == 0 {
            return Err(Error::InsufficientData {
                have: self.transitions,
                need: k,
            });
        }
        let mut slices = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = rng.random_range(0..total);
            let e = cumulative.partition_point(|&c| c <= idx);
            let before = if e == 0 { 0 } else { cumulative[e - 1] };
            let start = idx - before;
            let ep = &self.episodes[e];
            slices.push((
                &ep.obs[start..=start + k],
                &ep.actions[start..start + k],
                &ep.rewards[start..start + k],
            ));
        }
        TrajectoryBatch::from_slices(&slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Episode whose observations encode (episode id, time index).
    fn episode(id: usize, len: usize) -> Episode {
        let mut ep = Episode::new(vec![id as f64, 0.0]);
        for t in 0..len {
            ep.push(vec![t as f64], 1.0, vec![id as f64, (t + 1) as f64]);
        }
        ep
    }

    #[test]
    fn slices_never_cross_episodes() {
        let mut buf = ReplayBuffer::new(1000);
        for id in 0..5 {
            buf.push_episode(episode(id, 7 + id));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = buf.sample(200, 4, &mut rng).unwrap();
        for i in 0..200 {
            let id = b.obs[0].get(i, 0);
            let t0 = b.obs[0].get(i, 1);
            for t in 0..=4 {
                assert_eq!(b.obs[t].get(i, 0), id);
                assert_eq!(b.obs[t].get(i, 1), t0 + t as f64);
            }
            for t in 0..4 {
                assert_eq!(b.actions[t].get(i, 0), t0 + t as f64);
            }
        }
    }

    #[test]
    fn fifo_eviction_drops_whole_episodes() {
        let mut buf = ReplayBuffer::new(25);
        for id in 0..6 {
            buf.push_episode(episode(id, 10));
        }
        assert_eq!(buf.num_episodes(), 2);
        assert_eq!(buf.len(), 20);
        let ids: Vec<f64> = buf.episodes().map(|e| e.observations()[0][0]).collect();
        assert_eq!(ids, vec![4.0, 5.0]);
    }

    #[test]
    fn too_short_episodes_rejected() {
        let mut buf = ReplayBuffer::new(100);
        buf.push_episode(episode(0, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(1, 3, &mut rng), Err(Error::InsufficientData { .. })));
        assert!(buf.sample(1, 2, &mut rng).is_ok());
    }

    #[test]
    fn every_start_position_is_reachable() {
        let mut buf = ReplayBuffer::new(100);
        buf.push_episode(episode(0, 3));
        buf.push_episode(episode(1, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = buf.sample(400, 2, &mut rng).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..400 {
            seen.insert((b.obs[0].get(i, 0) as i64, b.obs[0].get(i, 1) as i64));
        }
        // episode 0 starts {0,1}, episode 1 start {0}
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![(0, 0), (0, 1), (1, 0)]);
    }
}
