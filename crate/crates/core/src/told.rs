//! Task-oriented latent dynamics model: encoder, latent dynamics, reward,
//! value and policy networks, plus their training losses.
//!
//! All losses return gradients over the full agent [`ParamVector`]. The
//! stop-gradient contracts are structural: target networks are only ever
//! evaluated with `forward_batch`, so their segments never receive gradient,
//! and the Q networks inside the policy loss are back-propagated without a
//! parameter accumulator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::ModelDims;
use crate::nn::{Activation, Matrix, Mlp, MlpCache, MlpSpec, ParamVector};
use crate::replay::TrajectoryBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Temporal decay of per-step losses.
    pub lambda: f64,
    /// Value loss coefficient.
    pub c1: f64,
    /// Reward loss coefficient.
    pub c2: f64,
    /// Latent consistency coefficient.
    pub c3: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            c1: 0.1,
            c2: 0.5,
            c3: 2.0,
            gamma: 0.99,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda > 0.0
            && self.lambda <= 1.0
            && self.c1 >= 0.0
            && self.c2 >= 0.0
            && self.c3 >= 0.0
            && (0.0..1.0).contains(&self.gamma);
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Loss value of a single-sample objective together with its gradients.
#[derive(Debug, Clone)]
pub struct StepLoss {
    pub loss: f64,
    pub grad: ParamVector,
    /// Gradient with respect to the input latent `z_t`.
    pub z_grad: Vec<f64>,
}

/// Unweighted per-step loss means, averaged over the trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossComponents {
    pub q: f64,
    pub reward: f64,
    pub consistency: f64,
    pub policy: f64,
}

#[derive(Debug, Clone)]
pub struct ToldObjective {
    pub total: f64,
    pub grad: ParamVector,
    pub components: LossComponents,
}

#[derive(Debug, Clone)]
pub struct Told {
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub reward: Mlp,
    pub q: Vec<Mlp>,
    pub policy: Mlp,
    pub target_encoder: Mlp,
    pub target_q: Vec<Mlp>,
    latent_dim: usize,
    action_dim: usize,
}

impl Told {
    pub fn register(dims: &ModelDims, layout: &mut crate::nn::Layout) -> Result<Self> {
        let (zd, ad) = (dims.latent_dim, dims.action_dim);
        let enc_spec = MlpSpec::new(dims.obs_dim, &dims.encoder_hidden, zd);
        let za_spec = |out| MlpSpec::new(zd + ad, &dims.head_hidden, out);
        let heads = if dims.twin_q { 2 } else { 1 };

        let encoder = Mlp::register("encoder", enc_spec.clone(), layout)?;
        let dynamics = Mlp::register("dynamics", za_spec(zd), layout)?;
        let reward = Mlp::register("reward", za_spec(1), layout)?;
        let q = (0..heads)
            .map(|h| Mlp::register(&format!("q{h}"), za_spec(1), layout))
            .collect::<Result<Vec<_>>>()?;
        let policy = Mlp::register(
            "policy",
            MlpSpec::new(zd, &dims.head_hidden, ad).with_output_activation(Activation::Tanh),
            layout,
        )?;
        let target_encoder = Mlp::register("target_encoder", enc_spec, layout)?;
        let target_q = (0..heads)
            .map(|h| Mlp::register(&format!("target_q{h}"), za_spec(1), layout))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder,
            dynamics,
            reward,
            q,
            policy,
            target_encoder,
            target_q,
            latent_dim: zd,
            action_dim: ad,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Group prefixes of the online parameters θ.
    pub fn online_groups(&self) -> Vec<String> {
        let mut g = vec![self.encoder.group(), self.dynamics.group(), self.reward.group()];
        g.extend(self.q.iter().map(Mlp::group));
        g.push(self.policy.group());
        g
    }

    /// Group prefixes of the target parameters θ̄.
    pub fn target_groups(&self) -> Vec<String> {
        let mut g = vec![self.target_encoder.group()];
        g.extend(self.target_q.iter().map(Mlp::group));
        g
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut ParamVector, rng: &mut R) -> Result<()> {
        for net in [&self.encoder, &self.dynamics, &self.reward, &self.policy] {
            net.init_uniform(p, rng);
        }
        for net in &self.q {
            net.init_uniform(p, rng);
        }
        self.sync_targets(p)
    }

    /// Copies online encoder and Q parameters into their targets.
    pub fn sync_targets(&self, p: &mut ParamVector) -> Result<()> {
        p.copy_group(&self.target_encoder.group(), &self.encoder.group())?;
        for (t, q) in self.target_q.iter().zip(&self.q) {
            p.copy_group(&t.group(), &q.group())?;
        }
        Ok(())
    }

    // ----- inference -------------------------------------------------------

    pub fn encode(&self, p: &ParamVector, observation: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(p, observation)
    }

    pub fn encode_target(&self, p: &ParamVector, observation: &[f64]) -> Result<Vec<f64>> {
        self.target_encoder.forward(p, observation)
    }

    pub fn dynamics_step(&self, p: &ParamVector, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_za(z.len(), a.len())?;
        self.dynamics.forward(p, &concat(z, a))
    }

    pub fn predict_reward(&self, p: &ParamVector, z: &[f64], a: &[f64]) -> Result<f64> {
        self.check_za(z.len(), a.len())?;
        Ok(self.reward.forward(p, &concat(z, a))?[0])
    }

    /// State-action value; the minimum over heads when twin Q is enabled.
    pub fn predict_q(&self, p: &ParamVector, z: &[f64], a: &[f64], use_target: bool) -> Result<f64> {
        self.check_za(z.len(), a.len())?;
        let za = Matrix::row_vector(&concat(z, a));
        Ok(self.q_batch(p, &za, use_target)?[0])
    }

    /// `tanh` policy output plus optional Gaussian noise, clamped to `[-1, 1]`.
    pub fn policy_action<R: Rng + ?Sized>(
        &self,
        p: &ParamVector,
        z: &[f64],
        noise_std: f64,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if noise_std < 0.0 {
            return Err(Error::InvalidConfig(format!("negative policy noise {noise_std}")));
        }
        let mut a = self.policy.forward(p, z)?;
        if noise_std > 0.0 {
            for v in &mut a {
                let eps: f64 = StandardNormal.sample(rng);
                *v = (*v + noise_std * eps).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    pub fn encode_batch(&self, p: &ParamVector, obs: &Matrix) -> Result<Matrix> {
        self.encoder.forward_batch(p, obs)
    }

    pub fn dynamics_batch(&self, p: &ParamVector, za: &Matrix) -> Result<Matrix> {
        self.dynamics.forward_batch(p, za)
    }

    pub fn reward_batch(&self, p: &ParamVector, za: &Matrix) -> Result<Vec<f64>> {
        Ok(self.reward.forward_batch(p, za)?.into_vec())
    }

    pub fn policy_batch(&self, p: &ParamVector, z: &Matrix) -> Result<Matrix> {
        self.policy.forward_batch(p, z)
    }

    /// Minimum over Q heads for each row of `za`.
    pub fn q_batch(&self, p: &ParamVector, za: &Matrix, use_target: bool) -> Result<Vec<f64>> {
        let heads = if use_target { &self.target_q } else { &self.q };
        let mut out = heads[0].forward_batch(p, za)?.into_vec();
        for h in &heads[1..] {
            for (o, v) in out.iter_mut().zip(h.forward_batch(p, za)?.as_slice()) {
                *o = o.min(*v);
            }
        }
        Ok(out)
    }

    /// `r + γ · Q̄(z', π(z'))`, treated as a constant by every caller.
    pub fn td_targets(&self, p: &ParamVector, r: &[f64], z_next: &Matrix, gamma: f64) -> Result<Vec<f64>> {
        let pi = self.policy_batch(p, z_next)?;
        let bootstrap = self.q_batch(p, &z_next.hcat(&pi)?, true)?;
        let y: Vec<f64> = r.iter().zip(&bootstrap).map(|(r, q)| r + gamma * q).collect();
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("TD target for sample {i}")));
        }
        Ok(y)
    }

    fn check_za(&self, z: usize, a: usize) -> Result<()> {
        check_dim("latent", self.latent_dim, z)?;
        check_dim("action", self.action_dim, a)
    }

    // ----- single-step losses ----------------------------------------------

    /// `Σ_heads (Q(z,a) − (r_e + r_i + γ Q̄(z', π(z'))))²`.
    #[allow(clippy::too_many_arguments)]
    pub fn q_loss(
        &self,
        p: &ParamVector,
        z_t: &[f64],
        a_t: &[f64],
        r_e: f64,
        r_i: f64,
        z_next: &[f64],
        gamma: f64,
    ) -> Result<StepLoss> {
        self.check_za(z_t.len(), a_t.len())?;
        check_dim("next latent", self.latent_dim, z_next.len())?;
        let y = self.td_targets(p, &[r_e + r_i], &Matrix::row_vector(z_next), gamma)?;
        let za = Matrix::row_vector(&concat(z_t, a_t));
        let heads = self.q_forward(p, &za)?;
        let mut grad = p.zeros_like();
        let (loss, d_za) = self.q_backward(p, &heads, &y, 1.0, &mut grad)?;
        Ok(StepLoss {
            loss: loss[0],
            grad,
            z_grad: d_za.row(0)[..self.latent_dim].to_vec(),
        })
    }

    /// `−Q(z, π(z))` with gradient restricted to the policy network.
    pub fn policy_loss(&self, p: &ParamVector, z_t: &[f64]) -> Result<StepLoss> {
        check_dim("latent", self.latent_dim, z_t.len())?;
        let mut grad = p.zeros_like();
        let loss = self.policy_step(p, &Matrix::row_vector(z_t), 1.0, &mut grad)?;
        Ok(StepLoss {
            loss: loss[0],
            grad,
            z_grad: vec![0.0; self.latent_dim],
        })
    }

    /// `(R(z,a) − r_e)²`.
    pub fn reward_loss(&self, p: &ParamVector, z_t: &[f64], a_t: &[f64], r_e: f64) -> Result<StepLoss> {
        self.check_za(z_t.len(), a_t.len())?;
        let za = Matrix::row_vector(&concat(z_t, a_t));
        let (rhat, cache) = self.reward.forward_cached(p, &za)?;
        let diff = rhat.get(0, 0) - r_e;
        let mut grad = p.zeros_like();
        let d_za = self
            .reward
            .backward(p, &cache, &Matrix::row_vector(&[2.0 * diff]), Some(&mut grad))?;
        Ok(StepLoss {
            loss: diff * diff,
            grad,
            z_grad: d_za.row(0)[..self.latent_dim].to_vec(),
        })
    }

    /// `‖d(z,a) − h̄(o')‖²`; the target encoder receives no gradient.
    pub fn consistency_loss(&self, p: &ParamVector, z_t: &[f64], a_t: &[f64], o_next: &[f64]) -> Result<StepLoss> {
        self.check_za(z_t.len(), a_t.len())?;
        let target = self.target_encoder.forward_batch(p, &Matrix::row_vector(o_next))?;
        let za = Matrix::row_vector(&concat(z_t, a_t));
        let (zhat, cache) = self.dynamics.forward_cached(p, &za)?;
        let mut d = zhat.clone();
        let mut loss = 0.0;
        for (g, t) in d.as_mut_slice().iter_mut().zip(target.as_slice()) {
            let diff = *g - t;
            loss += diff * diff;
            *g = 2.0 * diff;
        }
        let mut grad = p.zeros_like();
        let d_za = self.dynamics.backward(p, &cache, &d, Some(&mut grad))?;
        Ok(StepLoss {
            loss,
            grad,
            z_grad: d_za.row(0)[..self.latent_dim].to_vec(),
        })
    }

    // ----- shared pieces ---------------------------------------------------

    fn q_forward(&self, p: &ParamVector, za: &Matrix) -> Result<Vec<(Matrix, MlpCache)>> {
        self.q.iter().map(|h| h.forward_cached(p, za)).collect()
    }

    /// Per-sample `Σ_heads (q_h − y)²`; accumulates `weight ·` its gradient.
    fn q_backward(
        &self,
        p: &ParamVector,
        heads: &[(Matrix, MlpCache)],
        y: &[f64],
        weight: f64,
        grad: &mut ParamVector,
    ) -> Result<(Vec<f64>, Matrix)> {
        let rows = y.len();
        let mut loss = vec![0.0; rows];
        let mut d_za: Option<Matrix> = None;
        for (net, (q, cache)) in self.q.iter().zip(heads) {
            let mut d = Matrix::zeros(rows, 1);
            for i in 0..rows {
                let diff = q.get(i, 0) - y[i];
                loss[i] += diff * diff;
                d.set(i, 0, weight * 2.0 * diff);
            }
            let g = net.backward(p, cache, &d, Some(grad))?;
            match d_za.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => d_za = Some(g),
            }
        }
        Ok((loss, d_za.expect("at least one Q head")))
    }

    /// Per-sample `−min_h Q_h(z, π(z))`; accumulates `weight ·` its gradient
    /// into the policy parameters only.
    fn policy_step(&self, p: &ParamVector, z: &Matrix, weight: f64, grad: &mut ParamVector) -> Result<Vec<f64>> {
        let rows = z.rows();
        let (pi, pi_cache) = self.policy.forward_cached(p, z)?;
        let zpi = z.hcat(&pi)?;
        let heads = self.q_forward(p, &zpi)?;
        let mut best = vec![0usize; rows];
        let mut value = vec![f64::INFINITY; rows];
        for (h, (q, _)) in heads.iter().enumerate() {
            for i in 0..rows {
                if q.get(i, 0) < value[i] {
                    value[i] = q.get(i, 0);
                    best[i] = h;
                }
            }
        }
        let mut d_pi = Matrix::zeros(rows, self.action_dim);
        for (h, (net, (_, cache))) in self.q.iter().zip(&heads).enumerate() {
            let mut d = Matrix::zeros(rows, 1);
            for i in 0..rows {
                if best[i] == h {
                    d.set(i, 0, -weight);
                }
            }
            let d_in = net.backward(p, cache, &d, None)?;
            let (_, da) = d_in.split_cols(self.latent_dim);
            d_pi.add_assign(&da);
        }
        self.policy.backward(p, &pi_cache, &d_pi, Some(grad))?;
        Ok(value.into_iter().map(|v| -v).collect())
    }

    // ----- multi-step objective --------------------------------------------

    /// Temporally weighted TOLD objective over a batch of trajectories.
    ///
    /// Latents are produced by encoding the first observation and rolling
    /// the dynamics forward on the stored actions. Per step `j`:
    /// - value: TD target bootstraps from `h(o_{j+1})` through `Q̄` and `π`, no gradient;
    /// - consistency: `d(z_j, a_j)` against `h̄(o_{j+1})`;
    /// - policy: evaluated on a detached copy of `z_j`.
    ///
    /// `intrinsic[j][b]` is added to the extrinsic reward inside the TD target
    /// only. The result is averaged over the batch.
    pub fn told_objective(
        &self,
        p: &ParamVector,
        batch: &TrajectoryBatch,
        intrinsic: &[Vec<f64>],
        w: &LossWeights,
    ) -> Result<ToldObjective> {
        let k = batch.horizon();
        let b = batch.batch_size();
        if k == 0 || b == 0 {
            return Err(Error::InvalidConfig("empty trajectory batch".into()));
        }
        check_dim("intrinsic reward steps", k, intrinsic.len())?;

        struct Step {
            q_heads: Vec<(Matrix, MlpCache)>,
            y: Vec<f64>,
            rhat: Matrix,
            r_cache: MlpCache,
            zhat: Matrix,
            d_cache: MlpCache,
            cons_target: Matrix,
            weight: f64,
        }

        let mut grad = p.zeros_like();
        let (mut z, enc_cache) = self.encoder.forward_cached(p, &batch.obs[0])?;
        let mut steps = Vec::with_capacity(k);
        let mut comps = LossComponents::default();
        let mut total = 0.0;

        for j in 0..k {
            check_dim("intrinsic reward batch", b, intrinsic[j].len())?;
            let weight = w.lambda.powi(j as i32) / b as f64;
            let a = &batch.actions[j];
            let za = z.hcat(a)?;

            let r: Vec<f64> = batch.rewards[j].iter().zip(&intrinsic[j]).map(|(e, i)| e + i).collect();
            let z_next_enc = self.encoder.forward_batch(p, &batch.obs[j + 1])?;
            let y = self.td_targets(p, &r, &z_next_enc, w.gamma)?;
            let q_heads = self.q_forward(p, &za)?;
            let (rhat, r_cache) = self.reward.forward_cached(p, &za)?;
            let (zhat, d_cache) = self.dynamics.forward_cached(p, &za)?;
            let cons_target = self.target_encoder.forward_batch(p, &batch.obs[j + 1])?;

            // Policy term on a detached latent: its gradient is applied here and
            // never flows back into the rollout.
            let pol = self.policy_step(p, &z, weight, &mut grad)?;

            let mut lq = 0.0;
            for (q, _) in &q_heads {
                lq += (0..b).map(|i| (q.get(i, 0) - y[i]).powi(2)).sum::<f64>();
            }
            let lr = (0..b).map(|i| (rhat.get(i, 0) - batch.rewards[j][i]).powi(2)).sum::<f64>();
            let lc = zhat.row_sq_dist(&cons_target).iter().sum::<f64>();
            let lp = pol.iter().sum::<f64>();
            let step_total = (w.c1 * lq + w.c2 * lr + w.c3 * lc + lp) / b as f64;
            if !step_total.is_finite() {
                return Err(Error::NonFinite(format!("TOLD objective at rollout step {j}")));
            }
            total += w.lambda.powi(j as i32) * step_total;
            comps.q += lq / b as f64;
            comps.reward += lr / b as f64;
            comps.consistency += lc / b as f64;
            comps.policy += lp / b as f64;

            z = zhat.clone();
            steps.push(Step {
                q_heads,
                y,
                rhat,
                r_cache,
                zhat,
                d_cache,
                cons_target,
                weight,
            });
        }

        let zd = self.latent_dim;
        let mut g_next = Matrix::zeros(b, zd);
        for (j, s) in steps.iter().enumerate().rev() {
            // dynamics: consistency term plus the gradient arriving from z_{j+1}
            let mut d_zhat = g_next;
            for i in 0..b {
                let (zh, ct) = (s.zhat.row(i), s.cons_target.row(i));
                for (c, g) in d_zhat.row_mut(i).iter_mut().enumerate() {
                    *g += s.weight * w.c3 * 2.0 * (zh[c] - ct[c]);
                }
            }
            let mut d_za = self.dynamics.backward(p, &s.d_cache, &d_zhat, Some(&mut grad))?;

            let mut d_r = Matrix::zeros(b, 1);
            for i in 0..b {
                d_r.set(i, 0, s.weight * w.c2 * 2.0 * (s.rhat.get(i, 0) - batch.rewards[j][i]));
            }
            d_za.add_assign(&self.reward.backward(p, &s.r_cache, &d_r, Some(&mut grad))?);

            let (_, d_q) = self.q_backward(p, &s.q_heads, &s.y, s.weight * w.c1, &mut grad)?;
            d_za.add_assign(&d_q);

            g_next = d_za.split_cols(zd).0;
        }
        self.encoder.backward(p, &enc_cache, &g_next, Some(&mut grad))?;

        let kf = k as f64;
        comps.q /= kf;
        comps.reward /= kf;
        comps.consistency /= kf;
        comps.policy /= kf;
        Ok(ToldObjective {
            total,
            grad,
            components: comps,
        })
    }
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AgentModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            obs_dim: 3,
            action_dim: 2,
            latent_dim: 3,
            encoder_hidden: vec![],
            head_hidden: vec![4],
            inverse_hidden: vec![4],
            action_encoder_hidden: vec![4],
            action_latent_dim: 3,
            twin_q: false,
        }
    }

    #[test]
    fn zero_weight_heads() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let p = m.zero_params();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = m.told.encode(&p, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert_eq!(m.told.predict_reward(&p, &z, &[0.5, -0.5]).unwrap(), 0.0);
        assert_eq!(m.told.predict_q(&p, &z, &[0.5, -0.5], false).unwrap(), 0.0);
        assert_eq!(m.told.policy_action(&p, &z, 0.0, &mut rng).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_encoder() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let mut p = m.zero_params();
        let w = p.segment_mut("encoder.0.weight").unwrap();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let o = [0.2, -1.4, 3.3];
        assert_eq!(m.told.encode(&p, &o).unwrap(), o.to_vec());
    }

    #[test]
    fn identity_wired_dynamics() {
        // No hidden layer: dynamics(z, a) = z + [a, 0] when W = [I | I'].
        let mut dims = tiny_dims();
        dims.head_hidden = vec![];
        let m = AgentModel::new(dims).unwrap();
        let mut p = m.zero_params();
        let w = p.segment_mut("dynamics.0.weight").unwrap();
        for i in 0..3 {
            w[i * 5 + i] = 1.0;
        }
        w[3] = 1.0; // z0 += a0
        w[5 + 4] = 1.0; // z1 += a1
        let z = m.told.dynamics_step(&p, &[1.0, 2.0, 3.0], &[0.5, -0.25]).unwrap();
        assert_eq!(z, vec![1.5, 1.75, 3.0]);
    }

    #[test]
    fn hand_evaluated_dynamics() {
        let mut dims = tiny_dims();
        dims.latent_dim = 1;
        dims.action_dim = 1;
        dims.head_hidden = vec![1];
        let m = AgentModel::new(dims).unwrap();
        let mut p = m.zero_params();
        p.segment_mut("dynamics.0.weight").unwrap().copy_from_slice(&[2.0, -1.0]);
        p.segment_mut("dynamics.0.bias").unwrap().copy_from_slice(&[-0.5]);
        p.segment_mut("dynamics.1.weight").unwrap().copy_from_slice(&[3.0]);
        p.segment_mut("dynamics.1.bias").unwrap().copy_from_slice(&[0.25]);
        // pre = 2*0.1 - 1*0.9 - 0.5 = -1.2 ; elu = e^-1.2 - 1 ; out = 3*elu + 0.25
        let expected = 3.0 * ((-1.2f64).exp() - 1.0) + 0.25;
        let z = m.told.dynamics_step(&p, &[0.1], &[0.9]).unwrap();
        assert!((z[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn policy_noise_clamped_and_deterministic_without_noise() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = m.init_params(&mut rng).unwrap();
        let z = [0.3, -0.2, 0.9];
        let a1 = m.told.policy_action(&p, &z, 0.0, &mut rng).unwrap();
        let a2 = m.told.policy_action(&p, &z, 0.0, &mut rng).unwrap();
        assert_eq!(a1, a2);
        for _ in 0..100 {
            let a = m.told.policy_action(&p, &z, 5.0, &mut rng).unwrap();
            assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn target_equal_online_gives_same_q() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let (z, a) = ([0.1, 0.2, -0.3], [0.7, -0.1]);
        assert_eq!(
            m.told.predict_q(&p, &z, &a, true).unwrap(),
            m.told.predict_q(&p, &z, &a, false).unwrap()
        );
    }

    #[test]
    fn q_loss_arithmetic_with_zero_discount() {
        // Q(z,a) = 0.5 via output bias, r_e + r_i = 1.0, γ = 0 -> 0.25
        let m = AgentModel::new(tiny_dims()).unwrap();
        let mut p = m.zero_params();
        p.segment_mut("q0.1.bias").unwrap()[0] = 0.5;
        let l = m.told.q_loss(&p, &[0.0; 3], &[0.0; 2], 0.6, 0.4, &[0.0; 3], 0.0).unwrap();
        assert!((l.loss - 0.25).abs() < 1e-15);
        // exact TD target -> zero loss and zero gradient
        let l = m.told.q_loss(&p, &[0.0; 3], &[0.0; 2], 0.3, 0.2, &[0.0; 3], 0.0).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grad.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reward_and_consistency_arithmetic() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let p = m.zero_params();
        let l = m.told.reward_loss(&p, &[0.0; 3], &[0.0; 2], 2.0).unwrap();
        assert_eq!(l.loss, 4.0);
        assert_eq!(m.told.reward_loss(&p, &[0.0; 3], &[0.0; 2], 0.0).unwrap().loss, 0.0);

        let mut dims = tiny_dims();
        dims.latent_dim = 1;
        dims.obs_dim = 1;
        let m = AgentModel::new(dims).unwrap();
        let mut p = m.zero_params();
        p.segment_mut("target_encoder.0.bias").unwrap()[0] = 3.0;
        let l = m.told.consistency_loss(&p, &[0.0], &[0.0, 0.0], &[7.0]).unwrap();
        assert_eq!(l.loss, 9.0);
        assert!(l.grad.group_is_zero("target_encoder."));
    }

    #[test]
    fn constant_q_policy_loss() {
        let m = AgentModel::new(tiny_dims()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = m.init_params(&mut rng).unwrap();
        // Q ≡ 1.7: zero every Q weight, keep the output bias
        for r in p.layout().group("q0.") {
            p.values_mut()[r].iter_mut().for_each(|v| *v = 0.0);
        }
        p.segment_mut("q0.1.bias").unwrap()[0] = 1.7;
        let l = m.told.policy_loss(&p, &[0.4, 0.1, -0.6]).unwrap();
        assert_eq!(l.loss, -1.7);
        assert!(l.grad.values().iter().all(|&v| v == 0.0));
    }
}
