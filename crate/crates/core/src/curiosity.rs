//! Intrinsic curiosity: inverse dynamics model, forward-error intrinsic
//! reward, action encoder and the temporal contrastive loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::ModelDims;
use crate::nn::{Layout, Matrix, Mlp, MlpSpec, ParamVector};
use crate::replay::TrajectoryBatch;
use crate::told::{concat, Told};

pub const CONTRASTIVE_SEGMENT: &str = "contrastive.w";

#[derive(Debug, Clone)]
pub struct Icm {
    /// `I_φ(z_t, z_{t+1}) -> ã_t`
    pub inverse: Mlp,
    /// `g_ψ(a) -> u`, layer-normalised output.
    pub action_encoder: Mlp,
    w_offset: usize,
    query_dim: usize,
    key_dim: usize,
}

/// Loss value and gradient over the full parameter vector.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamVector,
}

impl Icm {
    pub fn register(dims: &ModelDims, layout: &mut Layout) -> Result<Self> {
        let zd = dims.latent_dim;
        let inverse = Mlp::register(
            "inverse",
            MlpSpec::new(2 * zd, &dims.inverse_hidden, dims.action_dim),
            layout,
        )?;
        let action_encoder = Mlp::register(
            "action_encoder",
            MlpSpec::new(dims.action_dim, &dims.action_encoder_hidden, dims.action_latent_dim).with_layernorm(),
            layout,
        )?;
        let query_dim = zd + dims.action_latent_dim;
        let w_offset = layout.push(CONTRASTIVE_SEGMENT, &[query_dim, zd])?;
        Ok(Self {
            inverse,
            action_encoder,
            w_offset,
            query_dim,
            key_dim: zd,
        })
    }

    pub fn init<R: Rng + ?Sized>(&self, p: &mut ParamVector, rng: &mut R) {
        self.inverse.init_uniform(p, rng);
        self.action_encoder.init_uniform(p, rng);
        let bound = 1.0 / (self.key_dim as f64).sqrt();
        for v in self.w_mut(p) {
            *v = rng.random_range(-bound..=bound);
        }
    }

    fn w<'a>(&self, p: &'a ParamVector) -> &'a [f64] {
        &p.values()[self.w_offset..self.w_offset + self.query_dim * self.key_dim]
    }

    fn w_mut<'a>(&self, p: &'a mut ParamVector) -> &'a mut [f64] {
        &mut p.values_mut()[self.w_offset..self.w_offset + self.query_dim * self.key_dim]
    }

    pub fn encode_action(&self, p: &ParamVector, a: &[f64]) -> Result<Vec<f64>> {
        self.action_encoder.forward(p, a)
    }

    /// `‖I_φ(h(o_t), h(o_{t+1})) − a_t‖²` for one transition.
    pub fn inverse_loss(
        &self,
        told: &Told,
        p: &ParamVector,
        o_t: &[f64],
        o_next: &[f64],
        a_t: &[f64],
    ) -> Result<LossGrad> {
        check_dim("action", told.action_dim(), a_t.len())?;
        let mut grad = p.zeros_like();
        let loss = self.inverse_step(
            told,
            p,
            &Matrix::row_vector(o_t),
            &Matrix::row_vector(o_next),
            &Matrix::row_vector(a_t),
            1.0,
            &mut grad,
        )?;
        Ok(LossGrad { loss, grad })
    }

    /// Inverse-model objective summed over trajectory steps and averaged
    /// over the batch. Gradient touches the inverse model and online encoder.
    pub fn inverse_objective(&self, told: &Told, p: &ParamVector, batch: &TrajectoryBatch) -> Result<LossGrad> {
        let b = batch.batch_size() as f64;
        let mut grad = p.zeros_like();
        let mut loss = 0.0;
        for j in 0..batch.horizon() {
            loss += self.inverse_step(
                told,
                p,
                &batch.obs[j],
                &batch.obs[j + 1],
                &batch.actions[j],
                1.0 / b,
                &mut grad,
            )?;
        }
        Ok(LossGrad { loss, grad })
    }

    /// Returns `weight · Σ_rows loss`, accumulating its gradient.
    #[allow(clippy::too_many_arguments)]
    fn inverse_step(
        &self,
        told: &Told,
        p: &ParamVector,
        o_t: &Matrix,
        o_next: &Matrix,
        a_t: &Matrix,
        weight: f64,
        grad: &mut ParamVector,
    ) -> Result<f64> {
        let (z, zc) = told.encoder.forward_cached(p, o_t)?;
        let (zn, znc) = told.encoder.forward_cached(p, o_next)?;
        let (a_hat, ic) = self.inverse.forward_cached(p, &z.hcat(&zn)?)?;
        check_dim("inverse model output", a_t.cols(), a_hat.cols())?;
        let mut d = a_hat.clone();
        let mut loss = 0.0;
        for (g, a) in d.as_mut_slice().iter_mut().zip(a_t.as_slice()) {
            let diff = *g - a;
            loss += diff * diff;
            *g = weight * 2.0 * diff;
        }
        let d_in = self.inverse.backward(p, &ic, &d, Some(grad))?;
        let (dz, dzn) = d_in.split_cols(told.latent_dim());
        told.encoder.backward(p, &zc, &dz, Some(grad))?;
        told.encoder.backward(p, &znc, &dzn, Some(grad))?;
        Ok(weight * loss)
    }

    /// Raw forward-model errors `‖d(h(o_t), a_t) − h̄(o_{t+1})‖²` per row.
    pub fn forward_errors(
        &self,
        told: &Told,
        p: &ParamVector,
        o_t: &Matrix,
        a_t: &Matrix,
        o_next: &Matrix,
    ) -> Result<Vec<f64>> {
        let z = told.encode_batch(p, o_t)?;
        let zhat = told.dynamics_batch(p, &z.hcat(a_t)?)?;
        let z_next = told.target_encoder.forward_batch(p, o_next)?;
        Ok(zhat.row_sq_dist(&z_next))
    }

    /// Temporal InfoNCE over a batch of `(o_t, a_t, o_{t+1})`.
    ///
    /// Query `c(h(o_t), g(a_t))`, key `h̄(o_{t+1})`, logits `q_i^T W k_j`;
    /// the other rows' keys act as negatives. Gradient touches the online
    /// encoder, action encoder and `W`.
    pub fn temporal_contrastive_loss(
        &self,
        told: &Told,
        p: &ParamVector,
        o_t: &Matrix,
        a_t: &Matrix,
        o_next: &Matrix,
    ) -> Result<LossGrad> {
        let n = o_t.rows();
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "contrastive loss needs at least 2 samples for negatives, got {n}"
            )));
        }
        let (z, zc) = told.encoder.forward_cached(p, o_t)?;
        let (u, uc) = self.action_encoder.forward_cached(p, a_t)?;
        let q = z.hcat(&u)?;
        let keys = told.target_encoder.forward_batch(p, o_next)?;
        let w = self.w(p);
        let (qd, kd) = (self.query_dim, self.key_dim);

        // qw = Q W  (n × kd)
        let mut qw = Matrix::zeros(n, kd);
        for i in 0..n {
            let qi = q.row(i);
            let out = qw.row_mut(i);
            for (a, &qa) in qi.iter().enumerate() {
                crate::nn::matrix::axpy(qa, &w[a * kd..(a + 1) * kd], out);
            }
        }
        let mut logits = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                logits.set(i, j, crate::nn::matrix::dot(qw.row(i), keys.row(j)));
            }
        }
        let (loss, d_logits) = info_nce(&logits);
        if !loss.is_finite() {
            return Err(Error::NonFinite("temporal contrastive loss".into()));
        }

        // gk = G K (n × kd); dW = Q^T gk; dQ = gk W^T
        let mut gk = Matrix::zeros(n, kd);
        for i in 0..n {
            let out = gk.row_mut(i);
            for j in 0..n {
                let g = d_logits.get(i, j);
                if g != 0.0 {
                    crate::nn::matrix::axpy(g, keys.row(j), out);
                }
            }
        }
        let mut grad = p.zeros_like();
        {
            let dw = &mut grad.values_mut()[self.w_offset..self.w_offset + qd * kd];
            for i in 0..n {
                for (a, &qa) in q.row(i).iter().enumerate() {
                    crate::nn::matrix::axpy(qa, gk.row(i), &mut dw[a * kd..(a + 1) * kd]);
                }
            }
        }
        let mut dq = Matrix::zeros(n, qd);
        for i in 0..n {
            let gi = gk.row(i);
            for (a, out) in dq.row_mut(i).iter_mut().enumerate() {
                *out = crate::nn::matrix::dot(&w[a * kd..(a + 1) * kd], gi);
            }
        }
        let (dz, du) = dq.split_cols(told.latent_dim());
        told.encoder.backward(p, &zc, &dz, Some(&mut grad))?;
        self.action_encoder.backward(p, &uc, &du, Some(&mut grad))?;
        Ok(LossGrad { loss, grad })
    }
}

/// Mean over rows of `−log softmax(logits_i)_i` and its gradient.
pub fn info_nce(logits: &Matrix) -> (f64, Matrix) {
    let n = logits.rows();
    let mut grad = Matrix::zeros(n, logits.cols());
    let mut loss = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[i];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            let soft = (row[j] - lse).exp();
            *g = (soft - if i == j { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// How the maximum intrinsic reward `r_i_max` is tracked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxTracking {
    /// Maximum raw error of the batch being scored.
    #[default]
    Batch,
    /// Largest raw error seen over the whole run.
    Running,
}

/// Intrinsic reward scale and the maxima used to normalise it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicConfig {
    /// Intrinsic weight `C`.
    pub weight: f64,
    /// Decay rate `α` per environment step.
    pub decay: f64,
    pub tracking: MaxTracking,
    /// Largest absolute extrinsic reward seen, starting at 1.
    pub extrinsic_max: f64,
    /// Current `r_i_max`; 0 until the first observation.
    pub intrinsic_max: f64,
}

impl IntrinsicConfig {
    pub fn new(weight: f64, decay: f64) -> Self {
        Self {
            weight,
            decay,
            tracking: MaxTracking::Batch,
            extrinsic_max: 1.0,
            intrinsic_max: 0.0,
        }
    }

    pub fn with_tracking(mut self, tracking: MaxTracking) -> Self {
        self.tracking = tracking;
        self
    }

    pub fn observe_extrinsic(&mut self, rewards: &[f64]) {
        for r in rewards {
            self.extrinsic_max = self.extrinsic_max.max(r.abs());
        }
    }

    /// Updates `r_i_max` from a batch of raw errors according to the tracking mode.
    pub fn observe_intrinsic(&mut self, raw_errors: &[f64]) {
        if self.tracking == MaxTracking::Batch {
            self.intrinsic_max = 0.0;
        }
        for e in raw_errors {
            if e.is_finite() {
                self.intrinsic_max = self.intrinsic_max.max(*e);
            }
        }
    }

    /// `C · e^{−α E} · error · (r_e_max / r_i_max)` at the current maxima.
    pub fn scale(&self, raw_error: f64, env_step: u64) -> f64 {
        if self.intrinsic_max <= 0.0 {
            return 0.0;
        }
        self.weight * (-self.decay * env_step as f64).exp() * raw_error * (self.extrinsic_max / self.intrinsic_max)
    }

    /// Updates `r_i_max` with `raw_errors`, then scales each.
    pub fn rewards(&mut self, raw_errors: &[f64], env_step: u64) -> Vec<f64> {
        self.observe_intrinsic(raw_errors);
        raw_errors.iter().map(|&e| self.scale(e, env_step)).collect()
    }
}

/// Intrinsic reward for one transition from its latent `z_t`, action and
/// true next latent, at the maxima currently held by `cfg`.
pub fn intrinsic_reward(
    told: &Told,
    p: &ParamVector,
    cfg: &IntrinsicConfig,
    z_t: &[f64],
    a_t: &[f64],
    z_next: &[f64],
    env_step: u64,
) -> Result<f64> {
    let z_hat = told.dynamics_step(p, z_t, a_t)?;
    check_dim("next latent", z_hat.len(), z_next.len())?;
    let err: f64 = z_hat.iter().zip(z_next).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(cfg.scale(err, env_step))
}

/// Query vector `c(z, u)` used by the contrastive loss.
pub fn contrastive_query(icm: &Icm, p: &ParamVector, z: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    Ok(concat(z, &icm.encode_action(p, a)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_nce_uniform_logits_is_log_n() {
        for n in [2usize, 16, 256] {
            let (loss, _) = info_nce(&Matrix::zeros(n, n));
            assert!((loss - (n as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn info_nce_two_way_hand_value() {
        // Row 0: positive 2, negative 0; row 1 identical by symmetry.
        let logits = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let (loss, _) = info_nce(&logits);
        let expected = -(2f64.exp() / (2f64.exp() + 1.0)).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn intrinsic_arithmetic() {
        let mut cfg = IntrinsicConfig::new(0.2, 0.0);
        cfg.intrinsic_max = 2.0;
        assert!((cfg.scale(2.0, 12345) - 0.2).abs() < 1e-15);
        let mut cfg = IntrinsicConfig::new(1.0, 1e-5);
        cfg.intrinsic_max = 1.0;
        assert!((cfg.scale(1.0, 100_000) - (-1f64).exp()).abs() < 1e-15);
        assert!((cfg.scale(1.0, 100_000) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn running_maxima() {
        let mut cfg = IntrinsicConfig::new(1.0, 0.0).with_tracking(MaxTracking::Running);
        assert_eq!(cfg.scale(0.5, 0), 0.0);
        cfg.observe_extrinsic(&[0.0, -0.5]);
        cfg.observe_intrinsic(&[0.25]);
        assert_eq!((cfg.extrinsic_max, cfg.intrinsic_max), (1.0, 0.25));
        // the largest error in a batch earns exactly C * r_e_max
        assert_eq!(cfg.rewards(&[0.1, 0.25], 0)[1], 1.0);
        cfg.observe_extrinsic(&[-4.0]);
        cfg.observe_intrinsic(&[3.0, f64::NAN]);
        assert_eq!((cfg.extrinsic_max, cfg.intrinsic_max), (4.0, 3.0));
    }

    #[test]
    fn batch_maximum_resets_each_batch() {
        let mut cfg = IntrinsicConfig::new(0.5, 0.0);
        assert_eq!(cfg.rewards(&[2.0, 8.0], 0), vec![0.125, 0.5]);
        assert_eq!(cfg.rewards(&[0.01, 0.02], 0), vec![0.25, 0.5]);
    }
}
