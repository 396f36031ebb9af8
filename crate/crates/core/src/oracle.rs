//! Forward-only reference losses for finite-difference checking.
//!
//! Each function takes two parameter vectors: `p` is the point being
//! differentiated and `frozen` supplies every quantity the analytic code
//! treats as a constant (TD targets, target-encoder outputs, the detached
//! latent of the policy term). Central differences of these functions in `p`
//! must therefore equal the analytic gradients, including exact zeros on
//! stop-gradient paths.

use crate::curiosity::{info_nce, Icm};
use crate::error::Result;
use crate::nn::{Matrix, Mlp, ParamVector};
use crate::replay::TrajectoryBatch;
use crate::told::{LossWeights, Told};

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

fn scalar(net: &Mlp, p: &ParamVector, x: &[f64]) -> Result<f64> {
    Ok(net.forward(p, x)?[0])
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `r + γ · Q̄(z', π(z'))` under `frozen`, using the first target head.
fn td_target(told: &Told, frozen: &ParamVector, r: f64, z_next: &[f64], gamma: f64) -> Result<f64> {
    let pi = told.policy.forward(frozen, z_next)?;
    let mut q = f64::INFINITY;
    for t in &told.target_q {
        q = q.min(scalar(t, frozen, &concat(z_next, &pi))?);
    }
    Ok(r + gamma * q)
}

fn q_term(told: &Told, p: &ParamVector, za: &[f64], y: f64) -> Result<f64> {
    let mut l = 0.0;
    for h in &told.q {
        l += (scalar(h, p, za)? - y).powi(2);
    }
    Ok(l)
}

/// `−min_h Q_h(z, π(z))` with `Q` taken from `frozen` and `π` from `p`.
fn policy_term(told: &Told, p: &ParamVector, frozen: &ParamVector, z: &[f64]) -> Result<f64> {
    let pi = told.policy.forward(p, z)?;
    let mut q = f64::INFINITY;
    for h in &told.q {
        q = q.min(scalar(h, frozen, &concat(z, &pi))?);
    }
    Ok(-q)
}

#[allow(clippy::too_many_arguments)]
pub fn q_loss(
    told: &Told,
    p: &ParamVector,
    frozen: &ParamVector,
    z_t: &[f64],
    a_t: &[f64],
    r_e: f64,
    r_i: f64,
    z_next: &[f64],
    gamma: f64,
) -> Result<f64> {
    let y = td_target(told, frozen, r_e + r_i, z_next, gamma)?;
    q_term(told, p, &concat(z_t, a_t), y)
}

pub fn policy_loss(told: &Told, p: &ParamVector, frozen: &ParamVector, z_t: &[f64]) -> Result<f64> {
    policy_term(told, p, frozen, z_t)
}

pub fn reward_loss(told: &Told, p: &ParamVector, z_t: &[f64], a_t: &[f64], r_e: f64) -> Result<f64> {
    Ok((scalar(&told.reward, p, &concat(z_t, a_t))? - r_e).powi(2))
}

pub fn consistency_loss(
    told: &Told,
    p: &ParamVector,
    frozen: &ParamVector,
    z_t: &[f64],
    a_t: &[f64],
    o_next: &[f64],
) -> Result<f64> {
    let target = told.target_encoder.forward(frozen, o_next)?;
    let zhat = told.dynamics.forward(p, &concat(z_t, a_t))?;
    Ok(sq_dist(&zhat, &target))
}

/// The temporally weighted objective, one sample at a time.
pub fn told_objective(
    told: &Told,
    p: &ParamVector,
    frozen: &ParamVector,
    batch: &TrajectoryBatch,
    intrinsic: &[Vec<f64>],
    w: &LossWeights,
) -> Result<f64> {
    let (k, b) = (batch.horizon(), batch.batch_size());
    let mut total = 0.0;
    for i in 0..b {
        let mut z = told.encoder.forward(p, batch.obs[0].row(i))?;
        let mut z_detached = told.encoder.forward(frozen, batch.obs[0].row(i))?;
        for j in 0..k {
            let a = batch.actions[j].row(i);
            let o_next = batch.obs[j + 1].row(i);
            let r_e = batch.rewards[j][i];
            let za = concat(&z, a);
            let z_next_enc = told.encoder.forward(frozen, o_next)?;
            let y = td_target(told, frozen, r_e + intrinsic[j][i], &z_next_enc, w.gamma)?;
            let lq = q_term(told, p, &za, y)?;
            let lr = (scalar(&told.reward, p, &za)? - r_e).powi(2);
            let zhat = told.dynamics.forward(p, &za)?;
            let lc = sq_dist(&zhat, &told.target_encoder.forward(frozen, o_next)?);
            let lp = policy_term(told, p, frozen, &z_detached)?;
            total += w.lambda.powi(j as i32) * (w.c1 * lq + w.c2 * lr + w.c3 * lc + lp);
            z = zhat;
            z_detached = told.dynamics.forward(frozen, &concat(&z_detached, a))?;
        }
    }
    Ok(total / b as f64)
}

pub fn inverse_loss(icm: &Icm, told: &Told, p: &ParamVector, o_t: &[f64], o_next: &[f64], a_t: &[f64]) -> Result<f64> {
    let z = told.encoder.forward(p, o_t)?;
    let zn = told.encoder.forward(p, o_next)?;
    let a_hat = icm.inverse.forward(p, &concat(&z, &zn))?;
    Ok(sq_dist(&a_hat, a_t))
}

/// Inverse loss summed over steps, averaged over the batch.
pub fn inverse_objective(icm: &Icm, told: &Told, p: &ParamVector, batch: &TrajectoryBatch) -> Result<f64> {
    let b = batch.batch_size();
    let mut total = 0.0;
    for j in 0..batch.horizon() {
        for i in 0..b {
            total += inverse_loss(
                icm,
                told,
                p,
                batch.obs[j].row(i),
                batch.obs[j + 1].row(i),
                batch.actions[j].row(i),
            )?;
        }
    }
    Ok(total / b as f64)
}

/// InfoNCE with bilinear logits; keys come from the frozen target encoder.
pub fn temporal_contrastive_loss(
    icm: &Icm,
    told: &Told,
    p: &ParamVector,
    frozen: &ParamVector,
    o_t: &Matrix,
    a_t: &Matrix,
    o_next: &Matrix,
) -> Result<f64> {
    let n = o_t.rows();
    let w = p.segment(crate::curiosity::CONTRASTIVE_SEGMENT)?;
    let kd = told.latent_dim();
    let mut queries = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for i in 0..n {
        let z = told.encoder.forward(p, o_t.row(i))?;
        let u = icm.action_encoder.forward(p, a_t.row(i))?;
        queries.push(concat(&z, &u));
        keys.push(told.target_encoder.forward(frozen, o_next.row(i))?);
    }
    let mut logits = Matrix::zeros(n, n);
    for (i, q) in queries.iter().enumerate() {
        for (j, k) in keys.iter().enumerate() {
            let mut s = 0.0;
            for (a, qa) in q.iter().enumerate() {
                for (c, kc) in k.iter().enumerate() {
                    s += qa * w[a * kd + c] * kc;
                }
            }
            logits.set(i, j, s);
        }
    }
    Ok(info_nce(&logits).0)
}
