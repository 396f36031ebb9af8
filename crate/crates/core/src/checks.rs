//! Self-check suites: finite-difference gradients, stop-gradient contracts,
//! closed-form identities and planner-versus-grid-oracle benchmarks.
//!
//! Every suite returns a serialisable report so the CLI can write it out
//! and the test suites can assert on it.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::curiosity::{info_nce, intrinsic_reward, IntrinsicConfig};
use crate::error::Result;
use crate::model::{AgentModel, ModelDims};
use crate::nn::{ema_update, finite_diff_check, FdOptions, Layout, Matrix, ParamVector};
use crate::oracle;
use crate::planner::{cem, score_sequence, CemConfig, FnScorer, LatentModel, PlanDistribution, Scoring};
use crate::replay::TrajectoryBatch;
use crate::told::LossWeights;

/// Losses covered by the gradient and stop-gradient suites.
pub const LOSSES: [&str; 8] = [
    "inverse",
    "q",
    "policy",
    "reward",
    "consistency",
    "told-objective",
    "inverse-objective",
    "contrastive",
];

// ----- random instances ---------------------------------------------------

struct Instance {
    model: AgentModel,
    params: ParamVector,
    batch: TrajectoryBatch,
    intrinsic: Vec<Vec<f64>>,
    weights: LossWeights,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, uniform(rng, rows * cols)).expect("sized")
}

/// A small model whose targets differ from the online networks, plus a
/// random 3-step batch of 3 trajectories.
fn instance(rng: &mut ChaCha8Rng, twin_q: bool) -> Result<Instance> {
    let dims = ModelDims {
        obs_dim: 3,
        action_dim: 2,
        latent_dim: 4,
        encoder_hidden: vec![5],
        head_hidden: vec![5],
        inverse_hidden: vec![4],
        action_encoder_hidden: vec![4],
        action_latent_dim: 3,
        twin_q,
    };
    let model = AgentModel::new(dims)?;
    let mut params = model.init_params(rng)?;
    let noise = Normal::new(0.0, 0.3).expect("valid std");
    for v in params.values_mut() {
        *v += noise.sample(rng);
    }
    let (b, k) = (3, 3);
    let batch = TrajectoryBatch {
        obs: (0..=k).map(|_| uniform_matrix(rng, b, 3)).collect(),
        actions: (0..k).map(|_| uniform_matrix(rng, b, 2)).collect(),
        rewards: (0..k).map(|_| uniform(rng, b)).collect(),
    };
    let intrinsic = (0..k).map(|_| uniform(rng, b).iter().map(|v| v.abs()).collect()).collect();
    let weights = LossWeights {
        lambda: rng.random_range(0.3..1.0),
        c1: rng.random_range(0.1..1.0),
        c2: rng.random_range(0.1..1.0),
        c3: rng.random_range(0.1..2.0),
        gamma: rng.random_range(0.5..0.99),
    };
    Ok(Instance {
        model,
        params,
        batch,
        intrinsic,
        weights,
    })
}

/// Analytic loss gradient of `loss` on `inst`, and the matching reference
/// loss as a function of the variable parameters.
#[allow(clippy::type_complexity)]
fn loss_pair<'a>(inst: &'a Instance, loss: &str) -> Result<(ParamVector, Box<dyn Fn(&ParamVector) -> f64 + 'a>)> {
    let (told, icm, p) = (&inst.model.told, &inst.model.icm, &inst.params);
    let b = &inst.batch;
    let o0 = b.obs[0].row(0);
    let o1 = b.obs[1].row(0);
    let a0 = b.actions[0].row(0);
    let r0 = b.rewards[0][0];
    let ri = inst.intrinsic[0][0];
    let gamma = inst.weights.gamma;
    // Single-step losses take latents directly; use encodings of the batch.
    let z0 = told.encode(p, o0)?;
    let z1 = told.encode(p, o1)?;
    Ok(match loss {
        "inverse" => (
            icm.inverse_loss(told, p, o0, o1, a0)?.grad,
            Box::new(move |v| oracle::inverse_loss(icm, told, v, o0, o1, a0).unwrap()),
        ),
        "q" => (
            told.q_loss(p, &z0, a0, r0, ri, &z1, gamma)?.grad,
            Box::new(move |v| oracle::q_loss(told, v, p, &z0, a0, r0, ri, &z1, gamma).unwrap()),
        ),
        "policy" => (
            told.policy_loss(p, &z0)?.grad,
            Box::new(move |v| oracle::policy_loss(told, v, p, &z0).unwrap()),
        ),
        "reward" => (
            told.reward_loss(p, &z0, a0, r0)?.grad,
            Box::new(move |v| oracle::reward_loss(told, v, &z0, a0, r0).unwrap()),
        ),
        "consistency" => (
            told.consistency_loss(p, &z0, a0, o1)?.grad,
            Box::new(move |v| oracle::consistency_loss(told, v, p, &z0, a0, o1).unwrap()),
        ),
        "told-objective" => (
            told.told_objective(p, b, &inst.intrinsic, &inst.weights)?.grad,
            Box::new(move |v| oracle::told_objective(told, v, p, b, &inst.intrinsic, &inst.weights).unwrap()),
        ),
        "inverse-objective" => (
            icm.inverse_objective(told, p, b)?.grad,
            Box::new(move |v| oracle::inverse_objective(icm, told, v, b).unwrap()),
        ),
        "contrastive" => (
            icm.temporal_contrastive_loss(told, p, &b.obs[0], &b.actions[0], &b.obs[1])?.grad,
            Box::new(move |v| oracle::temporal_contrastive_loss(icm, told, v, p, &b.obs[0], &b.actions[0], &b.obs[1]).unwrap()),
        ),
        other => panic!("unknown loss `{other}`"),
    })
}

// ----- gradient suite -----------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GradientResult {
    pub loss: String,
    pub instances: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Central differences of each reference loss against the analytic
/// gradient, over every parameter of `instances` random small models.
pub fn gradient_suite(instances: usize, seed: u64, opts: FdOptions) -> Result<Vec<GradientResult>> {
    let mut out = Vec::new();
    for (li, loss) in LOSSES.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(li as u64 * 7919));
        let mut res = GradientResult {
            loss: loss.to_string(),
            instances,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            passed: true,
        };
        for n in 0..instances {
            let inst = instance(&mut rng, n % 2 == 1)?;
            let (analytic, reference) = loss_pair(&inst, loss)?;
            let layout = inst.params.layout().clone();
            let report = finite_diff_check(
                |v| reference(&ParamVector::from_values(layout.clone(), v.to_vec()).expect("same layout")),
                inst.params.values(),
                analytic.values(),
                opts,
            );
            res.max_rel_error = res.max_rel_error.max(report.max_rel_error);
            res.max_abs_error = res.max_abs_error.max(report.max_abs_error);
            res.passed &= report.passed;
        }
        out.push(res);
    }
    Ok(out)
}

// ----- stop-gradient suite ------------------------------------------------

/// Network groups that may receive gradient from each loss.
pub fn allowed_groups(loss: &str) -> &'static [&'static str] {
    match loss {
        "inverse" | "inverse-objective" => &["inverse", "encoder"],
        "q" => &["q0", "q1"],
        "policy" => &["policy"],
        "reward" => &["reward"],
        "consistency" => &["dynamics"],
        "told-objective" => &["encoder", "dynamics", "reward", "q0", "q1", "policy"],
        "contrastive" => &["encoder", "action_encoder", "contrastive"],
        other => panic!("unknown loss `{other}`"),
    }
}

/// Groups (segment-name prefixes) with at least one non-zero gradient entry.
pub fn touched_groups(grad: &ParamVector, layout: &Layout) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for seg in layout.segments() {
        if grad.values()[seg.range()].iter().any(|&g| g != 0.0) {
            let group = seg.name.split('.').next().unwrap_or(&seg.name);
            out.insert(group.to_owned());
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct StopGradientReport {
    pub trials: usize,
    pub checks: usize,
    /// `loss: group` pairs that received gradient they must not.
    pub violations: Vec<String>,
    pub passed: bool,
}

/// Checks that each loss's gradient is exactly zero outside its allowed
/// groups; in particular target networks never receive gradient.
pub fn stop_gradient_suite(trials: usize, seed: u64) -> Result<StopGradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut checks = 0;
    for n in 0..trials {
        let inst = instance(&mut rng, n % 2 == 1)?;
        let layout = inst.params.layout().clone();
        for loss in LOSSES {
            let (grad, _) = loss_pair(&inst, loss)?;
            checks += 1;
            let allowed = allowed_groups(loss);
            for g in touched_groups(&grad, &layout) {
                if !allowed.contains(&g.as_str()) {
                    violations.push(format!("trial {n}: {loss}: {g}"));
                }
            }
        }
    }
    Ok(StopGradientReport {
        trials,
        checks,
        passed: violations.is_empty(),
        violations,
    })
}

// ----- closed-form identities ---------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn identity(name: &str, passed: bool, detail: String) -> IdentityResult {
    IdentityResult {
        name: name.to_owned(),
        passed,
        detail,
    }
}

/// Intrinsic reward law on a random model: zero at exact prediction, the
/// `e` ratio between `E = 0` and `E = 1/α`, and linearity in `C` and in the
/// normaliser ratio.
pub fn intrinsic_identities(seed: u64) -> Result<Vec<IdentityResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = instance(&mut rng, false)?;
    let (told, p) = (&inst.model.told, &inst.params);
    let z = uniform(&mut rng, told.latent_dim());
    let a = uniform(&mut rng, told.action_dim());
    let exact = told.dynamics_step(p, &z, &a)?;
    let off: Vec<f64> = exact.iter().map(|v| v + 0.3).collect();
    let alpha = 1e-5;
    let mut cfg = IntrinsicConfig::new(0.3, alpha);
    cfg.intrinsic_max = 0.7;
    cfg.extrinsic_max = 2.0;
    let r = |c: &IntrinsicConfig, step| intrinsic_reward(told, p, c, &z, &a, &off, step);

    let zero = intrinsic_reward(told, p, &cfg, &z, &a, &exact, 123)?;
    let ratio = r(&cfg, 0)? / r(&cfg, (1.0 / alpha).round() as u64)?;
    let base = r(&cfg, 500)?;
    let mut c3 = cfg;
    c3.weight *= 3.0;
    let mut norm = cfg;
    norm.extrinsic_max *= 2.0;
    norm.intrinsic_max /= 2.0;
    let lin_c = r(&c3, 500)? / base;
    let lin_n = r(&norm, 500)? / base;
    let tol = 1e-9;
    Ok(vec![
        identity("intrinsic zero at exact prediction", zero.abs() < tol, format!("r_i = {zero:e}")),
        identity(
            "intrinsic ratio r(0)/r(1/alpha) = e",
            (ratio - std::f64::consts::E).abs() < tol,
            format!("ratio = {ratio:.15}"),
        ),
        identity("intrinsic linear in C", (lin_c - 3.0).abs() < tol, format!("x3 weight gives x{lin_c:.15}")),
        identity(
            "intrinsic linear in normaliser ratio",
            (lin_n - 4.0).abs() < tol,
            format!("x4 ratio gives x{lin_n:.15}"),
        ),
    ])
}

/// InfoNCE: `ln N` under uniform logits and monotone decrease in the
/// positive logit.
pub fn info_nce_identities(seed: u64) -> Vec<IdentityResult> {
    let mut out = Vec::new();
    for n in [2usize, 16, 256] {
        let logits = Matrix::from_vec(n, n, vec![0.37; n * n]).expect("sized");
        let (loss, _) = info_nce(&logits);
        let err = (loss - (n as f64).ln()).abs();
        out.push(identity(&format!("info-nce uniform N={n}"), err < 1e-6, format!("|loss - ln N| = {err:e}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 8;
    let mut logits = uniform_matrix(&mut rng, n, n);
    let mut prev = info_nce(&logits).0;
    let mut monotone = true;
    for _ in 0..50 {
        for i in 0..n {
            logits.set(i, i, logits.get(i, i) + 0.1);
        }
        let l = info_nce(&logits).0;
        monotone &= l < prev;
        prev = l;
    }
    out.push(identity(
        "info-nce decreases in the positive logit",
        monotone,
        format!("final loss {prev:e}"),
    ));
    out
}

/// EMA is exactly `(1 − ζ) θ̄ + ζ θ` for `ζ ∈ {0, 0.01, 1}`.
pub fn ema_identities(seed: u64) -> Result<Vec<IdentityResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layout = Layout::new();
    layout.push("w", &[64])?;
    let layout = std::sync::Arc::new(layout);
    let target = ParamVector::from_values(layout.clone(), uniform(&mut rng, 64))?;
    let online = ParamVector::from_values(layout, uniform(&mut rng, 64))?;
    let mut out = Vec::new();
    for zeta in [0.0, 0.01, 1.0] {
        let mut t = target.clone();
        ema_update(&mut t, &online, zeta)?;
        let exact = t
            .values()
            .iter()
            .zip(target.values().iter().zip(online.values()))
            .all(|(&new, (&old, &on))| new == (1.0 - zeta) * old + zeta * on);
        let endpoint = match zeta {
            0.0 => t.values() == target.values(),
            1.0 => t.values() == online.values(),
            _ => true,
        };
        out.push(identity(&format!("ema zeta={zeta}"), exact && endpoint, String::new()));
    }
    Ok(out)
}

/// Scoring structure on a random TOLD model: value-sum and the curiosity
/// value-sum agree bitwise, and with `γ = 0` every variant is its first term.
pub fn scoring_identities(seed: u64, trials: usize) -> Result<Vec<IdentityResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bitwise = true;
    let mut single = true;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inst = instance(&mut rng, false)?;
        let snap = crate::planner::ToldSnapshot {
            told: &inst.model.told,
            params: &inst.params,
        };
        let z0 = uniform(&mut rng, snap.latent_dim());
        let seq = uniform_matrix(&mut rng, 4, snap.action_dim());
        let g = rng.random_range(0.1..1.0);
        bitwise &= score_sequence(&snap, &z0, &seq, Scoring::ValueSum, g)?.to_bits()
            == score_sequence(&snap, &z0, &seq, Scoring::CuriosityValueSum, g)?.to_bits();
        let z = Matrix::row_vector(&z0);
        let a = Matrix::row_vector(seq.row(0));
        let r0 = snap.reward(&z, &a)?[0];
        let q0 = snap.value(&z, &a)?[0];
        for s in Scoring::ALL {
            let want = match s {
                Scoring::SumRewards | Scoring::RewardsPlusTerminal => r0,
                Scoring::ValueSum | Scoring::CuriosityValueSum => q0,
            };
            let got = score_sequence(&snap, &z0, &seq, s, 0.0)?;
            worst = worst.max((got - want).abs());
            single &= got == want;
        }
    }
    Ok(vec![
        identity("value-sum equals curiosity value-sum bitwise", bitwise, format!("{trials} trials")),
        identity(
            "zero discount reduces to single-step terms",
            single,
            format!("max deviation {worst:e}"),
        ),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheckReport {
    pub gradients: Vec<GradientResult>,
    pub stop_gradients: StopGradientReport,
    pub identities: Vec<IdentityResult>,
    pub passed: bool,
}

/// Everything `oracle-check` runs.
pub fn oracle_check(seed: u64, instances: usize) -> Result<OracleCheckReport> {
    let gradients = gradient_suite(instances, seed, FdOptions::default())?;
    let stop_gradients = stop_gradient_suite(instances.max(1) * 5, seed ^ 0x5eed)?;
    let mut identities = intrinsic_identities(seed)?;
    identities.extend(info_nce_identities(seed));
    identities.extend(ema_identities(seed)?);
    identities.extend(scoring_identities(seed, instances)?);
    let passed = gradients.iter().all(|g| g.passed) && stop_gradients.passed && identities.iter().all(|i| i.passed);
    Ok(OracleCheckReport {
        gradients,
        stop_gradients,
        identities,
        passed,
    })
}

// ----- planner benchmarks -------------------------------------------------

/// Linear latent model `z' = A z + B a` with Gaussian-bump reward and value
/// heads, so every score is positive and the optimum is well defined.
#[derive(Debug, Clone)]
pub struct ToyLinearModel {
    pub a: [[f64; 2]; 2],
    pub b: [[f64; 2]; 2],
    pub reward_goal: [f64; 2],
    pub value_goal: [f64; 2],
    pub value_scale: f64,
}

impl ToyLinearModel {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let th: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let s = rng.random_range(0.5..0.95);
        let mut u = || rng.random_range(-1.0..1.0);
        Self {
            a: [[s * th.cos(), -s * th.sin()], [s * th.sin(), s * th.cos()]],
            b: [[u(), u()], [u(), u()]],
            reward_goal: [u(), u()],
            value_goal: [u(), u()],
            value_scale: 1.0 + u().abs(),
        }
    }

    fn step(&self, z: &[f64], a: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.a[r][0] * z[0] + self.a[r][1] * z[1] + self.b[r][0] * a[0] + self.b[r][1] * a[1];
        }
        out
    }

    fn bump(p: &[f64; 2], goal: &[f64; 2]) -> f64 {
        (-((p[0] - goal[0]).powi(2) + (p[1] - goal[1]).powi(2))).exp()
    }
}

impl LatentModel for ToyLinearModel {
    fn latent_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        Ok(observation.to_vec())
    }

    fn next_latent(&self, z: &Matrix, a: &Matrix) -> Result<Matrix> {
        let rows: Vec<[f64; 2]> = (0..z.rows()).map(|i| self.step(z.row(i), a.row(i))).collect();
        Matrix::from_rows(&rows)
    }

    fn reward(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        Ok((0..z.rows())
            .map(|i| Self::bump(&self.step(z.row(i), a.row(i)), &self.reward_goal))
            .collect())
    }

    fn value(&self, z: &Matrix, a: &Matrix) -> Result<Vec<f64>> {
        Ok((0..z.rows())
            .map(|i| self.value_scale * Self::bump(&self.step(z.row(i), a.row(i)), &self.value_goal))
            .collect())
    }

    fn policy(&self, z: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(z.rows(), 2))
    }
}

/// Best score over all sequences whose entries lie on `grid`.
pub fn grid_search<F: FnMut(&[f64]) -> f64>(grid: &[f64], dims: usize, mut score: F) -> (f64, Vec<f64>) {
    let mut idx = vec![0usize; dims];
    let mut point = vec![grid[0]; dims];
    let mut best = (f64::NEG_INFINITY, point.clone());
    loop {
        for (p, &i) in point.iter_mut().zip(&idx) {
            *p = grid[i];
        }
        let s = score(&point);
        if s > best.0 {
            best = (s, point.clone());
        }
        let mut d = 0;
        loop {
            if d == dims {
                return best;
            }
            idx[d] += 1;
            if idx[d] < grid.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn linspace(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ArgmaxReport {
    pub trials: usize,
    pub within_tolerance: usize,
    pub max_linf: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Single-step planning on `−‖a − a*‖²` against a 101 × 101 grid argmax.
pub fn argmax_recovery(cem_cfg: &CemConfig, trials: usize, seed: u64) -> Result<ArgmaxReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CemConfig {
        horizon: 0,
        ..cem_cfg.clone()
    };
    let tolerance = 0.05;
    let grid = linspace(101);
    let mut max_linf = 0.0f64;
    let mut within = 0;
    for _ in 0..trials {
        let target = [rng.random_range(-0.9..=0.9), rng.random_range(-0.9..=0.9)];
        let f = move |a: &[f64]| -((a[0] - target[0]).powi(2) + (a[1] - target[1]).powi(2));
        let (_, best) = grid_search(&grid, 2, f);
        let scorer = FnScorer { action_dim: 2, f };
        let out = cem(&scorer, &cfg, PlanDistribution::standard(0, 2), 0.0, &mut rng)?;
        let linf = out.action.iter().zip(&best).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_linf = max_linf.max(linf);
        if linf <= tolerance {
            within += 1;
        }
    }
    Ok(ArgmaxReport {
        trials,
        within_tolerance: within,
        max_linf,
        tolerance,
        passed: within == trials,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoringGap {
    pub scoring: Scoring,
    pub trials: usize,
    /// Trials whose plan scores at least `ratio_threshold` of the grid optimum.
    pub near_optimal: usize,
    pub ratio_threshold: f64,
    pub mean_ratio: f64,
    pub min_ratio: f64,
    /// Mean of `grid optimum − plan score`; negative when the planner beats the grid.
    pub mean_gap: f64,
}

/// Two-step planning on random [`ToyLinearModel`]s, one row per scoring
/// variant, against exhaustive search over 5 points per action dimension.
pub fn multistep_gap(cem_cfg: &CemConfig, trials: usize, seed: u64) -> Result<Vec<ScoringGap>> {
    let grid = linspace(5);
    let horizon = 1;
    let ratio_threshold = 0.95;
    let mut out = Vec::new();
    for (si, scoring) in Scoring::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(si as u64 * 104_729));
        let cfg = CemConfig {
            horizon,
            scoring,
            ..cem_cfg.clone()
        };
        let mut ratios = Vec::with_capacity(trials);
        let mut gaps = Vec::with_capacity(trials);
        for _ in 0..trials {
            let model = ToyLinearModel::random(&mut rng);
            let z0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let score = |flat: &[f64]| {
                let seq = Matrix::from_vec(horizon + 1, 2, flat.to_vec()).expect("sized");
                score_sequence(&model, &z0, &seq, scoring, cfg.gamma).expect("toy model is total")
            };
            let (best, _) = grid_search(&grid, (horizon + 1) * 2, score);
            let plan = crate::planner::plan(&model, &cfg, &z0, None, 0.0, &mut rng)?;
            let mut seq = plan.dist.mean.clone();
            for v in seq.as_mut_slice() {
                *v = v.clamp(-1.0, 1.0);
            }
            let got = score_sequence(&model, &z0, &seq, scoring, cfg.gamma)?;
            ratios.push(got / best);
            gaps.push(best - got);
        }
        let n = trials as f64;
        out.push(ScoringGap {
            scoring,
            trials,
            near_optimal: ratios.iter().filter(|&&r| r >= ratio_threshold).count(),
            ratio_threshold,
            mean_ratio: ratios.iter().sum::<f64>() / n,
            min_ratio: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            mean_gap: gaps.iter().sum::<f64>() / n,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanBenchReport {
    pub argmax: ArgmaxReport,
    pub scoring: Vec<ScoringGap>,
}

/// Everything `plan-bench` runs.
pub fn plan_bench(cem_cfg: &CemConfig, trials: usize, seed: u64) -> Result<PlanBenchReport> {
    Ok(PlanBenchReport {
        argmax: argmax_recovery(cem_cfg, trials, seed)?,
        scoring: multistep_gap(cem_cfg, trials, seed ^ 0xbe7c)?,
    })
}
