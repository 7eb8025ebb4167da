//! Path-integral planning over imagined rollouts.
//!
//! [`critic_pi2_plan`] optimizes only the first action: every rollout applies
//! a perturbed first action, then follows the actor inside the learned model.
//! Rollouts are scored with the critic-bootstrapped or Monte Carlo return and
//! reweighted with normalized exponentiated costs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{monte_carlo_return, n_step_return, train_actor_imitation, Critic};
use crate::dynamics::{ActionPlan, DynamicsModel, Imagination, Rollout};
use crate::env::RewardModel;
use crate::error::{check_dim, Error, Result};
use crate::nn::GaussianPolicy;
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// n-step return bootstrapped with the critic at the last imagined state.
    CriticBootstrap,
    /// Discounted reward sum only.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    VanillaPi2,
    MpcRandomShooting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Rollouts per iteration.
    #[serde(rename = "K")]
    pub k: usize,
    /// Optimization iterations.
    #[serde(rename = "M")]
    pub m: usize,
    /// Imagination horizon in steps.
    #[serde(rename = "H")]
    pub h: usize,
    pub lambda: f64,
    /// Sampling std for the first action, as a fraction of the action half-range.
    pub sigma_plan: f64,
    pub return_mode: ReturnMode,
    pub greedy: bool,
    pub inner_actor_update: bool,
    /// Split each iteration's rollouts across the rayon pool.
    pub parallel: bool,
    /// Sequences drawn by random shooting; `None` means `K * M`.
    pub mpc_samples: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            k: 50,
            m: 10,
            h: 1,
            lambda: 0.3,
            sigma_plan: 0.3,
            return_mode: ReturnMode::CriticBootstrap,
            greedy: true,
            inner_actor_update: true,
            parallel: false,
            mpc_samples: None,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.k < 2 {
            return Err(format!("planner.K >= 2 violated (got {})", self.k));
        }
        if self.m < 1 {
            return Err("planner.M >= 1 violated (got 0)".into());
        }
        if self.h < 1 {
            return Err("planner.H >= 1 violated (got 0)".into());
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(format!("planner.lambda > 0 violated (got {})", self.lambda));
        }
        if !(self.sigma_plan >= 0.0) || !self.sigma_plan.is_finite() {
            return Err(format!("planner.sigma_plan >= 0 violated (got {})", self.sigma_plan));
        }
        if self.mpc_samples == Some(0) {
            return Err("planner.mpc_samples >= 1 violated (got 0)".into());
        }
        Ok(())
    }

    pub fn mpc_sample_count(&self) -> usize {
        self.mpc_samples.unwrap_or(self.k * self.m)
    }
}

/// Read-only models and constants shared by every planning call.
pub struct PlanContext<'a, T, R: ?Sized> {
    pub dynamics: &'a DynamicsModel<T>,
    pub critic: Option<&'a Critic<T>>,
    pub reward: &'a R,
    pub action_low: T,
    pub action_high: T,
    pub gamma: T,
    /// Reward assigned to imagined steps after the model produced non-finite output.
    pub divergence_reward: T,
    /// Step size of the inner imitation update.
    pub actor_lr: T,
}

impl<T: Copy, R: ?Sized> Clone for PlanContext<'_, T, R> {
    fn clone(&self) -> Self {
        Self { ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult<T> {
    pub expert_action: Vec<T>,
    pub estimated_return: T,
    pub iterations_used: usize,
    /// Running best return when greedy, otherwise each iteration's best sample.
    pub per_iteration_best: Vec<T>,
    /// The PI2 mean after the last iteration.
    pub final_mean: Vec<T>,
    /// Every rollout of an iteration diverged; the actor mean was returned.
    pub all_diverged: bool,
}

/// `S_i = (C_i - min C) / (max C - min C)`, or all zeros when the range is empty.
pub fn normalize_costs<T: Scalar>(costs: &[T]) -> Result<Vec<T>> {
    if costs.is_empty() {
        return Err(Error::Empty("costs"));
    }
    if !all_finite(costs) {
        return Err(Error::NonFinite("path costs"));
    }
    let lo = costs.iter().copied().fold(T::infinity(), T::min);
    let hi = costs.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if !(range > T::zero()) {
        return Ok(vec![T::zero(); costs.len()]);
    }
    Ok(costs.iter().map(|&c| (c - lo) / range).collect())
}

/// Softmax of `-S / lambda`, computed with max-subtraction.
pub fn pi2_weights<T: Scalar>(s: &[T], lambda: T) -> Vec<T> {
    let logits: Vec<T> = s.iter().map(|&v| -v / lambda).collect();
    let top = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - top).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Probability-weighted average of the candidate actions.
pub fn pi2_update<T: Scalar>(actions: &[Vec<T>], weights: &[T]) -> Result<Vec<T>> {
    check_dim(actions.len(), weights.len(), "pi2 weights")?;
    if actions.is_empty() {
        return Err(Error::Empty("pi2 candidates"));
    }
    let total: T = weights.iter().copied().sum();
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(8.0 * weights.len() as f64));
    if (total - T::one()).abs() > tol {
        return Err(Error::InvalidConfig(format!("pi2 weights sum to {total}, expected 1")));
    }
    let dim = actions[0].len();
    let mut mean = vec![T::zero(); dim];
    for (a, &w) in actions.iter().zip(weights) {
        check_dim(dim, a.len(), "pi2 candidate action")?;
        for (m, &v) in mean.iter_mut().zip(a) {
            *m += w * v;
        }
    }
    Ok(mean)
}

/// Return of one imagined rollout under the given scoring mode.
pub fn evaluate_rollout_return<T: Scalar>(
    rollout: &Rollout<T>,
    critic: Option<&Critic<T>>,
    mode: ReturnMode,
    gamma: T,
) -> Result<T> {
    let bootstrap = match (mode, critic) {
        (ReturnMode::CriticBootstrap, Some(c)) if rollout.bootstraps() => {
            c.value(rollout.observations.last().expect("non-empty"))?
        }
        _ => T::zero(),
    };
    score(rollout, bootstrap, mode, gamma)
}

fn score<T: Scalar>(rollout: &Rollout<T>, bootstrap: T, mode: ReturnMode, gamma: T) -> Result<T> {
    match mode {
        ReturnMode::CriticBootstrap => n_step_return(&rollout.rewards, bootstrap, gamma),
        ReturnMode::MonteCarlo => Ok(monte_carlo_return(&rollout.rewards, gamma)),
    }
}

/// [`evaluate_rollout_return`] for many rollouts with one batched critic pass.
pub fn evaluate_returns<T: Scalar>(
    rollouts: &[Rollout<T>],
    critic: Option<&Critic<T>>,
    mode: ReturnMode,
    gamma: T,
) -> Result<Vec<T>> {
    let mut boots = vec![T::zero(); rollouts.len()];
    if let (ReturnMode::CriticBootstrap, Some(c)) = (mode, critic) {
        let idx: Vec<usize> = (0..rollouts.len()).filter(|&i| rollouts[i].bootstraps()).collect();
        let last: Vec<&[T]> = idx
            .iter()
            .map(|&i| rollouts[i].observations.last().expect("non-empty").as_slice())
            .collect();
        for (&i, v) in idx.iter().zip(c.values(&last)?) {
            boots[i] = v;
        }
    }
    rollouts
        .iter()
        .zip(boots)
        .map(|(r, b)| score(r, b, mode, gamma))
        .collect()
}

fn rollout_stream(plan_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(plan_seed);
    rng.set_stream(index);
    rng
}

/// Runs `plan` with per-rollout streams, optionally in rayon chunks. The
/// result is identical either way because each rollout only reads its own stream.
fn run_rollouts<T, R>(
    imagination: &Imagination<'_, T, R>,
    obs: &[T],
    plan: &ActionPlan<'_, T>,
    horizon: usize,
    rngs: &mut [ChaCha8Rng],
    parallel: bool,
) -> Result<Vec<Rollout<T>>>
where
    T: Scalar,
    R: RewardModel<T> + ?Sized,
{
    let threads = rayon::current_num_threads();
    if !parallel || threads < 2 || rngs.len() < 2 {
        return imagination.rollouts(obs, plan, horizon, rngs);
    }
    let chunk = rngs.len().div_ceil(threads);
    let chunks: Vec<Result<Vec<Rollout<T>>>> = match plan {
        ActionPlan::FirstThenActor { first_actions, actor } => rngs
            .par_chunks_mut(chunk)
            .zip(first_actions.par_chunks(chunk))
            .map(|(r, f)| {
                let sub = ActionPlan::FirstThenActor { first_actions: f, actor };
                imagination.rollouts(obs, &sub, horizon, r)
            })
            .collect(),
        ActionPlan::Sequences { sequences, actor } => rngs
            .par_chunks_mut(chunk)
            .zip(sequences.par_chunks(chunk))
            .map(|(r, s)| {
                let sub = ActionPlan::Sequences { sequences: s, actor: *actor };
                imagination.rollouts(obs, &sub, horizon, r)
            })
            .collect(),
    };
    let mut out = Vec::with_capacity(rngs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

fn clip<T: Scalar>(a: &mut [T], lo: T, hi: T) {
    for v in a.iter_mut() {
        *v = v.max(lo).min(hi);
    }
}

/// Index of the largest value; the earliest wins ties.
fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Critic PI2: `M` rounds of sampling `K` first actions around the current
/// mean, imagining `H` steps with the actor, and reweighting.
///
/// With `greedy` on, the best first action seen in any round (including one
/// evaluation of the final mean) is returned; otherwise the final mean is.
/// With `inner_actor_update` on, `actor` takes one imitation step per round
/// toward that round's expert action, so it is mutated in place.
pub fn critic_pi2_plan<T, R, G>(
    obs: &[T],
    actor: &mut GaussianPolicy<T>,
    ctx: &PlanContext<'_, T, R>,
    cfg: &PlannerConfig,
    rng: &mut G,
) -> Result<PlanResult<T>>
where
    T: Scalar,
    R: RewardModel<T> + ?Sized,
    G: Rng + ?Sized,
{
    cfg.validate().map_err(Error::InvalidConfig)?;
    let dim = actor.action_dim();
    check_dim(ctx.dynamics.action_dim(), dim, "actor action")?;
    let imagination = Imagination {
        model: ctx.dynamics,
        reward: ctx.reward,
        action_low: ctx.action_low,
        action_high: ctx.action_high,
        divergence_reward: ctx.divergence_reward,
    };
    let half = T::lit(0.5) * (ctx.action_high - ctx.action_low);
    let sigma = T::lit(cfg.sigma_plan) * half;
    let plan_seed: u64 = rng.gen();
    let k = cfg.k;

    let mut mean = actor.mean(obs)?;
    clip(&mut mean, ctx.action_low, ctx.action_high);
    let mut best: Option<(T, Vec<T>)> = None;
    let mut per_iteration_best = Vec::with_capacity(cfg.m);

    for it in 0..cfg.m {
        let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|i| rollout_stream(plan_seed, (it * k + i) as u64)).collect();
        let firsts: Vec<Vec<T>> = rngs
            .iter_mut()
            .map(|r| {
                let mut a: Vec<T> = mean
                    .iter()
                    .map(|&m| {
                        let z: f64 = r.sample(StandardNormal);
                        m + sigma * T::lit(z)
                    })
                    .collect();
                clip(&mut a, ctx.action_low, ctx.action_high);
                a
            })
            .collect();
        let plan = ActionPlan::FirstThenActor {
            first_actions: &firsts,
            actor,
        };
        let rollouts = run_rollouts(&imagination, obs, &plan, cfg.h, &mut rngs, cfg.parallel)?;
        let returns = evaluate_returns(&rollouts, ctx.critic, cfg.return_mode, ctx.gamma)?;
        let top = argmax(&returns);

        if rollouts.iter().all(|r| r.diverged) {
            let mut fallback = actor.mean(obs)?;
            clip(&mut fallback, ctx.action_low, ctx.action_high);
            per_iteration_best.push(returns[top]);
            return Ok(PlanResult {
                expert_action: fallback,
                estimated_return: returns[top],
                iterations_used: it + 1,
                per_iteration_best,
                final_mean: mean,
                all_diverged: true,
            });
        }

        if best.as_ref().map_or(true, |(r, _)| returns[top] > *r) {
            best = Some((returns[top], firsts[top].clone()));
        }
        let costs: Vec<T> = returns.iter().map(|&r| -r).collect();
        let weights = pi2_weights(&normalize_costs(&costs)?, T::lit(cfg.lambda));
        mean = pi2_update(&firsts, &weights)?;
        clip(&mut mean, ctx.action_low, ctx.action_high);

        let (best_return, best_action) = best.as_ref().expect("set above");
        per_iteration_best.push(if cfg.greedy { *best_return } else { returns[top] });
        if cfg.inner_actor_update {
            let target = if cfg.greedy { best_action.clone() } else { mean.clone() };
            train_actor_imitation(actor, &[obs], &[&target], ctx.actor_lr)?;
        }
    }

    // score the final mean with its own stream so it can compete with the samples
    let mut rngs = vec![rollout_stream(plan_seed, (cfg.m * k) as u64)];
    let firsts = vec![mean.clone()];
    let plan = ActionPlan::FirstThenActor {
        first_actions: &firsts,
        actor,
    };
    let rollouts = imagination.rollouts(obs, &plan, cfg.h, &mut rngs)?;
    let mean_return = evaluate_returns(&rollouts, ctx.critic, cfg.return_mode, ctx.gamma)?[0];
    let (best_return, best_action) = best.expect("M >= 1");

    let (expert_action, estimated_return) = if !cfg.greedy || mean_return > best_return {
        (mean.clone(), mean_return)
    } else {
        (best_action, best_return)
    };
    Ok(PlanResult {
        expert_action,
        estimated_return,
        iterations_used: cfg.m,
        per_iteration_best,
        final_mean: mean,
        all_diverged: false,
    })
}

/// The model-based baselines.
///
/// `VanillaPi2` is the Critic PI2 loop with Monte Carlo scoring, no critic,
/// no greedy memory and no inner actor update (the actor is not modified).
/// `MpcRandomShooting` rolls out uniformly random open-loop sequences and
/// returns the first action of the best one.
pub fn baseline_plan<T, R, G>(
    obs: &[T],
    actor: &GaussianPolicy<T>,
    ctx: &PlanContext<'_, T, R>,
    cfg: &PlannerConfig,
    mode: BaselineMode,
    rng: &mut G,
) -> Result<PlanResult<T>>
where
    T: Scalar,
    R: RewardModel<T> + ?Sized,
    G: Rng + ?Sized,
{
    cfg.validate().map_err(Error::InvalidConfig)?;
    match mode {
        BaselineMode::VanillaPi2 => {
            let cfg = PlannerConfig {
                return_mode: ReturnMode::MonteCarlo,
                greedy: false,
                inner_actor_update: false,
                ..cfg.clone()
            };
            let ctx = PlanContext { critic: None, ..ctx.clone() };
            let mut actor = actor.clone();
            critic_pi2_plan(obs, &mut actor, &ctx, &cfg, rng)
        }
        BaselineMode::MpcRandomShooting => mpc_plan(obs, ctx, cfg, cfg.mpc_sample_count(), rng),
    }
}

/// Random shooting with `samples` uniform sequences of length `H`.
pub fn mpc_plan<T, R, G>(
    obs: &[T],
    ctx: &PlanContext<'_, T, R>,
    cfg: &PlannerConfig,
    samples: usize,
    rng: &mut G,
) -> Result<PlanResult<T>>
where
    T: Scalar,
    R: RewardModel<T> + ?Sized,
    G: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::InvalidConfig("random shooting needs at least one sample".into()));
    }
    let imagination = Imagination {
        model: ctx.dynamics,
        reward: ctx.reward,
        action_low: ctx.action_low,
        action_high: ctx.action_high,
        divergence_reward: ctx.divergence_reward,
    };
    let dim = ctx.dynamics.action_dim();
    let plan_seed: u64 = rng.gen();
    let (lo, hi) = (ctx.action_low.as_f64(), ctx.action_high.as_f64());
    let mut rngs: Vec<ChaCha8Rng> = (0..samples).map(|i| rollout_stream(plan_seed, i as u64)).collect();
    let sequences: Vec<Vec<Vec<T>>> = rngs
        .iter_mut()
        .map(|r| {
            (0..cfg.h)
                .map(|_| (0..dim).map(|_| T::lit(r.gen_range(lo..=hi))).collect())
                .collect()
        })
        .collect();
    let plan = ActionPlan::Sequences {
        sequences: &sequences,
        actor: None,
    };
    let rollouts = run_rollouts(&imagination, obs, &plan, cfg.h, &mut rngs, cfg.parallel)?;
    let returns = evaluate_returns(&rollouts, None, ReturnMode::MonteCarlo, ctx.gamma)?;
    let top = argmax(&returns);
    Ok(PlanResult {
        expert_action: sequences[top][0].clone(),
        estimated_return: returns[top],
        iterations_used: 1,
        per_iteration_best: vec![returns[top]],
        final_mean: sequences[top][0].clone(),
        all_diverged: rollouts.iter().all(|r| r.diverged),
    })
}
