//! Value learning (n-step TD, V-trace), actor imitation, and the DDPG baseline.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{GaussianPolicy, Loss, Matrix, Mlp};
use crate::replay::Transition;
use crate::scalar::{all_finite, Scalar};

/// `sum_k gamma^k r_k + gamma^n * bootstrap`. Pass `bootstrap = 0` for a
/// trajectory that terminated inside the window.
pub fn n_step_return<T: Scalar>(rewards: &[T], bootstrap: T, gamma: T) -> Result<T> {
    if rewards.is_empty() {
        return Err(Error::Empty("rewards"));
    }
    let mut acc = bootstrap;
    for &r in rewards.iter().rev() {
        acc = r + gamma * acc;
    }
    Ok(acc)
}

/// Discounted sum of rewards with no bootstrap.
pub fn monte_carlo_return<T: Scalar>(rewards: &[T], gamma: T) -> T {
    rewards.iter().rev().fold(T::zero(), |acc, &r| r + gamma * acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VtraceConfig {
    pub rho_bar: f64,
    pub c_bar: f64,
    pub gamma: f64,
    /// Bootstrap length used when sampling critic training windows.
    pub n: usize,
}

impl Default for VtraceConfig {
    fn default() -> Self {
        Self {
            rho_bar: 1.0,
            c_bar: 1.0,
            gamma: 0.99,
            n: 5,
        }
    }
}

impl VtraceConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("vtrace.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(self.c_bar > 0.0) {
            return Err(format!("vtrace.c_bar must be > 0, got {}", self.c_bar));
        }
        if !(self.rho_bar >= self.c_bar) {
            return Err(format!(
                "vtrace.rho_bar >= vtrace.c_bar violated ({} < {})",
                self.rho_bar, self.c_bar
            ));
        }
        if self.n == 0 {
            return Err("vtrace.n must be >= 1".into());
        }
        Ok(())
    }
}

/// V-trace targets for every position of one contiguous window.
///
/// `next_values[t]` must already be zero where step `t` terminated.
/// `log_rhos[t]` is `log pi(a_t|x_t) - log mu(a_t|x_t)` with `pi` the policy
/// being evaluated and `mu` the one that collected the data.
pub fn vtrace_from_parts<T: Scalar>(
    values: &[T],
    next_values: &[T],
    rewards: &[T],
    log_rhos: &[T],
    gamma: T,
    rho_bar: T,
    c_bar: T,
) -> Result<Vec<T>> {
    let n = values.len();
    check_dim(n, next_values.len(), "vtrace next values")?;
    check_dim(n, rewards.len(), "vtrace rewards")?;
    check_dim(n, log_rhos.len(), "vtrace log ratios")?;
    let mut targets = vec![T::zero(); n];
    // acc = v_{s+1} - V(x_{s+1}); zero past the end of the window
    let mut acc = T::zero();
    for s in (0..n).rev() {
        let ratio = log_rhos[s].exp();
        let rho = ratio.min(rho_bar);
        let c = ratio.min(c_bar);
        let delta = rho * (rewards[s] + gamma * next_values[s] - values[s]);
        acc = delta + gamma * c * acc;
        targets[s] = values[s] + acc;
    }
    Ok(targets)
}

/// State-value network `V(s)`. The raw network output is multiplied by
/// `value_scale`, which keeps the regression targets near unit size.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    pub net: Mlp<T>,
    pub value_scale: T,
}

impl<T: Scalar> Critic<T> {
    pub fn new(obs_dim: usize, hidden: &[usize], seed: u64, value_scale: T) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_net(Mlp::new(&sizes, seed)?, value_scale)
    }

    pub fn from_net(net: Mlp<T>, value_scale: T) -> Result<Self> {
        check_dim(1, net.output_dim(), "critic output")?;
        if !(value_scale > T::zero()) || !value_scale.is_finite() {
            return Err(Error::InvalidConfig("critic value_scale must be > 0".into()));
        }
        Ok(Self { net, value_scale })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn value(&self, obs: &[T]) -> Result<T> {
        Ok(self.net.forward(obs)?[0] * self.value_scale)
    }

    pub fn values(&self, obs: &[&[T]]) -> Result<Vec<T>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let m = Matrix::from_rows(obs)?;
        let out = self.net.forward_batch(&m)?;
        Ok(out.as_slice().iter().map(|&v| v * self.value_scale).collect())
    }

    /// One MSE step pulling `V(obs[i])` toward `targets[i]`.
    pub fn fit(&mut self, obs: &[&[T]], targets: &[T], lr: T) -> Result<T> {
        check_dim(obs.len(), targets.len(), "critic targets")?;
        if obs.is_empty() {
            return Err(Error::Empty("critic batch"));
        }
        let inputs = Matrix::from_rows(obs)?;
        let scaled: Vec<T> = targets.iter().map(|&t| t / self.value_scale).collect();
        let targets = Matrix::new(scaled.len(), 1, scaled)?;
        let loss = self.net.train_step(&inputs, &targets, &Loss::Mse, lr)?;
        Ok(loss * self.value_scale * self.value_scale)
    }
}

/// V-trace targets for a time-contiguous window taken from one episode.
///
/// Importance ratios compare `target_actor` against the stored behavior
/// log-densities; terminal next states have value zero.
pub fn vtrace_targets<T: Scalar>(
    sequence: &[&Transition<T>],
    critic: &Critic<T>,
    target_actor: &GaussianPolicy<T>,
    cfg: &VtraceConfig,
) -> Result<Vec<T>> {
    if sequence.is_empty() {
        return Err(Error::Empty("vtrace sequence"));
    }
    let obs: Vec<&[T]> = sequence.iter().map(|t| t.obs.as_slice()).collect();
    let next: Vec<&[T]> = sequence.iter().map(|t| t.next_obs.as_slice()).collect();
    let values = critic.values(&obs)?;
    let mut next_values = critic.values(&next)?;
    let mut log_rhos = Vec::with_capacity(sequence.len());
    let mut rewards = Vec::with_capacity(sequence.len());
    for (t, nv) in sequence.iter().zip(next_values.iter_mut()) {
        let behavior = t.behavior_log_prob.ok_or(Error::MissingLogProbs)?;
        log_rhos.push(target_actor.log_prob(&t.obs, &t.action)? - behavior);
        rewards.push(t.reward);
        if t.terminated {
            *nv = T::zero();
        }
    }
    vtrace_from_parts(
        &values,
        &next_values,
        &rewards,
        &log_rhos,
        T::lit(cfg.gamma),
        T::lit(cfg.rho_bar),
        T::lit(cfg.c_bar),
    )
}

/// One critic regression step on a batch of windows. Targets for every
/// position are computed from the critic as it was before the step.
pub fn train_critic<T: Scalar>(
    critic: &mut Critic<T>,
    batch: &[Vec<&Transition<T>>],
    actor: &GaussianPolicy<T>,
    cfg: &VtraceConfig,
    lr: T,
) -> Result<T> {
    if batch.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("critic batch"));
    }
    let mut obs = Vec::new();
    let mut targets = Vec::new();
    for seq in batch.iter().filter(|s| !s.is_empty()) {
        targets.extend(vtrace_targets(seq, critic, actor, cfg)?);
        obs.extend(seq.iter().map(|t| t.obs.as_slice()));
    }
    if !all_finite(&targets) {
        return Err(Error::NonFiniteLoss);
    }
    critic.fit(&obs, &targets, lr)
}

/// One Gaussian negative-log-likelihood step pulling the actor mean toward
/// the expert actions. Falls back to MSE when sigma has zero entries.
pub fn train_actor_imitation<T: Scalar>(
    actor: &mut GaussianPolicy<T>,
    states: &[&[T]],
    expert_actions: &[&[T]],
    lr: T,
) -> Result<T> {
    check_dim(states.len(), expert_actions.len(), "expert actions")?;
    if states.is_empty() {
        return Err(Error::Empty("imitation batch"));
    }
    let inputs = Matrix::from_rows(states)?;
    let targets = Matrix::from_rows(expert_actions)?;
    let loss = if actor.sigma().iter().all(|s| *s > T::zero()) {
        Loss::GaussianNll(actor.sigma().to_vec())
    } else {
        Loss::Mse
    };
    actor.mean_net.train_step(&inputs, &targets, &loss, lr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Exploration noise std as a fraction of the action half-range.
    pub exploration_sigma: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            exploration_sigma: 0.1,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("ddpg.gamma must lie in (0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(format!("ddpg.tau must lie in [0, 1], got {}", self.tau));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return Err("ddpg.actor_lr and ddpg.critic_lr must be > 0".into());
        }
        if !(self.exploration_sigma >= 0.0) {
            return Err("ddpg.exploration_sigma must be >= 0".into());
        }
        Ok(())
    }
}

/// Losses reported by one DDPG update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdpgLosses<T> {
    pub critic: T,
    /// Mean of `-Q(s, mu(s))` over the batch, before the actor step.
    pub actor: T,
}

/// Deterministic actor `mu(s) = mid + half * tanh(net(s))` with a Q network
/// on `[s, a]` and Polyak-averaged target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct Ddpg<T> {
    pub actor: Mlp<T>,
    pub q: Mlp<T>,
    pub actor_target: Mlp<T>,
    pub q_target: Mlp<T>,
    pub cfg: DdpgConfig,
    pub action_low: T,
    pub action_high: T,
    /// Q outputs are `q_scale * net`, like [`Critic::value_scale`].
    pub q_scale: T,
}

impl<T: Scalar> Ddpg<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        bounds: (T, T),
        q_scale: T,
        cfg: DdpgConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        actor_sizes.push(action_dim);
        let mut q_sizes = vec![obs_dim + action_dim];
        q_sizes.extend_from_slice(hidden);
        q_sizes.push(1);
        let actor = Mlp::with_output_scale(&actor_sizes, seed, 0.1)?;
        let q = Mlp::new(&q_sizes, seed.wrapping_add(1))?;
        if !(bounds.0 < bounds.1) {
            return Err(Error::InvalidConfig("ddpg action bounds must satisfy low < high".into()));
        }
        cfg.validate().map_err(Error::InvalidConfig)?;
        Ok(Self {
            actor_target: actor.clone(),
            q_target: q.clone(),
            actor,
            q,
            cfg,
            action_low: bounds.0,
            action_high: bounds.1,
            q_scale,
        })
    }

    fn mid_half(&self) -> (T, T) {
        let half = T::lit(0.5) * (self.action_high - self.action_low);
        (self.action_low + half, half)
    }

    fn squash(&self, z: &[T]) -> Vec<T> {
        let (mid, half) = self.mid_half();
        z.iter().map(|&v| mid + half * v.tanh()).collect()
    }

    /// Greedy action `mu(s)`.
    pub fn act(&self, obs: &[T]) -> Result<Vec<T>> {
        Ok(self.squash(&self.actor.forward(obs)?))
    }

    /// `mu(s)` plus clipped Gaussian exploration noise.
    pub fn explore<R: rand::Rng + ?Sized>(&self, obs: &[T], rng: &mut R) -> Result<Vec<T>> {
        let (_, half) = self.mid_half();
        let sigma = T::lit(self.cfg.exploration_sigma) * half;
        let mut a = self.act(obs)?;
        for v in a.iter_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *v = (*v + sigma * T::lit(z)).max(self.action_low).min(self.action_high);
        }
        Ok(a)
    }

    fn actions_batch(net: &Mlp<T>, obs: &Matrix<T>, ddpg: &Self) -> Result<Matrix<T>> {
        let z = net.forward_batch(obs)?;
        let mut out = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            out.row_mut(r).copy_from_slice(&ddpg.squash(z.row(r)));
        }
        Ok(out)
    }

    fn join(obs: &Matrix<T>, actions: &Matrix<T>) -> Result<Matrix<T>> {
        let rows: Vec<Vec<T>> = obs
            .iter_rows()
            .zip(actions.iter_rows())
            .map(|(o, a)| o.iter().chain(a).copied().collect())
            .collect();
        Matrix::from_rows(&rows)
    }

    /// Critic step toward `r + gamma * Q'(s', mu'(s'))`, actor step along
    /// `dQ/da`, then Polyak updates of both targets.
    pub fn update(&mut self, batch: &[&Transition<T>]) -> Result<DdpgLosses<T>> {
        if batch.is_empty() {
            return Err(Error::Empty("ddpg batch"));
        }
        let obs = Matrix::from_rows(&batch.iter().map(|t| t.obs.as_slice()).collect::<Vec<_>>())?;
        let next = Matrix::from_rows(&batch.iter().map(|t| t.next_obs.as_slice()).collect::<Vec<_>>())?;
        let acts = Matrix::from_rows(&batch.iter().map(|t| t.action.as_slice()).collect::<Vec<_>>())?;
        let gamma = T::lit(self.cfg.gamma);

        let next_actions = Self::actions_batch(&self.actor_target, &next, self)?;
        let next_q = self.q_target.forward_batch(&Self::join(&next, &next_actions)?)?;
        let targets: Vec<T> = batch
            .iter()
            .zip(next_q.as_slice())
            .map(|(t, &q)| {
                let boot = if t.terminated { T::zero() } else { q * self.q_scale };
                (t.reward + gamma * boot) / self.q_scale
            })
            .collect();
        let targets = Matrix::new(batch.len(), 1, targets)?;
        let critic_loss = self.q.train_step(&Self::join(&obs, &acts)?, &targets, &Loss::Mse, T::lit(self.cfg.critic_lr))?;

        // actor: minimise -mean Q(s, mu(s))
        let cache_mu = self.actor.forward_cached(&obs)?;
        let z = cache_mu.output().clone();
        let (_, half) = self.mid_half();
        let mut mu = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            mu.row_mut(r).copy_from_slice(&self.squash(z.row(r)));
        }
        let q_in = Self::join(&obs, &mu)?;
        let cache_q = self.q.forward_cached(&q_in)?;
        let n = T::lit(batch.len() as f64);
        let actor_loss = -cache_q.output().as_slice().iter().copied().sum::<T>() * self.q_scale / n;
        let grad_q = Matrix::new(batch.len(), 1, vec![-T::one() / n; batch.len()])?;
        let (_, grad_in) = self.q.backward(&cache_q, &grad_q)?;
        let obs_dim = obs.cols();
        let mut grad_z = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            for (j, g) in grad_z.row_mut(r).iter_mut().enumerate() {
                let th = z.row(r)[j].tanh();
                *g = grad_in.row(r)[obs_dim + j] * half * (T::one() - th * th);
            }
        }
        let (actor_grads, _) = self.actor.backward(&cache_mu, &grad_z)?;
        if !actor_grads.is_finite() || !actor_loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        self.actor.apply_gradients(&actor_grads, T::lit(self.cfg.actor_lr));

        self.polyak(T::lit(self.cfg.tau))?;
        Ok(DdpgLosses {
            critic: critic_loss * self.q_scale * self.q_scale,
            actor: actor_loss,
        })
    }

    /// Moves both target networks a fraction `tau` toward the online ones.
    pub fn polyak(&mut self, tau: T) -> Result<()> {
        self.actor_target.polyak_from(&self.actor, tau)?;
        self.q_target.polyak_from(&self.q, tau)
    }

    pub fn q_value(&self, obs: &[T], action: &[T]) -> Result<T> {
        let input: Vec<T> = obs.iter().chain(action).copied().collect();
        Ok(self.q.forward(&input)?[0] * self.q_scale)
    }
}
