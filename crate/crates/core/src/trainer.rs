//! Episode collection, central training and evaluation for every agent kind.

use std::time::Instant;

use log::{debug, info, warn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor_critic::{train_actor_imitation, train_critic, Critic, Ddpg, DdpgConfig, VtraceConfig};
use crate::dynamics::DynamicsModel;
use crate::env::{EnvConfig, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, Mlp};
use crate::planner::{baseline_plan, critic_pi2_plan, BaselineMode, PlanContext, PlannerConfig, ReturnMode};
use crate::replay::{ReplayBuffer, Transition};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    CriticPi2,
    VanillaPi2,
    Mpc,
    Ddpg,
    Random,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::CriticPi2 => "critic_pi2",
            AgentKind::VanillaPi2 => "vanilla_pi2",
            AgentKind::Mpc => "mpc",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Random => "random",
        }
    }

    fn uses_dynamics(self) -> bool {
        matches!(self, AgentKind::CriticPi2 | AgentKind::VanillaPi2 | AgentKind::Mpc)
    }

    fn uses_actor(self) -> bool {
        matches!(self, AgentKind::CriticPi2 | AgentKind::VanillaPi2)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Score rollouts with Monte Carlo returns over the baseline horizon.
    pub no_critic: bool,
    /// Execute the final PI2 mean instead of the best sampled action.
    pub no_greedy: bool,
    /// Never train the actor, neither centrally nor inside the planner.
    pub no_actor_training: bool,
}

impl AblationConfig {
    pub fn any(&self) -> bool {
        self.no_critic || self.no_greedy || self.no_actor_training
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub dynamics_hidden: Vec<usize>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub dynamics_lr: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    /// Actor standard deviation as a fraction of the action half-range.
    pub policy_sigma: f64,
    /// Output scale of value networks; `None` uses `max_reward / (1 - gamma)`.
    pub value_scale: Option<f64>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            dynamics_hidden: vec![64, 64],
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            dynamics_lr: 1e-3,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 256,
            policy_sigma: 0.1,
            value_scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    pub seed: u64,
    /// Training episodes `N`.
    pub episodes: usize,
    /// Central-training epochs `E` per training phase.
    pub epochs: usize,
    pub train_every: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    /// Horizon used by the baselines and the no_critic ablation.
    pub baseline_horizon: usize,
    /// DDPG runs this many times `E` updates per phase.
    pub ddpg_epoch_multiplier: usize,
    /// Stop once an evaluation reaches this mean return.
    pub target_return: Option<f64>,
    pub env: EnvConfig,
    pub planner: PlannerConfig,
    pub network: NetworkConfig,
    pub vtrace: VtraceConfig,
    pub ddpg: DdpgConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            agent: AgentKind::CriticPi2,
            seed: 0,
            episodes: 100,
            epochs: 100,
            train_every: 2,
            eval_every: 2,
            eval_episodes: 3,
            replay_capacity: 100_000,
            baseline_horizon: 50,
            ddpg_epoch_multiplier: 10,
            target_return: None,
            env: EnvConfig::default(),
            planner: PlannerConfig::default(),
            network: NetworkConfig::default(),
            vtrace: VtraceConfig::default(),
            ddpg: DdpgConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Planner settings after applying the agent kind and ablation switches.
    pub fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        match self.agent {
            AgentKind::CriticPi2 => {
                if self.ablation.no_critic {
                    p.return_mode = ReturnMode::MonteCarlo;
                    p.h = self.baseline_horizon;
                }
                if self.ablation.no_greedy {
                    p.greedy = false;
                }
                if self.ablation.no_actor_training {
                    p.inner_actor_update = false;
                }
            }
            AgentKind::VanillaPi2 => {
                p.h = self.baseline_horizon;
                p.return_mode = ReturnMode::MonteCarlo;
                p.greedy = false;
                p.inner_actor_update = false;
            }
            AgentKind::Mpc => p.h = self.baseline_horizon,
            AgentKind::Ddpg | AgentKind::Random => {}
        }
        p
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        self.env.validate()?;
        self.planner.validate()?;
        self.vtrace.validate()?;
        self.ddpg.validate()?;
        if self.ablation.any() && self.agent != AgentKind::CriticPi2 {
            return Err(format!(
                "ablation switches require agent = critic_pi2 (got {})",
                self.agent.name()
            ));
        }
        if self.train_every == 0 {
            return Err("train_every >= 1 violated".into());
        }
        if self.eval_every == 0 {
            return Err("eval_every >= 1 violated".into());
        }
        if self.replay_capacity == 0 {
            return Err("replay_capacity >= 1 violated".into());
        }
        if self.baseline_horizon == 0 {
            return Err("baseline_horizon >= 1 violated".into());
        }
        let n = &self.network;
        for (name, hidden) in [
            ("network.dynamics_hidden", &n.dynamics_hidden),
            ("network.actor_hidden", &n.actor_hidden),
            ("network.critic_hidden", &n.critic_hidden),
        ] {
            if hidden.contains(&0) {
                return Err(format!("{name} entries must be >= 1"));
            }
        }
        for (name, lr) in [
            ("network.dynamics_lr", n.dynamics_lr),
            ("network.actor_lr", n.actor_lr),
            ("network.critic_lr", n.critic_lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(format!("{name} > 0 violated (got {lr})"));
            }
        }
        if n.batch_size == 0 {
            return Err("network.batch_size >= 1 violated".into());
        }
        if !(n.policy_sigma > 0.0) || !n.policy_sigma.is_finite() {
            return Err(format!("network.policy_sigma > 0 violated (got {})", n.policy_sigma));
        }
        if let Some(v) = n.value_scale {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("network.value_scale > 0 violated (got {v})"));
            }
        }
        if let Some(t) = self.target_return {
            if !t.is_finite() {
                return Err("target_return must be finite".into());
            }
        }
        Ok(())
    }

    /// Value-network output scale: explicit, or the largest per-step reward over `1 - gamma`.
    pub fn value_scale(&self) -> f64 {
        self.network.value_scale.unwrap_or_else(|| {
            let max_reward = match self.env.name {
                EnvKind::InvertedPendulum => 1.0,
                EnvKind::InvertedDoublePendulum => 10.0,
            };
            max_reward / (1.0 - self.vtrace.gamma)
        })
    }
}

/// Independent deterministic seed for (`tag`, `index`) under the master seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

const TAG_INIT: u64 = 1;
const TAG_TRAIN_RESET: u64 = 2;
const TAG_EVAL_RESET: u64 = 3;
const TAG_AGENT: u64 = 4;
const TAG_EVAL_AGENT: u64 = 5;
const TAG_CENTRAL: u64 = 6;

fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Every learned component; unused ones stay at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Models<T> {
    pub actor: GaussianPolicy<T>,
    pub critic: Critic<T>,
    pub dynamics: DynamicsModel<T>,
    pub ddpg: Option<Ddpg<T>>,
}

impl<T: Scalar> Models<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let kind = cfg.env.name;
        let (obs, act) = (kind.obs_dim(), kind.action_dim());
        let (lo, hi) = cfg.env.action_bounds();
        let half = 0.5 * (hi - lo);
        let net = &cfg.network;
        let seed = |i| derive_seed(cfg.seed, TAG_INIT, i);
        let actor_net = Mlp::with_output_scale(&layer_sizes(obs, &net.actor_hidden, act), seed(0), 0.1)?;
        let actor = GaussianPolicy::new(actor_net, vec![T::lit(net.policy_sigma * half); act])?;
        let value_scale = T::lit(cfg.value_scale());
        let critic = Critic::from_net(Mlp::new(&layer_sizes(obs, &net.critic_hidden, 1), seed(1))?, value_scale)?;
        let dynamics = DynamicsModel::new(obs, act, &net.dynamics_hidden, seed(2))?;
        let ddpg = match cfg.agent {
            AgentKind::Ddpg => Some(Ddpg::new(
                obs,
                act,
                &net.actor_hidden,
                (T::lit(lo), T::lit(hi)),
                value_scale,
                cfg.ddpg,
                seed(3),
            )?),
            _ => None,
        };
        Ok(Self {
            actor,
            critic,
            dynamics,
            ddpg,
        })
    }
}

/// Losses from one central-training phase, one entry per epoch per trained network.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSummary<T> {
    pub dynamics: Vec<T>,
    pub critic: Vec<T>,
    pub actor: Vec<T>,
}

fn mean<T: Scalar>(xs: &[T]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().map(|x| x.as_f64()).sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub total_return: f64,
    pub length: usize,
    pub plan_time_s: f64,
}

impl EpisodeStats {
    pub fn mean_plan_time_s(&self) -> f64 {
        if self.length == 0 {
            0.0
        } else {
            self.plan_time_s / self.length as f64
        }
    }
}

/// One learning-curve row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub episode: usize,
    pub train_return: f64,
    pub episode_length: usize,
    pub eval_return: Option<f64>,
    pub dynamics_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub mean_plan_time_s: f64,
    /// Seconds since the experiment started, at the end of this episode.
    pub wall_time_s: f64,
}

pub struct ExperimentOutcome<T> {
    pub records: Vec<EpisodeRecord>,
    pub models: Models<T>,
}

/// Environment, models and replay data for one run.
pub struct Learner<T> {
    pub cfg: ExperimentConfig,
    pub planner: PlannerConfig,
    pub env: EnvSpec<T>,
    pub models: Models<T>,
    pub buffer: ReplayBuffer<T>,
}

impl<T: Scalar> Learner<T> {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate().map_err(Error::InvalidConfig)?;
        Ok(Self {
            planner: cfg.effective_planner(),
            env: EnvSpec::new(&cfg.env),
            models: Models::new(&cfg)?,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            cfg,
        })
    }

    fn divergence_reward(&self) -> T {
        self.buffer.min_reward().unwrap_or_else(T::zero)
    }

    /// Chooses an action with the configured agent. `explore` adds DDPG noise.
    pub fn act<G: Rng + ?Sized>(&mut self, obs: &[T], explore: bool, rng: &mut G) -> Result<Vec<T>> {
        let divergence_reward = self.divergence_reward();
        select_action(
            &self.cfg,
            &self.planner,
            &self.env,
            &mut self.models,
            divergence_reward,
            obs,
            explore,
            rng,
        )
    }

    /// Runs one episode. With `store` set, transitions go to the replay buffer
    /// and the behavior log-density of each executed action is recorded.
    pub fn run_episode<G: Rng + ?Sized>(&mut self, reset_seed: u64, store: bool, rng: &mut G) -> Result<EpisodeStats> {
        let divergence_reward = self.divergence_reward();
        let buffer = if store { Some(&mut self.buffer) } else { None };
        run_episode(
            &self.cfg,
            &self.planner,
            &self.env,
            &mut self.models,
            buffer,
            divergence_reward,
            reset_seed,
            rng,
        )
    }

    /// Mean return over evaluation episodes. Works on a copy of the models, so
    /// planner-internal actor updates are discarded and no data is stored.
    pub fn evaluate(&self, episode: usize) -> Result<f64> {
        if self.cfg.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be >= 1 to evaluate".into()));
        }
        let divergence_reward = self.divergence_reward();
        let mut total = 0.0;
        for j in 0..self.cfg.eval_episodes {
            let mut models = self.models.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                TAG_EVAL_AGENT,
                (episode as u64) << 16 | j as u64,
            ));
            let reset = derive_seed(self.cfg.seed, TAG_EVAL_RESET, j as u64);
            let stats = run_episode(
                &self.cfg,
                &self.planner,
                &self.env,
                &mut models,
                None,
                divergence_reward,
                reset,
                &mut rng,
            )?;
            total += stats.total_return;
        }
        Ok(total / self.cfg.eval_episodes as f64)
    }

    pub fn central_training<G: Rng + ?Sized>(&mut self, rng: &mut G) -> Result<TrainingSummary<T>> {
        central_training(&self.cfg, &self.buffer, &mut self.models, rng)
    }
}

#[allow(clippy::too_many_arguments)]
fn select_action<T: Scalar, G: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    planner: &PlannerConfig,
    env: &EnvSpec<T>,
    models: &mut Models<T>,
    divergence_reward: T,
    obs: &[T],
    explore: bool,
    rng: &mut G,
) -> Result<Vec<T>> {
    let critic = match (cfg.agent, planner.return_mode) {
        (AgentKind::CriticPi2, ReturnMode::CriticBootstrap) => Some(&models.critic),
        _ => None,
    };
    let ctx = PlanContext {
        dynamics: &models.dynamics,
        critic,
        reward: env,
        action_low: env.action_low,
        action_high: env.action_high,
        gamma: T::lit(cfg.vtrace.gamma),
        divergence_reward,
        actor_lr: T::lit(cfg.network.actor_lr),
    };
    match cfg.agent {
        AgentKind::CriticPi2 => {
            let res = critic_pi2_plan(obs, &mut models.actor, &ctx, planner, rng)?;
            if res.all_diverged {
                debug!("every imagined rollout diverged; using the actor mean");
            }
            Ok(res.expert_action)
        }
        AgentKind::VanillaPi2 => Ok(baseline_plan(obs, &models.actor, &ctx, planner, BaselineMode::VanillaPi2, rng)?.expert_action),
        AgentKind::Mpc => Ok(baseline_plan(obs, &models.actor, &ctx, planner, BaselineMode::MpcRandomShooting, rng)?.expert_action),
        AgentKind::Ddpg => {
            let ddpg = models.ddpg.as_ref().expect("ddpg agent has ddpg networks");
            if explore {
                ddpg.explore(obs, rng)
            } else {
                ddpg.act(obs)
            }
        }
        AgentKind::Random => {
            let (lo, hi) = (env.action_low.as_f64(), env.action_high.as_f64());
            Ok((0..env.action_dim).map(|_| T::lit(rng.gen_range(lo..=hi))).collect())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_episode<T: Scalar, G: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    planner: &PlannerConfig,
    env: &EnvSpec<T>,
    models: &mut Models<T>,
    mut buffer: Option<&mut ReplayBuffer<T>>,
    divergence_reward: T,
    reset_seed: u64,
    rng: &mut G,
) -> Result<EpisodeStats> {
    let (mut state, mut obs) = env.reset(reset_seed);
    let mut stats = EpisodeStats {
        total_return: 0.0,
        length: 0,
        plan_time_s: 0.0,
    };
    let explore = buffer.is_some();
    loop {
        let started = Instant::now();
        let mut action = select_action(cfg, planner, env, models, divergence_reward, &obs, explore, rng)?;
        stats.plan_time_s += started.elapsed().as_secs_f64();
        for a in action.iter_mut() {
            *a = env.clip_action(*a);
        }
        let (next_state, step) = env.step(&state, &action)?;
        if let Some(buf) = buffer.as_deref_mut() {
            let behavior_log_prob = if cfg.agent.uses_actor() {
                Some(models.actor.log_prob(&obs, &action)?)
            } else {
                None
            };
            buf.push(Transition {
                obs: obs.clone(),
                action,
                reward: step.reward,
                next_obs: step.observation.clone(),
                terminated: step.terminated,
                truncated: step.truncated,
                behavior_log_prob,
            })?;
        }
        stats.total_return += step.reward.as_f64();
        stats.length += 1;
        if step.diverged {
            warn!("simulator diverged; ending the episode");
        }
        if step.terminated || step.truncated {
            break;
        }
        state = next_state;
        obs = step.observation;
    }
    Ok(stats)
}

/// `E` epochs of dynamics, critic and actor updates from the replay buffer.
/// DDPG instead runs `ddpg_epoch_multiplier * E` of its own updates.
pub fn central_training<T: Scalar, G: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    buffer: &ReplayBuffer<T>,
    models: &mut Models<T>,
    rng: &mut G,
) -> Result<TrainingSummary<T>> {
    let mut summary = TrainingSummary::default();
    if cfg.epochs == 0 || cfg.agent == AgentKind::Random {
        return Ok(summary);
    }
    if buffer.len() < cfg.vtrace.n.max(2) {
        warn!("replay buffer holds {} transitions; skipping central training", buffer.len());
        return Ok(summary);
    }
    let batch = cfg.network.batch_size;
    if let Some(ddpg) = models.ddpg.as_mut() {
        for _ in 0..cfg.epochs * cfg.ddpg_epoch_multiplier {
            let losses = ddpg.update(&buffer.sample(batch, rng)?)?;
            summary.critic.push(losses.critic);
            summary.actor.push(losses.actor);
        }
        return Ok(summary);
    }

    let train_critic_net = cfg.agent == AgentKind::CriticPi2 && !cfg.ablation.no_critic;
    let train_actor = cfg.agent.uses_actor() && !cfg.ablation.no_actor_training;
    if cfg.agent.uses_dynamics() {
        models.dynamics.fit_normalization(buffer.iter());
    }
    let n = cfg.vtrace.n;
    let windows = (batch / n).max(1);
    for _ in 0..cfg.epochs {
        if cfg.agent.uses_dynamics() {
            let b = buffer.sample(batch, rng)?;
            summary.dynamics.push(models.dynamics.train(&b, T::lit(cfg.network.dynamics_lr))?);
        }
        if train_critic_net {
            let seqs: Vec<Vec<&Transition<T>>> = buffer
                .sample_sequences(windows, n, rng)?
                .into_iter()
                .map(|s| s.steps)
                .collect();
            summary.critic.push(train_critic(
                &mut models.critic,
                &seqs,
                &models.actor,
                &cfg.vtrace,
                T::lit(cfg.network.critic_lr),
            )?);
        }
        if train_actor {
            let b = buffer.sample(batch, rng)?;
            let states: Vec<&[T]> = b.iter().map(|t| t.obs.as_slice()).collect();
            let actions: Vec<&[T]> = b.iter().map(|t| t.action.as_slice()).collect();
            summary.actor.push(train_actor_imitation(
                &mut models.actor,
                &states,
                &actions,
                T::lit(cfg.network.actor_lr),
            )?);
        }
    }
    Ok(summary)
}

fn with_episode<T>(episode: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Episode {
        episode,
        source: Box::new(e),
    })
}

/// Runs the full experiment loop.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentOutcome<T>> {
    run_experiment_with(cfg, |_| {})
}

/// [`run_experiment`] with a callback invoked after every episode.
pub fn run_experiment_with<T: Scalar, F: FnMut(&EpisodeRecord)>(
    cfg: &ExperimentConfig,
    mut on_record: F,
) -> Result<ExperimentOutcome<T>> {
    let mut learner = Learner::<T>::new(cfg.clone())?;
    let mut agent_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_AGENT, 0));
    let mut train_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TAG_CENTRAL, 0));
    let started = Instant::now();
    let mut records = Vec::with_capacity(cfg.episodes);

    for episode in 1..=cfg.episodes {
        let reset = derive_seed(cfg.seed, TAG_TRAIN_RESET, episode as u64);
        let stats = with_episode(episode, learner.run_episode(reset, true, &mut agent_rng))?;

        let summary = if episode % cfg.train_every == 0 {
            with_episode(episode, learner.central_training(&mut train_rng))?
        } else {
            TrainingSummary::default()
        };
        let eval_return = if cfg.eval_episodes > 0 && (episode % cfg.eval_every == 0 || episode == cfg.episodes) {
            Some(with_episode(episode, learner.evaluate(episode))?)
        } else {
            None
        };
        let record = EpisodeRecord {
            episode,
            train_return: stats.total_return,
            episode_length: stats.length,
            eval_return,
            dynamics_loss: mean(&summary.dynamics),
            critic_loss: mean(&summary.critic),
            actor_loss: mean(&summary.actor),
            mean_plan_time_s: stats.mean_plan_time_s(),
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        info!(
            "{} episode {episode}: return {:.1} length {} eval {:?}",
            cfg.agent.name(),
            record.train_return,
            record.episode_length,
            record.eval_return
        );
        on_record(&record);
        records.push(record);
        if let (Some(target), Some(ret)) = (cfg.target_return, eval_return) {
            if ret >= target {
                info!("evaluation return {ret:.1} reached target {target}; stopping");
                break;
            }
        }
    }
    Ok(ExperimentOutcome {
        records,
        models: learner.models,
    })
}
