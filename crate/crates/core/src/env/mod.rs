//! Analytic cart-pole and cart-double-pendulum benchmarks.
//!
//! Both systems are integrated with semi-implicit Euler on their Lagrangian
//! equations of motion. Rewards and termination are pure functions of the
//! observation so the planner can apply them to predicted observations.

mod cart_pole;
mod double_pendulum;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::scalar::{all_finite, Scalar};

pub use cart_pole::CartPoleParams;
pub use double_pendulum::DoublePendulumParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    InvertedPendulum,
    InvertedDoublePendulum,
}

impl EnvKind {
    /// Integration substeps per control interval.
    pub fn default_substeps(self) -> usize {
        match self {
            EnvKind::InvertedPendulum => 10,
            EnvKind::InvertedDoublePendulum => 20,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::InvertedPendulum => 4,
            EnvKind::InvertedDoublePendulum => 11,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    /// Default actuator range in action units.
    pub fn default_action_bounds(self) -> (f64, f64) {
        match self {
            EnvKind::InvertedPendulum => (-3.0, 3.0),
            EnvKind::InvertedDoublePendulum => (-1.0, 1.0),
        }
    }
}

/// Serializable environment settings, including every physical constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvKind,
    /// Control interval in seconds.
    pub dt: f64,
    /// Semi-implicit Euler substeps per control interval; `None` picks the per-system default.
    pub substeps: Option<usize>,
    pub steps_per_epoch: usize,
    /// Half-width of the uniform reset perturbation applied to every coordinate.
    pub reset_noise: f64,
    /// Overrides the default action range when set.
    pub action_low: Option<f64>,
    pub action_high: Option<f64>,
    pub cart_pole: CartPoleParams,
    pub double_pendulum: DoublePendulumParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: EnvKind::InvertedPendulum,
            dt: 0.02,
            substeps: None,
            steps_per_epoch: 500,
            reset_noise: 0.01,
            action_low: None,
            action_high: None,
            cart_pole: CartPoleParams::default(),
            double_pendulum: DoublePendulumParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn new(name: EnvKind) -> Self {
        Self {
            name,
            ..Self::default()
        }
    }

    pub fn action_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.name.default_action_bounds();
        (self.action_low.unwrap_or(lo), self.action_high.unwrap_or(hi))
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let (lo, hi) = self.action_bounds();
        if !(lo < hi) {
            return Err(format!("env.action_low < env.action_high violated ({lo} >= {hi})"));
        }
        if !(self.dt > 0.0) {
            return Err(format!("env.dt > 0 violated ({})", self.dt));
        }
        if self.substeps == Some(0) {
            return Err("env.substeps >= 1 violated".into());
        }
        if self.steps_per_epoch == 0 {
            return Err("env.steps_per_epoch >= 1 violated".into());
        }
        if !(self.reset_noise >= 0.0) {
            return Err(format!("env.reset_noise >= 0 violated ({})", self.reset_noise));
        }
        match self.name {
            EnvKind::InvertedPendulum => self.cart_pole.validate(),
            EnvKind::InvertedDoublePendulum => self.double_pendulum.validate(),
        }
    }
}

#[derive(Debug, Clone)]
enum Dynamics<T> {
    CartPole(cart_pole::CartPole<T>),
    DoublePendulum(double_pendulum::DoublePendulum<T>),
}

/// A fully resolved environment description in scalar type `T`.
#[derive(Debug, Clone)]
pub struct EnvSpec<T> {
    pub name: EnvKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: T,
    pub action_high: T,
    pub steps_per_epoch: usize,
    pub dt: T,
    pub substeps: usize,
    pub reset_noise: T,
    dynamics: Dynamics<T>,
}

/// Generalized coordinates and velocities.
///
/// InvertedPendulum: `q = [x, theta]`.
/// InvertedDoublePendulum: `q = [x, theta1, theta2]` with `theta2` measured
/// relative to the first pole.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<T> {
    pub q: Vec<T>,
    pub qd: Vec<T>,
    pub step_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<T> {
    pub observation: Vec<T>,
    pub reward: T,
    pub terminated: bool,
    pub truncated: bool,
    /// Set when integration produced a non-finite state; `terminated` is then also set.
    pub diverged: bool,
}

/// Reward and termination predicate evaluated on a single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSignal<T> {
    pub reward: T,
    pub terminated: bool,
}

/// Anything that can score an observation the way the environment would.
pub trait RewardModel<T>: Sync {
    fn evaluate(&self, obs: &[T]) -> RewardSignal<T>;
}

impl<T, F> RewardModel<T> for F
where
    F: Fn(&[T]) -> RewardSignal<T> + Sync,
{
    fn evaluate(&self, obs: &[T]) -> RewardSignal<T> {
        self(obs)
    }
}

impl<T: Scalar> RewardModel<T> for EnvSpec<T> {
    fn evaluate(&self, obs: &[T]) -> RewardSignal<T> {
        self.reward_from_observation(obs)
    }
}

impl<T: Scalar> EnvSpec<T> {
    pub fn new(config: &EnvConfig) -> Self {
        let (lo, hi) = config.action_bounds();
        let dynamics = match config.name {
            EnvKind::InvertedPendulum => Dynamics::CartPole(cart_pole::CartPole::new(&config.cart_pole)),
            EnvKind::InvertedDoublePendulum => {
                Dynamics::DoublePendulum(double_pendulum::DoublePendulum::new(&config.double_pendulum))
            }
        };
        Self {
            name: config.name,
            obs_dim: config.name.obs_dim(),
            action_dim: config.name.action_dim(),
            action_low: T::lit(lo),
            action_high: T::lit(hi),
            steps_per_epoch: config.steps_per_epoch,
            dt: T::lit(config.dt),
            substeps: config.substeps.unwrap_or_else(|| config.name.default_substeps()),
            reset_noise: T::lit(config.reset_noise),
            dynamics,
        }
    }

    pub fn inverted_pendulum() -> Self {
        Self::new(&EnvConfig::new(EnvKind::InvertedPendulum))
    }

    pub fn inverted_double_pendulum() -> Self {
        Self::new(&EnvConfig::new(EnvKind::InvertedDoublePendulum))
    }

    pub fn n_coords(&self) -> usize {
        match self.dynamics {
            Dynamics::CartPole(_) => 2,
            Dynamics::DoublePendulum(_) => 3,
        }
    }

    pub fn clip_action(&self, a: T) -> T {
        a.max(self.action_low).min(self.action_high)
    }

    /// The upright equilibrium with every coordinate and velocity zero.
    pub fn equilibrium(&self) -> EnvState<T> {
        let n = self.n_coords();
        EnvState {
            q: vec![T::zero(); n],
            qd: vec![T::zero(); n],
            step_count: 0,
        }
    }

    /// Samples an initial state uniformly within `reset_noise` of the upright equilibrium.
    pub fn reset(&self, seed: u64) -> (EnvState<T>, Vec<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.equilibrium();
        let scale = self.reset_noise.as_f64();
        if scale > 0.0 {
            for v in state.q.iter_mut().chain(state.qd.iter_mut()) {
                *v = T::lit(rng.gen_range(-scale..=scale));
            }
        }
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn observe(&self, state: &EnvState<T>) -> Vec<T> {
        match &self.dynamics {
            Dynamics::CartPole(_) => cart_pole::observe(state),
            Dynamics::DoublePendulum(_) => double_pendulum::observe(state),
        }
    }

    /// Generalized accelerations under the given actuator command (before gearing).
    pub fn accelerations(&self, q: &[T], qd: &[T], action: T) -> Vec<T> {
        match &self.dynamics {
            Dynamics::CartPole(p) => p.accelerations(q, qd, p.gear * action).to_vec(),
            Dynamics::DoublePendulum(p) => p.accelerations(q, qd, p.gear * action).to_vec(),
        }
    }

    /// Kinetic plus potential energy of the mechanical system.
    pub fn mechanical_energy(&self, state: &EnvState<T>) -> T {
        match &self.dynamics {
            Dynamics::CartPole(p) => p.energy(&state.q, &state.qd),
            Dynamics::DoublePendulum(p) => p.energy(&state.q, &state.qd),
        }
    }

    /// Advances the physics by one control interval `dt` (semi-implicit Euler
    /// over `substeps` equal substeps) and scores the post-step state.
    pub fn step(&self, state: &EnvState<T>, action: &[T]) -> Result<(EnvState<T>, StepResult<T>)> {
        check_dim(self.action_dim, action.len(), "action")?;
        if !all_finite(action) {
            return Err(crate::Error::NonFinite("action"));
        }
        let a = self.clip_action(action[0]);
        let mut next = state.clone();
        next.step_count = state.step_count + 1;
        let h = self.dt / T::lit(self.substeps as f64);
        for _ in 0..self.substeps {
            let qdd = self.accelerations(&next.q, &next.qd, a);
            for ((q, qd), acc) in next.q.iter_mut().zip(next.qd.iter_mut()).zip(&qdd) {
                *qd += h * *acc;
                *q += h * *qd;
            }
        }
        let truncated_at_limit = next.step_count >= self.steps_per_epoch;

        if !(all_finite(&next.q) && all_finite(&next.qd)) {
            // Integrator blow-up: keep the last finite configuration.
            let frozen = EnvState {
                step_count: next.step_count,
                ..state.clone()
            };
            let observation = self.observe(&frozen);
            return Ok((
                frozen,
                StepResult {
                    observation,
                    reward: T::zero(),
                    terminated: true,
                    truncated: false,
                    diverged: true,
                },
            ));
        }

        let observation = self.observe(&next);
        let signal = self.reward_from_observation(&observation);
        Ok((
            next,
            StepResult {
                observation,
                reward: signal.reward,
                terminated: signal.terminated,
                truncated: truncated_at_limit && !signal.terminated,
                diverged: false,
            },
        ))
    }

    /// Reward and termination as functions of an observation vector.
    ///
    /// InvertedPendulum: reward 1 while alive, terminated once `|theta| >= 0.2`.
    /// InvertedDoublePendulum: `10 - 0.01 x1^2 - (x2 - 2)^2 - 1e-3 x1'^2 - 5e-3 x2'^2`
    /// with `x1` the cart position and `x2` the tip height, terminated once `x2 <= 1`.
    pub fn reward_from_observation(&self, obs: &[T]) -> RewardSignal<T> {
        match &self.dynamics {
            Dynamics::CartPole(_) => cart_pole::reward(obs),
            Dynamics::DoublePendulum(p) => p.reward(obs),
        }
    }
}

/// Solves `a x = b` for a small symmetric positive-definite system.
pub(crate) fn solve_spd<T: Scalar, const N: usize>(mut a: [[T; N]; N], mut b: [T; N]) -> [T; N] {
    for col in 0..N {
        let pivot = a[col][col];
        for row in col + 1..N {
            let f = a[row][col] / pivot;
            for k in col..N {
                a[row][k] = a[row][k] - f * a[col][k];
            }
            b[row] = b[row] - f * b[col];
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut s = b[row];
        for k in row + 1..N {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_dimensions() {
        let ip = EnvSpec::<f64>::inverted_pendulum();
        assert_eq!((ip.obs_dim, ip.action_dim, ip.steps_per_epoch), (4, 1, 500));
        let dip = EnvSpec::<f64>::inverted_double_pendulum();
        assert_eq!((dip.obs_dim, dip.action_dim, dip.steps_per_epoch), (11, 1, 500));
        assert!(ip.action_low < ip.action_high && ip.dt > 0.0);
    }

    #[test]
    fn unperturbed_reset_is_equilibrium() {
        let mut cfg = EnvConfig::new(EnvKind::InvertedPendulum);
        cfg.reset_noise = 0.0;
        let spec = EnvSpec::<f64>::new(&cfg);
        let (state, obs) = spec.reset(7);
        assert_eq!(state, spec.equilibrium());
        assert_eq!(obs, vec![0.0; 4]);
    }

    #[test]
    fn reset_is_deterministic_and_small() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let (a, obs) = spec.reset(42);
        let (b, _) = spec.reset(42);
        assert_eq!(a, b);
        assert_eq!(obs.len(), 11);
        assert_eq!(obs, spec.observe(&a));
        assert!(a.q.iter().chain(&a.qd).all(|v| v.abs() <= 0.01));
        assert_ne!(spec.reset(43).0, a);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let s0 = spec.equilibrium();
        let (s1, r) = spec.step(&s0, &[0.0]).unwrap();
        assert_eq!(s1.q, s0.q);
        assert_eq!(s1.qd, s0.qd);
        assert_eq!(r.reward, 1.0);
        assert!(!r.terminated && !r.truncated && !r.diverged);
    }

    #[test]
    fn double_pendulum_upright_reward_is_ten() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let (_, r) = spec.step(&spec.equilibrium(), &[0.0]).unwrap();
        assert_eq!(r.reward, 10.0);
        assert!(!r.terminated);
    }

    #[test]
    fn pendulum_terminates_past_threshold() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let mut s = spec.equilibrium();
        s.q[1] = 0.25;
        let (_, r) = spec.step(&s, &[0.0]).unwrap();
        assert!(r.terminated);
        // terminal transition still pays the alive bonus
        assert_eq!(r.reward, 1.0);
        assert!(spec.reward_from_observation(&[0.0, -0.2, 0.0, 0.0]).terminated);
        assert!(!spec.reward_from_observation(&[0.0, 0.199, 0.0, 0.0]).terminated);
    }

    #[test]
    fn action_is_clipped() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let s = spec.equilibrium();
        let (a, _) = spec.step(&s, &[100.0]).unwrap();
        let (b, _) = spec.step(&s, &[3.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_actions() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let s = spec.equilibrium();
        assert!(spec.step(&s, &[f64::NAN]).is_err());
        assert!(spec.step(&s, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn truncates_at_step_limit() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let mut s = spec.equilibrium();
        s.step_count = 499;
        let (s1, r) = spec.step(&s, &[0.0]).unwrap();
        assert_eq!(s1.step_count, 500);
        assert!(r.truncated && !r.terminated);
    }

    #[test]
    fn blow_up_is_reported_as_divergence() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let mut s = spec.equilibrium();
        s.qd[1] = f64::MAX;
        let (s1, r) = spec.step(&s, &[0.0]).unwrap();
        assert!(r.diverged && r.terminated && !r.truncated);
        assert_eq!(s1.q, s.q);
        assert!(all_finite(&r.observation));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EnvConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.action_low = Some(5.0);
        assert!(cfg.validate().unwrap_err().contains("action_low"));
        let mut cfg = EnvConfig::default();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn solve_spd_matches_known_solution() {
        let a: [[f64; 3]; 3] = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let x = [1.0, -2.0, 0.5];
        let b = [
            4.0 * 1.0 - 2.0 + 0.25,
            1.0 - 6.0 + 0.1,
            0.5 - 0.4 + 1.0,
        ];
        let got = solve_spd(a, b);
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}
