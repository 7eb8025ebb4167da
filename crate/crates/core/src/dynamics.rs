//! Learned differential dynamics and the imagined-rollout generator.
//!
//! The network predicts the state change `s' - s` from `(s, a)`. Inputs are
//! z-scored; targets are divided by their per-coordinate standard deviation
//! without centring, so an all-zero network predicts "no change".

use rand::Rng;

use crate::env::RewardModel;
use crate::error::{check_dim, Error, Result};
use crate::nn::{GaussianPolicy, Loss, Matrix, Mlp};
use crate::replay::Transition;
use crate::scalar::{all_finite, Scalar};

const STD_FLOOR: f64 = 1e-6;

/// Per-coordinate affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Normalizer<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            std: vec![T::one(); dim],
        }
    }

    /// Mean and (population) standard deviation of `rows`, std floored at 1e-6.
    /// With `center == false` the mean is fixed at zero and `std` is the RMS.
    pub fn fit<'a, I>(dim: usize, rows: I, center: bool) -> Self
    where
        I: IntoIterator<Item = &'a [T]> + Clone,
    {
        let mut n = 0usize;
        let mut mean = vec![T::zero(); dim];
        if center {
            for r in rows.clone() {
                for (m, &x) in mean.iter_mut().zip(r) {
                    *m += x;
                }
                n += 1;
            }
            if n == 0 {
                return Self::identity(dim);
            }
            let inv = T::one() / T::lit(n as f64);
            mean.iter_mut().for_each(|m| *m *= inv);
        }
        let mut var = vec![T::zero(); dim];
        n = 0;
        for r in rows {
            for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let floor = T::lit(STD_FLOOR);
        let std = var
            .into_iter()
            .map(|v| (v / T::lit(n as f64)).sqrt().max(floor))
            .collect();
        Self { mean, std }
    }

    pub fn normalize_into(&self, x: &[T], out: &mut [T]) {
        for (((o, &v), &m), &s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    pub fn normalize(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); x.len()];
        self.normalize_into(x, &mut out);
        out
    }

    pub fn denormalize(&self, z: &[T]) -> Vec<T> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((&v, &m), &s)| v * s + m)
            .collect()
    }
}

/// Learned model of `s_{t+1} - s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel<T> {
    pub net: Mlp<T>,
    pub input_norm: Normalizer<T>,
    pub target_norm: Normalizer<T>,
    obs_dim: usize,
    action_dim: usize,
}

impl<T: Scalar> DynamicsModel<T> {
    /// Fresh model; the output layer starts scaled by 0.01 so early predictions are near zero change.
    pub fn new(obs_dim: usize, action_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(obs_dim);
        Self::from_net(Mlp::with_output_scale(&sizes, seed, 0.01)?, obs_dim)
    }

    pub fn from_net(net: Mlp<T>, obs_dim: usize) -> Result<Self> {
        check_dim(obs_dim, net.output_dim(), "dynamics output")?;
        if net.input_dim() <= obs_dim {
            return Err(Error::InvalidLayers("dynamics input must hold obs and action".into()));
        }
        let action_dim = net.input_dim() - obs_dim;
        Ok(Self {
            input_norm: Normalizer::identity(obs_dim + action_dim),
            target_norm: Normalizer::identity(obs_dim),
            net,
            obs_dim,
            action_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input_row(&self, obs: &[T], action: &[T], out: &mut [T]) {
        let raw = obs.iter().chain(action);
        let norm = &self.input_norm;
        for (((o, &v), &m), &s) in out.iter_mut().zip(raw).zip(&norm.mean).zip(&norm.std) {
            *o = (v - m) / s;
        }
    }

    pub fn predict_next(&self, obs: &[T], action: &[T]) -> Result<Vec<T>> {
        check_dim(self.obs_dim, obs.len(), "dynamics observation")?;
        check_dim(self.action_dim, action.len(), "dynamics action")?;
        let mut x = vec![T::zero(); self.obs_dim + self.action_dim];
        self.input_row(obs, action, &mut x);
        let delta = self.net.forward(&x)?;
        Ok(self.apply_delta(obs, &delta))
    }

    fn apply_delta(&self, obs: &[T], delta_normalized: &[T]) -> Vec<T> {
        obs.iter()
            .zip(delta_normalized)
            .zip(&self.target_norm.std)
            .map(|((&o, &d), &s)| o + d * s)
            .collect()
    }

    /// Row-wise `predict_next`; each row is bit-identical to the single-sample call.
    pub fn predict_batch(&self, obs: &[&[T]], actions: &[&[T]]) -> Result<Vec<Vec<T>>> {
        check_dim(obs.len(), actions.len(), "dynamics batch")?;
        let width = self.obs_dim + self.action_dim;
        let mut inputs = Matrix::zeros(obs.len(), width);
        for (r, (o, a)) in obs.iter().zip(actions).enumerate() {
            check_dim(self.obs_dim, o.len(), "dynamics observation")?;
            check_dim(self.action_dim, a.len(), "dynamics action")?;
            self.input_row(o, a, inputs.row_mut(r));
        }
        let deltas = self.net.forward_batch(&inputs)?;
        Ok(obs
            .iter()
            .enumerate()
            .map(|(r, o)| self.apply_delta(o, deltas.row(r)))
            .collect())
    }

    /// Refreshes input and target statistics from stored transitions.
    pub fn fit_normalization<'a, I>(&mut self, transitions: I)
    where
        I: IntoIterator<Item = &'a Transition<T>> + Clone,
    {
        let inputs: Vec<Vec<T>> = transitions
            .clone()
            .into_iter()
            .map(|t| t.obs.iter().chain(&t.action).copied().collect())
            .collect();
        let deltas: Vec<Vec<T>> = transitions
            .into_iter()
            .map(|t| t.next_obs.iter().zip(&t.obs).map(|(&n, &o)| n - o).collect())
            .collect();
        self.input_norm = Normalizer::fit(self.obs_dim + self.action_dim, inputs.iter().map(|v| v.as_slice()), true);
        self.target_norm = Normalizer::fit(self.obs_dim, deltas.iter().map(|v| v.as_slice()), false);
    }

    fn training_batch(&self, batch: &[&Transition<T>]) -> Result<(Matrix<T>, Matrix<T>)> {
        let width = self.obs_dim + self.action_dim;
        let mut inputs = Matrix::zeros(batch.len(), width);
        let mut targets = Matrix::zeros(batch.len(), self.obs_dim);
        for (r, t) in batch.iter().enumerate() {
            check_dim(self.obs_dim, t.obs.len(), "transition observation")?;
            check_dim(self.action_dim, t.action.len(), "transition action")?;
            check_dim(self.obs_dim, t.next_obs.len(), "transition next observation")?;
            self.input_row(&t.obs, &t.action, inputs.row_mut(r));
            for (((y, &n), &o), &s) in targets
                .row_mut(r)
                .iter_mut()
                .zip(&t.next_obs)
                .zip(&t.obs)
                .zip(&self.target_norm.std)
            {
                *y = (n - o) / s;
            }
        }
        Ok((inputs, targets))
    }

    /// One Adam step of mean squared error on normalized state changes.
    pub fn train(&mut self, batch: &[&Transition<T>], lr: T) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::Empty("dynamics batch"));
        }
        let (x, y) = self.training_batch(batch)?;
        self.net.train_step(&x, &y, &Loss::Mse, lr)
    }

    /// Loss of the current model on `batch` without updating it.
    pub fn loss(&self, batch: &[&Transition<T>]) -> Result<T> {
        let (x, y) = self.training_batch(batch)?;
        Ok(self.net.loss_and_gradients(&x, &y, &Loss::Mse)?.0)
    }
}

/// An imagined trajectory through the learned model.
///
/// Entries after `end()` are padding: the last observation repeated, zero
/// actions and log-probabilities, and zero rewards (or the divergence penalty
/// when the model blew up).
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T> {
    pub observations: Vec<Vec<T>>,
    pub actions: Vec<Vec<T>>,
    pub rewards: Vec<T>,
    pub behavior_log_probs: Vec<T>,
    /// Index of the step whose predicted next observation met the termination predicate.
    pub terminated_at: Option<usize>,
    pub diverged: bool,
}

impl<T: Scalar> Rollout<T> {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// Whether the return should bootstrap from the final observation.
    pub fn bootstraps(&self) -> bool {
        self.terminated_at.is_none() && !self.diverged
    }

    pub fn first_action(&self) -> &[T] {
        &self.actions[0]
    }
}

/// Everything the imagination engine needs besides the action source.
pub struct Imagination<'a, T, R: ?Sized> {
    pub model: &'a DynamicsModel<T>,
    pub reward: &'a R,
    pub action_low: T,
    pub action_high: T,
    /// Reward charged for each remaining step after the model produces a non-finite state.
    pub divergence_reward: T,
}

impl<T, R> Clone for Imagination<'_, T, R>
where
    R: ?Sized,
    T: Copy,
{
    fn clone(&self) -> Self {
        Self { ..*self }
    }
}

/// How imagined actions are chosen.
pub enum ActionPlan<'a, T> {
    /// Step 0 applies the given action, later steps sample from the actor.
    FirstThenActor {
        first_actions: &'a [Vec<T>],
        actor: &'a GaussianPolicy<T>,
    },
    /// Open-loop action sequences, one per rollout.
    Sequences {
        sequences: &'a [Vec<Vec<T>>],
        actor: Option<&'a GaussianPolicy<T>>,
    },
}

impl<T> ActionPlan<'_, T> {
    fn len(&self) -> usize {
        match self {
            ActionPlan::FirstThenActor { first_actions, .. } => first_actions.len(),
            ActionPlan::Sequences { sequences, .. } => sequences.len(),
        }
    }

    fn actor(&self) -> Option<&GaussianPolicy<T>> {
        match self {
            ActionPlan::FirstThenActor { actor, .. } => Some(actor),
            ActionPlan::Sequences { actor, .. } => *actor,
        }
    }
}

impl<T: Scalar, R: RewardModel<T> + ?Sized> Imagination<'_, T, R> {
    fn clip(&self, a: &mut [T]) {
        for v in a.iter_mut() {
            *v = v.max(self.action_low).min(self.action_high);
        }
    }

    /// Rolls every plan forward `horizon` steps in lockstep. `rngs[k]` drives
    /// the actor samples of rollout `k`, so each rollout depends only on its own
    /// stream and the result does not depend on how rollouts are batched.
    pub fn rollouts<G: Rng>(&self, start_obs: &[T], plan: &ActionPlan<'_, T>, horizon: usize, rngs: &mut [G]) -> Result<Vec<Rollout<T>>> {
        if horizon == 0 {
            return Err(Error::InvalidConfig("rollout horizon must be >= 1".into()));
        }
        let model = self.model;
        check_dim(model.obs_dim(), start_obs.len(), "rollout start observation")?;
        let n = plan.len();
        check_dim(n, rngs.len(), "rollout rng streams")?;
        if let ActionPlan::Sequences { sequences, .. } = plan {
            for s in sequences.iter() {
                check_dim(horizon, s.len(), "action sequence length")?;
            }
        }
        let actor = plan.actor();
        let zero_action = vec![T::zero(); model.action_dim()];
        let mut out: Vec<Rollout<T>> = (0..n)
            .map(|_| Rollout {
                observations: vec![start_obs.to_vec()],
                actions: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
                behavior_log_probs: Vec::with_capacity(horizon),
                terminated_at: None,
                diverged: false,
            })
            .collect();
        let start_mean = match actor {
            Some(a) => Some(a.mean(start_obs)?),
            None => None,
        };
        let mut active: Vec<usize> = (0..n).collect();

        for t in 0..horizon {
            // choose actions and behavior log-probs for every live rollout
            let mut means: Vec<Option<Vec<T>>> = vec![None; active.len()];
            if let Some(actor) = actor {
                if t == 0 {
                    means.iter_mut().for_each(|m| *m = start_mean.clone());
                } else {
                    let mut states = Matrix::zeros(active.len(), model.obs_dim());
                    for (r, &k) in active.iter().enumerate() {
                        states.row_mut(r).copy_from_slice(out[k].observations.last().expect("non-empty"));
                    }
                    let batch = actor.mean_net.forward_batch(&states)?;
                    for (r, m) in means.iter_mut().enumerate() {
                        *m = Some(batch.row(r).to_vec());
                    }
                }
            }
            for (r, &k) in active.iter().enumerate() {
                let mut action = match plan {
                    ActionPlan::FirstThenActor { first_actions, .. } if t == 0 => first_actions[k].clone(),
                    ActionPlan::FirstThenActor { actor, .. } => {
                        actor.sample_around(means[r].as_ref().expect("actor mean"), &mut rngs[k])
                    }
                    ActionPlan::Sequences { sequences, .. } => sequences[k][t].clone(),
                };
                check_dim(model.action_dim(), action.len(), "imagined action")?;
                self.clip(&mut action);
                let log_prob = match (actor, &means[r]) {
                    (Some(actor), Some(mean)) if actor.sigma().iter().all(|s| *s > T::zero()) => {
                        actor.log_prob_at(mean, &action)?
                    }
                    _ => T::zero(),
                };
                out[k].actions.push(action);
                out[k].behavior_log_probs.push(log_prob);
            }

            let obs_rows: Vec<&[T]> = active
                .iter()
                .map(|&k| out[k].observations.last().expect("non-empty").as_slice())
                .collect();
            let act_rows: Vec<&[T]> = active.iter().map(|&k| out[k].actions[t].as_slice()).collect();
            let predicted = model.predict_batch(&obs_rows, &act_rows)?;

            let mut still_active = Vec::with_capacity(active.len());
            for (&k, next) in active.iter().zip(predicted) {
                let ro = &mut out[k];
                if !all_finite(&next) {
                    ro.diverged = true;
                    ro.terminated_at = Some(t);
                    let last = ro.observations.last().expect("non-empty").clone();
                    ro.observations.push(last);
                    ro.rewards.push(self.divergence_reward);
                    continue;
                }
                let signal = self.reward.evaluate(&next);
                ro.rewards.push(signal.reward);
                ro.observations.push(next);
                if signal.terminated {
                    ro.terminated_at = Some(t);
                } else {
                    still_active.push(k);
                }
            }
            active = still_active;
            if active.is_empty() {
                break;
            }
        }

        // pad finished rollouts out to the full horizon
        for ro in out.iter_mut() {
            let fill_reward = if ro.diverged { self.divergence_reward } else { T::zero() };
            while ro.actions.len() < horizon {
                let last = ro.observations.last().expect("non-empty").clone();
                ro.observations.push(last);
                ro.actions.push(zero_action.clone());
                ro.behavior_log_probs.push(T::zero());
                ro.rewards.push(fill_reward);
            }
        }
        Ok(out)
    }
}

/// A single imagined rollout: `first_action` at step 0, actor samples afterwards.
#[allow(clippy::too_many_arguments)]
pub fn imagine_rollout<T, R, G>(
    model: &DynamicsModel<T>,
    actor: &GaussianPolicy<T>,
    reward: &R,
    start_obs: &[T],
    first_action: &[T],
    horizon: usize,
    bounds: (T, T),
    divergence_reward: T,
    rng: &mut G,
) -> Result<Rollout<T>>
where
    T: Scalar,
    R: RewardModel<T> + ?Sized,
    G: Rng + Clone,
{
    let imagination = Imagination {
        model,
        reward,
        action_low: bounds.0,
        action_high: bounds.1,
        divergence_reward,
    };
    let firsts = [first_action.to_vec()];
    let plan = ActionPlan::FirstThenActor {
        first_actions: &firsts,
        actor,
    };
    let mut rngs = [rng.clone()];
    let mut out = imagination.rollouts(start_obs, &plan, horizon, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.pop().expect("one rollout"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvSpec, RewardSignal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(obs: Vec<f64>, action: Vec<f64>, next_obs: Vec<f64>) -> Transition<f64> {
        Transition {
            obs,
            action,
            reward: 0.0,
            next_obs,
            terminated: false,
            truncated: false,
            behavior_log_prob: None,
        }
    }

    fn alive(_: &[f64]) -> RewardSignal<f64> {
        RewardSignal {
            reward: 1.0,
            terminated: false,
        }
    }

    fn zero_actor(obs_dim: usize) -> GaussianPolicy<f64> {
        GaussianPolicy::new(Mlp::zeros(&[obs_dim, 4, 1]).unwrap(), vec![0.0]).unwrap()
    }

    #[test]
    fn zero_network_predicts_no_change() {
        let mut model = DynamicsModel::from_net(Mlp::zeros(&[5, 8, 4]).unwrap(), 4).unwrap();
        let obs = [0.3, -1.0, 2.0, 0.1];
        assert_eq!(model.predict_next(&obs, &[0.7]).unwrap(), obs.to_vec());
        // holds for any fitted statistics too
        let data: Vec<_> = (0..10)
            .map(|i| transition(vec![i as f64; 4], vec![1.0], vec![i as f64 + 0.5; 4]))
            .collect();
        model.fit_normalization(data.iter());
        assert_eq!(model.predict_next(&obs, &[0.7]).unwrap(), obs.to_vec());
    }

    #[test]
    fn checks_dimensions() {
        let model = DynamicsModel::<f64>::new(4, 1, &[8], 0).unwrap();
        assert!(model.predict_next(&[0.0; 3], &[0.0]).is_err());
        assert!(model.predict_next(&[0.0; 4], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn normalization_round_trip() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.37 - 3.0, (i as f64).sin() * 1e3, 5.0]).collect();
        let norm = Normalizer::fit(3, rows.iter().map(|r| r.as_slice()), true);
        assert!(norm.std.iter().all(|&s| s >= 1e-6));
        for r in &rows {
            let back = norm.denormalize(&norm.normalize(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_transitions_start_near_zero_loss() {
        let model = DynamicsModel::<f64>::from_net(Mlp::zeros(&[3, 8, 2]).unwrap(), 2).unwrap();
        let data: Vec<_> = (0..32)
            .map(|i| {
                let o = vec![i as f64 * 0.1, -(i as f64) * 0.05];
                transition(o.clone(), vec![0.2], o)
            })
            .collect();
        let refs: Vec<_> = data.iter().collect();
        assert_eq!(model.loss(&refs).unwrap(), 0.0);
    }

    #[test]
    fn learns_constant_system() {
        let mut model = DynamicsModel::<f64>::new(2, 1, &[32, 32], 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<_> = (0..256)
            .map(|_| {
                let o = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                transition(o.clone(), vec![rng.gen_range(-1.0..1.0)], o)
            })
            .collect();
        model.fit_normalization(data.iter());
        let refs: Vec<_> = data.iter().collect();
        for _ in 0..500 {
            model.train(&refs, 1e-3).unwrap();
        }
        for t in data.iter().take(20) {
            let next = model.predict_next(&t.obs, &t.action).unwrap();
            let delta = next.iter().zip(&t.obs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(delta < 1e-3);
        }
    }

    #[test]
    fn fits_scalar_linear_system() {
        // s' = s + 0.1 a
        let mut model = DynamicsModel::<f64>::new(1, 1, &[32, 32], 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data: Vec<_> = (0..512)
            .map(|_| {
                let (s, a) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
                transition(vec![s], vec![a], vec![s + 0.1 * a])
            })
            .collect();
        model.fit_normalization(data.iter());
        for _ in 0..1500 {
            let batch: Vec<_> = (0..64).map(|_| &data[rng.gen_range(0..data.len())]).collect();
            model.train(&batch, 1e-3).unwrap();
        }
        let pred = model.predict_next(&[0.0], &[1.0]).unwrap()[0];
        assert!((pred - 0.1).abs() < 0.01, "{pred}");
    }

    #[test]
    fn overfits_one_batch() {
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut data = Vec::new();
        let mut state = spec.reset(0).0;
        while data.len() < 256 {
            let a = vec![rng.gen_range(-3.0..3.0)];
            let obs = spec.observe(&state);
            let (next, r) = spec.step(&state, &a).unwrap();
            data.push(transition(obs, a, r.observation.clone()));
            state = if r.terminated { spec.reset(data.len() as u64).0 } else { next };
        }
        let mut model = DynamicsModel::new(4, 1, &[64, 64], 1).unwrap();
        model.fit_normalization(data.iter());
        let refs: Vec<_> = data.iter().collect();
        let first = model.loss(&refs).unwrap();
        for _ in 0..100 {
            model.train(&refs, 1e-3).unwrap();
        }
        let last = model.loss(&refs).unwrap();
        assert!(last <= 0.5 * first, "{first} -> {last}");
    }

    #[test]
    fn duplicated_rows_give_identical_gradients() {
        let model = DynamicsModel::<f64>::new(2, 1, &[8], 2).unwrap();
        let data = [
            transition(vec![0.1, 0.2], vec![0.5], vec![0.3, 0.1]),
            transition(vec![-0.4, 0.0], vec![-1.0], vec![-0.2, 0.4]),
        ];
        let single: Vec<_> = data.iter().collect();
        let doubled: Vec<_> = data.iter().chain(data.iter()).collect();
        let (xs, ys) = model.training_batch(&single).unwrap();
        let (xd, yd) = model.training_batch(&doubled).unwrap();
        let (ls, gs) = model.net.loss_and_gradients(&xs, &ys, &Loss::Mse).unwrap();
        let (ld, gd) = model.net.loss_and_gradients(&xd, &yd, &Loss::Mse).unwrap();
        assert!((ls - ld).abs() < 1e-15);
        for (a, b) in gs.flatten().iter().zip(gd.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn horizon_one_shape() {
        let model = DynamicsModel::<f64>::new(4, 1, &[8], 0).unwrap();
        let actor = zero_actor(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = imagine_rollout(&model, &actor, &alive, &[0.0; 4], &[0.5], 1, (-3.0, 3.0), 0.0, &mut rng).unwrap();
        assert_eq!(r.observations.len(), 2);
        assert_eq!(r.actions, vec![vec![0.5]]);
        assert_eq!(r.rewards.len(), 1);
        assert_eq!(r.behavior_log_probs.len(), 1);
        assert_eq!(r.observations[0], vec![0.0; 4]);
    }

    #[test]
    fn length_contract_all_horizons() {
        let model = DynamicsModel::<f64>::new(4, 1, &[8], 0).unwrap();
        let actor = GaussianPolicy::new(Mlp::new(&[4, 8, 1], 1).unwrap(), vec![0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for h in 1..=50 {
            let r = imagine_rollout(&model, &actor, &alive, &[0.1; 4], &[0.0], h, (-3.0, 3.0), 0.0, &mut rng).unwrap();
            assert_eq!(r.observations.len(), h + 1);
            assert_eq!(r.actions.len(), h);
            assert_eq!(r.rewards.len(), h);
            assert_eq!(r.behavior_log_probs.len(), h);
            assert!(r.observations.iter().all(|o| all_finite(o)));
            assert!(r.actions.iter().all(|a| a[0] >= -3.0 && a[0] <= 3.0));
        }
    }

    #[test]
    fn deterministic_actor_gives_identical_rollouts() {
        let model = DynamicsModel::<f64>::new(4, 1, &[8], 3).unwrap();
        let actor = GaussianPolicy::new(Mlp::new(&[4, 8, 1], 1).unwrap(), vec![0.0]).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            imagine_rollout(&model, &actor, &alive, &[0.1; 4], &[0.2], 10, (-3.0, 3.0), 0.0, &mut rng).unwrap()
        };
        assert_eq!(run(1), run(1));
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn frozen_double_pendulum_scores_ten_each_step() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let model = DynamicsModel::from_net(Mlp::zeros(&[12, 8, 11]).unwrap(), 11).unwrap();
        let actor = GaussianPolicy::new(Mlp::new(&[11, 8, 1], 1).unwrap(), vec![0.3]).unwrap();
        let start = spec.observe(&spec.equilibrium());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = imagine_rollout(&model, &actor, &spec, &start, &[0.3], 3, (-1.0, 1.0), 0.0, &mut rng).unwrap();
        assert_eq!(r.rewards, vec![10.0; 3]);
    }

    #[test]
    fn termination_stops_accumulation() {
        let model = DynamicsModel::from_net(Mlp::zeros(&[5, 8, 4]).unwrap(), 4).unwrap();
        let actor = zero_actor(4);
        let spec = EnvSpec::<f64>::inverted_pendulum();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // already past the angle limit: the first predicted state terminates
        let r = imagine_rollout(&model, &actor, &spec, &[0.0, 0.3, 0.0, 0.0], &[0.0], 4, (-3.0, 3.0), 0.0, &mut rng).unwrap();
        assert_eq!(r.terminated_at, Some(0));
        assert_eq!(r.rewards, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!r.bootstraps());
    }

    #[test]
    fn divergence_is_penalized() {
        let mut net = Mlp::zeros(&[2, 1]).unwrap();
        net.layer_mut(0).1[0] = f64::INFINITY;
        let model = DynamicsModel::from_net(net, 1).unwrap();
        let actor = zero_actor(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = imagine_rollout(&model, &actor, &alive, &[0.0], &[0.0], 3, (-1.0, 1.0), -5.0, &mut rng).unwrap();
        assert!(r.diverged);
        assert_eq!(r.rewards, vec![-5.0; 3]);
        assert!(r.observations.iter().all(|o| all_finite(o)));
    }

    #[test]
    fn batching_does_not_change_rollouts() {
        let model = DynamicsModel::<f64>::new(4, 1, &[16], 3).unwrap();
        let actor = GaussianPolicy::new(Mlp::new(&[4, 8, 1], 1).unwrap(), vec![0.4]).unwrap();
        let imagination = Imagination {
            model: &model,
            reward: &alive,
            action_low: -3.0,
            action_high: 3.0,
            divergence_reward: 0.0,
        };
        let firsts: Vec<Vec<f64>> = (0..6).map(|k| vec![k as f64 * 0.5 - 1.0]).collect();
        let streams = |range: std::ops::Range<u64>| -> Vec<ChaCha8Rng> { range.map(ChaCha8Rng::seed_from_u64).collect() };
        let plan = ActionPlan::FirstThenActor { first_actions: &firsts, actor: &actor };
        let all = imagination.rollouts(&[0.0; 4], &plan, 7, &mut streams(0..6)).unwrap();
        let head = ActionPlan::FirstThenActor { first_actions: &firsts[..2], actor: &actor };
        let tail = ActionPlan::FirstThenActor { first_actions: &firsts[2..], actor: &actor };
        let mut split = imagination.rollouts(&[0.0; 4], &head, 7, &mut streams(0..2)).unwrap();
        split.extend(imagination.rollouts(&[0.0; 4], &tail, 7, &mut streams(2..6)).unwrap());
        assert_eq!(all, split);
    }
}
