use rand::Rng;
use rand_distr::StandardNormal;

use super::Mlp;
use crate::error::{check_dim, Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Diagonal Gaussian policy: the mean comes from a network, the standard
/// deviation is a fixed per-dimension constant.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy<T> {
    pub mean_net: Mlp<T>,
    sigma: Vec<T>,
}

impl<T: Scalar> GaussianPolicy<T> {
    /// `sigma` may contain zeros (a deterministic policy); densities then are undefined.
    pub fn new(mean_net: Mlp<T>, sigma: Vec<T>) -> Result<Self> {
        check_dim(mean_net.output_dim(), sigma.len(), "policy sigma")?;
        if sigma.iter().any(|s| !s.is_finite() || *s < T::zero()) {
            return Err(Error::InvalidConfig("policy sigma must be finite and >= 0".into()));
        }
        Ok(Self { mean_net, sigma })
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn action_dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn mean(&self, state: &[T]) -> Result<Vec<T>> {
        self.mean_net.forward(state)
    }

    pub fn log_prob(&self, state: &[T], action: &[T]) -> Result<T> {
        let mean = self.mean(state)?;
        self.log_prob_at(&mean, action)
    }

    /// Log-density of `action` given a precomputed mean.
    pub fn log_prob_at(&self, mean: &[T], action: &[T]) -> Result<T> {
        check_dim(self.sigma.len(), action.len(), "action")?;
        check_dim(self.sigma.len(), mean.len(), "policy mean")?;
        if self.sigma.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::InvalidConfig("log-density needs sigma > 0".into()));
        }
        if !all_finite(action) || !all_finite(mean) {
            return Err(Error::NonFinite("log-density input"));
        }
        let half = T::lit(0.5);
        let log_two_pi = T::lit((2.0 * std::f64::consts::PI).ln());
        Ok(mean
            .iter()
            .zip(action)
            .zip(&self.sigma)
            .map(|((&m, &a), &s)| {
                let z = (a - m) / s;
                -half * z * z - s.ln() - half * log_two_pi
            })
            .sum())
    }

    /// `mean + sigma * N(0, I)`; no clipping.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[T], rng: &mut R) -> Result<Vec<T>> {
        let mean = self.mean(state)?;
        Ok(self.sample_around(&mean, rng))
    }

    pub fn sample_around<R: Rng + ?Sized>(&self, mean: &[T], rng: &mut R) -> Vec<T> {
        mean.iter()
            .zip(&self.sigma)
            .map(|(&m, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                m + s * T::lit(z)
            })
            .collect()
    }
}
