use serde::{Deserialize, Serialize};

use super::{solve_spd, EnvState, RewardSignal};
use crate::scalar::Scalar;

const ANGLE_LIMIT: f64 = 0.2;

/// Cart with a uniform rod hinged on top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from the hinge to the pole's centre of mass (half the rod length).
    pub pole_half_length: f64,
    /// Newtons per action unit.
    pub gear: f64,
    pub cart_damping: f64,
    pub joint_damping: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gear: 1.0,
            cart_damping: 0.0,
            joint_damping: 0.0,
        }
    }
}

impl CartPoleParams {
    pub(super) fn validate(&self) -> Result<(), String> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("gear", self.gear),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("env.cart_pole.{name} > 0 violated ({v})"));
            }
        }
        if !(self.cart_damping >= 0.0 && self.joint_damping >= 0.0) {
            return Err("env.cart_pole damping >= 0 violated".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(super) struct CartPole<T> {
    g: T,
    cart_mass: T,
    pole_mass: T,
    half_length: T,
    pub(super) gear: T,
    cart_damping: T,
    joint_damping: T,
}

impl<T: Scalar> CartPole<T> {
    pub(super) fn new(p: &CartPoleParams) -> Self {
        Self {
            g: T::lit(p.gravity),
            cart_mass: T::lit(p.cart_mass),
            pole_mass: T::lit(p.pole_mass),
            half_length: T::lit(p.pole_half_length),
            gear: T::lit(p.gear),
            cart_damping: T::lit(p.cart_damping),
            joint_damping: T::lit(p.joint_damping),
        }
    }

    /// Mass matrix and generalized forces for `q = [x, theta]`, theta from upright.
    fn system(&self, q: &[T], qd: &[T], force: T) -> ([[T; 2]; 2], [T; 2]) {
        let (m, l) = (self.pole_mass, self.half_length);
        let (s, c) = q[1].sin_cos();
        let ml = m * l;
        let mass = [
            [self.cart_mass + m, ml * c],
            [ml * c, T::lit(4.0 / 3.0) * ml * l],
        ];
        let rhs = [
            force + ml * s * qd[1] * qd[1] - self.cart_damping * qd[0],
            ml * self.g * s - self.joint_damping * qd[1],
        ];
        (mass, rhs)
    }

    pub(super) fn accelerations(&self, q: &[T], qd: &[T], force: T) -> [T; 2] {
        let (mass, rhs) = self.system(q, qd, force);
        solve_spd(mass, rhs)
    }

    pub(super) fn energy(&self, q: &[T], qd: &[T]) -> T {
        let (mass, _) = self.system(q, qd, T::zero());
        let half = T::lit(0.5);
        let mut kinetic = T::zero();
        for i in 0..2 {
            for j in 0..2 {
                kinetic += half * qd[i] * mass[i][j] * qd[j];
            }
        }
        kinetic + self.pole_mass * self.g * self.half_length * q[1].cos()
    }
}

/// `[x, theta, x_dot, theta_dot]`
pub(super) fn observe<T: Scalar>(state: &EnvState<T>) -> Vec<T> {
    vec![state.q[0], state.q[1], state.qd[0], state.qd[1]]
}

pub(super) fn reward<T: Scalar>(obs: &[T]) -> RewardSignal<T> {
    RewardSignal {
        reward: T::one(),
        terminated: obs[1].abs() >= T::lit(ANGLE_LIMIT),
    }
}
