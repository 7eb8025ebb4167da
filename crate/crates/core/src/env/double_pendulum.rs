use serde::{Deserialize, Serialize};

use super::{solve_spd, EnvState, RewardSignal};
use crate::scalar::Scalar;

/// Cart carrying two point-mass pendulum links in series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoublePendulumParams {
    pub gravity: f64,
    pub cart_mass: f64,
    /// Point mass at the end of the first link.
    pub mass1: f64,
    /// Point mass at the tip of the second link.
    pub mass2: f64,
    pub length1: f64,
    pub length2: f64,
    /// Newtons per action unit.
    pub gear: f64,
    pub cart_damping: f64,
    pub joint_damping: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            cart_mass: 1.0,
            mass1: 0.1,
            mass2: 0.1,
            length1: 1.0,
            length2: 1.0,
            gear: 10.0,
            cart_damping: 0.0,
            joint_damping: 0.0,
        }
    }
}

impl DoublePendulumParams {
    pub(super) fn validate(&self) -> Result<(), String> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("mass1", self.mass1),
            ("mass2", self.mass2),
            ("length1", self.length1),
            ("length2", self.length2),
            ("gear", self.gear),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("env.double_pendulum.{name} > 0 violated ({v})"));
            }
        }
        if !(self.cart_damping >= 0.0 && self.joint_damping >= 0.0) {
            return Err("env.double_pendulum damping >= 0 violated".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(super) struct DoublePendulum<T> {
    g: T,
    cart_mass: T,
    m1: T,
    m2: T,
    l1: T,
    l2: T,
    pub(super) gear: T,
    cart_damping: T,
    joint_damping: T,
}

impl<T: Scalar> DoublePendulum<T> {
    pub(super) fn new(p: &DoublePendulumParams) -> Self {
        Self {
            g: T::lit(p.gravity),
            cart_mass: T::lit(p.cart_mass),
            m1: T::lit(p.mass1),
            m2: T::lit(p.mass2),
            l1: T::lit(p.length1),
            l2: T::lit(p.length2),
            gear: T::lit(p.gear),
            cart_damping: T::lit(p.cart_damping),
            joint_damping: T::lit(p.joint_damping),
        }
    }

    /// Mass matrix and generalized forces in absolute link angles `[x, phi1, phi2]`.
    fn absolute_system(&self, x_dot: T, phi: [T; 2], phi_dot: [T; 2], force: T) -> ([[T; 3]; 3], [T; 3]) {
        let (m1, m2, l1, l2) = (self.m1, self.m2, self.l1, self.l2);
        let m12 = m1 + m2;
        let (s1, c1) = phi[0].sin_cos();
        let (s2, c2) = phi[1].sin_cos();
        let (s12, c12) = (phi[0] - phi[1]).sin_cos();
        let mass = [
            [self.cart_mass + m12, m12 * l1 * c1, m2 * l2 * c2],
            [m12 * l1 * c1, m12 * l1 * l1, m2 * l1 * l2 * c12],
            [m2 * l2 * c2, m2 * l1 * l2 * c12, m2 * l2 * l2],
        ];
        // Joint damping acts on the hinge rates: phi1' and (phi2' - phi1').
        let rel = phi_dot[1] - phi_dot[0];
        let d = self.joint_damping;
        let rhs = [
            force + m12 * l1 * s1 * phi_dot[0] * phi_dot[0] + m2 * l2 * s2 * phi_dot[1] * phi_dot[1]
                - self.cart_damping * x_dot,
            -m2 * l1 * l2 * s12 * phi_dot[1] * phi_dot[1] + m12 * self.g * l1 * s1 - d * phi_dot[0] + d * rel,
            m2 * l1 * l2 * s12 * phi_dot[0] * phi_dot[0] + m2 * self.g * l2 * s2 - d * rel,
        ];
        (mass, rhs)
    }

    /// Accelerations in the relative coordinates `[x, theta1, theta2]`.
    pub(super) fn accelerations(&self, q: &[T], qd: &[T], force: T) -> [T; 3] {
        let phi = [q[1], q[1] + q[2]];
        let phi_dot = [qd[1], qd[1] + qd[2]];
        let (mass, rhs) = self.absolute_system(qd[0], phi, phi_dot, force);
        let acc = solve_spd(mass, rhs);
        [acc[0], acc[1], acc[2] - acc[1]]
    }

    pub(super) fn energy(&self, q: &[T], qd: &[T]) -> T {
        let phi = [q[1], q[1] + q[2]];
        let phi_dot = [qd[1], qd[1] + qd[2]];
        let (mass, _) = self.absolute_system(qd[0], phi, phi_dot, T::zero());
        let v = [qd[0], phi_dot[0], phi_dot[1]];
        let half = T::lit(0.5);
        let mut kinetic = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                kinetic += half * v[i] * mass[i][j] * v[j];
            }
        }
        let y1 = self.l1 * phi[0].cos();
        let y2 = y1 + self.l2 * phi[1].cos();
        kinetic + self.g * (self.m1 * y1 + self.m2 * y2)
    }

    /// Tip height and its rate of change, recovered from the observation layout.
    pub(super) fn tip_height(&self, obs: &[T]) -> (T, T) {
        let (s1, s2, c1, c2) = (obs[1], obs[2], obs[3], obs[4]);
        let (w1, w2) = (obs[6], obs[7]);
        let c_sum = c1 * c2 - s1 * s2;
        let s_sum = s1 * c2 + c1 * s2;
        let height = self.l1 * c1 + self.l2 * c_sum;
        let rate = -self.l1 * s1 * w1 - self.l2 * s_sum * (w1 + w2);
        (height, rate)
    }

    pub(super) fn reward(&self, obs: &[T]) -> RewardSignal<T> {
        let (x, x_dot) = (obs[0], obs[5]);
        let (y, y_dot) = self.tip_height(obs);
        let two = T::lit(2.0);
        let reward = T::lit(10.0)
            - T::lit(0.01) * x * x
            - (y - two) * (y - two)
            - T::lit(1e-3) * x_dot * x_dot
            - T::lit(5e-3) * y_dot * y_dot;
        RewardSignal {
            reward,
            terminated: y <= T::one(),
        }
    }
}

/// `[x, sin t1, sin t2, cos t1, cos t2, x', t1', t2', 0, 0, 0]`; the last three
/// slots hold constraint forces, which this simulator does not compute.
pub(super) fn observe<T: Scalar>(state: &EnvState<T>) -> Vec<T> {
    let (s1, c1) = state.q[1].sin_cos();
    let (s2, c2) = state.q[2].sin_cos();
    vec![
        state.q[0],
        s1,
        s2,
        c1,
        c2,
        state.qd[0],
        state.qd[1],
        state.qd[2],
        T::zero(),
        T::zero(),
        T::zero(),
    ]
}

#[cfg(test)]
mod tests {
    use crate::env::EnvSpec;

    #[test]
    fn reward_at_target_tip_height() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        // x1 = 0, both links upright so the tip sits at height 2
        let obs = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let r = spec.reward_from_observation(&obs);
        assert_eq!(r.reward, 10.0);
        assert!(!r.terminated);
    }

    #[test]
    fn reward_never_exceeds_ten() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let mut s = spec.reset(3).0;
        for i in 0..200 {
            let a = if i % 7 < 3 { 1.0 } else { -1.0 };
            let (n, r) = spec.step(&s, &[a]).unwrap();
            assert!(r.reward <= 10.0);
            s = n;
        }
    }

    #[test]
    fn terminates_when_tip_drops() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let mut s = spec.equilibrium();
        // first link at 90 degrees: tip height = cos(pi/2) + cos(pi/2) = 0
        s.q[1] = std::f64::consts::FRAC_PI_2;
        let obs = spec.observe(&s);
        assert!(spec.reward_from_observation(&obs).terminated);
    }

    #[test]
    fn tip_rate_matches_finite_difference() {
        let spec = EnvSpec::<f64>::inverted_double_pendulum();
        let mut s = spec.equilibrium();
        s.q = vec![0.0, 0.3, -0.2];
        s.qd = vec![0.0, 0.7, -1.1];
        let h = 1e-6;
        let height = |q1: f64, q2: f64| -> f64 { q1.cos() + (q1 + q2).cos() };
        let fd = (height(s.q[1] + h * s.qd[1], s.q[2] + h * s.qd[2])
            - height(s.q[1] - h * s.qd[1], s.q[2] - h * s.qd[2]))
            / (2.0 * h);
        // reward velocity term uses the observation-derived rate
        let obs = spec.observe(&s);
        let r = spec.reward_from_observation(&obs).reward;
        let y = height(s.q[1], s.q[2]);
        let expected = 10.0 - (y - 2.0).powi(2) - 5e-3 * fd * fd;
        assert!((r - expected).abs() < 1e-8);
    }

    #[test]
    fn energy_conserved_without_force() {
        // the falling double pendulum spins fast; resolve it finely
        let mut cfg = crate::env::EnvConfig::new(crate::env::EnvKind::InvertedDoublePendulum);
        cfg.substeps = Some(200);
        let spec = EnvSpec::<f64>::new(&cfg);
        let mut s = spec.equilibrium();
        s.q = vec![0.0, 0.05, -0.03];
        let e0 = spec.mechanical_energy(&s);
        for _ in 0..100 {
            s = spec.step(&s, &[0.0]).unwrap().0;
            let e = spec.mechanical_energy(&s);
            assert!(((e - e0) / e0).abs() < 0.01);
        }
    }
}
