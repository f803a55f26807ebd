use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpringMassParams {
    pub m: f64,
    pub k: f64,
}

impl Default for SpringMassParams {
    fn default() -> Self {
        Self { m: 1.0, k: 0.5 }
    }
}

impl SpringMassParams {
    pub fn validate(&self) -> Result<()> {
        positive("spring_mass.m", self.m)?;
        positive("spring_mass.k", self.k)
    }
}

/// Elastic-joint pendulum with target `q = 0`. Gravity enters as `−m g l sin q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumParams {
    pub m: f64,
    pub k: f64,
    pub l: f64,
    pub beta: f64,
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m: 1.0,
            k: 0.5,
            l: 1.0,
            beta: 0.01,
            g: 9.81,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        positive("pendulum.m", self.m)?;
        positive("pendulum.l", self.l)?;
        positive("pendulum.g", self.g)?;
        non_negative("pendulum.k", self.k)?;
        non_negative("pendulum.beta", self.beta)
    }
}

/// Cart-pole with Coulomb cart friction and viscous pivot friction. `l` is the half-pole length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleParams {
    pub m_c: f64,
    pub m_p: f64,
    pub l: f64,
    pub g: f64,
    pub mu_c: f64,
    pub mu_p: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            m_c: 1.0,
            m_p: 0.1,
            l: 0.5,
            g: 9.81,
            mu_c: 0.1,
            mu_p: 0.03,
        }
    }
}

impl CartPoleParams {
    pub fn frictionless(self) -> Self {
        Self {
            mu_c: 0.0,
            mu_p: 0.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        positive("cartpole.m_c", self.m_c)?;
        positive("cartpole.m_p", self.m_p)?;
        positive("cartpole.l", self.l)?;
        positive("cartpole.g", self.g)?;
        non_negative("cartpole.mu_c", self.mu_c)?;
        non_negative("cartpole.mu_p", self.mu_p)
    }
}

pub(crate) fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

pub(crate) fn non_negative(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

/// `(q, p) ↦ (p/m, −k q + u)`.
pub fn eval_spring_mass<T: Scalar>(x: &[T], u: &[T], p: &SpringMassParams) -> Result<Vec<T>> {
    check_len("spring-mass state", 2, x.len())?;
    check_len("spring-mass control", 1, u.len())?;
    let (q, mom) = (x[0], x[1]);
    Ok(vec![mom / p.m, u[0] - q * p.k])
}

/// `(q, p) ↦ (p/m, −k q − (β/m) p − m g l sin q + u)`.
pub fn eval_pendulum<T: Scalar>(x: &[T], u: &[T], p: &PendulumParams) -> Result<Vec<T>> {
    check_len("pendulum state", 2, x.len())?;
    check_len("pendulum control", 1, u.len())?;
    let (q, mom) = (x[0], x[1]);
    let dp = u[0] - q * p.k - mom * (p.beta / p.m) - q.sin() * (p.m * p.g * p.l);
    Ok(vec![mom / p.m, dp])
}

/// State `(x, ẋ, θ, θ̇)` with `θ = 0` upright, control a horizontal force on the cart.
///
/// The pole acceleration is solved first, then substituted into the normal
/// force on the cart, then into the cart acceleration. The normal force is
/// taken as positive, so the friction direction is `sgn(ẋ)` with `sgn(0) = 0`.
pub fn eval_cartpole<T: Scalar>(x: &[T], u: &[T], p: &CartPoleParams) -> Result<Vec<T>> {
    check_len("cart-pole state", 4, x.len())?;
    check_len("cart-pole control", 1, u.len())?;
    let (xd, th, thd) = (x[1], x[2], x[3]);
    let force = u[0];
    let total = p.m_c + p.m_p;
    let pml = p.m_p * p.l;
    let s = xd.signum0();
    let (st, ct) = (th.sin(), th.cos());
    let thd2 = thd * thd;

    let push = (-force - thd2 * (st + s * ct * p.mu_c) * pml) / total + s * (p.mu_c * p.g);
    let num = st * p.g + ct * push - thd * (p.mu_p / pml);
    let den = ((ct - s * p.mu_c) * ct * (-p.m_p / total) + 4.0 / 3.0) * p.l;
    let thdd = num / den;

    let normal = -((thdd * st + thd2 * ct) * pml) + total * p.g;
    let xdd = (force + (thd2 * st - thdd * ct) * pml - normal * s * p.mu_c) / total;
    Ok(vec![xd, xdd, thd, thdd])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn spring_mass_hand_values() {
        let p = SpringMassParams::default();
        assert_eq!(
            eval_spring_mass(&[0.0, 0.0], &[0.0], &p).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            eval_spring_mass(&[1.0, 0.0], &[0.0], &p).unwrap(),
            vec![0.0, -0.5]
        );
        assert_eq!(
            eval_spring_mass(&[0.0, 2.0], &[1.0], &p).unwrap(),
            vec![2.0, 1.0]
        );
        assert!(matches!(
            eval_spring_mass(&[0.0], &[0.0], &p),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn pendulum_hand_values() {
        let p = PendulumParams::default();
        assert_eq!(
            eval_pendulum(&[0.0, 0.0], &[0.0], &p).unwrap(),
            vec![0.0, 0.0]
        );
        let d = eval_pendulum(&[PI, 0.0], &[0.0], &p).unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[1] + 0.5 * PI).abs() < 1e-12);
        let d = eval_pendulum(&[0.0, 1.0], &[0.0], &p).unwrap();
        assert_eq!(d[0], 1.0);
        assert!((d[1] + 0.01).abs() < 1e-15);
        assert!(eval_pendulum(&[0.0, 1.0], &[0.0, 1.0], &p).is_err());
    }

    #[test]
    fn cartpole_equilibria_and_push() {
        let p = CartPoleParams::default().frictionless();
        assert_eq!(
            eval_cartpole(&[0.0; 4], &[0.0], &p).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0]
        );
        let d = eval_cartpole(&[0.0; 4], &[1.0], &p).unwrap();
        assert!((d[1] - 0.975_609_756).abs() < 1e-6);
        assert!((d[3] + 1.463_414_634).abs() < 1e-6);
        let d = eval_cartpole(&[0.0, 0.0, PI, 0.0], &[0.0], &p).unwrap();
        for v in d {
            assert!(v.abs() < 1e-14);
        }
    }

    /// Frictionless cart-pole in the classic control-benchmark form.
    fn frictionless_oracle(x: &[f64], force: f64, p: &CartPoleParams) -> [f64; 4] {
        let total = p.m_c + p.m_p;
        let pml = p.m_p * p.l;
        let (st, ct) = (x[2].sin(), x[2].cos());
        let temp = (force + pml * x[3] * x[3] * st) / total;
        let thacc = (p.g * st - ct * temp) / (p.l * (4.0 / 3.0 - p.m_p * ct * ct / total));
        let xacc = temp - pml * thacc * ct / total;
        [x[1], xacc, x[3], thacc]
    }

    #[test]
    fn frictionless_matches_oracle_on_random_states() {
        let p = CartPoleParams::default().frictionless();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let force = rng.random_range(-20.0..20.0);
            let got = eval_cartpole(&x, &[force], &p).unwrap();
            let want = frictionless_oracle(&x, force, &p);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn friction_opposes_cart_motion() {
        let full = CartPoleParams::default();
        let fwd = eval_cartpole(&[0.0, 1.0, 0.0, 0.0], &[0.0], &full).unwrap();
        let free = eval_cartpole(&[0.0, 1.0, 0.0, 0.0], &[0.0], &full.frictionless()).unwrap();
        assert!(fwd[1] < free[1]);
        // at rest the Coulomb term vanishes
        let rest = eval_cartpole(&[0.0, 0.0, 0.3, 0.0], &[0.0], &full).unwrap();
        let rest_free = eval_cartpole(&[0.0, 0.0, 0.3, 0.0], &[0.0], &full.frictionless()).unwrap();
        assert_eq!(rest, rest_free);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SpringMassParams { m: 0.0, k: 1.0 }.validate().is_err());
        assert!(PendulumParams {
            beta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(CartPoleParams {
            mu_c: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
