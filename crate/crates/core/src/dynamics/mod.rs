//! Controlled vector fields `f(x, u)` of the benchmark systems.
//!
//! All systems are time-invariant, so no evaluation takes `t`.

mod linear;
mod mechanical;
mod quadcopter;

use std::sync::Arc;

pub use linear::{beam_initial_state, eval_linear, timoshenko_standin, BeamParams, LinearSystem};
pub use mechanical::{
    eval_cartpole, eval_pendulum, eval_spring_mass, CartPoleParams, PendulumParams,
    SpringMassParams,
};
pub use quadcopter::{eval_quadcopter, QuadcopterParams};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// A controlled vector field over scalars of type `T`.
pub trait Field<T> {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn eval(&self, x: &[T], u: &[T]) -> Result<Vec<T>>;
}

impl<T, F: Field<T> + ?Sized> Field<T> for &F {
    fn n_x(&self) -> usize {
        (**self).n_x()
    }
    fn n_u(&self) -> usize {
        (**self).n_u()
    }
    fn eval(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        (**self).eval(x, u)
    }
}

/// A field defined by a closure, for test problems and ad-hoc systems.
pub struct FnField<F> {
    n_x: usize,
    n_u: usize,
    f: F,
}

impl<F> FnField<F> {
    pub fn new(n_x: usize, n_u: usize, f: F) -> Self {
        Self { n_x, n_u, f }
    }
}

impl<T, F> Field<T> for FnField<F>
where
    F: Fn(&[T], &[T]) -> Vec<T>,
{
    fn n_x(&self) -> usize {
        self.n_x
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn eval(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        check_len("state", self.n_x, x.len())?;
        check_len("control", self.n_u, u.len())?;
        Ok((self.f)(x, u))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    SpringMass(SpringMassParams),
    Pendulum(PendulumParams),
    /// Cart-pole including both friction terms.
    CartPoleFull(CartPoleParams),
    /// Cart-pole with the friction coefficients ignored.
    CartPolePartial(CartPoleParams),
    Quadcopter(QuadcopterParams),
    Linear(Arc<LinearSystem>),
}

impl Dynamics {
    pub fn kind(&self) -> &'static str {
        match self {
            Dynamics::SpringMass(_) => "spring_mass",
            Dynamics::Pendulum(_) => "pendulum",
            Dynamics::CartPoleFull(_) => "cartpole_full",
            Dynamics::CartPolePartial(_) => "cartpole_partial",
            Dynamics::Quadcopter(_) => "quadcopter",
            Dynamics::Linear(_) => "linear",
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Dynamics::SpringMass(_) | Dynamics::Pendulum(_) => (2, 1),
            Dynamics::CartPoleFull(_) | Dynamics::CartPolePartial(_) => (4, 1),
            Dynamics::Quadcopter(_) => (12, 4),
            Dynamics::Linear(sys) => (sys.n_x(), sys.n_u()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dynamics::SpringMass(p) => p.validate(),
            Dynamics::Pendulum(p) => p.validate(),
            Dynamics::CartPoleFull(p) | Dynamics::CartPolePartial(p) => p.validate(),
            Dynamics::Quadcopter(p) => p.validate(),
            Dynamics::Linear(_) => Ok(()),
        }
    }

    /// The same system with modelling knowledge removed; only the cart-pole has one.
    pub fn partial(&self) -> Dynamics {
        match self {
            Dynamics::CartPoleFull(p) => Dynamics::CartPolePartial(*p),
            other => other.clone(),
        }
    }
}

impl<T: Scalar> Field<T> for Dynamics {
    fn n_x(&self) -> usize {
        self.dims().0
    }
    fn n_u(&self) -> usize {
        self.dims().1
    }
    fn eval(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        match self {
            Dynamics::SpringMass(p) => eval_spring_mass(x, u, p),
            Dynamics::Pendulum(p) => eval_pendulum(x, u, p),
            Dynamics::CartPoleFull(p) => eval_cartpole(x, u, p),
            Dynamics::CartPolePartial(p) => eval_cartpole(x, u, &p.frictionless()),
            Dynamics::Quadcopter(p) => eval_quadcopter(x, u, p),
            Dynamics::Linear(sys) => eval_linear(x, u, sys),
        }
    }
}

/// A system together with its admissible control box.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsSpec {
    pub dynamics: Dynamics,
    pub control_bounds: Option<Vec<(f64, f64)>>,
}

impl DynamicsSpec {
    pub fn new(dynamics: Dynamics) -> Self {
        Self {
            dynamics,
            control_bounds: None,
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        check_len("control bounds", self.dynamics.dims().1, bounds.len())?;
        if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidInput(format!(
                "empty control interval [{lo}, {hi}]"
            )));
        }
        self.control_bounds = Some(bounds);
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.dynamics.dims().0
    }

    pub fn n_u(&self) -> usize {
        self.dynamics.dims().1
    }

    /// Checks a control against the declared box.
    pub fn check_control(&self, u: &[f64]) -> Result<()> {
        check_len("control", self.n_u(), u.len())?;
        if let Some(bounds) = &self.control_bounds {
            for (i, (&v, &(lo, hi))) in u.iter().zip(bounds).enumerate() {
                if !(lo..=hi).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "control {i} = {v} outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Field<T> for DynamicsSpec {
    fn n_x(&self) -> usize {
        self.n_x()
    }
    fn n_u(&self) -> usize {
        self.n_u()
    }
    fn eval(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.dynamics.eval(x, u)
    }
}

/// Row-wise evaluation over a batch; identical to looping the scalar evaluation.
pub fn eval_batched<F: Field<f64> + ?Sized>(
    f: &F,
    states: &[Vec<f64>],
    controls: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if states.len() != controls.len() {
        return Err(Error::InvalidInput(format!(
            "batch length mismatch: {} states, {} controls",
            states.len(),
            controls.len()
        )));
    }
    states
        .iter()
        .zip(controls)
        .map(|(x, u)| f.eval(x, u))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_systems() -> Vec<Dynamics> {
        vec![
            Dynamics::SpringMass(Default::default()),
            Dynamics::Pendulum(Default::default()),
            Dynamics::CartPoleFull(Default::default()),
            Dynamics::CartPolePartial(Default::default()),
            Dynamics::Quadcopter(Default::default()),
            Dynamics::Linear(Arc::new(
                timoshenko_standin(&BeamParams::default()).unwrap(),
            )),
        ]
    }

    #[test]
    fn dims_match_kind() {
        let dims: Vec<_> = all_systems().iter().map(|d| d.dims()).collect();
        assert_eq!(
            dims,
            vec![(2, 1), (2, 1), (4, 1), (4, 1), (12, 4), (160, 2)]
        );
    }

    #[test]
    fn equilibria_give_exact_zero() {
        for sys in all_systems() {
            let (nx, nu) = sys.dims();
            let d: Vec<f64> = sys.eval(&vec![0.0; nx], &vec![0.0; nu]).unwrap();
            let skip = matches!(sys, Dynamics::Quadcopter(_));
            if !skip {
                assert!(d.iter().all(|&v| v == 0.0), "{}", sys.kind());
            }
        }
    }

    #[test]
    fn batch_equals_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for sys in all_systems() {
            let (nx, nu) = sys.dims();
            let states: Vec<Vec<f64>> = (0..16)
                .map(|_| (0..nx).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let controls: Vec<Vec<f64>> = (0..16)
                .map(|_| (0..nu).map(|_| rng.random_range(0.0..2.0)).collect())
                .collect();
            let batch = eval_batched(&sys, &states, &controls).unwrap();
            for i in 0..16 {
                let single: Vec<f64> = sys.eval(&states[i], &controls[i]).unwrap();
                assert_eq!(batch[i], single);
            }
            let one = eval_batched(&sys, &states[..1], &controls[..1]).unwrap();
            assert_eq!(one[0], batch[0]);
        }
        let sm = Dynamics::SpringMass(Default::default());
        let eq = eval_batched(&sm, &vec![vec![0.0, 0.0]; 3], &vec![vec![0.0]; 3]).unwrap();
        assert_eq!(eq, vec![vec![0.0, 0.0]; 3]);
        assert!(eval_batched(&sm, &[vec![0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn control_bounds_checked() {
        let spec = DynamicsSpec::new(Dynamics::Pendulum(Default::default()))
            .with_bounds(vec![(-5.0, 5.0)])
            .unwrap();
        assert!(spec.check_control(&[5.0]).is_ok());
        assert!(spec.check_control(&[5.1]).is_err());
        assert!(DynamicsSpec::new(Dynamics::Pendulum(Default::default()))
            .with_bounds(vec![(1.0, -1.0)])
            .is_err());
    }

    #[test]
    fn partial_strips_friction_only_for_cartpole() {
        let full = Dynamics::CartPoleFull(Default::default());
        assert_eq!(full.partial().kind(), "cartpole_partial");
        let p = Dynamics::Pendulum(Default::default());
        assert_eq!(p.partial(), p);
    }
}
