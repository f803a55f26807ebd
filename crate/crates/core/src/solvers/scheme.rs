use serde::{Deserialize, Serialize};

use crate::dynamics::Field;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Explicit fixed-step Runge-Kutta scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Midpoint,
    Rk4,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Euler, Scheme::Midpoint, Scheme::Rk4];

    pub fn order(self) -> u32 {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
        }
    }

    pub fn nfe_per_step(self) -> u64 {
        match self {
            Scheme::Euler => 1,
            Scheme::Midpoint => 2,
            Scheme::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Euler => "euler",
            Scheme::Midpoint => "midpoint",
            Scheme::Rk4 => "rk4",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Some(Scheme::Euler),
            "midpoint" => Some(Scheme::Midpoint),
            "rk4" => Some(Scheme::Rk4),
            _ => None,
        }
    }

    /// `ε^(p+1)`, the scale of the correction term.
    pub fn residual_scale(self, eps: f64) -> f64 {
        eps.powi(self.order() as i32 + 1)
    }
}

/// Right-hand side seen by the scheme at a stage: `(t, y) ↦ f`.
pub type StageFn<'a, T> = dyn FnMut(f64, &[T]) -> Result<Vec<T>> + 'a;

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// `x + ε ψ`.
    pub next: Vec<T>,
    /// The increment `ψ`.
    pub increment: Vec<T>,
    /// The field evaluated at `(t, x)`, reusable as a network input.
    pub first_eval: Vec<T>,
}

fn checked<T: Scalar>(t: f64, v: Vec<T>) -> Result<Vec<T>> {
    if all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::Blowup { t, step: None })
    }
}

fn shift<T: Scalar>(x: &[T], c: f64, k: &[T]) -> Vec<T> {
    x.iter()
        .zip(k)
        .map(|(&a, &b)| T::lin_comb(&[(a, 1.0), (b, c)]))
        .collect()
}

/// One step of `scheme` on an arbitrary stage field.
pub fn scheme_step<T: Scalar>(
    scheme: Scheme,
    t: f64,
    x: &[T],
    eps: f64,
    field: &mut StageFn<'_, T>,
) -> Result<StepOutput<T>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {eps}"
        )));
    }
    let k1 = checked(t, field(t, x)?)?;
    let increment = match scheme {
        Scheme::Euler => k1.clone(),
        Scheme::Midpoint => {
            let th = t + 0.5 * eps;
            checked(th, field(th, &shift(x, 0.5 * eps, &k1))?)?
        }
        Scheme::Rk4 => {
            let th = t + 0.5 * eps;
            let k2 = checked(th, field(th, &shift(x, 0.5 * eps, &k1))?)?;
            let k3 = checked(th, field(th, &shift(x, 0.5 * eps, &k2))?)?;
            let k4 = checked(t + eps, field(t + eps, &shift(x, eps, &k3))?)?;
            (0..x.len())
                .map(|i| {
                    T::lin_comb(&[
                        (k1[i], 1.0 / 6.0),
                        (k2[i], 1.0 / 3.0),
                        (k3[i], 1.0 / 3.0),
                        (k4[i], 1.0 / 6.0),
                    ])
                })
                .collect()
        }
    };
    let next = checked(t + eps, shift(x, eps, &increment))?;
    Ok(StepOutput {
        next,
        increment,
        first_eval: k1,
    })
}

/// One step with the control held constant across all stages.
pub fn fixed_step<T: Scalar, F: Field<T> + ?Sized>(
    scheme: Scheme,
    f: &F,
    t: f64,
    x: &[T],
    u: &[T],
    eps: f64,
) -> Result<Vec<T>> {
    let mut field = |_: f64, y: &[T]| f.eval(y, u);
    Ok(scheme_step(scheme, t, x, eps, &mut field)?.next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dynamics, FnField};

    fn growth() -> FnField<impl Fn(&[f64], &[f64]) -> Vec<f64>> {
        FnField::new(1, 0, |x: &[f64], _: &[f64]| vec![x[0]])
    }

    #[test]
    fn euler_spring_mass_hand_step() {
        let f = Dynamics::SpringMass(Default::default());
        let next = fixed_step(Scheme::Euler, &f, 0.0, &[1.0, 0.0], &[0.0], 0.1).unwrap();
        assert_eq!(next, vec![1.0, -0.05]);
    }

    #[test]
    fn midpoint_and_rk4_on_growth() {
        let f = growth();
        let m = fixed_step(Scheme::Midpoint, &f, 0.0, &[1.0], &[], 0.1).unwrap()[0];
        assert!((m - 1.105).abs() < 1e-15);
        let r = fixed_step(Scheme::Rk4, &f, 0.0, &[1.0], &[], 0.1).unwrap()[0];
        let taylor = 1.0 + 0.1 + 0.01 / 2.0 + 0.001 / 6.0 + 0.0001 / 24.0;
        assert!((r - taylor).abs() < 1e-15);
    }

    #[test]
    fn stage_counts() {
        for scheme in Scheme::ALL {
            let mut calls = 0;
            let mut field = |_: f64, y: &[f64]| {
                calls += 1;
                Ok(vec![y[0]])
            };
            scheme_step(scheme, 0.0, &[1.0], 0.1, &mut field).unwrap();
            assert_eq!(calls as u64, scheme.nfe_per_step());
        }
    }

    #[test]
    fn non_finite_field_is_blowup_with_time() {
        let mut field = |t: f64, _: &[f64]| Ok(vec![if t > 0.0 { f64::NAN } else { 1.0 }]);
        let err = scheme_step(Scheme::Midpoint, 2.0, &[1.0], 0.5, &mut field).unwrap_err();
        assert_eq!(err, Error::Blowup { t: 2.0, step: None });
        let mut field = |t: f64, _: &[f64]| Ok(vec![if t > 0.1 { f64::INFINITY } else { 1.0 }]);
        let err = scheme_step(Scheme::Rk4, 0.0, &[1.0], 0.5, &mut field).unwrap_err();
        assert_eq!(
            err,
            Error::Blowup {
                t: 0.25,
                step: None
            }
        );
    }

    #[test]
    fn non_positive_step_rejected() {
        let f = growth();
        assert!(fixed_step(Scheme::Euler, &f, 0.0, &[1.0], &[], 0.0).is_err());
        assert!(fixed_step(Scheme::Euler, &f, 0.0, &[1.0], &[], -0.1).is_err());
    }
}
