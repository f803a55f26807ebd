use serde::{Deserialize, Serialize};

use super::dopri5::{dopri5_final, dopri5_solve, DenseSolution, Dopri5Options};
use super::scheme::{scheme_step, Scheme, StageFn};
use crate::dynamics::Field;
use crate::error::{Error, Result};

/// Oracle used to produce "exact" solutions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    Dopri5 {
        rtol: f64,
        atol: f64,
    },
    /// Classical RK4 with `substeps` equal sub-steps per requested interval;
    /// used where the field is non-smooth.
    Rk4 {
        substeps: usize,
    },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::Dopri5 {
            rtol: 1e-7,
            atol: 1e-7,
        }
    }
}

impl Reference {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Reference::Dopri5 { rtol, atol } if rtol > 0.0 && atol > 0.0 => Ok(()),
            Reference::Rk4 { substeps } if substeps > 0 => Ok(()),
            other => Err(Error::InvalidInput(format!(
                "invalid reference solver {other:?}"
            ))),
        }
    }

    /// Integrates an arbitrary right-hand side over `[t0, t0 + h]`.
    pub fn advance_fn(
        &self,
        field: &mut StageFn<'_, f64>,
        t0: f64,
        x: &[f64],
        h: f64,
    ) -> Result<Vec<f64>> {
        self.validate()?;
        if h == 0.0 {
            return Ok(x.to_vec());
        }
        match *self {
            Reference::Dopri5 { rtol, atol } => {
                dopri5_final(field, x, t0, t0 + h, &Dopri5Options::tol(rtol, atol))
            }
            Reference::Rk4 { substeps } => {
                let dt = h / substeps as f64;
                let mut y = x.to_vec();
                for i in 0..substeps {
                    y = scheme_step(Scheme::Rk4, t0 + i as f64 * dt, &y, dt, field)?.next;
                }
                Ok(y)
            }
        }
    }

    /// Flow of `f` over a duration `h` with the control held at `u`.
    pub fn advance<F: Field<f64> + ?Sized>(
        &self,
        f: &F,
        x: &[f64],
        u: &[f64],
        h: f64,
    ) -> Result<Vec<f64>> {
        let mut field = |_: f64, y: &[f64]| f.eval(y, u);
        self.advance_fn(&mut field, 0.0, x, h)
    }

    /// Solution at each grid time for a control held piecewise constant on the grid
    /// intervals. For dopri5 every interval is integrated separately so the
    /// discontinuities in `u` fall on step boundaries.
    pub fn solve_piecewise<F: Field<f64> + ?Sized>(
        &self,
        f: &F,
        x0: &[f64],
        times: &[f64],
        controls: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        if times.len() != controls.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} times need {} controls, got {}",
                times.len(),
                times.len().saturating_sub(1),
                controls.len()
            )));
        }
        let mut states = Vec::with_capacity(times.len());
        states.push(x0.to_vec());
        for (k, u) in controls.iter().enumerate() {
            let next = self.advance(f, &states[k], u, times[k + 1] - times[k])?;
            states.push(next);
        }
        Ok(states)
    }

    /// Dense solution of an autonomous closed loop (dopri5 only).
    pub fn solve_dense(
        &self,
        field: &mut StageFn<'_, f64>,
        x0: &[f64],
        t0: f64,
        t_end: f64,
        t_eval: &[f64],
    ) -> Result<DenseSolution> {
        match *self {
            Reference::Dopri5 { rtol, atol } => dopri5_solve(
                field,
                x0,
                t0,
                t_end,
                t_eval,
                &Dopri5Options::tol(rtol, atol),
            ),
            Reference::Rk4 { .. } => {
                let mut states = Vec::with_capacity(t_eval.len());
                let (mut t, mut y) = (t0, x0.to_vec());
                for &te in t_eval {
                    y = self.advance_fn(field, t, &y, te - t)?;
                    t = te;
                    states.push(y.clone());
                }
                Ok(DenseSolution {
                    times: t_eval.to_vec(),
                    states,
                    stats: Default::default(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dynamics;

    #[test]
    fn both_oracles_agree_on_smooth_problem() {
        let f = Dynamics::Pendulum(Default::default());
        let x = [0.7, -0.3];
        let a = Reference::default().advance(&f, &x, &[1.5], 0.2).unwrap();
        let b = Reference::Rk4 { substeps: 100 }
            .advance(&f, &x, &[1.5], 0.2)
            .unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn piecewise_solution_shapes() {
        let f = Dynamics::SpringMass(Default::default());
        let times = [0.0, 0.1, 0.2];
        let states = Reference::default()
            .solve_piecewise(&f, &[1.0, 0.0], &times, &[vec![0.0], vec![1.0]])
            .unwrap();
        assert_eq!(states.len(), 3);
        assert!(Reference::default()
            .solve_piecewise(&f, &[1.0, 0.0], &times, &[vec![0.0]])
            .is_err());
    }

    #[test]
    fn invalid_reference_rejected() {
        assert!(Reference::Rk4 { substeps: 0 }.validate().is_err());
        assert!(Reference::Dopri5 {
            rtol: -1.0,
            atol: 1e-6
        }
        .validate()
        .is_err());
    }
}
