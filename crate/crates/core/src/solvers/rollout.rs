use std::cell::Cell;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::Field;
use crate::error::{check_len, Error, Result};
use crate::hypersolver::Stepper;
use crate::metrics;
use crate::scalar::Scalar;

use super::residual::norm2;

/// Uniform grid `t_k = t0 + k·ε`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub eps: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// `K = round((t_end − t0)/ε)`, which must be at least 1.
    pub fn new(t0: f64, t_end: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step size must be positive, got {eps}"
            )));
        }
        let k = ((t_end - t0) / eps).round();
        if !(k >= 1.0) {
            return Err(Error::InvalidInput(format!(
                "grid [{t0}, {t_end}] with step {eps} has no steps"
            )));
        }
        Ok(Self {
            t0,
            eps,
            steps: k as usize,
        })
    }

    pub fn with_steps(t0: f64, eps: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidInput("grid needs at least one step".into()));
        }
        Self::new(t0, t0 + eps * steps as f64, eps)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.eps
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// How the control is applied inside one solver step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hold {
    /// Computed at the step start and held over all stages.
    #[default]
    ZeroOrder,
    /// Re-evaluated at every stage state (closed-loop field `f(x, κ(x))`).
    Continuous,
}

/// Source of control inputs.
pub trait Policy<T> {
    fn n_u(&self) -> usize;
    /// Control at step `k`, time `t`, state `x`.
    fn control(&self, k: usize, t: f64, x: &[T]) -> Result<Vec<T>>;
    /// Estimated floating point operations per evaluation.
    fn flops(&self) -> u64 {
        0
    }
}

/// Stored open-loop sequence, indexed by step; the last entry is repeated past the end.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence(pub Vec<Vec<f64>>);

impl<T: Scalar> Policy<T> for ControlSequence {
    fn n_u(&self) -> usize {
        self.0.first().map_or(0, |u| u.len())
    }
    fn control(&self, k: usize, _t: f64, x: &[T]) -> Result<Vec<T>> {
        let u = self
            .0
            .get(k)
            .or(self.0.last())
            .ok_or_else(|| Error::InvalidInput("empty control sequence".into()))?;
        Ok(u.iter().map(|&v| x[0].constant_like(v)).collect())
    }
}

/// Open-loop `u(t)`.
pub struct TimeFunction<F> {
    n_u: usize,
    f: F,
}

impl<F: Fn(f64) -> Vec<f64>> TimeFunction<F> {
    pub fn new(n_u: usize, f: F) -> Self {
        Self { n_u, f }
    }
}

impl<T: Scalar, F: Fn(f64) -> Vec<f64>> Policy<T> for TimeFunction<F> {
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn control(&self, _k: usize, t: f64, x: &[T]) -> Result<Vec<T>> {
        let u = (self.f)(t);
        check_len("time-function control", self.n_u, u.len())?;
        Ok(u.iter().map(|&v| x[0].constant_like(v)).collect())
    }
}

/// Cost counters shared by a stepper and a rollout.
#[derive(Debug, Default)]
pub struct Counter {
    nfe: Cell<u64>,
    net_evals: Cell<u64>,
    net_flops: Cell<u64>,
    policy_evals: Cell<u64>,
    policy_flops: Cell<u64>,
}

impl Counter {
    pub fn field_eval(&self) {
        self.nfe.set(self.nfe.get() + 1);
    }

    pub fn net_eval(&self, flops: u64) {
        self.net_evals.set(self.net_evals.get() + 1);
        self.net_flops.set(self.net_flops.get() + flops);
    }

    pub fn policy_eval(&self, flops: u64) {
        self.policy_evals.set(self.policy_evals.get() + 1);
        self.policy_flops.set(self.policy_flops.get() + flops);
    }

    pub fn counts(&self) -> Counts {
        Counts {
            nfe: self.nfe.get(),
            net_evals: self.net_evals.get(),
            net_flops: self.net_flops.get(),
            policy_evals: self.policy_evals.get(),
            policy_flops: self.policy_flops.get(),
        }
    }
}

/// Vector-field evaluations and network evaluations, kept separate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub nfe: u64,
    pub net_evals: u64,
    pub net_flops: u64,
    pub policy_evals: u64,
    pub policy_flops: u64,
}

impl Counts {
    /// Solver-side network FLOPs plus controller FLOPs.
    pub fn total_net_flops(&self) -> u64 {
        self.net_flops + self.policy_flops
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<T>>,
    /// Control at the start of each step.
    pub controls: Vec<Vec<T>>,
    pub counts: Counts,
}

impl<T> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trajectory has an initial state")
    }
}

impl Trajectory<f64> {
    /// CSV with header `t,x0..,u0..`; the final row repeats the last control.
    pub fn to_csv(&self) -> String {
        let nx = self.states.first().map_or(0, |s| s.len());
        let nu = self.controls.first().map_or(0, |u| u.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x{i}")));
        header.extend((0..nu).map(|i| format!("u{i}")));
        let mut s = header.join(",");
        s.push('\n');
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let u = self.controls.get(k).or(self.controls.last());
            let _ = write!(s, "{t}");
            for v in x {
                let _ = write!(s, ",{v}");
            }
            for v in u.into_iter().flatten() {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

fn tag_step(e: Error, k: usize) -> Error {
    match e {
        Error::Blowup { t, step: None } => Error::Blowup { t, step: Some(k) },
        other => other,
    }
}

/// Sequential stepping over `grid`.
pub fn rollout<T: Scalar>(
    f: &dyn Field<T>,
    stepper: &Stepper<'_, T>,
    x0: &[T],
    policy: &dyn Policy<T>,
    hold: Hold,
    grid: &TimeGrid,
) -> Result<Trajectory<T>> {
    check_len("initial state", f.n_x(), x0.len())?;
    check_len("policy output", f.n_u(), policy.n_u())?;
    let counter = Counter::default();
    let mut states = Vec::with_capacity(grid.steps + 1);
    let mut controls = Vec::with_capacity(grid.steps);
    let mut x = x0.to_vec();
    states.push(x.clone());
    for k in 0..grid.steps {
        let t = grid.time(k);
        let u0 = policy.control(k, t, &x).map_err(|e| tag_step(e, k))?;
        check_len("policy output", f.n_u(), u0.len())?;
        counter.policy_eval(policy.flops());
        let mut first = true;
        let mut stage = |ts: f64, y: &[T]| -> Result<(Vec<T>, Vec<T>)> {
            let u = if first || hold == Hold::ZeroOrder {
                first = false;
                u0.clone()
            } else {
                counter.policy_eval(policy.flops());
                policy.control(k, ts, y)?
            };
            counter.field_eval();
            let fv = f.eval(y, &u)?;
            Ok((fv, u))
        };
        x = stepper
            .step(t, &x, grid.eps, &mut stage, &counter)
            .map_err(|e| tag_step(e, k))?;
        controls.push(u0);
        states.push(x.clone());
    }
    Ok(Trajectory {
        times: grid.times(),
        states,
        controls,
        counts: counter.counts(),
    })
}

/// Rollouts of several initial states, one after another.
pub fn rollout_batch(
    f: &dyn Field<f64>,
    stepper: &Stepper<'_, f64>,
    x0s: &[Vec<f64>],
    policy: &dyn Policy<f64>,
    hold: Hold,
    grid: &TimeGrid,
) -> Result<Vec<Trajectory<f64>>> {
    x0s.iter()
        .map(|x0| rollout(f, stepper, x0, policy, hold, grid))
        .collect()
}

/// Per-step global errors against reference states on the same grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalError {
    /// `E_k = ‖x(t_k) − x_k‖₂`.
    pub per_step: Vec<f64>,
    pub mae: f64,
    pub smape: f64,
}

pub fn global_error(
    traj: &Trajectory<f64>,
    ref_times: &[f64],
    ref_states: &[Vec<f64>],
) -> Result<GlobalError> {
    if ref_times.len() != traj.times.len() || ref_states.len() != traj.states.len() {
        return Err(Error::InvalidInput(format!(
            "grid mismatch: trajectory has {} points, reference {}",
            traj.times.len(),
            ref_times.len()
        )));
    }
    for (a, b) in traj.times.iter().zip(ref_times) {
        if (a - b).abs() > 1e-9 * (1.0 + a.abs()) {
            return Err(Error::InvalidInput(format!(
                "grid mismatch at t = {a} vs {b}"
            )));
        }
    }
    let per_step = traj
        .states
        .iter()
        .zip(ref_states)
        .map(|(x, r)| {
            check_len("reference state", x.len(), r.len())?;
            Ok(norm2(
                &x.iter().zip(r).map(|(a, b)| a - b).collect::<Vec<_>>(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let flat_x: Vec<f64> = traj.states.iter().flatten().copied().collect();
    let flat_r: Vec<f64> = ref_states.iter().flatten().copied().collect();
    Ok(GlobalError {
        per_step,
        mae: metrics::mae(&flat_r, &flat_x),
        smape: metrics::smape(&flat_r, &flat_x),
    })
}
