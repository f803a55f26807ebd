use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::controller::Controller;
use super::cost::{cost, CostSpec};
use crate::dynamics::Field;
use crate::error::{Error, Result};
use crate::hypersolver::SolverSpec;
use crate::metrics::{mean, std_dev};
use crate::neural::{AdamState, Tape, Var};
use crate::solvers::{
    rollout, rollout_batch, Counts, Hold, Policy, Reference, TimeGrid, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainControlConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub hold: Hold,
}

/// Batch-mean cost and its gradient with respect to the controller parameters.
#[derive(Debug, Clone)]
pub struct ControlGradient {
    pub loss: f64,
    pub grads: Vec<Array2<f64>>,
    /// Cost of every batch element.
    pub costs: Vec<f64>,
    /// Counters of one batched rollout (each stage counts once for the whole batch).
    pub counts: Counts,
}

pub fn controller_loss_and_grad<F>(
    f: &F,
    solver: &SolverSpec,
    controller: &Controller,
    cost_spec: &CostSpec,
    x0s: &[Vec<f64>],
    grid: &TimeGrid,
    hold: Hold,
) -> Result<ControlGradient>
where
    F: for<'t> Field<Var<'t>>,
{
    if x0s.is_empty() {
        return Err(Error::InvalidInput("empty initial-state batch".into()));
    }
    let tape = Tape::new();
    let bound_solver = solver.bind(&tape);
    let bound = controller.bind(&tape);
    let n_x = x0s[0].len();
    let x0: Vec<Var<'_>> = (0..n_x)
        .map(|i| tape.column(&x0s.iter().map(|x| x[i]).collect::<Vec<_>>()))
        .collect();
    let traj = rollout(f, &bound_solver.stepper(), &x0, &bound.policy(), hold, grid)?;
    let per_element = cost(&traj.states, &traj.controls, cost_spec, grid.eps)?;
    let costs = per_element.column_values();
    let loss = per_element.mean();
    let value = loss.item();
    if !value.is_finite() {
        let (worst, c) = costs
            .iter()
            .enumerate()
            .find(|(_, c)| !c.is_finite())
            .map(|(i, &c)| (i, c))
            .unwrap_or((0, value));
        return Err(Error::Diverged {
            epoch: 0,
            detail: format!(
                "non-finite cost {c} for batch element {worst} (x0 = {:?})",
                x0s[worst]
            ),
        });
    }
    let grads = tape.backward(loss)?;
    Ok(ControlGradient {
        loss: value,
        grads: bound.net.grads(&grads),
        costs,
        counts: traj.counts,
    })
}

fn add_counts(a: &mut Counts, b: &Counts) {
    a.nfe += b.nfe;
    a.net_evals += b.net_evals;
    a.net_flops += b.net_flops;
    a.policy_evals += b.policy_evals;
    a.policy_flops += b.policy_flops;
}

/// Loss curve and accumulated counters of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub losses: Vec<f64>,
    pub counts: Counts,
}

/// Adam on the batch-mean cost, with fresh moments. This is the single optimizer
/// shared by direct optimal control and every MPC window. On a non-finite cost
/// the parameters of the last finite epoch are kept and `Diverged` is returned.
pub fn optimize_controller<F>(
    f: &F,
    solver: &SolverSpec,
    controller: &mut Controller,
    cost_spec: &CostSpec,
    x0s: &[Vec<f64>],
    grid: &TimeGrid,
    epochs: usize,
    lr: f64,
    hold: Hold,
) -> Result<OptimizeOutcome>
where
    F: for<'t> Field<Var<'t>>,
{
    let mut adam = AdamState::new(lr, &controller.net.param_shapes());
    let mut out = OptimizeOutcome {
        losses: Vec::with_capacity(epochs),
        counts: Counts::default(),
    };
    for epoch in 0..epochs {
        let g = controller_loss_and_grad(f, solver, controller, cost_spec, x0s, grid, hold)
            .map_err(|e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { epoch, detail },
                Error::Blowup { t, step } => Error::Diverged {
                    epoch,
                    detail: format!("rollout blew up at t = {t} (step {step:?})"),
                },
                other => other,
            })?;
        add_counts(&mut out.counts, &g.counts);
        adam.step(&mut controller.net.params_mut(), &g.grads)
            .map_err(|e| match e {
                Error::NonFiniteGradient => Error::Diverged {
                    epoch,
                    detail: "non-finite controller gradient".into(),
                },
                other => other,
            })?;
        out.losses.push(g.loss);
    }
    Ok(out)
}

/// Final-state and cost statistics over a batch of closed-loop trajectories.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ControlReport {
    pub loss_curve: Vec<f64>,
    /// Loss curve of every MPC window.
    pub window_losses: Vec<Vec<f64>>,
    /// MPC windows whose optimization diverged.
    pub flagged_windows: Vec<usize>,
    pub window_times_s: Vec<f64>,
    /// Mean and standard deviation of `x_K − x*` per component.
    pub final_deviation_mean: Vec<f64>,
    pub final_deviation_std: Vec<f64>,
    /// Mean of `|x_K − x*|` per component.
    pub final_abs_mean: Vec<f64>,
    pub cost_mean: f64,
    pub cost_std: f64,
    /// Counters accumulated during optimization.
    pub train_counts: Counts,
    /// Counters of the reported trajectories.
    pub eval_counts: Counts,
    pub wall_time_s: f64,
}

impl ControlReport {
    pub fn fill_statistics(
        &mut self,
        trajs: &[Trajectory<f64>],
        cost_spec: &CostSpec,
        eps: f64,
    ) -> Result<()> {
        let n_x = cost_spec.n_x();
        let dev: Vec<Vec<f64>> = trajs
            .iter()
            .map(|t| {
                t.final_state()
                    .iter()
                    .zip(&cost_spec.x_star)
                    .map(|(a, s)| a - s)
                    .collect()
            })
            .collect();
        let column = |i: usize| dev.iter().map(|d| d[i]).collect::<Vec<_>>();
        self.final_deviation_mean = (0..n_x).map(|i| mean(&column(i))).collect();
        self.final_deviation_std = (0..n_x).map(|i| std_dev(&column(i))).collect();
        self.final_abs_mean = (0..n_x)
            .map(|i| mean(&column(i).iter().map(|v| v.abs()).collect::<Vec<_>>()))
            .collect();
        let costs = trajs
            .iter()
            .map(|t| cost(&t.states, &t.controls, cost_spec, eps))
            .collect::<Result<Vec<f64>>>()?;
        self.cost_mean = mean(&costs);
        self.cost_std = std_dev(&costs);
        let mut c = Counts::default();
        for t in trajs {
            add_counts(&mut c, &t.counts);
        }
        self.eval_counts = c;
        Ok(())
    }
}

/// Direct optimal control over complete trajectories from a batch of initial states.
/// The report's statistics come from the training stepper.
pub fn direct_optimal_control<F>(
    f: &F,
    solver: &SolverSpec,
    controller: &mut Controller,
    cost_spec: &CostSpec,
    x0s: &[Vec<f64>],
    grid: &TimeGrid,
    cfg: &TrainControlConfig,
) -> Result<(ControlReport, Vec<Trajectory<f64>>)>
where
    F: Field<f64> + for<'t> Field<Var<'t>>,
{
    cost_spec.validate()?;
    let started = Instant::now();
    let outcome = optimize_controller(
        f, solver, controller, cost_spec, x0s, grid, cfg.epochs, cfg.lr, cfg.hold,
    )?;
    let trajs = rollout_batch(
        f,
        &solver.stepper(),
        x0s,
        &controller.policy(),
        cfg.hold,
        grid,
    )?;
    let mut report = ControlReport {
        loss_curve: outcome.losses,
        train_counts: outcome.counts,
        ..Default::default()
    };
    report.fill_statistics(&trajs, cost_spec, grid.eps)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((report, trajs))
}

/// Closed loop of a frozen controller on the reference solver. With continuous
/// hold the policy is part of the integrated field; otherwise each control is
/// held over its grid interval.
pub fn evaluate_policy<P: Field<f64> + ?Sized>(
    controller: &Controller,
    plant: &P,
    reference: &Reference,
    cost_spec: &CostSpec,
    x0s: &[Vec<f64>],
    grid: &TimeGrid,
    hold: Hold,
) -> Result<(ControlReport, Vec<Trajectory<f64>>)> {
    let started = Instant::now();
    let policy = controller.policy();
    let times = grid.times();
    let mut trajs = Vec::with_capacity(x0s.len());
    for x0 in x0s {
        let mut counts = Counts::default();
        let states = match hold {
            Hold::Continuous => {
                let mut field = |t: f64, y: &[f64]| {
                    let k =
                        (((t - grid.t0) / grid.eps).floor().max(0.0) as usize).min(grid.steps - 1);
                    let u = policy.control(k, t, y)?;
                    plant.eval(y, &u)
                };
                let sol = reference.solve_dense(&mut field, x0, grid.t0, grid.t_end(), &times)?;
                counts.nfe = sol.stats.nfe as u64;
                sol.states
            }
            Hold::ZeroOrder => {
                let mut states = vec![x0.clone()];
                for k in 0..grid.steps {
                    let u = policy.control(k, times[k], &states[k])?;
                    states.push(reference.advance(plant, &states[k], &u, grid.eps)?);
                }
                states
            }
        };
        let controls = (0..grid.steps)
            .map(|k| policy.control(k, times[k], &states[k]))
            .collect::<Result<Vec<_>>>()?;
        counts.policy_evals = controls.len() as u64;
        counts.policy_flops = counts.policy_evals * policy.flops();
        trajs.push(Trajectory {
            times: times.clone(),
            states,
            controls,
            counts,
        });
    }
    let mut report = ControlReport::default();
    report.fill_statistics(&trajs, cost_spec, grid.eps)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((report, trajs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcConfig {
    /// Prediction horizon in seconds.
    pub horizon: f64,
    /// Interval between re-optimizations; the applied control is held over it.
    pub sampling: f64,
    pub iterations: usize,
    pub lr: f64,
    #[serde(default = "yes")]
    pub warm_start: bool,
    #[serde(default)]
    pub hold: Hold,
}

fn yes() -> bool {
    true
}

fn whole_steps(what: &str, span: f64, eps: f64) -> Result<usize> {
    let n = (span / eps).round();
    if n < 1.0 || (n * eps - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "{what} {span} is not a positive multiple of {eps}"
        )));
    }
    Ok(n as usize)
}

impl MpcConfig {
    /// Number of windows covering `grid` and the step counts of the horizon and sampling interval.
    pub fn layout(&self, grid: &TimeGrid) -> Result<(usize, usize, usize)> {
        if !(self.horizon >= self.sampling && self.sampling >= grid.eps) {
            return Err(Error::InvalidInput(format!(
                "need horizon ({}) >= sampling ({}) >= step size ({})",
                self.horizon, self.sampling, grid.eps
            )));
        }
        let horizon_steps = whole_steps("horizon", self.horizon, grid.eps)?;
        let sampling_steps = whole_steps("sampling interval", self.sampling, grid.eps)?;
        let span = grid.t_end() - grid.t0;
        let windows = whole_steps("time span", span, self.sampling)?;
        Ok((windows, horizon_steps, sampling_steps))
    }
}

/// Receding-horizon control: re-optimize on the model over `[t, t + horizon]`,
/// apply the first control to the plant for one sampling interval, repeat.
#[allow(clippy::too_many_arguments)]
pub fn mpc_loop<P, F>(
    plant: &P,
    plant_reference: &Reference,
    model: &F,
    solver: &SolverSpec,
    controller: &mut Controller,
    cost_spec: &CostSpec,
    x0: &[f64],
    grid: &TimeGrid,
    cfg: &MpcConfig,
) -> Result<(ControlReport, Trajectory<f64>)>
where
    P: Field<f64> + ?Sized,
    F: for<'t> Field<Var<'t>>,
{
    cost_spec.validate()?;
    let (windows, horizon_steps, _) = cfg.layout(grid)?;
    let started = Instant::now();
    let initial = controller.clone();
    let mut report = ControlReport::default();
    let mut x = x0.to_vec();
    let mut times = vec![grid.t0];
    let mut states = vec![x.clone()];
    let mut controls: Vec<Vec<f64>> = Vec::with_capacity(windows);
    for w in 0..windows {
        let t = grid.t0 + w as f64 * cfg.sampling;
        let window_started = Instant::now();
        if !cfg.warm_start {
            *controller = initial.clone();
        }
        let window_grid = TimeGrid::with_steps(t, grid.eps, horizon_steps)?;
        let before = controller.clone();
        let outcome = optimize_controller(
            model,
            solver,
            controller,
            cost_spec,
            std::slice::from_ref(&x),
            &window_grid,
            cfg.iterations,
            cfg.lr,
            cfg.hold,
        );
        let u = match outcome {
            Ok(o) => {
                add_counts(&mut report.train_counts, &o.counts);
                report.window_losses.push(o.losses);
                controller.policy().control(0, t, &x)?
            }
            Err(Error::Diverged { .. }) => {
                *controller = before;
                report.flagged_windows.push(w);
                report.window_losses.push(Vec::new());
                match controls.last() {
                    Some(prev) => prev.clone(),
                    None => controller.policy().control(0, t, &x)?,
                }
            }
            Err(e) => return Err(e),
        };
        x = plant_reference.advance(plant, &x, &u, cfg.sampling)?;
        controls.push(u);
        times.push(t + cfg.sampling);
        states.push(x.clone());
        report
            .window_times_s
            .push(window_started.elapsed().as_secs_f64());
    }
    let traj = Trajectory {
        times,
        states,
        controls,
        counts: Counts::default(),
    };
    report.loss_curve = report
        .window_losses
        .iter()
        .filter_map(|l| l.last().copied())
        .collect();
    report.fill_statistics(std::slice::from_ref(&traj), cost_spec, cfg.sampling)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok((report, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{Feedback, Saturation};
    use crate::dynamics::Dynamics;
    use crate::neural::{Activation, Init, Mlp};
    use crate::solvers::Scheme;

    /// `ẋ = u`.
    fn integrator() -> Dynamics {
        let sys =
            crate::dynamics::LinearSystem::new(ndarray::array![[0.0]], ndarray::array![[1.0]])
                .unwrap();
        Dynamics::Linear(std::sync::Arc::new(sys))
    }

    #[test]
    fn scalar_constant_control_optimum() {
        // J(u) = (1 + 0.1u)² + 0.01u², minimized at u = −5
        let f = integrator();
        let mut c = Controller::constant_sequence(1, 1, None).unwrap();
        let spec = CostSpec::diagonal(&[1.0], &[0.0], &[0.1], vec![0.0]);
        let grid = TimeGrid::with_steps(0.0, 0.1, 1).unwrap();
        let cfg = TrainControlConfig {
            epochs: 2000,
            lr: 0.05,
            hold: Hold::ZeroOrder,
        };
        direct_optimal_control(
            &f,
            &SolverSpec::Base(Scheme::Euler),
            &mut c,
            &spec,
            &[vec![1.0]],
            &grid,
            &cfg,
        )
        .unwrap();
        let u = c.policy().control(0, 0.0, &[0.0]).unwrap()[0];
        assert!((u + 5.0).abs() < 0.05, "u = {u}");
    }

    #[test]
    fn gradient_vanishes_at_held_equilibrium() {
        let f = Dynamics::Pendulum(Default::default());
        let c = Controller::new(
            Mlp::zeros(&[2, 16, 1], &[Activation::Tanh]).unwrap(),
            Feedback::StateFeedback,
            Some(vec![[-5.0, 5.0]]),
            Saturation::Tanh,
            2,
        )
        .unwrap();
        let spec = CostSpec::diagonal(&[10.0, 1.0], &[1.0, 0.1], &[0.01], vec![0.0, 0.0]);
        let grid = TimeGrid::new(0.0, 3.0, 0.2).unwrap();
        let g = controller_loss_and_grad(
            &f,
            &SolverSpec::Base(Scheme::Euler),
            &c,
            &spec,
            &[vec![0.0, 0.0]],
            &grid,
            Hold::Continuous,
        )
        .unwrap();
        let norm: f64 = g
            .grads
            .iter()
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-6);
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn batch_cost_is_mean_of_elements() {
        let f = Dynamics::SpringMass(Default::default());
        let c = Controller::new(
            Mlp::new(&[2, 4, 1], &[Activation::Tanh], Init::UniformKaiming, 3).unwrap(),
            Feedback::StateFeedback,
            None,
            Saturation::Tanh,
            2,
        )
        .unwrap();
        let spec = CostSpec::diagonal(&[1.0, 1.0], &[1.0, 0.5], &[0.1], vec![0.0, 0.0]);
        let grid = TimeGrid::with_steps(0.0, 0.1, 5).unwrap();
        let x0s = vec![vec![1.0, 0.0], vec![-0.5, 2.0], vec![0.3, 0.3]];
        let solver = SolverSpec::Base(Scheme::Rk4);
        let g =
            controller_loss_and_grad(&f, &solver, &c, &spec, &x0s, &grid, Hold::ZeroOrder).unwrap();
        let singles: Vec<f64> = x0s
            .iter()
            .map(|x| {
                let t = rollout(
                    &f,
                    &solver.stepper(),
                    x,
                    &c.policy(),
                    Hold::ZeroOrder,
                    &grid,
                )
                .unwrap();
                cost(&t.states, &t.controls, &spec, 0.1).unwrap()
            })
            .collect();
        for (a, b) in g.costs.iter().zip(&singles) {
            assert!((a - b).abs() < 1e-12);
        }
        let m = g.costs.iter().sum::<f64>() / 3.0;
        assert!((g.loss - m).abs() < 1e-14);
    }

    #[test]
    fn zero_dynamics_plant_keeps_state() {
        let f = crate::dynamics::FnField::new(2, 1, |_: &[f64], _: &[f64]| vec![0.0, 0.0]);
        let c = Controller::constant_sequence(5, 1, None).unwrap();
        let spec = CostSpec::diagonal(&[1.0, 1.0], &[0.0, 0.0], &[0.0], vec![0.0, 0.0]);
        let grid = TimeGrid::with_steps(0.0, 0.1, 5).unwrap();
        for hold in [Hold::ZeroOrder, Hold::Continuous] {
            let (rep, trajs) = evaluate_policy(
                &c,
                &f,
                &Reference::default(),
                &spec,
                &[vec![0.3, -0.2]],
                &grid,
                hold,
            )
            .unwrap();
            assert_eq!(trajs[0].final_state(), &[0.3, -0.2]);
            assert_eq!(rep.final_deviation_mean, vec![0.3, -0.2]);
        }
    }

    #[test]
    fn mpc_window_count_and_saturation() {
        let f = Dynamics::Pendulum(Default::default());
        let mut c = Controller::new(
            Mlp::new(&[2, 8, 1], &[Activation::Tanh], Init::UniformKaiming, 2).unwrap(),
            Feedback::StateFeedback,
            Some(vec![[-2.0, 2.0]]),
            Saturation::Tanh,
            2,
        )
        .unwrap();
        let spec = CostSpec::diagonal(&[1.0, 0.1], &[1.0, 0.1], &[0.01], vec![0.0, 0.0]);
        let grid = TimeGrid::new(0.0, 3.0, 0.05).unwrap();
        let cfg = MpcConfig {
            horizon: 1.0,
            sampling: 0.05,
            iterations: 1,
            lr: 1e-3,
            warm_start: true,
            hold: Hold::ZeroOrder,
        };
        assert_eq!(cfg.layout(&grid).unwrap().0, 60);
        let (rep, traj) = mpc_loop(
            &f,
            &Reference::Rk4 { substeps: 2 },
            &f,
            &SolverSpec::Base(Scheme::Euler),
            &mut c,
            &spec,
            &[1.0, 0.0],
            &grid,
            &cfg,
        )
        .unwrap();
        assert_eq!(traj.controls.len(), 60);
        assert_eq!(rep.window_losses.len(), 60);
        assert!(traj.controls.iter().all(|u| (-2.0..=2.0).contains(&u[0])));
    }

    #[test]
    fn mpc_layout_rejects_bad_intervals() {
        let grid = TimeGrid::new(0.0, 3.0, 0.05).unwrap();
        let mut cfg = MpcConfig {
            horizon: 0.5,
            sampling: 1.0,
            iterations: 1,
            lr: 1e-3,
            warm_start: true,
            hold: Hold::ZeroOrder,
        };
        assert!(cfg.layout(&grid).is_err());
        cfg.horizon = 1.0;
        cfg.sampling = 0.07;
        assert!(cfg.layout(&grid).is_err());
    }
}
