//! One runner per experiment kind. Each writes its artifacts into a [`RunDir`]
//! and returns the solver rows and kind-specific results for the summary.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hypersolve::control::{
    direct_optimal_control, evaluate_policy, mpc_loop, Controller, Feedback, TrainControlConfig,
};
use hypersolve::dynamics::Dynamics;
use hypersolve::hypersolver::{
    load_hypersolver, load_multistage, save_hypersolver, save_multistage, HypersolverSpec,
    InputLayout, MultiStageSpec, SolverSpec, Stepper, TransitionBatch,
};
use hypersolve::metrics::{mae, mean, smape};
use hypersolve::neural::Mlp;
use hypersolve::pretrain::{
    held_out_set, pretrain, rng_stream, train_stochastic, PretrainConfig, SampleDistribution,
    TrainTarget,
};
use hypersolve::solvers::{
    global_error, norm2, rollout, rollout_batch, ControlSequence, Counter, Counts, Hold, Scheme,
    TimeGrid,
};

use crate::config::{
    mpc_config, ControlSignal, ControllerConfig, ExperimentConfig, Kind, NetConfig, SolverConfig,
    SolverKind,
};
use crate::output::{bundle_table, num, Compat, ControllerRecord, MetricsBundle, RunDir, Table};

/// A failure while the experiment runs, tagged with the stage it happened in.
#[derive(Debug)]
pub struct RunError {
    pub stage: &'static str,
    pub message: String,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.message)
    }
}

pub type RunResult<T> = Result<T, RunError>;

pub trait AtStage<T> {
    fn at(self, stage: &'static str) -> RunResult<T>;
}

impl<T, E: std::fmt::Display> AtStage<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> RunResult<T> {
        self.map_err(|e| RunError {
            stage,
            message: e.to_string(),
        })
    }
}

pub struct Outcome {
    pub compat: Compat,
    pub metrics: Vec<MetricsBundle>,
    pub results: serde_json::Value,
}

// Fixed offsets keep the random streams of different consumers apart.
const STREAM_CONTROL_STATES: u64 = 20;
const STREAM_SWEEP: u64 = 30;
const STREAM_EVALUATE: u64 = 40;

pub fn run(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    match cfg.kind {
        Kind::Pretrain => run_pretrain(cfg, dir),
        Kind::ControlDirect => run_control_direct(cfg, dir),
        Kind::ControlMpc => run_control_mpc(cfg, dir),
        Kind::ResidualSweep => run_residual_sweep(cfg, dir),
        Kind::GeneralizationSweep => run_generalization(cfg, dir),
        Kind::Evaluate => run_evaluate(cfg, dir),
    }
}

fn compat(cfg: &ExperimentConfig, plant: &Dynamics, eps: Vec<f64>, steps: usize) -> Compat {
    let d = &cfg.dynamics;
    let params = serde_json::to_value(d).unwrap_or(serde_json::Value::Null);
    Compat {
        system: plant.kind().to_string(),
        model: format!("{:?}", d.model).to_lowercase(),
        dynamics: params,
        eps,
        steps,
    }
}

fn build_mlp(net: &NetConfig, input: usize, output: usize, seed: u64) -> hypersolve::Result<Mlp> {
    let acts = net.activations().map_err(hypersolve::Error::InvalidSpec)?;
    let mut dims = vec![input];
    dims.extend(&net.hidden);
    dims.push(output);
    Mlp::new(&dims, &acts, net.init(), seed)
}

/// Networks are seeded from the run seed: inner stage `2s`, outer stage `2s + 1`.
pub fn build_solver(
    s: &SolverConfig,
    n_x: usize,
    n_u: usize,
    seed: u64,
) -> hypersolve::Result<SolverSpec> {
    let layout = InputLayout {
        include_t: s.include_t,
    };
    let input = layout.input_dim(n_x, n_u);
    Ok(match s.kind {
        SolverKind::Base => SolverSpec::Base(s.base),
        SolverKind::Hyper => match &s.checkpoint {
            Some(p) => {
                let h = SolverSpec::Hyper(load_hypersolver(p)?);
                check_dims(&h, n_x, n_u)?;
                h
            }
            None => {
                let net = s.net.as_ref().expect("validated");
                let g = build_mlp(net, input, n_x, 2 * seed + 1)?;
                SolverSpec::Hyper(HypersolverSpec::new(s.base, g, layout, n_x, n_u, s.eps)?)
            }
        },
        SolverKind::Multistage => match &s.checkpoint {
            Some(p) => {
                let m = SolverSpec::MultiStage(load_multistage(p)?);
                check_dims(&m, n_x, n_u)?;
                m
            }
            None => {
                let h = s
                    .inner
                    .as_ref()
                    .map(|n| build_mlp(n, input, n_x, 2 * seed))
                    .transpose()?;
                let g = s
                    .net
                    .as_ref()
                    .map(|n| build_mlp(n, input, n_x, 2 * seed + 1))
                    .transpose()?;
                SolverSpec::MultiStage(MultiStageSpec::new(s.base, h, g, layout, n_x, n_u, s.eps)?)
            }
        },
    })
}

/// A loaded checkpoint must match the system it is used on.
fn check_dims(s: &SolverSpec, n_x: usize, n_u: usize) -> hypersolve::Result<()> {
    let (layout, nets): (InputLayout, Vec<&Mlp>) = match s {
        SolverSpec::Base(_) => return Ok(()),
        SolverSpec::Hyper(h) => (h.layout, vec![&h.g]),
        SolverSpec::MultiStage(m) => (m.layout, m.h.iter().chain(m.g.iter()).collect()),
    };
    let input = layout.input_dim(n_x, n_u);
    for g in nets {
        if g.output_dim() != n_x || g.input_dim() != input {
            return Err(hypersolve::Error::InvalidSpec(format!(
                "checkpoint network maps {} -> {}, the system needs {input} -> {n_x}",
                g.input_dim(),
                g.output_dim()
            )));
        }
    }
    Ok(())
}

fn solver_params(s: &SolverSpec) -> usize {
    match s {
        SolverSpec::Base(_) => 0,
        SolverSpec::Hyper(h) => h.g.param_count(),
        SolverSpec::MultiStage(m) => m.h.iter().chain(m.g.iter()).map(Mlp::param_count).sum(),
    }
}

/// The controller net is seeded with `s + 1000`.
pub fn build_controller(
    c: &ControllerConfig,
    n_x: usize,
    n_u: usize,
    steps: usize,
    seed: u64,
) -> hypersolve::Result<Controller> {
    let mut ctl = match c.feedback {
        Feedback::ConstantSequence => Controller::constant_sequence(steps, n_u, c.bounds.clone())?,
        fb => {
            let input = if fb == Feedback::TimeLookup { 1 } else { n_x };
            let net = build_mlp(&c.net(), input, n_u, seed + 1000)?;
            Controller::new(net, fb, c.bounds.clone(), c.saturation, n_x)?
        }
    };
    ctl.saturation = c.saturation;
    Ok(ctl)
}

fn draw_box(rng: &mut ChaCha8Rng, b: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            b.iter()
                .map(|&[lo, hi]| {
                    if lo == hi {
                        lo
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect()
        })
        .collect()
}

fn step_counts(
    stepper: &Stepper<'_, f64>,
    f: &Dynamics,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> hypersolve::Result<Counts> {
    let counter = Counter::default();
    stepper.step_held(f, 0.0, x, u, eps, &counter)?;
    Ok(counter.counts())
}

/// One-step accuracy of `stepper` on held-out transitions.
fn one_step_bundle(
    stepper: &Stepper<'_, f64>,
    model: &Dynamics,
    held: &TransitionBatch,
    eps: f64,
    params: usize,
) -> hypersolve::Result<MetricsBundle> {
    let counter = Counter::default();
    let scale = stepper.base().residual_scale(eps);
    let (mut truth, mut pred, mut norms) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..held.len() {
        let next = stepper.step_held(model, held.t[i], &held.x[i], &held.u[i], eps, &counter)?;
        let d: Vec<f64> = held.next[i]
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) / scale)
            .collect();
        norms.push(norm2(&d));
        truth.extend_from_slice(&held.next[i]);
        pred.extend(next);
    }
    let counts = step_counts(stepper, model, &held.x[0], &held.u[0], eps)?;
    let mut b = MetricsBundle::new(stepper.name(), &counts, params);
    b.mae = mae(&truth, &pred);
    b.smape = smape(&truth, &pred);
    b.residual_mean = mean(&norms);
    b.residual_max = norms.iter().copied().fold(0.0, f64::max);
    Ok(b)
}

fn run_pretrain(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let s = cfg.solver.as_ref().expect("validated");
    let p = cfg.pretrain.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let mut solver = build_solver(s, n_x, n_u, cfg.seed).at("setup")?;
    let pcfg = p.to_config(s.eps, cfg.seed);
    let dist = &p.distribution;

    let mut save_periodic = |epoch: usize, target: &TrainTarget<'_>| -> hypersolve::Result<()> {
        let path = dir.checkpoint(&format!("epoch_{epoch:07}.json"));
        match target {
            TrainTarget::Hyper(h) => save_hypersolver(h, &path),
            TrainTarget::MultiStage(m) => save_multistage(m, &path),
        }
    };
    let report = match &mut solver {
        SolverSpec::Hyper(h) => pretrain(
            &mut TrainTarget::Hyper(h),
            &model,
            &plant,
            dist,
            &pcfg,
            &mut save_periodic,
        )
        .at("pretrain")?,
        SolverSpec::MultiStage(m) => pretrain(
            &mut TrainTarget::MultiStage(m),
            &model,
            &plant,
            dist,
            &pcfg,
            &mut save_periodic,
        )
        .at("pretrain")?,
        SolverSpec::Base(_) => unreachable!("validated"),
    };
    match &solver {
        SolverSpec::Hyper(h) => save_hypersolver(h, &dir.checkpoint("hypersolver.json")),
        SolverSpec::MultiStage(m) => save_multistage(m, &dir.checkpoint("hypersolver.json")),
        SolverSpec::Base(_) => unreachable!("validated"),
    }
    .at("checkpoint")?;

    let held = held_out_set(dist, &plant, &pcfg).at("evaluate")?;
    let metrics = vec![
        one_step_bundle(&Stepper::Base(s.base), &model, &held, s.eps, 0).at("evaluate")?,
        one_step_bundle(
            &solver.stepper(),
            &model,
            &held,
            s.eps,
            solver_params(&solver),
        )
        .at("evaluate")?,
    ];
    let mut table = Table::new(&["epoch", "loss", "lr"]);
    for pt in &report.curve {
        table.push(vec![pt.epoch.to_string(), num(pt.loss), num(pt.lr)]);
    }
    dir.write_metrics(&table).at("write")?;
    Ok(Outcome {
        compat: compat(cfg, &plant, vec![s.eps], 1),
        metrics,
        results: json!({ "report": report }),
    })
}

/// Accuracy of the training solver against the reference closed loop from the same states.
fn closed_loop_bundle(
    name: String,
    solver_trajs: &[hypersolve::solvers::Trajectory<f64>],
    reference_trajs: &[hypersolve::solvers::Trajectory<f64>],
    params: usize,
) -> MetricsBundle {
    let mut b = MetricsBundle::new(name, &solver_trajs[0].counts, params);
    let (mut truth, mut pred, mut per_step) = (Vec::new(), Vec::new(), Vec::new());
    for (s, r) in solver_trajs.iter().zip(reference_trajs) {
        for (a, e) in s.states.iter().zip(&r.states) {
            per_step.push(norm2(
                &a.iter().zip(e).map(|(x, y)| x - y).collect::<Vec<_>>(),
            ));
            truth.extend_from_slice(e);
            pred.extend_from_slice(a);
        }
    }
    b.mae = mae(&truth, &pred);
    b.smape = smape(&truth, &pred);
    b.residual_mean = mean(&per_step);
    b.residual_max = per_step.iter().copied().fold(0.0, f64::max);
    b
}

fn run_control_direct(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let s = cfg.solver.as_ref().expect("validated");
    let c = cfg.control.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let solver = build_solver(s, n_x, n_u, cfg.seed).at("setup")?;
    let grid = TimeGrid::new(c.t0, c.t_end, s.eps).at("setup")?;
    let cost = c.cost.spec();
    let mut rng = rng_stream(cfg.seed, STREAM_CONTROL_STATES);
    let x0s = draw_box(&mut rng, &c.x0_box, c.batch);
    let test = draw_box(&mut rng, &c.x0_box, c.test_batch);
    let mut controller =
        build_controller(&c.controller, n_x, n_u, grid.steps, cfg.seed).at("setup")?;

    let train = TrainControlConfig {
        epochs: c.epochs,
        lr: c.lr,
        hold: c.hold,
    };
    let (train_report, _) =
        direct_optimal_control(&model, &solver, &mut controller, &cost, &x0s, &grid, &train)
            .at("train_controller")?;
    let ctl_path = dir.checkpoint("controller.json");
    std::fs::write(
        &ctl_path,
        serde_json::to_string_pretty(&ControllerRecord::from_controller(&controller))
            .at("checkpoint")?,
    )
    .at("checkpoint")?;

    let (eval_report, eval_trajs) = evaluate_policy(
        &controller,
        &plant,
        &c.reference,
        &cost,
        &test,
        &grid,
        c.hold,
    )
    .at("evaluate")?;
    let solver_trajs = rollout_batch(
        &model,
        &solver.stepper(),
        &test,
        &controller.policy(),
        c.hold,
        &grid,
    )
    .at("evaluate")?;
    for (i, (e, st)) in eval_trajs.iter().zip(&solver_trajs).enumerate().take(4) {
        dir.write_trajectory(&format!("reference_{i:03}"), &e.to_csv())
            .at("write")?;
        dir.write_trajectory(&format!("{}_{i:03}", solver.name()), &st.to_csv())
            .at("write")?;
    }
    let mut table = Table::new(&["epoch", "loss"]);
    for (i, l) in train_report.loss_curve.iter().enumerate() {
        table.push(vec![i.to_string(), num(*l)]);
    }
    dir.write_metrics(&table).at("write")?;
    let metrics = vec![closed_loop_bundle(
        solver.name(),
        &solver_trajs,
        &eval_trajs,
        solver_params(&solver),
    )];
    Ok(Outcome {
        compat: compat(cfg, &plant, vec![s.eps], grid.steps),
        metrics,
        results: json!({ "train": train_report, "evaluation": eval_report }),
    })
}

fn run_control_mpc(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let s = cfg.solver.as_ref().expect("validated");
    let m = cfg.mpc.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let solver = build_solver(s, n_x, n_u, cfg.seed).at("setup")?;
    let grid = TimeGrid::new(m.t0, m.t_end, s.eps).at("setup")?;
    let mcfg = mpc_config(m);
    let (_, horizon_steps, _) = mcfg.layout(&grid).at("setup")?;
    let cost = m.cost.spec();
    let mut controller =
        build_controller(&m.controller, n_x, n_u, horizon_steps, cfg.seed).at("setup")?;
    let (report, traj) = mpc_loop(
        &plant,
        &m.reference,
        &model,
        &solver,
        &mut controller,
        &cost,
        &m.x0,
        &grid,
        &mcfg,
    )
    .at("mpc")?;
    dir.write_trajectory("closed_loop", &traj.to_csv())
        .at("write")?;

    let mut table = Table::new(&["window", "t", "final_loss", "flagged"]);
    for (w, losses) in report.window_losses.iter().enumerate() {
        table.push(vec![
            w.to_string(),
            num(traj.times[w]),
            losses.last().map_or_else(String::new, |l| num(*l)),
            report.flagged_windows.contains(&w).to_string(),
        ]);
    }
    dir.write_metrics(&table).at("write")?;

    let target: Vec<f64> = traj
        .states
        .iter()
        .flat_map(|_| cost.x_star.iter().copied())
        .collect();
    let flat: Vec<f64> = traj.states.iter().flatten().copied().collect();
    let mut b = MetricsBundle::new(solver.name(), &report.train_counts, solver_params(&solver));
    b.mae = mae(&target, &flat);
    b.smape = smape(&target, &flat);
    let dev: Vec<f64> = traj
        .states
        .iter()
        .map(|x| {
            norm2(
                &x.iter()
                    .zip(&cost.x_star)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    b.residual_mean = mean(&dev);
    b.residual_max = dev.iter().copied().fold(0.0, f64::max);
    Ok(Outcome {
        compat: compat(cfg, &plant, vec![s.eps], grid.steps),
        metrics: vec![b],
        results: json!({ "mpc": report }),
    })
}

fn run_residual_sweep(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let sw = cfg.sweep.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let mut table = Table::new(&["eps", "solver", "u", "mean_residual"]);
    let mut metrics = Vec::new();
    let mut training = Vec::new();
    for (ei, &eps) in sw.eps.iter().enumerate() {
        let mut rng = rng_stream(cfg.seed, STREAM_SWEEP + ei as u64);
        let states = draw_box(&mut rng, &sw.state_box, sw.samples);
        let mut solvers: Vec<SolverSpec> =
            sw.schemes.iter().map(|&s| SolverSpec::Base(s)).collect();
        if let Some(h) = &sw.hyper {
            let s = cfg.solver.as_ref().expect("validated");
            let sc = SolverConfig {
                kind: SolverKind::Hyper,
                base: Scheme::Euler,
                eps,
                checkpoint: None,
                ..s.clone()
            };
            let SolverSpec::Hyper(mut spec) = build_solver(&sc, n_x, n_u, cfg.seed).at("setup")?
            else {
                unreachable!("hyper kind requested")
            };
            let dist = SampleDistribution::uniform(
                sw.state_box.clone(),
                sw.control_box.clone().expect("validated"),
            );
            let pcfg = PretrainConfig {
                seed: cfg.seed,
                reference: sw.reference,
                ..PretrainConfig::new(h.epochs, h.batch_size, h.lr, eps)
            };
            let r = train_stochastic(&mut TrainTarget::Hyper(&mut spec), &model, &dist, &pcfg)
                .at("pretrain")?;
            save_hypersolver(
                &spec,
                &dir.checkpoint(&format!("hyper_euler_eps_{eps}.json")),
            )
            .at("checkpoint")?;
            training.push(json!({ "eps": eps, "report": r }));
            solvers.push(SolverSpec::Hyper(spec));
        }
        // reference flows are shared by all solvers at this step size
        let mut cases = Vec::new();
        for &uv in &sw.controls {
            let mut u = vec![0.0; n_u];
            u[0] = uv;
            for x in &states {
                let phi = sw.reference.advance(&plant, x, &u, eps).at("reference")?;
                cases.push((u.clone(), x.clone(), phi));
            }
        }
        for solver in &solvers {
            let stepper = solver.stepper();
            let counter = Counter::default();
            let (mut errs, mut truth, mut pred) = (Vec::new(), Vec::new(), Vec::new());
            for chunk in cases.chunks(sw.samples) {
                let mut per_u = Vec::with_capacity(chunk.len());
                for (u, x, phi) in chunk {
                    let next = stepper
                        .step_held(&model, 0.0, x, u, eps, &counter)
                        .at("step")?;
                    per_u.push(norm2(
                        &phi.iter()
                            .zip(&next)
                            .map(|(a, b)| a - b)
                            .collect::<Vec<_>>(),
                    ));
                    truth.extend_from_slice(phi);
                    pred.extend(next);
                }
                table.push(vec![
                    num(eps),
                    stepper.name(),
                    num(chunk[0].0[0]),
                    num(mean(&per_u)),
                ]);
                errs.extend(per_u);
            }
            let counts = step_counts(&stepper, &model, &cases[0].1, &cases[0].0, eps).at("step")?;
            let mut b = MetricsBundle::new(
                format!("{}@{eps}", stepper.name()),
                &counts,
                solver_params(solver),
            );
            b.mae = mae(&truth, &pred);
            b.smape = smape(&truth, &pred);
            b.residual_mean = mean(&errs);
            b.residual_max = errs.iter().copied().fold(0.0, f64::max);
            metrics.push(b);
        }
    }
    dir.write_metrics(&table).at("write")?;
    Ok(Outcome {
        compat: compat(cfg, &plant, sw.eps.clone(), 1),
        metrics,
        results: json!({ "training": training }),
    })
}

fn run_generalization(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let g = cfg.generalization.as_ref().expect("validated");
    let s = cfg.solver.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let eps = s.eps;
    let layout = InputLayout {
        include_t: s.include_t,
    };
    let scale = s.base.residual_scale(eps);

    let mut u = vec![0.0; n_u];
    u[0] = g.control;
    let inside = |x: &[f64]| {
        g.distribution
            .state_box
            .iter()
            .zip(x)
            .all(|(&[lo, hi], &v)| (lo..=hi).contains(&v))
            && g.distribution
                .control_box
                .iter()
                .zip(&u)
                .all(|(&[lo, hi], &v)| (lo..=hi).contains(&v))
    };
    let mut grid = Vec::new();
    for &a in &g.grid_x0.points() {
        for &b in &g.grid_x1.points() {
            let mut x = vec![0.0; n_x];
            x[0] = a;
            x[1] = b;
            let phi = g.reference.advance(&plant, &x, &u, eps).at("reference")?;
            grid.push((x, phi));
        }
    }

    let mut variants: Vec<(String, SolverSpec)> =
        vec![(s.base.name().to_string(), SolverSpec::Base(s.base))];
    let mut training = Vec::new();
    for name in &g.activations {
        let sine = name.starts_with("sin") || name == "siren";
        let net = NetConfig {
            hidden: if sine {
                g.sine_hidden.clone()
            } else {
                g.hidden.clone()
            },
            activations: vec![
                name.clone();
                if sine {
                    g.sine_hidden.len()
                } else {
                    g.hidden.len()
                }
            ],
            freq: g.freq,
            init: None,
        };
        let mlp = build_mlp(&net, layout.input_dim(n_x, n_u), n_x, 2 * cfg.seed + 1).at("setup")?;
        let mut spec = HypersolverSpec::new(s.base, mlp, layout, n_x, n_u, eps).at("setup")?;
        let pcfg = PretrainConfig {
            seed: cfg.seed,
            reference: g.reference,
            ..PretrainConfig::new(g.epochs, g.batch_size, g.lr, eps)
        };
        let r = train_stochastic(
            &mut TrainTarget::Hyper(&mut spec),
            &model,
            &g.distribution,
            &pcfg,
        )
        .at("pretrain")?;
        save_hypersolver(&spec, &dir.checkpoint(&format!("hypersolver_{name}.json")))
            .at("checkpoint")?;
        training.push(json!({ "activation": name, "report": r }));
        variants.push((name.clone(), SolverSpec::Hyper(spec)));
    }

    let mut table = Table::new(&["variant", "x0", "x1", "residual_norm", "inside"]);
    let mut metrics = Vec::new();
    let mut regions = Vec::new();
    for (name, solver) in &variants {
        let stepper = solver.stepper();
        let counter = Counter::default();
        let (mut norms, mut inn, mut out, mut truth, mut pred) =
            (vec![], vec![], vec![], vec![], vec![]);
        for (x, phi) in &grid {
            let next = stepper
                .step_held(&model, 0.0, x, &u, eps, &counter)
                .at("step")?;
            let r = norm2(
                &phi.iter()
                    .zip(&next)
                    .map(|(a, b)| (a - b) / scale)
                    .collect::<Vec<_>>(),
            );
            let is_in = inside(x);
            table.push(vec![
                name.clone(),
                num(x[0]),
                num(x[1]),
                num(r),
                is_in.to_string(),
            ]);
            if is_in {
                inn.push(r)
            } else {
                out.push(r)
            }
            norms.push(r);
            truth.extend_from_slice(phi);
            pred.extend(next);
        }
        let counts = step_counts(&stepper, &model, &grid[0].0, &u, eps).at("step")?;
        let mut b = MetricsBundle::new(
            format!("{}:{name}", stepper.name()),
            &counts,
            solver_params(solver),
        );
        b.mae = mae(&truth, &pred);
        b.smape = smape(&truth, &pred);
        b.residual_mean = mean(&norms);
        b.residual_max = norms.iter().copied().fold(0.0, f64::max);
        metrics.push(b);
        regions.push(
            json!({ "variant": name, "inside_mean": mean(&inn), "outside_mean": mean(&out) }),
        );
    }
    dir.write_metrics(&table).at("write")?;
    Ok(Outcome {
        compat: compat(cfg, &plant, vec![eps], 1),
        metrics,
        results: json!({ "regions": regions, "training": training }),
    })
}

fn load_checkpoint(path: &Path) -> hypersolve::Result<SolverSpec> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| hypersolve::Error::Parse(e.to_string()))?;
    match v.get("kind").and_then(|k| k.as_str()) {
        Some("standard") => Ok(SolverSpec::Hyper(load_hypersolver(path)?)),
        Some("multistage") => Ok(SolverSpec::MultiStage(load_multistage(path)?)),
        _ => Err(hypersolve::Error::Parse(format!(
            "{} is not a hypersolver checkpoint",
            path.display()
        ))),
    }
}

/// The run directory name for `<run>/checkpoints/<file>`, else the file stem.
fn checkpoint_label(p: &Path) -> String {
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parent = p.parent();
    match (
        parent.and_then(Path::file_name),
        parent.and_then(Path::parent).and_then(Path::file_name),
    ) {
        (Some(c), Some(run)) if c == "checkpoints" && stem == "hypersolver" => {
            run.to_string_lossy().into_owned()
        }
        (Some(c), Some(run)) if c == "checkpoints" => format!("{}/{stem}", run.to_string_lossy()),
        _ => stem,
    }
}

fn control_signals(
    signal: ControlSignal,
    control_box: Option<&[[f64; 2]]>,
    n_u: usize,
    steps: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<f64>>> {
    (0..count)
        .map(|i| match signal {
            ControlSignal::Zero => vec![vec![0.0; n_u]; steps],
            ControlSignal::UniformConstant => {
                let u = draw_box(rng, control_box.expect("validated"), 1).remove(0);
                vec![u; steps]
            }
            ControlSignal::BangBang => {
                let b = control_box.expect("validated");
                let u = b
                    .iter()
                    .map(|&[lo, hi]| if i % 2 == 0 { hi } else { lo })
                    .collect();
                vec![u; steps]
            }
            ControlSignal::UniformSteps => draw_box(rng, control_box.expect("validated"), steps),
        })
        .collect()
}

fn run_evaluate(cfg: &ExperimentConfig, dir: &RunDir) -> RunResult<Outcome> {
    let e = cfg.evaluate.as_ref().expect("validated");
    let plant = cfg.dynamics.plant().at("setup")?;
    let model = cfg.dynamics.model().at("setup")?;
    let (n_x, n_u) = plant.dims();
    let grid = TimeGrid::new(e.t0, e.t_end, e.eps).at("setup")?;
    let times = grid.times();
    let mut rng = rng_stream(cfg.seed, STREAM_EVALUATE);
    let x0s = draw_box(&mut rng, &e.x0_box, e.trajectories);
    let signals = control_signals(
        e.signal,
        e.control_box.as_deref(),
        n_u,
        grid.steps,
        e.trajectories,
        &mut rng,
    );
    let refs = x0s
        .iter()
        .zip(&signals)
        .map(|(x0, us)| e.reference.solve_piecewise(&plant, x0, &times, us))
        .collect::<hypersolve::Result<Vec<_>>>()
        .at("reference")?;
    for (i, (r, us)) in refs
        .iter()
        .zip(&signals)
        .enumerate()
        .take(e.save_trajectories)
    {
        let t = hypersolve::solvers::Trajectory {
            times: times.clone(),
            states: r.clone(),
            controls: us.clone(),
            counts: Counts::default(),
        };
        dir.write_trajectory(&format!("reference_{i:03}"), &t.to_csv())
            .at("write")?;
    }

    let mut solvers: Vec<(SolverSpec, String)> = e
        .schemes
        .iter()
        .map(|&s| (SolverSpec::Base(s), s.name().to_string()))
        .collect();
    for p in &e.checkpoints {
        let spec = load_checkpoint(p).at("setup")?;
        check_dims(&spec, n_x, n_u).at("setup")?;
        let label = format!("{}:{}", spec.name(), checkpoint_label(p));
        solvers.push((spec, label));
    }
    let mut metrics = Vec::new();
    let mut diverged = Vec::new();
    for (solver, name) in &solvers {
        let stepper = solver.stepper();
        let name = name.clone();
        let scale = solver.base().residual_scale(e.eps);
        let counter = Counter::default();
        let (mut maes, mut smapes, mut defects) = (Vec::new(), Vec::new(), Vec::new());
        let mut counts = Counts::default();
        let mut failed = None;
        for (i, ((x0, us), r)) in x0s.iter().zip(&signals).zip(&refs).enumerate() {
            let traj = match rollout(
                &model,
                &stepper,
                x0,
                &ControlSequence(us.clone()),
                Hold::ZeroOrder,
                &grid,
            ) {
                Ok(t) => t,
                Err(err @ hypersolve::Error::Blowup { .. }) => {
                    failed = Some(err.to_string());
                    break;
                }
                Err(err) => return Err(err).at("rollout"),
            };
            counts = traj.counts;
            let ge = global_error(&traj, &times, r).at("evaluate")?;
            maes.push(ge.mae);
            smapes.push(ge.smape);
            for k in 0..grid.steps {
                let next = stepper
                    .step_held(&model, times[k], &r[k], &us[k], e.eps, &counter)
                    .at("step")?;
                defects.push(norm2(
                    &r[k + 1]
                        .iter()
                        .zip(&next)
                        .map(|(a, b)| (a - b) / scale)
                        .collect::<Vec<_>>(),
                ));
            }
            if i < e.save_trajectories {
                dir.write_trajectory(&format!("{name}_{i:03}"), &traj.to_csv())
                    .at("write")?;
            }
        }
        let mut b = MetricsBundle::new(name.clone(), &counts, solver_params(solver));
        match failed {
            Some(msg) => {
                b.mae = f64::INFINITY;
                b.smape = 200.0;
                b.residual_mean = f64::INFINITY;
                b.residual_max = f64::INFINITY;
                diverged.push(json!({ "solver": name, "error": msg }));
            }
            None => {
                b.mae = mean(&maes);
                b.smape = mean(&smapes);
                b.residual_mean = mean(&defects);
                b.residual_max = defects.iter().copied().fold(0.0, f64::max);
            }
        }
        metrics.push(b);
    }
    dir.write_metrics(&bundle_table(&metrics)).at("write")?;
    Ok(Outcome {
        compat: compat(cfg, &plant, vec![e.eps], grid.steps),
        metrics,
        results: json!({ "diverged": diverged }),
    })
}
