use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{
    rng_stream, walk_with_rng, SampleDistribution, SampleMode, HELD_OUT_STREAM, TRAIN_STREAM,
    WALK_STREAM,
};
use crate::dynamics::Field;
use crate::error::{Error, Result};
use crate::hypersolver::{
    build_residual_batch, residual_loss_var, trajectory_loss_var, HypersolverSpec, MultiStageSpec,
    Stepper, TransitionBatch,
};
use crate::neural::{AdamState, Mlp, Tape, Var};
use crate::solvers::{compute_residual, norm2, Counter, Reference, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean `‖R − g‖₂`.
    Residual,
    /// Mean `‖Φ − x_next‖₂`.
    Trajectory,
    /// Sum of the two.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Stochastic,
    Active,
}

/// `epochs` consecutive epochs at learning rate `lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStage {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    /// Pairs per epoch (stochastic) or states and controls per epoch (active).
    pub batch_size: usize,
    /// Consecutive stages whose lengths add up to `epochs`.
    pub schedule: Vec<LrStage>,
    pub eps: f64,
    pub loss: LossKind,
    pub strategy: Strategy,
    /// Controls kept per state by the active strategy; `None` means `⌈n/10⌉`.
    #[serde(default)]
    pub top_n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_held_out")]
    pub held_out: usize,
    /// Cap on the `n × n` pairs scored by the active strategy.
    #[serde(default = "default_max_pairs")]
    pub max_pairs: usize,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn default_held_out() -> usize {
    256
}

fn default_max_pairs() -> usize {
    1 << 16
}

impl PretrainConfig {
    /// Constant learning rate, stochastic exploration on the residual loss.
    pub fn new(epochs: usize, batch_size: usize, lr: f64, eps: f64) -> Self {
        Self {
            epochs,
            batch_size,
            schedule: vec![LrStage { epochs, lr }],
            eps,
            loss: LossKind::Residual,
            strategy: Strategy::Stochastic,
            top_n: None,
            seed: 0,
            held_out: default_held_out(),
            max_pairs: default_max_pairs(),
            reference: Reference::default(),
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.epochs > 0 {
            let total: usize = self.schedule.iter().map(|s| s.epochs).sum();
            if total != self.epochs {
                return Err(Error::InvalidInput(format!(
                    "learning-rate schedule covers {total} epochs, expected {}",
                    self.epochs
                )));
            }
        }
        if let Some(s) = self
            .schedule
            .iter()
            .find(|s| !(s.lr >= 0.0 && s.lr.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "invalid learning rate {}",
                s.lr
            )));
        }
        if self.top_n == Some(0) {
            return Err(Error::InvalidInput("top_n must be positive".into()));
        }
        if self.held_out == 0 {
            return Err(Error::InvalidInput("held_out must be positive".into()));
        }
        self.reference.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut end = 0;
        for s in &self.schedule {
            end += s.epochs;
            if epoch < end {
                return s.lr;
            }
        }
        self.schedule.last().map_or(0.0, |s| s.lr)
    }

    pub fn top_n(&self) -> usize {
        self.top_n
            .unwrap_or(self.batch_size.div_ceil(10))
            .min(self.batch_size)
    }
}

/// The networks being trained, borrowed from their owning spec.
pub enum TrainTarget<'a> {
    Hyper(&'a mut HypersolverSpec),
    /// Every network present in the spec is trained.
    MultiStage(&'a mut MultiStageSpec),
}

impl TrainTarget<'_> {
    pub fn base(&self) -> Scheme {
        match self {
            TrainTarget::Hyper(s) => s.base,
            TrainTarget::MultiStage(s) => s.base,
        }
    }

    pub fn stepper(&self) -> Stepper<'_, f64> {
        match self {
            TrainTarget::Hyper(s) => s.stepper(),
            TrainTarget::MultiStage(s) => s.stepper(),
        }
    }

    fn nets(&self) -> Vec<&Mlp> {
        match self {
            TrainTarget::Hyper(s) => vec![&s.g],
            TrainTarget::MultiStage(s) => s.h.iter().chain(s.g.iter()).collect(),
        }
    }

    fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            TrainTarget::Hyper(s) => vec![&mut s.g],
            TrainTarget::MultiStage(s) => s.h.iter_mut().chain(s.g.iter_mut()).collect(),
        }
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.nets()
            .into_iter()
            .flat_map(|n| n.param_shapes())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.nets().into_iter().map(|n| n.param_count()).sum()
    }
}

/// Held-out statistics of the normalized one-step defect `d = (Φ − x_next) / ε^(p+1)`.
/// For a hypersolver `d = R − g`, for the bare base scheme `d = R`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HeldOutMetrics {
    /// Mean `‖d‖₂`.
    pub residual_norm: f64,
    /// Mean `|d_i|` over samples and components.
    pub residual_mae: f64,
    /// `max ‖d‖₂`, an empirical δ.
    pub delta: f64,
    /// Mean `|Φ_i − x_next,i|` over samples and components.
    pub one_step_mae: f64,
}

pub fn held_out_metrics<F: Field<f64> + ?Sized>(
    stepper: &Stepper<'_, f64>,
    model: &F,
    batch: &TransitionBatch,
    eps: f64,
) -> Result<HeldOutMetrics> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty held-out set".into()));
    }
    let scale = stepper.base().residual_scale(eps);
    let counter = Counter::default();
    let (mut norm_sum, mut abs_sum, mut step_sum, mut delta) = (0.0, 0.0, 0.0, 0.0f64);
    let mut count = 0usize;
    for i in 0..batch.len() {
        let next = stepper.step_held(model, batch.t[i], &batch.x[i], &batch.u[i], eps, &counter)?;
        let err: Vec<f64> = batch.next[i]
            .iter()
            .zip(&next)
            .map(|(a, b)| a - b)
            .collect();
        let d: Vec<f64> = err.iter().map(|e| e / scale).collect();
        let n = norm2(&d);
        norm_sum += n;
        delta = delta.max(n);
        abs_sum += d.iter().map(|v| v.abs()).sum::<f64>();
        step_sum += err.iter().map(|v| v.abs()).sum::<f64>();
        count += d.len();
    }
    let m = batch.len() as f64;
    Ok(HeldOutMetrics {
        residual_norm: norm_sum / m,
        residual_mae: abs_sum / count as f64,
        delta,
        one_step_mae: step_sum / count as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub strategy: Strategy,
    pub loss_kind: LossKind,
    pub epochs_run: usize,
    pub pairs_per_epoch: usize,
    pub curve: Vec<LossPoint>,
    /// The bare base scheme on the model field.
    pub baseline: HeldOutMetrics,
    pub before: HeldOutMetrics,
    pub after: HeldOutMetrics,
    /// `max ‖R − g‖` on the held-out set after training.
    pub delta_hat: f64,
    /// `before.residual_norm / after.residual_norm`.
    pub improvement: f64,
    pub wall_time_s: f64,
    /// Set when training stopped on a non-finite loss or gradient; parameters
    /// are those of the last finite epoch.
    pub diverged: Option<String>,
}

impl PretrainReport {
    /// `epoch,loss,lr` rows.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr\n");
        for p in &self.curve {
            s.push_str(&format!("{},{},{}\n", p.epoch, p.loss, p.lr));
        }
        s
    }
}

/// Draws training states: from the box, or from a periodically refreshed random-walk pool.
struct StateSource<'p, P: ?Sized> {
    dist: &'p SampleDistribution,
    plant: &'p P,
    pool: Vec<Vec<f64>>,
    walk_rng: ChaCha8Rng,
}

impl<'p, P: Field<f64> + ?Sized> StateSource<'p, P> {
    fn new(dist: &'p SampleDistribution, plant: &'p P, walk_rng: ChaCha8Rng) -> Self {
        Self {
            dist,
            plant,
            pool: Vec::new(),
            walk_rng,
        }
    }

    fn refresh(&mut self, epoch: usize) -> Result<()> {
        if let SampleMode::RandomWalk(w) = &self.dist.mode {
            if self.pool.is_empty() || epoch.is_multiple_of(w.refresh_every) {
                self.pool = walk_with_rng(self.dist, self.plant, &mut self.walk_rng)?;
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        if self.pool.is_empty() {
            self.dist.draw_state(rng)
        } else {
            self.pool[rng.random_range(0..self.pool.len())].clone()
        }
    }
}

fn transitions<P: Field<f64> + ?Sized>(
    plant: &P,
    reference: &Reference,
    xs: &[Vec<f64>],
    us: &[Vec<f64>],
    eps: f64,
) -> Result<TransitionBatch> {
    let mut b = TransitionBatch::default();
    for (x, u) in xs.iter().zip(us) {
        let next = reference.advance(plant, x, u, eps)?;
        b.push(0.0, x.clone(), u.clone(), next);
    }
    Ok(b)
}

fn loss_and_grads<F>(
    target: &TrainTarget<'_>,
    model: &F,
    batch: &TransitionBatch,
    kind: LossKind,
    eps: f64,
) -> Result<(f64, Vec<Array2<f64>>)>
where
    F: Field<f64> + for<'t> Field<Var<'t>>,
{
    let tape = Tape::new();
    match target {
        TrainTarget::Hyper(spec) => {
            let bound = spec.bind(&tape, true);
            let residual = || -> Result<_> {
                let samples = (0..batch.len())
                    .map(|i| {
                        compute_residual(
                            model,
                            spec.base,
                            &batch.next[i],
                            batch.t[i],
                            &batch.x[i],
                            &batch.u[i],
                            eps,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                build_residual_batch(model, spec.layout, &samples)
            };
            let loss = match kind {
                LossKind::Residual => residual_loss_var(&tape, &bound.g, &residual()?)?,
                LossKind::Trajectory => {
                    trajectory_loss_var(&tape, &bound.stepper(), model, batch, eps)?
                }
                LossKind::Combined => {
                    let a = residual_loss_var(&tape, &bound.g, &residual()?)?;
                    a + trajectory_loss_var(&tape, &bound.stepper(), model, batch, eps)?
                }
            };
            let value = loss.item();
            let grads = tape.backward(loss)?;
            Ok((value, bound.g.grads(&grads)))
        }
        TrainTarget::MultiStage(spec) => {
            if kind != LossKind::Trajectory {
                return Err(Error::InvalidInput(
                    "multi-stage hypersolvers train on the trajectory loss only".into(),
                ));
            }
            let bound = spec.bind(&tape, true, true);
            let loss = trajectory_loss_var(&tape, &bound.stepper(), model, batch, eps)?;
            let value = loss.item();
            let grads = tape.backward(loss)?;
            Ok((
                value,
                bound
                    .h
                    .iter()
                    .chain(bound.g.iter())
                    .flat_map(|n| n.grads(&grads))
                    .collect(),
            ))
        }
    }
}

/// Active selection: scores all `n × n` state/control pairs with the current
/// solver and keeps the `top_n` worst controls of every state (ties by index).
fn select_active<F: Field<f64> + ?Sized, P: Field<f64> + ?Sized>(
    stepper: &Stepper<'_, f64>,
    model: &F,
    plant: &P,
    reference: &Reference,
    xs: &[Vec<f64>],
    us: &[Vec<f64>],
    top_n: usize,
    eps: f64,
) -> Result<TransitionBatch> {
    let counter = Counter::default();
    let mut out = TransitionBatch::default();
    for x in xs {
        let mut scored = Vec::with_capacity(us.len());
        for (j, u) in us.iter().enumerate() {
            let next = reference.advance(plant, x, u, eps)?;
            let pred = stepper.step_held(model, 0.0, x, u, eps, &counter)?;
            let err = norm2(
                &next
                    .iter()
                    .zip(&pred)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            );
            scored.push((err, j, next));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, j, next) in scored.into_iter().take(top_n) {
            out.push(0.0, x.clone(), us[j].clone(), next);
        }
    }
    Ok(out)
}

fn check_target<F: Field<f64> + ?Sized>(
    target: &TrainTarget<'_>,
    model: &F,
    dist: &SampleDistribution,
    cfg: &PretrainConfig,
) -> Result<()> {
    cfg.validate()?;
    dist.validate()?;
    if dist.n_x() != model.n_x() || dist.n_u() != model.n_u() {
        return Err(Error::InvalidInput(format!(
            "sample boxes are {}x{}, field is {}x{}",
            dist.n_x(),
            dist.n_u(),
            model.n_x(),
            model.n_u()
        )));
    }
    if matches!(target, TrainTarget::MultiStage(_)) && cfg.loss != LossKind::Trajectory {
        return Err(Error::InvalidInput(
            "multi-stage hypersolvers have no closed-form residual; use the trajectory loss".into(),
        ));
    }
    if cfg.strategy == Strategy::Active {
        if !matches!(dist.mode, SampleMode::UniformBox) {
            return Err(Error::InvalidInput(
                "active strategy needs uniform_box sampling".into(),
            ));
        }
        let pairs = cfg.batch_size.saturating_mul(cfg.batch_size);
        if pairs > cfg.max_pairs {
            return Err(Error::InvalidInput(format!(
                "active scoring of {pairs} pairs exceeds max_pairs = {}",
                cfg.max_pairs
            )));
        }
    }
    Ok(())
}

/// Held-out transitions drawn from their own random stream.
pub fn held_out_set<P: Field<f64> + ?Sized>(
    dist: &SampleDistribution,
    plant: &P,
    cfg: &PretrainConfig,
) -> Result<TransitionBatch> {
    let mut rng = rng_stream(cfg.seed, HELD_OUT_STREAM);
    let mut source = StateSource::new(dist, plant, rng_stream(cfg.seed, HELD_OUT_STREAM));
    source.refresh(0)?;
    let xs: Vec<_> = (0..cfg.held_out).map(|_| source.draw(&mut rng)).collect();
    let us: Vec<_> = (0..cfg.held_out)
        .map(|_| dist.draw_control(&mut rng))
        .collect();
    transitions(plant, &cfg.reference, &xs, &us, cfg.eps)
}

/// Trains `target` so that stepping on `model` reproduces the reference flow of
/// `plant`. For an ordinary hypersolver both fields are the same system.
pub fn pretrain<F, P>(
    target: &mut TrainTarget<'_>,
    model: &F,
    plant: &P,
    dist: &SampleDistribution,
    cfg: &PretrainConfig,
    on_checkpoint: &mut dyn FnMut(usize, &TrainTarget<'_>) -> Result<()>,
) -> Result<PretrainReport>
where
    F: Field<f64> + for<'t> Field<Var<'t>>,
    P: Field<f64> + ?Sized,
{
    check_target(target, model, dist, cfg)?;
    let started = Instant::now();
    let held = held_out_set(dist, plant, cfg)?;
    let baseline = held_out_metrics(&Stepper::Base(target.base()), model, &held, cfg.eps)?;
    let before = held_out_metrics(&target.stepper(), model, &held, cfg.eps)?;

    let mut rng = rng_stream(cfg.seed, TRAIN_STREAM);
    let mut source = StateSource::new(dist, plant, rng_stream(cfg.seed, WALK_STREAM));
    let mut adam = AdamState::new(cfg.lr_at(0), &target.param_shapes());
    let n = cfg.batch_size;
    let top_n = cfg.top_n();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut diverged = None;
    // parameters that produced the most recent finite loss
    let mut last_good: Option<Vec<Mlp>> = None;

    for epoch in 0..cfg.epochs {
        source.refresh(epoch)?;
        let xs: Vec<_> = (0..n).map(|_| source.draw(&mut rng)).collect();
        let us: Vec<_> = (0..n).map(|_| dist.draw_control(&mut rng)).collect();
        let batch = match cfg.strategy {
            Strategy::Stochastic => transitions(plant, &cfg.reference, &xs, &us, cfg.eps)?,
            Strategy::Active => select_active(
                &target.stepper(),
                model,
                plant,
                &cfg.reference,
                &xs,
                &us,
                top_n,
                cfg.eps,
            )?,
        };
        let lr = cfg.lr_at(epoch);
        let (loss, grads) = match loss_and_grads(target, model, &batch, cfg.loss, cfg.eps) {
            Ok(v) => v,
            Err(e @ (Error::PoisonedGradient | Error::Blowup { .. })) => {
                diverged = Some(format!("epoch {epoch}: {e}"));
                if let Some(good) = last_good.take() {
                    for (net, g) in target.nets_mut().into_iter().zip(good) {
                        *net = g;
                    }
                }
                break;
            }
            Err(e) => return Err(e),
        };
        adam.lr = lr;
        last_good = Some(target.nets().into_iter().cloned().collect());
        let mut params: Vec<&mut Array2<f64>> = target
            .nets_mut()
            .into_iter()
            .flat_map(|n| n.params_mut())
            .collect();
        if let Err(e) = adam.step(&mut params, &grads) {
            if e == Error::NonFiniteGradient {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break;
            }
            return Err(e);
        }
        curve.push(LossPoint { epoch, loss, lr });
        if cfg
            .checkpoint_every
            .is_some_and(|k| k > 0 && (epoch + 1) % k == 0)
        {
            on_checkpoint(epoch + 1, target)?;
        }
    }

    let after = match held_out_metrics(&target.stepper(), model, &held, cfg.eps) {
        Err(Error::Blowup { .. }) => HeldOutMetrics {
            residual_norm: f64::INFINITY,
            residual_mae: f64::INFINITY,
            delta: f64::INFINITY,
            one_step_mae: f64::INFINITY,
        },
        other => other?,
    };
    Ok(PretrainReport {
        strategy: cfg.strategy,
        loss_kind: cfg.loss,
        epochs_run: curve.len(),
        pairs_per_epoch: match cfg.strategy {
            Strategy::Stochastic => n,
            Strategy::Active => n * top_n,
        },
        curve,
        baseline,
        before,
        after,
        delta_hat: after.delta,
        improvement: if after.residual_norm > 0.0 {
            before.residual_norm / after.residual_norm
        } else {
            f64::INFINITY
        },
        wall_time_s: started.elapsed().as_secs_f64(),
        diverged,
    })
}

fn no_checkpoint(_: usize, _: &TrainTarget<'_>) -> Result<()> {
    Ok(())
}

/// Stochastic exploration: i.i.d. pairs from the sampling distribution.
pub fn train_stochastic<F>(
    target: &mut TrainTarget<'_>,
    f: &F,
    dist: &SampleDistribution,
    cfg: &PretrainConfig,
) -> Result<PretrainReport>
where
    F: Field<f64> + for<'t> Field<Var<'t>>,
{
    let cfg = PretrainConfig {
        strategy: Strategy::Stochastic,
        ..cfg.clone()
    };
    pretrain(target, f, f, dist, &cfg, &mut no_checkpoint)
}

/// Active error minimization: per state, refit on the worst sampled controls.
pub fn train_active<F>(
    target: &mut TrainTarget<'_>,
    f: &F,
    dist: &SampleDistribution,
    cfg: &PretrainConfig,
) -> Result<PretrainReport>
where
    F: Field<f64> + for<'t> Field<Var<'t>>,
{
    let cfg = PretrainConfig {
        strategy: Strategy::Active,
        ..cfg.clone()
    };
    pretrain(target, f, f, dist, &cfg, &mut no_checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dynamics;
    use crate::hypersolver::InputLayout;
    use crate::neural::{Activation, Init};

    fn spring() -> (Dynamics, SampleDistribution) {
        (
            Dynamics::SpringMass(Default::default()),
            SampleDistribution::uniform(vec![[-20.0, 20.0]; 2], vec![[-100.0, 100.0]]),
        )
    }

    fn hyper(seed: u64) -> HypersolverSpec {
        let g = Mlp::new(
            &[5, 32, 32, 2],
            &[Activation::Softplus, Activation::Tanh],
            Init::UniformKaiming,
            seed,
        )
        .unwrap();
        HypersolverSpec::new(Scheme::Euler, g, InputLayout::default(), 2, 1, 0.03).unwrap()
    }

    #[test]
    fn zero_epochs_leaves_parameters() {
        let (f, dist) = spring();
        let mut spec = hyper(1);
        let orig = spec.clone();
        let cfg = PretrainConfig::new(0, 16, 1e-3, 0.03);
        let rep = train_stochastic(&mut TrainTarget::Hyper(&mut spec), &f, &dist, &cfg).unwrap();
        assert_eq!(spec, orig);
        assert_eq!(rep.before, rep.after);
        assert!(rep.curve.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_helps() {
        let (f, dist) = spring();
        let cfg = PretrainConfig {
            held_out: 64,
            ..PretrainConfig::new(300, 32, 1e-3, 0.03)
        };
        let mut a = hyper(2);
        let mut b = hyper(2);
        let ra = train_stochastic(&mut TrainTarget::Hyper(&mut a), &f, &dist, &cfg).unwrap();
        let rb = train_stochastic(&mut TrainTarget::Hyper(&mut b), &f, &dist, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.curve, rb.curve);
        assert!(ra.after.residual_norm < ra.before.residual_norm);
        assert!(ra.delta_hat >= 0.0);
    }

    #[test]
    fn active_with_single_pair_matches_stochastic_step() {
        let (f, dist) = spring();
        let cfg = PretrainConfig {
            held_out: 8,
            ..PretrainConfig::new(5, 1, 1e-3, 0.03)
        };
        let mut a = hyper(3);
        let mut b = hyper(3);
        let ra = train_stochastic(&mut TrainTarget::Hyper(&mut a), &f, &dist, &cfg).unwrap();
        let rb = train_active(&mut TrainTarget::Hyper(&mut b), &f, &dist, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.curve, rb.curve);
    }

    #[test]
    fn active_selection_keeps_worst_controls() {
        let (f, _) = spring();
        let stepper = Stepper::<f64>::Base(Scheme::Euler);
        let xs = vec![vec![1.0, 0.0]];
        let us = vec![vec![0.0], vec![100.0], vec![-50.0], vec![100.0]];
        let b = select_active(&stepper, &f, &f, &Reference::default(), &xs, &us, 2, 0.03).unwrap();
        // Euler error grows with |u|; the two u = 100 entries tie and keep index order
        assert_eq!(b.u, vec![vec![100.0], vec![100.0]]);
    }

    #[test]
    fn multistage_residual_loss_rejected() {
        let f = Dynamics::CartPolePartial(Default::default());
        let dist = SampleDistribution::uniform(vec![[-1.0, 1.0]; 4], vec![[-1.0, 1.0]]);
        let net = Mlp::new(&[9, 8, 4], &[Activation::Tanh], Init::UniformKaiming, 0).unwrap();
        let mut ms = MultiStageSpec::new(
            Scheme::Midpoint,
            Some(net.clone()),
            Some(net),
            InputLayout::default(),
            4,
            1,
            0.05,
        )
        .unwrap();
        let cfg = PretrainConfig::new(2, 4, 1e-3, 0.05);
        assert!(train_stochastic(&mut TrainTarget::MultiStage(&mut ms), &f, &dist, &cfg).is_err());
        let cfg = PretrainConfig {
            loss: LossKind::Trajectory,
            held_out: 8,
            ..cfg
        };
        let rep = train_stochastic(&mut TrainTarget::MultiStage(&mut ms), &f, &dist, &cfg).unwrap();
        assert_eq!(rep.epochs_run, 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PretrainConfig::new(10, 4, 1e-3, 0.1);
        cfg.schedule = vec![
            LrStage {
                epochs: 4,
                lr: 1e-2,
            },
            LrStage {
                epochs: 6,
                lr: 1e-3,
            },
        ];
        cfg.validate().unwrap();
        assert_eq!(cfg.lr_at(3), 1e-2);
        assert_eq!(cfg.lr_at(4), 1e-3);
        cfg.schedule.pop();
        assert!(cfg.validate().is_err());
        let cfg = PretrainConfig {
            strategy: Strategy::Active,
            batch_size: 1000,
            max_pairs: 1000,
            ..PretrainConfig::new(1, 1000, 1e-3, 0.1)
        };
        let (f, dist) = spring();
        let mut spec = hyper(0);
        assert!(matches!(
            pretrain(
                &mut TrainTarget::Hyper(&mut spec),
                &f,
                &f,
                &dist,
                &cfg,
                &mut no_checkpoint
            ),
            Err(Error::InvalidInput(_))
        ));
        assert_eq!(PretrainConfig::new(1, 25, 1e-3, 0.1).top_n(), 3);
    }

    #[test]
    fn divergence_stops_and_keeps_finite_parameters() {
        let (f, dist) = spring();
        let mut spec = hyper(5);
        // a wildly large learning rate throws the parameters far enough to poison the loss
        let cfg = PretrainConfig {
            held_out: 8,
            ..PretrainConfig::new(50, 8, 1e200, 0.03)
        };
        let rep = train_stochastic(&mut TrainTarget::Hyper(&mut spec), &f, &dist, &cfg).unwrap();
        assert!(rep.diverged.is_some(), "{rep:?}");
        assert!(rep.epochs_run < 50);
        assert!(spec.g.is_finite());
    }
}
