//! Solvers corrected by learned residual models.
//!
//! A hypersolver step is `x + ε ψ(x, u) + ε^(p+1) g(x, u, f(x, u))`, where `ψ`
//! is the base scheme increment of order `p` and the field value `f(x, u)`
//! computed by the first stage is reused as a network input. A multi-stage
//! hypersolver additionally runs the base scheme on a corrected field
//! `f + h(x, u, f)` at every internal stage.

mod checkpoint;
mod loss;

pub use checkpoint::{
    load_hypersolver, load_multistage, save_hypersolver, save_multistage, HypersolverRecord,
};
pub use loss::{
    build_residual_batch, residual_fitting_loss, residual_loss_var, trajectory_fitting_loss,
    trajectory_loss_var, ResidualBatch, TransitionBatch,
};

use serde::{Deserialize, Serialize};

use crate::dynamics::Field;
use crate::error::{check_len, Error, Result};
use crate::neural::{Approximator, BoundMlp, Mlp, Tape};
use crate::scalar::Scalar;
use crate::solvers::{scheme_step, Counter, Scheme};

/// Order of the network input vector: `x`, `u`, `f(x, u)`, then optionally `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLayout {
    #[serde(default)]
    pub include_t: bool,
}

impl InputLayout {
    pub fn input_dim(&self, n_x: usize, n_u: usize) -> usize {
        2 * n_x + n_u + usize::from(self.include_t)
    }

    pub fn assemble<T: Scalar>(&self, t: f64, x: &[T], u: &[T], f: &[T]) -> Vec<T> {
        let mut v = Vec::with_capacity(x.len() + u.len() + f.len() + 1);
        v.extend_from_slice(x);
        v.extend_from_slice(u);
        v.extend_from_slice(f);
        if self.include_t {
            v.push(x[0].constant_like(t));
        }
        v
    }
}

/// Field value and control at one stage state.
pub type StageControlFn<'a, T> = dyn FnMut(f64, &[T]) -> Result<(Vec<T>, Vec<T>)> + 'a;

/// A stepping rule: a plain scheme, a hypersolver or a multi-stage hypersolver.
pub enum Stepper<'a, T> {
    Base(Scheme),
    Hyper {
        base: Scheme,
        layout: InputLayout,
        g: &'a dyn Approximator<T>,
    },
    MultiStage {
        base: Scheme,
        layout: InputLayout,
        /// Inner stage correcting the field; `None` zeroes it.
        h: Option<&'a dyn Approximator<T>>,
        /// Outer stage correcting the residual; `None` zeroes it.
        g: Option<&'a dyn Approximator<T>>,
    },
}

impl<T: Scalar> Stepper<'_, T> {
    pub fn base(&self) -> Scheme {
        match self {
            Stepper::Base(s) => *s,
            Stepper::Hyper { base, .. } | Stepper::MultiStage { base, .. } => *base,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Stepper::Base(s) => s.name().to_string(),
            Stepper::Hyper { base, .. } => format!("hyper_{}", base.name()),
            Stepper::MultiStage { base, h, g, .. } => match (h.is_some(), g.is_some()) {
                (true, true) => format!("multistage_{}", base.name()),
                (true, false) => format!("inner_only_{}", base.name()),
                (false, true) => format!("outer_only_{}", base.name()),
                (false, false) => base.name().to_string(),
            },
        }
    }

    /// One step. `stage` returns the (possibly partial) field and the control at a stage state.
    pub fn step(
        &self,
        t: f64,
        x: &[T],
        eps: f64,
        stage: &mut StageControlFn<'_, T>,
        counter: &Counter,
    ) -> Result<Vec<T>> {
        let mut first: Option<(Vec<T>, Vec<T>)> = None;
        let (base, layout, h, g) = match self {
            Stepper::Base(s) => {
                let mut field = |ts: f64, y: &[T]| Ok(stage(ts, y)?.0);
                return Ok(scheme_step(*s, t, x, eps, &mut field)?.next);
            }
            Stepper::Hyper { base, layout, g } => (*base, *layout, None, Some(*g)),
            Stepper::MultiStage { base, layout, h, g } => (*base, *layout, *h, *g),
        };
        let mut field = |ts: f64, y: &[T]| -> Result<Vec<T>> {
            let (fv, u) = stage(ts, y)?;
            let out = match h {
                Some(h) => {
                    let corr = h.eval(&layout.assemble(ts, y, &u, &fv))?;
                    counter.net_eval(h.flops());
                    fv.iter().zip(&corr).map(|(&a, &b)| a + b).collect()
                }
                None => fv.clone(),
            };
            if first.is_none() {
                first = Some((fv, u));
            }
            Ok(out)
        };
        let step = scheme_step(base, t, x, eps, &mut field)?;
        let Some(g) = g else {
            return Ok(step.next);
        };
        let (f0, u0) = first.expect("scheme evaluates at least one stage");
        let corr = g.eval(&layout.assemble(t, x, &u0, &f0))?;
        counter.net_eval(g.flops());
        check_len("correction output", x.len(), corr.len())?;
        let scale = base.residual_scale(eps);
        let next: Vec<T> = step
            .next
            .iter()
            .zip(&corr)
            .map(|(&a, &c)| T::lin_comb(&[(a, 1.0), (c, scale)]))
            .collect();
        if next.iter().all(|v| v.all_finite()) {
            Ok(next)
        } else {
            Err(Error::Blowup {
                t: t + eps,
                step: None,
            })
        }
    }

    /// One step with `u` held over all stages.
    pub fn step_held<F: Field<T> + ?Sized>(
        &self,
        f: &F,
        t: f64,
        x: &[T],
        u: &[T],
        eps: f64,
        counter: &Counter,
    ) -> Result<Vec<T>> {
        let mut stage = |_: f64, y: &[T]| {
            counter.field_eval();
            Ok((f.eval(y, u)?, u.to_vec()))
        };
        self.step(t, x, eps, &mut stage, counter)
    }
}

fn check_net(what: &str, net: &Mlp, input: usize, output: usize) -> Result<()> {
    if net.input_dim() != input || net.output_dim() != output {
        return Err(Error::InvalidSpec(format!(
            "{what} must map {input} -> {output}, got {} -> {}",
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

/// Base scheme plus an outer correction network.
#[derive(Debug, Clone, PartialEq)]
pub struct HypersolverSpec {
    pub base: Scheme,
    pub g: Mlp,
    pub layout: InputLayout,
    /// Step size the network was trained for.
    pub eps: f64,
}

impl HypersolverSpec {
    pub fn new(
        base: Scheme,
        g: Mlp,
        layout: InputLayout,
        n_x: usize,
        n_u: usize,
        eps: f64,
    ) -> Result<Self> {
        check_net("correction network", &g, layout.input_dim(n_x, n_u), n_x)?;
        Ok(Self {
            base,
            g,
            layout,
            eps,
        })
    }

    pub fn n_x(&self) -> usize {
        self.g.output_dim()
    }

    pub fn stepper(&self) -> Stepper<'_, f64> {
        Stepper::Hyper {
            base: self.base,
            layout: self.layout,
            g: &self.g,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundHypersolver<'t> {
        BoundHypersolver {
            base: self.base,
            layout: self.layout,
            g: self.g.bind(tape, trainable),
        }
    }
}

pub struct BoundHypersolver<'t> {
    pub base: Scheme,
    pub layout: InputLayout,
    pub g: BoundMlp<'t>,
}

impl<'t> BoundHypersolver<'t> {
    pub fn stepper(&self) -> Stepper<'_, crate::neural::Var<'t>> {
        Stepper::Hyper {
            base: self.base,
            layout: self.layout,
            g: &self.g,
        }
    }
}

/// Base scheme on a corrected field plus an outer correction.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStageSpec {
    pub base: Scheme,
    pub h: Option<Mlp>,
    pub g: Option<Mlp>,
    pub layout: InputLayout,
    pub eps: f64,
}

impl MultiStageSpec {
    pub fn new(
        base: Scheme,
        h: Option<Mlp>,
        g: Option<Mlp>,
        layout: InputLayout,
        n_x: usize,
        n_u: usize,
        eps: f64,
    ) -> Result<Self> {
        let input = layout.input_dim(n_x, n_u);
        if let Some(h) = &h {
            check_net("inner-stage network", h, input, n_x)?;
        }
        if let Some(g) = &g {
            check_net("outer-stage network", g, input, n_x)?;
        }
        Ok(Self {
            base,
            h,
            g,
            layout,
            eps,
        })
    }

    pub fn stepper(&self) -> Stepper<'_, f64> {
        Stepper::MultiStage {
            base: self.base,
            layout: self.layout,
            h: self.h.as_ref().map(|n| n as &dyn Approximator<f64>),
            g: self.g.as_ref().map(|n| n as &dyn Approximator<f64>),
        }
    }

    /// Binds both stages; `train_h`/`train_g` choose which become trainable parameters.
    pub fn bind<'t>(&self, tape: &'t Tape, train_h: bool, train_g: bool) -> BoundMultiStage<'t> {
        BoundMultiStage {
            base: self.base,
            layout: self.layout,
            h: self.h.as_ref().map(|n| n.bind(tape, train_h)),
            g: self.g.as_ref().map(|n| n.bind(tape, train_g)),
        }
    }
}

pub struct BoundMultiStage<'t> {
    pub base: Scheme,
    pub layout: InputLayout,
    pub h: Option<BoundMlp<'t>>,
    pub g: Option<BoundMlp<'t>>,
}

impl<'t> BoundMultiStage<'t> {
    pub fn stepper(&self) -> Stepper<'_, crate::neural::Var<'t>> {
        Stepper::MultiStage {
            base: self.base,
            layout: self.layout,
            h: self
                .h
                .as_ref()
                .map(|n| n as &dyn Approximator<crate::neural::Var<'t>>),
            g: self
                .g
                .as_ref()
                .map(|n| n as &dyn Approximator<crate::neural::Var<'t>>),
        }
    }
}

/// Any of the three stepping rules, owning its networks.
#[derive(Debug, Clone, PartialEq)]
pub enum SolverSpec {
    Base(Scheme),
    Hyper(HypersolverSpec),
    MultiStage(MultiStageSpec),
}

impl SolverSpec {
    pub fn base(&self) -> Scheme {
        match self {
            SolverSpec::Base(s) => *s,
            SolverSpec::Hyper(h) => h.base,
            SolverSpec::MultiStage(m) => m.base,
        }
    }

    pub fn stepper(&self) -> Stepper<'_, f64> {
        match self {
            SolverSpec::Base(s) => Stepper::Base(*s),
            SolverSpec::Hyper(h) => h.stepper(),
            SolverSpec::MultiStage(m) => m.stepper(),
        }
    }

    /// Binds the networks as frozen constants.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundSolver<'t> {
        match self {
            SolverSpec::Base(s) => BoundSolver::Base(*s),
            SolverSpec::Hyper(h) => BoundSolver::Hyper(h.bind(tape, false)),
            SolverSpec::MultiStage(m) => BoundSolver::MultiStage(m.bind(tape, false, false)),
        }
    }

    pub fn name(&self) -> String {
        self.stepper().name()
    }
}

pub enum BoundSolver<'t> {
    Base(Scheme),
    Hyper(BoundHypersolver<'t>),
    MultiStage(BoundMultiStage<'t>),
}

impl<'t> BoundSolver<'t> {
    pub fn stepper(&self) -> Stepper<'_, crate::neural::Var<'t>> {
        match self {
            BoundSolver::Base(s) => Stepper::Base(*s),
            BoundSolver::Hyper(h) => h.stepper(),
            BoundSolver::MultiStage(m) => m.stepper(),
        }
    }
}

pub fn hyper_step<F: Field<f64> + ?Sized>(
    spec: &HypersolverSpec,
    f: &F,
    t: f64,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    spec.stepper()
        .step_held(f, t, x, u, eps, &Counter::default())
}

/// `f` is the partial (modelled) field.
pub fn multistage_step<F: Field<f64> + ?Sized>(
    spec: &MultiStageSpec,
    f: &F,
    t: f64,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    spec.stepper()
        .step_held(f, t, x, u, eps, &Counter::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dynamics, FnField};
    use crate::neural::{Activation, Init, Layer};
    use crate::solvers::{fixed_step, sample_residual, Reference};
    use ndarray::{array, Array2};

    fn growth() -> FnField<impl Fn(&[f64], &[f64]) -> Vec<f64>> {
        FnField::new(1, 0, |x: &[f64], _: &[f64]| vec![x[0]])
    }

    /// Network with zero weights and a fixed output bias.
    fn constant_net(input: usize, out: Vec<f64>) -> Mlp {
        let n = out.len();
        Mlp::from_layers(
            vec![],
            vec![Layer {
                weight: Array2::zeros((input, n)),
                bias: Array2::from_shape_vec((1, n), out).unwrap(),
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_net_reduces_to_base_bitwise() {
        let f = Dynamics::Pendulum(Default::default());
        let layout = InputLayout::default();
        for scheme in Scheme::ALL {
            let g = Mlp::zeros(&[5, 32, 32, 2], &[Activation::Softplus, Activation::Tanh]).unwrap();
            let spec = HypersolverSpec::new(scheme, g, layout, 2, 1, 0.1).unwrap();
            let x = [0.8, -1.3];
            let a = hyper_step(&spec, &f, 0.0, &x, &[2.0], 0.1).unwrap();
            let b = fixed_step(scheme, &f, 0.0, &x, &[2.0], 0.1).unwrap();
            assert_eq!(a, b);

            let ms = MultiStageSpec::new(
                scheme,
                Some(Mlp::zeros(&[5, 8, 2], &[Activation::Tanh]).unwrap()),
                Some(Mlp::zeros(&[5, 8, 2], &[Activation::Tanh]).unwrap()),
                layout,
                2,
                1,
                0.1,
            )
            .unwrap();
            assert_eq!(multistage_step(&ms, &f, 0.0, &x, &[2.0], 0.1).unwrap(), b);
        }
    }

    #[test]
    fn hypereuler_constant_correction_hand_value() {
        let spec = HypersolverSpec::new(
            Scheme::Euler,
            constant_net(2, vec![0.5]),
            InputLayout::default(),
            1,
            0,
            0.1,
        )
        .unwrap();
        let next = hyper_step(&spec, &growth(), 0.0, &[1.0], &[], 0.1).unwrap();
        assert!((next[0] - 1.105).abs() < 1e-15);
    }

    #[test]
    fn hyper_nfe_equals_base_plus_one_net_eval() {
        let f = Dynamics::SpringMass(Default::default());
        for scheme in Scheme::ALL {
            let spec = HypersolverSpec::new(
                scheme,
                Mlp::new(&[5, 8, 2], &[Activation::Tanh], Init::UniformKaiming, 1).unwrap(),
                InputLayout::default(),
                2,
                1,
                0.1,
            )
            .unwrap();
            let c = Counter::default();
            spec.stepper()
                .step_held(&f, 0.0, &[1.0, 0.0], &[0.0], 0.1, &c)
                .unwrap();
            let counts = c.counts();
            assert_eq!(counts.nfe, scheme.nfe_per_step());
            assert_eq!(counts.net_evals, 1);
            assert_eq!(counts.net_flops, spec.g.flops());
        }
    }

    #[test]
    fn multistage_midpoint_stage_counts() {
        let f = Dynamics::CartPolePartial(Default::default());
        let net =
            || Mlp::new(&[9, 16, 4], &[Activation::snake()], Init::UniformKaiming, 3).unwrap();
        let ms = MultiStageSpec::new(
            Scheme::Midpoint,
            Some(net()),
            Some(net()),
            InputLayout::default(),
            4,
            1,
            0.05,
        )
        .unwrap();
        let c = Counter::default();
        ms.stepper()
            .step_held(&f, 0.0, &[0.0, 0.1, 0.2, -0.1], &[1.0], 0.05, &c)
            .unwrap();
        // two field evaluations, two inner-stage evaluations, one outer-stage evaluation
        assert_eq!(c.counts().nfe, 2);
        assert_eq!(c.counts().net_evals, 3);
    }

    #[test]
    fn inner_stage_equal_to_model_gap_recovers_full_field() {
        let params = crate::dynamics::CartPoleParams::default();
        let full = Dynamics::CartPoleFull(params);
        let partial = Dynamics::CartPolePartial(params);
        let x = [0.3, 0.7, 0.4, -0.5];
        let u = [2.0];
        let ff: Vec<f64> = full.eval(&x, &u).unwrap();
        let fp: Vec<f64> = partial.eval(&x, &u).unwrap();
        let gap: Vec<f64> = ff.iter().zip(&fp).map(|(a, b)| a - b).collect();
        let h = constant_net(9, gap);
        let layout = InputLayout::default();
        let fp2 = partial.eval(&x, &u).unwrap();
        let corrected: Vec<f64> = fp2
            .iter()
            .zip(h.forward(&layout.assemble(0.0, &x, &u, &fp2)).unwrap())
            .map(|(a, b)| a + b)
            .collect();
        for (c, w) in corrected.iter().zip(&ff) {
            assert!((c - w).abs() < 1e-14);
        }
        // with the gap constant, a single Euler step on the corrected field equals Euler on the full field
        let ms = MultiStageSpec::new(Scheme::Euler, Some(h), None, layout, 4, 1, 0.01).unwrap();
        let a = multistage_step(&ms, &partial, 0.0, &x, &u, 0.01).unwrap();
        let b = fixed_step(Scheme::Euler, &full, 0.0, &x, &u, 0.01).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_bound_holds_on_samples() {
        let f = Dynamics::SpringMass(Default::default());
        let g = Mlp::new(&[5, 16, 2], &[Activation::Tanh], Init::UniformKaiming, 4).unwrap();
        let spec =
            HypersolverSpec::new(Scheme::Euler, g, InputLayout::default(), 2, 1, 0.03).unwrap();
        let eps = 0.03;
        let reference = Reference::default();
        let states = [[1.0, 2.0], [-3.0, 0.5], [10.0, -7.0], [0.0, 0.0]];
        let mut delta = 0.0f64;
        let mut errs = vec![];
        for (i, x) in states.iter().enumerate() {
            let u = [i as f64 * 10.0 - 15.0];
            let s = sample_residual(&f, Scheme::Euler, &reference, x, &u, eps).unwrap();
            let fx: Vec<f64> = f.eval(x, &u).unwrap();
            let gv = spec
                .g
                .forward(&spec.layout.assemble(0.0, x, &u, &fx))
                .unwrap();
            let d =
                s.r.iter()
                    .zip(&gv)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
            delta = delta.max(d);
            let phi = reference.advance(&f, x, &u, eps).unwrap();
            let next = hyper_step(&spec, &f, 0.0, x, &u, eps).unwrap();
            errs.push(
                phi.iter()
                    .zip(&next)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            );
        }
        for e in errs {
            assert!(e <= delta * eps * eps * 1.1);
        }
    }

    #[test]
    fn mismatched_network_rejected() {
        let g = Mlp::zeros(&[4, 2], &[]).unwrap();
        assert!(HypersolverSpec::new(Scheme::Euler, g, InputLayout::default(), 2, 1, 0.1).is_err());
        let g = Mlp::zeros(&[6, 2], &[]).unwrap();
        assert!(
            HypersolverSpec::new(Scheme::Euler, g, InputLayout { include_t: true }, 2, 1, 0.1)
                .is_ok()
        );
        let _ = array![[0.0]];
    }
}
