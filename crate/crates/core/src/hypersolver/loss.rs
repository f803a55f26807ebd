use ndarray::Array2;

use super::{InputLayout, Stepper};
use crate::dynamics::Field;
use crate::error::{Error, Result};
use crate::neural::{stack_rows, BoundMlp, Mlp, Tape, Var};
use crate::solvers::{Counter, ResidualSample};

/// Network inputs and residual targets, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBatch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl ResidualBatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

pub fn build_residual_batch<F: Field<f64> + ?Sized>(
    f: &F,
    layout: InputLayout,
    samples: &[ResidualSample],
) -> Result<ResidualBatch> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("empty residual batch".into()));
    }
    let mut inputs = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let fx = f.eval(&s.x, &s.u)?;
        inputs.push(layout.assemble(s.t, &s.x, &s.u, &fx));
        targets.push(s.r.clone());
    }
    Ok(ResidualBatch {
        inputs: stack_rows(&inputs),
        targets: stack_rows(&targets),
    })
}

fn mean_row_norm(d: &Array2<f64>) -> f64 {
    let mut s = 0.0;
    for r in d.rows() {
        s += r.iter().map(|a| a * a).sum::<f64>().sqrt();
    }
    s / d.nrows() as f64
}

/// Mean of `‖R − g‖₂` over the batch.
pub fn residual_fitting_loss(g: &Mlp, batch: &ResidualBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty residual batch".into()));
    }
    let pred = g.forward_batch(&batch.inputs)?;
    Ok(mean_row_norm(&(&batch.targets - &pred)))
}

pub fn residual_loss_var<'t>(
    tape: &'t Tape,
    g: &BoundMlp<'t>,
    batch: &ResidualBatch,
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty residual batch".into()));
    }
    if batch.inputs.ncols() != g.input_dim() {
        return Err(Error::Dimension {
            what: "residual batch inputs",
            expected: g.input_dim(),
            got: batch.inputs.ncols(),
        });
    }
    let pred = g.forward_matrix(tape.constant(batch.inputs.clone()));
    let target = tape.constant(batch.targets.clone());
    Ok((target - pred).row_norm().mean())
}

/// Start states, held controls and exact next states.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionBatch {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub next: Vec<Vec<f64>>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push(&mut self, t: f64, x: Vec<f64>, u: Vec<f64>, next: Vec<f64>) {
        self.t.push(t);
        self.x.push(x);
        self.u.push(u);
        self.next.push(next);
    }

    /// Consecutive pairs of a reference trajectory on a uniform grid.
    pub fn from_trajectory(
        times: &[f64],
        states: &[Vec<f64>],
        controls: &[Vec<f64>],
    ) -> Result<Self> {
        if states.len() != controls.len() + 1 || times.len() != states.len() {
            return Err(Error::InvalidInput(format!(
                "trajectory with {} times and {} states needs {} controls, got {}",
                times.len(),
                states.len(),
                states.len().saturating_sub(1),
                controls.len()
            )));
        }
        let mut b = Self::default();
        for k in 0..controls.len() {
            b.push(
                times[k],
                states[k].clone(),
                controls[k].clone(),
                states[k + 1].clone(),
            );
        }
        Ok(b)
    }

    pub fn extend(&mut self, other: TransitionBatch) {
        self.t.extend(other.t);
        self.x.extend(other.x);
        self.u.extend(other.u);
        self.next.extend(other.next);
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut b = Self::default();
        for &i in idx {
            b.push(
                self.t[i],
                self.x[i].clone(),
                self.u[i].clone(),
                self.next[i].clone(),
            );
        }
        b
    }
}

/// Mean of `‖Φ − x_next‖₂` over one-step predictions.
pub fn trajectory_fitting_loss<F: Field<f64> + ?Sized>(
    stepper: &Stepper<'_, f64>,
    f: &F,
    batch: &TransitionBatch,
    eps: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty transition batch".into()));
    }
    let counter = Counter::default();
    let mut s = 0.0;
    for i in 0..batch.len() {
        let pred = stepper.step_held(f, batch.t[i], &batch.x[i], &batch.u[i], eps, &counter)?;
        s += pred
            .iter()
            .zip(&batch.next[i])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    Ok(s / batch.len() as f64)
}

/// Tape version of [`trajectory_fitting_loss`]; the whole batch is stepped as columns.
/// Every sample shares the time of the first one.
pub fn trajectory_loss_var<'t>(
    tape: &'t Tape,
    stepper: &Stepper<'_, Var<'t>>,
    f: &dyn Field<Var<'t>>,
    batch: &TransitionBatch,
    eps: f64,
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty transition batch".into()));
    }
    let columns = |rows: &[Vec<f64>]| -> Vec<Var<'t>> {
        let m = stack_rows(rows);
        (0..m.ncols())
            .map(|j| tape.column(&m.column(j).to_vec()))
            .collect()
    };
    let x = columns(&batch.x);
    let u = columns(&batch.u);
    let counter = Counter::default();
    let pred = stepper.step_held(f, batch.t[0], &x, &u, eps, &counter)?;
    let target = tape.constant(stack_rows(&batch.next));
    Ok((target - Var::concat(&pred)).row_norm().mean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Dynamics;
    use crate::hypersolver::HypersolverSpec;
    use crate::neural::{Activation, Init};
    use crate::solvers::{sample_residual, Reference, Scheme};

    fn setup() -> (
        Dynamics,
        HypersolverSpec,
        Vec<ResidualSample>,
        TransitionBatch,
    ) {
        let f = Dynamics::Pendulum(Default::default());
        let g = Mlp::new(&[5, 16, 2], &[Activation::Tanh], Init::UniformKaiming, 9).unwrap();
        let spec =
            HypersolverSpec::new(Scheme::Euler, g, InputLayout::default(), 2, 1, 0.1).unwrap();
        let reference = Reference::default();
        let mut samples = vec![];
        let mut batch = TransitionBatch::default();
        for (i, x) in [[0.5, 0.1], [-1.0, 2.0], [2.5, -0.7]].iter().enumerate() {
            let u = vec![i as f64 - 1.0];
            samples.push(sample_residual(&f, Scheme::Euler, &reference, x, &u, 0.1).unwrap());
            let next = reference.advance(&f, x, &u, 0.1).unwrap();
            batch.push(0.0, x.to_vec(), u, next);
        }
        (f, spec, samples, batch)
    }

    #[test]
    fn tape_and_plain_residual_loss_agree() {
        let (f, spec, samples, _) = setup();
        let batch = build_residual_batch(&f, spec.layout, &samples).unwrap();
        let plain = residual_fitting_loss(&spec.g, &batch).unwrap();
        let tape = Tape::new();
        let g = spec.g.bind(&tape, true);
        let v = residual_loss_var(&tape, &g, &batch).unwrap();
        assert!((v.item() - plain).abs() < 1e-14);
    }

    #[test]
    fn tape_and_plain_trajectory_loss_agree() {
        let (f, spec, _, batch) = setup();
        let plain = trajectory_fitting_loss(&spec.stepper(), &f, &batch, 0.1).unwrap();
        let tape = Tape::new();
        let bound = spec.bind(&tape, true);
        let v = trajectory_loss_var(&tape, &bound.stepper(), &f, &batch, 0.1).unwrap();
        assert!((v.item() - plain).abs() < 1e-12);
    }

    #[test]
    fn trajectory_loss_is_scaled_residual_loss() {
        // ‖Φ − x_next‖ = ε^(p+1) ‖R − g‖ sample by sample
        let (f, spec, samples, batch) = setup();
        let rb = build_residual_batch(&f, spec.layout, &samples).unwrap();
        let lr = residual_fitting_loss(&spec.g, &rb).unwrap();
        let lt = trajectory_fitting_loss(&spec.stepper(), &f, &batch, 0.1).unwrap();
        assert!((lt - 0.01 * lr).abs() < 1e-9);
    }

    #[test]
    fn empty_batches_rejected() {
        let (f, spec, _, _) = setup();
        assert!(build_residual_batch(&f, spec.layout, &[]).is_err());
        assert!(
            trajectory_fitting_loss(&spec.stepper(), &f, &TransitionBatch::default(), 0.1).is_err()
        );
    }

    #[test]
    fn from_trajectory_pairs_states() {
        let states = vec![vec![0.0], vec![1.0], vec![2.0]];
        let b =
            TransitionBatch::from_trajectory(&[0.0, 0.1, 0.2], &states, &[vec![5.0], vec![6.0]])
                .unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.next[1], vec![2.0]);
        assert!(TransitionBatch::from_trajectory(&[0.0], &states, &[]).is_err());
    }
}
