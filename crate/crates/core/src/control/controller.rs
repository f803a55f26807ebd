use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::neural::{Approximator, BoundMlp, Mlp, Tape, Var};
use crate::scalar::Scalar;
use crate::solvers::Policy;

/// What the controller network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// `u(x)`.
    #[default]
    StateFeedback,
    /// `u(t)`.
    TimeLookup,
    /// One free control per step: a linear layer fed with the one-hot step index.
    ConstantSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Saturation {
    /// `c + h·tanh(z)`, smooth.
    #[default]
    Tanh,
    /// Hard clip to the box.
    Clip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub net: Mlp,
    pub feedback: Feedback,
    pub bounds: Option<Vec<[f64; 2]>>,
    pub saturation: Saturation,
}

impl Controller {
    pub fn new(
        net: Mlp,
        feedback: Feedback,
        bounds: Option<Vec<[f64; 2]>>,
        saturation: Saturation,
        n_x: usize,
    ) -> Result<Self> {
        let want_in = match feedback {
            Feedback::StateFeedback => Some(n_x),
            Feedback::TimeLookup => Some(1),
            Feedback::ConstantSequence => None,
        };
        if let Some(w) = want_in {
            if net.input_dim() != w {
                return Err(Error::InvalidSpec(format!(
                    "{feedback:?} controller needs input dimension {w}, got {}",
                    net.input_dim()
                )));
            }
        }
        if let Some(b) = &bounds {
            check_len("control bounds", net.output_dim(), b.len())?;
            if let Some([lo, hi]) = b.iter().find(|[lo, hi]| !(lo < hi)) {
                return Err(Error::InvalidInput(format!(
                    "empty control interval [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            net,
            feedback,
            bounds,
            saturation,
        })
    }

    /// Open-loop controls for `steps` steps, all starting at zero.
    pub fn constant_sequence(
        steps: usize,
        n_u: usize,
        bounds: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let net = Mlp::zeros(&[steps.max(1), n_u], &[])?;
        Self::new(net, Feedback::ConstantSequence, bounds, Saturation::Tanh, 0)
    }

    pub fn n_u(&self) -> usize {
        self.net.output_dim()
    }

    pub fn policy(&self) -> NeuralPolicy<'_, f64> {
        NeuralPolicy {
            net: &self.net,
            feedback: self.feedback,
            bounds: self.bounds.as_deref(),
            saturation: self.saturation,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundController<'t> {
        BoundController {
            net: self.net.bind(tape, true),
            feedback: self.feedback,
            bounds: self.bounds.clone(),
            saturation: self.saturation,
        }
    }
}

pub struct BoundController<'t> {
    pub net: BoundMlp<'t>,
    feedback: Feedback,
    bounds: Option<Vec<[f64; 2]>>,
    saturation: Saturation,
}

impl<'t> BoundController<'t> {
    pub fn policy(&self) -> NeuralPolicy<'_, Var<'t>> {
        NeuralPolicy {
            net: &self.net,
            feedback: self.feedback,
            bounds: self.bounds.as_deref(),
            saturation: self.saturation,
        }
    }
}

/// A controller network evaluated through [`Approximator`], usable by rollouts.
pub struct NeuralPolicy<'a, T> {
    net: &'a dyn Approximator<T>,
    feedback: Feedback,
    bounds: Option<&'a [[f64; 2]]>,
    saturation: Saturation,
}

impl<T: Scalar> NeuralPolicy<'_, T> {
    fn saturate(&self, z: Vec<T>) -> Vec<T> {
        let Some(bounds) = self.bounds else { return z };
        z.into_iter()
            .zip(bounds)
            .map(|(v, &[lo, hi])| match self.saturation {
                Saturation::Tanh => v.tanh() * (0.5 * (hi - lo)) + 0.5 * (lo + hi),
                Saturation::Clip => v.clamp(lo, hi),
            })
            .collect()
    }
}

impl<T: Scalar> Policy<T> for NeuralPolicy<'_, T> {
    fn n_u(&self) -> usize {
        self.net.output_dim()
    }

    fn control(&self, k: usize, t: f64, x: &[T]) -> Result<Vec<T>> {
        let input = match self.feedback {
            Feedback::StateFeedback => x.to_vec(),
            Feedback::TimeLookup => vec![x[0].constant_like(t)],
            Feedback::ConstantSequence => {
                let n = self.net.input_dim();
                let hot = k.min(n - 1);
                (0..n)
                    .map(|i| x[0].constant_like(if i == hot { 1.0 } else { 0.0 }))
                    .collect()
            }
        };
        Ok(self.saturate(self.net.eval(&input)?))
    }

    fn flops(&self) -> u64 {
        self.net.flops()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, Init, Layer};
    use ndarray::array;

    #[test]
    fn tanh_saturation_maps_into_box() {
        let net = Mlp::new(&[2, 8, 1], &[Activation::Tanh], Init::UniformKaiming, 1).unwrap();
        let c = Controller::new(
            net,
            Feedback::StateFeedback,
            Some(vec![[-5.0, 5.0]]),
            Saturation::Tanh,
            2,
        )
        .unwrap();
        for x in [[100.0, -50.0], [0.0, 0.0], [-1e3, 1e3]] {
            let u = c.policy().control(0, 0.0, &x).unwrap();
            assert!((-5.0..=5.0).contains(&u[0]));
        }
    }

    #[test]
    fn clip_and_center() {
        let net = Mlp::from_layers(
            vec![],
            vec![Layer {
                weight: array![[1.0]],
                bias: array![[0.0]],
            }],
        )
        .unwrap();
        let mut c = Controller::new(
            net,
            Feedback::StateFeedback,
            Some(vec![[1.0, 3.0]]),
            Saturation::Tanh,
            1,
        )
        .unwrap();
        assert_eq!(c.policy().control(0, 0.0, &[0.0]).unwrap(), vec![2.0]);
        c.saturation = Saturation::Clip;
        assert_eq!(c.policy().control(0, 0.0, &[7.0]).unwrap(), vec![3.0]);
        assert_eq!(c.policy().control(0, 0.0, &[2.5]).unwrap(), vec![2.5]);
    }

    #[test]
    fn sequence_and_time_inputs() {
        let mut c = Controller::constant_sequence(3, 1, None).unwrap();
        c.net.params_mut()[0].assign(&array![[1.0], [2.0], [3.0]]);
        let p = c.policy();
        assert_eq!(p.control(1, 0.0, &[0.0]).unwrap(), vec![2.0]);
        assert_eq!(p.control(10, 0.0, &[0.0]).unwrap(), vec![3.0]);
        let net = Mlp::from_layers(
            vec![],
            vec![Layer {
                weight: array![[2.0]],
                bias: array![[0.0]],
            }],
        )
        .unwrap();
        let c = Controller::new(net, Feedback::TimeLookup, None, Saturation::Tanh, 4).unwrap();
        assert_eq!(c.policy().control(0, 1.5, &[9.0; 4]).unwrap(), vec![3.0]);
    }

    #[test]
    fn wrong_input_dimension_rejected() {
        let net = Mlp::zeros(&[3, 1], &[]).unwrap();
        assert!(Controller::new(net, Feedback::StateFeedback, None, Saturation::Tanh, 2).is_err());
    }
}
