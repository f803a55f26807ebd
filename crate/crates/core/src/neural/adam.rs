use ndarray::Array2;

use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.v
    }

    /// One update. A non-finite gradient leaves both the state and the parameters untouched.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                what: "adam parameter list",
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dim() != m.dim() || g.dim() != m.dim() {
                return Err(Error::InvalidInput(format!(
                    "adam shape mismatch: state {:?}, param {:?}, grad {:?}",
                    m.dim(),
                    p.dim(),
                    g.dim()
                )));
            }
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteGradient);
        }

        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let (lr, eps) = (self.lr, self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut **p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_step(state: &mut AdamState, p: &mut Array2<f64>, g: f64) {
        state.step(&mut [p], &[array![[g]]]).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(0.1, &[(1, 1)]);
        let mut p = array![[2.5]];
        scalar_step(&mut s, &mut p, 0.0);
        scalar_step(&mut s, &mut p, 0.0);
        assert_eq!(p, array![[2.5]]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = AdamState::new(0.1, &[(1, 1)]);
        let mut p = array![[0.0]];
        scalar_step(&mut s, &mut p, 1.0);
        assert!((p[[0, 0]] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_after_a_step_follow_moment_recursion() {
        let mut s = AdamState::new(0.1, &[(1, 1)]);
        let mut p = array![[0.0]];
        scalar_step(&mut s, &mut p, 1.0);
        let mut prev = p[[0, 0]];
        // hand recursion: m_t = 0.9^(t-1)·0.1, v_t = 0.999^(t-1)·0.001
        for t in 2..=3 {
            scalar_step(&mut s, &mut p, 0.0);
            let m = 0.9f64.powi(t - 1) * 0.1;
            let v = 0.999f64.powi(t - 1) * 0.001;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            let expected = prev - 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p[[0, 0]] - expected).abs() < 1e-14, "t={t}");
            let applied = (p[[0, 0]] - prev).abs();
            assert!(applied < 0.1);
            prev = p[[0, 0]];
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut s = AdamState::new(0.0, &[(2, 2)]);
        let mut p = array![[1.0, -2.0], [3.5, 1e-300]];
        let orig = p.clone();
        for k in 0..5 {
            s.step(&mut [&mut p], &[array![[1.0, -3.0], [k as f64, 1e10]]])
                .unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut s = AdamState::new(0.1, &[(1, 1)]);
        let mut p = array![[1.0]];
        let err = s.step(&mut [&mut p], &[array![[f64::NAN]]]).unwrap_err();
        assert_eq!(err, Error::NonFiniteGradient);
        assert_eq!(p, array![[1.0]]);
        assert_eq!(s.steps_taken(), 0);
    }
}
