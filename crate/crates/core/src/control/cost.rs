use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// Quadratic tracking cost: terminal `P`, running `Q` and `R_u`, target `x*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r_u: Vec<Vec<f64>>,
    pub x_star: Vec<f64>,
}

fn diag(d: &[f64]) -> Vec<Vec<f64>> {
    (0..d.len())
        .map(|i| {
            (0..d.len())
                .map(|j| if i == j { d[i] } else { 0.0 })
                .collect()
        })
        .collect()
}

fn check_psd(what: &str, m: &[Vec<f64>], n: usize) -> Result<()> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput(format!("{what} must be {n}x{n}")));
    }
    for i in 0..n {
        for j in 0..i {
            if (m[i][j] - m[j][i]).abs() > 1e-12 * (1.0 + m[i][j].abs()) {
                return Err(Error::InvalidInput(format!(
                    "{what} is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    // Cholesky of M + τI succeeds for every positive semidefinite M
    let scale = (0..n).map(|i| m[i][i].abs()).fold(1.0, f64::max);
    let tau = 1e-10 * scale;
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i][j] + if i == j { tau } else { 0.0 };
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "{what} is not positive semidefinite"
                    )));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(())
}

/// `vᵀ M v`, skipping zero entries; `None` when `M` is zero.
pub fn quadratic_form<T: Scalar>(m: &[Vec<f64>], v: &[T]) -> Option<T> {
    let mut acc: Option<T> = None;
    for (i, row) in m.iter().enumerate() {
        let terms: Vec<(T, f64)> = row
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (v[j], c))
            .collect();
        if terms.is_empty() {
            continue;
        }
        let t = v[i] * T::lin_comb(&terms);
        acc = Some(match acc {
            Some(a) => a + t,
            None => t,
        });
    }
    acc
}

impl CostSpec {
    pub fn diagonal(p: &[f64], q: &[f64], r_u: &[f64], x_star: Vec<f64>) -> Self {
        Self {
            p: diag(p),
            q: diag(q),
            r_u: diag(r_u),
            x_star,
        }
    }

    pub fn n_x(&self) -> usize {
        self.x_star.len()
    }

    pub fn n_u(&self) -> usize {
        self.r_u.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_x();
        check_psd("P", &self.p, n)?;
        check_psd("Q", &self.q, n)?;
        check_psd("R_u", &self.r_u, self.n_u())
    }

    fn deviation<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(&self.x_star).map(|(&a, &s)| a - s).collect()
    }

    /// `(x − x*)ᵀ Q (x − x*) + uᵀ R_u u`.
    pub fn running<T: Scalar>(&self, x: &[T], u: &[T]) -> Result<T> {
        check_len("cost state", self.n_x(), x.len())?;
        check_len("cost control", self.n_u(), u.len())?;
        let a = quadratic_form(&self.q, &self.deviation(x));
        let b = quadratic_form(&self.r_u, u);
        Ok(match (a, b) {
            (Some(a), Some(b)) => a + b,
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => x[0].constant_like(0.0),
        })
    }

    pub fn terminal<T: Scalar>(&self, x: &[T]) -> Result<T> {
        check_len("cost state", self.n_x(), x.len())?;
        Ok(quadratic_form(&self.p, &self.deviation(x)).unwrap_or_else(|| x[0].constant_like(0.0)))
    }
}

/// Left Riemann sum of the running cost with weight `eps`, plus the terminal cost.
pub fn cost<T: Scalar>(
    states: &[Vec<T>],
    controls: &[Vec<T>],
    spec: &CostSpec,
    eps: f64,
) -> Result<T> {
    if states.len() != controls.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} states need {} controls, got {}",
            states.len(),
            states.len().saturating_sub(1),
            controls.len()
        )));
    }
    let last = states.last().expect("at least one state");
    let mut acc = spec.terminal(last)?;
    let mut running: Option<T> = None;
    for (x, u) in states.iter().zip(controls) {
        let r = spec.running(x, u)? * eps;
        running = Some(match running {
            Some(a) => a + r,
            None => r,
        });
    }
    if let Some(r) = running {
        acc = r + acc;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_target() {
        let spec = CostSpec::diagonal(&[1.0, 2.0], &[3.0, 4.0], &[5.0], vec![0.5, -1.0]);
        let states = vec![vec![0.5, -1.0]; 6];
        let controls = vec![vec![0.0]; 5];
        assert_eq!(cost(&states, &controls, &spec, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn terminal_hand_value() {
        let spec = CostSpec::diagonal(&[1.0, 1.0], &[0.0, 0.0], &[0.0], vec![0.0, 0.0]);
        let states = vec![vec![9.0, 9.0], vec![3.0, 4.0]];
        assert_eq!(cost(&states, &[vec![7.0]], &spec, 0.1).unwrap(), 25.0);
    }

    #[test]
    fn riemann_hand_value() {
        let spec = CostSpec::diagonal(&[0.0, 0.0], &[1.0, 1.0], &[0.0], vec![0.0, 0.0]);
        let states = vec![vec![1.0, 0.0]; 11];
        let controls = vec![vec![3.0]; 10];
        assert!((cost(&states, &controls, &spec, 0.1).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn full_matrix_form() {
        let m = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        // 2·1 + 2·1·(−2) + 3·4 = 10
        assert_eq!(quadratic_form(&m, &[1.0, -2.0]), Some(10.0));
    }

    #[test]
    fn validation() {
        let mut spec = CostSpec::diagonal(&[1.0, 0.0], &[0.0, 0.0], &[0.1], vec![0.0, 0.0]);
        spec.validate().unwrap();
        spec.q = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(spec.validate().is_err());
        spec.q = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        assert!(spec.validate().is_err());
        spec.q = vec![vec![1.0]];
        assert!(spec.validate().is_err());
        let spec = CostSpec::diagonal(&[1.0], &[1.0], &[1.0], vec![0.0]);
        assert!(cost(&[vec![0.0, 1.0], vec![0.0, 1.0]], &[vec![0.0]], &spec, 0.1).is_err());
    }
}
