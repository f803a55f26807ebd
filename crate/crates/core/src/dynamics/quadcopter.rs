//! Rigid-body quadcopter in the X motor configuration.
//!
//! State layout: position (3), linear velocity (3), Euler angles `(φ, θ, ψ)` (3),
//! angular rates (3). Controls are the four motor speeds in rpm.
//!
//! The body-to-world rotation is `R = Rz(ψ) Ry(θ) Rx(φ)` (Z-Y-X intrinsic), so
//! thrust acts along the third column of `R`. Motor mixing follows the CF2X
//! convention:
//!
//! ```text
//! τx = (F0 + F1 − F2 − F3) · l/√2
//! τy = (−F0 + F1 + F2 − F3) · l/√2
//! τz = k_T (−ω0² + ω1² − ω2² + ω3²)
//! ```
//! with `F_i = k_F ω_i²`.

use serde::{Deserialize, Serialize};

use super::mechanical::positive;
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadcopterParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub k_f: f64,
    pub k_t: f64,
    /// Inertia matrix, row-major.
    pub j: [[f64; 3]; 3],
}

impl Default for QuadcopterParams {
    /// Crazyflie 2.x class constants.
    fn default() -> Self {
        Self {
            m: 0.027,
            l: 0.0397,
            g: 9.81,
            k_f: 3.16e-10,
            k_t: 7.94e-12,
            j: [[1.4e-5, 0.0, 0.0], [0.0, 1.4e-5, 0.0], [0.0, 0.0, 2.17e-5]],
        }
    }
}

impl QuadcopterParams {
    pub fn validate(&self) -> Result<()> {
        positive("quadcopter.m", self.m)?;
        positive("quadcopter.l", self.l)?;
        positive("quadcopter.g", self.g)?;
        positive("quadcopter.k_f", self.k_f)?;
        positive("quadcopter.k_t", self.k_t)?;
        let j = self.j;
        for r in 0..3 {
            for c in 0..3 {
                if !j[r][c].is_finite()
                    || (j[r][c] - j[c][r]).abs() > 1e-15 * j[r][c].abs().max(1e-300)
                {
                    return Err(Error::InvalidInput("quadcopter.j must be symmetric".into()));
                }
            }
        }
        // Sylvester's criterion
        let d1 = j[0][0];
        let d2 = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let d3 = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        if d1 > 0.0 && d2 > 0.0 && d3 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput(
                "quadcopter.j must be positive definite".into(),
            ))
        }
    }

    /// Motor speed at which total thrust balances gravity.
    pub fn hover_rpm(&self) -> f64 {
        (self.m * self.g / (4.0 * self.k_f)).sqrt()
    }

    /// Motor speed giving a 2.25 thrust-to-weight ratio.
    pub fn max_rpm(&self) -> f64 {
        (2.25 * self.m * self.g / (4.0 * self.k_f)).sqrt()
    }

    fn j_inverse(&self) -> [[f64; 3]; 3] {
        let a = ndarray::Array2::from_shape_fn((3, 3), |(r, c)| self.j[r][c]);
        let inv = linalg::invert(&a).expect("inertia validated positive definite");
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = inv[[r, c]];
            }
        }
        out
    }
}

fn mat3_vec<T: Scalar>(m: &[[f64; 3]; 3], v: &[T; 3]) -> [T; 3] {
    let row = |r: usize| T::lin_comb(&[(v[0], m[r][0]), (v[1], m[r][1]), (v[2], m[r][2])]);
    [row(0), row(1), row(2)]
}

pub fn eval_quadcopter<T: Scalar>(x: &[T], u: &[T], p: &QuadcopterParams) -> Result<Vec<T>> {
    check_len("quadcopter state", 12, x.len())?;
    check_len("quadcopter control", 4, u.len())?;
    if let Some(i) = u.iter().position(|w| w.min_value() < 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative motor speed on motor {i}"
        )));
    }
    let w2: Vec<T> = u.iter().map(|&w| w * w).collect();
    let thrust = (w2[0] + w2[1] + w2[2] + w2[3]) * p.k_f;

    let (phi, theta, psi) = (x[6], x[7], x[8]);
    let (sphi, cphi) = (phi.sin(), phi.cos());
    let (sth, cth) = (theta.sin(), theta.cos());
    let (spsi, cpsi) = (psi.sin(), psi.cos());
    let dir = [
        cpsi * sth * cphi + spsi * sphi,
        spsi * sth * cphi - cpsi * sphi,
        cth * cphi,
    ];
    let acc = [
        dir[0] * thrust / p.m,
        dir[1] * thrust / p.m,
        (dir[2] * thrust - p.m * p.g) / p.m,
    ];

    let arm = p.l / std::f64::consts::SQRT_2;
    let tau = [
        (w2[0] + w2[1] - w2[2] - w2[3]) * (p.k_f * arm),
        (w2[1] + w2[2] - w2[0] - w2[3]) * (p.k_f * arm),
        (w2[1] + w2[3] - w2[0] - w2[2]) * p.k_t,
    ];
    let rates = [x[9], x[10], x[11]];
    let jw = mat3_vec(&p.j, &rates);
    let gyro = [
        rates[1] * jw[2] - rates[2] * jw[1],
        rates[2] * jw[0] - rates[0] * jw[2],
        rates[0] * jw[1] - rates[1] * jw[0],
    ];
    let net = [tau[0] - gyro[0], tau[1] - gyro[1], tau[2] - gyro[2]];
    let ang = mat3_vec(&p.j_inverse(), &net);

    Ok(vec![
        x[3], x[4], x[5], acc[0], acc[1], acc[2], rates[0], rates[1], rates[2], ang[0], ang[1],
        ang[2],
    ])
}
