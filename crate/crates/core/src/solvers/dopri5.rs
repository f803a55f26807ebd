//! Dormand-Prince 5(4) with PI step-size control and 4th-order dense output.
//!
//! Error norm: RMS over components of `err_i / (atol + rtol·max(|y0_i|, |y1_i|))`;
//! a step is accepted when the norm is at most 1. Step-size control follows
//! the Hairer-Wanner PI controller (`safe = 0.9`, `β = 0.04`, factor clamped to
//! `[0.2, 10]`). Dense output fits a quartic through the step end points,
//! their derivatives and a 4th-order midpoint estimate.

use crate::error::{Error, Result};

use super::scheme::StageFn;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// 5th-order weights (the last stage row of `A`, FSAL).
#[cfg(test)]
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// `b − b̂`: difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Weights giving the solution at the step midpoint.
const C_MID: [f64; 7] = [
    6025192743.0 / 30085553152.0 / 2.0,
    0.0,
    51252292925.0 / 65400821598.0 / 2.0,
    -2691868925.0 / 45128329728.0 / 2.0,
    187940372067.0 / 1594534317056.0 / 2.0,
    -1776094331.0 / 19743644256.0 / 2.0,
    11237099.0 / 235043384.0 / 2.0,
];

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    /// Smallest admissible step (a floor of 10 ulp of `t` always applies).
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-7,
            atol: 1e-7,
            h0: None,
            h_min: 0.0,
            max_steps: 1_000_000,
        }
    }
}

impl Dopri5Options {
    pub fn tol(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dopri5Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub nfe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: Dopri5Stats,
}

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(x, s)| (x / s).powi(2)).sum();
    (s / v.len().max(1) as f64).sqrt()
}

fn eval(f: &mut StageFn<'_, f64>, t: f64, y: &[f64], stats: &mut Dopri5Stats) -> Result<Vec<f64>> {
    stats.nfe += 1;
    let k = f(t, y)?;
    if k.iter().all(|v| v.is_finite()) {
        Ok(k)
    } else {
        Err(Error::Blowup { t, step: None })
    }
}

fn initial_step(
    f: &mut StageFn<'_, f64>,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    opts: &Dopri5Options,
    stats: &mut Dopri5Stats,
) -> Result<f64> {
    let scale: Vec<f64> = y0.iter().map(|y| opts.atol + opts.rtol * y.abs()).collect();
    let d0 = rms_norm(y0, &scale);
    let d1 = rms_norm(f0, &scale);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, k)| y + h0 * k).collect();
    let f1 = eval(f, t0 + h0, &y1, stats)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_norm(&diff, &scale) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

/// Evaluates the quartic interpolant on `[t0, t0 + dt]` at `t`.
fn interpolate(
    t0: f64,
    dt: f64,
    y0: &[f64],
    y1: &[f64],
    ymid: &[f64],
    f0: &[f64],
    f1: &[f64],
    t: f64,
) -> Vec<f64> {
    let x = (t - t0) / dt;
    (0..y0.len())
        .map(|i| {
            let a = 2.0 * dt * (f1[i] - f0[i]) - 8.0 * (y1[i] + y0[i]) + 16.0 * ymid[i];
            let b = dt * (5.0 * f0[i] - 3.0 * f1[i]) + 18.0 * y0[i] + 14.0 * y1[i] - 32.0 * ymid[i];
            let c = dt * (f1[i] - 4.0 * f0[i]) - 11.0 * y0[i] - 5.0 * y1[i] + 16.0 * ymid[i];
            let d = dt * f0[i];
            let e = y0[i];
            (((a * x + b) * x + c) * x + d) * x + e
        })
        .collect()
}

/// Integrates `ẏ = f(t, y)` from `t0` to `t_end`, reporting states at the sorted
/// times `t_eval ⊂ [t0, t_end]`.
pub fn dopri5_solve(
    f: &mut StageFn<'_, f64>,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    t_eval: &[f64],
    opts: &Dopri5Options,
) -> Result<DenseSolution> {
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tolerances must be positive, got rtol={} atol={}",
            opts.rtol, opts.atol
        )));
    }
    if !(t_end >= t0) || !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::InvalidInput(format!(
            "invalid interval [{t0}, {t_end}]"
        )));
    }
    if t_eval.windows(2).any(|w| w[1] < w[0]) || t_eval.iter().any(|&t| !(t >= t0 && t <= t_end)) {
        return Err(Error::InvalidInput(
            "evaluation times must be sorted and inside the interval".into(),
        ));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Blowup { t: t0, step: None });
    }

    let mut stats = Dopri5Stats::default();
    let mut out_states = Vec::with_capacity(t_eval.len());
    let mut next_out = 0;
    while next_out < t_eval.len() && t_eval[next_out] == t0 {
        out_states.push(y0.to_vec());
        next_out += 1;
    }
    if t_end == t0 {
        return Ok(DenseSolution {
            times: t_eval.to_vec(),
            states: out_states,
            stats,
        });
    }

    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    k[0] = eval(f, t, &y, &mut stats)?;
    let mut h = match opts.h0 {
        Some(h) if h > 0.0 => h,
        _ => initial_step(f, t, &y, &k[0].clone(), opts, &mut stats)?,
    };
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut ystage = vec![0.0; n];

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let h_min = opts
            .h_min
            .max(10.0 * f64::EPSILON * t.abs().max(f64::MIN_POSITIVE));
        let remaining = t_end - t;
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        if h < h_min && !last {
            return Err(Error::StepUnderflow { t, h, h_min });
        }

        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ystage[i] = y[i] + h * acc;
            }
            let ts = if s == 6 { t + h } else { t + C[s] * h };
            k[s] = eval(f, ts, &ystage, &mut stats)?;
        }
        // stage 7 was evaluated at y1 (FSAL)
        let y1 = ystage.clone();

        let err_vec: Vec<f64> = (0..n)
            .map(|i| h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>())
            .collect();
        let scale: Vec<f64> = (0..n)
            .map(|i| opts.atol + opts.rtol * y[i].abs().max(y1[i].abs()))
            .collect();
        let err = rms_norm(&err_vec, &scale);
        if !err.is_finite() {
            return Err(Error::Blowup {
                t: t + h,
                step: None,
            });
        }

        let fac11 = err.powf(0.2 - 0.75 * BETA);
        if err <= 1.0 {
            stats.accepted += 1;
            let t1 = if last { t_end } else { t + h };
            let ready = next_out < t_eval.len() && t_eval[next_out] <= t1;
            if ready {
                let ymid: Vec<f64> = (0..n)
                    .map(|i| y[i] + h * (0..7).map(|s| C_MID[s] * k[s][i]).sum::<f64>())
                    .collect();
                while next_out < t_eval.len() && t_eval[next_out] <= t1 {
                    let te = t_eval[next_out];
                    let state = if te == t1 {
                        y1.clone()
                    } else {
                        interpolate(t, h, &y, &y1, &ymid, &k[0], &k[6], te)
                    };
                    out_states.push(state);
                    next_out += 1;
                }
            }
            let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            facold = err.max(1e-4);
            last_rejected = false;
            t = t1;
            y = y1;
            k[0] = k[6].clone();
            if last {
                break;
            }
            h = h_new;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }

    Ok(DenseSolution {
        times: t_eval.to_vec(),
        states: out_states,
        stats,
    })
}

/// State at `t_end` only.
pub fn dopri5_final(
    f: &mut StageFn<'_, f64>,
    y0: &[f64],
    t0: f64,
    t_end: f64,
    opts: &Dopri5Options,
) -> Result<Vec<f64>> {
    let sol = dopri5_solve(f, y0, t0, t_end, &[t_end], opts)?;
    Ok(sol.states.into_iter().next().expect("one output time"))
}
