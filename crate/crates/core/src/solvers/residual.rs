use super::reference::Reference;
use super::scheme::{scheme_step, Scheme};
use crate::dynamics::Field;
use crate::error::{Error, Result};

/// One normalized local residual with its error diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// `(Φ − x − εψ) / ε^(p+1)`.
    pub r: Vec<f64>,
    /// `‖ε^(p+1) R‖₂`.
    pub local_error: f64,
    /// `‖x(t_k) − x_k‖₂` of the base-solver rollout; zero for isolated samples.
    pub global_error: f64,
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn local_error_of(scheme: Scheme, eps: f64, r: &[f64]) -> f64 {
    let s = scheme.residual_scale(eps);
    norm2(&r.iter().map(|v| s * v).collect::<Vec<_>>())
}

/// Residual of one base-solver step against the exact next state `phi_next`.
pub fn compute_residual<F: Field<f64> + ?Sized>(
    f: &F,
    scheme: Scheme,
    phi_next: &[f64],
    t: f64,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<ResidualSample> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {eps}"
        )));
    }
    let mut field = |_: f64, y: &[f64]| f.eval(y, u);
    let step = scheme_step(scheme, t, x, eps, &mut field)?;
    let scale = scheme.residual_scale(eps);
    let r: Vec<f64> = (0..x.len())
        .map(|i| (phi_next[i] - x[i] - eps * step.increment[i]) / scale)
        .collect();
    Ok(ResidualSample {
        t,
        x: x.to_vec(),
        u: u.to_vec(),
        local_error: local_error_of(scheme, eps, &r),
        r,
        global_error: 0.0,
    })
}

/// Residual at `(x, u)` with the reference flow computed on the spot.
pub fn sample_residual<F: Field<f64> + ?Sized>(
    f: &F,
    scheme: Scheme,
    reference: &Reference,
    x: &[f64],
    u: &[f64],
    eps: f64,
) -> Result<ResidualSample> {
    let phi = reference.advance(f, x, u, eps)?;
    compute_residual(f, scheme, &phi, 0.0, x, u, eps)
}

/// Residuals along a controlled trajectory: each residual starts from the exact
/// state, and `global_error` tracks the free-running base solver.
pub fn residuals_along_trajectory<F: Field<f64> + ?Sized>(
    f: &F,
    scheme: Scheme,
    reference: &Reference,
    x0: &[f64],
    controls: &[Vec<f64>],
    t0: f64,
    eps: f64,
) -> Result<Vec<ResidualSample>> {
    let mut exact = x0.to_vec();
    let mut approx = x0.to_vec();
    let mut out = Vec::with_capacity(controls.len());
    for (k, u) in controls.iter().enumerate() {
        let t = t0 + k as f64 * eps;
        let phi = reference.advance(f, &exact, u, eps)?;
        let mut sample = compute_residual(f, scheme, &phi, t, &exact, u, eps)?;
        sample.global_error = norm2(
            &exact
                .iter()
                .zip(&approx)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        out.push(sample);
        let mut field = |_: f64, y: &[f64]| f.eval(y, u);
        approx = scheme_step(scheme, t, &approx, eps, &mut field)
            .map_err(|e| match e {
                Error::Blowup { t, .. } => Error::Blowup { t, step: Some(k) },
                other => other,
            })?
            .next;
        exact = phi;
    }
    Ok(out)
}

/// CSV with columns `t, x…, u…, R…`.
pub fn residuals_to_csv(samples: &[ResidualSample]) -> String {
    let Some(first) = samples.first() else {
        return String::from("t\n");
    };
    let mut header = vec!["t".to_string()];
    header.extend((0..first.x.len()).map(|i| format!("x{i}")));
    header.extend((0..first.u.len()).map(|i| format!("u{i}")));
    header.extend((0..first.r.len()).map(|i| format!("r{i}")));
    let mut s = header.join(",");
    s.push('\n');
    for smp in samples {
        let row: Vec<String> = std::iter::once(smp.t)
            .chain(smp.x.iter().copied())
            .chain(smp.u.iter().copied())
            .chain(smp.r.iter().copied())
            .map(|v| v.to_string())
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnField;

    fn growth() -> FnField<impl Fn(&[f64], &[f64]) -> Vec<f64>> {
        FnField::new(1, 0, |x: &[f64], _: &[f64]| vec![x[0]])
    }

    #[test]
    fn euler_exact_on_constant_field() {
        let f = FnField::new(1, 0, |_: &[f64], _: &[f64]| vec![2.0]);
        let s = compute_residual(&f, Scheme::Euler, &[1.2], 0.0, &[1.0], &[], 0.1).unwrap();
        assert!(s.r[0].abs() < 1e-12);
    }

    #[test]
    fn euler_growth_residual_closed_form() {
        let f = growth();
        let eps: f64 = 0.1;
        let s = compute_residual(&f, Scheme::Euler, &[eps.exp()], 0.0, &[1.0], &[], eps).unwrap();
        assert!((s.r[0] - (eps.exp() - 1.1) / 0.01).abs() < 1e-10);
        assert!((s.r[0] - 0.5170918).abs() < 1e-7);
        let eps: f64 = 1e-3;
        let s = compute_residual(&f, Scheme::Euler, &[eps.exp()], 0.0, &[1.0], &[], eps).unwrap();
        assert!((s.r[0] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn local_error_is_rescaled_residual_norm() {
        let f = growth();
        for scheme in Scheme::ALL {
            let s = sample_residual(&f, scheme, &Reference::default(), &[1.3], &[], 0.05).unwrap();
            assert_eq!(s.local_error, local_error_of(scheme, 0.05, &s.r));
        }
    }

    #[test]
    fn zero_step_rejected() {
        assert!(compute_residual(&growth(), Scheme::Euler, &[1.0], 0.0, &[1.0], &[], 0.0).is_err());
    }

    #[test]
    fn trajectory_residuals_track_global_error() {
        let f = crate::dynamics::Dynamics::SpringMass(Default::default());
        let controls = vec![vec![0.0]; 20];
        let samples = residuals_along_trajectory(
            &f,
            Scheme::Euler,
            &Reference::default(),
            &[1.0, 0.0],
            &controls,
            0.0,
            0.1,
        )
        .unwrap();
        assert_eq!(samples.len(), 20);
        assert_eq!(samples[0].global_error, 0.0);
        assert!(samples[19].global_error > samples[1].global_error);
        let csv = residuals_to_csv(&samples);
        assert!(csv.starts_with("t,x0,x1,u0,r0,r1\n"));
        assert_eq!(csv.lines().count(), 21);
    }
}
