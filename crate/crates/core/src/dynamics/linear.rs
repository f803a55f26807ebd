use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::{check_len, Error, Result};
use crate::scalar::Scalar;

/// `ẋ = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

impl LinearSystem {
    pub fn new(a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidInput(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_len("rows of B", a.nrows(), b.nrows())?;
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite matrix entry".into()));
        }
        Ok(Self { a, b })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// Parses the plain-text matrix format: a header `n_x n_u`, then `n_x` rows
    /// of `A`, then `n_x` rows of `B`, whitespace separated. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims = parse_row(hl, header)?;
        if dims.len() != 2 || dims.iter().any(|d| d.fract() != 0.0 || *d < 1.0) {
            return Err(Error::Parse(format!(
                "line {hl}: header must be two positive integers `n_x n_u`"
            )));
        }
        let (nx, nu) = (dims[0] as usize, dims[1] as usize);
        let mut read = |cols: usize, what: &str| -> Result<Array2<f64>> {
            let mut m = Array2::zeros((nx, cols));
            for r in 0..nx {
                let (ln, line) = lines.next().ok_or_else(|| {
                    Error::Parse(format!("unexpected end of file reading row {r} of {what}"))
                })?;
                let row = parse_row(ln, line)?;
                if row.len() != cols {
                    return Err(Error::Parse(format!(
                        "line {ln}: row {r} of {what} has {} entries, expected {cols}",
                        row.len()
                    )));
                }
                m.row_mut(r).assign(&ndarray::Array1::from(row));
            }
            Ok(m)
        };
        let a = read(nx, "A")?;
        let b = read(nu, "B")?;
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse(format!("line {ln}: trailing data after B")));
        }
        Self::new(a, b)
    }

    /// Writes the format read by [`LinearSystem::parse`], with round-trip float formatting.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n_x(), self.n_u());
        for m in [&self.a, &self.b] {
            for row in m.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", cells.join(" "));
            }
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_row(line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| {
                Error::Parse(format!("line {line_no}: cannot parse {tok:?} as a number"))
            })
        })
        .collect()
}

/// `A x + B u`; zero entries are skipped so sparse operators stay cheap on the tape.
pub fn eval_linear<T: Scalar>(x: &[T], u: &[T], sys: &LinearSystem) -> Result<Vec<T>> {
    check_len("linear-system state", sys.n_x(), x.len())?;
    check_len("linear-system control", sys.n_u(), u.len())?;
    let mut terms = Vec::with_capacity(x.len() + u.len());
    Ok((0..sys.n_x())
        .map(|i| {
            terms.clear();
            for (j, &xj) in x.iter().enumerate() {
                let c = sys.a[[i, j]];
                if c != 0.0 {
                    terms.push((xj, c));
                }
            }
            for (j, &uj) in u.iter().enumerate() {
                let c = sys.b[[i, j]];
                if c != 0.0 {
                    terms.push((uj, c));
                }
            }
            if terms.is_empty() {
                x.first().or(u.first()).map_or_else(
                    || panic!("linear system with no state"),
                    |v| v.constant_like(0.0),
                )
            } else {
                T::lin_comb(&terms)
            }
        })
        .collect())
}

/// Physical constants of the beam stand-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams {
    pub elements: usize,
    pub length: f64,
    pub rho_a: f64,
    pub i_rho: f64,
    pub c_b: f64,
    pub c_s: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        Self {
            elements: 40,
            length: 1.0,
            rho_a: 1.0,
            i_rho: 1.0,
            c_b: 0.16,
            c_s: 0.16,
        }
    }
}

/// Cantilever Timoshenko-beam stand-in with state `[v_t, v_r, σ_t, σ_r]`, one
/// value per element each, and inputs `[torque, force]` at the free end.
///
/// Lumped diagonal masses `M = h·c·I` and a backward-difference derivative
/// `D₁ = D₂` (clamped at `x = 0`) with `D₀ = h·I` give
///
/// ```text
/// v̇_t = −M_ρA⁻¹ D₁ᵀ σ_r                 + M_ρA⁻¹ B_F u₂
/// v̇_r = −M_Iρ⁻¹ (D₂ᵀ σ_t + D₀ᵀ σ_r)     + M_Iρ⁻¹ B_T u₁
/// σ̇_t =  M_Cb⁻¹ D₂ v_r
/// σ̇_r =  M_Cs⁻¹ (D₁ v_t + D₀ v_r)
/// ```
///
/// The operator is `M⁻¹J` with `J` skew-symmetric, so the spectrum is purely
/// imaginary: energy is conserved, RK4 is stable for `ε·ω_max < 2√2`, and
/// Euler/Midpoint amplify every mode.
pub fn timoshenko_standin(p: &BeamParams) -> Result<LinearSystem> {
    let n = p.elements;
    if n == 0 {
        return Err(Error::InvalidInput(
            "beam needs at least one element".into(),
        ));
    }
    for (name, v) in [
        ("length", p.length),
        ("rho_a", p.rho_a),
        ("i_rho", p.i_rho),
        ("c_b", p.c_b),
        ("c_s", p.c_s),
    ] {
        super::mechanical::positive(name, v)?;
    }
    let h = p.length / n as f64;
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        d[[i, i]] = 1.0;
        if i > 0 {
            d[[i, i - 1]] = -1.0;
        }
    }
    let d0 = Array2::<f64>::eye(n) * h;
    let mut a = Array2::<f64>::zeros((4 * n, 4 * n));
    let block = |a: &mut Array2<f64>, r: usize, c: usize, m: &Array2<f64>, scale: f64| {
        a.slice_mut(ndarray::s![r * n..(r + 1) * n, c * n..(c + 1) * n])
            .scaled_add(scale, m);
    };
    let dt = d.t().to_owned();
    let d0t = d0.t().to_owned();
    // block order: 0 = v_t, 1 = v_r, 2 = σ_t, 3 = σ_r
    block(&mut a, 0, 3, &dt, -1.0 / (h * p.rho_a));
    block(&mut a, 1, 2, &dt, -1.0 / (h * p.i_rho));
    block(&mut a, 1, 3, &d0t, -1.0 / (h * p.i_rho));
    block(&mut a, 2, 1, &d, 1.0 / (h * p.c_b));
    block(&mut a, 3, 0, &d, 1.0 / (h * p.c_s));
    block(&mut a, 3, 1, &d0, 1.0 / (h * p.c_s));

    let mut b = Array2::<f64>::zeros((4 * n, 2));
    b[[n - 1, 1]] = 1.0 / (h * p.rho_a);
    b[[2 * n - 1, 0]] = 1.0 / (h * p.i_rho);
    LinearSystem::new(a, b)
}

/// `[sin πx, sin 3πx, 0, 0]` sampled at element end points `x_i = (i+1)·h`.
pub fn beam_initial_state(p: &BeamParams) -> Vec<f64> {
    let n = p.elements;
    let h = p.length / n as f64;
    let mut z = vec![0.0; 4 * n];
    for i in 0..n {
        let x = (i + 1) as f64 * h / p.length;
        z[i] = (std::f64::consts::PI * x).sin();
        z[n + i] = (3.0 * std::f64::consts::PI * x).sin();
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_products() {
        let zero = LinearSystem::new(Array2::zeros((2, 2)), Array2::zeros((2, 1))).unwrap();
        assert_eq!(
            eval_linear(&[4.0, -1.0], &[2.0], &zero).unwrap(),
            vec![0.0, 0.0]
        );
        let rot =
            LinearSystem::new(array![[0.0, 1.0], [-1.0, 0.0]], Array2::zeros((2, 1))).unwrap();
        assert_eq!(
            eval_linear(&[1.0, 0.0], &[0.0], &rot).unwrap(),
            vec![0.0, -1.0]
        );
        let drive = LinearSystem::new(array![[0.0]], array![[1.0]]).unwrap();
        assert_eq!(eval_linear(&[0.0], &[3.0], &drive).unwrap(), vec![3.0]);
        assert!(eval_linear(&[0.0, 1.0], &[3.0], &drive).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let sys = LinearSystem::new(
            array![[0.1, -2.5e-3], [1.0 / 3.0, 7.0]],
            array![[1.0, 0.0, 2.0], [-1.0, 5e-300, 0.0]],
        )
        .unwrap();
        let back = LinearSystem::parse(&sys.to_text()).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn malformed_files_report_lines() {
        let err = LinearSystem::parse("2 1\n1 0\n0 x\n1\n1\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = LinearSystem::parse("2 1\n1 0\n0 1\n1\n").unwrap_err();
        assert!(err.to_string().contains("end of file"), "{err}");
        let err = LinearSystem::parse("2 1\n1 0 3\n0 1\n1\n1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(LinearSystem::parse("2.5 1\n").is_err());
    }

    #[test]
    fn beam_operator_is_mass_weighted_skew() {
        let p = BeamParams::default();
        let sys = timoshenko_standin(&p).unwrap();
        assert_eq!((sys.n_x(), sys.n_u()), (160, 2));
        // M A must be skew-symmetric for the lumped diagonal M
        let n = p.elements;
        let h = p.length / n as f64;
        let mass: Vec<f64> = [p.rho_a, p.i_rho, p.c_b, p.c_s]
            .iter()
            .flat_map(|&c| std::iter::repeat_n(h * c, n))
            .collect();
        for i in 0..4 * n {
            for j in 0..4 * n {
                let lhs = mass[i] * sys.a[[i, j]];
                let rhs = -mass[j] * sys.a[[j, i]];
                assert!((lhs - rhs).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    proptest! {
        #[test]
        fn linearity(
            x1 in prop::collection::vec(-10.0..10.0f64, 3),
            x2 in prop::collection::vec(-10.0..10.0f64, 3),
            u1 in prop::collection::vec(-10.0..10.0f64, 2),
            u2 in prop::collection::vec(-10.0..10.0f64, 2),
            alpha in -3.0..3.0f64,
            beta in -3.0..3.0f64,
        ) {
            let sys = LinearSystem::new(
                array![[0.5, -1.0, 2.0], [0.0, 3.0, 0.25], [-4.0, 0.1, 0.0]],
                array![[1.0, 0.0], [0.5, -2.0], [0.0, 0.3]],
            ).unwrap();
            let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(p, q)| alpha * p + beta * q).collect()
            };
            let lhs = eval_linear(&mix(&x1, &x2), &mix(&u1, &u2), &sys).unwrap();
            let f1 = eval_linear(&x1, &u1, &sys).unwrap();
            let f2 = eval_linear(&x2, &u2, &sys).unwrap();
            for i in 0..3 {
                let rhs = alpha * f1[i] + beta * f2[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
