use serde::{Deserialize, Serialize};

/// Element-wise activation applied after an affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    /// `sin(w0 · z)`, SIREN-style.
    Sine {
        w0: f64,
    },
    /// `z + sin²(a z) / a`.
    Snake {
        a: f64,
    },
}

impl Activation {
    pub fn sine() -> Self {
        Activation::Sine { w0: 1.0 }
    }

    pub fn snake() -> Self {
        Activation::Snake { a: 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sine { .. } => "sine",
            Activation::Snake { .. } => "snake",
        }
    }

    /// Parses `tanh`, `relu`, `softplus`, `sine`, `snake` with the given frequency.
    pub fn from_name(name: &str, freq: f64) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "softplus" => Activation::Softplus,
            "sine" | "sin" | "siren" => Activation::Sine { w0: freq },
            "snake" => Activation::Snake { a: freq },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Activation::Sine { w0 } if !(w0.is_finite() && w0 > 0.0) => {
                Err(format!("sine frequency must be positive, got {w0}"))
            }
            Activation::Snake { a } if !(a.is_finite() && a > 0.0) => {
                Err(format!("snake frequency must be positive, got {a}"))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Sine { w0 } => (w0 * x).sin(),
            Activation::Snake { a } => {
                let s = (a * x).sin();
                x + s * s / a
            }
        }
    }

    /// Derivative with respect to the pre-activation `x`. ReLU'(0) = 0.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sine { w0 } => w0 * (w0 * x).cos(),
            Activation::Snake { a } => 1.0 + (2.0 * a * x).sin(),
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn snake_hand_value() {
        let s = Activation::snake();
        assert!((s.apply(PI / 2.0) - (PI / 2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn snake_fixed_points_at_multiples_of_pi() {
        for a in [0.5, 1.0, 2.0, 3.7] {
            let s = Activation::Snake { a };
            for k in -20i32..=20 {
                let x = k as f64 * PI / a;
                assert_eq!(s.apply(x), x, "a={a} k={k}");
            }
        }
    }

    #[test]
    fn softplus_relu_asymptotics() {
        for x in [20.0, -20.0, 30.0, -30.0] {
            let d = softplus(x) - Activation::Relu.apply(x);
            assert!(d.abs() < 1e-8, "x={x} diff={d}");
        }
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(800.0).is_finite());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let acts = [
            Activation::Tanh,
            Activation::Softplus,
            Activation::Sine { w0: 1.7 },
            Activation::Snake { a: 0.8 },
            Activation::Relu,
        ];
        let h = 1e-6;
        for act in acts {
            for i in 0..50 {
                let x = -3.0 + 0.1237 * i as f64;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.derivative(x)).abs() < 1e-6, "{act:?} at {x}");
            }
        }
    }
}
