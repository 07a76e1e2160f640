use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const ELU_ALPHA: f64 = 1.0;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// Elementwise nonlinearities available to every layer.
///
/// At exactly zero, `Relu` and `LeakyRelu` use the negative-branch slope
/// (0 and 0.01 respectively). `Gelu` is the tanh approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    Elu,
    Tanh,
    Softplus,
    Gelu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Elu,
        ActivationKind::Tanh,
        ActivationKind::Softplus,
        ActivationKind::Gelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Elu => "elu",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Softplus => "softplus",
            ActivationKind::Gelu => "gelu",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_RELU_SLOPE * x
                }
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            ActivationKind::Tanh => x.tanh(),
            // max(x, 0) + ln(1 + e^-|x|) never overflows
            ActivationKind::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            ActivationKind::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
        }
    }

    /// Derivative with respect to the input, evaluated at `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_RELU_SLOPE
                }
            }
            ActivationKind::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Softplus => {
                // logistic sigmoid, evaluated on the stable side
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            ActivationKind::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = inner.tanh();
                let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            }
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown activation '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::ActivationKind::*;
    use super::*;

    #[test]
    fn analytic_values() {
        assert_eq!(Relu.apply(-1.0), 0.0);
        assert_eq!(Relu.apply(2.0), 2.0);
        assert_eq!(Tanh.apply(0.0), 0.0);
        assert_eq!(Gelu.apply(0.0), 0.0);
        assert!((Softplus.apply(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        // closed form alpha * (e^-1 - 1), computed independently
        let expected = 1.0 * ((-1.0f64).exp() - 1.0);
        assert!((Elu.apply(-1.0) - expected).abs() < 1e-15);
        assert!((Elu.apply(-1.0) + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn kink_tie_break_uses_negative_slope() {
        assert_eq!(Relu.derivative(0.0), 0.0);
        assert_eq!(LeakyRelu.derivative(0.0), LEAKY_RELU_SLOPE);
    }

    #[test]
    fn gelu_tanh_form_close_to_erf_form() {
        // erf via a high-order series for |x| <= 3
        fn erf(x: f64) -> f64 {
            let mut sum = 0.0;
            let mut term = x;
            let mut n = 0.0;
            while term.abs() > 1e-17 {
                sum += term / (2.0 * n + 1.0);
                n += 1.0;
                term *= -x * x / n;
            }
            2.0 / std::f64::consts::PI.sqrt() * sum
        }
        for i in -30..=30 {
            let x = i as f64 / 10.0;
            let exact = 0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2));
            assert!((Gelu.apply(x) - exact).abs() < 1e-3, "x={x}");
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let h = 1e-6;
        for kind in ActivationKind::ALL {
            for &x in &[-1.7, -0.3, 0.4, 1.9] {
                let fd = (kind.apply(x + h) - kind.apply(x - h)) / (2.0 * h);
                assert!((fd - kind.derivative(x)).abs() < 1e-7, "{kind} at {x}");
            }
        }
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert_eq!(Softplus.apply(1000.0), 1000.0);
        assert!(Softplus.apply(-1000.0) >= 0.0);
        assert!(Softplus.derivative(-1000.0).is_finite());
    }

    #[test]
    fn names_round_trip() {
        for kind in ActivationKind::ALL {
            assert_eq!(kind.name().parse::<ActivationKind>().unwrap(), kind);
        }
    }
}
