//! Control regularization losses.
//!
//! Every loss is applied coordinate-wise to a control vector. The operations
//! here return the *unweighted* per-coordinate loss; the strength `λ` stored in
//! [`LossSpec`] is applied once by the cost assembler in [`crate::costs`].
//!
//! | kind        | `|x| ≤ β`          | `|x| > β`          |
//! |-------------|--------------------|--------------------|
//! | L2          | `x²`               | `x²`               |
//! | SmoothL1    | `0.5 x² / β`       | `|x| − 0.5 β`      |
//! | Huber       | `0.5 x²`           | `β (|x| − 0.5 β)`  |
//! | PseudoHuber | `β² (√(1 + (x/β)²) − 1)` everywhere     ||
//!
//! At the kink `|x| = β` the quadratic-branch derivatives are returned.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    #[serde(rename = "smoothl1")]
    SmoothL1,
    Huber,
    #[serde(rename = "pseudohuber")]
    PseudoHuber,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::L2,
        LossKind::SmoothL1,
        LossKind::Huber,
        LossKind::PseudoHuber,
    ];

    /// The three sparsity-inducing kinds.
    pub const SPARSE: [LossKind; 3] = [LossKind::SmoothL1, LossKind::Huber, LossKind::PseudoHuber];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::SmoothL1 => "smoothl1",
            LossKind::Huber => "huber",
            LossKind::PseudoHuber => "pseudohuber",
        }
    }

    /// Whether the shape parameter β affects the loss.
    pub fn uses_beta(self) -> bool {
        !matches!(self, LossKind::L2)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "l2" => Ok(LossKind::L2),
            "smoothl1" => Ok(LossKind::SmoothL1),
            "huber" => Ok(LossKind::Huber),
            "pseudohuber" => Ok(LossKind::PseudoHuber),
            other => Err(Error::InvalidInput(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// Loss kind, shape `beta` and strength `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    kind: LossKind,
    beta: f64,
    lambda: f64,
}

/// Value, gradient and diagonal Hessian of a loss summed over a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess_diag: DVector<f64>,
}

impl LossSpec {
    /// Builds a validated spec. For [`LossKind::L2`] the shape parameter is
    /// ignored and stored as 1.
    pub fn new(kind: LossKind, beta: f64, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        let beta = if kind.uses_beta() {
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "beta must be finite and positive, got {beta}"
                )));
            }
            beta
        } else {
            1.0
        };
        Ok(Self { kind, beta, lambda })
    }

    pub fn l2(lambda: f64) -> Result<Self> {
        Self::new(LossKind::L2, 1.0, lambda)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.kind, self.beta, lambda)
    }

    /// Per-coordinate loss, without the λ factor.
    pub fn value(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        let b = self.beta;
        let a = x.abs();
        Ok(match self.kind {
            LossKind::L2 => x * x,
            LossKind::SmoothL1 if a <= b => 0.5 * x * x / b,
            LossKind::SmoothL1 => a - 0.5 * b,
            LossKind::Huber if a <= b => 0.5 * x * x,
            LossKind::Huber => b * (a - 0.5 * b),
            LossKind::PseudoHuber => {
                let r = x / b;
                // β²(√(1+r²) − 1) rewritten to avoid cancellation near 0
                let s = (1.0 + r * r).sqrt();
                b * b * (r * r) / (s + 1.0)
            }
        })
    }

    pub fn grad(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        let b = self.beta;
        let a = x.abs();
        Ok(match self.kind {
            LossKind::L2 => 2.0 * x,
            LossKind::SmoothL1 if a <= b => x / b,
            LossKind::SmoothL1 => x.signum(),
            LossKind::Huber if a <= b => x,
            LossKind::Huber => b * x.signum(),
            LossKind::PseudoHuber => {
                let r = x / b;
                x / (1.0 + r * r).sqrt()
            }
        })
    }

    pub fn hess(&self, x: f64) -> Result<f64> {
        check_finite(x)?;
        let b = self.beta;
        let a = x.abs();
        Ok(match self.kind {
            LossKind::L2 => 2.0,
            LossKind::SmoothL1 if a <= b => 1.0 / b,
            LossKind::Huber if a <= b => 1.0,
            LossKind::SmoothL1 | LossKind::Huber => 0.0,
            LossKind::PseudoHuber => {
                let r = x / b;
                (1.0 + r * r).powf(-1.5)
            }
        })
    }

    /// Sums the loss over the coordinates of `u`. The Hessian is diagonal.
    pub fn eval_vector(&self, u: &DVector<f64>) -> Result<LossEval> {
        let n = u.len();
        let mut out = LossEval {
            value: 0.0,
            grad: DVector::zeros(n),
            hess_diag: DVector::zeros(n),
        };
        for (i, &x) in u.iter().enumerate() {
            out.value += self.value(x)?;
            out.grad[i] = self.grad(x)?;
            out.hess_diag[i] = self.hess(x)?;
        }
        Ok(out)
    }
}

/// The raw L1 norm. Only used as a reporting metric; it is not a solver loss.
pub fn l1_norm<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    values.into_iter().map(|v| v.abs()).sum()
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss argument {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec(kind: LossKind, beta: f64) -> LossSpec {
        LossSpec::new(kind, beta, 1.0).unwrap()
    }

    #[test]
    fn branch_boundaries() {
        assert_eq!(spec(LossKind::SmoothL1, 0.5).value(0.5).unwrap(), 0.25);
        assert_eq!(spec(LossKind::Huber, 0.5).value(0.5).unwrap(), 0.125);
        assert_eq!(spec(LossKind::PseudoHuber, 0.3).value(0.0).unwrap(), 0.0);
        assert_relative_eq!(
            spec(LossKind::PseudoHuber, 1.0).value(3.0).unwrap(),
            2.162_277_660_168_379_3,
            max_relative = 1e-15
        );
    }

    #[test]
    fn gradients() {
        assert_eq!(spec(LossKind::Huber, 0.5).grad(2.0).unwrap(), 0.5);
        assert_eq!(spec(LossKind::SmoothL1, 0.5).grad(-2.0).unwrap(), -1.0);
        assert_relative_eq!(
            spec(LossKind::PseudoHuber, 1.0).grad(1.0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            max_relative = 1e-15
        );
    }

    #[test]
    fn second_derivatives() {
        assert_eq!(spec(LossKind::L2, 1.0).hess(7.0).unwrap(), 2.0);
        assert_eq!(spec(LossKind::Huber, 0.5).hess(3.0).unwrap(), 0.0);
        assert_eq!(spec(LossKind::PseudoHuber, 1.0).hess(0.0).unwrap(), 1.0);
        // kink takes the quadratic branch
        assert_eq!(spec(LossKind::Huber, 0.5).hess(0.5).unwrap(), 1.0);
        assert_eq!(spec(LossKind::SmoothL1, 0.5).hess(-0.5).unwrap(), 2.0);
    }

    #[test]
    fn vector_evaluation() {
        let l2 = spec(LossKind::L2, 1.0);
        let e = l2.eval_vector(&DVector::from_vec(vec![1.0, -2.0])).unwrap();
        assert_eq!(e.value, 5.0);
        assert_eq!(e.grad.as_slice(), &[2.0, -4.0]);
        assert_eq!(e.hess_diag.as_slice(), &[2.0, 2.0]);

        let huber = spec(LossKind::Huber, 1.0);
        let e = huber.eval_vector(&DVector::from_vec(vec![0.5, 3.0])).unwrap();
        assert_eq!(e.value, 2.625);

        for kind in LossKind::ALL {
            let e = spec(kind, 0.7).eval_vector(&DVector::zeros(3)).unwrap();
            assert_eq!(e.value, 0.0);
            assert!(e.grad.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn rejects_invalid() {
        assert!(LossSpec::new(LossKind::Huber, 0.0, 1.0).is_err());
        assert!(LossSpec::new(LossKind::SmoothL1, -1.0, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Huber, 1.0, -1e-3).is_err());
        assert_eq!(LossSpec::new(LossKind::L2, -5.0, 1.0).unwrap().beta(), 1.0);
        assert!(spec(LossKind::Huber, 1.0).value(f64::NAN).is_err());
        assert!(spec(LossKind::PseudoHuber, 1.0).grad(f64::INFINITY).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("Pseudo-Huber".parse::<LossKind>().unwrap(), LossKind::PseudoHuber);
        assert_eq!("smooth_l1".parse::<LossKind>().unwrap(), LossKind::SmoothL1);
        assert!("l1".parse::<LossKind>().is_err());
    }

    #[test]
    fn kink_continuity() {
        let eps = 1e-8;
        for kind in [LossKind::SmoothL1, LossKind::Huber] {
            for beta in [1e-2, 0.5, 1.0, 3.0] {
                let s = spec(kind, beta);
                let l = s.value(beta - eps).unwrap();
                let r = s.value(beta + eps).unwrap();
                assert!((l - r).abs() < 1e-6, "{kind} value jump at β={beta}");
                let gl = s.grad(beta - eps).unwrap();
                let gr = s.grad(beta + eps).unwrap();
                // the quadratic-branch slope is 1 − ε/β just below the kink
                assert!((gl - gr).abs() < 1e-6 * (1.0 / beta).max(1.0), "{kind} gradient jump at β={beta}");
            }
        }
    }

    #[test]
    fn huber_below_smoothl1_for_small_beta() {
        let h = spec(LossKind::Huber, 0.5);
        let s = spec(LossKind::SmoothL1, 0.5);
        for i in 0..200 {
            let x = 1.0 + 0.05 * f64::from(i);
            for x in [x, -x] {
                assert!(h.value(x).unwrap() <= s.value(x).unwrap());
            }
        }
    }

    #[test]
    fn asymptotic_slope() {
        for beta in [1e-3, 0.5, 1.0, 4.0] {
            for kind in LossKind::SPARSE {
                let s = spec(kind, beta);
                let slope = if kind == LossKind::SmoothL1 { 1.0 } else { beta };
                for m in [10.0, 25.0, 1e3, 1e6] {
                    let g = s.grad(m * beta).unwrap().abs();
                    assert!(g >= 0.99 * slope && g <= slope, "{kind} β={beta} x={}", m * beta);
                }
            }
        }
    }

    fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for kind in LossKind::ALL {
            for beta in [0.3, 1.0, 2.5] {
                let s = spec(kind, beta);
                for i in -400..=400 {
                    let x = f64::from(i) * 0.0125;
                    if kind != LossKind::PseudoHuber && (x.abs() - beta).abs() <= 1e-3 {
                        continue;
                    }
                    let fd_g = central(|t| s.value(t).unwrap(), x);
                    let fd_h = central(|t| s.grad(t).unwrap(), x);
                    let g = s.grad(x).unwrap();
                    let h = s.hess(x).unwrap();
                    assert!((fd_g - g).abs() <= 1e-6 * g.abs().max(1.0), "{kind} grad at {x}");
                    assert!((fd_h - h).abs() <= 1e-6 * h.abs().max(1.0), "{kind} hess at {x}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn even_value_odd_gradient(x in -1e3f64..1e3, beta in 1e-3f64..10.0, k in 0usize..4) {
            let s = spec(LossKind::ALL[k], beta);
            prop_assert_eq!(s.value(x).unwrap(), s.value(-x).unwrap());
            prop_assert_eq!(s.grad(x).unwrap(), -s.grad(-x).unwrap());
            prop_assert!(s.value(x).unwrap() >= 0.0);
            prop_assert!(s.hess(x).unwrap() >= 0.0);
        }
    }
}
