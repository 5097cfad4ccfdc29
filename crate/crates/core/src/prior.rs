//! Independent priors on each coefficient and the penalized one-dimensional
//! Newton step.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Normal,
    Laplace,
    /// Flat prior; plain maximum likelihood.
    None,
}

impl FromStr for PriorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(PriorKind::Normal),
            "laplace" => Ok(PriorKind::Laplace),
            "none" => Ok(PriorKind::None),
            _ => Err(Error::Invalid(format!("unknown prior `{s}`"))),
        }
    }
}

impl std::fmt::Display for PriorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorKind::Normal => "normal",
            PriorKind::Laplace => "laplace",
            PriorKind::None => "none",
        })
    }
}

/// How the Laplace hyperparameter is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaplaceParam {
    /// The hyperparameter is the variance `σ²`; scale `b = sqrt(σ²/2)`.
    #[default]
    Variance,
    /// The hyperparameter is the scale `b` itself.
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub variance: f64,
    pub laplace_param: LaplaceParam,
}

impl PriorSpec {
    pub fn new(kind: PriorKind, variance: f64) -> Result<Self> {
        let spec = PriorSpec {
            kind,
            variance,
            laplace_param: LaplaceParam::Variance,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn normal(variance: f64) -> Self {
        Self::new(PriorKind::Normal, variance).expect("variance must be positive")
    }

    pub fn laplace(variance: f64) -> Self {
        Self::new(PriorKind::Laplace, variance).expect("variance must be positive")
    }

    pub fn none() -> Self {
        PriorSpec {
            kind: PriorKind::None,
            variance: 1.0,
            laplace_param: LaplaceParam::Variance,
        }
    }

    pub fn with_laplace_param(mut self, param: LaplaceParam) -> Self {
        self.laplace_param = param;
        self
    }

    /// Same family with a different hyperparameter.
    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != PriorKind::None && !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Invalid(format!(
                "prior variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    /// Laplace scale `b`.
    pub fn laplace_scale(&self) -> f64 {
        match self.laplace_param {
            LaplaceParam::Variance => (self.variance / 2.0).sqrt(),
            LaplaceParam::Scale => self.variance,
        }
    }

    pub fn log_density(&self, beta: &[f64]) -> f64 {
        match self.kind {
            PriorKind::None => 0.0,
            PriorKind::Normal => {
                let v = self.variance;
                let norm = -0.5 * (2.0 * PI * v).ln();
                beta.iter().map(|b| -b * b / (2.0 * v) + norm).sum()
            }
            PriorKind::Laplace => {
                let b = self.laplace_scale();
                let norm = -(2.0 * b).ln();
                beta.iter().map(|x| -x.abs() / b + norm).sum()
            }
        }
    }

    /// Unbounded step for coordinate value `beta_j` given the likelihood's
    /// one-dimensional gradient `g` and Hessian `h`.
    ///
    /// Laplace coefficients never cross zero in one step: a crossing step is
    /// cut to land exactly on 0. At 0, a move is taken only in a direction
    /// whose one-sided penalized derivative is positive.
    pub fn penalized_step(&self, beta_j: f64, g: f64, h: f64) -> Result<f64> {
        match self.kind {
            PriorKind::None => {
                if h == 0.0 {
                    return Err(Error::UndefinedStep(0));
                }
                Ok(-g / h)
            }
            PriorKind::Normal => {
                let v = self.variance;
                Ok(-(g - beta_j / v) / (h - 1.0 / v))
            }
            PriorKind::Laplace => {
                let rate = 1.0 / self.laplace_scale();
                if h == 0.0 {
                    // flat likelihood: the penalized optimum is the prior mode
                    return Ok(-beta_j);
                }
                if beta_j != 0.0 {
                    let s = beta_j.signum();
                    let step = -(g - s * rate) / h;
                    if (beta_j + step).signum() != s || beta_j + step == 0.0 {
                        return Ok(-beta_j);
                    }
                    return Ok(step);
                }
                let up = -(g - rate) / h;
                if up > 0.0 {
                    return Ok(up);
                }
                let down = -(g + rate) / h;
                if down < 0.0 {
                    return Ok(down);
                }
                Ok(0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn densities() {
        assert_relative_eq!(
            PriorSpec::normal(1.0).log_density(&[0.0]),
            -0.918_938_533_204_672_7,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            PriorSpec::laplace(2.0).log_density(&[0.5]),
            -0.5 - 2f64.ln(),
            max_relative = 1e-14
        );
        assert_eq!(PriorSpec::none().log_density(&[3.0, -1.0]), 0.0);
    }

    #[test]
    fn laplace_density_integrates_to_one() {
        // trapezoid rule over a wide window
        let p = PriorSpec::laplace(0.7);
        let (lo, hi, n) = (-20.0, 20.0, 400_000);
        let dx = (hi - lo) / n as f64;
        let mass: f64 = (0..=n)
            .map(|i| {
                let x = lo + i as f64 * dx;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * p.log_density(&[x]).exp()
            })
            .sum::<f64>()
            * dx;
        assert_relative_eq!(mass, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn scale_convention_switch() {
        let p = PriorSpec::laplace(2.0);
        assert_relative_eq!(p.laplace_scale(), 1.0);
        assert_relative_eq!(p.with_laplace_param(LaplaceParam::Scale).laplace_scale(), 2.0);
    }

    #[test]
    fn steps() {
        assert_eq!(PriorSpec::none().penalized_step(0.0, 0.5, -0.25).unwrap(), 2.0);
        assert_eq!(PriorSpec::laplace(2.0).penalized_step(0.0, 0.5, -0.25).unwrap(), 0.0);
        assert_eq!(PriorSpec::normal(1.0).penalized_step(1.0, 0.0, -1.0).unwrap(), -0.5);
        assert!(matches!(
            PriorSpec::none().penalized_step(0.0, 0.1, 0.0),
            Err(Error::UndefinedStep(_))
        ));
    }

    #[test]
    fn laplace_zero_crossing_is_cut() {
        let p = PriorSpec::laplace(2.0);
        // from 0.3, a strong negative gradient would overshoot past 0
        assert_eq!(p.penalized_step(0.3, -5.0, -1.0).unwrap(), -0.3);
        assert_eq!(p.penalized_step(-0.3, 5.0, -1.0).unwrap(), 0.3);
        // a mild step stays on the same side
        let s = p.penalized_step(0.3, 1.5, -1.0).unwrap();
        assert_relative_eq!(s, 0.5);
    }

    #[test]
    fn laplace_leaves_zero_when_gradient_dominates() {
        let p = PriorSpec::laplace(2.0);
        assert_relative_eq!(p.penalized_step(0.0, 1.5, -1.0).unwrap(), 0.5);
        assert_relative_eq!(p.penalized_step(0.0, -1.5, -1.0).unwrap(), -0.5);
    }

    #[test]
    fn zero_curvature_laplace_returns_to_mode() {
        let p = PriorSpec::laplace(1.0);
        assert_eq!(p.penalized_step(0.4, 0.0, 0.0).unwrap(), -0.4);
        assert_eq!(p.penalized_step(0.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        assert!(PriorSpec::new(PriorKind::Normal, 0.0).is_err());
        assert!(PriorSpec::new(PriorKind::Laplace, -1.0).is_err());
        assert!(PriorSpec::new(PriorKind::None, 0.0).is_ok());
    }
}
