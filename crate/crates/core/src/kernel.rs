//! Radial basis kernels and their spatial derivatives.
//!
//! A kernel is `Φ(x, y) = φ(|x − y|)` for a univariate profile `φ`. All
//! profiles here are smooth, so derivatives are computed from closed forms
//! rather than finite differences. Writing the profile as a function of
//! `s = |x − y|²` keeps every formula polynomial-smooth at `r = 0` (there is
//! no `√s` anywhere), which matters for the multiquadric family.
//!
//! Derivatives with respect to the first argument are supported up to total
//! order 3: the time stepper needs orders ≤ 2, and the derivative-sum
//! constant in the stability diagnostics needs order 3.

use crate::error::{Error, Result};

/// Supported radial basis function families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbfFamily {
    /// `φ(r) = exp(−α r²)`, positive definite.
    Gaussian,
    /// `φ(r) = (α² + r²)^β` with `β` not a nonnegative integer;
    /// conditionally positive definite of order `⌈β⌉` for `β > 0`.
    Multiquadric,
    /// `φ(r) = (α² + r²)^β` with `β < 0`, positive definite.
    InverseMultiquadric,
}

impl RbfFamily {
    pub fn name(&self) -> &'static str {
        match self {
            RbfFamily::Gaussian => "gaussian",
            RbfFamily::Multiquadric => "multiquadric",
            RbfFamily::InverseMultiquadric => "inverse_multiquadric",
        }
    }
}

/// A fully specified radial kernel: family, shape parameters, conditional
/// positive definiteness order `m`, and the effective smoothness order `ν`
/// consumed by the interpolation error indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: RbfFamily,
    alpha: f64,
    beta: f64,
    cpd_order: usize,
    nu: u32,
}

const DEFAULT_NU: u32 = 4;

fn is_nonnegative_integer(x: f64) -> bool {
    x >= 0.0 && x.fract() == 0.0
}

impl KernelSpec {
    /// Gaussian kernel `exp(−α r²)` with shape parameter `α > 0`.
    pub fn gaussian(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel shape alpha must be positive and finite, got {alpha}"
            )));
        }
        Ok(Self {
            family: RbfFamily::Gaussian,
            alpha,
            beta: 0.0,
            cpd_order: 0,
            nu: DEFAULT_NU,
        })
    }

    /// Multiquadric kernel `(α² + r²)^β`. `β` must not be a nonnegative
    /// integer; for `β > 0` the kernel is conditionally positive definite of
    /// order `⌈β⌉`, for `β < 0` it is positive definite.
    pub fn multiquadric(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel shape alpha must be positive and finite, got {alpha}"
            )));
        }
        if !beta.is_finite() || is_nonnegative_integer(beta) {
            return Err(Error::InvalidParameter(format!(
                "multiquadric exponent beta must not be a nonnegative integer, got {beta}"
            )));
        }
        let cpd_order = if beta > 0.0 { beta.ceil() as usize } else { 0 };
        Ok(Self {
            family: RbfFamily::Multiquadric,
            alpha,
            beta,
            cpd_order,
            nu: DEFAULT_NU,
        })
    }

    /// Inverse multiquadric kernel `(α² + r²)^β` with `β < 0`.
    pub fn inverse_multiquadric(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel shape alpha must be positive and finite, got {alpha}"
            )));
        }
        if !(beta < 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "inverse multiquadric exponent beta must be negative, got {beta}"
            )));
        }
        Ok(Self {
            family: RbfFamily::InverseMultiquadric,
            alpha,
            beta,
            cpd_order: 0,
            nu: DEFAULT_NU,
        })
    }

    /// Override the effective smoothness order `ν ≥ 2` used by the error
    /// indicator. All families here are C^∞, so `ν` is a modelling choice.
    pub fn with_nu(mut self, nu: u32) -> Result<Self> {
        if nu < 2 {
            return Err(Error::InvalidParameter(format!(
                "smoothness order nu must be >= 2, got {nu}"
            )));
        }
        self.nu = nu;
        Ok(self)
    }

    pub fn family(&self) -> RbfFamily {
        self.family
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Conditional positive definiteness order `m`; 0 means positive definite.
    pub fn cpd_order(&self) -> usize {
        self.cpd_order
    }

    pub fn nu(&self) -> u32 {
        self.nu
    }

    /// Profile value as a function of the squared radius `s = r²`.
    fn profile(&self, s: f64) -> f64 {
        match self.family {
            RbfFamily::Gaussian => (-self.alpha * s).exp(),
            RbfFamily::Multiquadric | RbfFamily::InverseMultiquadric => {
                (self.alpha * self.alpha + s).powf(self.beta)
            }
        }
    }

    /// First three derivatives of the profile with respect to `s = r²`.
    fn profile_derivatives(&self, s: f64) -> (f64, f64, f64, f64) {
        match self.family {
            RbfFamily::Gaussian => {
                let a = self.alpha;
                let e = (-a * s).exp();
                (e, -a * e, a * a * e, -a * a * a * e)
            }
            RbfFamily::Multiquadric | RbfFamily::InverseMultiquadric => {
                let b = self.beta;
                let base = self.alpha * self.alpha + s;
                let p0 = base.powf(b);
                let p1 = b * base.powf(b - 1.0);
                let p2 = b * (b - 1.0) * base.powf(b - 2.0);
                let p3 = b * (b - 1.0) * (b - 2.0) * base.powf(b - 3.0);
                (p0, p1, p2, p3)
            }
        }
    }

    /// Evaluate `Φ(x, y) = φ(|x − y|)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: x.len().max(1),
                got: y.len(),
            });
        }
        let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.profile(s))
    }

    /// Partial derivative `D^α_x Φ(x, y)` with respect to the first argument,
    /// for a multiindex `α` of total order at most 3.
    ///
    /// With `u = x − y` and `ψ(s) = φ(√s)` the chain rule on `s = |u|²` gives
    /// closed forms per order; third and higher derivatives of `s` vanish, so
    /// no term beyond `ψ'''` appears.
    pub fn derivative(&self, multi_index: &[usize], x: &[f64], y: &[f64]) -> Result<f64> {
        let d = x.len();
        if y.len() != d || d == 0 {
            return Err(Error::DimensionMismatch {
                expected: d.max(1),
                got: y.len(),
            });
        }
        if multi_index.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: multi_index.len(),
            });
        }
        let order: usize = multi_index.iter().sum();
        if order > 3 {
            return Err(Error::DerivativeOrder { order });
        }

        let u: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let s: f64 = u.iter().map(|v| v * v).sum();
        let (p0, p1, p2, p3) = self.profile_derivatives(s);

        // Flatten the multiindex into repeated axis labels, e.g. (2,1) -> [0,0,1].
        let mut axes = Vec::with_capacity(order);
        for (axis, &count) in multi_index.iter().enumerate() {
            for _ in 0..count {
                axes.push(axis);
            }
        }

        let value = match axes.as_slice() {
            [] => p0,
            [i] => 2.0 * u[*i] * p1,
            [i, j] => {
                let delta = if i == j { 1.0 } else { 0.0 };
                4.0 * u[*i] * u[*j] * p2 + 2.0 * delta * p1
            }
            [i, j, k] => {
                let d_ij = if i == j { 1.0 } else { 0.0 };
                let d_ik = if i == k { 1.0 } else { 0.0 };
                let d_jk = if j == k { 1.0 } else { 0.0 };
                8.0 * u[*i] * u[*j] * u[*k] * p3
                    + 4.0 * (d_jk * u[*i] + d_ik * u[*j] + d_ij * u[*k]) * p2
            }
            _ => unreachable!("order bounded above"),
        };
        Ok(value)
    }
}

/// All multiindices in `d` variables with total order at most `max_order`,
/// in graded lexicographic order.
pub fn multi_indices_up_to(d: usize, max_order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        append_indices_of_order(d, order, &mut Vec::new(), &mut out);
    }
    out
}

fn append_indices_of_order(
    d: usize,
    remaining: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if prefix.len() + 1 == d {
        let mut idx = prefix.clone();
        idx.push(remaining);
        out.push(idx);
        return;
    }
    for take in (0..=remaining).rev() {
        prefix.push(take);
        append_indices_of_order(d, remaining - take, prefix, out);
        prefix.pop();
    }
}
