//! Kernel interpolation with an optional polynomial tail.
//!
//! Fitting solves the symmetric block system
//!
//! ```text
//! [ A  P ] [xi ]   [b]
//! [ P' 0 ] [eta] = [0]
//! ```
//!
//! with `A_ij = Φ(x_i, x_j)` and `P` the monomial matrix of the tail. For a
//! positive definite kernel the tail may be empty, in which case `A xi = b`
//! is solved directly. The map from data `b` to coefficients is linear; the
//! time stepper leans on that by reusing one factorization for every step.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::geometry::{unisolvency_check, Domain, SiteSet, Unisolvency};
use crate::kernel::{multi_indices_up_to, KernelSpec};

/// Basis of polynomials of total degree ≤ m−1, centered and scaled for
/// conditioning. `m = 0` means no tail at all.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialTail {
    m: usize,
    dim: usize,
    exponents: Vec<Vec<usize>>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl PolynomialTail {
    /// Empty tail (positive definite kernel, no moment conditions).
    pub fn none(dim: usize) -> Self {
        Self {
            m: 0,
            dim,
            exponents: Vec::new(),
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Tail of order `m` with monomials centered at the domain midpoint and
    /// scaled by its half-widths.
    pub fn for_domain(m: usize, domain: &Domain) -> Self {
        Self::with_centering(m, domain.dim(), domain.midpoint(), domain.half_widths())
            .expect("domain centering is always consistent")
    }

    pub fn with_centering(
        m: usize,
        dim: usize,
        center: Vec<f64>,
        scale: Vec<f64>,
    ) -> Result<Self> {
        if center.len() != dim || scale.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: center.len().min(scale.len()),
            });
        }
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter(
                "tail scale factors must be positive".into(),
            ));
        }
        let exponents = if m == 0 {
            Vec::new()
        } else {
            multi_indices_up_to(dim, m - 1)
        };
        Ok(Self {
            m,
            dim,
            exponents,
            center,
            scale,
        })
    }

    pub fn order(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension Q of the tail space: C(m−1+d, d), zero for m = 0.
    pub fn q(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<usize>] {
        &self.exponents
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Value of the ℓ-th scaled monomial at `x`.
    pub fn basis_value(&self, l: usize, x: &[f64]) -> f64 {
        self.exponents[l]
            .iter()
            .enumerate()
            .map(|(axis, &e)| ((x[axis] - self.center[axis]) / self.scale[axis]).powi(e as i32))
            .product()
    }

    /// Partial derivative `D^γ` of the ℓ-th scaled monomial at `x`.
    pub fn basis_derivative(&self, l: usize, gamma: &[usize], x: &[f64]) -> f64 {
        let mut value = 1.0;
        for axis in 0..self.dim {
            let e = self.exponents[l][axis];
            let g = gamma[axis];
            if g > e {
                return 0.0;
            }
            // d^g/dt^g t^e = e!/(e-g)! t^(e-g), then the chain rule brings a
            // factor 1/scale per differentiation.
            let t = (x[axis] - self.center[axis]) / self.scale[axis];
            let mut falling = 1.0;
            for k in 0..g {
                falling *= (e - k) as f64;
            }
            value *= falling * t.powi((e - g) as i32) / self.scale[axis].powi(g as i32);
        }
        value
    }

    /// N×Q monomial matrix over the sites.
    pub fn matrix(&self, sites: &SiteSet) -> DMatrix<f64> {
        let n = sites.len();
        let q = self.q();
        DMatrix::from_fn(n, q, |row, col| self.basis_value(col, sites.point(row)))
    }

    /// Re-express tail coefficients in raw (uncentered, unscaled) monomial
    /// coordinates. Returns `(exponent, coefficient)` pairs in graded
    /// lexicographic order.
    pub fn raw_coefficients(&self, eta: &[f64]) -> Vec<(Vec<usize>, f64)> {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (l, &coeff) in eta.iter().enumerate() {
            // Expand prod_i ((x_i - c_i)/s_i)^(e_i) by the binomial theorem.
            let mut terms: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), coeff)];
            for axis in 0..self.dim {
                let e = self.exponents[l][axis];
                let c = self.center[axis];
                let s = self.scale[axis];
                let mut next = Vec::new();
                for (exps, w) in &terms {
                    for j in 0..=e {
                        let binom = binomial(e, j);
                        let factor =
                            binom * (-c).powi((e - j) as i32) / s.powi(e as i32);
                        let mut exps2 = exps.clone();
                        exps2.push(j);
                        next.push((exps2, w * factor));
                    }
                }
                terms = next;
            }
            for (exps, w) in terms {
                *acc.entry(exps).or_insert(0.0) += w;
            }
        }
        let mut out: Vec<(Vec<usize>, f64)> = acc.into_iter().collect();
        out.sort_by_key(|(e, _)| (e.iter().sum::<usize>(), e.clone()));
        out
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Kernel + tail expansion fitted to data on a site set.
#[derive(Debug)]
pub struct Interpolant {
    kernel: KernelSpec,
    sites: Arc<SiteSet>,
    xi: DVector<f64>,
    eta: DVector<f64>,
    tail: PolynomialTail,
    domain: Option<Domain>,
    warned_outside: AtomicBool,
}

impl Clone for Interpolant {
    fn clone(&self) -> Self {
        Self {
            kernel: self.kernel,
            sites: Arc::clone(&self.sites),
            xi: self.xi.clone(),
            eta: self.eta.clone(),
            tail: self.tail.clone(),
            domain: self.domain.clone(),
            warned_outside: AtomicBool::new(false),
        }
    }
}

impl Interpolant {
    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn xi(&self) -> &[f64] {
        self.xi.as_slice()
    }

    pub fn eta(&self) -> &[f64] {
        self.eta.as_slice()
    }

    pub fn tail(&self) -> &PolynomialTail {
        &self.tail
    }

    pub fn dim(&self) -> usize {
        self.sites.dim()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        // The expansion is globally defined; evaluation outside the fitted
        // domain is allowed but flagged once so grid overshoots are visible.
        if let Some(domain) = &self.domain {
            if !domain.contains(x) && !self.warned_outside.swap(true, Ordering::Relaxed) {
                log::warn!("evaluating interpolant outside its domain, first at {x:?}");
            }
        }
        Ok(())
    }

    /// Value of the expansion at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut value = 0.0;
        for (j, site) in self.sites.points().iter().enumerate() {
            value += self.xi[j] * self.kernel.eval(x, site)?;
        }
        for l in 0..self.tail.q() {
            value += self.eta[l] * self.tail.basis_value(l, x);
        }
        Ok(value)
    }

    /// Termwise derivative `D^γ` of the expansion, total order ≤ 3.
    pub fn derivative(&self, gamma: &[usize], x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let order: usize = gamma.iter().sum();
        if order > 3 {
            return Err(Error::DerivativeOrder { order });
        }
        let mut value = 0.0;
        for (j, site) in self.sites.points().iter().enumerate() {
            value += self.xi[j] * self.kernel.derivative(gamma, x, site)?;
        }
        for l in 0..self.tail.q() {
            value += self.eta[l] * self.tail.basis_derivative(l, gamma, x);
        }
        Ok(value)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut grad = vec![0.0; d];
        let mut gamma = vec![0usize; d];
        for (axis, g) in grad.iter_mut().enumerate() {
            gamma[axis] = 1;
            *g = self.derivative(&gamma, x)?;
            gamma[axis] = 0;
        }
        Ok(grad)
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut hess = DMatrix::zeros(d, d);
        let mut gamma = vec![0usize; d];
        for i in 0..d {
            for j in i..d {
                gamma[i] += 1;
                gamma[j] += 1;
                let v = self.derivative(&gamma, x)?;
                gamma[i] = 0;
                gamma[j] = 0;
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(hess)
    }

    /// Native-space seminorm `sqrt(xi' A xi)`. Nonnegative up to roundoff by
    /// (conditional) positive definiteness once the moment condition holds;
    /// a radicand below −1e-10 signals a broken moment condition.
    pub fn native_seminorm(&self) -> Result<f64> {
        let n = self.sites.len();
        let mut quad = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.xi[j] * self.kernel.eval(self.sites.point(i), self.sites.point(j))?;
            }
            quad += self.xi[i] * row;
        }
        if quad < -1e-10 {
            return Err(Error::BrokenMomentCondition { value: quad });
        }
        Ok(quad.max(0.0).sqrt())
    }

    /// Interpolation-error indicator `Δ^(ν−|α|) · |g|`, the error estimate
    /// with its unknown kernel constant dropped. An indicator, not a bound.
    pub fn error_indicator(&self, fill_distance: f64, alpha_order: u32) -> Result<f64> {
        let nu = self.kernel.nu();
        if alpha_order > nu {
            return Err(Error::InvalidParameter(format!(
                "derivative order {alpha_order} exceeds kernel smoothness nu = {nu}"
            )));
        }
        let seminorm = self.native_seminorm()?;
        Ok(fill_distance.powi((nu - alpha_order) as i32) * seminorm)
    }

    /// Plain-text coefficient dump: kernel spec, tail metadata, sites, and
    /// coefficients, using round-trip float formatting.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let k = &self.kernel;
        writeln!(out, "kernel.family = {}", k.family().name()).unwrap();
        writeln!(out, "kernel.alpha = {}", k.alpha()).unwrap();
        writeln!(out, "kernel.beta = {}", k.beta()).unwrap();
        writeln!(out, "kernel.nu = {}", k.nu()).unwrap();
        writeln!(out, "tail.m = {}", self.tail.order()).unwrap();
        writeln!(out, "tail.q = {}", self.tail.q()).unwrap();
        writeln!(out, "tail.center = {}", join_floats(self.tail.center())).unwrap();
        writeln!(out, "tail.scale = {}", join_floats(self.tail.scale())).unwrap();
        writeln!(out, "sites.count = {}", self.sites.len()).unwrap();
        writeln!(out, "sites.dim = {}", self.dim()).unwrap();
        for (j, p) in self.sites.points().iter().enumerate() {
            writeln!(out, "site {} = {}", j, join_floats(p)).unwrap();
        }
        writeln!(out, "xi = {}", join_floats(self.xi.as_slice())).unwrap();
        writeln!(out, "eta = {}", join_floats(self.eta.as_slice())).unwrap();
        if self.tail.q() > 0 {
            for (exps, coeff) in self.tail.raw_coefficients(self.eta.as_slice()) {
                let label: Vec<String> = exps.iter().map(|e| e.to_string()).collect();
                writeln!(out, "eta.raw x^({}) = {}", label.join(","), coeff).unwrap();
            }
        }
        out
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Assemble the symmetric (N+Q)×(N+Q) block matrix `[[A, P], [P', 0]]`.
/// With an empty tail this is just the kernel matrix `A`.
pub fn assemble_system(
    kernel: &KernelSpec,
    sites: &SiteSet,
    tail: &PolynomialTail,
) -> Result<DMatrix<f64>> {
    if tail.dim() != sites.dim() {
        return Err(Error::DimensionMismatch {
            expected: sites.dim(),
            got: tail.dim(),
        });
    }
    let n = sites.len();
    let q = tail.q();
    if q > 0 {
        let report = unisolvency_check(sites, tail.order());
        if report.verdict == Unisolvency::NotUnisolvent {
            return Err(Error::NotUnisolvent { tail_dim: q });
        }
    }
    let mut matrix = DMatrix::zeros(n + q, n + q);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(sites.point(i), sites.point(j))?;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    for i in 0..n {
        for l in 0..q {
            let v = tail.basis_value(l, sites.point(i));
            matrix[(i, n + l)] = v;
            matrix[(n + l, i)] = v;
        }
    }
    Ok(matrix)
}

enum Factorization {
    /// Positive definite shortcut for an empty tail.
    Cholesky(nalgebra::Cholesky<f64, Dyn>),
    /// Partially pivoted LU for the indefinite saddle system (and as a
    /// fallback when the kernel matrix is numerically not PD).
    Lu(nalgebra::LU<f64, Dyn, Dyn>),
}

/// Reusable interpolation operator: one factorization of the system matrix,
/// many fits. The matrix depends only on the kernel, sites, and tail, so the
/// time stepper builds this once and back-substitutes per step.
pub struct Fitter {
    kernel: KernelSpec,
    sites: Arc<SiteSet>,
    tail: PolynomialTail,
    domain: Option<Domain>,
    factorization: Factorization,
    condition_estimate: f64,
}

/// Condition-number ceiling above which fitting refuses to proceed.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Largest system size for which the condition estimate uses a full SVD.
const SVD_CONDITION_LIMIT: usize = 2000;

impl Fitter {
    pub fn new(
        kernel: KernelSpec,
        sites: Arc<SiteSet>,
        tail: PolynomialTail,
        domain: Option<Domain>,
    ) -> Result<Self> {
        if tail.order() < kernel.cpd_order() {
            return Err(Error::InvalidParameter(format!(
                "tail order {} is below the kernel's conditional positive definiteness order {}",
                tail.order(),
                kernel.cpd_order()
            )));
        }
        let matrix = assemble_system(&kernel, &sites, &tail)?;
        let size = matrix.nrows();

        let condition_estimate = if size <= SVD_CONDITION_LIMIT {
            let sv = matrix.clone().svd(false, false).singular_values;
            let max = sv.iter().cloned().fold(0.0f64, f64::max);
            let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
            if min == 0.0 {
                return Err(Error::Singular);
            }
            max / min
        } else {
            estimate_condition(&matrix)?
        };
        if condition_estimate > CONDITION_LIMIT {
            return Err(Error::IllConditioned {
                estimate: condition_estimate,
            });
        }

        let factorization = if tail.q() == 0 {
            match matrix.clone().cholesky() {
                Some(chol) => Factorization::Cholesky(chol),
                None => Factorization::Lu(lu_checked(matrix)?),
            }
        } else {
            Factorization::Lu(lu_checked(matrix)?)
        };

        Ok(Self {
            kernel,
            sites,
            tail,
            domain,
            factorization,
            condition_estimate,
        })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    pub fn sites(&self) -> &Arc<SiteSet> {
        &self.sites
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn tail(&self) -> &PolynomialTail {
        &self.tail
    }

    /// Solve for the coefficients of the interpolant of `values`.
    pub fn fit(&self, values: &[f64]) -> Result<Interpolant> {
        let n = self.sites.len();
        let q = self.tail.q();
        if values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: values.len(),
            });
        }
        let mut rhs = DVector::zeros(n + q);
        for (i, v) in values.iter().enumerate() {
            rhs[i] = *v;
        }
        let solution = match &self.factorization {
            Factorization::Cholesky(chol) => chol.solve(&rhs),
            Factorization::Lu(lu) => lu.solve(&rhs).ok_or(Error::Singular)?,
        };
        let xi = DVector::from_iterator(n, solution.iter().take(n).cloned());
        let eta = DVector::from_iterator(q, solution.iter().skip(n).cloned());
        Ok(Interpolant {
            kernel: self.kernel,
            sites: Arc::clone(&self.sites),
            xi,
            eta,
            tail: self.tail.clone(),
            domain: self.domain.clone(),
            warned_outside: AtomicBool::new(false),
        })
    }
}

fn lu_checked(matrix: DMatrix<f64>) -> Result<nalgebra::LU<f64, Dyn, Dyn>> {
    let lu = matrix.lu();
    if lu.determinant() == 0.0 {
        return Err(Error::Singular);
    }
    Ok(lu)
}

/// Randomized 1-norm condition estimate for systems too large for a full
/// SVD: a handful of solves against sign vectors bounds the inverse norm
/// from below.
fn estimate_condition(matrix: &DMatrix<f64>) -> Result<f64> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let n = matrix.nrows();
    let norm_one = (0..n)
        .map(|j| matrix.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let lu = matrix.clone().lu();
    if lu.determinant() == 0.0 {
        return Err(Error::Singular);
    }
    let mut rng = StdRng::seed_from_u64(0x1f2e3d);
    let mut inv_norm: f64 = 0.0;
    for _ in 0..4 {
        let v = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        if let Some(z) = lu.solve(&v) {
            let ratio = z.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
            inv_norm = inv_norm.max(ratio);
        }
    }
    Ok(norm_one * inv_norm)
}

/// One-shot fit: assemble, factorize, and solve for a single data vector.
pub fn fit(
    kernel: KernelSpec,
    sites: &SiteSet,
    values: &[f64],
    tail: &PolynomialTail,
) -> Result<Interpolant> {
    let fitter = Fitter::new(kernel, Arc::new(sites.clone()), tail.clone(), None)?;
    fitter.fit(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::equispaced_grid;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn gaussian() -> KernelSpec {
        KernelSpec::gaussian(1.0).unwrap()
    }

    #[test]
    fn tail_dimension_matches_binomial_count() {
        let dom = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(PolynomialTail::none(2).q(), 0);
        assert_eq!(PolynomialTail::for_domain(1, &dom).q(), 1);
        assert_eq!(PolynomialTail::for_domain(2, &dom).q(), 3);
        assert_eq!(PolynomialTail::for_domain(3, &dom).q(), 6);
    }

    #[test]
    fn assemble_single_site_is_identity() {
        let sites = SiteSet::new(vec![vec![0.3, 0.4]]).unwrap();
        let m = assemble_system(&gaussian(), &sites, &PolynomialTail::none(2)).unwrap();
        assert_eq!(m.nrows(), 1);
        assert_abs_diff_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn assemble_two_sites_matches_kernel_values() {
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let m = assemble_system(&gaussian(), &sites, &PolynomialTail::none(1)).unwrap();
        let e1 = (-1.0f64).exp();
        assert_abs_diff_eq!(m[(0, 0)], 1.0);
        assert_abs_diff_eq!(m[(0, 1)], e1, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 0)], e1, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], 1.0);
    }

    #[test]
    fn assemble_with_constant_tail_block() {
        let sites = SiteSet::new(vec![vec![0.0]]).unwrap();
        let tail =
            PolynomialTail::with_centering(1, 1, vec![0.0], vec![1.0]).unwrap();
        let m = assemble_system(&gaussian(), &sites, &tail).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_abs_diff_eq!(m[(0, 0)], 1.0);
        assert_abs_diff_eq!(m[(0, 1)], 1.0);
        assert_abs_diff_eq!(m[(1, 0)], 1.0);
        assert_abs_diff_eq!(m[(1, 1)], 0.0);
    }

    #[test]
    fn assemble_rejects_non_unisolvent_sites() {
        let sites =
            SiteSet::new(vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 2.0]]).unwrap();
        let tail = PolynomialTail::with_centering(2, 2, vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            assemble_system(&gaussian(), &sites, &tail),
            Err(Error::NotUnisolvent { .. })
        ));
    }

    #[test]
    fn single_site_fit_has_unit_coefficient_scale() {
        let sites = SiteSet::new(vec![vec![0.0, 0.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[2.0], &PolynomialTail::none(2)).unwrap();
        assert_abs_diff_eq!(interp.xi()[0], 2.0, epsilon = 1e-12);
        assert!(interp.eta().is_empty());
    }

    #[test]
    fn constant_data_lands_entirely_in_the_tail() {
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(1, &dom);
        let c = 2.5;
        let interp = fit(gaussian(), &sites, &vec![c; sites.len()], &tail).unwrap();
        for x in interp.xi() {
            assert_abs_diff_eq!(*x, 0.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(interp.eta()[0], c, epsilon = 1e-10);
        let raw = tail.raw_coefficients(interp.eta());
        assert_eq!(raw.len(), 1);
        assert_abs_diff_eq!(raw[0].1, c, epsilon = 1e-10);
    }

    #[test]
    fn two_site_fit_matches_closed_form() {
        // A = [[1, e^-1], [e^-1, 1]], b = (1, 0):
        // xi = (1, -e^-1) / (1 - e^-2).
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[1.0, 0.0], &PolynomialTail::none(1)).unwrap();
        let e1 = (-1.0f64).exp();
        let denom = 1.0 - e1 * e1;
        assert_abs_diff_eq!(interp.xi()[0], 1.0 / denom, epsilon = 1e-12);
        assert_abs_diff_eq!(interp.xi()[1], -e1 / denom, epsilon = 1e-12);

        // Midpoint value: both sites at distance 1/2.
        let phi_half = (-0.25f64).exp();
        let expected = (interp.xi()[0] + interp.xi()[1]) * phi_half;
        assert_abs_diff_eq!(interp.eval(&[0.5]).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.5693, epsilon = 1e-4);
    }

    #[test]
    fn interpolation_condition_at_sites() {
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 4).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        let values: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let interp = fit(gaussian(), &sites, &values, &PolynomialTail::none(2)).unwrap();
        for (j, p) in sites.points().iter().enumerate() {
            assert_abs_diff_eq!(interp.eval(p).unwrap(), values[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn linear_polynomial_reproduced_exactly() {
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(2, &dom);
        let poly = |x: &[f64]| 3.0 * x[0] - 2.0;
        let values: Vec<f64> = sites.points().iter().map(|p| poly(p)).collect();
        let interp = fit(gaussian(), &sites, &values, &tail).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            assert_abs_diff_eq!(interp.eval(&x).unwrap(), poly(&x), epsilon = 1e-8);
        }
        // Gradient of x -> 3 x_1 - 2 is (3, 0) everywhere.
        for _ in 0..10 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let grad = interp.gradient(&x).unwrap();
            assert_abs_diff_eq!(grad[0], 3.0, epsilon = 1e-8);
            assert_abs_diff_eq!(grad[1], 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn moment_condition_holds_for_augmented_fits() {
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(2, &dom);
        let mut rng = StdRng::seed_from_u64(17);
        let values: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let interp = fit(gaussian(), &sites, &values, &tail).unwrap();
        let p = tail.matrix(&sites);
        let xi = DVector::from_column_slice(interp.xi());
        let moments = p.transpose() * xi;
        for v in moments.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn fit_is_linear_in_the_data() {
        let dom = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(1, &dom);
        let mut rng = StdRng::seed_from_u64(23);
        let b1: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = 0.37;
        let combo: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + c * b).collect();
        let f1 = fit(gaussian(), &sites, &b1, &tail).unwrap();
        let f2 = fit(gaussian(), &sites, &b2, &tail).unwrap();
        let fc = fit(gaussian(), &sites, &combo, &tail).unwrap();
        for j in 0..sites.len() {
            assert_abs_diff_eq!(fc.xi()[j], f1.xi()[j] + c * f2.xi()[j], epsilon = 1e-8);
        }
        for l in 0..tail.q() {
            assert_abs_diff_eq!(fc.eta()[l], f1.eta()[l] + c * f2.eta()[l], epsilon = 1e-8);
        }
    }

    #[test]
    fn direct_solve_matches_degenerate_saddle_solve() {
        // Q = 0: the production path takes the positive definite shortcut;
        // an LU solve of the same (degenerate) saddle matrix is the oracle.
        let dom = Domain::rectangle(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::none(2);
        let mut rng = StdRng::seed_from_u64(29);
        let values: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let interp = fit(gaussian(), &sites, &values, &tail).unwrap();

        let matrix = assemble_system(&gaussian(), &sites, &tail).unwrap();
        let rhs = DVector::from_column_slice(&values);
        let oracle = matrix.lu().solve(&rhs).unwrap();
        for j in 0..sites.len() {
            assert_abs_diff_eq!(interp.xi()[j], oracle[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 4).unwrap();
        let mut rng = StdRng::seed_from_u64(31);
        let values: Vec<f64> = (0..sites.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let interp = fit(gaussian(), &sites, &values, &PolynomialTail::none(2)).unwrap();
        let step = 1e-4;
        for _ in 0..100 {
            let x = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
            for gamma in [[1, 0], [0, 1], [2, 0], [1, 1], [0, 2]] {
                let analytic = interp.derivative(&gamma, &x).unwrap();
                let fd = central_difference(&interp, &gamma, &x, step);
                let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
                assert!(rel <= 1e-5, "gamma {gamma:?} at {x:?}: rel {rel}");
            }
        }
    }

    fn central_difference(interp: &Interpolant, gamma: &[usize], x: &[f64], step: f64) -> f64 {
        match gamma.iter().position(|&c| c > 0) {
            None => interp.eval(x).unwrap(),
            Some(axis) => {
                let mut reduced = gamma.to_vec();
                reduced[axis] -= 1;
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[axis] += step;
                xm[axis] -= step;
                (central_difference(interp, &reduced, &xp, step)
                    - central_difference(interp, &reduced, &xm, step))
                    / (2.0 * step)
            }
        }
    }

    #[test]
    fn zero_multiindex_derivative_equals_eval() {
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[1.0, -1.0], &PolynomialTail::none(1)).unwrap();
        assert_abs_diff_eq!(
            interp.derivative(&[0], &[0.3]).unwrap(),
            interp.eval(&[0.3]).unwrap()
        );
    }

    #[test]
    fn seminorm_closed_forms() {
        let sites = SiteSet::new(vec![vec![0.0, 0.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[2.0], &PolynomialTail::none(2)).unwrap();
        assert_abs_diff_eq!(interp.native_seminorm().unwrap(), 2.0, epsilon = 1e-12);

        // Pure polynomial interpolant: xi = 0, seminorm 0.
        let dom = Domain::rectangle(vec![-1.0], vec![1.0]).unwrap();
        let line = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(1, &dom);
        let constant = fit(gaussian(), &line, &[1.5, 1.5, 1.5], &tail).unwrap();
        assert_abs_diff_eq!(constant.native_seminorm().unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn two_site_seminorm_matches_direct_arithmetic() {
        // For A xi = b the quadratic form collapses to xi' b = xi_1 here.
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[1.0, 0.0], &PolynomialTail::none(1)).unwrap();
        let e1 = (-1.0f64).exp();
        let xi0 = 1.0 / (1.0 - e1 * e1);
        let xi1 = -e1 / (1.0 - e1 * e1);
        let quad = xi0 * (xi0 + e1 * xi1) + xi1 * (e1 * xi0 + xi1);
        assert_abs_diff_eq!(
            interp.native_seminorm().unwrap(),
            quad.sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(quad.sqrt(), 1.0754, epsilon = 1e-4);
    }

    #[test]
    fn error_indicator_arithmetic() {
        let sites = SiteSet::new(vec![vec![0.0, 0.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[2.0], &PolynomialTail::none(2)).unwrap();
        // nu defaults to 4; seminorm is 2.
        assert_abs_diff_eq!(interp.error_indicator(1.0, 2).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            interp.error_indicator(0.5, 2).unwrap(),
            0.5f64.powi(2) * 2.0,
            epsilon = 1e-12
        );
        assert!(interp.error_indicator(0.5, 5).is_err());

        let dom = Domain::rectangle(vec![-1.0], vec![1.0]).unwrap();
        let line = equispaced_grid(&dom, 3).unwrap();
        let tail = PolynomialTail::for_domain(1, &dom);
        let constant = fit(gaussian(), &line, &[1.0, 1.0, 1.0], &tail).unwrap();
        assert_abs_diff_eq!(constant.error_indicator(0.3, 0).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn refinement_shrinks_interpolation_error() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let dom = Domain::rectangle(vec![-half_pi, -half_pi], vec![half_pi, half_pi]).unwrap();
        let target = |x: &[f64]| x[0].cos() * x[1].cos();
        let eval_grid = crate::geometry::tensor_points(
            &[-half_pi, -half_pi],
            &[half_pi, half_pi],
            25,
        );
        let mut max_errors = Vec::new();
        for per_axis in [3usize, 4, 5] {
            let sites = equispaced_grid(&dom, per_axis).unwrap();
            let spacing = std::f64::consts::PI / (per_axis - 1) as f64;
            let kernel = KernelSpec::gaussian(1.0 / (spacing * spacing)).unwrap();
            let values: Vec<f64> = sites.points().iter().map(|p| target(p)).collect();
            let interp = fit(kernel, &sites, &values, &PolynomialTail::none(2)).unwrap();
            let max_err = eval_grid
                .iter()
                .map(|x| (interp.eval(x).unwrap() - target(x)).abs())
                .fold(0.0f64, f64::max);
            max_errors.push(max_err);
        }
        assert!(
            max_errors[0] > max_errors[1] && max_errors[1] > max_errors[2],
            "errors not decreasing: {max_errors:?}"
        );
    }

    #[test]
    fn ill_conditioned_system_is_reported() {
        // Two sites 3e-8 apart give a Gaussian matrix with condition number
        // near 2e15: past the 1e14 ceiling but safely away from exact
        // singularity.
        let sites = SiteSet::new(vec![vec![0.0], vec![3e-8]]).unwrap();
        let err = fit(
            KernelSpec::gaussian(1.0).unwrap(),
            &sites,
            &[0.0, 1.0],
            &PolynomialTail::none(1),
        )
        .unwrap_err();
        match err {
            Error::IllConditioned { estimate } => assert!(estimate > 1e14),
            other => panic!("got {other:?}"),
        }
    }

    #[test]
    fn tail_below_kernel_order_rejected() {
        let kernel = KernelSpec::multiquadric(1.0, 1.5).unwrap(); // cpd order 2
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let tail = PolynomialTail::with_centering(1, 1, vec![1.0], vec![1.0]).unwrap();
        assert!(fit(kernel, &sites, &[1.0, 2.0, 3.0], &tail).is_err());
    }

    #[test]
    fn dump_round_trips_key_fields() {
        let sites = SiteSet::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let interp = fit(gaussian(), &sites, &[1.0, 0.0], &PolynomialTail::none(1)).unwrap();
        let dump = interp.dump();
        assert!(dump.contains("kernel.family = gaussian"));
        assert!(dump.contains("sites.count = 2"));
        assert!(dump.contains("xi = "));
    }
}
