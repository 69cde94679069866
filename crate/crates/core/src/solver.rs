//! Terminal-value problems and the backward θ-scheme collocation recursion.
//!
//! The problem is `-∂_t v + F(t, x, v, Dv, D²v) = 0` on `[0, T) × ℝ^d` with
//! `v(T, ·) = f`, solved backward on a site set: interpolate the current
//! slice, collocate `F` through the interpolant's derivatives, and step
//!
//! ```text
//! v_k + h(1-θ) F_k(v_k) = v_{k+1} - hθ F_{k+1}(v_{k+1})
//! ```
//!
//! At `θ = 1` this is an explicit recursion; otherwise the implicit relation
//! is solved by fixed-point iteration, which contracts for small `h` under
//! the problem's growth bounds. The system matrix depends only on kernel and
//! sites, so one factorization serves every step.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::geometry::{Domain, SiteSet};
use crate::interpolation::{Fitter, Interpolant, PolynomialTail};
use crate::kernel::KernelSpec;

type NonlinearityFn = dyn Fn(f64, &[f64], f64, &[f64], &DMatrix<f64>) -> f64 + Send + Sync;
type TerminalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type ExactFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

/// The terminal value problem: dimension, horizon, nonlinearity
/// `F(t, x, z, p, Γ)`, terminal datum `f`, and an optional exact solution
/// for benchmarking.
#[derive(Clone)]
pub struct ParabolicProblem {
    dim: usize,
    horizon: f64,
    nonlinearity: Arc<NonlinearityFn>,
    terminal: Arc<TerminalFn>,
    exact: Option<Arc<ExactFn>>,
}

impl std::fmt::Debug for ParabolicProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParabolicProblem")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

/// Sample count for the construction-time ellipticity spot check.
const ELLIPTICITY_SAMPLES: usize = 50;

impl ParabolicProblem {
    /// Build a problem and spot-check degenerate ellipticity on 50 random
    /// tuples. Sampling cannot prove the property; a violation only logs a
    /// warning, catching sign mistakes in user-supplied nonlinearities.
    pub fn new<F, G>(dim: usize, horizon: f64, nonlinearity: F, terminal: G) -> Result<Self>
    where
        F: Fn(f64, &[f64], f64, &[f64], &DMatrix<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let problem = Self {
            dim,
            horizon,
            nonlinearity: Arc::new(nonlinearity),
            terminal: Arc::new(terminal),
            exact: None,
        };
        let violations = problem.ellipticity_violations(ELLIPTICITY_SAMPLES, 0xe111);
        if violations > 0 {
            log::warn!(
                "nonlinearity failed the degenerate-ellipticity spot check on \
                 {violations}/{ELLIPTICITY_SAMPLES} sampled tuples"
            );
        }
        Ok(problem)
    }

    pub fn with_exact<E>(mut self, exact: E) -> Self
    where
        E: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.exact = Some(Arc::new(exact));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn nonlinearity(&self, t: f64, x: &[f64], z: f64, p: &[f64], gamma: &DMatrix<f64>) -> f64 {
        (self.nonlinearity)(t, x, z, p, gamma)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    pub fn exact(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.exact.as_ref().map(|e| e(t, x))
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Count sampled violations of `Γ ≥ Γ' ⇒ F(Γ) ≤ F(Γ')`: draw a random
    /// base tuple, add a random positive semidefinite increment to `Γ`, and
    /// require the nonlinearity not to increase beyond 1e-9.
    pub fn ellipticity_violations(&self, samples: usize, seed: u64) -> usize {
        let d = self.dim;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut violations = 0;
        for _ in 0..samples {
            let t = rng.random_range(0.0..=self.horizon);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = rng.random_range(-2.0..2.0);
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
            let base = 0.5 * (&raw + raw.transpose());
            let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let increased = &base + m.transpose() * &m;
            let f_base = self.nonlinearity(t, &x, z, &p, &base);
            let f_increased = self.nonlinearity(t, &x, z, &p, &increased);
            if f_increased > f_base + 1e-9 {
                violations += 1;
            }
        }
        violations
    }

    /// Count sampled violations of the growth bound
    /// `|F| ≤ K₁ (1 + |z| + |p| + |Γ|)` for a user-supplied `K₁`.
    pub fn growth_violations(&self, k1: f64, samples: usize, seed: u64) -> usize {
        let d = self.dim;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut violations = 0;
        for _ in 0..samples {
            let t = rng.random_range(0.0..=self.horizon);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = rng.random_range(-2.0..2.0);
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
            let gamma = 0.5 * (&raw + raw.transpose());
            let value = self.nonlinearity(t, &x, z, &p, &gamma).abs();
            let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let gamma_norm = spectral_norm_symmetric(&gamma);
            if value > k1 * (1.0 + z.abs() + p_norm + gamma_norm) + 1e-9 {
                violations += 1;
            }
        }
        violations
    }
}

pub(crate) fn spectral_norm_symmetric(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|e| e.abs())
        .fold(0.0f64, f64::max)
}

/// Which stepping path the scheme takes at θ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepPath {
    /// Explicit recursion at θ = 1, fixed-point iteration otherwise.
    #[default]
    Auto,
    /// Always run the fixed-point iteration; coincides with the explicit
    /// recursion at θ = 1 and exists to verify exactly that.
    FixedPoint,
}

/// Time-discretization parameters of the θ-scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub steps: usize,
    pub theta: f64,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub tail_order: usize,
    pub path: StepPath,
}

pub const DEFAULT_FP_TOL: f64 = 1e-10;
pub const DEFAULT_FP_MAX_ITER: usize = 200;

impl SchemeConfig {
    pub fn new(steps: usize, theta: f64) -> Result<Self> {
        let config = Self {
            steps,
            theta,
            fp_tol: DEFAULT_FP_TOL,
            fp_max_iter: DEFAULT_FP_MAX_ITER,
            tail_order: 0,
            path: StepPath::Auto,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_fixed_point(mut self, tol: f64, max_iter: usize) -> Result<Self> {
        self.fp_tol = tol;
        self.fp_max_iter = max_iter;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tail_order(mut self, m: usize) -> Self {
        self.tail_order = m;
        self
    }

    pub fn with_path(mut self, path: StepPath) -> Self {
        self.path = path;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("step count must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!(
                "theta must lie in [0, 1], got {}",
                self.theta
            )));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fixed-point tolerance must be positive, got {}",
                self.fp_tol
            )));
        }
        if self.fp_max_iter == 0 {
            return Err(Error::InvalidParameter(
                "fixed-point iteration cap must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Discrete solution: site values on every time slice plus the per-step
/// interpolants that extend them to the whole domain.
#[derive(Debug, Clone)]
pub struct SolutionField {
    values: Vec<DVector<f64>>,
    interpolants: Vec<Interpolant>,
    time_grid: Vec<f64>,
    sites: Arc<SiteSet>,
}

impl SolutionField {
    /// Number of time steps `n`; slices run `0..=n`.
    pub fn steps(&self) -> usize {
        self.time_grid.len() - 1
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    /// Site values at slice `k`.
    pub fn values(&self, k: usize) -> &[f64] {
        self.values[k].as_slice()
    }

    pub fn interpolant(&self, k: usize) -> &Interpolant {
        &self.interpolants[k]
    }

    /// Largest Euclidean norm of a value slice over all time steps.
    pub fn max_slice_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0f64, f64::max)
    }

    /// Evaluate at an arbitrary `(t, x)`: the per-step interpolant at grid
    /// times, linear interpolation in `t` between them.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let horizon = *self.time_grid.last().unwrap();
        if !(-1e-12..=horizon + 1e-12).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        let n = self.steps();
        let h = horizon / n as f64;
        let k = ((t / h).floor() as usize).min(n - 1);
        let weight = ((t - self.time_grid[k]) / h).clamp(0.0, 1.0);
        let lower = self.interpolants[k].eval(x)?;
        if weight == 0.0 {
            return Ok(lower);
        }
        let upper = self.interpolants[k + 1].eval(x)?;
        Ok((1.0 - weight) * lower + weight * upper)
    }
}

/// Collocate the nonlinearity through an interpolant: component `j` is
/// `F(t, x_j, I(x_j), ∇I(x_j), D²I(x_j))`.
pub fn collocated_nonlinearity(
    problem: &ParabolicProblem,
    t: f64,
    interpolant: &Interpolant,
    sites: &SiteSet,
) -> Result<DVector<f64>> {
    if interpolant.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: interpolant.dim(),
        });
    }
    let n = sites.len();
    let mut out = DVector::zeros(n);
    for j in 0..n {
        let x = sites.point(j);
        let z = interpolant.eval(x)?;
        let p = interpolant.gradient(x)?;
        let gamma = interpolant.hessian(x)?;
        let value = problem.nonlinearity(t, x, z, &p, &gamma);
        if !value.is_finite() {
            return Err(Error::NonFiniteNonlinearity { site: j });
        }
        out[j] = value;
    }
    Ok(out)
}

struct Stepper<'a> {
    problem: &'a ParabolicProblem,
    config: &'a SchemeConfig,
    fitter: &'a Fitter,
    h: f64,
}

impl Stepper<'_> {
    /// Advance from slice `k+1` to slice `k`. Returns the new values and
    /// their interpolant.
    fn step(
        &self,
        k: usize,
        v_next: &DVector<f64>,
        interp_next: &Interpolant,
    ) -> Result<(DVector<f64>, Interpolant)> {
        let theta = self.config.theta;
        let t_next = (k as f64 + 1.0) * self.h;
        let f_next =
            collocated_nonlinearity(self.problem, t_next, interp_next, self.fitter.sites())?;
        let rhs = v_next - self.h * theta * &f_next;

        if theta == 1.0 && self.config.path == StepPath::Auto {
            let interp = self.fitter.fit(rhs.as_slice())?;
            return Ok((rhs, interp));
        }

        // Fixed-point iteration v <- rhs - h(1-θ) F_k(v), started from the
        // fully explicit predictor.
        let t_k = k as f64 * self.h;
        let mut v = v_next - self.h * &f_next;
        let mut residual = f64::INFINITY;
        for _ in 0..self.config.fp_max_iter {
            let interp = self.fitter.fit(v.as_slice())?;
            let f_k = collocated_nonlinearity(self.problem, t_k, &interp, self.fitter.sites())?;
            let v_new = &rhs - self.h * (1.0 - theta) * f_k;
            residual = (&v_new - &v).amax();
            v = v_new;
            if residual < self.config.fp_tol {
                let interp = self.fitter.fit(v.as_slice())?;
                return Ok((v, interp));
            }
        }
        Err(Error::FixedPointDiverged {
            step: k,
            max_iter: self.config.fp_max_iter,
            residual,
        })
    }
}

fn make_fitter(
    config: &SchemeConfig,
    kernel: KernelSpec,
    sites: &SiteSet,
    domain: Option<&Domain>,
) -> Result<Fitter> {
    let tail = match (config.tail_order, domain) {
        (0, _) => PolynomialTail::none(sites.dim()),
        (m, Some(dom)) => PolynomialTail::for_domain(m, dom),
        (m, None) => {
            // No domain supplied: center the tail on the site bounding box.
            let (lo, hi) = bounding_box(sites);
            let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
            let scale: Vec<f64> = lo
                .iter()
                .zip(&hi)
                .map(|(a, b)| (0.5 * (b - a)).max(1e-12))
                .collect();
            PolynomialTail::with_centering(m, sites.dim(), center, scale)?
        }
    };
    Fitter::new(kernel, Arc::new(sites.clone()), tail, domain.cloned())
}

fn bounding_box(sites: &SiteSet) -> (Vec<f64>, Vec<f64>) {
    let d = sites.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in sites.points() {
        for axis in 0..d {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    (lo, hi)
}

/// One backward step in isolation: from values at slice `k+1` to slice `k`.
/// Assembles a fresh factorization; inside a full solve the factorization is
/// shared instead.
pub fn step_backward(
    problem: &ParabolicProblem,
    k: usize,
    v_next: &[f64],
    config: &SchemeConfig,
    kernel: KernelSpec,
    sites: &SiteSet,
) -> Result<Vec<f64>> {
    config.validate()?;
    if v_next.len() != sites.len() {
        return Err(Error::DimensionMismatch {
            expected: sites.len(),
            got: v_next.len(),
        });
    }
    let fitter = make_fitter(config, kernel, sites, None)?;
    let stepper = Stepper {
        problem,
        config,
        fitter: &fitter,
        h: problem.horizon() / config.steps as f64,
    };
    let interp_next = fitter.fit(v_next)?;
    let (v, _) = stepper.step(k, &DVector::from_column_slice(v_next), &interp_next)?;
    Ok(v.as_slice().to_vec())
}

/// Run the full backward recursion from the terminal slice to `t = 0`,
/// retaining every slice and its interpolant.
pub fn solve(
    problem: &ParabolicProblem,
    config: &SchemeConfig,
    kernel: KernelSpec,
    sites: &SiteSet,
    domain: Option<&Domain>,
) -> Result<SolutionField> {
    config.validate()?;
    if sites.dim() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: sites.dim(),
        });
    }
    let n = config.steps;
    let h = problem.horizon() / n as f64;
    let fitter = make_fitter(config, kernel, sites, domain)?;
    let stepper = Stepper {
        problem,
        config,
        fitter: &fitter,
        h,
    };

    let terminal: Vec<f64> = sites.points().iter().map(|p| problem.terminal(p)).collect();
    if let Some(bad) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteNonlinearity { site: bad });
    }

    let mut values = vec![DVector::zeros(0); n + 1];
    let mut interpolants: Vec<Option<Interpolant>> = vec![None; n + 1];
    values[n] = DVector::from_column_slice(&terminal);
    interpolants[n] = Some(fitter.fit(&terminal)?);

    for k in (0..n).rev() {
        let (v_k, interp_k) = stepper
            .step(k, &values[k + 1], interpolants[k + 1].as_ref().unwrap())
            .map_err(|e| match e {
                diverged @ Error::FixedPointDiverged { .. } => diverged,
                other => Error::StepFailed {
                    step: k,
                    source: Box::new(other),
                },
            })?;
        values[k] = v_k;
        interpolants[k] = Some(interp_k);
    }

    let time_grid: Vec<f64> = (0..=n).map(|k| k as f64 * h).collect();
    Ok(SolutionField {
        values,
        interpolants: interpolants.into_iter().map(Option::unwrap).collect(),
        time_grid,
        sites: Arc::clone(fitter.sites()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::equispaced_grid;
    use crate::interpolation::fit;
    use approx::assert_abs_diff_eq;

    fn constant_problem(c: f64) -> ParabolicProblem {
        ParabolicProblem::new(2, 1.0, move |_, _, _, _, _| c, |x| x[0] + x[1]).unwrap()
    }

    fn heat_problem() -> ParabolicProblem {
        ParabolicProblem::new(
            2,
            1.0,
            |_, _, _, _, gamma: &DMatrix<f64>| -0.5 * gamma.trace(),
            |x| x[0].cos() * x[1].cos(),
        )
        .unwrap()
        .with_exact(|t, x| (t - 1.0).exp() * x[0].cos() * x[1].cos())
    }

    fn kpz_nonlinearity(p: &[f64], gamma: &DMatrix<f64>) -> f64 {
        -0.5 * gamma.trace() - 0.5 * p.iter().map(|v| v * v).sum::<f64>()
    }

    fn kpz_problem() -> ParabolicProblem {
        ParabolicProblem::new(
            2,
            1.0,
            |_, _, _, p: &[f64], gamma: &DMatrix<f64>| kpz_nonlinearity(p, gamma),
            |x| x[0].cos() * x[1].cos(),
        )
        .unwrap()
    }

    fn pi_grid(per_axis: usize) -> (Domain, SiteSet, KernelSpec) {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let dom = Domain::rectangle(vec![-half_pi, -half_pi], vec![half_pi, half_pi]).unwrap();
        let sites = equispaced_grid(&dom, per_axis).unwrap();
        // Flat-kernel regime scaled to the set diameter, matching the
        // benchmark's heat calibration.
        let diameter_sq = 2.0 * std::f64::consts::PI.powi(2);
        let kernel = KernelSpec::gaussian(1.95 / diameter_sq).unwrap();
        (dom, sites, kernel)
    }

    #[test]
    fn problem_validation() {
        assert!(ParabolicProblem::new(0, 1.0, |_, _, _, _, _| 0.0, |_| 0.0).is_err());
        assert!(ParabolicProblem::new(2, 0.0, |_, _, _, _, _| 0.0, |_| 0.0).is_err());
    }

    #[test]
    fn ellipticity_spot_check_flags_wrong_sign() {
        // F increasing in Γ violates degenerate ellipticity.
        let bad = ParabolicProblem::new(
            2,
            1.0,
            |_, _, _, _, gamma: &DMatrix<f64>| 0.5 * gamma.trace(),
            |_| 0.0,
        )
        .unwrap();
        assert!(bad.ellipticity_violations(50, 1) > 0);
        assert_eq!(heat_problem().ellipticity_violations(50, 1), 0);
        assert_eq!(kpz_problem().ellipticity_violations(50, 1), 0);
    }

    #[test]
    fn growth_check_accepts_heat_with_sane_constant() {
        // |tr Γ| ≤ d |Γ| for the spectral norm, so K₁ = 1 covers -tr Γ / 2
        // in two dimensions.
        assert_eq!(heat_problem().growth_violations(1.0, 200, 2), 0);
        // And a tiny constant fails.
        assert!(heat_problem().growth_violations(1e-4, 200, 2) > 0);
    }

    #[test]
    fn scheme_config_validation() {
        assert!(SchemeConfig::new(0, 1.0).is_err());
        assert!(SchemeConfig::new(10, -0.1).is_err());
        assert!(SchemeConfig::new(10, 1.1).is_err());
        assert!(SchemeConfig::new(10, 0.5)
            .unwrap()
            .with_fixed_point(0.0, 10)
            .is_err());
    }

    #[test]
    fn constant_nonlinearity_collocates_to_constant_vector() {
        let (_, sites, kernel) = pi_grid(3);
        let problem = constant_problem(2.5);
        let values: Vec<f64> = sites.points().iter().map(|p| p[0]).collect();
        let interp = fit(kernel, &sites, &values, &PolynomialTail::none(2)).unwrap();
        let collocated = collocated_nonlinearity(&problem, 0.3, &interp, &sites).unwrap();
        for v in collocated.iter() {
            assert_abs_diff_eq!(*v, 2.5);
        }
    }

    #[test]
    fn identity_nonlinearity_returns_fitted_data() {
        let (_, sites, kernel) = pi_grid(3);
        let problem = ParabolicProblem::new(2, 1.0, |_, _, z, _, _| z, |_| 0.0).unwrap();
        let values: Vec<f64> = sites
            .points()
            .iter()
            .map(|p| (p[0] + 0.3).sin() * p[1].cos())
            .collect();
        let interp = fit(kernel, &sites, &values, &PolynomialTail::none(2)).unwrap();
        let collocated = collocated_nonlinearity(&problem, 0.0, &interp, &sites).unwrap();
        for (j, v) in collocated.iter().enumerate() {
            assert_abs_diff_eq!(*v, values[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn quadratic_interpolant_collocates_kpz_exactly() {
        // Fit the quadratic q with an m = 3 tail; the interpolant reproduces
        // q, so gradients and Hessians have the hand-computed closed forms.
        let dom = Domain::rectangle(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let sites = equispaced_grid(&dom, 4).unwrap();
        let kernel = KernelSpec::gaussian(1.0).unwrap();
        let q = |x: &[f64]| {
            1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[0] + x[0] * x[1] + 1.5 * x[1] * x[1]
        };
        let values: Vec<f64> = sites.points().iter().map(|p| q(p)).collect();
        let tail = PolynomialTail::for_domain(3, &dom);
        let interp = fit(kernel, &sites, &values, &tail).unwrap();
        let problem = kpz_problem();
        let collocated = collocated_nonlinearity(&problem, 0.0, &interp, &sites).unwrap();
        for (j, site) in sites.points().iter().enumerate() {
            // grad q = (2 + x1 + x2, -1 + x1 + 3 x2), tr Hess q = 1 + 3.
            let g = [2.0 + site[0] + site[1], -1.0 + site[0] + 3.0 * site[1]];
            let expected = -0.5 * 4.0 - 0.5 * (g[0] * g[0] + g[1] * g[1]);
            assert_abs_diff_eq!(collocated[j], expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_nonlinearity_steps_exactly() {
        let (_, sites, kernel) = pi_grid(3);
        let c = 0.7;
        let problem = constant_problem(c);
        let v_next: Vec<f64> = sites.points().iter().map(|p| p[0] * p[1]).collect();
        for theta in [0.0, 0.3, 1.0] {
            let config = SchemeConfig::new(10, theta).unwrap();
            let h = problem.horizon() / 10.0;
            let v = step_backward(&problem, 4, &v_next, &config, kernel, &sites).unwrap();
            for (a, b) in v.iter().zip(&v_next) {
                assert_abs_diff_eq!(*a, b - h * c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_nonlinearity_keeps_values() {
        let (_, sites, kernel) = pi_grid(3);
        let problem = constant_problem(0.0);
        let v_next: Vec<f64> = sites.points().iter().map(|p| p[0].cos()).collect();
        let config = SchemeConfig::new(10, 0.5).unwrap();
        let v = step_backward(&problem, 0, &v_next, &config, kernel, &sites).unwrap();
        for (a, b) in v.iter().zip(&v_next) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn fixed_point_matches_damped_iteration_oracle() {
        // Independent oracle: damped iteration on the same contraction, run
        // to a tighter tolerance.
        let (_, sites, kernel) = pi_grid(3);
        let problem = kpz_problem();
        let theta = 0.3;
        let steps = 100; // h = 1e-2
        let config = SchemeConfig::new(steps, theta).unwrap();
        let h = problem.horizon() / steps as f64;
        let k = steps - 1;
        let v_next: Vec<f64> = sites.points().iter().map(|p| problem.terminal(p)).collect();
        let v_lib = step_backward(&problem, k, &v_next, &config, kernel, &sites).unwrap();

        let fitter = Fitter::new(
            kernel,
            Arc::new(sites.clone()),
            PolynomialTail::none(2),
            None,
        )
        .unwrap();
        let interp_next = fitter.fit(&v_next).unwrap();
        let t_next = (k as f64 + 1.0) * h;
        let t_k = k as f64 * h;
        let f_next = collocated_nonlinearity(&problem, t_next, &interp_next, &sites).unwrap();
        let v_next_vec = DVector::from_column_slice(&v_next);
        let rhs = &v_next_vec - h * theta * &f_next;
        let omega = 0.5;
        let mut v = &v_next_vec - h * &f_next;
        for _ in 0..2000 {
            let interp = fitter.fit(v.as_slice()).unwrap();
            let f_k = collocated_nonlinearity(&problem, t_k, &interp, &sites).unwrap();
            let target = &rhs - h * (1.0 - theta) * f_k;
            let v_new = (1.0 - omega) * &v + omega * target;
            let diff = (&v_new - &v).amax();
            v = v_new;
            if diff < 1e-12 {
                break;
            }
        }
        for (a, b) in v_lib.iter().zip(v.iter()) {
            assert!((a - b).abs() <= 1e-10, "lib {a} oracle {b}");
        }
    }

    #[test]
    fn zero_nonlinearity_solution_is_constant_in_time() {
        let (dom, sites, kernel) = pi_grid(3);
        let problem =
            ParabolicProblem::new(2, 1.0, |_, _, _, _, _| 0.0, |x| x[0].cos() * x[1].cos())
                .unwrap();
        let config = SchemeConfig::new(20, 0.5).unwrap();
        let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
        let terminal = sol.values(20).to_vec();
        for k in 0..=20 {
            for (a, b) in sol.values(k).iter().zip(&terminal) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_nonlinearity_telescopes() {
        let (dom, sites, kernel) = pi_grid(3);
        let c = 0.4;
        let problem =
            ParabolicProblem::new(2, 1.0, move |_, _, _, _, _| c, |x| x[0].sin() + x[1])
                .unwrap();
        let config = SchemeConfig::new(100, 1.0).unwrap();
        let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
        for (j, p) in sites.points().iter().enumerate() {
            let expected = p[0].sin() + p[1] - c;
            assert_abs_diff_eq!(sol.values(0)[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn heat_solution_approaches_separated_exact_solution() {
        let (dom, sites, _) = pi_grid(5);
        // Site errors peak at the solve-domain corners where interpolant
        // derivatives degrade; this shape parameter keeps them small there.
        let kernel = KernelSpec::gaussian(0.05).unwrap();
        let problem = heat_problem();
        let config = SchemeConfig::new(100, 1.0).unwrap();
        let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
        let mut max_err = 0.0f64;
        for (j, p) in sites.points().iter().enumerate() {
            let exact = problem.exact(0.0, p).unwrap();
            max_err = max_err.max((sol.values(0)[j] - exact).abs());
        }
        assert!(max_err <= 1e-2, "max site error {max_err}");
    }

    #[test]
    fn one_step_heat_consistency_improves_with_halved_step() {
        let (_, sites, kernel) = pi_grid(5);
        let problem = heat_problem();
        let mut errors = Vec::new();
        for steps in [50usize, 100] {
            let config = SchemeConfig::new(steps, 1.0).unwrap();
            let h = 1.0 / steps as f64;
            let k = steps - 1;
            let t_next = 1.0;
            let t_k = t_next - h;
            let exact_next: Vec<f64> = sites
                .points()
                .iter()
                .map(|p| problem.exact(t_next, p).unwrap())
                .collect();
            let stepped =
                step_backward(&problem, k, &exact_next, &config, kernel, &sites).unwrap();
            let err = sites
                .points()
                .iter()
                .enumerate()
                .map(|(j, p)| (stepped[j] - problem.exact(t_k, p).unwrap()).abs())
                .fold(0.0f64, f64::max);
            errors.push(err);
        }
        assert!(
            errors[1] < errors[0],
            "halving h did not reduce the one-step error: {errors:?}"
        );
    }

    #[test]
    fn explicit_path_equals_forced_fixed_point_path() {
        let (dom, sites, kernel) = pi_grid(3);
        let problem = kpz_problem();
        let explicit = SchemeConfig::new(10, 1.0).unwrap();
        let forced = explicit.with_path(StepPath::FixedPoint);
        let sol_a = solve(&problem, &explicit, kernel, &sites, Some(&dom)).unwrap();
        let sol_b = solve(&problem, &forced, kernel, &sites, Some(&dom)).unwrap();
        for k in 0..=10 {
            for (a, b) in sol_a.values(k).iter().zip(sol_b.values(k)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn iteration_cap_reports_step_index() {
        let (dom, sites, kernel) = pi_grid(3);
        let problem = kpz_problem();
        let config = SchemeConfig::new(10, 0.5)
            .unwrap()
            .with_fixed_point(1e-14, 1)
            .unwrap();
        let err = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap_err();
        match err {
            Error::FixedPointDiverged { step, .. } => assert_eq!(step, 9),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn evaluation_blends_linearly_in_time() {
        let (dom, sites, kernel) = pi_grid(3);
        let problem = heat_problem();
        let config = SchemeConfig::new(10, 1.0).unwrap();
        let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
        let x = [0.3, -0.2];

        // Terminal time returns the terminal interpolant.
        let terminal_fit = sol.interpolant(10).eval(&x).unwrap();
        assert_abs_diff_eq!(sol.eval(1.0, &x).unwrap(), terminal_fit, epsilon = 1e-12);

        // Grid times hit the per-step interpolants exactly.
        let at_k = sol.interpolant(4).eval(&x).unwrap();
        assert_abs_diff_eq!(sol.eval(0.4, &x).unwrap(), at_k, epsilon = 1e-12);

        // Midway between grid times: arithmetic mean.
        let a = sol.interpolant(4).eval(&x).unwrap();
        let b = sol.interpolant(5).eval(&x).unwrap();
        assert_abs_diff_eq!(sol.eval(0.45, &x).unwrap(), 0.5 * (a + b), epsilon = 1e-12);

        assert!(sol.eval(1.5, &x).is_err());
        assert!(sol.eval(-0.1, &x).is_err());
    }

    #[test]
    fn recursion_identity_residual_is_small() {
        // Interpolating the collocated nonlinearity and plugging it into the
        // one-step identity must close the loop to fixed-point accuracy.
        let (dom, sites, kernel) = pi_grid(3);
        let problem = kpz_problem();
        let theta = 0.5;
        let config = SchemeConfig::new(10, theta).unwrap();
        let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
        let h = 0.1;
        let fitter = Fitter::new(
            kernel,
            Arc::new(sites.clone()),
            PolynomialTail::none(2),
            None,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(77);
        for k in 0..10 {
            let t_k = k as f64 * h;
            let t_next = t_k + h;
            let f_k = collocated_nonlinearity(&problem, t_k, sol.interpolant(k), &sites).unwrap();
            let f_next =
                collocated_nonlinearity(&problem, t_next, sol.interpolant(k + 1), &sites).unwrap();
            let i_k = fitter.fit(f_k.as_slice()).unwrap();
            let i_next = fitter.fit(f_next.as_slice()).unwrap();
            for _ in 0..20 {
                let x = [rng.random_range(-1.5..1.5f64), rng.random_range(-1.5..1.5f64)];
                let residual = sol.interpolant(k).eval(&x).unwrap()
                    - sol.interpolant(k + 1).eval(&x).unwrap()
                    + h * (1.0 - theta) * i_k.eval(&x).unwrap()
                    + h * theta * i_next.eval(&x).unwrap();
                assert!(
                    residual.abs() <= 10.0 * config.fp_tol,
                    "step {k}: residual {residual}"
                );
            }
        }
    }

    #[test]
    fn heat_rms_error_shrinks_with_refinement() {
        let problem = heat_problem();
        let config = SchemeConfig::new(100, 1.0).unwrap();
        let mut rms = Vec::new();
        for per_axis in [3usize, 4, 5] {
            let (dom, sites, kernel) = pi_grid(per_axis);
            let sol = solve(&problem, &config, kernel, &sites, Some(&dom)).unwrap();
            let quarter_pi = std::f64::consts::FRAC_PI_4;
            let grid = crate::geometry::tensor_points(
                &[-quarter_pi, -quarter_pi],
                &[quarter_pi, quarter_pi],
                25,
            );
            let mse: f64 = grid
                .iter()
                .map(|x| {
                    let e = sol.eval(0.0, x).unwrap() - problem.exact(0.0, x).unwrap();
                    e * e
                })
                .sum::<f64>()
                / grid.len() as f64;
            rms.push(mse.sqrt());
        }
        assert!(
            rms[0] > rms[1] && rms[1] > rms[2],
            "rms errors not decreasing: {rms:?}"
        );
    }
}
