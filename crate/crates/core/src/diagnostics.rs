//! Stability and convergence-hypothesis diagnostics.
//!
//! The backward recursion is only trustworthy when the interpolation system
//! stays tame. The quantities here put numbers on that: the spectral norm
//! `L_N` of the inverse system matrix, the derivative-sum constant `K₂`, the
//! growth constant `K₁`, the stability product combining them, explicit
//! inverse-norm bounds for the Gaussian and inverse multiquadric families,
//! an a priori bound on the solution values, per-step native seminorms of
//! the collocated nonlinearity, and the RMS/Max error metrics of the
//! benchmark harness.
//!
//! Bound comparisons are soft: they are reported with a pass/flag marker and
//! never fail a run, the bounds being conservative by construction.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{
    fill_distance, separation_distance, tensor_points, Domain, SiteSet,
};
use crate::interpolation::{assemble_system, Fitter, PolynomialTail};
use crate::kernel::{multi_indices_up_to, KernelSpec, RbfFamily};
use crate::numfmt::sig12;
use crate::solver::{collocated_nonlinearity, spectral_norm_symmetric, ParabolicProblem, SolutionField};

/// Spectral norm of the inverse system matrix: `1 / σ_min` of the kernel
/// matrix (empty tail) or of the full saddle matrix (augmented system).
pub fn inverse_system_norm(
    kernel: &KernelSpec,
    sites: &SiteSet,
    tail: &PolynomialTail,
) -> Result<f64> {
    let matrix = assemble_system(kernel, sites, tail)?;
    let sv = matrix.svd(false, false).singular_values;
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return Err(Error::Singular);
    }
    Ok(1.0 / min)
}

/// Sampled derivative-sum constant `K₂`: the larger of
///
/// ```text
/// ( Σ_{|γ|≤3} max_{x,y∈Ω} |D^γ Φ(x,y)|² )^½    and
/// ( Σ_{|γ|≤3} max_{x∈Ω} Σ_ℓ |D^γ π_ℓ(x)|² )^½
/// ```
///
/// with maxima taken over dense sample grids of `sample_resolution` points
/// per axis — a lower approximation of the true maxima. For rectangles the
/// pairwise differences of an equispaced sample grid form an equispaced grid
/// on the difference box, so the kernel branch maximizes over that grid
/// instead of looping over all pairs; the value is identical.
pub fn derivative_sum_constant(
    kernel: &KernelSpec,
    domain: &Domain,
    tail: &PolynomialTail,
    sample_resolution: usize,
) -> Result<f64> {
    if sample_resolution < 2 {
        return Err(Error::InvalidParameter(
            "sample resolution must be at least 2".into(),
        ));
    }
    let d = domain.dim();
    let indices = multi_indices_up_to(d, 3);
    let origin = vec![0.0; d];

    let kernel_branch: f64 = match domain {
        Domain::Rectangle { lower, upper } => {
            let span: Vec<f64> = lower.iter().zip(upper).map(|(a, b)| b - a).collect();
            let neg: Vec<f64> = span.iter().map(|s| -s).collect();
            let diffs = tensor_points(&neg, &span, 2 * sample_resolution - 1);
            let mut sum = 0.0;
            for gamma in &indices {
                let mut best: f64 = 0.0;
                for u in &diffs {
                    let v = kernel.derivative(gamma, u, &origin)?.abs();
                    best = best.max(v);
                }
                sum += best * best;
            }
            sum.sqrt()
        }
        Domain::Ball { .. } => {
            let (lo, hi) = domain.bounding_box();
            let pts: Vec<Vec<f64>> = tensor_points(&lo, &hi, sample_resolution)
                .into_iter()
                .filter(|p| domain.contains(p))
                .collect();
            let mut sum = 0.0;
            for gamma in &indices {
                let mut best: f64 = 0.0;
                for x in &pts {
                    for y in &pts {
                        let v = kernel.derivative(gamma, x, y)?.abs();
                        best = best.max(v);
                    }
                }
                sum += best * best;
            }
            sum.sqrt()
        }
    };

    if tail.q() == 0 {
        return Ok(kernel_branch);
    }

    let (lo, hi) = domain.bounding_box();
    let pts: Vec<Vec<f64>> = tensor_points(&lo, &hi, sample_resolution)
        .into_iter()
        .filter(|p| domain.contains(p))
        .collect();
    let mut poly_sum = 0.0;
    for gamma in &indices {
        let mut best: f64 = 0.0;
        for x in &pts {
            let mut row = 0.0;
            for l in 0..tail.q() {
                let v = tail.basis_derivative(l, gamma, x);
                row += v * v;
            }
            best = best.max(row);
        }
        poly_sum += best;
    }
    Ok(kernel_branch.max(poly_sum.sqrt()))
}

/// Left-hand side of the stability hypothesis,
/// `h^δ √N L_N exp(√3 T K₁ K₂ (1+√N) L_N)`; the caller compares it against
/// a chosen ceiling.
pub fn stability_product(
    inverse_norm: f64,
    derivative_sum: f64,
    growth_constant: f64,
    n_sites: usize,
    time_step: f64,
    delta: f64,
    horizon: f64,
) -> Result<f64> {
    check_delta(delta)?;
    for (name, v) in [
        ("L_N", inverse_norm),
        ("K_2", derivative_sum),
        ("K_1", growth_constant),
        ("h", time_step),
    ] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let sqrt_n = (n_sites as f64).sqrt();
    Ok(time_step.powf(delta)
        * sqrt_n
        * inverse_norm
        * (3f64.sqrt() * horizon * growth_constant * derivative_sum * (1.0 + sqrt_n) * inverse_norm)
            .exp())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.2) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, 1/5), got {delta}"
        )));
    }
    Ok(())
}

fn gamma_fn(x: f64) -> f64 {
    statrs::function::gamma::gamma(x)
}

/// The dimension constant `c̃_{d,2} = 12 (π Γ²((d+2)/2) / 9)^{1/(d+1)}`.
pub fn dimension_constant(d: usize) -> f64 {
    let g = gamma_fn((d as f64 + 2.0) / 2.0);
    12.0 * (std::f64::consts::PI * g * g / 9.0).powf(1.0 / (d as f64 + 1.0))
}

/// Explicit inverse-norm bound for the Gaussian kernel,
/// `((2α)^{d/2} / c̃_{d,1}) q_X^d exp(40.71 d² / (α q_X²))`, evaluated
/// verbatim. Reported as a soft comparison against the measured `L_N`.
/// Overflows to infinity for small `α q_X²`; [`ln_bound_gaussian_log`]
/// stays finite there.
pub fn ln_bound_gaussian(alpha: f64, d: usize, separation: f64) -> f64 {
    ln_bound_gaussian_log(alpha, d, separation).exp()
}

/// Natural logarithm of [`ln_bound_gaussian`], finite where the bound
/// itself overflows.
pub fn ln_bound_gaussian_log(alpha: f64, d: usize, separation: f64) -> f64 {
    let df = d as f64;
    let c2 = dimension_constant(d);
    let c1 = (c2 / 8f64.sqrt()).powf(df) / (2.0 * gamma_fn((df + 2.0) / 2.0));
    (df / 2.0) * (2.0 * alpha).ln() - c1.ln()
        + df * separation.ln()
        + 40.71 * df * df / (alpha * separation * separation)
}

/// Inverse-norm bound shape for the inverse multiquadric family,
/// `q_X^{β+d/2−1/2} exp(2α c̃_{d,2} / q_X)`, *modulo* its unspecified
/// leading constant; callers must treat it as a shape, not a value.
pub fn ln_bound_multiquadric(alpha: f64, beta: f64, d: usize, separation: f64) -> f64 {
    let c2 = dimension_constant(d);
    separation.powf(beta + d as f64 / 2.0 - 0.5) * (2.0 * alpha * c2 / separation).exp()
}

/// A priori bound on the slice norms,
/// `(sup|f| + 1/(√2 K₂)) exp(√3 T K₁ K₂ √N (1+√N) L_N)`; compared softly
/// against the realized `max_k |v_k|`.
pub fn apriori_bound(
    sup_terminal: f64,
    growth_constant: f64,
    derivative_sum: f64,
    horizon: f64,
    n_sites: usize,
    inverse_norm: f64,
) -> f64 {
    let sqrt_n = (n_sites as f64).sqrt();
    (sup_terminal + 1.0 / (2f64.sqrt() * derivative_sum))
        * (3f64.sqrt()
            * horizon
            * growth_constant
            * derivative_sum
            * sqrt_n
            * (1.0 + sqrt_n)
            * inverse_norm)
            .exp()
}

/// Root-mean-square difference over an evaluation grid.
pub fn rms_error(field: &[f64], oracle: &[f64]) -> Result<f64> {
    if field.len() != oracle.len() || field.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: field.len().max(1),
            got: oracle.len(),
        });
    }
    let mse: f64 = field
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / field.len() as f64;
    Ok(mse.sqrt())
}

/// Largest absolute difference over an evaluation grid.
pub fn max_error(field: &[f64], oracle: &[f64]) -> Result<f64> {
    if field.len() != oracle.len() || field.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: field.len().max(1),
            got: oracle.len(),
        });
    }
    Ok(field
        .iter()
        .zip(oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Native seminorms of the interpolants of the collocated nonlinearity,
/// one per step `k = 0..n-1`: the quantity whose boundedness the
/// per-step approximation hypothesis asks for.
pub fn seminorm_trace(
    solution: &SolutionField,
    problem: &ParabolicProblem,
) -> Result<Vec<f64>> {
    let n = solution.steps();
    let template = solution.interpolant(0);
    let fitter = Fitter::new(
        *template.kernel(),
        Arc::new(solution.sites().clone()),
        template.tail().clone(),
        None,
    )?;
    let mut trace = Vec::with_capacity(n);
    for k in 0..n {
        let t_k = solution.time_grid()[k];
        let values =
            collocated_nonlinearity(problem, t_k, solution.interpolant(k), solution.sites())?;
        let interp = fitter.fit(values.as_slice())?;
        trace.push(interp.native_seminorm()?);
    }
    Ok(trace)
}

/// Estimate the growth constant `K₁` as the sampled maximum of
/// `|F| / (1 + |z| + |p| + |Γ|)` over random tuples.
pub fn estimate_growth_constant(problem: &ParabolicProblem, samples: usize, seed: u64) -> f64 {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    let d = problem.dim();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let t = rng.random_range(0.0..=problem.horizon());
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = rng.random_range(-2.0..2.0);
        let p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let raw = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        let gamma = 0.5 * (&raw + raw.transpose());
        let value = problem.nonlinearity(t, &x, z, &p, &gamma).abs();
        let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = 1.0 + z.abs() + p_norm + spectral_norm_symmetric(&gamma);
        best = best.max(value / denom);
    }
    best
}

/// Knobs for [`stability_report`]. `growth_constant = None` estimates `K₁`
/// by sampling; `ceiling` is the `K₃` the stability product is compared to.
#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub delta: f64,
    pub growth_constant: Option<f64>,
    pub k2_resolution: usize,
    pub fill_resolution: usize,
    pub time_step: f64,
    pub horizon: f64,
    pub ceiling: Option<f64>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            growth_constant: None,
            k2_resolution: 41,
            fill_resolution: crate::geometry::DEFAULT_FILL_RESOLUTION,
            time_step: 1e-2,
            horizon: 1.0,
            ceiling: None,
        }
    }
}

/// Everything the stability hypotheses ask about one configuration, plus the
/// soft bound comparisons.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub n_sites: usize,
    pub time_step: f64,
    pub separation: f64,
    pub fill: f64,
    pub inverse_norm: f64,
    pub derivative_sum: f64,
    pub growth_constant: f64,
    pub growth_constant_estimated: bool,
    pub delta: f64,
    pub stability_product: f64,
    pub ceiling: Option<f64>,
    pub ln_bound: Option<f64>,
    pub ln_bound_log: Option<f64>,
    pub ln_bound_modulo_constant: bool,
    pub sup_terminal: f64,
    pub apriori_bound: f64,
    pub max_site_value: Option<f64>,
    pub seminorm_trace: Option<Vec<f64>>,
    pub approximation_indicator: Option<f64>,
    pub condition_estimate: f64,
}

/// Assemble the full report. `problem` enables the `K₁` estimate and the
/// terminal supremum; `solution` adds the realized slice norms and the
/// per-step seminorm trace.
pub fn stability_report(
    kernel: &KernelSpec,
    sites: &SiteSet,
    domain: &Domain,
    tail: &PolynomialTail,
    problem: Option<&ParabolicProblem>,
    solution: Option<&SolutionField>,
    options: &ReportOptions,
) -> Result<StabilityReport> {
    check_delta(options.delta)?;
    let n_sites = sites.len();
    let separation = separation_distance(sites)?;
    let fill = fill_distance(sites, domain, options.fill_resolution)?;
    let inverse_norm = inverse_system_norm(kernel, sites, tail)?;
    let derivative_sum = derivative_sum_constant(kernel, domain, tail, options.k2_resolution)?;

    let (growth_constant, growth_constant_estimated) = match (options.growth_constant, problem) {
        (Some(k1), _) => (k1, false),
        (None, Some(p)) => (estimate_growth_constant(p, 1000, 0x6e0c), true),
        (None, None) => (1.0, true),
    };

    let product = stability_product(
        inverse_norm,
        derivative_sum,
        growth_constant,
        n_sites,
        options.time_step,
        options.delta,
        options.horizon,
    )?;

    let (ln_bound, ln_bound_log, modulo_constant) = match kernel.family() {
        RbfFamily::Gaussian => (
            Some(ln_bound_gaussian(kernel.alpha(), sites.dim(), separation)),
            Some(ln_bound_gaussian_log(kernel.alpha(), sites.dim(), separation)),
            false,
        ),
        RbfFamily::InverseMultiquadric => (
            Some(ln_bound_multiquadric(
                kernel.alpha(),
                -kernel.beta(),
                sites.dim(),
                separation,
            )),
            None,
            true,
        ),
        RbfFamily::Multiquadric => (None, None, false),
    };

    let sup_terminal = match problem {
        Some(p) => {
            let (lo, hi) = domain.bounding_box();
            tensor_points(&lo, &hi, 41)
                .iter()
                .filter(|x| domain.contains(x))
                .map(|x| p.terminal(x).abs())
                .fold(0.0f64, f64::max)
        }
        None => 1.0,
    };

    let apriori = apriori_bound(
        sup_terminal,
        growth_constant,
        derivative_sum,
        options.horizon,
        n_sites,
        inverse_norm,
    );

    let max_site_value = solution.map(SolutionField::max_slice_norm);
    let trace = match (solution, problem) {
        (Some(sol), Some(p)) => Some(seminorm_trace(sol, p)?),
        _ => None,
    };
    let approximation_indicator = trace.as_ref().map(|t| {
        let max_seminorm = t.iter().cloned().fold(0.0f64, f64::max);
        fill.powi(kernel.nu() as i32) * (1.0 + max_seminorm)
    });

    let condition_estimate = {
        let matrix = assemble_system(kernel, sites, tail)?;
        let sv = matrix.svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0f64, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    };

    Ok(StabilityReport {
        n_sites,
        time_step: options.time_step,
        separation,
        fill,
        inverse_norm,
        derivative_sum,
        growth_constant,
        growth_constant_estimated,
        delta: options.delta,
        stability_product: product,
        ceiling: options.ceiling,
        ln_bound,
        ln_bound_log,
        ln_bound_modulo_constant: modulo_constant,
        sup_terminal,
        apriori_bound: apriori,
        max_site_value,
        seminorm_trace: trace,
        approximation_indicator,
        condition_estimate,
    })
}

impl StabilityReport {
    pub const CSV_HEADER: &'static str =
        "N,h,q_X,fill,L_N,K_2,stability_product,apriori_bound,max_site_value";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.n_sites,
            sig12(self.time_step),
            sig12(self.separation),
            sig12(self.fill),
            sig12(self.inverse_norm),
            sig12(self.derivative_sum),
            sig12(self.stability_product),
            sig12(self.apriori_bound),
            self.max_site_value.map(sig12).unwrap_or_default(),
        )
    }

    /// Key/value text report. Bound comparisons carry a pass/flag marker and
    /// never fail the run.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let mut line = |k: &str, v: String| writeln!(out, "{k}: {v}").unwrap();
        line("sites", self.n_sites.to_string());
        line("time_step", sig12(self.time_step));
        line("separation_q", sig12(self.separation));
        line("fill_distance", sig12(self.fill));
        line("condition_estimate", sig12(self.condition_estimate));
        line("inverse_norm_L_N", sig12(self.inverse_norm));
        line("derivative_sum_K_2 (sampled)", sig12(self.derivative_sum));
        let k1_label = if self.growth_constant_estimated {
            format!("{} (sampled estimate)", sig12(self.growth_constant))
        } else {
            sig12(self.growth_constant)
        };
        line("growth_K_1", k1_label);
        line("delta", sig12(self.delta));
        line("stability_product", sig12(self.stability_product));
        if let Some(k3) = self.ceiling {
            let marker = if self.stability_product <= k3 { "pass" } else { "flag" };
            line(
                "stability_check (soft)",
                format!("{marker} (product {} vs ceiling {})", sig12(self.stability_product), sig12(k3)),
            );
        }
        if let Some(bound) = self.ln_bound {
            if self.ln_bound_modulo_constant {
                line("inverse_norm_bound (modulo constant)", sig12(bound));
            } else {
                let marker = if self.inverse_norm <= bound { "pass" } else { "flag" };
                let shown = if bound.is_finite() {
                    sig12(bound)
                } else if let Some(log) = self.ln_bound_log {
                    format!("overflow (ln = {})", sig12(log))
                } else {
                    bound.to_string()
                };
                line(
                    "inverse_norm_bound_check (soft)",
                    format!("{marker} (measured {} vs bound {})", sig12(self.inverse_norm), shown),
                );
            }
        }
        line("sup_terminal", sig12(self.sup_terminal));
        line("apriori_bound", sig12(self.apriori_bound));
        if let Some(max_v) = self.max_site_value {
            let marker = if max_v <= self.apriori_bound { "pass" } else { "flag" };
            line(
                "apriori_check (soft)",
                format!("{marker} (max slice norm {} vs bound {})", sig12(max_v), sig12(self.apriori_bound)),
            );
        }
        if let Some(trace) = &self.seminorm_trace {
            let max_t = trace.iter().cloned().fold(0.0f64, f64::max);
            line("seminorm_trace_max", sig12(max_t));
            line(
                "seminorm_trace",
                trace.iter().map(|v| sig12(*v)).collect::<Vec<_>>().join(" "),
            );
        }
        if let Some(ind) = self.approximation_indicator {
            line("approximation_indicator", sig12(ind));
        }
        out
    }
}
