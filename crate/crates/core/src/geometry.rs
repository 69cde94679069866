//! Domains, collocation site sets, and the site-geometry quantities feeding
//! the interpolation error and stability diagnostics: fill distance,
//! separation distance, quasi-uniformity ratio, and unisolvency checks.

use crate::error::{Error, Result};
use crate::kernel::multi_indices_up_to;
use nalgebra::DMatrix;

/// Bounded domain Ω on which the solution is computed. Both shapes satisfy
/// an interior cone condition, so interpolation error estimates apply on
/// them; that property is a geometric fact about the shapes and is not
/// re-checked at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Rectangle { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl Domain {
    pub fn rectangle(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len().max(1),
                got: upper.len(),
            });
        }
        for (axis, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) {
                return Err(Error::InvalidParameter(format!(
                    "rectangle axis {axis}: lower {a} must be below upper {b}"
                )));
            }
        }
        Ok(Domain::Rectangle { lower, upper })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidParameter(
                "ball center must have dimension >= 1".into(),
            ));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Rectangle { lower, .. } => lower.len(),
            Domain::Ball { center, .. } => center.len(),
        }
    }

    /// Membership in the closure of Ω, with a small tolerance so grid
    /// endpoints generated in floating arithmetic count as inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            Domain::Rectangle { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(xi, (a, b))| *xi >= a - TOL && *xi <= b + TOL),
            Domain::Ball { center, radius } => {
                let r2: f64 = x
                    .iter()
                    .zip(center)
                    .map(|(xi, ci)| (xi - ci) * (xi - ci))
                    .sum();
                r2.sqrt() <= radius + TOL
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Rectangle { lower, upper } => (lower.clone(), upper.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
        }
    }

    /// Midpoint used to center the polynomial tail monomials.
    pub fn midpoint(&self) -> Vec<f64> {
        match self {
            Domain::Rectangle { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(a, b)| 0.5 * (a + b))
                .collect(),
            Domain::Ball { center, .. } => center.clone(),
        }
    }

    /// Per-axis half-widths used to scale the polynomial tail monomials.
    pub fn half_widths(&self) -> Vec<f64> {
        match self {
            Domain::Rectangle { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(a, b)| 0.5 * (b - a))
                .collect(),
            Domain::Ball { center, radius } => vec![*radius; center.len()],
        }
    }
}

/// An ordered set of pairwise distinct collocation sites.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    points: Vec<Vec<f64>>,
    dim: usize,
}

impl SiteSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::TooFewSites { needed: 1, got: 0 });
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidParameter("sites must have dimension >= 1".into()));
        }
        for (j, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "site {j} has a non-finite coordinate: {p:?}"
                )));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(Error::DuplicateSites {
                        first: i,
                        second: j,
                        coords: points[i].clone(),
                    });
                }
            }
        }
        Ok(Self { points, dim })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    /// True when every site lies in the closure of `domain`.
    pub fn within(&self, domain: &Domain) -> bool {
        self.points.iter().all(|p| domain.contains(p))
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Coordinates of an equispaced one-dimensional grid on `[a, b]` including
/// both endpoints; a single point degenerates to the midpoint.
fn axis_coordinates(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (a + b)];
    }
    let step = (b - a) / (count - 1) as f64;
    (0..count).map(|i| a + step * i as f64).collect()
}

/// Tensor grid over a box, axis 0 slowest. Used for site generation and for
/// the dense candidate grids of the sampled-maximization diagnostics.
pub fn tensor_points(lower: &[f64], upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let d = lower.len();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|i| axis_coordinates(lower[i], upper[i], per_axis))
        .collect();
    let mut out = Vec::with_capacity(per_axis.pow(d as u32));
    let mut point = vec![0.0; d];
    fill_tensor(&axes, 0, &mut point, &mut out);
    out
}

fn fill_tensor(axes: &[Vec<f64>], depth: usize, point: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
    if depth == axes.len() {
        out.push(point.clone());
        return;
    }
    for &c in &axes[depth] {
        point[depth] = c;
        fill_tensor(axes, depth + 1, point, out);
    }
}

/// Equispaced tensor grid of `per_axis^d` sites on a rectangle, endpoints
/// included on each axis.
pub fn equispaced_grid(domain: &Domain, per_axis: usize) -> Result<SiteSet> {
    let Domain::Rectangle { lower, upper } = domain else {
        return Err(Error::InvalidParameter(
            "equispaced grids are defined on rectangles only".into(),
        ));
    };
    if per_axis == 0 {
        return Err(Error::InvalidParameter(
            "points per axis must be at least 1".into(),
        ));
    }
    SiteSet::new(tensor_points(lower, upper, per_axis))
}

/// Separation distance `q_X`: half the minimum pairwise site distance.
pub fn separation_distance(sites: &SiteSet) -> Result<f64> {
    let n = sites.len();
    if n < 2 {
        return Err(Error::TooFewSites { needed: 2, got: n });
    }
    let mut min = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclidean(sites.point(i), sites.point(j));
            if d < min {
                min = d;
            }
        }
    }
    Ok(0.5 * min)
}

/// Fill distance Δ: the largest distance from a domain point to its nearest
/// site, approximated by maximizing over a dense candidate grid of
/// `resolution` points per axis (clipped to the ball for ball domains).
///
/// The result is a lower bound on the true supremum and converges to it as
/// the resolution grows.
pub fn fill_distance(sites: &SiteSet, domain: &Domain, resolution: usize) -> Result<f64> {
    if resolution < 2 {
        return Err(Error::InvalidParameter(
            "fill distance resolution must be at least 2".into(),
        ));
    }
    if sites.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: sites.dim(),
        });
    }
    let (lower, upper) = domain.bounding_box();
    let candidates = tensor_points(&lower, &upper, resolution);
    let mut fill: f64 = 0.0;
    for cand in &candidates {
        if !domain.contains(cand) {
            continue;
        }
        let nearest = sites
            .points()
            .iter()
            .map(|p| euclidean(cand, p))
            .fold(f64::INFINITY, f64::min);
        fill = fill.max(nearest);
    }
    Ok(fill)
}

/// Empirical quasi-uniformity constant Δ / q_X.
pub fn quasi_uniformity(sites: &SiteSet, domain: &Domain, resolution: usize) -> Result<f64> {
    let q = separation_distance(sites)?;
    let fill = fill_distance(sites, domain, resolution)?;
    Ok(fill / q)
}

/// Default candidate-grid resolution per axis for fill-distance estimates.
pub const DEFAULT_FILL_RESOLUTION: usize = 200;

/// Outcome of the unisolvency decision for a polynomial tail of order `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unisolvency {
    /// `m = 0`: no polynomial tail, nothing to check.
    TriviallyTrue,
    Unisolvent,
    NotUnisolvent,
}

/// Rank-based unisolvency verdict together with the sufficient condition
/// (N ≥ m and every coordinate sequence pairwise distinct), which guarantees
/// unisolvency when it holds but fails for tensor grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnisolvencyReport {
    pub verdict: Unisolvency,
    pub sufficient_condition: bool,
}

/// Decide whether `sites` determine polynomials of degree ≤ m−1 uniquely.
///
/// The decision is by the rank of the N×Q monomial matrix (monomials
/// centered and scaled to the site bounding box for conditioning), with
/// singular values below `1e-10` times the largest treated as zero.
pub fn unisolvency_check(sites: &SiteSet, m: usize) -> UnisolvencyReport {
    let sufficient = sufficient_condition(sites, m);
    if m == 0 {
        return UnisolvencyReport {
            verdict: Unisolvency::TriviallyTrue,
            sufficient_condition: sufficient,
        };
    }
    let d = sites.dim();
    let exponents = multi_indices_up_to(d, m - 1);
    let q = exponents.len();
    let n = sites.len();
    if n < q {
        return UnisolvencyReport {
            verdict: Unisolvency::NotUnisolvent,
            sufficient_condition: sufficient,
        };
    }

    let (center, scale) = site_centering(sites);
    let mut p = DMatrix::zeros(n, q);
    for (row, site) in sites.points().iter().enumerate() {
        for (col, exps) in exponents.iter().enumerate() {
            let mut v = 1.0;
            for axis in 0..d {
                v *= ((site[axis] - center[axis]) / scale[axis]).powi(exps[axis] as i32);
            }
            p[(row, col)] = v;
        }
    }

    let singular_values = p.svd(false, false).singular_values;
    let max_sv = singular_values.iter().cloned().fold(0.0f64, f64::max);
    let rank = singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * max_sv)
        .count();
    let verdict = if rank == q {
        Unisolvency::Unisolvent
    } else {
        Unisolvency::NotUnisolvent
    };
    UnisolvencyReport {
        verdict,
        sufficient_condition: sufficient,
    }
}

fn sufficient_condition(sites: &SiteSet, m: usize) -> bool {
    if sites.len() < m {
        return false;
    }
    for axis in 0..sites.dim() {
        let mut coords: Vec<f64> = sites.points().iter().map(|p| p[axis]).collect();
        coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if coords.windows(2).any(|w| w[0] == w[1]) {
            return false;
        }
    }
    true
}

fn site_centering(sites: &SiteSet) -> (Vec<f64>, Vec<f64>) {
    let d = sites.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in sites.points() {
        for axis in 0..d {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    let center: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let scale: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| {
            let h = 0.5 * (b - a);
            if h > 0.0 {
                h
            } else {
                1.0
            }
        })
        .collect();
    (center, scale)
}
