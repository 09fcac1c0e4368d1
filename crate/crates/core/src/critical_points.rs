//! Locating and classifying the critical points of a potential.
//!
//! Seeds on a uniform grid are driven to `∇V = 0` by damped Newton with
//! Armijo backtracking on `½|∇V|²`; converged points are merged, classified by
//! the eigenvalues of the analytic Hessian, and checked for admissibility.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{check_point, norm, Potential};

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidArgument("box bounds must have equal, nonzero length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box {lower:?} .. {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]ᴺ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// The box grown by `margin` times its width on every side.
    pub fn inflated(&self, margin: f64) -> Self {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let w = (u - l) * margin;
                (l - w, u + w)
            })
            .unzip();
        Self { lower, upper }
    }

    fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let n = self.dim();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut k| {
                (0..n)
                    .map(|d| {
                        let i = k % per_axis;
                        k /= per_axis;
                        let t = i as f64 / (per_axis - 1) as f64;
                        self.lower[d] + t * (self.upper[d] - self.lower[d])
                    })
                    .collect()
            })
            .collect()
    }
}

/// A nondegenerate zero of `∇V` with its Hessian spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub value: f64,
    pub laplacian: f64,
    /// Hessian eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Number of negative eigenvalues.
    pub index: usize,
    /// Unit eigenvectors matching `eigenvalues`.
    #[serde(skip)]
    pub eigenvectors: Vec<Vec<f64>>,
    /// `|∇V|` at `location`.
    #[serde(skip)]
    pub residual: f64,
}

impl CriticalPoint {
    pub fn is_minimum(&self) -> bool {
        self.index == 0
    }

    pub fn is_saddle(&self) -> bool {
        self.index == 1
    }

    pub fn min_abs_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()))
    }

    /// Eigenvectors of the negative-eigenvalue modes.
    pub fn unstable_directions(&self) -> impl Iterator<Item = &[f64]> {
        self.eigenvalues
            .iter()
            .zip(&self.eigenvectors)
            .filter(|(l, _)| **l < 0.0)
            .map(|(_, v)| v.as_slice())
    }

    pub fn distance_to(&self, x: &[f64]) -> f64 {
        self.location
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Builds the [`CriticalPoint`] record at `x` from the analytic Hessian. Does
/// not check that `x` is critical; `residual` reports `|∇V(x)|`.
pub fn classify(p: &dyn Potential, x: &[f64]) -> Result<CriticalPoint> {
    check_point(p, x)?;
    let n = p.dim();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n * n];
    p.gradient(x, &mut grad);
    p.hessian(x, &mut hess);
    let (eigenvalues, eigenvectors) = sorted_eigen(&hess, n);
    Ok(CriticalPoint {
        location: x.to_vec(),
        value: p.value(x),
        laplacian: p.laplacian(x),
        index: eigenvalues.iter().filter(|l| **l < 0.0).count(),
        eigenvalues,
        eigenvectors,
        residual: norm(&grad),
    })
}

fn sorted_eigen(hess: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = DMatrix::from_row_slice(n, n, hess);
    let eig = SymmetricEigen::new(m);
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|i| {
            let v = eig.eigenvectors.column(i);
            // deterministic sign: largest component positive
            let k = (0..n)
                .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
                .unwrap_or(0);
            let s = if v[k] < 0.0 { -1.0 } else { 1.0 };
            (eig.eigenvalues[i], v.iter().map(|c| s * c).collect())
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// A finite set of pairwise-distinct critical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CriticalPointSet {
    points: Vec<CriticalPoint>,
}

impl CriticalPointSet {
    pub fn new(points: Vec<CriticalPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::NoCriticalPoints);
        }
        let set = Self { points };
        if set.len() > 1 && set.separation() <= 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "critical points closer than 1e-6 (separation {:.3e})",
                set.separation()
            )));
        }
        Ok(set)
    }

    pub fn points(&self) -> &[CriticalPoint] {
        &self.points
    }

    pub fn get(&self, i: usize) -> Option<&CriticalPoint> {
        self.points.get(i)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, CriticalPoint> {
        self.points.iter()
    }

    /// Minimum pairwise distance; infinite for a single point.
    pub fn separation(&self) -> f64 {
        let mut r = f64::INFINITY;
        for (i, a) in self.points.iter().enumerate() {
            for b in &self.points[i + 1..] {
                r = r.min(a.distance_to(&b.location));
            }
        }
        r
    }

    /// Index and distance of the point nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        self.points
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.distance_to(x)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("set is nonempty")
    }

    /// Index of the point within `tol` of `x`, if any.
    pub fn find(&self, x: &[f64], tol: f64) -> Option<usize> {
        let (i, d) = self.nearest(x);
        (d <= tol).then_some(i)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads the JSON form and re-derives eigenvectors and residuals from `p`.
    pub fn from_json(p: &dyn Potential, json: &str) -> Result<Self> {
        let raw: Vec<CriticalPoint> = serde_json::from_str(json)?;
        let points = raw
            .iter()
            .map(|c| classify(p, &c.location))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }
}

impl<'a> IntoIterator for &'a CriticalPointSet {
    type Item = &'a CriticalPoint;
    type IntoIter = std::slice::Iter<'a, CriticalPoint>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Tolerances for the Newton search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Required `|∇V|` at an accepted point.
    pub residual_tol: f64,
    /// Points closer than this are merged.
    pub merge_tol: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            merge_tol: 1e-6,
            max_iterations: 100,
        }
    }
}

/// Damped Newton on `∇V = 0` from `seed`. Returns `None` on divergence,
/// stagnation, or a non-finite iterate.
pub fn newton_refine(p: &dyn Potential, seed: &[f64], opts: &NewtonOptions) -> Option<Vec<f64>> {
    let n = p.dim();
    let mut x = seed.to_vec();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let mut trial = vec![0.0; n];
    p.gradient(&x, &mut g);
    let mut f = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..opts.max_iterations {
        if !f.is_finite() {
            return None;
        }
        if (2.0 * f).sqrt() <= opts.residual_tol {
            return Some(x);
        }
        p.hessian(&x, &mut h);
        let step = pseudo_solve(&h, &g, n)?;
        // Armijo on f = ½|∇V|²; the Newton direction has f' = -2f.
        let mut alpha = 1.0;
        loop {
            for i in 0..n {
                trial[i] = x[i] - alpha * step[i];
            }
            p.gradient(&trial, &mut g);
            let ft = 0.5 * g.iter().map(|v| v * v).sum::<f64>();
            if ft.is_finite() && ft <= f * (1.0 - 2e-4 * alpha) {
                x.copy_from_slice(&trial);
                f = ft;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-10 {
                // at roundoff level a full step may fail to decrease
                p.gradient(&x, &mut g);
                return ((2.0 * f).sqrt() <= opts.residual_tol).then_some(x);
            }
        }
    }
    ((2.0 * f).sqrt() <= opts.residual_tol).then_some(x)
}

/// Solves `H d = g` through the eigendecomposition, dropping modes with
/// `|λ| < 1e-12 max|λ|`.
fn pseudo_solve(h: &[f64], g: &[f64], n: usize) -> Option<Vec<f64>> {
    if n == 1 {
        return (h[0].abs() > 0.0).then(|| vec![g[0] / h[0]]);
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, h));
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    if !(lmax > 0.0) || !lmax.is_finite() {
        return None;
    }
    let mut d = vec![0.0; n];
    for k in 0..n {
        let l = eig.eigenvalues[k];
        if l.abs() < 1e-12 * lmax {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        let c: f64 = v.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / l;
        for i in 0..n {
            d[i] += c * v[i];
        }
    }
    Some(d)
}

/// Finds the critical points of `p` inside `bounds` by Newton from a
/// `grid_per_axis`ᴺ grid of seeds.
pub fn find_critical_points(
    p: &dyn Potential,
    bounds: &SearchBox,
    grid_per_axis: usize,
) -> Result<CriticalPointSet> {
    find_critical_points_with(p, bounds, grid_per_axis, &NewtonOptions::default())
}

pub fn find_critical_points_with(
    p: &dyn Potential,
    bounds: &SearchBox,
    grid_per_axis: usize,
    opts: &NewtonOptions,
) -> Result<CriticalPointSet> {
    if grid_per_axis < 2 {
        return Err(Error::InvalidArgument("grid_per_axis must be at least 2".into()));
    }
    if bounds.dim() != p.dim() {
        return Err(Error::InvalidArgument(format!(
            "box dimension {} does not match potential dimension {}",
            bounds.dim(),
            p.dim()
        )));
    }
    let seeds = bounds.grid(grid_per_axis);
    let converged: Vec<Vec<f64>> = seeds
        .par_iter()
        .filter_map(|s| newton_refine(p, s, opts))
        .filter(|x| bounds.contains(x))
        .collect();

    // Sequential merge in seed order.
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for x in converged {
        if !unique.iter().any(|u| dist(u, &x) <= opts.merge_tol) {
            unique.push(x);
        }
    }
    if unique.is_empty() {
        return Err(Error::NoCriticalPoints);
    }
    let mut points = unique
        .iter()
        .map(|x| classify(p, x))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.index.cmp(&b.index).then_with(|| {
            a.location
                .iter()
                .zip(&b.location)
                .map(|(u, v)| (u * 1e8).round().total_cmp(&(v * 1e8).round()))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    CriticalPointSet::new(points)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Outcome of the admissibility checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub count: usize,
    pub finite: bool,
    pub min_abs_eigenvalue: f64,
    pub nondegenerate: bool,
    pub radius: f64,
    pub center: Vec<f64>,
    pub samples: usize,
    /// Sampled infimum of `|∇V|` on the sphere.
    pub sphere_min_gradient: f64,
    pub coercive: bool,
    pub admissible: bool,
}

/// Threshold below which a Hessian eigenvalue counts as zero.
pub const EIGENVALUE_FLOOR: f64 = 1e-8;
/// Threshold the sampled `inf |∇V|` on the sphere must exceed.
pub const COERCIVITY_FLOOR: f64 = 1e-3;
const SPHERE_SAMPLES: usize = 10_000;

/// Checks finiteness, nondegeneracy, and a sampled weak-coercivity condition
/// on the sphere of radius `radius` about the origin.
///
/// The coercivity condition quantifies over all `|x| > R`; only the sphere is
/// sampled, so a pass is evidence rather than proof.
pub fn check_admissibility(
    p: &dyn Potential,
    cps: &CriticalPointSet,
    radius: f64,
) -> AdmissibilityReport {
    check_admissibility_about(p, cps, radius, &vec![0.0; p.dim()])
}

pub fn check_admissibility_about(
    p: &dyn Potential,
    cps: &CriticalPointSet,
    radius: f64,
    center: &[f64],
) -> AdmissibilityReport {
    let n = p.dim();
    let min_abs_eigenvalue = cps
        .iter()
        .map(CriticalPoint::min_abs_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let samples = sphere_samples(n, SPHERE_SAMPLES);
    let mut g = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut sphere_min_gradient = f64::INFINITY;
    for dir in &samples {
        for i in 0..n {
            x[i] = center[i] + radius * dir[i];
        }
        p.gradient(&x, &mut g);
        sphere_min_gradient = sphere_min_gradient.min(norm(&g));
    }
    let nondegenerate = min_abs_eigenvalue >= EIGENVALUE_FLOOR;
    let coercive = sphere_min_gradient > COERCIVITY_FLOOR;
    AdmissibilityReport {
        count: cps.len(),
        finite: true,
        min_abs_eigenvalue,
        nondegenerate,
        radius,
        center: center.to_vec(),
        samples: samples.len(),
        sphere_min_gradient,
        coercive,
        admissible: nondegenerate && coercive,
    }
}

/// Unit vectors covering the sphere: both points for N = 1, equally spaced
/// angles for N = 2, seeded Gaussian directions otherwise.
fn sphere_samples(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                    let r = norm(&v);
                    v.into_iter().map(|c| c / r).collect()
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{DoubleWell, Quadratic, TripleWell, Trough};

    fn triple_well_set(grid: usize) -> CriticalPointSet {
        let b = SearchBox::cube(2, -0.5, 1.5).unwrap();
        find_critical_points(&TripleWell, &b, grid).unwrap()
    }

    #[test]
    fn triple_well_has_exactly_five_critical_points() {
        let set = triple_well_set(40);
        assert_eq!(set.len(), 5);
        let s1 = TripleWell::saddle_low();
        let s2 = TripleWell::saddle_high();
        for expected in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], s1, s2] {
            let (_, d) = set.nearest(&expected);
            assert!(d < 1e-8, "missing {expected:?}");
        }
        for c in &set {
            assert!(c.residual <= 1e-10);
            assert!(c.min_abs_eigenvalue() > EIGENVALUE_FLOOR);
        }
        let saddles: Vec<_> = set.iter().filter(|c| c.is_saddle()).collect();
        assert_eq!(saddles.len(), 2);
        for s in saddles {
            assert_eq!(s.eigenvalues.iter().filter(|l| **l < 0.0).count(), 1);
            assert!((s.value - 2.0 / 27.0).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_refinement_gives_the_same_set() {
        let a = triple_well_set(40);
        let b = triple_well_set(80);
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(b.iter()) {
            for (u, v) in p.location.iter().zip(&q.location) {
                assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn triple_well_set_is_closed_under_swap() {
        let set = triple_well_set(40);
        for c in &set {
            let swapped = [c.location[1], c.location[0]];
            assert!(set.find(&swapped, 1e-8).is_some());
        }
    }

    #[test]
    fn quadratic_has_a_single_minimum() {
        let b = SearchBox::cube(2, -1.0, 1.0).unwrap();
        let set = find_critical_points(&Quadratic::new(2), &b, 10).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.points()[0].index, 0);
        assert!(set.points()[0].location.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn double_well_roots_and_indices() {
        let b = SearchBox::cube(1, -2.0, 2.0).unwrap();
        let set = find_critical_points(&DoubleWell, &b, 20).unwrap();
        let mut pts: Vec<_> = set.iter().map(|c| (c.location[0], c.index)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(pts.len(), 3);
        let expected = [(-1.0, 0), (0.0, 1), (1.0, 0)];
        for ((x, i), (ex, ei)) in pts.iter().zip(expected) {
            assert!((x - ex).abs() < 1e-10);
            assert_eq!(*i, ei);
        }
    }

    #[test]
    fn empty_search_is_an_error() {
        // The quadratic's only critical point lies outside this box.
        let b = SearchBox::cube(2, 2.0, 3.0).unwrap();
        assert!(matches!(
            find_critical_points(&Quadratic::new(2), &b, 5),
            Err(Error::NoCriticalPoints)
        ));
    }

    #[test]
    fn bad_arguments_are_rejected() {
        assert!(SearchBox::new(vec![0.0], vec![0.0]).is_err());
        let b = SearchBox::cube(2, -1.0, 1.0).unwrap();
        assert!(find_critical_points(&TripleWell, &b, 1).is_err());
    }

    #[test]
    fn admissibility_of_builtins() {
        let set = triple_well_set(40);
        let r = check_admissibility(&TripleWell, &set, 3.0);
        assert!(r.admissible, "{r:?}");
        let r = check_admissibility_about(&TripleWell, &set, 3.0, &[0.5, 0.5]);
        assert!(r.sphere_min_gradient > 1e-3);

        let q = Quadratic::new(2);
        let b = SearchBox::cube(2, -1.0, 1.0).unwrap();
        let set = find_critical_points(&q, &b, 10).unwrap();
        assert!(check_admissibility(&q, &set, 3.0).admissible);
    }

    #[test]
    fn degenerate_hessian_is_not_admissible() {
        let set = CriticalPointSet::new(vec![classify(&Trough, &[0.0, 0.0]).unwrap()]).unwrap();
        let r = check_admissibility(&Trough, &set, 3.0);
        assert!(!r.nondegenerate);
        assert!(!r.admissible);
    }

    #[test]
    fn json_round_trip_restores_eigenvectors() {
        let set = triple_well_set(40);
        let json = set.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let first = &value.as_array().unwrap()[0];
        for key in ["location", "value", "laplacian", "eigenvalues", "index"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let back = CriticalPointSet::from_json(&TripleWell, &json).unwrap();
        assert_eq!(back.len(), set.len());
        for (a, b) in set.iter().zip(back.iter()) {
            assert_eq!(a.location, b.location);
            assert_eq!(a.eigenvectors, b.eigenvectors);
        }
    }
}
