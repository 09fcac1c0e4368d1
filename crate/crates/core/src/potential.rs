//! Potentials on ℝᴺ with value, gradient, Hessian, Laplacian and Laplacian
//! gradient evaluators.
//!
//! Built-in potentials carry exact analytic derivatives. A potential that only
//! provides the value and the gradient gets the higher derivatives from central
//! finite differences through the trait's default methods.

use serde::Serialize;

use crate::error::{ensure_finite, Result};

/// Relative step for the finite-difference fallbacks: `h = 1e-5 (1 + |x|)`.
pub const FD_STEP: f64 = 1e-5;

/// Step for differencing the Laplacian, which is itself a finite difference in
/// the fallback path; a wider step keeps the nested roundoff near 1e-6.
const FD_STEP_NESTED: f64 = 1e-4;

/// All derivative information of a potential at one point.
///
/// The Hessian is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
    pub laplacian: f64,
    pub laplacian_gradient: Vec<f64>,
}

impl Jet {
    pub fn new(dim: usize) -> Self {
        Self {
            value: 0.0,
            gradient: vec![0.0; dim],
            hessian: vec![0.0; dim * dim],
            laplacian: 0.0,
            laplacian_gradient: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    /// `D²V ∇V`, the gradient of `½|∇V|²`.
    pub fn hessian_times_gradient(&self, out: &mut [f64]) {
        let n = self.dim();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = self.hessian[i * n..(i + 1) * n]
                .iter()
                .zip(&self.gradient)
                .map(|(h, g)| h * g)
                .sum();
        }
    }

    pub fn gradient_norm_sq(&self) -> f64 {
        self.gradient.iter().map(|g| g * g).sum()
    }
}

/// A smooth potential `V: ℝᴺ → ℝ`.
///
/// Implementors must provide [`value`](Potential::value) and
/// [`gradient`](Potential::gradient). The remaining evaluators default to
/// central differences with step `1e-5 (1 + |x|)`.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    fn name(&self) -> &str;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Row-major `N × N` Hessian.
    fn hessian(&self, x: &[f64], hess: &mut [f64]) {
        let n = self.dim();
        let h = FD_STEP * (1.0 + norm(x));
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for j in 0..n {
            xp[j] = x[j] + h;
            self.gradient(&xp, &mut gp);
            xp[j] = x[j] - h;
            self.gradient(&xp, &mut gm);
            xp[j] = x[j];
            for i in 0..n {
                hess[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        symmetrize(hess, n);
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut hess = vec![0.0; n * n];
        self.hessian(x, &mut hess);
        trace(&hess, n)
    }

    /// Gradient of the Laplacian (contracted third derivatives).
    fn laplacian_gradient(&self, x: &[f64], out: &mut [f64]) {
        let h = FD_STEP_NESTED * (1.0 + norm(x));
        let mut xp = x.to_vec();
        for j in 0..self.dim() {
            xp[j] = x[j] + h;
            let lp = self.laplacian(&xp);
            xp[j] = x[j] - h;
            let lm = self.laplacian(&xp);
            xp[j] = x[j];
            out[j] = (lp - lm) / (2.0 * h);
        }
    }

    /// Fills every field of `jet` at `x`.
    fn jet(&self, x: &[f64], jet: &mut Jet) {
        let n = self.dim();
        jet.value = self.value(x);
        self.gradient(x, &mut jet.gradient);
        self.hessian(x, &mut jet.hessian);
        jet.laplacian = trace(&jet.hessian, n);
        self.laplacian_gradient(x, &mut jet.laplacian_gradient);
    }

    /// Named reference points (usually the critical points) used by the CLI to
    /// resolve endpoint names.
    fn named_points(&self) -> Vec<(&'static str, Vec<f64>)> {
        Vec::new()
    }
}

/// Value, gradient, Hessian and Laplacian at one point, as returned by
/// [`eval_all`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
    pub laplacian: f64,
}

/// Evaluates all four quantities at `x` in one call. The Laplacian is the
/// trace of the returned Hessian.
pub fn eval_all(p: &dyn Potential, x: &[f64]) -> Result<Evaluation> {
    check_point(p, x)?;
    let n = p.dim();
    let mut gradient = vec![0.0; n];
    let mut hessian = vec![0.0; n * n];
    p.gradient(x, &mut gradient);
    p.hessian(x, &mut hessian);
    Ok(Evaluation {
        value: p.value(x),
        laplacian: trace(&hessian, n),
        gradient,
        hessian,
    })
}

pub(crate) fn check_point(p: &dyn Potential, x: &[f64]) -> Result<()> {
    if x.len() != p.dim() {
        return Err(crate::Error::InvalidArgument(format!(
            "point has dimension {} but the potential has dimension {}",
            x.len(),
            p.dim()
        )));
    }
    ensure_finite(x)
}

/// Maximum relative discrepancies between analytic derivatives and central
/// finite differences over a set of probe points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub probes: usize,
    /// Gradient vs differences of `V`.
    pub gradient: f64,
    /// Hessian vs differences of the gradient.
    pub hessian: f64,
    /// Laplacian vs the trace of the differenced Hessian.
    pub laplacian: f64,
    /// Laplacian gradient vs differences of the Laplacian.
    pub laplacian_gradient: f64,
    /// Largest asymmetry `|H_ij - H_ji|` relative to `max |H|`.
    pub asymmetry: f64,
}

impl DerivativeReport {
    pub fn max_error(&self) -> f64 {
        self.gradient
            .max(self.hessian)
            .max(self.laplacian)
            .max(self.laplacian_gradient)
    }
}

/// Compares the analytic derivatives of `p` with central differences at each
/// probe. Errors are measured as `|analytic - fd|_∞ / max(|fd|_∞, 1)`.
pub fn check_derivatives(p: &dyn Potential, probes: &[Vec<f64>]) -> DerivativeReport {
    let n = p.dim();
    let mut report = DerivativeReport {
        probes: probes.len(),
        gradient: 0.0,
        hessian: 0.0,
        laplacian: 0.0,
        laplacian_gradient: 0.0,
        asymmetry: 0.0,
    };
    let mut jet = Jet::new(n);
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for x in probes {
        p.jet(x, &mut jet);
        let h = FD_STEP * (1.0 + norm(x));
        let mut xp = x.clone();

        let mut fd_grad = vec![0.0; n];
        let mut fd_hess = vec![0.0; n * n];
        for j in 0..n {
            xp[j] = x[j] + h;
            let vp = p.value(&xp);
            p.gradient(&xp, &mut gp);
            xp[j] = x[j] - h;
            let vm = p.value(&xp);
            p.gradient(&xp, &mut gm);
            xp[j] = x[j];
            fd_grad[j] = (vp - vm) / (2.0 * h);
            for i in 0..n {
                fd_hess[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let fd_lap = trace(&fd_hess, n);

        let hl = h;
        let mut fd_lap_grad = vec![0.0; n];
        for j in 0..n {
            xp[j] = x[j] + hl;
            let lp = p.laplacian(&xp);
            xp[j] = x[j] - hl;
            let lm = p.laplacian(&xp);
            xp[j] = x[j];
            fd_lap_grad[j] = (lp - lm) / (2.0 * hl);
        }

        report.gradient = report.gradient.max(rel_err(&jet.gradient, &fd_grad));
        report.hessian = report.hessian.max(rel_err(&jet.hessian, &fd_hess));
        report.laplacian = report.laplacian.max(rel_err(&[jet.laplacian], &[fd_lap]));
        report.laplacian_gradient = report
            .laplacian_gradient
            .max(rel_err(&jet.laplacian_gradient, &fd_lap_grad));

        let scale = jet.hessian.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                let a = (jet.hessian[i * n + j] - jet.hessian[j * n + i]).abs() / scale;
                report.asymmetry = report.asymmetry.max(a);
            }
        }
    }
    report
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1.0);
    diff / scale
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn trace(m: &[f64], n: usize) -> f64 {
    (0..n).map(|i| m[i * n + i]).sum()
}

fn symmetrize(m: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = s;
            m[j * n + i] = s;
        }
    }
}

/// Three equal-depth wells at `(0,0)`, `(1,0)` and `(0,1)`:
///
/// `V(x₁,x₂) = (x₁²+x₂²)((x₁−1)²+x₂²)(x₁²+(x₂−1)²)`.
///
/// Written as a product of three quadratic factors `A B C`, each with
/// Hessian `2 I`, so third derivatives only come from products of factor
/// gradients.
#[derive(Debug, Clone, Copy, Default)]
pub struct TripleWell;

impl TripleWell {
    pub fn saddle_low() -> [f64; 2] {
        let r = std::f64::consts::SQRT_2;
        [(2.0 + r) / 6.0, (2.0 - r) / 6.0]
    }

    pub fn saddle_high() -> [f64; 2] {
        let [a, b] = Self::saddle_low();
        [b, a]
    }

    #[inline]
    fn factors(x: &[f64]) -> ([f64; 3], [[f64; 2]; 3]) {
        let (x1, x2) = (x[0], x[1]);
        let a = x1 * x1 + x2 * x2;
        let b = (x1 - 1.0) * (x1 - 1.0) + x2 * x2;
        let c = x1 * x1 + (x2 - 1.0) * (x2 - 1.0);
        let da = [2.0 * x1, 2.0 * x2];
        let db = [2.0 * (x1 - 1.0), 2.0 * x2];
        let dc = [2.0 * x1, 2.0 * (x2 - 1.0)];
        ([a, b, c], [da, db, dc])
    }
}

fn dot2(u: [f64; 2], v: [f64; 2]) -> f64 {
    u[0] * v[0] + u[1] * v[1]
}

impl Potential for TripleWell {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "triple-well"
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ([a, b, c], _) = Self::factors(x);
        // b and c trade places under the swap; grouping them keeps the value
        // bitwise symmetric.
        a * (b * c)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let ([a, b, c], [da, db, dc]) = Self::factors(x);
        for i in 0..2 {
            grad[i] = b * c * da[i] + a * c * db[i] + a * b * dc[i];
        }
    }

    fn hessian(&self, x: &[f64], hess: &mut [f64]) {
        let ([a, b, c], [da, db, dc]) = Self::factors(x);
        let diag = 2.0 * (b * c + a * c + a * b);
        for i in 0..2 {
            for j in 0..2 {
                let cross = c * (da[i] * db[j] + db[i] * da[j])
                    + b * (da[i] * dc[j] + dc[i] * da[j])
                    + a * (db[i] * dc[j] + dc[i] * db[j]);
                hess[i * 2 + j] = cross + if i == j { diag } else { 0.0 };
            }
        }
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        let mut h = [0.0; 4];
        self.hessian(x, &mut h);
        h[0] + h[3]
    }

    fn laplacian_gradient(&self, x: &[f64], out: &mut [f64]) {
        let ([a, b, c], [da, db, dc]) = Self::factors(x);
        let (ab, ac, bc) = (dot2(da, db), dot2(da, dc), dot2(db, dc));
        // ΔV = 4(AB + BC + CA) + 2(C ∇A·∇B + B ∇A·∇C + A ∇B·∇C), and
        // ∇(∇P·∇Q) = 2(∇P + ∇Q) for the quadratic factors.
        for i in 0..2 {
            let first = 4.0 * (a * db[i] + b * da[i] + b * dc[i] + c * db[i] + c * da[i] + a * dc[i]);
            let second = 2.0
                * (dc[i] * ab
                    + 2.0 * c * (da[i] + db[i])
                    + db[i] * ac
                    + 2.0 * b * (da[i] + dc[i])
                    + da[i] * bc
                    + 2.0 * a * (db[i] + dc[i]));
            out[i] = first + second;
        }
    }

    fn jet(&self, x: &[f64], jet: &mut Jet) {
        jet.value = self.value(x);
        self.gradient(x, &mut jet.gradient);
        self.hessian(x, &mut jet.hessian);
        jet.laplacian = jet.hessian[0] + jet.hessian[3];
        self.laplacian_gradient(x, &mut jet.laplacian_gradient);
    }

    fn named_points(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![
            ("M0", vec![0.0, 0.0]),
            ("M1", vec![1.0, 0.0]),
            ("M2", vec![0.0, 1.0]),
            ("S1", Self::saddle_low().to_vec()),
            ("S2", Self::saddle_high().to_vec()),
        ]
    }
}

/// One-dimensional double well `V(x) = (x² − 1)² / 4` with minima at `±1`
/// and a maximum at `0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWell;

impl Potential for DoubleWell {
    fn dim(&self) -> usize {
        1
    }

    fn name(&self) -> &str {
        "double-well"
    }

    fn value(&self, x: &[f64]) -> f64 {
        let u = x[0] * x[0] - 1.0;
        0.25 * u * u
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad[0] = x[0] * (x[0] * x[0] - 1.0);
    }

    fn hessian(&self, x: &[f64], hess: &mut [f64]) {
        hess[0] = 3.0 * x[0] * x[0] - 1.0;
    }

    fn laplacian(&self, x: &[f64]) -> f64 {
        3.0 * x[0] * x[0] - 1.0
    }

    fn laplacian_gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 6.0 * x[0];
    }

    fn jet(&self, x: &[f64], jet: &mut Jet) {
        jet.value = self.value(x);
        self.gradient(x, &mut jet.gradient);
        jet.hessian[0] = 3.0 * x[0] * x[0] - 1.0;
        jet.laplacian = jet.hessian[0];
        jet.laplacian_gradient[0] = 6.0 * x[0];
    }

    fn named_points(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![("L", vec![-1.0]), ("O", vec![0.0]), ("R", vec![1.0])]
    }
}

/// `V(x) = |x|² / 2` in any dimension.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub dim: usize,
}

impl Quadratic {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        "quadratic"
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.copy_from_slice(x);
    }

    fn hessian(&self, _x: &[f64], hess: &mut [f64]) {
        let n = self.dim;
        hess.fill(0.0);
        for i in 0..n {
            hess[i * n + i] = 1.0;
        }
    }

    fn laplacian(&self, _x: &[f64]) -> f64 {
        self.dim as f64
    }

    fn laplacian_gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn named_points(&self) -> Vec<(&'static str, Vec<f64>)> {
        vec![("O", vec![0.0; self.dim])]
    }
}

/// `V(x₁, x₂) = x₁²`, degenerate along `x₂`. Not admissible.
#[derive(Debug, Clone, Copy, Default)]
pub struct Trough;

impl Potential for Trough {
    fn dim(&self) -> usize {
        2
    }

    fn name(&self) -> &str {
        "trough"
    }

    fn value(&self, x: &[f64]) -> f64 {
        x[0] * x[0]
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad[0] = 2.0 * x[0];
        grad[1] = 0.0;
    }

    fn hessian(&self, _x: &[f64], hess: &mut [f64]) {
        hess.copy_from_slice(&[2.0, 0.0, 0.0, 0.0]);
    }

    fn laplacian(&self, _x: &[f64]) -> f64 {
        2.0
    }

    fn laplacian_gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A user potential given by its value and gradient only; higher derivatives
/// come from finite differences.
pub struct FnPotential {
    name: String,
    dim: usize,
    value: Box<ValueFn>,
    gradient: Box<GradientFn>,
}

impl FnPotential {
    pub fn new<V, G>(name: impl Into<String>, dim: usize, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl Potential for FnPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.gradient)(x, grad)
    }
}

/// Looks up a built-in potential by its CLI name.
pub fn builtin(name: &str) -> Option<Box<dyn Potential>> {
    match name {
        "triple-well" => Some(Box::new(TripleWell)),
        "double-well" => Some(Box::new(DoubleWell)),
        "quadratic" => Some(Box::new(Quadratic::new(2))),
        "trough" => Some(Box::new(Trough)),
        _ => None,
    }
}

pub const BUILTIN_NAMES: &[&str] = &["triple-well", "double-well", "quadratic", "trough"];
