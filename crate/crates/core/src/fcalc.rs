//! Helffer–Sjöstrand functional calculus for the boundary operator family
//! `P(r) = −h²Δ|_{Γ_r}`, the exterior-mass functional and the `L(r)`/`Z(r)`
//! comparison argument.
//!
//! Scaled units `τ = t/(λh)` are used internally. The calculus is applied to
//! the compactly supported `g = θ·(1 − χ)` with `θ(τ) = step(τ + 2)`, so that
//! `f_λ(P) = χ(P/(λh)) = I − g(P)` whenever `P ≥ −λh`.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen, SymmetricTridiagonal};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::halfplane::{fourier_h, mode_of, BoundaryFunction};
use crate::models::ModelProblem;
use crate::smooth::{plateau, step, step_jet};
use crate::solver::{fd_symbol, BoundaryTrace, EigenMode};
use crate::stats::{loglog_fit, LinearFit};

/// The base profile `χ`: 0 below 1, 1 above 2.
pub fn chi(tau: f64) -> f64 {
    step(tau - 1.0)
}

/// `χ^{(k)}(τ)` for `k = 0..=order`.
pub fn chi_jet(tau: f64, order: usize) -> Vec<f64> {
    step_jet(tau - 1.0, order)
}

/// `f_λ(t) = χ(t/(λh))`.
pub fn f_lambda(t: f64, lambda: f64, h: f64) -> f64 {
    chi(t / (lambda * h))
}

// Jet of g = θ(1 − χ); θ ≡ 1 wherever χ ≠ 0, so the product splits at 0.
fn g_jet(x: f64, order: usize) -> Vec<f64> {
    if x < 0.0 {
        step_jet(x + 2.0, order)
    } else {
        let mut c = chi_jet(x, order);
        c[0] = 1.0 - c[0];
        for v in c.iter_mut().skip(1) {
            *v = -*v;
        }
        c
    }
}

fn psi(y: f64) -> f64 {
    1.0 - step(2.0 * y.abs() - 1.0)
}

fn psi_prime(y: f64) -> f64 {
    -2.0 * y.signum() * step_jet(2.0 * y.abs() - 1.0, 1)[1]
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

// (∂_x + i∂_y) of Σ_{k≤N} d_k (iy)^k/k! · ψ(y), with d_k = jet[k].
fn dbar_full(jet: &[f64], y: f64, order: usize) -> Complex64 {
    let iy = Complex64::new(0.0, y);
    let mut taylor = Complex64::new(0.0, 0.0);
    let mut p = Complex64::new(1.0, 0.0);
    for (k, d) in jet.iter().take(order + 1).enumerate() {
        taylor += p * (*d / factorial(k));
        p *= iy;
    }
    let lead = jet[order + 1] * iy.powu(order as u32) / factorial(order);
    lead * psi(y) + Complex64::new(0.0, 1.0) * taylor * psi_prime(y)
}

/// Quadrature resolution: `fine` cells per unit (scaled) on the patch around
/// the transition of `χ`, `coarse` cells per unit elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Quadrature {
    pub fine: usize,
    pub coarse: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { fine: 256, coarse: 64 }
    }
}

const PATCH_X: f64 = 0.125;
const PATCH_Y: f64 = 0.125;

/// One quadrature node in absolute units; only `Im z > 0` is stored and the
/// weight already carries the factor 2 of the conjugate partner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadNode {
    pub z: Complex64,
    pub weight: Complex64,
}

/// Almost analytic extension of `χ(·/(λh))` with its `∂̄`-sampling and the
/// quadrature nodes realizing the Helffer–Sjöstrand integral.
#[derive(Debug, Clone, Serialize)]
pub struct AlmostAnalyticExtension {
    pub order: usize,
    pub lambda: f64,
    pub h: f64,
    pub quadrature: Quadrature,
    /// Measured `C_N` in `|∂̄F| ≤ C_N (λh)^{−(N+1)} |Im z|^N`.
    pub c_n: f64,
    /// Fitted exponent of `|∂̄F|` against `|Im z|` near the real axis.
    pub decay_fit: LinearFit,
    /// `max |F(t) − χ(t/(λh))|` on real samples.
    pub real_axis_error: f64,
    /// `max |∂̄F|` on real samples.
    pub real_axis_dbar: f64,
    #[serde(skip)]
    pub nodes: Vec<QuadNode>,
}

impl AlmostAnalyticExtension {
    pub fn scale(&self) -> f64 {
        self.lambda * self.h
    }

    /// `F_λ(z) = ψ(Im z/(λh)) Σ_{k≤N} χ^{(k)}(Re z/(λh)) (i Im z/(λh))^k/k!`.
    pub fn value(&self, z: Complex64) -> Complex64 {
        let s = self.scale();
        let (x, y) = (z.re / s, z.im / s);
        let jet = chi_jet(x, self.order);
        let iy = Complex64::new(0.0, y);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut p = Complex64::new(1.0, 0.0);
        for (k, d) in jet.iter().enumerate() {
            acc += p * (*d / factorial(k));
            p *= iy;
        }
        acc * psi(y)
    }

    /// `∂̄F_λ = ½(∂_x + i∂_y)F_λ` in absolute units.
    pub fn dbar(&self, z: Complex64) -> Complex64 {
        let s = self.scale();
        let (x, y) = (z.re / s, z.im / s);
        dbar_full(&chi_jet(x, self.order + 1), y, self.order) * (0.5 / s)
    }

    /// Scalar Helffer–Sjöstrand value at real `t`, the quadrature applied to a 1×1 matrix.
    pub fn hs_scalar(&self, t: f64) -> f64 {
        let g: f64 = self.nodes.iter().map(|n| (n.weight / (Complex64::new(t, 0.0) - n.z)).re).sum();
        1.0 - g
    }
}

fn midpoints(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let d = (hi - lo) / n as f64;
    (0..n).map(move |i| lo + (i as f64 + 0.5) * d)
}

fn patch(x: f64, y: f64) -> f64 {
    plateau(x, 1.0, 2.0, PATCH_X) * plateau(y, -PATCH_Y, PATCH_Y, PATCH_Y)
}

// Nodes in scaled units for the extension of g, split by a smooth partition
// into a finely resolved patch around the transition and a coarse remainder.
fn scaled_nodes(order: usize, q: Quadrature) -> Vec<(f64, f64, Complex64)> {
    let mut out = Vec::new();
    let mut push = |x0: f64, x1: f64, nx: usize, y0: f64, y1: f64, ny: usize, inner: bool| {
        let da = (x1 - x0) / nx as f64 * (y1 - y0) / ny as f64;
        for x in midpoints(x0, x1, nx) {
            let jet = g_jet(x, order + 1);
            for y in midpoints(y0, y1, ny).filter(|y| *y > 0.0) {
                let rho = patch(x, y);
                let part = if inner { rho } else { 1.0 - rho };
                if part == 0.0 {
                    continue;
                }
                let w = dbar_full(&jet, y, order) * (part * da / (2.0 * PI));
                if w != Complex64::new(0.0, 0.0) {
                    out.push((x, y, w * 2.0));
                }
            }
        }
    };
    let fine = q.fine as f64;
    let coarse = q.coarse as f64;
    push(
        1.0 - PATCH_X,
        2.0 + PATCH_X,
        ((1.0 + 2.0 * PATCH_X) * fine).round() as usize,
        -2.0 * PATCH_Y,
        2.0 * PATCH_Y,
        (4.0 * PATCH_Y * fine / 2.0).round() as usize,
        true,
    );
    push(-2.0, 2.0 + PATCH_X, ((4.0 + PATCH_X) * coarse).round() as usize, -1.0, 1.0, 2 * q.coarse, false);
    out
}

/// Builds `F_λ` with the default quadrature.
pub fn almost_analytic_extension(lambda: f64, h: f64, order: usize) -> Result<AlmostAnalyticExtension> {
    almost_analytic_extension_with(lambda, h, order, Quadrature::default())
}

pub fn almost_analytic_extension_with(lambda: f64, h: f64, order: usize, quadrature: Quadrature) -> Result<AlmostAnalyticExtension> {
    if !(1..=3).contains(&order) {
        return Err(Error::param("N", "order must be 1, 2 or 3"));
    }
    if !(lambda > 0.0 && h > 0.0 && (lambda * h).is_finite()) {
        return Err(Error::param("lambda*h", "must be positive and finite"));
    }
    if quadrature.fine < 64 || quadrature.coarse < 16 || quadrature.fine % 8 != 0 || quadrature.coarse % 8 != 0 {
        return Err(Error::param("quadrature", "need fine ≥ 64, coarse ≥ 16, both multiples of 8"));
    }
    let s = lambda * h;
    let nodes = scaled_nodes(order, quadrature)
        .into_iter()
        .map(|(x, y, w)| QuadNode { z: Complex64::new(x * s, y * s), weight: w * s })
        .collect();
    let mut ext = AlmostAnalyticExtension {
        order,
        lambda,
        h,
        quadrature,
        c_n: 0.0,
        decay_fit: LinearFit { slope: f64::NAN, intercept: f64::NAN, residual: f64::NAN, samples: 0 },
        real_axis_error: 0.0,
        real_axis_dbar: 0.0,
        nodes,
    };

    // Sample ∂̄F on the rectangle [λh, 2λh] × i[−λh, λh].
    let m = 64;
    let mut c_n: f64 = 0.0;
    for x in midpoints(1.0, 2.0, m) {
        for y in midpoints(-1.0, 1.0, m) {
            let d = ext.dbar(Complex64::new(x * s, y * s)).norm();
            c_n = c_n.max(d * s.powi(order as i32 + 1) / (y * s).abs().powi(order as i32));
        }
    }
    ext.c_n = c_n;

    let mut real_err: f64 = 0.0;
    let mut real_dbar: f64 = 0.0;
    for i in 0..=400 {
        let t = -1.0 * s + 4.0 * s * i as f64 / 400.0;
        let z = Complex64::new(t, 0.0);
        real_err = real_err.max((ext.value(z) - f_lambda(t, lambda, h)).norm());
        real_dbar = real_dbar.max(ext.dbar(z).norm());
    }
    ext.real_axis_error = real_err;
    ext.real_axis_dbar = real_dbar;

    // Decay against |Im z| at a point where χ^{(N+1)} does not vanish.
    let x = 1.3 * s;
    let ys: Vec<f64> = (0..12).map(|i| s * 1e-3 * 10f64.powf(2.5 * i as f64 / 11.0)).collect();
    let ds: Vec<f64> = ys.iter().map(|y| ext.dbar(Complex64::new(x, *y)).norm()).collect();
    ext.decay_fit = loglog_fit(&ys, &ds);
    Ok(ext)
}

/// `f_λ(P) = U χ(Λ/(λh)) Uᵀ` by eigendecomposition.
pub fn spectral_f(p: &DMatrix<f64>, lambda: f64, h: f64) -> Result<DMatrix<f64>> {
    check_square_symmetric(p)?;
    let eig = SymmetricEigen::new(p.clone());
    let d = eig.eigenvalues.map(|v| f_lambda(v, lambda, h));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

fn check_square_symmetric(p: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() || p.nrows() == 0 {
        return Err(Error::param("P", "must be a non-empty square matrix"));
    }
    let scale = p.amax().max(1.0);
    for i in 0..p.nrows() {
        for j in 0..i {
            if (p[(i, j)] - p[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::param("P", "must be symmetric"));
            }
        }
    }
    Ok(())
}

// Number of eigenvalues of the tridiagonal (a, b) strictly below x.
fn sturm_below(a: &[f64], b: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..a.len() {
        let off = if i == 0 { 0.0 } else { b[i - 1] * b[i - 1] };
        q = a[i] - x - if i == 0 { 0.0 } else { off / q };
        if q == 0.0 {
            q = -1e-300;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

const CHUNK: usize = 128;

/// `g(T)` for a symmetric tridiagonal `T`, accumulated over the nodes with
/// resolvent entries from two-sided Schur recursions. Chunks are summed in a
/// fixed order so the result does not depend on the thread count.
fn hs_tridiagonal(a: &[f64], b: &[f64], nodes: &[QuadNode]) -> Result<DMatrix<f64>> {
    let n = a.len();
    let partials: Vec<Result<Vec<f64>>> = nodes
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n * n];
            let mut e = vec![Complex64::new(0.0, 0.0); n];
            let mut d = vec![Complex64::new(0.0, 0.0); n];
            let mut ratio = vec![Complex64::new(0.0, 0.0); n];
            for node in chunk {
                let z = node.z;
                e[n - 1] = a[n - 1] - z;
                for i in (0..n - 1).rev() {
                    e[i] = a[i] - z - b[i] * b[i] / e[i + 1];
                }
                d[0] = a[0] - z;
                for i in 1..n {
                    d[i] = a[i] - z - b[i - 1] * b[i - 1] / d[i - 1];
                }
                for j in 1..n {
                    ratio[j] = -b[j - 1] / e[j];
                }
                for i in 0..n {
                    let gii = 1.0 / (d[i] + e[i] - (a[i] - z));
                    if !gii.is_finite() {
                        return Err(Error::Numerical(format!("resolvent breakdown at z = {z}")));
                    }
                    let mut cg = node.weight * gii;
                    let row = &mut acc[i * n..(i + 1) * n];
                    row[i] += cg.re;
                    for j in i + 1..n {
                        cg *= ratio[j];
                        row[j] += cg.re;
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut g = DMatrix::zeros(n, n);
    for part in partials {
        let part = part?;
        for i in 0..n {
            for j in i..n {
                g[(i, j)] += part[i * n + j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    Ok(g)
}

/// `f_λ(P)` by the Helffer–Sjöstrand formula `(1/π)∬ ∂̄F(z)(P − z)^{−1} dL(z)`.
pub fn hs_apply(p: &DMatrix<f64>, ext: &AlmostAnalyticExtension) -> Result<DMatrix<f64>> {
    check_square_symmetric(p)?;
    let n = p.nrows();
    let (q, a, b) = if n == 1 {
        (DMatrix::identity(1, 1), vec![p[(0, 0)]], vec![])
    } else {
        let (q, diag, off) = SymmetricTridiagonal::new(p.clone()).unpack();
        (q, diag.iter().copied().collect(), off.iter().copied().collect::<Vec<f64>>())
    };
    // θ(P/(λh)) = I needs spec(P) ≥ −λh; half of that is kept as margin so
    // slightly shifted nonnegative operators remain admissible.
    if sturm_below(&a, &b, -0.5 * ext.scale()) > 0 {
        return Err(Error::Precondition("spectrum of P reaches below −λh/2".into()));
    }
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite tridiagonal reduction".into()));
    }
    let g = hs_tridiagonal(&a, &b, &ext.nodes)?;
    let f = DMatrix::identity(n, n) - g;
    let out = &q * f * q.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn symmetric_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone()).eigenvalues.amax()
}

/// Random symmetric `n×n` matrix with eigenvalues uniform in `[lo, hi]`.
pub fn random_symmetric(n: usize, lo: f64, hi: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| rng.gen_range(lo..=hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Discrete `P(r) = −h²Δ|_{Γ_r}` on `nt` tangential nodes.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryOperator {
    #[serde(skip)]
    pub matrix: DMatrix<f64>,
    pub r: f64,
    pub h: f64,
    pub length: f64,
    /// Induced metric factor `1/g_{x'x'}` on `Γ_r`.
    pub metric: f64,
    /// Closed-form eigenvalues in FFT slot order.
    pub eigenvalues: Vec<f64>,
}

// All shipped collars carry the flat ambient metric.
fn induced_metric(_model: &ModelProblem, _r: f64) -> f64 {
    1.0
}

pub fn boundary_operator(model: &ModelProblem, r: f64, h: f64, nt: usize) -> Result<BoundaryOperator> {
    let t = model
        .tangential
        .ok_or_else(|| Error::Unsupported("boundary operator needs a tangential circle".into()))?;
    if !t.periodic {
        return Err(Error::Unsupported("tangential axis must be periodic".into()));
    }
    if r.abs() > model.collar_width + 1e-12 || r < model.normal.lo || r > model.normal.hi {
        return Err(Error::OutsideDomain(vec![r]));
    }
    if nt < 4 {
        return Err(Error::param("nt", "need at least 4 tangential nodes"));
    }
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    let length = t.length();
    let metric = induced_metric(model, r);
    let dx = length / nt as f64;
    let c = metric * h * h / (dx * dx);
    let mut m = DMatrix::zeros(nt, nt);
    for i in 0..nt {
        m[(i, i)] = 2.0 * c;
        m[(i, (i + 1) % nt)] -= c;
        m[(i, (i + nt - 1) % nt)] -= c;
    }
    let eigenvalues = (0..nt).map(|p| metric * h * h * fd_symbol(mode_of(p, nt), nt, length)).collect();
    Ok(BoundaryOperator { matrix: m, r, h, length, metric, eigenvalues })
}

/// One-parameter operator families `r ↦ P(r)`.
#[derive(Debug, Clone)]
pub enum OperatorFamily {
    /// The geometric family of a model's collar.
    Model { model: ModelProblem, h: f64, nt: usize },
    /// `P(r) = (1 + r)P₀`.
    Scaled(DMatrix<f64>),
    /// `P(r) = P₀ + rI`.
    Shifted(DMatrix<f64>),
}

impl OperatorFamily {
    /// Collars that only extend to `r ≥ 0` need forward stencils.
    pub fn one_sided(&self) -> bool {
        matches!(self, OperatorFamily::Model { model, .. } if !model.two_sided())
    }

    pub fn at(&self, r: f64) -> Result<DMatrix<f64>> {
        match self {
            OperatorFamily::Model { model, h, nt } => Ok(boundary_operator(model, r, *h, *nt)?.matrix),
            OperatorFamily::Scaled(p0) => Ok(p0 * (1.0 + r)),
            OperatorFamily::Shifted(p0) => Ok(p0 + DMatrix::identity(p0.nrows(), p0.ncols()) * r),
        }
    }

    /// `‖(d/dr)^k f_λ(P(r))‖` at `r = 0` from the eigenvalue branches; the
    /// families are commuting, so the derivative is diagonal in one basis.
    pub fn spectral_derivative_norm(&self, lambda: f64, h: f64, k: usize) -> Result<f64> {
        let s = lambda * h;
        match self {
            OperatorFamily::Model { model, h: hp, nt } => {
                let d = 1e-3 * model.collar_width.max(1e-9);
                let eig = |r: f64| boundary_operator(model, r, *hp, *nt).map(|b| b.eigenvalues);
                let shift = if self.one_sided() { d } else { 0.0 };
                let (m, z, p) = (eig(shift - d)?, eig(shift)?, eig(shift + d)?);
                let base = eig(0.0)?;
                let mut best: f64 = 0.0;
                for i in 0..z.len() {
                    let (fm, f0, fp) = (chi(m[i] / s), chi(z[i] / s), chi(p[i] / s));
                    let v = match k {
                        0 => chi(base[i] / s),
                        // Centered at `shift`; first order in d when one-sided.
                        1 => (fp - fm) / (2.0 * d),
                        2 => (fp - 2.0 * f0 + fm) / (d * d),
                        _ => return Err(Error::param("k", "must be 0, 1 or 2")),
                    };
                    best = best.max(v.abs());
                }
                Ok(best)
            }
            OperatorFamily::Scaled(p0) | OperatorFamily::Shifted(p0) => {
                let scaled = matches!(self, OperatorFamily::Scaled(_));
                let eig = SymmetricEigen::new(p0.clone()).eigenvalues;
                let mut best: f64 = 0.0;
                for mu in eig.iter() {
                    let jet = chi_jet(mu / s, 2);
                    let dmu = if scaled { *mu } else { 1.0 };
                    let v = match k {
                        0 => jet[0],
                        1 => jet[1] * dmu / s,
                        2 => jet[2] * (dmu / s).powi(2),
                        _ => return Err(Error::param("k", "must be 0, 1 or 2")),
                    };
                    best = best.max(v.abs());
                }
                Ok(best)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeNorm {
    pub k: usize,
    pub lambda: f64,
    pub h: f64,
    /// Operator norm of the five-point finite difference of `hs_apply(P(r))`.
    pub norm: f64,
    /// The same norm from the eigenvalue branches.
    pub oracle: f64,
    /// `norm · (λh)^k`.
    pub constant: f64,
}

/// `‖(d/dr)^k f_λ(P(r))|_{r=0}‖` by five-point stencils of step `delta`.
pub fn family_derivative_norm(
    family: &OperatorFamily,
    lambda: f64,
    h: f64,
    k: usize,
    quadrature: Quadrature,
    delta: f64,
) -> Result<DerivativeNorm> {
    if k > 2 {
        return Err(Error::param("k", "must be 0, 1 or 2"));
    }
    if !(delta >= 1e-6 && delta <= 0.1) {
        return Err(Error::param("delta", "step must lie in [1e-6, 0.1]"));
    }
    let ext = almost_analytic_extension_with(lambda, h, 2, quadrature)?;
    let f = |r: f64| -> Result<DMatrix<f64>> { hs_apply(&family.at(r)?, &ext) };
    let d = match (k, family.one_sided()) {
        (0, _) => f(0.0)?,
        (1, false) => (f(-2.0 * delta)? - f(-delta)? * 8.0 + f(delta)? * 8.0 - f(2.0 * delta)?) / (12.0 * delta),
        (_, false) => {
            (f(-2.0 * delta)? * -1.0 + f(-delta)? * 16.0 - f(0.0)? * 30.0 + f(delta)? * 16.0 - f(2.0 * delta)?)
                / (12.0 * delta * delta)
        }
        (1, true) => {
            (f(0.0)? * -25.0 + f(delta)? * 48.0 - f(2.0 * delta)? * 36.0 + f(3.0 * delta)? * 16.0
                - f(4.0 * delta)? * 3.0)
                / (12.0 * delta)
        }
        (_, true) => {
            (f(0.0)? * 35.0 - f(delta)? * 104.0 + f(2.0 * delta)? * 114.0 - f(3.0 * delta)? * 56.0
                + f(4.0 * delta)? * 11.0)
                / (12.0 * delta * delta)
        }
    };
    let norm = symmetric_norm(&d);
    Ok(DerivativeNorm {
        k,
        lambda,
        h,
        norm,
        oracle: family.spectral_derivative_norm(lambda, h, k)?,
        constant: norm * (lambda * h).powi(k as i32),
    })
}

/// λ-scaling of one derivative order.
#[derive(Debug, Clone, Serialize)]
pub struct DerivativeScaling {
    pub k: usize,
    pub entries: Vec<DerivativeNorm>,
    /// Fitted λ-exponent; `None` when every norm vanishes.
    pub exponent: Option<f64>,
    pub passed: bool,
}

/// Exponent tolerance on the fitted λ-power.
pub const EXPONENT_TOLERANCE: f64 = 0.3;

pub fn derivative_scaling(
    family: &OperatorFamily,
    lambdas: &[f64],
    h: f64,
    k: usize,
    quadrature: Quadrature,
    delta: f64,
) -> Result<DerivativeScaling> {
    let entries = lambdas
        .iter()
        .map(|l| family_derivative_norm(family, *l, h, k, quadrature, delta))
        .collect::<Result<Vec<_>>>()?;
    let zero = entries.iter().all(|e| e.norm <= 1e-12);
    let exponent = if zero || entries.iter().any(|e| e.norm <= 0.0) {
        None
    } else {
        let x: Vec<f64> = entries.iter().map(|e| e.lambda).collect();
        let y: Vec<f64> = entries.iter().map(|e| e.norm).collect();
        Some(loglog_fit(&x, &y).slope)
    };
    // A family whose derivative vanishes identically satisfies every bound.
    let passed = match exponent {
        Some(e) => (e + k as f64).abs() <= EXPONENT_TOLERANCE,
        None => zero,
    };
    Ok(DerivativeScaling { k, entries, exponent, passed })
}

/// `⟨f_λ(P)u, u⟩_Γ` for a boundary trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExteriorMass {
    pub lambda: f64,
    pub h: f64,
    pub mass: f64,
    pub norm_sq: f64,
    /// Cross-check through `hs_apply` when requested.
    pub hs_mass: Option<f64>,
}

impl ExteriorMass {
    pub fn fraction(&self) -> f64 {
        self.mass / self.norm_sq
    }

    /// `λ·mass/‖u‖²`.
    pub fn scaled(&self) -> f64 {
        self.lambda * self.fraction()
    }
}

// Spectral mass of uniform samples on a circle of the given length.
fn spectral_mass(values: &[Complex64], length: f64, h: f64, lambda: f64, op: &BoundaryOperator) -> Result<(f64, f64)> {
    let n = values.len();
    let u = BoundaryFunction::new(values.to_vec(), length, h)?;
    let spec = fourier_h(&u);
    // dx Σ|u_j|² = (1/L) Σ |F_k|².
    let mut mass = 0.0;
    let mut total = 0.0;
    for p in 0..n {
        let w = spec.coeffs[p].norm_sqr() / length;
        total += w;
        mass += f_lambda(op.eigenvalues[p], lambda, h) * w;
    }
    Ok((mass, total))
}

/// Exterior mass of a trace on Γ, spectral path with optional HS cross-check.
pub fn exterior_mass(
    trace: &BoundaryTrace,
    model: &ModelProblem,
    lambda: f64,
    h: f64,
    cross_check: Option<Quadrature>,
) -> Result<ExteriorMass> {
    if trace.rho().abs() > 1e-12 {
        return Err(Error::Precondition(format!("trace lies on Γ_ρ with ρ = {}", trace.rho())));
    }
    let nt = trace.values.len();
    let op = boundary_operator(model, 0.0, h, nt)?;
    let (mass, norm_sq) = spectral_mass(&trace.values, op.length, h, lambda, &op)?;
    if norm_sq == 0.0 {
        return Err(Error::Precondition("zero trace".into()));
    }
    let hs_mass = match cross_check {
        None => None,
        Some(q) => {
            let ext = almost_analytic_extension_with(lambda, h, 2, q)?;
            let f = hs_apply(&op.matrix, &ext)?;
            let dx = op.length / nt as f64;
            let re = nalgebra::DVector::from_iterator(nt, trace.values.iter().map(|v| v.re));
            let im = nalgebra::DVector::from_iterator(nt, trace.values.iter().map(|v| v.im));
            Some(dx * (re.dot(&(&f * &re)) + im.dot(&(&f * &im))))
        }
    };
    Ok(ExteriorMass { lambda, h, mass: mass.clamp(0.0, norm_sq), norm_sq, hs_mass })
}

/// The comparison quantities on `r ∈ [0, λh]`.
#[derive(Debug, Clone, Serialize)]
pub struct MassProfile {
    pub lambda: f64,
    pub h: f64,
    pub r: Vec<f64>,
    /// `L(r) = h²⟨f_λ(P(r))u|_{Γ_r}, u|_{Γ_r}⟩`.
    pub l: Vec<f64>,
    pub l_dot0: f64,
    pub z: Vec<f64>,
    /// Fourth-order Runge–Kutta integration of `Z̈ = T h^{−2} Z`.
    pub z_ode: Vec<f64>,
    pub t: f64,
    pub c: f64,
    /// Derivative constant of the family (`‖d/dr f_λ(P)‖·λh`).
    pub c_family: f64,
    /// Constant forced by the measured `L̇(0)`.
    pub c_slope: f64,
    pub norm_sq: f64,
    /// `E − E(h)`.
    pub energy_defect: f64,
    pub neumann_ratio: f64,
    pub verdict: MassVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassVerdict {
    /// `L(0) ≤ Cλ^{−1}h²‖u‖²_Γ`.
    pub threshold_holds: bool,
    /// `∫₀^{λh} L dr ≤ λh³‖u‖²_Γ`.
    pub integral_holds: bool,
    pub integral: f64,
    pub integral_bound: f64,
    /// `L(r) ≥ Z(r)` on the grid.
    pub comparison_holds: bool,
    /// `max |Z − Z_ode| / max |Z|`.
    pub ode_agreement: f64,
}

impl MassProfile {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let e = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["r", "L", "Z"]).map_err(e)?;
        for i in 0..self.r.len() {
            w.write_record(&[self.r[i].to_string(), self.l[i].to_string(), self.z[i].to_string()]).map_err(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Z(r) = L₀ cosh(√T r/h) − (C/√T) λ^{−1}h²‖u‖² sinh(√T r/h)`.
pub fn comparison_z(r: f64, l0: f64, t: f64, c: f64, lambda: f64, h: f64, norm_sq: f64) -> f64 {
    let w = t.sqrt() / h;
    l0 * (w * r).cosh() - c / t.sqrt() / lambda * h * h * norm_sq * (w * r).sinh()
}

/// Classical RK4 for `Z̈ = ω²Z` sampled at `rs` (increasing, starting at 0).
pub fn integrate_z(rs: &[f64], z0: f64, zdot0: f64, omega2: f64, substeps: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rs.len());
    let (mut z, mut v) = (z0, zdot0);
    let mut r = 0.0;
    for &target in rs {
        let span = target - r;
        if span > 0.0 {
            let dt = span / substeps as f64;
            for _ in 0..substeps {
                let f = |z: f64, v: f64| (v, omega2 * z);
                let k1 = f(z, v);
                let k2 = f(z + 0.5 * dt * k1.0, v + 0.5 * dt * k1.1);
                let k3 = f(z + 0.5 * dt * k2.0, v + 0.5 * dt * k2.1);
                let k4 = f(z + dt * k3.0, v + dt * k3.1);
                z += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            }
            r = target;
        }
        out.push(z);
    }
    out
}

/// Neumann-data tolerance relative to the trace norm.
pub const NEUMANN_TOLERANCE: f64 = 1e-8;

/// `L(r)` of an assembled separable mode against the closed-form `Z(r)`.
pub fn mass_profile_comparison(mode: &EigenMode, model: &ModelProblem, lambda: f64, h: f64) -> Result<MassProfile> {
    let field = mode.field.as_ref().ok_or_else(|| Error::Precondition("mode has no assembled field".into()))?;
    let tang = field.tangential.ok_or_else(|| Error::Precondition("mode has no tangential direction".into()))?;
    let nt = tang.n;
    let ax = field.normal;
    let j0f = -ax.lo / ax.step;
    let j0 = j0f.round() as usize;
    if (j0f - j0 as f64).abs() > 1e-9 || j0 == 0 || j0 + 1 >= ax.n {
        return Err(Error::Precondition("Γ must be an interior normal node".into()));
    }
    let row = |j: usize| &field.values[j * nt..(j + 1) * nt];
    let dx = tang.step;
    let norm_sq: f64 = dx * row(j0).iter().map(|v| v.norm_sqr()).sum::<f64>();
    if norm_sq == 0.0 {
        return Err(Error::Precondition("zero trace on Γ".into()));
    }
    let dn: f64 = dx
        * row(j0 + 1)
            .iter()
            .zip(row(j0 - 1))
            .map(|(p, m)| ((p - m) / (2.0 * ax.step)).norm_sqr())
            .sum::<f64>();
    let neumann_ratio = dn.sqrt() / norm_sq.sqrt();
    if neumann_ratio > NEUMANN_TOLERANCE {
        return Err(Error::Precondition(format!("Neumann data on Γ is {neumann_ratio:.2e} of the trace")));
    }
    let s = lambda * h;
    let steps = (s / ax.step).floor() as usize;
    if steps < 2 || j0 + steps >= ax.n {
        return Err(Error::Precondition("normal grid does not resolve [0, λh]".into()));
    }
    let mut r = Vec::with_capacity(steps + 1);
    let mut l = Vec::with_capacity(steps + 1);
    for m in 0..=steps {
        let rm = m as f64 * ax.step;
        let op = boundary_operator(model, rm, h, nt)?;
        let (mass, _) = spectral_mass(row(j0 + m), op.length, h, lambda, &op)?;
        r.push(rm);
        l.push(h * h * mass);
    }
    let l_dot0 = (-3.0 * l[0] + 4.0 * l[1] - l[2]) / (2.0 * ax.step);

    // T: bottom of P + V − E(h) on the eigenvectors that f_λ sees at r = 0.
    let op0 = boundary_operator(model, 0.0, h, nt)?;
    let v_floor = (0..nt)
        .map(|i| model.excess(tang.node(i), 0.0) + model.energy - mode.energy)
        .fold(f64::INFINITY, f64::min);
    let p_floor = op0
        .eigenvalues
        .iter()
        .filter(|mu| f_lambda(**mu, lambda, h) > 1e-6)
        .fold(f64::INFINITY, |a, b| a.min(*b));
    if !p_floor.is_finite() {
        return Err(Error::Precondition("f_λ(P) vanishes on the whole grid spectrum".into()));
    }
    let t = p_floor + v_floor;
    if !(t > 0.0) {
        return Err(Error::Precondition(format!("T = {t} is not positive")));
    }
    let family = OperatorFamily::Model { model: model.clone(), h, nt };
    let c_family = family.spectral_derivative_norm(lambda, h, 1)? * s;
    let c_slope = (-l_dot0).max(0.0) * lambda / (h * norm_sq);
    let c = c_family.max(c_slope);

    let z: Vec<f64> = r.iter().map(|rv| comparison_z(*rv, l[0], t, c, lambda, h, norm_sq)).collect();
    let zdot0 = -c / lambda * h * norm_sq;
    let z_ode = integrate_z(&r, l[0], zdot0, t / (h * h), 400);
    let zmax = z.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let ode_agreement = if zmax == 0.0 {
        z_ode.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    } else {
        z.iter().zip(&z_ode).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / zmax
    };
    let integral: f64 = r.windows(2).zip(l.windows(2)).map(|(rr, ll)| 0.5 * (rr[1] - rr[0]) * (ll[0] + ll[1])).sum();
    let integral_bound = s * h * h * norm_sq;
    let tol = 1e-12 * (1.0 + l[0].abs());
    let verdict = MassVerdict {
        threshold_holds: l[0] <= c / lambda * h * h * norm_sq + tol,
        integral_holds: integral <= integral_bound,
        integral,
        integral_bound,
        comparison_holds: l.iter().zip(&z).all(|(a, b)| *a >= *b - tol),
        ode_agreement,
    };
    Ok(MassProfile {
        lambda,
        h,
        r,
        l,
        l_dot0,
        z,
        z_ode,
        t,
        c,
        c_family,
        c_slope,
        norm_sq,
        energy_defect: model.energy - mode.energy,
        neumann_ratio,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_model;
    use crate::solver::{assemble_separable_mode, solve_transverse_modes, trace_at};
    use crate::agmon::LevelSet;
    use std::collections::BTreeMap;

    fn cylinder() -> ModelProblem {
        make_model("halfplane-unit", &BTreeMap::new()).unwrap()
    }

    #[test]
    fn extension_is_exact_on_the_axis() {
        let ext = almost_analytic_extension(4.0, 0.05, 2).unwrap();
        assert!(ext.real_axis_error <= 1e-10, "{}", ext.real_axis_error);
        assert!(ext.real_axis_dbar <= 1e-14);
        assert!(ext.c_n.is_finite() && ext.c_n > 0.0);
    }

    #[test]
    fn dbar_vanishes_off_the_transition_near_the_axis() {
        let ext = almost_analytic_extension(8.0, 0.02, 2).unwrap();
        let s = ext.scale();
        for &x in &[-0.5, 0.2, 0.99, 2.01, 3.0] {
            for &y in &[-0.4, -0.1, 0.05, 0.3, 0.49] {
                assert_eq!(ext.dbar(Complex64::new(x * s, y * s)).norm(), 0.0, "x={x} y={y}");
            }
        }
    }

    #[test]
    fn dbar_decay_exponent_matches_order() {
        for n in 1..=3 {
            let ext = almost_analytic_extension(4.0, 0.1, n).unwrap();
            assert!(ext.decay_fit.slope >= n as f64 - 0.2, "N={n}: {}", ext.decay_fit.slope);
        }
    }

    #[test]
    fn dbar_matches_finite_differences() {
        let ext = almost_analytic_extension(2.0, 0.5, 2).unwrap();
        let eps = 1e-6;
        for &(x, y) in &[(1.3, 0.2), (1.7, -0.3), (1.5, 0.7), (2.4, 0.8)] {
            let z = Complex64::new(x, y);
            let fx = (ext.value(z + eps) - ext.value(z - eps)) / (2.0 * eps);
            let fy = (ext.value(z + Complex64::new(0.0, eps)) - ext.value(z - Complex64::new(0.0, eps))) / (2.0 * eps);
            let fd = 0.5 * (fx + Complex64::new(0.0, 1.0) * fy);
            assert!((fd - ext.dbar(z)).norm() < 1e-6, "{fd} vs {}", ext.dbar(z));
        }
    }

    #[test]
    fn order_out_of_range_rejected() {
        assert!(almost_analytic_extension(4.0, 0.1, 0).is_err());
        assert!(almost_analytic_extension(4.0, 0.1, 4).is_err());
        assert!(almost_analytic_extension_with(4.0, 0.1, 2, Quadrature { fine: 16, coarse: 8 }).is_err());
    }

    #[test]
    fn scalar_formula_reproduces_profile() {
        let ext = almost_analytic_extension(1.0, 1.0, 2).unwrap();
        for i in 0..=80 {
            let t = 4.0 * i as f64 / 80.0;
            assert!((ext.hs_scalar(t) - chi(t)).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn zero_and_large_multiples_of_identity() {
        let ext = almost_analytic_extension(4.0, 0.05, 2).unwrap();
        let z = hs_apply(&DMatrix::zeros(6, 6), &ext).unwrap();
        assert!(z.amax() < 1e-6);
        let big = hs_apply(&(DMatrix::identity(6, 6) * 0.45), &ext).unwrap();
        assert!((big - DMatrix::identity(6, 6)).amax() < 1e-6);
    }

    #[test]
    fn matches_spectral_oracle_on_random_matrix() {
        let (lambda, h) = (8.0, 0.025);
        let ext = almost_analytic_extension(lambda, h, 2).unwrap();
        let p = random_symmetric(16, 0.0, 4.0 * lambda * h, 11);
        let hs = hs_apply(&p, &ext).unwrap();
        let sp = spectral_f(&p, lambda, h).unwrap();
        assert!(symmetric_norm(&(&hs - &sp)) <= 1e-6);
        assert!((&hs - hs.transpose()).amax() == 0.0);
        let eig = SymmetricEigen::new(hs).eigenvalues;
        assert!(eig.min() >= -1e-6 && eig.max() <= 1.0 + 1e-6);
    }

    #[test]
    fn indefinite_input_rejected() {
        let ext = almost_analytic_extension(4.0, 0.05, 2).unwrap();
        let mut p = DMatrix::identity(3, 3);
        p[(1, 1)] = -0.5;
        assert!(matches!(hs_apply(&p, &ext), Err(Error::Precondition(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(hs_apply(&asym, &ext).is_err());
    }

    #[test]
    fn boundary_operator_diagonalizes_by_fourier() {
        let m = cylinder();
        let h = 0.1;
        let op = boundary_operator(&m, 0.0, h, 64).unwrap();
        let eig = SymmetricEigen::new(op.matrix.clone()).eigenvalues;
        let mut a: Vec<f64> = eig.iter().copied().collect();
        let mut b = op.eigenvalues.clone();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let ones = nalgebra::DVector::from_element(64, 1.0);
        assert!((&op.matrix * ones).amax() < 1e-12);
    }

    #[test]
    fn boundary_eigenvalues_refine_to_continuum() {
        let m = cylinder();
        let h = 0.1;
        let coarse = boundary_operator(&m, 0.0, h, 64).unwrap();
        let fine = boundary_operator(&m, 0.0, h, 128).unwrap();
        for k in 1..=8usize {
            let exact = (h * k as f64).powi(2);
            let ec = (coarse.eigenvalues[k] - exact).abs();
            let ef = (fine.eigenvalues[k] - exact).abs();
            assert!(ef < ec && (ec / ef - 4.0).abs() < 0.1, "k={k}: {ec} {ef}");
        }
    }

    #[test]
    fn boundary_operator_rejects_bad_input() {
        let m = cylinder();
        assert!(matches!(boundary_operator(&m, m.collar_width + 1.0, 0.1, 32), Err(Error::OutsideDomain(_))));
        let bar = make_model("barrier-1d", &BTreeMap::new()).unwrap();
        assert!(boundary_operator(&bar, 0.0, 0.1, 32).is_err());
    }

    #[test]
    fn flat_family_has_zero_derivatives() {
        let fam = OperatorFamily::Model { model: cylinder(), h: 0.1, nt: 32 };
        let q = Quadrature { fine: 128, coarse: 32 };
        for k in 1..=2 {
            let d = family_derivative_norm(&fam, 4.0, 0.1, k, q, 1e-2).unwrap();
            assert!(d.norm <= 1e-9, "k={k}: {}", d.norm);
            assert_eq!(d.oracle, 0.0);
        }
        let d0 = family_derivative_norm(&fam, 4.0, 0.1, 0, q, 1e-2).unwrap();
        assert!(d0.norm <= 1.0 + 1e-6);
    }

    #[test]
    fn scaled_family_first_derivative_matches_oracle() {
        let p0 = random_symmetric(24, 0.0, 1.6, 5);
        let fam = OperatorFamily::Scaled(p0);
        let d = family_derivative_norm(&fam, 4.0, 0.1, 1, Quadrature::default(), 1e-2).unwrap();
        assert!((d.norm - d.oracle).abs() <= 1e-4 * (1.0 + d.oracle), "{} vs {}", d.norm, d.oracle);
    }

    #[test]
    fn derivative_step_validated() {
        let fam = OperatorFamily::Shifted(DMatrix::identity(2, 2));
        assert!(family_derivative_norm(&fam, 4.0, 0.1, 1, Quadrature::default(), 1e-9).is_err());
        assert!(family_derivative_norm(&fam, 4.0, 0.1, 3, Quadrature::default(), 1e-2).is_err());
    }

    fn flat_trace(values: Vec<Complex64>) -> BoundaryTrace {
        let m = cylinder();
        let level = LevelSet::separable(&m, 0.0, values.len()).unwrap();
        BoundaryTrace::new(level, values)
    }

    #[test]
    fn exterior_mass_of_constant_and_high_mode() {
        let m = cylinder();
        let (lambda, h) = (4.0, 0.05);
        let c = flat_trace(vec![Complex64::new(1.0, 0.0); 64]);
        assert_eq!(exterior_mass(&c, &m, lambda, h, None).unwrap().mass, 0.0);
        // h²k² = 0.64 ≥ 2λh = 0.4 for k = 16 (FD symbol slightly below).
        let u = BoundaryFunction::single_mode(64, m.tangential_length(), h, 16).unwrap();
        let t = flat_trace(u.values().to_vec());
        let e = exterior_mass(&t, &m, lambda, h, Some(Quadrature::default())).unwrap();
        assert!((e.fraction() - 1.0).abs() < 1e-12);
        assert!((e.hs_mass.unwrap() - e.mass).abs() < 1e-6 * e.norm_sq);
    }

    #[test]
    fn exterior_mass_rejects_zero_trace() {
        let m = cylinder();
        let z = flat_trace(vec![Complex64::new(0.0, 0.0); 32]);
        assert!(exterior_mass(&z, &m, 4.0, 0.05, None).is_err());
    }

    #[test]
    fn closed_form_z_matches_rk4() {
        let (l0, t, c, lambda, h, n2) = (0.3, 1.7, 0.8, 8.0, 0.02, 2.0);
        let rs: Vec<f64> = (0..=20).map(|i| lambda * h * i as f64 / 20.0).collect();
        let zdot0 = -c / lambda * h * n2;
        let ode = integrate_z(&rs, l0, zdot0, t / (h * h), 400);
        for (r, zo) in rs.iter().zip(&ode) {
            let z = comparison_z(*r, l0, t, c, lambda, h, n2);
            assert!((z - zo).abs() <= 1e-8 * z.abs().max(1.0), "r={r}");
        }
        // L(0) = 0 leaves the pure sinh branch.
        let r = 0.05;
        let z = comparison_z(r, 0.0, t, c, lambda, h, n2);
        let w = t.sqrt() / h;
        assert!((z + c / t.sqrt() / lambda * h * h * n2 * (w * r).sinh()).abs() < 1e-15);
    }

    fn torus_mode(h: f64, k: i64, nodes: usize) -> (ModelProblem, EigenMode) {
        let m = make_model("separable-torus", &BTreeMap::new()).unwrap();
        let modes = solve_transverse_modes(&m, h, m.energy, 6, nodes).unwrap();
        let even = modes.into_iter().find(|v| v.odd_part_norm() <= 1e-8).unwrap();
        let mode = assemble_separable_mode(&even, k, &m, 128).unwrap();
        (m, mode)
    }

    #[test]
    fn mass_profile_on_even_mode() {
        let h = 0.05;
        let (m, mode) = torus_mode(h, 0, 512);
        let p = mass_profile_comparison(&mode, &m, 4.0, h).unwrap();
        assert!(p.l.iter().all(|v| *v == 0.0));
        assert!(p.verdict.threshold_holds);
        assert!(p.t > 0.0);
        assert!(p.r.windows(2).all(|w| w[1] > w[0]));

        let (m, mode) = torus_mode(h, 12, 512);
        let p = mass_profile_comparison(&mode, &m, 4.0, h).unwrap();
        assert!(p.l[0] > 0.0);
        assert!(p.verdict.comparison_holds);
        assert!(p.verdict.ode_agreement <= 1e-8);
    }

    #[test]
    fn spectral_trace_mass_agrees_with_trace_at() {
        let h = 0.05;
        let (m, mode) = torus_mode(h, 3, 512);
        let level = LevelSet::separable(&m, 0.0, 128).unwrap();
        let tr = trace_at(mode.field.as_ref().unwrap(), &level).unwrap();
        let e = exterior_mass(&tr, &m, 4.0, h, None).unwrap();
        // h²k² = 0.0225 < λh = 0.2: outside the support.
        assert!(e.mass <= 1e-20 * e.norm_sq);
        assert!(e.norm_sq > 0.0);
    }
}
