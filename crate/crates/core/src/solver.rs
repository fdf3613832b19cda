//! Discrete ground truth: transverse eigenproblems, separable eigenmodes,
//! Poisson boundary-value solves, traces on Γ_ρ, the Agmon gauge and decay
//! fits. All operators are second-order symmetric finite differences.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::agmon::{agmon_profile, DistanceField, GridAxis, LevelSet};
use crate::error::{Error, Result};
use crate::halfplane::BoundaryFunction;
use crate::models::{Axis, ModelProblem};
use crate::stats::{linear_fit, LinearFit};

/// Smallest admissible ratio `h / Δx`.
pub const RESOLVABILITY: f64 = 1.5;
pub const MIN_TRANSVERSE_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parity {
    Even,
    Odd,
}

/// A sampled field on `tangential × normal` nodes, `values[j * nt + i]`.
#[derive(Debug, Clone, Serialize)]
pub struct Field2D {
    pub tangential: Option<GridAxis>,
    pub normal: GridAxis,
    pub normal_periodic: bool,
    pub values: Vec<Complex64>,
    pub h: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenMode {
    pub energy: f64,
    pub h: f64,
    /// Tangential Fourier index once assembled.
    pub k: Option<i64>,
    pub parity: Option<Parity>,
    pub normal: GridAxis,
    pub periodic: bool,
    /// Transverse profile `v(x_n)`, unit discrete L² norm.
    pub profile: Vec<f64>,
    /// Assembled 2D field (separable modes only).
    pub field: Option<Field2D>,
    /// Discrete `‖(−h²Δ + V − E(h))u‖`.
    pub residual: f64,
}

/// Values of a field on the samples of a level set.
#[derive(Debug, Clone, Serialize)]
pub struct BoundaryTrace {
    pub level: LevelSet,
    pub values: Vec<Complex64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub rho: Vec<f64>,
    pub log_ratio: Vec<f64>,
    pub fit: LinearFit,
    pub h: f64,
}

impl DecayFit {
    /// `slope · h`; −1 is the zero-section rate.
    pub fn scaled_slope(&self) -> f64 {
        self.fit.slope * self.h
    }
}

fn locate(axis: &GridAxis, periodic: bool, x: f64) -> Option<(usize, usize, f64)> {
    const SNAP: f64 = 1e-9;
    let n = axis.n;
    let mut t = (x - axis.lo) / axis.step;
    if periodic {
        t = t.rem_euclid(n as f64);
    } else if t < -SNAP || t > (n - 1) as f64 + SNAP {
        return None;
    }
    let mut j0 = t.floor();
    let mut w = t - j0;
    if w > 1.0 - SNAP {
        j0 += 1.0;
        w = 0.0;
    } else if w < SNAP {
        w = 0.0;
    }
    let mut j0 = j0.max(0.0) as usize;
    if periodic {
        j0 %= n;
        Some((j0, (j0 + 1) % n, w))
    } else {
        j0 = j0.min(n - 1);
        Some((j0, (j0 + 1).min(n - 1), w))
    }
}

impl Field2D {
    pub fn nt(&self) -> usize {
        self.tangential.map(|t| t.n).unwrap_or(1)
    }

    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[j * self.nt() + i]
    }

    /// Bilinear interpolation (periodic in x'); exact at nodes.
    pub fn interpolate(&self, xp: f64, xn: f64) -> Result<Complex64> {
        self.interpolate_with(xp, xn, |i, j| self.at(i, j))
    }

    fn interpolate_with(&self, xp: f64, xn: f64, f: impl Fn(usize, usize) -> Complex64) -> Result<Complex64> {
        let (j0, j1, wn) = locate(&self.normal, self.normal_periodic, xn)
            .ok_or_else(|| Error::OutsideDomain(vec![xp, xn]))?;
        let (i0, i1, wt) = match &self.tangential {
            Some(t) => locate(t, true, xp).expect("periodic lookup"),
            None => (0, 0, 0.0),
        };
        let row = |j: usize| {
            let a = f(i0, j);
            if wt == 0.0 {
                a
            } else {
                a * (1.0 - wt) + f(i1, j) * wt
            }
        };
        let a = row(j0);
        Ok(if wn == 0.0 { a } else { a * (1.0 - wn) + row(j1) * wn })
    }

    /// Discrete `L²(Ω)` norm.
    pub fn norm(&self) -> f64 {
        let dt = self.tangential.map(|t| t.step).unwrap_or(1.0);
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dt * self.normal.step).sqrt()
    }

    pub fn scale(&self, c: f64) -> Field2D {
        Field2D { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    fn same_grid(&self, tangential: Option<GridAxis>, normal: GridAxis) -> bool {
        let close = |a: &GridAxis, b: &GridAxis| {
            a.n == b.n && (a.lo - b.lo).abs() <= 1e-12 && (a.step - b.step).abs() <= 1e-12 * a.step.abs()
        };
        let t_ok = match (&self.tangential, &tangential) {
            (None, None) => true,
            (Some(a), Some(b)) => close(a, b),
            _ => false,
        };
        t_ok && close(&self.normal, &normal)
    }

    /// CSV rows `x', x_n, re, im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_tangential", "x_normal", "re", "im"]).map_err(csv_err)?;
        for j in 0..self.normal.n {
            for i in 0..self.nt() {
                let xp = self.tangential.map(|t| t.node(i)).unwrap_or(0.0);
                let v = self.at(i, j);
                w.write_record(&[xp.to_string(), self.normal.node(j).to_string(), v.re.to_string(), v.im.to_string()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl BoundaryTrace {
    pub fn new(level: LevelSet, values: Vec<Complex64>) -> Self {
        BoundaryTrace { level, values }
    }

    pub fn rho(&self) -> f64 {
        self.level.rho
    }

    /// Norm with the ambient line element.
    pub fn norm(&self) -> f64 {
        self.weighted(&self.level.ambient_weights)
    }

    /// Norm with the Agmon line element `√(V − E)|dx'|`.
    pub fn agmon_norm(&self) -> f64 {
        self.weighted(&self.level.agmon_weights)
    }

    fn weighted(&self, w: &[f64]) -> f64 {
        self.values.iter().zip(w).map(|(v, w)| w * v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// The trace as a periodic boundary function (two-dimensional models).
    pub fn to_boundary_function(&self, length: f64, h: f64) -> Result<BoundaryFunction> {
        BoundaryFunction::new(self.values.clone(), length, h)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rho", "x_tangential", "x_normal", "re", "im"]).map_err(csv_err)?;
        for (p, v) in self.level.points.iter().zip(&self.values) {
            w.write_record(&[
                self.level.rho.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                v.re.to_string(),
                v.im.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Symmetric tridiagonal eigenpairs

fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn kth_eigenvalue(diag: &[f64], off: &[f64], k: usize, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if sturm_count(diag, off, m) > k {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

fn tridiag_solve(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let tiny = 1e-300;
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0] - shift;
    if piv.abs() < tiny {
        piv = tiny;
    }
    if n > 1 {
        c[0] = off[0] / piv;
    }
    d[0] = rhs[0] / piv;
    for i in 1..n {
        let mut p = diag[i] - shift - off[i - 1] * c[i - 1];
        if p.abs() < tiny {
            p = tiny;
        }
        if i < n - 1 {
            c[i] = off[i] / p;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / p;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// `count` eigenpairs nearest `target`, as `(index, value, unit vector)`.
fn tridiag_nearest(diag: &[f64], off: &[f64], target: f64, count: usize) -> Result<Vec<(usize, f64, Vec<f64>)>> {
    let n = diag.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    let pad = 1e-12 * (hi - lo).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let below = sturm_count(diag, off, target);
    let first = below.saturating_sub(count);
    let last = (below + count).min(n);
    let mut cand: Vec<(usize, f64)> = (first..last).map(|k| (k, kth_eigenvalue(diag, off, k, lo, hi))).collect();
    cand.sort_by(|a, b| (a.1 - target).abs().total_cmp(&(b.1 - target).abs()).then(a.0.cmp(&b.0)));
    cand.truncate(count);
    let scale = hi.abs().max(lo.abs()).max(1.0);
    cand.into_iter()
        .map(|(k, lambda)| {
            let shift = lambda + 1e-13 * scale;
            let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919 % 97) as f64 / 97.0)).collect();
            for _ in 0..4 {
                v = tridiag_solve(diag, off, shift, &v);
                let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !nrm.is_finite() || nrm == 0.0 {
                    return Err(Error::Numerical("inverse iteration did not converge".into()));
                }
                v.iter_mut().for_each(|x| *x /= nrm);
            }
            // Rayleigh quotient polishes the bisection value.
            let mut av = vec![0.0; n];
            for i in 0..n {
                av[i] = diag[i] * v[i];
                if i > 0 {
                    av[i] += off[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    av[i] += off[i] * v[i + 1];
                }
            }
            let rq: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
            Ok((k, rq, v))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Transverse problems

/// Grid used by the transverse problem on `axis` with `nodes` samples:
/// periodic axes omit `hi`, others include both ends.
pub fn transverse_grid(axis: Axis, nodes: usize) -> GridAxis {
    if axis.periodic {
        GridAxis { lo: axis.lo, step: axis.length() / nodes as f64, n: nodes }
    } else {
        GridAxis { lo: axis.lo, step: axis.length() / (nodes - 1) as f64, n: nodes }
    }
}

/// `(−h²d²/dx² + W − E)v` with periodic or reflecting ends; also returns
/// the quadrature weights of the discrete inner product.
fn apply_transverse(w: &[f64], v: &[f64], h: f64, step: f64, periodic: bool, energy: f64) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let c = h * h / (step * step);
    let mut out = vec![0.0; n];
    let mut wts = vec![step; n];
    for j in 0..n {
        let (l, r) = if periodic {
            (v[(j + n - 1) % n], v[(j + 1) % n])
        } else if j == 0 {
            (v[1], v[1])
        } else if j == n - 1 {
            (v[n - 2], v[n - 2])
        } else {
            (v[j - 1], v[j + 1])
        };
        out[j] = c * (2.0 * v[j] - l - r) + (w[j] - energy) * v[j];
    }
    if !periodic {
        wts[0] *= 0.5;
        wts[n - 1] *= 0.5;
    }
    (out, wts)
}

fn weighted_norm(v: &[f64], wts: &[f64]) -> f64 {
    v.iter().zip(wts).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
}

fn even_about_zero(grid: &GridAxis, w: &[f64]) -> Option<usize> {
    let n = grid.n;
    if n % 2 != 0 || (grid.lo + grid.step * (n / 2) as f64).abs() > 1e-12 * grid.step.max(1.0) {
        return None;
    }
    let scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    (1..n / 2).all(|i| (w[i] - w[n - i]).abs() <= 1e-12 * scale).then_some(n / 2)
}

/// Eigenpairs of `−h²d²/dx² + W` nearest `target`, sorted by distance to it.
pub fn solve_transverse_1d(
    w: impl Fn(f64) -> f64,
    axis: Axis,
    nodes: usize,
    h: f64,
    target: f64,
    count: usize,
) -> Result<Vec<EigenMode>> {
    if nodes < MIN_TRANSVERSE_NODES {
        return Err(Error::param("grid", format!("{nodes} < {MIN_TRANSVERSE_NODES} transverse nodes")));
    }
    if count == 0 {
        return Err(Error::param("count", "must be positive"));
    }
    let grid = transverse_grid(axis, nodes);
    if h < RESOLVABILITY * grid.step {
        return Err(Error::Precondition(format!(
            "resolvability: h = {h} below {RESOLVABILITY}·Δx = {:.4e}",
            RESOLVABILITY * grid.step
        )));
    }
    let wv: Vec<f64> = (0..nodes).map(|j| w(grid.node(j))).collect();
    let c = h * h / (grid.step * grid.step);
    // (energy, parity, full profile)
    let mut found: Vec<(f64, Option<Parity>, usize, Vec<f64>)> = Vec::new();
    if axis.periodic {
        if let Some(mid) = even_about_zero(&grid, &wv) {
            // Even sector: nodes 0..=mid reflecting at both ends; odd: Dirichlet.
            let m = mid + 1;
            let diag: Vec<f64> = (0..m).map(|j| 2.0 * c + wv[j]).collect();
            let mut off = vec![-c; m - 1];
            let s2 = std::f64::consts::SQRT_2;
            off[0] *= s2;
            off[m - 2] *= s2;
            for (k, e, y) in tridiag_nearest(&diag, &off, target, count)? {
                let mut half = y;
                half[0] *= s2;
                half[m - 1] *= s2;
                let mut full = vec![0.0; nodes];
                for j in 0..m {
                    full[j] = half[j];
                    full[(nodes - j) % nodes] = half[j];
                }
                found.push((e, Some(Parity::Even), k, full));
            }
            let diag: Vec<f64> = (1..mid).map(|j| 2.0 * c + wv[j]).collect();
            let off = vec![-c; mid.saturating_sub(2)];
            for (k, e, y) in tridiag_nearest(&diag, &off, target, count)? {
                let mut full = vec![0.0; nodes];
                for j in 1..mid {
                    full[j] = y[j - 1];
                    full[nodes - j] = -y[j - 1];
                }
                found.push((e, Some(Parity::Odd), k, full));
            }
        } else {
            if nodes > 2048 {
                return Err(Error::Unsupported("dense periodic eigensolve beyond 2048 nodes".into()));
            }
            let eig = dense_transverse(&wv, h, grid.step).symmetric_eigen();
            let mut order: Vec<usize> = (0..nodes).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            for (rank, &i) in order.iter().enumerate() {
                found.push((eig.eigenvalues[i], None, rank, eig.eigenvectors.column(i).iter().copied().collect()));
            }
        }
    } else {
        // Reflecting ends, symmetrized with trapezoid weights.
        let diag: Vec<f64> = (0..nodes).map(|j| 2.0 * c + wv[j]).collect();
        let mut off = vec![-c; nodes - 1];
        let s2 = std::f64::consts::SQRT_2;
        off[0] *= s2;
        off[nodes - 2] *= s2;
        for (k, e, mut y) in tridiag_nearest(&diag, &off, target, count)? {
            y[0] *= s2;
            y[nodes - 1] *= s2;
            found.push((e, None, k, y));
        }
    }
    found.sort_by(|a, b| (a.0 - target).abs().total_cmp(&(b.0 - target).abs()).then(a.0.total_cmp(&b.0)).then(a.2.cmp(&b.2)));
    found.truncate(count);
    found
        .into_iter()
        .map(|(e, parity, _, mut v)| {
            let (_, wts) = apply_transverse(&wv, &v, h, grid.step, axis.periodic, e);
            let nrm = weighted_norm(&v, &wts);
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            let s = big.signum() / nrm;
            v.iter_mut().for_each(|x| *x *= s);
            let (r, wts) = apply_transverse(&wv, &v, h, grid.step, axis.periodic, e);
            Ok(EigenMode {
                energy: e,
                h,
                k: None,
                parity,
                normal: grid,
                periodic: axis.periodic,
                residual: weighted_norm(&r, &wts),
                profile: v,
                field: None,
            })
        })
        .collect()
}

/// Full periodic matrix of the transverse operator (dense oracle).
pub fn dense_transverse(w: &[f64], h: f64, step: f64) -> DMatrix<f64> {
    let n = w.len();
    let c = h * h / (step * step);
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 2.0 * c + w[j];
        m[(j, (j + 1) % n)] -= c;
        m[(j, (j + n - 1) % n)] -= c;
    }
    m
}

/// Transverse modes of a separable model on its normal axis.
pub fn solve_transverse_modes(model: &ModelProblem, h: f64, target: f64, count: usize, nodes: usize) -> Result<Vec<EigenMode>> {
    if !model.is_separable() {
        return Err(Error::Unsupported("transverse modes need a separable potential".into()));
    }
    solve_transverse_1d(|x| model.potential.value(0.0, x), model.normal, nodes, h, target, count)
}

/// Tangential symbol of `−∂²_{x'}` at Fourier index `k` on `nt` nodes.
pub fn fd_symbol(k: i64, nt: usize, length: f64) -> f64 {
    let dx = length / nt as f64;
    let s = (PI * k as f64 / nt as f64).sin();
    4.0 * s * s / (dx * dx)
}

impl EigenMode {
    /// Odd part about `x_n = 0` relative to the whole profile.
    pub fn odd_part_norm(&self) -> f64 {
        let n = self.normal.n;
        if !self.periodic && self.normal.lo.abs() <= 1e-12 {
            return 0.0;
        }
        let mid = (-self.normal.lo / self.normal.step).round() as usize;
        if (self.normal.node(mid)).abs() > 1e-9 * self.normal.step {
            return f64::INFINITY;
        }
        let mut odd = 0.0;
        let mut all = 0.0;
        for j in 0..n {
            let m = if self.periodic { (2 * mid + n - j) % n } else if 2 * mid >= j && 2 * mid - j < n { 2 * mid - j } else { continue };
            odd += 0.25 * (self.profile[j] - self.profile[m]).powi(2);
            all += self.profile[j].powi(2);
        }
        (odd / all).sqrt()
    }

    /// The transverse mode as a field without tangential dependence.
    pub fn transverse_field(&self) -> Field2D {
        Field2D {
            tangential: None,
            normal: self.normal,
            normal_periodic: self.periodic,
            values: self.profile.iter().map(|v| Complex64::new(*v, 0.0)).collect(),
            h: self.h,
        }
    }
}

/// `u = e^{2πikx'/L'} v(x_n)` on `nt` tangential nodes, unit `L²(Ω)` norm,
/// with `E(h) = E_v(h) + h²μ_k` for the finite-difference symbol `μ_k`.
pub fn assemble_separable_mode(transverse: &EigenMode, k: i64, model: &ModelProblem, nt: usize) -> Result<EigenMode> {
    let t = model.tangential.ok_or_else(|| Error::Precondition("model has no tangential direction".into()))?;
    let odd = transverse.odd_part_norm();
    if odd > 1e-8 {
        return Err(Error::Precondition(format!("transverse mode not even about Γ (odd part {odd:.2e})")));
    }
    if nt < 4 {
        return Err(Error::param("nt", "need at least 4 tangential nodes"));
    }
    let length = t.length();
    let tangential = GridAxis { lo: t.lo, step: length / nt as f64, n: nt };
    let energy = transverse.energy + transverse.h * transverse.h * fd_symbol(k, nt, length);
    let norm = 1.0 / length.sqrt();
    let omega = 2.0 * PI * k as f64 / length;
    let phases: Vec<Complex64> = (0..nt).map(|i| Complex64::from_polar(norm, omega * (tangential.node(i) - t.lo))).collect();
    let mut values = Vec::with_capacity(nt * transverse.normal.n);
    for v in &transverse.profile {
        for p in &phases {
            values.push(p * *v);
        }
    }
    let field = Field2D { tangential: Some(tangential), normal: transverse.normal, normal_periodic: transverse.periodic, values, h: transverse.h };
    let residual = eigen_residual(&field, model, energy);
    Ok(EigenMode { energy, k: Some(k), field: Some(field), residual, ..transverse.clone() })
}

/// Discrete `‖(−h²Δ + V − E)u‖` with periodic x' and the field's normal closure.
pub fn eigen_residual(field: &Field2D, model: &ModelProblem, energy: f64) -> f64 {
    let nt = field.nt();
    let nn = field.normal.n;
    let h2 = field.h * field.h;
    let cn = h2 / (field.normal.step * field.normal.step);
    let (ct, dt) = match field.tangential {
        Some(t) => (h2 / (t.step * t.step), t.step),
        None => (0.0, 1.0),
    };
    let mut acc = 0.0;
    for j in 0..nn {
        let xn = field.normal.node(j);
        let (jl, jr) = if field.normal_periodic {
            ((j + nn - 1) % nn, (j + 1) % nn)
        } else if j == 0 {
            (1, 1)
        } else if j == nn - 1 {
            (nn - 2, nn - 2)
        } else {
            (j - 1, j + 1)
        };
        let wn = if !field.normal_periodic && (j == 0 || j == nn - 1) { 0.5 } else { 1.0 };
        for i in 0..nt {
            let xp = field.tangential.map(|t| t.node(i)).unwrap_or(0.0);
            let u = field.at(i, j);
            let mut r = cn * (2.0 * u - field.at(i, jl) - field.at(i, jr)) + (model.excess(xp, xn) + model.energy - energy) * u;
            if nt > 1 {
                r += ct * (2.0 * u - field.at((i + nt - 1) % nt, j) - field.at((i + 1) % nt, j));
            }
            acc += wn * r.norm_sqr();
        }
    }
    (acc * dt * field.normal.step).sqrt()
}

// ---------------------------------------------------------------------------
// Poisson boundary-value problem

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentialSymbol {
    /// Three-point stencil; keeps the discrete maximum principle.
    FiniteDifference,
    /// Exact `(2πk/L')²`.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BvpOptions {
    /// Position of the zero-Dirichlet closure.
    pub l_far: f64,
    /// Normal cells on `[0, l_far]`.
    pub normal_cells: usize,
    pub symbol: TangentialSymbol,
}

impl BvpOptions {
    /// Normal spacing `h / per_h` on `[0, l_far]`.
    pub fn resolved(h: f64, l_far: f64, per_h: f64) -> Self {
        BvpOptions {
            l_far,
            normal_cells: (l_far * per_h / h).ceil() as usize,
            symbol: TangentialSymbol::FiniteDifference,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BvpSolution {
    pub field: Field2D,
    /// Max-norm residual relative to operator scale × data size.
    pub residual: f64,
    /// `exp(−2·d_E(l_far)/h)`: a priori size of the closure's influence near Γ.
    pub closure_bound: f64,
}

/// Decaying solution of `(−h²Δ + V − E)u = 0` on `x_n ∈ [0, l_far]` with
/// `u = φ` on Γ and `u = 0` at `l_far`. One-dimensional models take a single
/// boundary value.
pub fn poisson_bvp(model: &ModelProblem, phi: &BoundaryFunction, h: f64, opts: BvpOptions) -> Result<BvpSolution> {
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    if opts.normal_cells < 4 || !(opts.l_far > 0.0) {
        return Err(Error::param("l_far", "normal grid too small"));
    }
    if opts.l_far > model.normal.hi + 1e-12 {
        return Err(Error::Precondition(format!("l_far = {} exceeds the model's normal extent", opts.l_far)));
    }
    let nt = phi.len();
    let tangential = match model.tangential {
        Some(t) => {
            if (phi.length() - t.length()).abs() > 1e-12 * t.length() {
                return Err(Error::GridMismatch("boundary data period differs from the model's".into()));
            }
            Some(GridAxis { lo: t.lo, step: t.length() / nt as f64, n: nt })
        }
        None => {
            if nt != 1 {
                return Err(Error::GridMismatch("one-dimensional models take one boundary value".into()));
            }
            None
        }
    };
    let cells = opts.normal_cells;
    let step = opts.l_far / cells as f64;
    let normal = GridAxis { lo: 0.0, step, n: cells + 1 };
    let xs: Vec<f64> = (0..nt).map(|i| tangential.map(|t| t.node(i)).unwrap_or(0.0)).collect();
    let mut vmax: f64 = 0.0;
    for j in 0..=cells {
        for &xp in &xs {
            let ex = model.excess(xp, normal.node(j));
            if ex <= 0.0 {
                return Err(Error::Precondition(format!(
                    "indefinite operator: V − E = {ex:.3e} at ({xp:.4}, {:.4})",
                    normal.node(j)
                )));
            }
            vmax = vmax.max(ex);
        }
    }
    let cn = h * h / (step * step);
    let length = model.tangential_length();
    let values = if model.is_separable() {
        separable_bvp(model, phi, h, opts.symbol, &normal, cn, length)
    } else {
        if opts.symbol != TangentialSymbol::FiniteDifference {
            return Err(Error::Unsupported("spectral tangential symbol with x'-dependent V".into()));
        }
        block_bvp(model, phi, h, &xs, &normal, cn, length)?
    };
    let field = Field2D { tangential, normal, normal_periodic: false, values, h };
    let scale = phi.values().iter().fold(0.0f64, |m, v| m.max(v.norm())).max(f64::MIN_POSITIVE);
    let op = 4.0 * cn + vmax + if nt > 1 { 4.0 * h * h / (length / nt as f64).powi(2) } else { 0.0 };
    let residual = bvp_residual(&field, model, opts.symbol, length) / (op * scale);
    let d_far = agmon_profile(model, 0.0, opts.l_far);
    Ok(BvpSolution { field, residual, closure_bound: (-2.0 * d_far / h).exp() })
}

fn tangential_symbols(nt: usize, length: f64, symbol: TangentialSymbol) -> Vec<f64> {
    (0..nt)
        .map(|p| {
            if nt == 1 {
                return 0.0;
            }
            let k = crate::halfplane::mode_of(p, nt);
            match symbol {
                TangentialSymbol::FiniteDifference => fd_symbol(k, nt, length),
                TangentialSymbol::Spectral => (2.0 * PI * k as f64 / length).powi(2),
            }
        })
        .collect()
}

fn separable_bvp(
    model: &ModelProblem,
    phi: &BoundaryFunction,
    h: f64,
    symbol: TangentialSymbol,
    normal: &GridAxis,
    cn: f64,
    length: f64,
) -> Vec<Complex64> {
    let nt = phi.len();
    let cells = normal.n - 1;
    let mut hat = phi.values().to_vec();
    let mut planner = FftPlanner::new();
    if nt > 1 {
        planner.plan_fft_forward(nt).process(&mut hat);
    }
    let mu = tangential_symbols(nt, length, symbol);
    let w: Vec<f64> = (1..cells).map(|j| model.normal_excess(normal.node(j))).collect();
    let columns: Vec<Vec<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|p| {
            let m = cells - 1;
            let diag: Vec<f64> = (0..m).map(|j| 2.0 * cn + h * h * mu[p] + w[j]).collect();
            let mut col = vec![Complex64::new(0.0, 0.0); cells + 1];
            col[0] = hat[p];
            // Thomas with off-diagonal −cn; the Dirichlet value enters row 1.
            let mut c = vec![0.0; m];
            let mut d = vec![Complex64::new(0.0, 0.0); m];
            let mut piv = diag[0];
            c[0] = -cn / piv;
            d[0] = hat[p] * cn / piv;
            for j in 1..m {
                piv = diag[j] + cn * c[j - 1];
                c[j] = -cn / piv;
                d[j] = (d[j - 1] * cn) / piv;
            }
            for j in (0..m - 1).rev() {
                let next = d[j + 1];
                d[j] -= next * c[j];
            }
            col[1..cells].copy_from_slice(&d);
            col
        })
        .collect();
    let mut values = vec![Complex64::new(0.0, 0.0); nt * (cells + 1)];
    let inverse = (nt > 1).then(|| planner.plan_fft_inverse(nt));
    let mut row = vec![Complex64::new(0.0, 0.0); nt];
    for j in 0..=cells {
        for p in 0..nt {
            row[p] = columns[p][j];
        }
        if let Some(plan) = &inverse {
            plan.process(&mut row);
            row.iter_mut().for_each(|v| *v /= nt as f64);
        }
        values[j * nt..(j + 1) * nt].copy_from_slice(&row);
    }
    // The boundary row is the data itself, not its FFT round trip.
    values[..nt].copy_from_slice(phi.values());
    values
}

fn block_bvp(
    model: &ModelProblem,
    phi: &BoundaryFunction,
    h: f64,
    xs: &[f64],
    normal: &GridAxis,
    cn: f64,
    length: f64,
) -> Result<Vec<Complex64>> {
    let nt = xs.len();
    let cells = normal.n - 1;
    let ct = h * h / (length / nt as f64).powi(2);
    let block = |j: usize| {
        let mut a = DMatrix::zeros(nt, nt);
        for i in 0..nt {
            a[(i, i)] = 2.0 * cn + 2.0 * ct + model.excess(xs[i], normal.node(j));
            a[(i, (i + 1) % nt)] -= ct;
            a[(i, (i + nt - 1) % nt)] -= ct;
        }
        a
    };
    // Block Thomas: D_1 = A_1, D_j = A_j − cn² D_{j−1}^{−1}.
    let mut rhs = DMatrix::zeros(nt, 2);
    for i in 0..nt {
        rhs[(i, 0)] = cn * phi.values()[i].re;
        rhs[(i, 1)] = cn * phi.values()[i].im;
    }
    let mut factors = Vec::with_capacity(cells - 1);
    let mut ys: Vec<DMatrix<f64>> = Vec::with_capacity(cells - 1);
    let mut prev_inv: Option<DMatrix<f64>> = None;
    for j in 1..cells {
        let mut d = block(j);
        let mut y = if j == 1 { rhs.clone() } else { DMatrix::zeros(nt, 2) };
        if let Some(inv) = &prev_inv {
            d -= inv * (cn * cn);
            y += inv * ys.last().expect("previous row") * cn;
        }
        let chol = d.cholesky().ok_or_else(|| Error::Numerical(format!("block factorization failed at row {j}")))?;
        prev_inv = Some(chol.inverse());
        ys.push(y);
        factors.push(chol);
    }
    let mut sol: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nt, 2); cells + 1];
    for j in (1..cells).rev() {
        let mut y = ys[j - 1].clone();
        if j + 1 < cells {
            y += &sol[j + 1] * cn;
        }
        sol[j] = factors[j - 1].solve(&y);
    }
    let mut values = vec![Complex64::new(0.0, 0.0); nt * (cells + 1)];
    values[..nt].copy_from_slice(phi.values());
    for j in 1..cells {
        for i in 0..nt {
            values[j * nt + i] = Complex64::new(sol[j][(i, 0)], sol[j][(i, 1)]);
        }
    }
    Ok(values)
}

fn bvp_residual(field: &Field2D, model: &ModelProblem, symbol: TangentialSymbol, length: f64) -> f64 {
    let nt = field.nt();
    let nn = field.normal.n;
    let h2 = field.h * field.h;
    let cn = h2 / (field.normal.step * field.normal.step);
    let mu = tangential_symbols(nt, length, symbol);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let mut worst: f64 = 0.0;
    for j in 1..nn - 1 {
        let xn = field.normal.node(j);
        let u: Vec<Complex64> = (0..nt).map(|i| field.at(i, j)).collect();
        let mut tang = u.clone();
        if nt > 1 {
            fwd.process(&mut tang);
            for (p, v) in tang.iter_mut().enumerate() {
                *v *= h2 * mu[p] / nt as f64;
            }
            inv.process(&mut tang);
        } else {
            tang[0] = Complex64::new(0.0, 0.0);
        }
        for i in 0..nt {
            let xp = field.tangential.map(|t| t.node(i)).unwrap_or(0.0);
            let r = cn * (2.0 * u[i] - field.at(i, j - 1) - field.at(i, j + 1)) + tang[i] + model.excess(xp, xn) * u[i];
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// Largest relative change of the traces at `heights` when `l_far` doubles.
pub fn far_contamination(model: &ModelProblem, phi: &BoundaryFunction, h: f64, opts: BvpOptions, heights: &[f64]) -> Result<f64> {
    let a = poisson_bvp(model, phi, h, opts)?;
    let doubled = BvpOptions { l_far: 2.0 * opts.l_far, normal_cells: 2 * opts.normal_cells, ..opts };
    let b = poisson_bvp(model, phi, h, doubled)?;
    let mut worst: f64 = 0.0;
    for &s in heights {
        let level = LevelSet::at_height(model, 0.0, s, phi.len(), false);
        let ta = trace_at(&a.field, &level)?;
        let tb = trace_at(&b.field, &level)?;
        let diff: f64 = ta.values.iter().zip(&tb.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let base: f64 = tb.values.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if base > 0.0 {
            worst = worst.max(diff / base);
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Traces

fn check_level(field: &Field2D, level: &LevelSet) -> Result<()> {
    let dim = if field.tangential.is_some() { 2 } else { 1 };
    if dim != level.dim {
        return Err(Error::GridMismatch(format!("{dim}-D field, {}-D level set", level.dim)));
    }
    Ok(())
}

/// Restriction γ_ρ by bilinear interpolation.
pub fn trace_at(field: &Field2D, level: &LevelSet) -> Result<BoundaryTrace> {
    check_level(field, level)?;
    let values = level.points.iter().map(|p| field.interpolate(p[0], p[1])).collect::<Result<Vec<_>>>()?;
    Ok(BoundaryTrace::new(level.clone(), values))
}

/// Centered-difference `∂_{x_n}u` interpolated onto the level.
pub fn normal_derivative_trace(field: &Field2D, level: &LevelSet) -> Result<BoundaryTrace> {
    check_level(field, level)?;
    let n = field.normal.n;
    let step = field.normal.step;
    let deriv = |i: usize, j: usize| {
        let (l, r) = if field.normal_periodic { ((j + n - 1) % n, (j + 1) % n) } else { (j - 1, j + 1) };
        (field.at(i, r) - field.at(i, l)) / (2.0 * step)
    };
    let mut values = Vec::with_capacity(level.points.len());
    for p in &level.points {
        if !field.normal_periodic {
            let t = (p[1] - field.normal.lo) / step;
            if t < 2.0 - 1e-9 || t > (n - 3) as f64 + 1e-9 {
                return Err(Error::Precondition(format!("x_n = {} within two cells of the edge", p[1])));
            }
        }
        values.push(field.interpolate_with(p[0], p[1], deriv)?);
    }
    Ok(BoundaryTrace::new(level.clone(), values))
}

#[derive(Debug, Clone, Serialize)]
pub struct GaugedField {
    pub field: Field2D,
    /// `max d_E / h` over the grid, in decades.
    pub dynamic_range_decades: f64,
}

/// Pointwise `e^{d_E(x)/h} u(x)`, formed in log space.
pub fn gauge_transform(field: &Field2D, distance: &DistanceField, h: f64) -> Result<GaugedField> {
    if !field.same_grid(distance.tangential, distance.normal) {
        return Err(Error::GridMismatch("field and distance grids differ".into()));
    }
    let dmax = distance.values.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let decades = dmax / h / std::f64::consts::LN_10;
    if decades > 300.0 {
        return Err(Error::Numerical(format!("gauge dynamic range 10^{decades:.0} exceeds 10^300")));
    }
    let values = field
        .values
        .iter()
        .zip(&distance.values)
        .map(|(u, d)| {
            let r = u.norm();
            if r == 0.0 || *d == 0.0 {
                *u
            } else {
                Complex64::from_polar((r.ln() + d / h).exp(), u.arg())
            }
        })
        .collect();
    Ok(GaugedField { field: Field2D { values, ..field.clone() }, dynamic_range_decades: decades })
}

/// Least-squares slope of `log(‖γ_ρu‖/‖γ_0u‖)` against ρ.
pub fn decay_fit(boundary: &BoundaryTrace, traces: &[BoundaryTrace], h: f64) -> Result<DecayFit> {
    let mut rhos: Vec<f64> = traces.iter().map(|t| t.rho()).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    if rhos.len() < 4 {
        return Err(Error::Precondition("decay fit needs at least 4 distinct ρ".into()));
    }
    let base = boundary.norm();
    if base == 0.0 {
        return Err(Error::Precondition("zero boundary trace".into()));
    }
    let mut rho = Vec::with_capacity(traces.len());
    let mut lr = Vec::with_capacity(traces.len());
    for t in traces {
        let n = t.norm();
        if n == 0.0 {
            return Err(Error::Precondition(format!("zero trace at ρ = {}", t.rho())));
        }
        rho.push(t.rho());
        lr.push((n / base).ln());
    }
    let fit = linear_fit(&rho, &lr);
    Ok(DecayFit { rho, log_ratio: lr, fit, h })
}

/// `(min, max)` of `e^{ρ/h}‖γ_ρu‖/‖γ_0u‖` over the traces.
pub fn sandwich_constants(boundary: &BoundaryTrace, traces: &[BoundaryTrace], h: f64) -> (f64, f64) {
    let base = boundary.norm();
    traces
        .iter()
        .map(|t| (t.rho() / h).exp() * t.norm() / base)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), c| (lo.min(c), hi.max(c)))
}

/// Max over interior nodes of `|h²∂²_{x_n}u − (−h²∂²_{x'}u + (V − E)u)|`
/// with a five-point normal stencil, relative to `max|u|`; the scheme's
/// own three-point stencil makes this an `O(Δx_n²)` consistency measure.
pub fn normal_identity_residual(field: &Field2D, model: &ModelProblem, energy_shift: f64) -> f64 {
    let nt = field.nt();
    let n = field.normal.n;
    let h2 = field.h * field.h;
    let s = field.normal.step;
    let ct = field.tangential.map(|t| h2 / (t.step * t.step)).unwrap_or(0.0);
    let umax = field.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let mut worst: f64 = 0.0;
    for j in 2..n.saturating_sub(2) {
        let xn = field.normal.node(j);
        for i in 0..nt {
            let xp = field.tangential.map(|t| t.node(i)).unwrap_or(0.0);
            let d2 = (-field.at(i, j - 2) + field.at(i, j - 1) * 16.0 - field.at(i, j) * 30.0 + field.at(i, j + 1) * 16.0
                - field.at(i, j + 2))
                / (12.0 * s * s);
            let u = field.at(i, j);
            let pt = if nt > 1 { (u * 2.0 - field.at((i + nt - 1) % nt, j) - field.at((i + 1) % nt, j)) * ct } else { Complex64::new(0.0, 0.0) };
            let r = d2 * h2 - (pt + u * (model.excess(xp, xn) - energy_shift));
            worst = worst.max(r.norm());
        }
    }
    worst / umax.max(f64::MIN_POSITIVE)
}
