//! Standard quantization `Op_h` on the boundary circle, the cutoff profile
//! `b`, the symbol `f_ρ = b(φ₁/h)` and the operator-level lower-frame and
//! tail estimates built from them.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::halfplane::{apply_multiplier, fourier_h, mode_of, BoundaryFunction};
use crate::hjphase::{PhaseKind, PhaseSeries};
use crate::smooth;
use crate::stats::{loglog_fit, LinearFit};

/// Boundary phase-space grid: `n` nodes on a circle of length `length`,
/// frequencies `ξ'_k = h·2πk/length`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseGrid {
    pub n: usize,
    pub length: f64,
    pub h: f64,
}

impl PhaseGrid {
    pub fn of(u: &BoundaryFunction) -> Self {
        PhaseGrid { n: u.len(), length: u.length(), h: u.h() }
    }

    pub fn x(&self, j: usize) -> f64 {
        self.length * j as f64 / self.n as f64
    }

    /// Frequency of FFT slot `p`.
    pub fn xi(&self, p: usize) -> f64 {
        self.h * 2.0 * PI * mode_of(p, self.n) as f64 / self.length
    }

    fn matches(&self, u: &BoundaryFunction) -> bool {
        self.n == u.len() && (self.length - u.length()).abs() <= 1e-12 * self.length && (self.h - u.h()).abs() <= 1e-15 * self.h
    }
}

/// Sampled symbol `a(x', ξ')`; `values[j * n + p]` with `p` in FFT slot
/// order, or a single row when `a` does not depend on x'.
#[derive(Debug, Clone, Serialize)]
pub struct Symbol {
    pub grid: PhaseGrid,
    pub x_dependent: bool,
    pub values: Vec<Complex64>,
    /// Claimed class exponent ρ_cls.
    pub class_exponent: f64,
    /// Support contained in `|ξ'| ≤ support`.
    pub support: f64,
}

impl Symbol {
    pub fn multiplier(grid: PhaseGrid, class_exponent: f64, f: impl Fn(f64) -> Complex64) -> Self {
        let values: Vec<Complex64> = (0..grid.n).map(|p| f(grid.xi(p))).collect();
        let support = Self::measure_support(&grid, &values, 1);
        Symbol { grid, x_dependent: false, values, class_exponent, support }
    }

    pub fn from_fn(grid: PhaseGrid, class_exponent: f64, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let mut values = Vec::with_capacity(grid.n * grid.n);
        for j in 0..grid.n {
            let x = grid.x(j);
            for p in 0..grid.n {
                values.push(f(x, grid.xi(p)));
            }
        }
        let support = Self::measure_support(&grid, &values, grid.n);
        Symbol { grid, x_dependent: true, values, class_exponent, support }
    }

    fn measure_support(grid: &PhaseGrid, values: &[Complex64], rows: usize) -> f64 {
        let mut s: f64 = 0.0;
        for r in 0..rows {
            for p in 0..grid.n {
                if values[r * grid.n + p].norm() != 0.0 {
                    s = s.max(grid.xi(p).abs());
                }
            }
        }
        s
    }

    pub fn at(&self, j: usize, p: usize) -> Complex64 {
        if self.x_dependent {
            self.values[j * self.grid.n + p]
        } else {
            self.values[p]
        }
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Pointwise product on the common grid.
    pub fn product(&self, other: &Symbol) -> Result<Symbol> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch("symbols on different grids".into()));
        }
        let x_dependent = self.x_dependent || other.x_dependent;
        let rows = if x_dependent { self.grid.n } else { 1 };
        let mut values = Vec::with_capacity(rows * self.grid.n);
        for j in 0..rows {
            for p in 0..self.grid.n {
                values.push(self.at(j, p) * other.at(j, p));
            }
        }
        Ok(Symbol {
            grid: self.grid,
            x_dependent,
            values,
            class_exponent: self.class_exponent.max(other.class_exponent),
            support: self.support.min(other.support),
        })
    }
}

/// `Op_h(a)u(x) = (2πh)^{−1} ∬ e^{i(x−y)ξ/h} a(x, ξ) u(y) dy dξ` on the grid.
pub fn op_h_apply(a: &Symbol, u: &BoundaryFunction) -> Result<BoundaryFunction> {
    if !a.grid.matches(u) {
        return Err(Error::GridMismatch("symbol grid differs from the function's".into()));
    }
    if !a.x_dependent {
        let vals = &a.values;
        let g = a.grid;
        let lookup = move |xi: f64| {
            let k = (xi * g.length / (2.0 * PI * g.h)).round() as i64;
            let p = k.rem_euclid(g.n as i64) as usize;
            vals[p]
        };
        return Ok(apply_multiplier(u, lookup));
    }
    let n = a.grid.n;
    let spec = fourier_h(u);
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for p in 0..n {
            let k = mode_of(p, n);
            let phase = 2.0 * PI * (j as i64 * k).rem_euclid(n as i64) as f64 / n as f64;
            acc += a.at(j, p) * spec.coeffs[p] * Complex64::from_polar(1.0, phase);
        }
        *o = acc / a.grid.length;
    }
    Ok(u.with_values(out))
}

/// `Op_h(a)^*` on the grid.
pub fn op_h_adjoint_apply(a: &Symbol, v: &BoundaryFunction) -> Result<BoundaryFunction> {
    if !a.grid.matches(v) {
        return Err(Error::GridMismatch("symbol grid differs from the function's".into()));
    }
    if !a.x_dependent {
        let conj = Symbol { values: a.values.iter().map(|z| z.conj()).collect(), ..a.clone() };
        return op_h_apply(&conj, v);
    }
    let n = a.grid.n;
    let dx = a.grid.length / n as f64;
    let mut hat = vec![Complex64::new(0.0, 0.0); n];
    for (p, hp) in hat.iter_mut().enumerate() {
        let k = mode_of(p, n);
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let phase = -2.0 * PI * (j as i64 * k).rem_euclid(n as i64) as f64 / n as f64;
            acc += a.at(j, p).conj() * v.values()[j] * Complex64::from_polar(1.0, phase);
        }
        *hp = acc * dx;
    }
    let out = (0..n)
        .map(|j| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, hp) in hat.iter().enumerate() {
                let k = mode_of(p, n);
                let phase = 2.0 * PI * (j as i64 * k).rem_euclid(n as i64) as f64 / n as f64;
                acc += hp * Complex64::from_polar(1.0, phase);
            }
            acc / a.grid.length
        })
        .collect();
    Ok(v.with_values(out))
}

// ---------------------------------------------------------------------------
// Cutoff profile

/// `b = e^{−B}` with `B(x) = x` on `[0, M/2]`, then `B' = β` falling from 1
/// to 0 through the smooth step, ending at `B = −ln ζ`. Hence `b` is
/// nonincreasing, `b ≥ e^{−x}`, `|b'| ≤ b` and `|b''| ≤ (1 + max|β'|) b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffProfile {
    pub m: f64,
    pub zeta: f64,
    /// Length of the `β = 1` stretch after `M/2`.
    pub plateau: f64,
    /// Length of the descent of β.
    pub width: f64,
    /// Measured `sup|b'|/b` and `sup|b''|/b`.
    pub derivative_constants: [f64; 2],
}

fn descent_integral(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    let u = u.min(1.0);
    quadrature::double_exponential::integrate(|t| 1.0 - smooth::step(t), 0.0, u, 1e-15).integral
}

impl CutoffProfile {
    /// Where the profile reaches ζ.
    pub fn end(&self) -> f64 {
        0.5 * self.m + self.plateau + self.width
    }

    /// `β = B'`.
    pub fn beta(&self, x: f64) -> f64 {
        let s = 0.5 * self.m + self.plateau;
        if x <= s {
            1.0
        } else {
            1.0 - smooth::step((x - s) / self.width)
        }
    }

    pub fn exponent(&self, x: f64) -> f64 {
        let a = 0.5 * self.m;
        if x <= a {
            return x;
        }
        if x <= a + self.plateau {
            return x;
        }
        if x >= self.end() {
            return -self.zeta.ln();
        }
        a + self.plateau + self.width * descent_integral((x - a - self.plateau) / self.width)
    }

    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.5 * self.m + self.plateau {
            (-x).exp()
        } else if x >= self.end() {
            self.zeta
        } else {
            (-self.exponent(x)).exp()
        }
    }

    /// `(b, b', b'')`.
    pub fn jet(&self, x: f64) -> [f64; 3] {
        let b = self.value(x);
        let s = 0.5 * self.m + self.plateau;
        let (beta, dbeta) = if x <= s {
            (1.0, 0.0)
        } else if x >= self.end() {
            (0.0, 0.0)
        } else {
            let j = smooth::step_jet((x - s) / self.width, 1);
            (1.0 - j[0], -j[1] / self.width)
        };
        [b, -beta * b, (beta * beta - dbeta) * b]
    }
}

/// The profile for plateau length `M`, with ζ = e^{−3M/4}.
pub fn build_cutoff_b(m: f64) -> Result<CutoffProfile> {
    build_cutoff_b_with(m, (-0.75 * m).exp())
}

pub fn build_cutoff_b_with(m: f64, zeta: f64) -> Result<CutoffProfile> {
    if !(m >= 4.0) {
        return Err(Error::param("M", format!("{m} < 4 leaves no room for a smooth monotone bridge")));
    }
    if !(zeta > (-m).exp() && zeta < (-0.5 * m).exp()) {
        return Err(Error::param("zeta", "must lie in (e^{−M}, e^{−M/2})"));
    }
    let z = -zeta.ln();
    let (plateau, width) = if z <= 0.75 * m {
        (0.0, 2.0 * (z - 0.5 * m))
    } else {
        let a = 2.0 * z - 1.5 * m;
        (a, 0.5 * m - a)
    };
    let mut p = CutoffProfile { m, zeta, plateau, width, derivative_constants: [0.0; 2] };
    let samples = 4000;
    let mut c: [f64; 2] = [0.0; 2];
    for i in 0..=samples {
        let x = 1.2 * m * i as f64 / samples as f64;
        let j = p.jet(x);
        c[0] = c[0].max(j[1].abs() / j[0]);
        c[1] = c[1].max(j[2].abs() / j[0]);
    }
    p.derivative_constants = c;
    Ok(p)
}

// ---------------------------------------------------------------------------
// f_ρ and its regions

#[derive(Debug, Clone, Serialize)]
pub struct FRho {
    pub symbol: Symbol,
    pub rho: f64,
    pub profile: CutoffProfile,
    /// `{|ξ'|² ≤ cMh}` lies where `f_ρ = e^{−φ₁/h}`.
    pub c: f64,
    /// `{|ξ'|² ≥ c'Mh}` lies where `f_ρ = ζ`.
    pub c_prime: f64,
    /// Grid checks of the three region statements.
    pub exponential_region_ok: bool,
    pub zeta_region_ok: bool,
    pub lower_bound_ok: bool,
}

impl FRho {
    pub fn regions_ok(&self) -> bool {
        self.exponential_region_ok && self.zeta_region_ok && self.lower_bound_ok
    }
}

/// `|ξ'|` where `φ₁(ρ, ξ') = level` (φ₁ increasing in |ξ'|).
fn invert_phase(series: &PhaseSeries, rho: f64, level: f64) -> Result<f64> {
    let f = |xi: f64| series.eval_at(xi, rho).map(|v| v.0).unwrap_or(f64::NAN) - level;
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Numerical("phase does not reach the requested level".into()));
        }
    }
    let mut conv = roots::SimpleConvergency { eps: 1e-15, max_iter: 200 };
    roots::find_root_brent(0.0, hi, f, &mut conv).map_err(|e| Error::Numerical(format!("{e:?}")))
}

/// `f_ρ(ξ') = b(φ₁(ρ, ξ')/h)` on the grid of `grid`.
pub fn build_f_rho(series: &PhaseSeries, profile: &CutoffProfile, rho: f64, grid: PhaseGrid) -> Result<FRho> {
    if series.kind != PhaseKind::Agmon || !series.is_tangentially_constant() {
        return Err(Error::Precondition("f_ρ needs a tangentially constant Agmon-kind series".into()));
    }
    let rmax = series.model.collar_agmon_width();
    if !(rho > 0.0 && rho < rmax) {
        return Err(Error::Precondition(format!("ρ = {rho} outside the collar (0, {rmax:.4})")));
    }
    let h = grid.h;
    let m = profile.m;
    let mut phi1 = Vec::with_capacity(grid.n);
    for p in 0..grid.n {
        phi1.push(series.eval_at(grid.xi(p), rho)?.0);
    }
    let values: Vec<Complex64> = phi1.iter().map(|v| Complex64::new(profile.value(v / h), 0.0)).collect();
    let xi_in = invert_phase(series, rho, 0.5 * m * h)?;
    let xi_out = invert_phase(series, rho, m * h)?;
    let c = xi_in * xi_in / (m * h);
    let c_prime = xi_out * xi_out / (m * h);
    let mut exp_ok = true;
    let mut zeta_ok = true;
    let mut lower_ok = true;
    for p in 0..grid.n {
        let xi2 = grid.xi(p).powi(2);
        let f = values[p].re;
        if xi2 <= c * m * h && f != (-phi1[p] / h).exp() {
            exp_ok = false;
        }
        if xi2 >= c_prime * m * h && f != profile.zeta {
            zeta_ok = false;
        }
        if f < profile.zeta {
            lower_ok = false;
        }
    }
    let symbol = Symbol { grid, x_dependent: false, values, class_exponent: 0.5, support: f64::INFINITY };
    Ok(FRho {
        symbol,
        rho,
        profile: *profile,
        c,
        c_prime,
        exponential_region_ok: exp_ok,
        zeta_region_ok: zeta_ok,
        lower_bound_ok: lower_ok,
    })
}

/// `σ_{γρK} = e^{−φ₁(ρ, ξ')/h}` on the grid (amplitude ≡ 1).
pub fn parametrix_symbol(series: &PhaseSeries, rho: f64, grid: PhaseGrid) -> Result<Symbol> {
    let mut values = Vec::with_capacity(grid.n);
    for p in 0..grid.n {
        values.push(Complex64::new((-series.eval_at(grid.xi(p), rho)?.0 / grid.h).exp(), 0.0));
    }
    Ok(Symbol { grid, x_dependent: false, values, class_exponent: 0.5, support: f64::INFINITY })
}

/// Radial `χ_in + χ_out = 1`: `χ_in = 1` on `|ξ'|² ≤ cMh/2`, `0` on `|ξ'|² ≥ cMh`.
pub fn split_in_out(m: f64, c: f64, grid: PhaseGrid) -> (Symbol, Symbol) {
    let s = c * m * grid.h;
    let chi_in = Symbol::multiplier(grid, 0.5, |xi| Complex64::new(smooth::fall(xi * xi, 0.5 * s, s), 0.0));
    let chi_out = Symbol {
        values: chi_in.values.iter().map(|v| Complex64::new(1.0, 0.0) - v).collect(),
        support: f64::INFINITY,
        ..chi_in.clone()
    };
    (chi_in, chi_out)
}

// ---------------------------------------------------------------------------
// Symbol classes

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeExponent {
    pub alpha: usize,
    pub beta: usize,
    pub sups: Vec<f64>,
    /// `None` when every sup vanishes (no h-growth at all).
    pub fit: Option<LinearFit>,
    pub passed: bool,
}

impl DerivativeExponent {
    pub fn exponent(&self) -> f64 {
        self.fit.map(|f| f.slope).unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub hs: Vec<f64>,
    pub claimed: f64,
    pub entries: Vec<DerivativeExponent>,
}

impl ClassReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, alpha: usize, beta: usize) -> Option<&DerivativeExponent> {
        self.entries.iter().find(|e| e.alpha == alpha && e.beta == beta)
    }
}

/// Sampling box of a symbol-class measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassBox {
    /// Tangential period (x' is sampled on `[0, length)`).
    pub length: f64,
    pub x_nodes: usize,
    /// `|ξ'| ≤ xi_max`.
    pub xi_max: f64,
    pub xi_nodes: usize,
}

const DERIVATIVE_ZERO: f64 = 1e-12;

/// Fits `log sup|∂^α_x ∂^β_ξ(a_h − shift)|` against `log h` for
/// `α + β ≤ 2`; membership in `S_ρ` requires exponent ≥ −ρ|β| − 0.1.
pub fn symbol_class_check<S: Fn(f64, f64) -> f64>(
    hs: &[f64],
    shift: f64,
    claimed: f64,
    bx: ClassBox,
    build: impl Fn(f64) -> Result<S>,
) -> Result<ClassReport> {
    if hs.len() < 4 {
        return Err(Error::Precondition("symbol-class sweep needs at least 4 h values".into()));
    }
    let hmin = hs.iter().copied().fold(f64::INFINITY, f64::min);
    // Finite-difference steps below the finest oscillation scale √h.
    let dxi = 2e-3 * hmin.sqrt();
    let dx = 1e-3 * bx.length / bx.x_nodes as f64;
    let pairs = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)];
    let mut sups = vec![vec![0.0f64; hs.len()]; pairs.len()];
    for (ih, &h) in hs.iter().enumerate() {
        let a = build(h)?;
        let g = |x: f64, xi: f64| a(x, xi) - shift;
        for ix in 0..bx.x_nodes {
            let x = bx.length * ix as f64 / bx.x_nodes as f64;
            for k in 0..=bx.xi_nodes {
                let xi = bx.xi_max * k as f64 / bx.xi_nodes as f64;
                let d_xi = |f: &dyn Fn(f64) -> f64, order: usize| match order {
                    0 => f(xi),
                    1 => (f(xi + dxi) - f(xi - dxi)) / (2.0 * dxi),
                    _ => (f(xi + dxi) - 2.0 * f(xi) + f(xi - dxi)) / (dxi * dxi),
                };
                for (e, &(al, be)) in pairs.iter().enumerate() {
                    let v = match al {
                        0 => d_xi(&|t| g(x, t), be),
                        1 => {
                            let f = |t: f64| (g(x + dx, t) - g(x - dx, t)) / (2.0 * dx);
                            d_xi(&f, be)
                        }
                        _ => {
                            let f = |t: f64| (g(x + dx, t) - 2.0 * g(x, t) + g(x - dx, t)) / (dx * dx);
                            d_xi(&f, be)
                        }
                    };
                    sups[e][ih] = sups[e][ih].max(v.abs());
                }
            }
        }
    }
    let entries = pairs
        .iter()
        .zip(sups)
        .map(|(&(alpha, beta), s)| {
            let all_zero = s.iter().all(|v| *v <= DERIVATIVE_ZERO);
            let fit = (!all_zero).then(|| loglog_fit(hs, &s));
            let exponent = fit.map(|f| f.slope).unwrap_or(f64::INFINITY);
            DerivativeExponent { alpha, beta, sups: s, fit, passed: exponent >= -claimed * beta as f64 - 0.1 }
        })
        .collect();
    Ok(ClassReport { hs: hs.to_vec(), claimed, entries })
}

// ---------------------------------------------------------------------------
// Operator-level checks

#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub ratios: Vec<f64>,
    /// Measured C₃.
    pub min_ratio: f64,
}

/// `‖Op_h(f_ρ)φ‖ / (ζ‖φ‖)` over the test set.
pub fn frame_lower_bound_check(f_rho: &Symbol, phis: &[BoundaryFunction], zeta: f64) -> Result<FrameReport> {
    if phis.is_empty() {
        return Err(Error::Precondition("empty test set".into()));
    }
    let mut ratios = Vec::with_capacity(phis.len());
    for phi in phis {
        let n = phi.norm();
        if n == 0.0 {
            return Err(Error::Precondition("zero test function".into()));
        }
        ratios.push(op_h_apply(f_rho, phi)?.norm() / (zeta * n));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FrameReport { ratios, min_ratio })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NormEstimate {
    pub estimate: f64,
    /// `1.05 ×` the estimate.
    pub upper: f64,
    /// Last two iterates agree within 5%.
    pub stable: bool,
}

/// Power iteration on `A*A` for 50 steps, started from the largest probe.
pub fn operator_norm(a: &Symbol, probes: &[BoundaryFunction]) -> Result<NormEstimate> {
    let start = probes
        .iter()
        .max_by(|x, y| {
            let rx = op_h_apply(a, x).map(|v| v.norm() / x.norm()).unwrap_or(0.0);
            let ry = op_h_apply(a, y).map(|v| v.norm() / y.norm()).unwrap_or(0.0);
            rx.total_cmp(&ry)
        })
        .ok_or_else(|| Error::Precondition("empty probe set".into()))?;
    let mut v = start.scale(1.0 / start.norm());
    let mut est = 0.0;
    let mut prev = 0.0;
    for _ in 0..50 {
        let av = op_h_apply(a, &v)?;
        prev = est;
        est = av.norm();
        let w = op_h_adjoint_apply(a, &av)?;
        let nw = w.norm();
        if nw == 0.0 {
            return Ok(NormEstimate { estimate: 0.0, upper: 0.0, stable: true });
        }
        v = w.scale(1.0 / nw);
    }
    Ok(NormEstimate { estimate: est, upper: 1.05 * est, stable: (est - prev).abs() <= 0.05 * est })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    /// sup of `f_ρ − σ_{γρK}` on `{|ξ'|² ≤ cMh/2}`.
    pub inner_sup: f64,
    pub sup: f64,
    pub norm: NormEstimate,
    /// Measured C₄ = ‖Op_h(f_ρ − σ)‖/ζ.
    pub c4: f64,
    /// max over probes of `‖Op(d)φ − Op(d)Op(χ_out)φ‖/‖φ‖`.
    pub factorization_defect: f64,
}

/// Difference `f_ρ − σ_{γρK}` and its operator norm on the probes.
pub fn tail_operator_bound(f: &FRho, series: &PhaseSeries, probes: &[BoundaryFunction]) -> Result<TailReport> {
    let grid = f.symbol.grid;
    let sigma = parametrix_symbol(series, f.rho, grid)?;
    let values: Vec<Complex64> = f.symbol.values.iter().zip(&sigma.values).map(|(a, b)| a - b).collect();
    let diff = Symbol { values, ..f.symbol.clone() };
    let m = f.profile.m;
    let inner = 0.5 * f.c * m * grid.h;
    let inner_sup = (0..grid.n).filter(|&p| grid.xi(p).powi(2) <= inner).map(|p| diff.values[p].norm()).fold(0.0, f64::max);
    let norm = operator_norm(&diff, probes)?;
    let (_, chi_out) = split_in_out(m, f.c, grid);
    let mut defect: f64 = 0.0;
    for phi in probes {
        let a = op_h_apply(&diff, phi)?;
        let b = op_h_apply(&diff, &op_h_apply(&chi_out, phi)?)?;
        defect = defect.max(a.sub(&b).norm() / phi.norm());
    }
    Ok(TailReport { inner_sup, sup: diff.sup(), norm, c4: norm.estimate / f.profile.zeta, factorization_defect: defect })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainMargin {
    /// `‖Op_h(σ_{γρK})φ‖ / ‖φ‖`, i.e. `e^{ρ/h}‖γ_ρKφ‖/‖φ‖`.
    pub lhs: f64,
    /// `ζ (C₃ − C₄ ‖Op_h(χ_out)φ‖/‖φ‖)`.
    pub bound: f64,
    pub outer_fraction: f64,
    pub passed: bool,
}

/// The operator-level lower chain for one boundary datum.
pub fn chain_margin(f: &FRho, series: &PhaseSeries, phi: &BoundaryFunction, c3: f64, c4: f64) -> Result<ChainMargin> {
    let grid = f.symbol.grid;
    let sigma = parametrix_symbol(series, f.rho, grid)?;
    let n = phi.norm();
    let lhs = op_h_apply(&sigma, phi)?.norm() / n;
    let (_, chi_out) = split_in_out(f.profile.m, f.c, grid);
    let outer_fraction = op_h_apply(&chi_out, phi)?.norm() / n;
    let bound = f.profile.zeta * (c3 - c4 * outer_fraction);
    Ok(ChainMargin { lhs, bound, outer_fraction, passed: bound > 0.0 && lhs >= bound })
}

/// Random band-limited probes: Gaussian coefficients on `|k| ≤ kmax`.
pub fn random_probes(grid: PhaseGrid, count: usize, kmax: i64, seed: u64) -> Result<Vec<BoundaryFunction>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let coeffs: Vec<(i64, Complex64)> =
                (-kmax..=kmax).map(|k| (k, Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))).collect();
            BoundaryFunction::from_fn(grid.n, grid.length, grid.h, |x| {
                coeffs
                    .iter()
                    .map(|(k, c)| c * Complex64::from_polar(1.0, 2.0 * PI * *k as f64 * x / grid.length))
                    .sum()
            })
        })
        .collect()
}
