//! The exact flat model on the cylinder `T_L × [0, ∞)` for `−h²Δ + 1`:
//! semiclassical Fourier transform, Poisson multiplier, zero-section
//! concentration and the four-step lower-bound chain.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::smooth;

/// Complex samples on `N` uniform nodes of a circle of length `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    values: Vec<Complex64>,
    length: f64,
    h: f64,
}

impl BoundaryFunction {
    pub fn new(values: Vec<Complex64>, length: f64, h: f64) -> Result<Self> {
        let n = values.len();
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::param("N", format!("{n} is not a power of two")));
        }
        if !(length > 0.0) || !(h > 0.0) {
            return Err(Error::param("L/h", "must be positive"));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::param("values", "must be finite"));
        }
        Ok(BoundaryFunction { values, length, h })
    }

    pub fn from_fn(n: usize, length: f64, h: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let dx = length / n as f64;
        Self::new((0..n).map(|j| f(dx * j as f64)).collect(), length, h)
    }

    /// `e^{i k x}` (tangential frequency ξ'_k = h·2πk/L).
    pub fn single_mode(n: usize, length: f64, h: f64, k: i64) -> Result<Self> {
        let w = 2.0 * PI * k as f64 / length;
        Self::from_fn(n, length, h, |x| Complex64::from_polar(1.0, w * x))
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dx(&self) -> f64 {
        self.length / self.len() as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.dx() * j as f64
    }

    /// Discrete L² norm with line element L/N.
    pub fn norm(&self) -> f64 {
        (self.dx() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn inner(&self, other: &Self) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum::<Complex64>() * self.dx()
    }

    pub fn with_values(&self, values: Vec<Complex64>) -> Self {
        BoundaryFunction { values, length: self.length, h: self.h }
    }

    pub fn with_h(&self, h: f64) -> Self {
        BoundaryFunction { values: self.values.clone(), length: self.length, h }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.with_values(self.values.iter().map(|v| v * c).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect())
    }
}

/// Integer mode of FFT slot `p` for `N` points: `[0, N/2) ∪ [−N/2, 0)`.
pub fn mode_of(p: usize, n: usize) -> i64 {
    if p < n / 2 {
        p as i64
    } else {
        p as i64 - n as i64
    }
}

/// Semiclassical spectrum in FFT slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub coeffs: Vec<Complex64>,
    pub length: f64,
    pub h: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn mode(&self, p: usize) -> i64 {
        mode_of(p, self.len())
    }

    /// ξ'_k = h·2πk/L at FFT slot `p`.
    pub fn xi(&self, p: usize) -> f64 {
        self.h * 2.0 * PI * self.mode(p) as f64 / self.length
    }

    pub fn coeff(&self, k: i64) -> Complex64 {
        let n = self.len() as i64;
        self.coeffs[k.rem_euclid(n) as usize]
    }

    /// L² norm on the ξ' lattice, spacing 2πh/L.
    pub fn norm(&self) -> f64 {
        (2.0 * PI * self.h / self.length * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Norm restricted by a real weight applied mode-wise.
    pub fn weighted_norm(&self, w: impl Fn(f64) -> f64) -> f64 {
        let dxi = 2.0 * PI * self.h / self.length;
        (dxi * (0..self.len()).map(|p| (w(self.xi(p)) * self.coeffs[p].norm()).powi(2)).sum::<f64>()).sqrt()
    }
}

fn fft(values: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse {
        planner.plan_fft_inverse(values.len())
    } else {
        planner.plan_fft_forward(values.len())
    };
    plan.process(values);
}

/// `F_h u(ξ'_k) = (L/N) Σ_j e^{−2πijk/N} u_j`.
pub fn fourier_h(u: &BoundaryFunction) -> Spectrum {
    let mut c = u.values.clone();
    fft(&mut c, false);
    let s = u.dx();
    for v in c.iter_mut() {
        *v *= s;
    }
    Spectrum { coeffs: c, length: u.length, h: u.h }
}

pub fn inverse_fourier_h(s: &Spectrum) -> BoundaryFunction {
    let mut c = s.coeffs.clone();
    fft(&mut c, true);
    let scale = 1.0 / s.length;
    for v in c.iter_mut() {
        *v *= scale;
    }
    BoundaryFunction { values: c, length: s.length, h: s.h }
}

/// Applies a mode-wise multiplier `m(ξ'_k)`.
pub fn apply_multiplier(u: &BoundaryFunction, m: impl Fn(f64) -> Complex64) -> BoundaryFunction {
    let mut s = fourier_h(u);
    for p in 0..s.len() {
        let xi = s.xi(p);
        s.coeffs[p] *= m(xi);
    }
    inverse_fourier_h(&s)
}

/// `e^{−(ρ/h)√(|ξ'|² + 1)}`.
pub fn poisson_multiplier(xi: f64, rho: f64, h: f64) -> f64 {
    (-(rho / h) * (xi * xi + 1.0).sqrt()).exp()
}

/// Trace at `x_n = ρ` of the decaying solution with boundary data φ.
pub fn apply_halfplane_poisson(phi: &BoundaryFunction, rho: f64) -> BoundaryFunction {
    let h = phi.h;
    apply_multiplier(phi, |xi| Complex64::new(poisson_multiplier(xi, rho, h), 0.0))
}

/// Radial zero-section cutoff: 1 on `|ξ'| ≤ δ/2`, 0 on `|ξ'| ≥ δ`.
pub fn chi_delta(xi: f64, delta: f64) -> f64 {
    smooth::fall(xi.abs(), 0.5 * delta, delta)
}

/// ‖Op_h(1 − χ_δ)φ‖ / ‖φ‖.
pub fn exterior_mass_fraction(phi: &BoundaryFunction, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::param("delta", "must be positive"));
    }
    let s = fourier_h(phi);
    let total = s.norm();
    if total == 0.0 {
        return Err(Error::Precondition("boundary data vanishes".into()));
    }
    Ok((s.weighted_norm(|xi| 1.0 - chi_delta(xi, delta)) / total).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStep {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub rho: f64,
    pub h: f64,
    pub delta: f64,
    pub exterior_fraction: f64,
    pub steps: Vec<ChainStep>,
    /// ‖γ_ρKφ‖ / ‖φ‖.
    pub ratio: f64,
    /// ½ e^{−(ρ/h)√(δ²+1)}.
    pub bound: f64,
    pub passed: bool,
}

impl ChainReport {
    /// ratio − bound, measured in units of the bound.
    pub fn relative_margin(&self) -> f64 {
        self.ratio / self.bound - 1.0
    }
}

/// Checks each step of the lower-bound chain for the flat model.
pub fn verify_lower_chain(phi: &BoundaryFunction, rho: f64, delta: f64, eps: f64) -> Result<ChainReport> {
    let frac = exterior_mass_fraction(phi, delta)?;
    if eps > std::f64::consts::FRAC_1_SQRT_2 {
        return Err(Error::Precondition(format!("ε = {eps} exceeds 1/√2")));
    }
    if frac > eps {
        return Err(Error::Precondition(format!("exterior mass fraction {frac:.4} exceeds ε = {eps}")));
    }
    let h = phi.h;
    let tol = 1e-10;
    let s = fourier_h(phi);
    let pref = (2.0 * PI * h).powf(-0.5);
    let inner = |xi: f64| if xi.abs() <= delta { 1.0 } else { 0.0 };
    let decay = (-(rho / h) * (delta * delta + 1.0).sqrt()).exp();
    let u_rho = apply_halfplane_poisson(phi, rho);
    let lhs0 = u_rho.norm();
    let full = pref * s.weighted_norm(|xi| poisson_multiplier(xi, rho, h));
    let restricted = pref * s.weighted_norm(|xi| inner(xi) * poisson_multiplier(xi, rho, h));
    let low_part = pref * s.weighted_norm(inner);
    let norm_phi = phi.norm();
    let bound = 0.5 * decay;
    let ratio = lhs0 / norm_phi;
    let steps = vec![
        ChainStep { name: "plancherel", lhs: lhs0, rhs: full, passed: (lhs0 - full).abs() <= tol * full.max(1e-300) },
        ChainStep { name: "restriction", lhs: full, rhs: restricted, passed: full >= restricted * (1.0 - tol) },
        ChainStep { name: "multiplier", lhs: restricted, rhs: decay * low_part, passed: restricted >= decay * low_part * (1.0 - tol) },
        ChainStep {
            name: "zero-section",
            lhs: low_part,
            rhs: (1.0 - frac * frac).sqrt() * norm_phi,
            passed: low_part >= (1.0 - frac * frac).sqrt() * norm_phi * (1.0 - tol),
        },
    ];
    let passed = steps.iter().all(|s| s.passed) && ratio >= bound;
    Ok(ChainReport { rho, h, delta, exterior_fraction: frac, steps, ratio, bound, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let u = BoundaryFunction::from_fn(64, 2.0 * PI, 0.1, |_| c(1.0)).unwrap();
        let s = fourier_h(&u);
        assert!((s.coeffs[0] - c(2.0 * PI)).norm() < 1e-12);
        assert!(s.coeffs[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn plancherel_prefactor() {
        let u = BoundaryFunction::from_fn(128, 2.0 * PI, 0.05, |x| Complex64::new(x.sin() + 0.3, (3.0 * x).cos())).unwrap();
        let s = fourier_h(&u);
        let lhs = s.norm();
        let rhs = (2.0 * PI * 0.05f64).sqrt() * u.norm();
        assert!((lhs - rhs).abs() < 1e-12 * rhs);
    }

    #[test]
    fn gaussian_transforms_to_gaussian() {
        // oracle: direct quadrature of ∫ e^{-iξx/h} e^{-x²/2h} dx per mode
        let h = 0.05;
        let l = 2.0 * PI;
        let n = 256;
        let u = BoundaryFunction::from_fn(n, l, h, |x| {
            let y = if x > PI { x - l } else { x };
            c((-y * y / (2.0 * h)).exp())
        })
        .unwrap();
        let s = fourier_h(&u);
        for k in 0..6i64 {
            let xi = h * k as f64;
            let direct: Complex64 = (0..20000)
                .map(|j| {
                    let x = -PI + l * (j as f64 + 0.5) / 20000.0;
                    Complex64::from_polar((-x * x / (2.0 * h)).exp(), -xi * x / h) * (l / 20000.0)
                })
                .sum();
            let expect = (2.0 * PI * h).sqrt() * (-xi * xi / (2.0 * h)).exp();
            assert!((s.coeff(k) - direct).norm() < 1e-8 * expect);
            assert!((s.coeff(k).re - expect).abs() < 1e-8 * expect);
        }
    }

    #[test]
    fn multiplier_values() {
        assert!((poisson_multiplier(0.0, 0.1, 0.1) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(poisson_multiplier(3.0, 0.0, 0.1), 1.0);
        let d = 0.5;
        for &xi in &[0.0, 0.2, 0.5] {
            assert!(poisson_multiplier(xi, 0.2, 0.05) >= (-(0.2 / 0.05) * (d * d + 1.0f64).sqrt()).exp());
        }
    }

    #[test]
    fn constant_data_decays_at_unit_rate() {
        let u = BoundaryFunction::from_fn(64, 2.0 * PI, 0.1, |_| c(2.5)).unwrap();
        for &rho in &[0.05, 0.1, 0.2, 0.4] {
            let v = apply_halfplane_poisson(&u, rho);
            let r = v.norm() / u.norm();
            assert!((r.ln() + rho / 0.1).abs() < 1e-12);
            assert!(v.values().iter().all(|z| (z - c(2.5 * (-rho / 0.1f64).exp())).norm() < 1e-12));
        }
        assert_eq!(apply_halfplane_poisson(&u, 0.0).values().len(), 64);
    }

    #[test]
    fn single_mode_ratio_is_closed_form() {
        let h = 0.05;
        let u = BoundaryFunction::single_mode(128, 2.0 * PI, h, 7).unwrap();
        let v = apply_halfplane_poisson(&u, 0.1);
        let expect = poisson_multiplier(h * 7.0, 0.1, h);
        assert!((v.norm() / u.norm() - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn exterior_fraction_cases() {
        let h = 0.1;
        let one = BoundaryFunction::from_fn(64, 2.0 * PI, h, |_| c(1.0)).unwrap();
        assert_eq!(exterior_mass_fraction(&one, 0.5).unwrap(), 0.0);
        let hi = BoundaryFunction::single_mode(64, 2.0 * PI, h, 6).unwrap();
        assert!((exterior_mass_fraction(&hi, 0.5).unwrap() - 1.0).abs() < 1e-12);
        let zero = BoundaryFunction::from_fn(64, 2.0 * PI, h, |_| c(0.0)).unwrap();
        assert!(exterior_mass_fraction(&zero, 0.5).is_err());
        // mixture: p² of the mass at a mode beyond δ
        let p: f64 = 0.3;
        let mix = BoundaryFunction::from_fn(64, 2.0 * PI, h, |x| c((1.0 - p * p).sqrt()) + Complex64::from_polar(p, 8.0 * x)).unwrap();
        assert!((exterior_mass_fraction(&mix, 0.5).unwrap() - p).abs() < 1e-12);
    }

    #[test]
    fn chain_on_constant_and_interior_mode() {
        let h = 0.05;
        let one = BoundaryFunction::from_fn(256, 2.0 * PI, h, |_| c(1.0)).unwrap();
        let r = verify_lower_chain(&one, 0.1, 0.5, 0.1).unwrap();
        assert!(r.passed);
        assert!((r.ratio - (-0.1 / h).exp()).abs() < 1e-12);
        // |ξ'| = δ/4 = 0.125 → k = 2.5 h^{-1}·... choose k with h k = 0.125
        let m = BoundaryFunction::single_mode(256, 2.0 * PI, 0.0625, 2).unwrap();
        let r = verify_lower_chain(&m, 0.1, 0.5, 0.1).unwrap();
        assert!(r.passed && r.relative_margin() > 0.0);
    }

    #[test]
    fn chain_guards_epsilon() {
        let one = BoundaryFunction::from_fn(64, 2.0 * PI, 0.1, |_| c(1.0)).unwrap();
        assert!(matches!(verify_lower_chain(&one, 0.1, 0.5, 0.9), Err(Error::Precondition(_))));
        let hi = BoundaryFunction::single_mode(64, 2.0 * PI, 0.1, 9).unwrap();
        assert!(verify_lower_chain(&hi, 0.1, 0.5, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 32)) {
            let u = BoundaryFunction::new(vals.iter().map(|(a, b)| Complex64::new(*a, *b)).collect(), 3.0, 0.07).unwrap();
            let v = inverse_fourier_h(&fourier_h(&u));
            let err = v.sub(&u).norm();
            prop_assert!(err <= 1e-12 * u.norm().max(1e-300));
        }

        #[test]
        fn semigroup_and_monotone(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64), r1 in 0.0f64..0.3, r2 in 0.0f64..0.3) {
            let u = BoundaryFunction::new(vals.iter().map(|(a, b)| Complex64::new(*a, *b)).collect(), 2.0 * PI, 0.1).unwrap();
            let a = apply_halfplane_poisson(&apply_halfplane_poisson(&u, r1), r2);
            let b = apply_halfplane_poisson(&u, r1 + r2);
            prop_assert!(a.sub(&b).norm() <= 1e-12 * b.norm().max(1e-300));
            prop_assert!(apply_halfplane_poisson(&u, r1).norm() <= u.norm() * (1.0 + 1e-12));
        }

        #[test]
        fn exterior_fraction_nonincreasing_in_delta(vals in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 64), d in 0.05f64..2.0, grow in 1.0f64..3.0) {
            let u = BoundaryFunction::new(vals.iter().map(|(a, b)| Complex64::new(*a, *b)).collect(), 2.0 * PI, 0.1).unwrap();
            prop_assume!(u.norm() > 1e-6);
            let a = exterior_mass_fraction(&u, d).unwrap();
            let b = exterior_mass_fraction(&u, d * grow).unwrap();
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn single_mode_exactness(k in -20i64..20, rho in 0.0f64..0.1) {
            let h = 0.05;
            let u = BoundaryFunction::single_mode(64, 2.0 * PI, h, k).unwrap();
            let v = apply_halfplane_poisson(&u, rho);
            let m = poisson_multiplier(h * k as f64, rho, h);
            let err = v.sub(&u.scale(m)).norm();
            prop_assert!(err <= 1e-12 * (m * u.norm()).max(1e-300));
        }
    }
}
