//! Complex-phase Hamilton–Jacobi equations solved as power series in `x_n`.
//!
//! With `φ = ⟨x', ξ'⟩ + iφ₁` and `q = ∂_{x_n}φ₁` both kinds reduce to
//!
//! ```text
//! q² + 2βq = A + G(x_n) (ξ' + i∂_{x'}φ₁)²
//! ```
//!
//! with `β = 1, A = 0` and `G` the Agmon–Fermi metric coefficient (Agmon
//! kind), or `β = 0, A = V − E, G = 1` (ambient kind). Order `j` of the
//! expansion is linear in `q_j` with divisor `2β + 2q_0`, so the series is
//! built one coefficient at a time. `K` counts the powers of `x_n` kept in
//! `q`, hence `φ₁` carries `c_1 … c_{K+1}` with `c_j = q_{j−1}/j`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::agmon::{agmon_profile_inverse, LevelSet};
use crate::error::{Error, Result};
use crate::halfplane::{apply_multiplier, BoundaryFunction};
use crate::models::ModelProblem;
use crate::series::Series;
use crate::solver::BoundaryTrace;
use crate::stats::{loglog_fit, LinearFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    Agmon,
    Ambient,
}

/// Leading transport amplitude choice for the parametrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Amplitude {
    /// `a ≡ 1`.
    Unit,
    /// `a₀ = (G(ρ)/G(0))^{1/4} ((1 + q(0))/(1 + q(ρ)))^{1/2}`.
    Transport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSeries {
    pub kind: PhaseKind,
    pub order: usize,
    pub xi: Vec<f64>,
    /// Tangential nodes; a single node means the coefficients do not depend on x'.
    pub xprime: Vec<f64>,
    /// `q[j][ix * nxi + ik]`, `j = 0..=K`.
    pub q: Vec<Vec<Complex64>>,
    /// Per tangential node: `G` (Agmon kind) or `V − E` (ambient kind) in x_n.
    pub metric: Vec<Series>,
    /// Smallest |2β + 2q_0| met by the recursion.
    pub divisor_min: f64,
    #[serde(skip)]
    pub model: ModelProblem,
}

/// Taylor data of the Agmon–Fermi metric coefficient `G(ρ) = 1/(W(s(ρ)) − E)`
/// with `ρ(s) = ∫₀ˢ √(W − E)` (series reversion then composition).
pub fn agmon_metric_taylor(model: &ModelProblem, xp: f64, len: usize) -> Result<Series> {
    let n = len + 1;
    let w = model.potential.normal_taylor(xp, n).add_const(-model.energy);
    if w.0[0] <= 0.0 {
        return Err(Error::Precondition("V − E must be positive on Γ".into()));
    }
    let rho_of_s = w.sqrt().integrate();
    let s_of_rho = rho_of_s.revert();
    let mut g = w.compose(&s_of_rho).recip();
    g.0.truncate(len);
    Ok(g)
}

fn spectral_derivative(values: &[Complex64], length: f64) -> Vec<Complex64> {
    let n = values.len();
    let mut buf = values.to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (p, v) in buf.iter_mut().enumerate() {
        let k = if p < n / 2 { p as f64 } else if p == n / 2 && n % 2 == 0 { 0.0 } else { p as f64 - n as f64 };
        *v *= Complex64::new(0.0, 2.0 * PI * k / length) / n as f64;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Builds the series on the grid `xi × xprime_nodes`.
pub fn solve_phase_series(
    model: &ModelProblem,
    kind: PhaseKind,
    order: usize,
    xi: &[f64],
    xprime_nodes: usize,
) -> Result<PhaseSeries> {
    if order < 2 {
        return Err(Error::param("K", "must be at least 2"));
    }
    if xi.is_empty() {
        return Err(Error::param("xi", "grid is empty"));
    }
    let dependent = model.potential.depends_on_tangential();
    if kind == PhaseKind::Agmon && dependent {
        return Err(Error::Unsupported(
            "Agmon–Fermi chart for tangentially dependent potentials".into(),
        ));
    }
    let xprime: Vec<f64> = match (dependent, model.tangential) {
        (true, Some(a)) => {
            let n = xprime_nodes.max(4);
            (0..n).map(|i| a.lo + a.length() * i as f64 / n as f64).collect()
        }
        _ => vec![0.0],
    };
    let len = order + 1;
    let metric: Vec<Series> = xprime
        .iter()
        .map(|&xp| match kind {
            PhaseKind::Agmon => agmon_metric_taylor(model, xp, len),
            PhaseKind::Ambient => Ok(model.potential.normal_taylor(xp, len).add_const(-model.energy)),
        })
        .collect::<Result<_>>()?;
    let nx = xprime.len();
    let nk = xi.len();
    let beta = if kind == PhaseKind::Agmon { 1.0 } else { 0.0 };
    let mut q: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); nx * nk]; len];
    // D_j = ∂_{x'} c_j at every node, filled as soon as q_{j-1} is known.
    let mut d: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); nx * nk]; len];
    let mut divisor_min = f64::INFINITY;
    let length = model.tangential_length();
    for j in 0..len {
        if j >= 1 && nx > 1 {
            for ik in 0..nk {
                let col: Vec<Complex64> = (0..nx).map(|ix| q[j - 1][ix * nk + ik] / j as f64).collect();
                let dc = spectral_derivative(&col, length);
                for ix in 0..nx {
                    d[j][ix * nk + ik] = dc[ix];
                }
            }
        }
        for ix in 0..nx {
            let g = &metric[ix];
            for (ik, &x) in xi.iter().enumerate() {
                let at = ix * nk + ik;
                // coefficient j of (ξ + iD)² = ξ² + 2iξD − D²
                let mut sq = Complex64::new(0.0, 2.0 * x) * d[j][at];
                if j == 0 {
                    sq += x * x;
                }
                for i in 1..j {
                    sq -= d[i][at] * d[j - i][at];
                }
                let s_j = match kind {
                    PhaseKind::Agmon => {
                        // G·(ξ+iD)² with x'-independent G and D ≡ 0
                        Complex64::new(g.coeff(j) * x * x, 0.0)
                    }
                    PhaseKind::Ambient => sq + g.coeff(j),
                };
                if j == 0 {
                    let q0 = match kind {
                        PhaseKind::Agmon => (Complex64::new(1.0, 0.0) + s_j).sqrt() - 1.0,
                        PhaseKind::Ambient => {
                            if s_j.norm() == 0.0 {
                                return Err(Error::Precondition(
                                    "branch ambiguity: V − E + |ξ'|² vanishes".into(),
                                ));
                            }
                            s_j.sqrt()
                        }
                    };
                    q[0][at] = q0;
                    divisor_min = divisor_min.min((2.0 * beta + 2.0 * q0).norm());
                } else {
                    let mut num = s_j;
                    for i in 1..j {
                        num -= q[i][at] * q[j - i][at];
                    }
                    q[j][at] = num / (2.0 * beta + 2.0 * q[0][at]);
                }
            }
        }
    }
    if kind == PhaseKind::Agmon && divisor_min < 1.0 {
        return Err(Error::Numerical(format!("recursion divisor {divisor_min} below 1")));
    }
    Ok(PhaseSeries {
        kind,
        order,
        xi: xi.to_vec(),
        xprime,
        q,
        metric,
        divisor_min,
        model: model.clone(),
    })
}

impl PhaseSeries {
    pub fn nxi(&self) -> usize {
        self.xi.len()
    }

    pub fn is_tangentially_constant(&self) -> bool {
        self.xprime.len() == 1
    }

    /// `c_j` at a grid node, `j = 1..=K+1`.
    pub fn coefficient(&self, j: usize, ix: usize, ik: usize) -> Complex64 {
        self.q[j - 1][ix * self.nxi() + ik] / j as f64
    }

    /// `∂_{x_n}φ₁` at a grid node.
    pub fn dphi1(&self, ix: usize, ik: usize, xn: f64) -> Complex64 {
        let at = ix * self.nxi() + ik;
        self.q.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, qj| acc * xn + qj[at])
    }

    /// `φ₁` at a grid node.
    pub fn phi1(&self, ix: usize, ik: usize, xn: f64) -> Complex64 {
        let at = ix * self.nxi() + ik;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in (1..=self.q.len()).rev() {
            acc = acc * xn + self.q[j - 1][at] / j as f64;
        }
        acc * xn
    }

    /// Re-runs the tangentially constant recursion at an arbitrary ξ';
    /// returns `(φ₁(ρ), ∂_{x_n}φ₁(ρ))`.
    pub fn eval_at(&self, xi: f64, xn: f64) -> Result<(f64, f64)> {
        if !self.is_tangentially_constant() {
            return Err(Error::Unsupported("off-grid evaluation of x'-dependent series".into()));
        }
        let g = &self.metric[0];
        let len = self.q.len();
        let mut q = vec![0.0; len];
        for j in 0..len {
            let s = match self.kind {
                PhaseKind::Agmon => g.coeff(j) * xi * xi,
                PhaseKind::Ambient => g.coeff(j) + if j == 0 { xi * xi } else { 0.0 },
            };
            if j == 0 {
                q[0] = match self.kind {
                    PhaseKind::Agmon => (1.0 + s).sqrt() - 1.0,
                    PhaseKind::Ambient => s.sqrt(),
                };
            } else {
                let mut num = s;
                for i in 1..j {
                    num -= q[i] * q[j - i];
                }
                let beta = if self.kind == PhaseKind::Agmon { 1.0 } else { 0.0 };
                q[j] = num / (2.0 * beta + 2.0 * q[0]);
            }
        }
        let dphi = q.iter().rev().fold(0.0, |acc, c| acc * xn + c);
        let mut phi = 0.0;
        for j in (1..=len).rev() {
            phi = phi * xn + q[j - 1] / j as f64;
        }
        Ok((phi * xn, dphi))
    }

    /// Exact right-hand coefficient `G(x_n)` (Agmon kind, tangentially
    /// constant) from profile inversion, independent of the series.
    pub fn exact_metric(&self, xn: f64) -> Result<f64> {
        let s = agmon_profile_inverse(&self.model, 0.0, xn)?;
        Ok(1.0 / self.model.normal_excess(s))
    }

    /// Transport amplitude `a₀(ρ, ξ')` from the series data.
    pub fn transport_amplitude(&self, xi: f64, rho: f64) -> Result<f64> {
        let g = &self.metric[0];
        let (_, q_r) = self.eval_at(xi, rho)?;
        let (_, q_0) = self.eval_at(xi, 0.0)?;
        Ok((g.eval(rho) / g.coeff(0)).powf(0.25) * ((1.0 + q_0) / (1.0 + q_r)).sqrt())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub xn: Vec<f64>,
    /// max |residual| over the (x', ξ') grid at each x_n.
    pub max_residual: Vec<f64>,
    /// Values below this are treated as roundoff and excluded from the fit.
    pub floor: f64,
    pub fit: Option<LinearFit>,
}

impl ResidualReport {
    pub fn fitted_order(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Substitutes the truncated series into its equation.
pub fn phase_residual(series: &PhaseSeries, xn_samples: &[f64]) -> Result<ResidualReport> {
    let nk = series.nxi();
    let nx = series.xprime.len();
    let length = series.model.tangential_length();
    let mut max_res = Vec::with_capacity(xn_samples.len());
    let mut scale: f64 = 1.0;
    for &xn in xn_samples {
        let mut worst: f64 = 0.0;
        match series.kind {
            PhaseKind::Agmon => {
                let g = series.exact_metric(xn)?;
                for ik in 0..nk {
                    let x = series.xi[ik];
                    let q = series.dphi1(0, ik, xn);
                    let r = q * q + 2.0 * q - g * x * x;
                    scale = scale.max(g * x * x);
                    worst = worst.max(r.norm());
                }
            }
            PhaseKind::Ambient => {
                for ik in 0..nk {
                    let x = series.xi[ik];
                    let dphi: Vec<Complex64> = (0..nx).map(|ix| series.dphi1(ix, ik, xn)).collect();
                    let dx: Vec<Complex64> = if nx > 1 {
                        let phi: Vec<Complex64> = (0..nx).map(|ix| series.phi1(ix, ik, xn)).collect();
                        spectral_derivative(&phi, length)
                    } else {
                        vec![Complex64::new(0.0, 0.0)]
                    };
                    for ix in 0..nx {
                        let a = series.model.excess(series.xprime[ix], xn);
                        let p = Complex64::new(x, 0.0) + Complex64::new(0.0, 1.0) * dx[ix];
                        let r = dphi[ix] * dphi[ix] - a - p * p;
                        scale = scale.max(a.abs() + x * x);
                        worst = worst.max(r.norm());
                    }
                }
            }
        }
        max_res.push(worst);
    }
    let floor = 1e-13 * scale;
    let (fx, fy): (Vec<f64>, Vec<f64>) = xn_samples
        .iter()
        .zip(&max_res)
        .filter(|(x, r)| **r > floor && **x >= 1e-3 && **x <= 1e-1)
        .map(|(x, r)| (*x, *r))
        .unzip();
    let fit = (fx.len() >= 4).then(|| loglog_fit(&fx, &fy));
    Ok(ResidualReport { xn: xn_samples.to_vec(), max_residual: max_res, floor, fit })
}

/// Geometric samples of `x_n` in `[lo, hi]`.
pub fn geometric_samples(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallFrequencyReport {
    pub xn: f64,
    /// φ₁/|ξ'|² at the two smallest nonzero |ξ'| levels.
    pub ratios: [f64; 2],
    pub zero_row_max: f64,
    pub passed: bool,
}

/// φ₁/|ξ'|² stays bounded as ξ' → 0 (two smallest levels within factor 4).
pub fn check_small_frequency(series: &PhaseSeries, xn: f64) -> Result<SmallFrequencyReport> {
    let mut levels: Vec<(f64, usize)> = series.xi.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, x)| (x.abs(), i)).collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    if levels.len() < 2 || levels[0].0 > 0.1 {
        return Err(Error::Precondition("grid needs two nonzero levels with |ξ'| ≤ 0.1".into()));
    }
    let ratio = |(m, ik): (f64, usize)| {
        (0..series.xprime.len()).map(|ix| series.phi1(ix, ik, xn).norm() / (m * m)).fold(0.0, f64::max)
    };
    let first = ratio(levels[0]);
    let second = levels.iter().find(|l| l.0 > levels[0].0 * (1.0 + 1e-12)).map(|l| ratio(*l)).unwrap_or(first);
    let zero_row_max = series
        .xi
        .iter()
        .enumerate()
        .filter(|(_, x)| **x == 0.0)
        .flat_map(|(ik, _)| (0..series.xprime.len()).map(move |ix| (ix, ik)))
        .map(|(ix, ik)| series.phi1(ix, ik, xn).norm())
        .fold(0.0, f64::max);
    let v = crate::stats::variation(&[first, second]);
    Ok(SmallFrequencyReport {
        xn,
        ratios: [first, second],
        zero_row_max,
        passed: v <= 4.0 && first.is_finite(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LargeFrequencyReport {
    /// Smallest C with |φ₁ − x_n(√(|ξ'|²_{(x',0)} + 1) − 1)| ≤ C x_n² |ξ'|.
    pub constant: f64,
}

pub fn check_large_frequency(series: &PhaseSeries, xn_samples: &[f64]) -> Result<LargeFrequencyReport> {
    if series.kind != PhaseKind::Agmon {
        return Err(Error::Precondition("large-frequency expansion applies to the Agmon kind".into()));
    }
    let mut c: f64 = 0.0;
    for (ix, g) in series.metric.iter().enumerate() {
        for (ik, &x) in series.xi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for &xn in xn_samples {
                let lead = xn * ((g.coeff(0) * x * x + 1.0).sqrt() - 1.0);
                let diff = (series.phi1(ix, ik, xn) - lead).norm();
                c = c.max(diff / (xn * xn * x.abs()));
            }
        }
    }
    Ok(LargeFrequencyReport { constant: c })
}

/// Bounds `C|ξ'|² ≤ |ξ'|²_{(x', x_n)} ≤ C̃|ξ'|²` over `x_n ∈ [0, ρ_max]`.
pub fn metric_equivalence(series: &PhaseSeries, rho_max: f64, samples: usize) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..=samples {
        let r = rho_max * i as f64 / samples as f64;
        let g = if r == 0.0 { series.metric[0].coeff(0) } else { series.exact_metric(r)? };
        lo = lo.min(g);
        hi = hi.max(g);
    }
    Ok((lo, hi))
}

/// `γ_ρKφ`: the gauged parametrix `Op_h(a e^{−φ₁(·,ρ,·)/h}) φ` on Γ_ρ.
pub fn apply_poisson_parametrix(
    series: &PhaseSeries,
    phi: &BoundaryFunction,
    rho: f64,
    amplitude: Amplitude,
) -> Result<BoundaryTrace> {
    if series.kind != PhaseKind::Agmon {
        return Err(Error::Precondition("parametrix needs the Agmon-kind series".into()));
    }
    let model = &series.model;
    let rmax = model.collar_agmon_width();
    if !(rho >= 0.0 && rho < rmax) {
        return Err(Error::Precondition(format!("ρ = {rho} beyond the collar ({rmax:.4})")));
    }
    let h = phi.h();
    let failure = std::cell::RefCell::new(None);
    let out = apply_multiplier(phi, |xi| {
        let r = (|| -> Result<f64> {
            let (p1, _) = series.eval_at(xi, rho)?;
            let a = match amplitude {
                Amplitude::Unit => 1.0,
                Amplitude::Transport => series.transport_amplitude(xi, rho)?,
            };
            Ok(a * (-p1 / h).exp())
        })();
        match r {
            Ok(v) => Complex64::new(v, 0.0),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        }
    });
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let s = if rho == 0.0 { 0.0 } else { agmon_profile_inverse(model, 0.0, rho)? };
    let level = LevelSet::at_height(model, rho, s, phi.len(), true);
    Ok(BoundaryTrace::new(level, out.into_values()))
}
