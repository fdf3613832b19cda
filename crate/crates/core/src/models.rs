//! Closed-form model problems and their standing hypotheses.
//!
//! Points are given as `[x_n]` for one-dimensional models and `[x', x_n]`
//! otherwise; Γ is always the level `x_n = 0`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::series::Series;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `V = c0`.
    ConstantBarrier,
    /// `V = Σ c_i x_n^i`.
    PolynomialBarrier,
    /// `V = c0 + c1 cos(x_n)`.
    CosineWell,
    /// `V = (c0 + c1 cos(x_n)) (1 + c2 cos(x'))`.
    SeparableProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub coefficients: Vec<f64>,
}

impl PotentialSpec {
    fn c(&self, i: usize) -> f64 {
        self.coefficients.get(i).copied().unwrap_or(0.0)
    }

    /// Value and gradient `(∂_{x'}, ∂_{x_n})`; the tangential slot is zero for
    /// potentials without tangential dependence.
    pub fn value_grad(&self, xp: f64, xn: f64) -> (f64, [f64; 2]) {
        match self.kind {
            PotentialKind::ConstantBarrier => (self.c(0), [0.0, 0.0]),
            PotentialKind::PolynomialBarrier => {
                let mut v = 0.0;
                let mut dv = 0.0;
                for c in self.coefficients.iter().rev() {
                    dv = dv * xn + v;
                    v = v * xn + c;
                }
                (v, [0.0, dv])
            }
            PotentialKind::CosineWell => (
                self.c(0) + self.c(1) * xn.cos(),
                [0.0, -self.c(1) * xn.sin()],
            ),
            PotentialKind::SeparableProduct => {
                let w = self.c(0) + self.c(1) * xn.cos();
                let t = 1.0 + self.c(2) * xp.cos();
                (
                    w * t,
                    [-w * self.c(2) * xp.sin(), -self.c(1) * xn.sin() * t],
                )
            }
        }
    }

    pub fn value(&self, xp: f64, xn: f64) -> f64 {
        self.value_grad(xp, xn).0
    }

    /// Taylor coefficients of `x_n ↦ V(x', x_n)` at `x_n = 0`.
    pub fn normal_taylor(&self, xp: f64, len: usize) -> Series {
        let mut s = Series::zeros(len);
        let cosine = |s: &mut Series, c0: f64, c1: f64, scale: f64| {
            s.0[0] = (c0 + c1) * scale;
            let mut fact = 1.0;
            let mut m = 2;
            while m < len {
                fact *= ((m - 1) * m) as f64;
                let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
                s.0[m] = scale * c1 * sign / fact;
                m += 2;
            }
        };
        match self.kind {
            PotentialKind::ConstantBarrier => s.0[0] = self.c(0),
            PotentialKind::PolynomialBarrier => {
                for (i, c) in self.coefficients.iter().enumerate().take(len) {
                    s.0[i] = *c;
                }
            }
            PotentialKind::CosineWell => cosine(&mut s, self.c(0), self.c(1), 1.0),
            PotentialKind::SeparableProduct => {
                cosine(&mut s, self.c(0), self.c(1), 1.0 + self.c(2) * xp.cos())
            }
        }
        s
    }

    pub fn depends_on_tangential(&self) -> bool {
        self.kind == PotentialKind::SeparableProduct && self.c(2) != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    Interval1d,
    HalfplaneCylinder,
    SeparableTorus,
    Strip2d,
}

/// Axis extent; `periodic` axes identify `lo` with `hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelProblem {
    pub name: String,
    pub potential: PotentialSpec,
    pub energy: f64,
    pub geometry: Geometry,
    /// Tangential axis (`None` for one-dimensional models).
    pub tangential: Option<Axis>,
    pub normal: Axis,
    /// Collar half-width r₀ in ambient distance.
    pub collar_width: f64,
    /// min of V − E over the collar probe grid.
    pub margin: f64,
    /// Ambient distance from Γ to the first point with V = E (min over x').
    pub forbidden_width: Option<f64>,
    pub params: BTreeMap<String, f64>,
}

const MODEL_NAMES: [&str; 4] = ["halfplane-unit", "barrier-1d", "separable-torus", "strip-2d"];

pub fn known_models() -> &'static [&'static str] {
    &MODEL_NAMES
}

fn take(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<BTreeMap<String, f64>> {
    for k in params.keys() {
        if !allowed.iter().any(|(a, _)| a == k) {
            return Err(Error::param(k, "not a parameter of this model"));
        }
    }
    let mut out = BTreeMap::new();
    for (k, default) in allowed {
        let v = params.get(*k).copied().unwrap_or(*default);
        if !v.is_finite() {
            return Err(Error::param(k, "must be finite"));
        }
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

fn in_range(p: &BTreeMap<String, f64>, key: &str, lo: f64, hi: f64) -> Result<f64> {
    let v = p[key];
    if v < lo || v > hi {
        return Err(Error::param(key, format!("{v} outside [{lo}, {hi}]")));
    }
    Ok(v)
}

/// Builds and validates one of the catalogue models.
pub fn make_model(name: &str, params: &BTreeMap<String, f64>) -> Result<ModelProblem> {
    let tau = 2.0 * PI;
    let (potential, energy, geometry, tangential, normal, p) = match name {
        "halfplane-unit" => {
            let p = take(params, &[("E", 0.0), ("L", tau), ("depth", 4.0)])?;
            let e = p["E"];
            let l = in_range(&p, "L", 0.1, 1e3)?;
            let depth = in_range(&p, "depth", 0.5, 100.0)?;
            (
                PotentialSpec { kind: PotentialKind::ConstantBarrier, coefficients: vec![e + 1.0] },
                e,
                Geometry::HalfplaneCylinder,
                Some(Axis { lo: 0.0, hi: l, periodic: true }),
                Axis { lo: 0.0, hi: depth, periodic: false },
                p,
            )
        }
        "barrier-1d" => {
            let p = take(params, &[("a", 1.0), ("E", 0.0)])?;
            let a = in_range(&p, "a", 1e-3, 1e3)?;
            let e = p["E"];
            (
                PotentialSpec {
                    kind: PotentialKind::PolynomialBarrier,
                    coefficients: vec![e + a, 2.0 * a, a],
                },
                e,
                Geometry::Interval1d,
                None,
                Axis { lo: 0.0, hi: 1.0, periodic: false },
                p,
            )
        }
        "separable-torus" => {
            let p = take(params, &[("E", 0.5), ("W0", 1.0), ("W1", 1.0)])?;
            let w0 = p["W0"];
            let w1 = in_range(&p, "W1", 0.0, 1e3)?;
            let e = p["E"];
            (
                PotentialSpec { kind: PotentialKind::CosineWell, coefficients: vec![w0, w1] },
                e,
                Geometry::SeparableTorus,
                Some(Axis { lo: 0.0, hi: tau, periodic: true }),
                Axis { lo: -PI, hi: PI, periodic: true },
                p,
            )
        }
        "strip-2d" => {
            let p = take(params, &[("E", 0.5), ("W0", 1.0), ("W1", 1.0), ("beta", 0.2)])?;
            let beta = in_range(&p, "beta", -0.9, 0.9)?;
            let w1 = in_range(&p, "W1", 0.0, 1e3)?;
            (
                PotentialSpec {
                    kind: PotentialKind::SeparableProduct,
                    coefficients: vec![p["W0"], w1, beta],
                },
                p["E"],
                Geometry::Strip2d,
                Some(Axis { lo: 0.0, hi: tau, periodic: true }),
                Axis { lo: -PI, hi: PI, periodic: false },
                p,
            )
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    let mut model = ModelProblem {
        name: name.to_string(),
        potential,
        energy,
        geometry,
        tangential,
        normal,
        collar_width: 0.0,
        margin: 0.0,
        forbidden_width: None,
        params: p,
    };
    model.validate()?;
    Ok(model)
}

impl ModelProblem {
    pub fn dim(&self) -> usize {
        if self.tangential.is_some() {
            2
        } else {
            1
        }
    }

    /// Tangential period L'.
    pub fn tangential_length(&self) -> f64 {
        self.tangential.map(|a| a.length()).unwrap_or(0.0)
    }

    /// Whether `V` depends on `x_n` only.
    pub fn is_separable(&self) -> bool {
        !self.potential.depends_on_tangential()
    }

    /// The collar extends to negative `x_n` as well.
    pub fn two_sided(&self) -> bool {
        self.normal.lo < 0.0
    }

    fn split(&self, point: &[f64]) -> Result<(f64, f64)> {
        match (self.dim(), point.len()) {
            (1, 1) => Ok((0.0, point[0])),
            (2, 2) => Ok((point[0], point[1])),
            _ => Err(Error::Precondition(format!(
                "point has {} coordinates, model is {}-dimensional",
                point.len(),
                self.dim()
            ))),
        }
    }

    fn inside(&self, xp: f64, xn: f64) -> bool {
        let eps = 1e-12;
        let ok_n = xn >= self.normal.lo - eps && xn <= self.normal.hi + eps;
        let ok_t = self
            .tangential
            .map(|a| xp >= a.lo - eps && xp <= a.hi + eps)
            .unwrap_or(true);
        ok_n && ok_t
    }

    /// `(V(x), ∇V(x))`; the gradient has one entry per coordinate.
    pub fn eval_potential(&self, point: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (xp, xn) = self.split(point)?;
        if !self.inside(xp, xn) {
            return Err(Error::OutsideDomain(point.to_vec()));
        }
        let (v, g) = self.potential.value_grad(xp, xn);
        Ok(if self.dim() == 1 { (v, vec![g[1]]) } else { (v, g.to_vec()) })
    }

    /// V − E without domain checks.
    pub fn excess(&self, xp: f64, xn: f64) -> f64 {
        self.potential.value(xp, xn) - self.energy
    }

    /// For separable models, `W(x_n) − E`.
    pub fn normal_excess(&self, xn: f64) -> f64 {
        self.excess(0.0, xn)
    }

    /// Tangential probe nodes used for validation.
    fn tangential_probe(&self) -> Vec<f64> {
        match self.tangential {
            Some(a) if self.potential.depends_on_tangential() => {
                let n = 256;
                (0..n).map(|i| a.lo + a.length() * i as f64 / n as f64).collect()
            }
            _ => vec![0.0],
        }
    }

    fn validate(&mut self) -> Result<()> {
        let probe = self.tangential_probe();
        let mut m = f64::INFINITY;
        for &xp in &probe {
            let ex = self.excess(xp, 0.0);
            if !ex.is_finite() {
                return Err(Error::InvariantViolation {
                    point: vec![xp, 0.0],
                    reason: "V is not finite".into(),
                });
            }
            if ex <= 0.0 {
                return Err(Error::InvariantViolation {
                    point: self.point_of(xp, 0.0),
                    reason: format!("Γ touches the allowed region: V − E = {ex:.3e} ≤ 0"),
                });
            }
            m = m.min(ex);
        }
        let ds = 1e-3 * self.normal.hi.max(-self.normal.lo).max(1.0);
        // First point away from Γ with V − E ≤ m/2, on either side.
        let sides: &[f64] = if self.two_sided() { &[1.0, -1.0] } else { &[1.0] };
        let mut reach = f64::INFINITY;
        let mut forbidden = f64::INFINITY;
        for &xp in &probe {
            for &sgn in sides {
                let extent = if sgn > 0.0 { self.normal.hi } else { -self.normal.lo };
                let steps = (extent / ds).floor() as usize;
                let mut hit_half = extent;
                let mut hit_zero = f64::INFINITY;
                for i in 1..=steps {
                    let s = i as f64 * ds;
                    let ex = self.excess(xp, sgn * s);
                    if ex <= m / 2.0 && hit_half == extent {
                        hit_half = s;
                    }
                    if ex <= 0.0 {
                        let f = |t: f64| self.excess(xp, sgn * t);
                        let mut conv = roots::SimpleConvergency { eps: 1e-15, max_iter: 200 };
                        hit_zero = roots::find_root_brent(s - ds, s, f, &mut conv).unwrap_or(s);
                        break;
                    }
                }
                reach = reach.min(hit_half);
                forbidden = forbidden.min(hit_zero);
            }
        }
        self.collar_width = 0.5 * reach;
        self.forbidden_width = forbidden.is_finite().then_some(forbidden);
        // Margin over the collar grid.
        let n = 200;
        let mut margin = f64::INFINITY;
        for &xp in &probe {
            for &sgn in sides {
                for i in 0..=n {
                    let xn = sgn * self.collar_width * i as f64 / n as f64;
                    margin = margin.min(self.excess(xp, xn));
                }
            }
        }
        if margin <= 0.0 {
            return Err(Error::InvariantViolation {
                point: vec![],
                reason: "V − E not positive on the collar".into(),
            });
        }
        self.margin = margin;
        if self.geometry == Geometry::SeparableTorus {
            for i in 1..=64 {
                let x = PI * i as f64 / 64.0;
                if (self.excess(0.0, x) - self.excess(0.0, -x)).abs() > 1e-12 {
                    return Err(Error::InvariantViolation {
                        point: vec![0.0, x],
                        reason: "torus potential must be even in x_n".into(),
                    });
                }
            }
        }
        Ok(())
    }

    fn point_of(&self, xp: f64, xn: f64) -> Vec<f64> {
        if self.dim() == 1 {
            vec![xn]
        } else {
            vec![xp, xn]
        }
    }

    /// Agmon distance from Γ to the edge of the collar, min over x'.
    pub fn collar_agmon_width(&self) -> f64 {
        self.tangential_probe()
            .iter()
            .map(|&xp| {
                let f = |t: f64| self.excess(xp, t).max(0.0).sqrt();
                quadrature::double_exponential::integrate(f, 0.0, self.collar_width, 1e-14).integral
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Discretization and semiclassical parameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SemiclassicalParams {
    pub h: f64,
    pub lambda: f64,
    pub m_plateau: f64,
    pub delta: f64,
    pub zeta: f64,
    pub rho_grid: Vec<f64>,
    pub grid: Vec<usize>,
}

impl SemiclassicalParams {
    /// ζ defaults to e^{−3M/4}.
    pub fn new(
        h: f64,
        lambda: f64,
        m_plateau: f64,
        delta: f64,
        rho_grid: Vec<f64>,
        grid: Vec<usize>,
    ) -> Self {
        SemiclassicalParams {
            h,
            lambda,
            m_plateau,
            delta,
            zeta: (-0.75 * m_plateau).exp(),
            rho_grid,
            grid,
        }
    }

    pub fn validate(&self, model: &ModelProblem) -> Result<()> {
        for (name, v) in [("h", self.h), ("lambda", self.lambda), ("M", self.m_plateau), ("delta", self.delta), ("zeta", self.zeta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        let (lo, hi) = ((-self.m_plateau).exp(), (-0.5 * self.m_plateau).exp());
        if !(self.zeta > lo && self.zeta < hi) {
            return Err(Error::param("zeta", format!("must lie in (e^-M, e^-M/2) = ({lo:.3e}, {hi:.3e})")));
        }
        let rho_max = model.collar_agmon_width();
        let mut prev = 0.0;
        for &r in &self.rho_grid {
            if !(r > prev && r < rho_max) {
                return Err(Error::param("rho_grid", format!("must be increasing inside (0, {rho_max:.4})")));
            }
            prev = r;
        }
        if self.grid.iter().any(|&n| n < 16) {
            return Err(Error::param("grid", "all sizes must be ≥ 16"));
        }
        Ok(())
    }
}
