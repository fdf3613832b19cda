//! Agmon metric `(V − E)_+ |dx|²`, distance fields, level sets Γ_ρ and the
//! collar map `(x', ρ) ↔ x`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::ModelProblem;

/// Uniform nodes `lo + i·step`, `i < n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridAxis {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }

    pub fn hi(&self) -> f64 {
        self.node(self.n - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    /// The hypersurface Γ = {x_n = 0}.
    Gamma,
    /// The caustic Λ_E, seeded by every node of the allowed region.
    Caustic,
}

/// Resolution of a distance computation. The normal range must contain
/// `x_n = 0` as a node when the source is Γ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldGrid {
    pub tangential_nodes: usize,
    pub normal_lo: f64,
    pub normal_hi: f64,
    pub normal_nodes: usize,
}

impl FieldGrid {
    /// Γ-sourced grid on `[0, hi]`.
    pub fn collar(tangential_nodes: usize, hi: f64, normal_nodes: usize) -> Self {
        FieldGrid { tangential_nodes, normal_lo: 0.0, normal_hi: hi, normal_nodes }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DistanceField {
    #[serde(skip)]
    pub model: ModelProblem,
    pub source: Source,
    /// Periodic tangential nodes (absent in 1D).
    pub tangential: Option<GridAxis>,
    pub normal: GridAxis,
    /// Row-major: `values[j * nt + i]` at `(x'_i, x_n,j)`.
    pub values: Vec<f64>,
}

#[derive(Copy, Clone, PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// √((V − E)_+), the Agmon line-element density.
pub fn agmon_density(model: &ModelProblem, xp: f64, xn: f64) -> f64 {
    model.excess(xp, xn).max(0.0).sqrt()
}

/// ∫₀ˢ √((V(x', t) − E)_+) dt by double-exponential quadrature (signed in s).
pub fn agmon_profile(model: &ModelProblem, xp: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let f = |t: f64| agmon_density(model, xp, t);
    let (a, b, sign) = if s > 0.0 { (0.0, s, 1.0) } else { (s, 0.0, -1.0) };
    sign * quadrature::double_exponential::integrate(f, a, b, 1e-15).integral
}

/// Inverse of [`agmon_profile`] on the positive side of Γ.
pub fn agmon_profile_inverse(model: &ModelProblem, xp: f64, rho: f64) -> Result<f64> {
    if rho == 0.0 {
        return Ok(0.0);
    }
    let hi_limit = model.forbidden_width.unwrap_or(model.normal.hi).min(model.normal.hi);
    // Bracket by doubling from a local linearization.
    let mut hi = rho / agmon_density(model, xp, 0.0).max(1e-300);
    while agmon_profile(model, xp, hi.min(hi_limit)) < rho {
        if hi >= hi_limit {
            return Err(Error::Precondition(format!("ρ = {rho} lies beyond the forbidden region")));
        }
        hi *= 2.0;
    }
    let hi = hi.min(hi_limit);
    let f = |s: f64| agmon_profile(model, xp, s) - rho;
    let mut conv = roots::SimpleConvergency { eps: 1e-16, max_iter: 200 };
    roots::find_root_brent(0.0, hi, f, &mut conv)
        .map_err(|e| Error::Numerical(format!("profile inversion: {e:?}")))
}

/// Shortest-path Agmon distance on the weighted grid graph (2 neighbours in
/// 1D, 8 in 2D, edge weight = mean endpoint density × edge length).
pub fn agmon_distance(model: &ModelProblem, source: Source, grid: FieldGrid) -> Result<DistanceField> {
    if grid.normal_nodes < 2 || grid.normal_hi <= grid.normal_lo {
        return Err(Error::param("grid", "normal range must be nonempty"));
    }
    let step = (grid.normal_hi - grid.normal_lo) / (grid.normal_nodes - 1) as f64;
    let normal = GridAxis { lo: grid.normal_lo, step, n: grid.normal_nodes };
    let tangential = model.tangential.map(|a| GridAxis {
        lo: a.lo,
        step: a.length() / grid.tangential_nodes as f64,
        n: grid.tangential_nodes,
    });
    let nt = tangential.map(|t| t.n).unwrap_or(1);
    let nn = normal.n;
    let xp_of = |i: usize| tangential.map(|t| t.node(i)).unwrap_or(0.0);
    let mut density = vec![0.0; nt * nn];
    let mut excess = vec![0.0; nt * nn];
    for j in 0..nn {
        for i in 0..nt {
            let ex = model.excess(xp_of(i), normal.node(j));
            excess[j * nt + i] = ex;
            density[j * nt + i] = ex.max(0.0).sqrt();
        }
    }
    let mut dist = vec![f64::INFINITY; nt * nn];
    let mut heap = BinaryHeap::new();
    match source {
        Source::Gamma => {
            let j0f = -normal.lo / step;
            let j0 = j0f.round();
            if (j0f - j0).abs() > 1e-9 || j0 < 0.0 || j0 as usize >= nn {
                return Err(Error::Precondition("Γ = {x_n = 0} must be a grid row".into()));
            }
            let j0 = j0 as usize;
            for i in 0..nt {
                let k = j0 * nt + i;
                if excess[k] <= 0.0 {
                    return Err(Error::Precondition(format!(
                        "source meets the allowed region at x' = {}",
                        xp_of(i)
                    )));
                }
                dist[k] = 0.0;
                heap.push(Item(0.0, k));
            }
        }
        Source::Caustic => {
            for (k, ex) in excess.iter().enumerate() {
                if *ex <= 0.0 {
                    dist[k] = 0.0;
                    heap.push(Item(0.0, k));
                }
            }
            if heap.is_empty() {
                return Err(Error::Precondition("source is empty: no allowed nodes".into()));
            }
        }
    }
    let dt = tangential.map(|t| t.step).unwrap_or(0.0);
    let mut nbrs: Vec<(isize, isize, f64)> = vec![(0, 1, step), (0, -1, step)];
    if tangential.is_some() {
        let diag = (dt * dt + step * step).sqrt();
        nbrs.extend_from_slice(&[(1, 0, dt), (-1, 0, dt), (1, 1, diag), (1, -1, diag), (-1, 1, diag), (-1, -1, diag)]);
    }
    while let Some(Item(d, k)) = heap.pop() {
        if d > dist[k] {
            continue;
        }
        let (j, i) = (k / nt, k % nt);
        for &(di, dj, len) in &nbrs {
            let jj = j as isize + dj;
            if jj < 0 || jj >= nn as isize {
                continue;
            }
            let ii = (i as isize + di).rem_euclid(nt as isize) as usize;
            let kk = jj as usize * nt + ii;
            let nd = d + 0.5 * (density[k] + density[kk]) * len;
            if nd < dist[kk] {
                dist[kk] = nd;
                heap.push(Item(nd, kk));
            }
        }
    }
    Ok(DistanceField { model: model.clone(), source, tangential, normal, values: dist })
}

impl DistanceField {
    pub fn nt(&self) -> usize {
        self.tangential.map(|t| t.n).unwrap_or(1)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nt() + i]
    }

    fn xp(&self, i: usize) -> f64 {
        self.tangential.map(|t| t.node(i)).unwrap_or(0.0)
    }

    /// Bilinear interpolation (periodic in x').
    pub fn interpolate(&self, xp: f64, xn: f64) -> f64 {
        let nt = self.nt();
        let fj = ((xn - self.normal.lo) / self.normal.step).clamp(0.0, (self.normal.n - 1) as f64);
        let j = (fj.floor() as usize).min(self.normal.n - 2);
        let wj = fj - j as f64;
        match self.tangential {
            None => (1.0 - wj) * self.at(0, j) + wj * self.at(0, j + 1),
            Some(t) => {
                let fi = ((xp - t.lo) / t.step).rem_euclid(nt as f64);
                let i = (fi.floor() as usize) % nt;
                let wi = fi - fi.floor();
                let i1 = (i + 1) % nt;
                (1.0 - wj) * ((1.0 - wi) * self.at(i, j) + wi * self.at(i1, j))
                    + wj * ((1.0 - wi) * self.at(i, j + 1) + wi * self.at(i1, j + 1))
            }
        }
    }

    /// Largest violation of the 1-Lipschitz property over all grid edges.
    pub fn lipschitz_excess(&self) -> f64 {
        let nt = self.nt();
        let mut worst: f64 = 0.0;
        let dens = |i: usize, j: usize| agmon_density(&self.model, self.xp(i), self.normal.node(j));
        for j in 0..self.normal.n {
            for i in 0..nt {
                if j + 1 < self.normal.n {
                    let w = 0.5 * (dens(i, j) + dens(i, j + 1)) * self.normal.step;
                    worst = worst.max((self.at(i, j) - self.at(i, j + 1)).abs() - w);
                }
                if let Some(t) = self.tangential {
                    let i1 = (i + 1) % nt;
                    let w = 0.5 * (dens(i, j) + dens(i1, j)) * t.step;
                    worst = worst.max((self.at(i, j) - self.at(i1, j)).abs() - w);
                }
            }
        }
        worst
    }

    /// max | |∇d|² − (V − E) | over interior nodes with `margin` cells of
    /// clearance from the source row and the far edge.
    pub fn eikonal_residual(&self, margin: usize) -> f64 {
        let nt = self.nt();
        let mut worst: f64 = 0.0;
        for j in margin..self.normal.n.saturating_sub(margin) {
            let xn = self.normal.node(j);
            if xn.abs() < margin as f64 * self.normal.step {
                continue;
            }
            for i in 0..nt {
                let dn = (self.at(i, j + 1) - self.at(i, j - 1)) / (2.0 * self.normal.step);
                let dx = match self.tangential {
                    Some(t) => (self.at((i + 1) % nt, j) - self.at((i + nt - 1) % nt, j)) / (2.0 * t.step),
                    None => 0.0,
                };
                let ex = self.model.excess(self.xp(i), xn).max(0.0);
                worst = worst.max((dn * dn + dx * dx - ex).abs());
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        if self.tangential.is_some() {
            w.write_record(["x_tangential", "x_normal", "d_E"]).map_err(io)?;
        } else {
            w.write_record(["x", "d_E"]).map_err(io)?;
        }
        for j in 0..self.normal.n {
            for i in 0..self.nt() {
                let mut rec = vec![];
                if self.tangential.is_some() {
                    rec.push(format!("{:.12e}", self.xp(i)));
                }
                rec.push(format!("{:.12e}", self.normal.node(j)));
                rec.push(format!("{:.12e}", self.at(i, j)));
                w.write_record(&rec).map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples of Γ_ρ with ambient and Agmon line-element weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelSet {
    pub rho: f64,
    /// `(x', x_n)`; `x' = 0` in 1D.
    pub points: Vec<[f64; 2]>,
    pub ambient_weights: Vec<f64>,
    pub agmon_weights: Vec<f64>,
    pub dim: usize,
    /// Whether the samples come from exact profile inversion.
    pub exact: bool,
}

impl LevelSet {
    /// Range of the squared-norm ratio, i.e. of (V − E)^{(n−1)/2} on the samples.
    pub fn weight_ratio_bounds(&self) -> (f64, f64) {
        self.ambient_weights
            .iter()
            .zip(&self.agmon_weights)
            .map(|(a, g)| g / a)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)))
    }

    /// Level Γ_ρ of a separable model sampled at `nt` uniform tangential nodes.
    pub fn separable(model: &ModelProblem, rho: f64, nt: usize) -> Result<Self> {
        let s = agmon_profile_inverse(model, 0.0, rho)?;
        Ok(Self::at_height(model, rho, s, nt, true))
    }

    /// Samples on the line `x_n = s`.
    pub fn at_height(model: &ModelProblem, rho: f64, s: f64, nt: usize, exact: bool) -> Self {
        match model.tangential {
            None => LevelSet {
                rho,
                points: vec![[0.0, s]],
                ambient_weights: vec![1.0],
                agmon_weights: vec![1.0],
                dim: 1,
                exact,
            },
            Some(a) => {
                let dx = a.length() / nt as f64;
                let points: Vec<[f64; 2]> = (0..nt).map(|i| [a.lo + dx * i as f64, s]).collect();
                let agmon = points.iter().map(|p| dx * agmon_density(model, p[0], p[1])).collect();
                LevelSet { rho, points, ambient_weights: vec![dx; nt], agmon_weights: agmon, dim: 2, exact }
            }
        }
    }
}

/// Γ_ρ extracted from a Γ-sourced field. Separable models use exact profile
/// inversion; otherwise each tangential column is crossed by linear
/// interpolation along grid edges.
pub fn level_set_at(field: &DistanceField, rho: f64) -> Result<LevelSet> {
    if field.source != Source::Gamma {
        return Err(Error::Precondition("level sets need a Γ-sourced field".into()));
    }
    let model = &field.model;
    let rmax = model.collar_agmon_width();
    if !(rho > 0.0 && rho < rmax) {
        return Err(Error::Precondition(format!("ρ = {rho} outside (0, {rmax:.6})")));
    }
    let nt = field.nt();
    if model.is_separable() {
        return LevelSet::separable(model, rho, nt);
    }
    let t = field.tangential.expect("non-separable models are two-dimensional");
    let dx = t.step;
    let mut points = Vec::with_capacity(nt);
    let mut agmon = Vec::with_capacity(nt);
    for i in 0..nt {
        let mut found = None;
        for j in 0..field.normal.n - 1 {
            if field.normal.node(j) < 0.0 {
                continue;
            }
            let (a, b) = (field.at(i, j), field.at(i, j + 1));
            if a <= rho && b >= rho && b > a {
                let w = (rho - a) / (b - a);
                found = Some(field.normal.node(j) + w * field.normal.step);
                break;
            }
        }
        let s = found.ok_or_else(|| Error::Precondition(format!("ρ = {rho} not reached in column {i}")))?;
        let xp = t.node(i);
        points.push([xp, s]);
        agmon.push(dx * agmon_density(model, xp, s));
    }
    Ok(LevelSet { rho, points, ambient_weights: vec![dx; nt], agmon_weights: agmon, dim: 2, exact: false })
}

/// Collar coordinates `(x', ρ)` on the side `x_n ≥ 0` of Γ.
#[derive(Debug, Clone)]
pub struct CollarMap {
    field: DistanceField,
}

pub fn collar_map(model: &ModelProblem, field: &DistanceField) -> Result<CollarMap> {
    if field.source != Source::Gamma {
        return Err(Error::Precondition("collar map needs a Γ-sourced field".into()));
    }
    if model.collar_width < 4.0 * field.normal.step {
        return Err(Error::Precondition(format!(
            "collar width {:.4} is below 4 grid cells ({:.4})",
            model.collar_width,
            4.0 * field.normal.step
        )));
    }
    Ok(CollarMap { field: field.clone() })
}

impl CollarMap {
    fn gradient(&self, xp: f64, xn: f64) -> (f64, f64) {
        let hn = self.field.normal.step;
        let ht = self.field.tangential.map(|t| t.step).unwrap_or(1.0);
        let d = |a: f64, b: f64| self.field.interpolate(a, b);
        let gn = (d(xp, xn + 0.5 * hn) - d(xp, (xn - 0.5 * hn).max(0.0))) / (xn + 0.5 * hn - (xn - 0.5 * hn).max(0.0));
        let gt = (d(xp + 0.5 * ht, xn) - d(xp - 0.5 * ht, xn)) / ht;
        (gt, gn)
    }

    /// `x ↦ (x', ρ)`.
    pub fn to_collar(&self, xp: f64, xn: f64) -> (f64, f64) {
        let model = &self.field.model;
        if model.is_separable() {
            return (xp, agmon_profile(model, xp, xn));
        }
        let rho = self.field.interpolate(xp, xn);
        // Descend along −∇d to Γ; x' is constant on these curves.
        let h = 0.5 * self.field.normal.step;
        let (mut a, mut b) = (xp, xn);
        for _ in 0..100_000 {
            if b <= 0.0 {
                break;
            }
            let (gt, gn) = self.gradient(a, b);
            let norm = (gt * gt + gn * gn).sqrt().max(1e-300);
            let step = h.min(b / (gn / norm).max(1e-3));
            a -= step * gt / norm;
            b -= step * gn / norm;
        }
        (self.wrap(a), rho)
    }

    /// `(x', ρ) ↦ x`.
    pub fn from_collar(&self, xp: f64, rho: f64) -> Result<(f64, f64)> {
        let model = &self.field.model;
        if model.is_separable() {
            return Ok((xp, agmon_profile_inverse(model, xp, rho)?));
        }
        let h = 0.5 * self.field.normal.step;
        let (mut a, mut b) = (xp, 0.0f64);
        let mut d = 0.0;
        for _ in 0..100_000 {
            if d >= rho {
                break;
            }
            let (gt, gn) = self.gradient(a, b.max(0.5 * h));
            let norm = (gt * gt + gn * gn).sqrt().max(1e-300);
            let speed = norm.max(1e-12);
            let step = h.min((rho - d) / speed);
            a += step * gt / norm;
            b += step * gn / norm;
            d = self.field.interpolate(a, b);
            if b > self.field.normal.hi() {
                return Err(Error::Precondition("ρ beyond the field".into()));
            }
        }
        Ok((self.wrap(a), b))
    }

    fn wrap(&self, xp: f64) -> f64 {
        match self.field.model.tangential {
            Some(t) => t.lo + (xp - t.lo).rem_euclid(t.length()),
            None => xp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::make_model;
    use std::collections::BTreeMap;

    fn model(name: &str) -> ModelProblem {
        make_model(name, &BTreeMap::new()).unwrap()
    }

    #[test]
    fn flat_distance_is_normal_coordinate() {
        let m = model("halfplane-unit");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(32, 1.0, 101)).unwrap();
        for j in 0..101 {
            for i in 0..32 {
                assert!((f.at(i, j) - f.normal.node(j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn barrier_1d_matches_closed_form() {
        let m = model("barrier-1d");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(1, 1.0, 1001)).unwrap();
        for j in 0..1001 {
            let x = f.normal.node(j);
            let exact = x + x * x / 2.0;
            assert!((f.at(0, j) - exact).abs() < 1e-6, "{x}");
        }
        // quadrature oracle for the profile
        let q = agmon_profile(&m, 0.0, 0.5);
        assert!((q - 0.625).abs() < 1e-13, "{:e}", q - 0.625);
    }

    #[test]
    fn barrier_level_set_point() {
        let m = model("barrier-1d");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(1, 1.0, 201)).unwrap();
        let l = level_set_at(&f, 0.3).unwrap();
        assert!((l.points[0][1] - (1.6f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn torus_level_set_inverts_profile() {
        let m = model("separable-torus");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(16, 1.0, 201)).unwrap();
        let l = level_set_at(&f, 0.1).unwrap();
        let s = l.points[0][1];
        let q = quadrature::double_exponential::integrate(|t: f64| (0.5 + t.cos()).sqrt(), 0.0, s, 1e-15).integral;
        assert!((q - 0.1).abs() < 1e-13);
        let (lo, hi) = l.weight_ratio_bounds();
        assert!(lo <= hi && lo > 0.0);
    }

    #[test]
    fn level_set_rejects_outside_collar() {
        let m = model("separable-torus");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(16, 1.0, 201)).unwrap();
        assert!(level_set_at(&f, 0.0).is_err());
        assert!(level_set_at(&f, 5.0).is_err());
    }

    #[test]
    fn caustic_source_needs_allowed_nodes() {
        let m = model("halfplane-unit");
        assert!(agmon_distance(&m, Source::Caustic, FieldGrid::collar(8, 1.0, 11)).is_err());
        let t = model("separable-torus");
        let grid = FieldGrid { tangential_nodes: 8, normal_lo: -3.0, normal_hi: 3.0, normal_nodes: 121 };
        let f = agmon_distance(&t, Source::Caustic, grid).unwrap();
        // distance to the caustic is largest on Γ
        let j0 = 60;
        assert!(f.at(0, j0) >= f.at(0, j0 + 10));
        assert!(f.at(0, 0) == 0.0);
    }

    #[test]
    fn lipschitz_and_eikonal() {
        let m = model("separable-torus");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(32, 1.0, 201)).unwrap();
        assert!(f.lipschitz_excess() <= 1e-12);
        assert!(f.eikonal_residual(2) < 0.05);
    }

    #[test]
    fn collar_map_roundtrip_strip() {
        let m = model("strip-2d");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(64, 1.0, 101)).unwrap();
        let c = collar_map(&m, &f).unwrap();
        let (xp, rho) = c.to_collar(1.0, 0.3);
        let (a, b) = c.from_collar(xp, rho).unwrap();
        assert!((a - 1.0).abs() < 2.0 * 2.0 * std::f64::consts::PI / 64.0);
        assert!((b - 0.3).abs() < 2.0 * f.normal.step);
    }

    #[test]
    fn collar_too_thin_is_rejected() {
        let m = model("barrier-1d");
        let f = agmon_distance(&m, Source::Gamma, FieldGrid::collar(1, 1.0, 5)).unwrap();
        assert!(collar_map(&m, &f).is_err());
    }
}
