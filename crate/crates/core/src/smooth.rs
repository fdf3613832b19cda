//! C^∞ profiles built from the `exp(-1/t)` mollifier, with exact derivative
//! jets obtained through truncated power series.

use crate::series::Series;

/// Smooth step: 0 for `t ≤ 0`, 1 for `t ≥ 1`, flat to all orders at both ends.
pub fn step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        // 1/(1 + e^c) with c = 1/t - 1/(1-t), written to avoid overflow.
        let c = 1.0 / t - 1.0 / (1.0 - t);
        if c > 0.0 {
            let e = (-c).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + c.exp())
        }
    }
}

/// Derivatives `step^{(k)}(t)` for `k = 0..=order`.
pub fn step_jet(t: f64, order: usize) -> Vec<f64> {
    let n = order + 1;
    if t <= 0.0 || t >= 1.0 {
        let mut out = vec![0.0; n];
        out[0] = step(t);
        return out;
    }
    // c(t + e) = 1/(t+e) - 1/(1-t-e) as a series in e.
    let mut c = Series::zeros(n);
    let (mut pt, mut pu) = (1.0 / t, 1.0 / (1.0 - t));
    for m in 0..n {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        c.0[m] = sign * pt - pu;
        pt /= t;
        pu /= 1.0 - t;
    }
    let s = if c.0[0] > 0.0 {
        let e = c.scale(-1.0).exp();
        &e * &e.add_const(1.0).recip()
    } else {
        c.exp().add_const(1.0).recip()
    };
    s.derivatives()
}

/// Smooth transition from 1 (at `t ≤ a`) down to 0 (at `t ≥ b`).
pub fn fall(t: f64, a: f64, b: f64) -> f64 {
    1.0 - step((t - a) / (b - a))
}

/// Plateau bump: 1 on `[lo, hi]`, 0 outside `[lo - w, hi + w]`.
pub fn plateau(u: f64, lo: f64, hi: f64, w: f64) -> f64 {
    step((u - (lo - w)) / w) * (1.0 - step((u - hi) / w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_endpoints_and_symmetry() {
        assert_eq!(step(-0.5), 0.0);
        assert_eq!(step(1.5), 1.0);
        assert!((step(0.5) - 0.5).abs() < 1e-15);
        for &t in &[0.1, 0.27, 0.4] {
            assert!((step(t) + step(1.0 - t) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn jet_matches_finite_differences() {
        for &t in &[0.15, 0.4, 0.5, 0.73, 0.9] {
            let j = step_jet(t, 3);
            let d = 1e-5;
            let fd1 = (step(t + d) - step(t - d)) / (2.0 * d);
            let fd2 = (step(t + d) - 2.0 * step(t) + step(t - d)) / (d * d);
            assert!((j[0] - step(t)).abs() < 1e-15);
            assert!((j[1] - fd1).abs() < 1e-7 * (1.0 + fd1.abs()));
            assert!((j[2] - fd2).abs() < 1e-3 * (1.0 + fd2.abs()));
            let jp = step_jet(t + d, 3);
            let jm = step_jet(t - d, 3);
            let fd3 = (jp[2] - jm[2]) / (2.0 * d);
            assert!((j[3] - fd3).abs() < 1e-5 * (1.0 + fd3.abs()));
        }
    }

    #[test]
    fn plateau_shape() {
        assert_eq!(plateau(0.5, 0.0, 1.0, 0.25), 1.0);
        assert_eq!(plateau(1.3, 0.0, 1.0, 0.25), 0.0);
        assert!(plateau(1.1, 0.0, 1.0, 0.25) > 0.0);
    }
}
