//! Truncated power series with real coefficients.
//!
//! A [`Series`] of length `n` stores the coefficients of `1, t, ..., t^{n-1}`;
//! every operation keeps the length of its left operand. These are the jets
//! used for metric Taylor data in the collar and for exact derivatives of the
//! smooth cutoff profiles.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Series(pub Vec<f64>);

impl Series {
    pub fn zeros(n: usize) -> Self {
        Series(vec![0.0; n])
    }

    pub fn constant(c: f64, n: usize) -> Self {
        let mut s = Series::zeros(n);
        s.0[0] = c;
        s
    }

    /// `c + t` truncated to `n` terms.
    pub fn variable(c: f64, n: usize) -> Self {
        let mut s = Series::constant(c, n);
        if n > 1 {
            s.0[1] = 1.0;
        }
        s
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.0.get(k).copied().unwrap_or(0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        Series(self.0.iter().map(|a| a * c).collect())
    }

    pub fn add_const(&self, c: f64) -> Self {
        let mut s = self.clone();
        s.0[0] += c;
        s
    }

    pub fn recip(&self) -> Self {
        let n = self.len();
        let a0 = self.0[0];
        let mut b = vec![0.0; n];
        b[0] = 1.0 / a0;
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += self.0[j] * b[k - j];
            }
            b[k] = -acc / a0;
        }
        Series(b)
    }

    /// Principal square root; needs a positive constant term.
    pub fn sqrt(&self) -> Self {
        let n = self.len();
        let mut b = vec![0.0; n];
        b[0] = self.0[0].sqrt();
        for k in 1..n {
            let mut acc = self.0[k];
            for j in 1..k {
                acc -= b[j] * b[k - j];
            }
            b[k] = acc / (2.0 * b[0]);
        }
        Series(b)
    }

    pub fn exp(&self) -> Self {
        let n = self.len();
        let mut b = vec![0.0; n];
        b[0] = self.0[0].exp();
        for k in 1..n {
            let mut acc = 0.0;
            for j in 1..=k {
                acc += j as f64 * self.0[j] * b[k - j];
            }
            b[k] = acc / k as f64;
        }
        Series(b)
    }

    /// Antiderivative vanishing at zero (keeps length).
    pub fn integrate(&self) -> Self {
        let n = self.len();
        let mut b = vec![0.0; n];
        for k in 1..n {
            b[k] = self.0[k - 1] / k as f64;
        }
        Series(b)
    }

    pub fn derivative(&self) -> Self {
        let n = self.len();
        let mut b = vec![0.0; n];
        for k in 0..n.saturating_sub(1) {
            b[k] = self.0[k + 1] * (k + 1) as f64;
        }
        Series(b)
    }

    /// `self(g(t))` for an inner series with `g(0) = 0`.
    pub fn compose(&self, g: &Series) -> Self {
        debug_assert!(g.0[0] == 0.0, "inner series must vanish at zero");
        let n = g.len();
        let mut acc = Series::constant(self.coeff(self.len() - 1), n);
        for i in (0..self.len() - 1).rev() {
            acc = &acc * g;
            acc.0[0] += self.0[i];
        }
        acc
    }

    /// Compositional inverse of a series with zero constant term and nonzero
    /// linear term.
    pub fn revert(&self) -> Self {
        let n = self.len();
        let a1 = self.0[1];
        let mut s = Series::zeros(n);
        if n > 1 {
            s.0[1] = 1.0 / a1;
        }
        for k in 2..n {
            let c = self.compose(&s).0[k];
            s.0[k] = -c / a1;
        }
        s
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    /// Derivatives `f^{(k)}(0)` for `k < len`.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect()
    }
}

impl Mul for &Series {
    type Output = Series;
    fn mul(self, rhs: &Series) -> Series {
        let n = self.len();
        let mut c = vec![0.0; n];
        for (i, a) in self.0.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for j in 0..(n - i).min(rhs.len()) {
                c[i + j] += a * rhs.0[j];
            }
        }
        Series(c)
    }
}

impl Add for &Series {
    type Output = Series;
    fn add(self, rhs: &Series) -> Series {
        Series(
            (0..self.len())
                .map(|k| self.0[k] + rhs.coeff(k))
                .collect(),
        )
    }
}

impl Sub for &Series {
    type Output = Series;
    fn sub(self, rhs: &Series) -> Series {
        Series(
            (0..self.len())
                .map(|k| self.0[k] - rhs.coeff(k))
                .collect(),
        )
    }
}

impl Neg for &Series {
    type Output = Series;
    fn neg(self) -> Series {
        self.scale(-1.0)
    }
}
