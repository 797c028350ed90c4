//! Cubic B-splines on equally spaced knots with a second-difference penalty.

use serde::{Deserialize, Serialize};

/// Cubic B-spline basis over `[lo, hi]`. Inputs outside are clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub n_basis: usize,
}

impl SplineBasis {
    /// `n_basis` must be at least 4.
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Self {
        assert!(n_basis >= 4, "cubic splines need at least 4 basis functions");
        Self { lo, hi, n_basis }
    }

    pub fn covering(values: impl Iterator<Item = f64>, n_basis: usize) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi, n_basis)
    }

    fn width(&self) -> f64 {
        let span = self.hi - self.lo;
        if span > 0.0 {
            span / (self.n_basis - 3) as f64
        } else {
            1.0
        }
    }

    /// Index of the first non-zero basis function and the four non-zero
    /// values at `x`, plus whether `x` had to be clamped.
    pub fn eval(&self, x: f64) -> (usize, [f64; 4], bool) {
        let clamped = x < self.lo || x > self.hi;
        let xc = x.clamp(self.lo, self.hi);
        let intervals = self.n_basis - 3;
        let s = (xc - self.lo) / self.width();
        let i = (s.floor() as usize).min(intervals - 1);
        let u = s - i as f64;
        let u2 = u * u;
        let u3 = u2 * u;
        let b = [
            (1.0 - u).powi(3) / 6.0,
            (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
            (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
            u3 / 6.0,
        ];
        (i, b, clamped)
    }

    /// Dense basis row at `x`.
    pub fn row(&self, x: f64) -> Vec<f64> {
        let (i, b, _) = self.eval(x);
        let mut out = vec![0.0; self.n_basis];
        out[i..i + 4].copy_from_slice(&b);
        out
    }
}

/// `DᵀD` for the second-difference operator on `k` coefficients.
pub fn difference_penalty(k: usize) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; k]; k];
    for r in 0..k.saturating_sub(2) {
        let d = [(r, 1.0), (r + 1, -2.0), (r + 2, 1.0)];
        for &(i, a) in &d {
            for &(j, b) in &d {
                s[i][j] += a * b;
            }
        }
    }
    s
}

/// `S ⊗ I + I ⊗ S` for a `k × k` tensor basis indexed `a * k + b`.
pub fn tensor_penalty(k: usize) -> Vec<Vec<f64>> {
    let s = difference_penalty(k);
    let n = k * k;
    let mut out = vec![vec![0.0; n]; n];
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                // S acting on the first index, identity on the second
                out[a * k + b][c * k + b] += s[a][c];
                // identity on the first index, S on the second
                out[a * k + b][a * k + c] += s[b][c];
            }
        }
    }
    out
}
