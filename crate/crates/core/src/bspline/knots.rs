use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clamped, nondecreasing knot vector of a B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidKnots(format!(
                "{} knots cannot carry a degree-{degree} basis",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidKnots("knots must be finite and nondecreasing".into()));
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if knots[..=degree].iter().any(|&k| k != first)
            || knots[knots.len() - degree - 1..].iter().any(|&k| k != last)
            || first >= last
        {
            return Err(Error::InvalidKnots("knot vector is not clamped".into()));
        }
        Ok(Self { degree, knots })
    }

    /// Uniform interior knots on `[0, 1]`, end knots repeated `degree + 1` times.
    pub fn clamped_uniform(count: usize, degree: usize) -> Result<Self> {
        if count < degree + 1 {
            return Err(Error::InvalidKnots(format!(
                "{count} control points cannot carry a degree-{degree} basis"
            )));
        }
        let spans = count - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..spans).map(|k| k as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions (control points along this direction).
    pub fn count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Distinct non-empty knot intervals `[lo, hi)`.
    pub fn spans(&self) -> Vec<(f64, f64)> {
        self.knots
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[0], w[1]))
            .collect()
    }

    fn check(&self, u: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&u) {
            return Err(Error::ParameterOutOfRange { value: u, lo, hi });
        }
        Ok(())
    }

    /// Index `s` with `knots[s] ≤ u < knots[s+1]`; the right end maps to the
    /// last non-empty span.
    pub fn find_span(&self, u: f64) -> Result<usize> {
        self.check(u)?;
        let n = self.count() - 1;
        let p = self.degree;
        if u >= self.knots[n + 1] {
            return Ok(n);
        }
        let (mut lo, mut hi) = (p, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    fn nonzero_at_degree(&self, span: usize, u: f64, p: usize) -> Vec<f64> {
        let k = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Span index and the `degree + 1` basis values `N_{span−p..=span}(u)`.
    pub fn nonzero_basis(&self, u: f64) -> Result<(usize, Vec<f64>)> {
        let span = self.find_span(u)?;
        Ok((span, self.nonzero_at_degree(span, u, self.degree)))
    }

    /// As [`Self::nonzero_basis`], plus first derivatives.
    pub fn nonzero_basis_derivs(&self, u: f64) -> Result<(usize, Vec<f64>, Vec<f64>)> {
        let span = self.find_span(u)?;
        let p = self.degree;
        let values = self.nonzero_at_degree(span, u, p);
        let mut derivs = vec![0.0; p + 1];
        if p > 0 {
            // lower degree values N_{span−p+1..=span, p−1}
            let lower = self.nonzero_at_degree(span, u, p - 1);
            let k = &self.knots;
            for (r, d) in derivs.iter_mut().enumerate() {
                let i = span - p + r;
                let a = if r >= 1 { lower[r - 1] } else { 0.0 };
                let b = if r < p { lower[r] } else { 0.0 };
                let da = k[i + p] - k[i];
                let db = k[i + p + 1] - k[i + 1];
                let ta = if da > 0.0 { a / da } else { 0.0 };
                let tb = if db > 0.0 { b / db } else { 0.0 };
                *d = p as f64 * (ta - tb);
            }
        }
        Ok((span, values, derivs))
    }
}

/// All `count` basis values at `u` (zeros outside the local support).
pub fn basis(u: f64, kv: &KnotVector) -> Result<Vec<f64>> {
    let (span, local) = kv.nonzero_basis(u)?;
    let mut out = vec![0.0; kv.count()];
    let start = span - kv.degree();
    out[start..start + local.len()].copy_from_slice(&local);
    Ok(out)
}
