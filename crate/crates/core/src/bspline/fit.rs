//! Least-squares B-spline surface fitting through the normal equations
//! `(BᵀB + λI)·C = BᵀP + λ·p̄`, with the ridge pulling controls toward the
//! mean sample position. The factorisation depends only on the sample
//! parameters, so [`Fitter`] caches it for repeated fits on one grid.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::bspline::{BSplineSurface, ControlGrid, KnotVector, SurfaceWeights};
use crate::geometry::SampledSurface;
use crate::{Error, Result, Vec3};

pub const DEFAULT_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FittedSurface {
    pub surface: BSplineSurface,
    pub rms_residual: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Fitter {
    template: BSplineSurface,
    params: Vec<[f64; 2]>,
    weights: Vec<SurfaceWeights>,
    ridge: f64,
    factor: Cholesky<f64, Dyn>,
}

impl Fitter {
    pub fn new(params: &[[f64; 2]], rows: usize, cols: usize, degree: usize, ridge: f64) -> Result<Self> {
        let ku = KnotVector::clamped_uniform(rows, degree)?;
        let kv = KnotVector::clamped_uniform(cols, degree)?;
        let unknowns = rows * cols;
        if params.len() < unknowns {
            return Err(Error::UnderdeterminedFit(format!(
                "{} samples for {unknowns} control points",
                params.len()
            )));
        }
        if ridge < 0.0 || !ridge.is_finite() {
            return Err(Error::Invalid(format!("ridge must be non-negative, got {ridge}")));
        }
        for (kvec, axis, dir) in [(&ku, 0, "u"), (&kv, 1, "v")] {
            let mut hit = BTreeSet::new();
            for p in params {
                hit.insert(kvec.find_span(p[axis])?);
            }
            let spans = kvec.count() - kvec.degree();
            if hit.len() < spans {
                return Err(Error::UnderdeterminedFit(format!(
                    "{} of {spans} knot spans in {dir} contain no sample",
                    spans - hit.len()
                )));
            }
        }
        let template = BSplineSurface::new(ku, kv, ControlGrid::zeros(rows, cols))?;
        let weights: Vec<SurfaceWeights> = params
            .iter()
            .map(|p| template.weights(p[0], p[1]))
            .collect::<Result<_>>()?;
        let mut normal = DMatrix::<f64>::zeros(unknowns, unknowns);
        for w in &weights {
            let entries: Vec<(usize, f64)> = w.iter().collect();
            for &(a, wa) in &entries {
                for &(b, wb) in &entries {
                    normal[(a, b)] += wa * wb;
                }
            }
        }
        for k in 0..unknowns {
            normal[(k, k)] += ridge;
        }
        let factor =
            Cholesky::new(normal).ok_or_else(|| Error::UnderdeterminedFit("normal equations are singular".into()))?;
        Ok(Self {
            template,
            params: params.to_vec(),
            weights,
            ridge,
            factor,
        })
    }

    pub fn params(&self) -> &[[f64; 2]] {
        &self.params
    }

    pub fn template(&self) -> &BSplineSurface {
        &self.template
    }

    pub fn fit_points(&self, points: &[Vec3]) -> Result<FittedSurface> {
        if points.len() != self.weights.len() {
            return Err(Error::mismatch("fit samples", self.weights.len(), points.len()));
        }
        let (rows, cols) = self.template.dims();
        let mean = points.iter().sum::<Vec3>() / points.len() as f64;
        let mut rhs = DMatrix::<f64>::zeros(rows * cols, 3);
        for (w, p) in self.weights.iter().zip(points) {
            for (k, wk) in w.iter() {
                for d in 0..3 {
                    rhs[(k, d)] += wk * p[d];
                }
            }
        }
        if self.ridge > 0.0 {
            for k in 0..rows * cols {
                for d in 0..3 {
                    rhs[(k, d)] += self.ridge * mean[d];
                }
            }
        }
        let sol = self.factor.solve(&rhs);
        let control: Vec<Vec3> = (0..rows * cols)
            .map(|k| Vec3::new(sol[(k, 0)], sol[(k, 1)], sol[(k, 2)]))
            .collect();
        let mut sum2 = 0.0;
        let mut max = 0.0f64;
        for (w, p) in self.weights.iter().zip(points) {
            let r = (w.combine(&control) - p).norm();
            sum2 += r * r;
            max = max.max(r);
        }
        let surface = self.template.with_control(ControlGrid::new(rows, cols, control)?)?;
        Ok(FittedSurface {
            surface,
            rms_residual: (sum2 / points.len() as f64).sqrt(),
            max_residual: max,
        })
    }

    pub fn fit(&self, samples: &SampledSurface) -> Result<FittedSurface> {
        if samples.params() != self.params.as_slice() {
            return Err(Error::Invalid(
                "sample parameters differ from the fitter's parameter set".into(),
            ));
        }
        self.fit_points(samples.points())
    }
}

pub fn fit(samples: &SampledSurface, rows: usize, cols: usize, degree: usize, ridge: f64) -> Result<FittedSurface> {
    Fitter::new(samples.params(), rows, cols, degree, ridge)?.fit_points(samples.points())
}
