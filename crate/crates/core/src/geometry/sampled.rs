use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Surface points tagged with their `(u, v)` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampledRepr", into = "SampledRepr")]
pub struct SampledSurface {
    params: Vec<[f64; 2]>,
    points: Vec<Vec3>,
}

impl SampledSurface {
    pub fn new(params: Vec<[f64; 2]>, points: Vec<Vec3>) -> Result<Self> {
        if params.len() != points.len() {
            return Err(Error::mismatch("sampled surface", params.len(), points.len()));
        }
        if let Some(p) = params
            .iter()
            .find(|p| !(0.0..=1.0).contains(&p[0]) || !(0.0..=1.0).contains(&p[1]))
        {
            return Err(Error::Invalid(format!(
                "parameter ({}, {}) outside the unit square",
                p[0], p[1]
            )));
        }
        Ok(Self { params, points })
    }

    pub fn params(&self) -> &[[f64; 2]] {
        &self.params
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Regular `rows × cols` parameter grid over `[0,1]²`, row-major with `u`
/// varying along rows.
pub fn grid_params(rows: usize, cols: usize) -> Vec<[f64; 2]> {
    let step = |k: usize, n: usize| if n > 1 { k as f64 / (n - 1) as f64 } else { 0.5 };
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| [step(i, rows), step(j, cols)]))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct SampledRepr {
    params: Vec<[f64; 2]>,
    points: Vec<[f64; 3]>,
}

impl From<SampledSurface> for SampledRepr {
    fn from(s: SampledSurface) -> Self {
        Self {
            params: s.params,
            points: s.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        }
    }
}

impl TryFrom<SampledRepr> for SampledSurface {
    type Error = Error;

    fn try_from(r: SampledRepr) -> Result<Self> {
        SampledSurface::new(r.params, r.points.into_iter().map(Vec3::from).collect())
    }
}
