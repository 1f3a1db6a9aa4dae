use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CHAMBERS: usize = 9;

/// Normalised chamber pressures, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; CHAMBERS]", into = "[f64; CHAMBERS]")]
pub struct Actuation([f64; CHAMBERS]);

impl Actuation {
    pub fn new(values: [f64; CHAMBERS]) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::ActuationOutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; CHAMBERS] = values
            .try_into()
            .map_err(|_| Error::mismatch("actuation", CHAMBERS, values.len()))?;
        Self::new(arr)
    }

    /// Projects onto the unit box; NaN maps to 0.
    pub fn clamped(values: [f64; CHAMBERS]) -> Self {
        Self(values.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }))
    }

    pub fn splat(v: f64) -> Result<Self> {
        Self::new([v; CHAMBERS])
    }

    pub fn zeros() -> Self {
        Self([0.0; CHAMBERS])
    }

    pub fn values(&self) -> &[f64; CHAMBERS] {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<[f64; CHAMBERS]> for Actuation {
    type Error = Error;

    fn try_from(v: [f64; CHAMBERS]) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Actuation> for [f64; CHAMBERS] {
    fn from(a: Actuation) -> Self {
        a.0
    }
}
