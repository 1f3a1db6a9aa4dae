//! Paired training runs behind the representation choices: delta versus
//! absolute controls, and a control grid versus dense vertices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fk::model::FlatRegressor;
use crate::fk::{probe_grid, test_error, train_fk, FkConfig, FkDataset, Representation, SurfaceError};
use crate::oracle::{Actuation, VirtualMannequin};
use crate::{Result, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub check: String,
    pub preferred: String,
    pub preferred_error: SurfaceError,
    pub alternative: String,
    pub alternative_error: SurfaceError,
    /// Whether the preferred variant's mean error is not worse.
    pub holds: bool,
}

impl AblationRow {
    fn new(
        check: &str,
        preferred: &str,
        preferred_error: SurfaceError,
        alternative: &str,
        alternative_error: SurfaceError,
    ) -> Self {
        Self {
            check: check.into(),
            preferred: preferred.into(),
            preferred_error,
            alternative: alternative.into(),
            alternative_error,
            holds: preferred_error.mean <= alternative_error.mean,
        }
    }
}

/// Same architecture and budget, delta versus absolute control targets.
pub fn delta_vs_absolute(ds: &FkDataset, vm: &VirtualMannequin, cfg: &FkConfig) -> Result<AblationRow> {
    let delta = train_fk(
        ds,
        &FkConfig {
            representation: Representation::Delta,
            ..cfg.clone()
        },
    )?;
    let absolute = train_fk(
        ds,
        &FkConfig {
            representation: Representation::Absolute,
            ..cfg.clone()
        },
    )?;
    Ok(AblationRow::new(
        "delta_vs_absolute",
        "delta",
        test_error(&delta, vm, ds)?,
        "absolute",
        test_error(&absolute, vm, ds)?,
    ))
}

/// Parameter count of a fully connected net.
fn parameter_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Hidden width giving the parameter count closest to `budget` when all
/// hidden layers share one width.
pub(crate) fn matched_width(budget: usize, input: usize, output: usize, layers: usize) -> usize {
    let count = |h: usize| {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(h, layers));
        dims.push(output);
        parameter_count(&dims)
    };
    (1..=budget.max(1))
        .take_while(|&h| h == 1 || count(h - 1) < budget)
        .min_by_key(|&h| count(h).abs_diff(budget))
        .unwrap_or(1)
}

/// Control-grid network versus a network regressing the dense probe-grid
/// vertices directly, under an equal parameter budget.
pub fn controls_vs_vertices(ds: &FkDataset, vm: &VirtualMannequin, cfg: &FkConfig) -> Result<AblationRow> {
    let controls = train_fk(ds, cfg)?;
    let probe = probe_grid();
    let points_of = |a: &Actuation| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(3 * probe.len());
        for uv in &probe {
            let p: Vec3 = vm.sim_point(a, uv[0], uv[1])?;
            out.extend_from_slice(p.as_slice());
        }
        Ok(out)
    };
    let all_points = ds.actuations.par_iter().map(points_of).collect::<Result<Vec<_>>>()?;
    let inputs: Vec<Vec<f64>> = ds.train.iter().map(|&i| ds.actuations[i].as_slice().to_vec()).collect();
    let targets: Vec<Vec<f64>> = ds.train.iter().map(|&i| all_points[i].clone()).collect();
    let dim = targets[0].len();
    let mut reference = vec![0.0; dim];
    for t in &targets {
        for (r, x) in reference.iter_mut().zip(t) {
            *r += x / targets.len() as f64;
        }
    }
    let budget = controls.net().parameter_count();
    let width = matched_width(budget, inputs[0].len(), dim, cfg.hidden.len());
    let hidden = vec![width; cfg.hidden.len()];
    let (vertices, _) = FlatRegressor::fit(&inputs, &targets, reference, &hidden, &cfg.train)?;
    let errs = ds
        .test
        .par_iter()
        .map(|&i| {
            let pred = vertices.predict(ds.actuations[i].as_slice())?;
            let p: Vec<Vec3> = pred.chunks(3).map(Vec3::from_column_slice).collect();
            let t: Vec<Vec3> = all_points[i].chunks(3).map(Vec3::from_column_slice).collect();
            Ok(SurfaceError::between(&p, &t))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationRow::new(
        "controls_vs_vertices",
        "controls",
        test_error(&controls, vm, ds)?,
        "vertices",
        SurfaceError::aggregate(&errs),
    ))
}
