use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fk::{ShapeModel, SurfaceError};
use crate::oracle::{Actuation, RealityGap, VirtualMannequin};
use crate::rbf;
use crate::sim2real::WarpPredictor;
use crate::{Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub actuation_id: usize,
    pub mean_err_sim: f64,
    pub max_err_sim: f64,
    pub mean_err_fixed: f64,
    pub max_err_fixed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rows: Vec<CalibrationRow>,
}

impl CalibrationReport {
    pub fn uncalibrated(&self) -> SurfaceError {
        SurfaceError::aggregate(
            &self
                .rows
                .iter()
                .map(|r| SurfaceError {
                    mean: r.mean_err_sim,
                    max: r.max_err_sim,
                })
                .collect::<Vec<_>>(),
        )
    }

    pub fn calibrated(&self) -> SurfaceError {
        SurfaceError::aggregate(
            &self
                .rows
                .iter()
                .map(|r| SurfaceError {
                    mean: r.mean_err_fixed,
                    max: r.max_err_fixed,
                })
                .collect::<Vec<_>>(),
        )
    }

    /// Relative reduction of the mean error, `1 − calibrated / uncalibrated`.
    pub fn reduction(&self) -> f64 {
        1.0 - self.calibrated().mean / self.uncalibrated().mean
    }

    /// Fraction of rows where calibration lowered the mean error.
    pub fn improved_fraction(&self) -> f64 {
        self.rows.iter().filter(|r| r.mean_err_fixed < r.mean_err_sim).count() as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("actuation_id,mean_err_sim,max_err_sim,mean_err_fixed,max_err_fixed\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.actuation_id, r.mean_err_sim, r.max_err_sim, r.mean_err_fixed, r.max_err_fixed
            );
        }
        s
    }
}

/// Errors of the uncalibrated and calibrated surfaces against the oracle's
/// physical surface at each probe actuation.
pub fn eval_calibration(
    model: &dyn WarpPredictor,
    shapes: &dyn ShapeModel,
    vm: &VirtualMannequin,
    gap: &RealityGap,
    probe_actuations: &[Actuation],
    probe: &[[f64; 2]],
) -> Result<CalibrationReport> {
    eval_with(model, shapes, probe_actuations, probe, |a, _, uv| {
        vm.real_point(gap, a, uv[0], uv[1])
    })
}

/// Like [`eval_calibration`], but the reference is `gap` applied to the
/// shape model's own surface, so model error does not enter the figure.
pub fn eval_model_gap(
    model: &dyn WarpPredictor,
    shapes: &dyn ShapeModel,
    gap: &RealityGap,
    probe_actuations: &[Actuation],
    probe: &[[f64; 2]],
) -> Result<CalibrationReport> {
    eval_with(model, shapes, probe_actuations, probe, |_, p, _| Ok(gap.warp(p)))
}

fn eval_with<F>(
    model: &dyn WarpPredictor,
    shapes: &dyn ShapeModel,
    probe_actuations: &[Actuation],
    probe: &[[f64; 2]],
    truth_at: F,
) -> Result<CalibrationReport>
where
    F: Fn(&Actuation, &Vec3, [f64; 2]) -> Result<Vec3> + Sync,
{
    let rows = probe_actuations
        .par_iter()
        .enumerate()
        .map(|(actuation_id, a)| {
            let surface = shapes.controls(a)?;
            let (k, g) = model.predict_warp(&surface)?;
            let mut sim = Vec::with_capacity(probe.len());
            let mut fixed = Vec::with_capacity(probe.len());
            let mut truth = Vec::with_capacity(probe.len());
            for uv in probe {
                let p = surface.evaluate(uv[0], uv[1])?;
                fixed.push(rbf::warp(&p, &k, &g));
                truth.push(truth_at(a, &p, *uv)?);
                sim.push(p);
            }
            let e_sim = SurfaceError::between(&sim, &truth);
            let e_fixed = SurfaceError::between(&fixed, &truth);
            Ok(CalibrationRow {
                actuation_id,
                mean_err_sim: e_sim.mean,
                max_err_sim: e_sim.max,
                mean_err_fixed: e_fixed.mean,
                max_err_fixed: e_fixed.max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationReport { rows })
}
