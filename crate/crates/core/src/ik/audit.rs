use std::cell::Cell;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{RigidTransform, TriangleMesh};
use crate::ik::{
    frozen_loss, loss_gradient, loss_gradient_with, shape_loss, Branches, Correspondences, IkConfig, Pipeline,
    PipelineState, ProbeSet,
};
use crate::oracle::{Actuation, CHAMBERS};
use crate::{Result, Vec3};

/// Forward-difference gradient from `CHAMBERS + 1` loss evaluations; steps
/// backwards where `a + h` would leave the box. `evaluations` counts calls.
pub fn fd_gradient(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    target: &TriangleMesh,
    pose: &RigidTransform,
    a: &Actuation,
    h: f64,
    evaluations: &Cell<usize>,
) -> Result<[f64; CHAMBERS]> {
    let eval = |x: &Actuation| {
        evaluations.set(evaluations.get() + 1);
        shape_loss(pipeline, probes, target, pose, x)
    };
    let base = eval(a)?;
    let mut g = [0.0; CHAMBERS];
    for (k, gk) in g.iter_mut().enumerate() {
        let mut x = *a.values();
        let step = if x[k] + h <= 1.0 { h } else { -h };
        x[k] += step;
        *gk = (eval(&Actuation::new(x)?)? - base) / step;
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCostReport {
    pub analytic_ms: f64,
    pub finite_difference_ms: f64,
    pub ratio: f64,
    /// Loss evaluations per finite-difference gradient.
    pub fd_evaluations: usize,
    pub trials: usize,
}

/// Wall-clock cost of one analytic gradient against one forward-difference
/// gradient, averaged over `trials` actuations.
pub fn gradient_cost_audit(
    pipeline: &Pipeline,
    target: &TriangleMesh,
    cfg: &IkConfig,
    trials: usize,
) -> Result<GradCostReport> {
    let probes = ProbeSet::halton(pipeline, cfg.sample_count)?;
    let pose = RigidTransform::identity();
    let trials = trials.max(1);
    let points = crate::oracle::halton_actuations(trials, 7);
    // warm-up so first-touch costs do not land in either timing
    loss_gradient(pipeline, &probes, target, &pose, &points[0])?;
    let mut analytic = 0.0;
    let mut fd = 0.0;
    let mut evaluations = 0;
    for a in &points {
        let t = Instant::now();
        std::hint::black_box(loss_gradient(pipeline, &probes, target, &pose, a)?);
        analytic += t.elapsed().as_secs_f64();
        let count = Cell::new(0);
        let t = Instant::now();
        std::hint::black_box(fd_gradient(pipeline, &probes, target, &pose, a, 1e-5, &count)?);
        fd += t.elapsed().as_secs_f64();
        evaluations = count.get();
    }
    let analytic_ms = analytic * 1e3 / trials as f64;
    let finite_difference_ms = fd * 1e3 / trials as f64;
    Ok(GradCostReport {
        analytic_ms,
        finite_difference_ms,
        ratio: finite_difference_ms / analytic_ms,
        fd_evaluations: evaluations,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub sample_count: usize,
    /// Target mesh resolution per direction.
    pub target_grid: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probes: 50,
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            sample_count: 1200,
            target_grid: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeCheck {
    pub actuation: Actuation,
    pub rel_err: f64,
    /// Relative error with the query, center and coefficient branch dropped.
    pub ablated_rel_err: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchAudit {
    pub branch: String,
    pub median_rel_err: f64,
    pub min_rel_err: f64,
    pub necessary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeCheck>,
    pub skipped_for_kinks: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub branches: Vec<BranchAudit>,
    pub passed: bool,
}

fn rel_err(a: &[f64; CHAMBERS], b: &[f64; CHAMBERS]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Region signature of both networks at `a`.
fn signature(pipeline: &Pipeline, a: &Actuation) -> Result<(Vec<bool>, Vec<bool>)> {
    let fk = pipeline.shapes.activation_signature(a)?;
    let surface = pipeline.shapes.controls(a)?;
    let warp = pipeline
        .warp
        .net()
        .activation_pattern(&pipeline.warp.net_input(&surface)?)?;
    Ok((fk, warp))
}

/// Analytic `∂D/∂a` (frozen correspondences) against central differences on
/// random actuations and random posed targets, plus the branch ablation.
pub fn gradient_check(pipeline: &Pipeline, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let probes = ProbeSet::halton(pipeline, cfg.sample_count)?;
    let h = cfg.step;
    let mut checks = Vec::with_capacity(cfg.probes);
    let mut skipped = 0;
    let attempts = cfg.probes * 20;
    for _ in 0..attempts {
        if checks.len() >= cfg.probes {
            break;
        }
        let a = Actuation::new(std::array::from_fn(|_| rng.random_range(0.05..0.95)))?;
        let a_t = Actuation::new(std::array::from_fn(|_| rng.random_range(0.0..1.0)))?;
        let axis = Vec3::new(rng.random(), rng.random(), rng.random()) - Vec3::repeat(0.5);
        let pose = RigidTransform::from_axis_angle(
            &axis,
            rng.random_range(-0.1..0.1),
            Vec3::new(rng.random(), rng.random(), rng.random()) * 10.0,
        );
        let sig = signature(pipeline, &a)?;
        let mut crosses = false;
        for k in 0..CHAMBERS {
            for s in [h, -h] {
                let mut x = *a.values();
                x[k] += s;
                if signature(pipeline, &Actuation::new(x)?)? != sig {
                    crosses = true;
                }
            }
        }
        if crosses {
            skipped += 1;
            continue;
        }
        let target = pipeline.calibrated_mesh(&a_t, cfg.target_grid, cfg.target_grid)?;
        let state = PipelineState::new(pipeline, &probes, &a)?;
        let corr = Correspondences::find(&state.calibrated, &target, &pose)?;
        let mut fd = [0.0; CHAMBERS];
        for (k, g) in fd.iter_mut().enumerate() {
            let mut hi = *a.values();
            let mut lo = *a.values();
            hi[k] += h;
            lo[k] -= h;
            let fh = frozen_loss(pipeline, &probes, &corr, &Actuation::new(hi)?)?;
            let fl = frozen_loss(pipeline, &probes, &corr, &Actuation::new(lo)?)?;
            *g = (fh - fl) / (2.0 * h);
        }
        let analytic = loss_gradient_with(pipeline, &probes, &state, &corr, Branches::ALL)?;
        let ablated = std::array::from_fn(|b| {
            loss_gradient_with(pipeline, &probes, &state, &corr, Branches::without(b))
                .map(|g| rel_err(&g, &fd))
                .unwrap_or(f64::NAN)
        });
        checks.push(ProbeCheck {
            actuation: a,
            rel_err: rel_err(&analytic, &fd),
            ablated_rel_err: ablated,
        });
    }
    let max_rel_err = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let branches: Vec<BranchAudit> = ["query", "centers", "coefficients"]
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let mut errs: Vec<f64> = checks.iter().map(|c| c.ablated_rel_err[b]).collect();
            errs.sort_by(f64::total_cmp);
            let median = errs.get(errs.len() / 2).copied().unwrap_or(f64::NAN);
            BranchAudit {
                branch: name.to_string(),
                median_rel_err: median,
                min_rel_err: errs.first().copied().unwrap_or(f64::NAN),
                necessary: median > cfg.tolerance,
            }
        })
        .collect();
    let passed = checks.len() >= cfg.probes && max_rel_err < cfg.tolerance && branches.iter().all(|b| b.necessary);
    Ok(GradCheckReport {
        probes: checks,
        skipped_for_kinks: skipped,
        max_rel_err,
        tolerance: cfg.tolerance,
        branches,
        passed,
    })
}
