use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;
use surfik::fk::{build_dataset_with, controls_vs_vertices, delta_vs_absolute, test_error, train_fk, FkModel};
use surfik::geometry::{grid_params, TriangleMesh};
use surfik::ik::{gradient_check, gradient_cost_audit, solve_ik, Pipeline, PipelineState, ProbeSet};
use surfik::oracle::{
    capture_frames, default_marker_uvs, halton_actuations, random_actuations, write_frames, Actuation,
    VirtualMannequin, CHAMBERS,
};
use surfik::sim2real::{
    eval_calibration, marker_residual, train_marker_baseline, train_rbf_net, S2rModel, TrainingFrameSet,
};

use crate::artifacts::{self, loss_csv, Layout};
use crate::config::{RunConfig, TargetSource};
use crate::error::CliError;

fn mannequin(cfg: &RunConfig) -> Result<VirtualMannequin, CliError> {
    VirtualMannequin::new(cfg.mannequin.clone()).map_err(|e| CliError::Input(format!("mannequin: {e}")))
}

fn pretty(v: &impl serde::Serialize) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::Core(e.into()))
}

pub fn gen_dataset(cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let vm = mannequin(cfg)?;
    let ds = build_dataset_with(&vm, &cfg.dataset)?;
    // build next to the final location, then swap it in
    let dir = out.path(artifacts::DATASET_DIR);
    let staging = out.path("dataset.tmp");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    ds.save(&staging)?;
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::rename(&staging, &dir)?;
    let mean_rms = ds.fit_rms.iter().sum::<f64>() / ds.len().max(1) as f64;
    let worst = ds.fit_max.iter().copied().fold(0.0, f64::max);
    println!(
        "samples {} (train {}, test {}); fit rms mean {mean_rms:.4} mm, max {worst:.4} mm",
        ds.len(),
        ds.train.len(),
        ds.test.len()
    );
    Ok(dir.join("manifest.json"))
}

pub fn capture(cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let vm = mannequin(cfg)?;
    let uvs = default_marker_uvs();
    let acts = random_actuations(cfg.capture.frames, cfg.seed);
    let frames = capture_frames(&vm, &cfg.gap, &acts, &uvs, &cfg.capture.settings, cfg.seed)?;
    let mut buf = Vec::new();
    write_frames(&mut buf, &frames)?;
    let path = out.write(artifacts::FRAMES, &buf)?;
    let complete = frames.iter().filter(|f| f.is_complete(uvs.len())).count();
    let observed: usize = frames.iter().map(|f| f.observed_count()).sum();
    println!(
        "frames {}: complete {complete}, incomplete {}, observed markers {observed}",
        frames.len(),
        frames.len() - complete
    );
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Fk,
    S2r,
    Baseline,
}

pub fn train(stage: Stage, cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    match stage {
        Stage::Fk => {
            let ds = out.dataset()?;
            let model = train_fk(&ds, &cfg.fk)?;
            out.write("fk_loss.csv", loss_csv(model.history()).as_bytes())?;
            let path = out.write(artifacts::FK, model.to_json()?.as_bytes())?;
            let vm = mannequin(cfg)?;
            let err = test_error(&model, &vm, &ds)?;
            println!("fk test error mean {:.4} mm, max {:.4} mm", err.mean, err.max);
            Ok(path)
        }
        Stage::S2r => {
            let fk = out.fk()?;
            let set = TrainingFrameSet::new(out.frames()?, &fk, default_marker_uvs())?;
            let model = train_rbf_net(&set, &fk, &cfg.s2r)?;
            out.write("s2r_loss.csv", loss_csv(model.history()).as_bytes())?;
            let path = out.write(artifacts::S2R, model.to_json()?.as_bytes())?;
            println!(
                "s2r trained on {} frames ({} complete); marker rms {:.4} mm",
                set.len(),
                set.complete_count(),
                marker_residual(&model, &set)?
            );
            Ok(path)
        }
        Stage::Baseline => {
            let fk = out.fk()?;
            let set = TrainingFrameSet::new(out.frames()?, &fk, default_marker_uvs())?;
            let model = train_marker_baseline(&set, &cfg.s2r)?;
            out.write("baseline_loss.csv", loss_csv(model.history()).as_bytes())?;
            let path = out.write(artifacts::BASELINE, model.to_json()?.as_bytes())?;
            println!(
                "baseline trained on {} complete frames; marker rms {:.4} mm",
                model.frames_used(),
                marker_residual(&model, &set)?
            );
            Ok(path)
        }
    }
}

pub fn eval(cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let fk = out.fk()?;
    let warp = out.s2r()?;
    let vm = mannequin(cfg)?;
    let acts = halton_actuations(cfg.eval.actuations, cfg.eval.skip);
    let probe = grid_params(cfg.eval.grid, cfg.eval.grid);
    let report = eval_calibration(&warp, &fk, &vm, &cfg.gap, &acts, &probe)?;
    out.write("eval.csv", report.to_csv().as_bytes())?;
    let mut summary = json!({
        "uncalibrated": report.uncalibrated(),
        "calibrated": report.calibrated(),
        "reduction": report.reduction(),
        "improved_fraction": report.improved_fraction(),
    });
    println!(
        "uncalibrated mean {:.4} mm, calibrated mean {:.4} mm, reduction {:.1}%",
        report.uncalibrated().mean,
        report.calibrated().mean,
        100.0 * report.reduction()
    );
    if let Some(baseline) = out.baseline()? {
        let b = eval_calibration(&baseline, &fk, &vm, &cfg.gap, &acts, &probe)?;
        out.write("eval_baseline.csv", b.to_csv().as_bytes())?;
        summary["baseline"] = json!({ "calibrated": b.calibrated(), "reduction": b.reduction() });
        println!("baseline calibrated mean {:.4} mm", b.calibrated().mean);
    }
    out.write("eval.json", pretty(&summary)?.as_bytes())
}

fn target_actuation(cfg: &RunConfig) -> Actuation {
    random_actuations(1, cfg.seed)[0]
}

fn model_target(fk: &FkModel, warp: &S2rModel, a: &Actuation, grid: usize) -> Result<TriangleMesh, CliError> {
    let pipeline = Pipeline::new(fk, warp)?;
    Ok(pipeline.calibrated_mesh(a, grid, grid)?)
}

pub fn gen_target(cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let a = target_actuation(cfg);
    let mesh = match cfg.target.source {
        TargetSource::Model => model_target(&out.fk()?, &out.s2r()?, &a, cfg.target.grid)?,
        TargetSource::Real => {
            let vm = mannequin(cfg)?;
            vm.grid_mesh(&vm.real_surface(&cfg.gap, &a)?)?
        }
    };
    out.write(
        "target.json",
        pretty(&json!({ "source": cfg.target.source, "actuation": a }))?.as_bytes(),
    )?;
    let path = out.write(artifacts::TARGET, mesh.to_obj().as_bytes())?;
    println!("target from {:?} actuation {:?}", cfg.target.source, a.values());
    Ok(path)
}

pub fn solve(cfg: &RunConfig, out: &Layout, target: Option<&Path>) -> Result<PathBuf, CliError> {
    let target_path = target
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.path(artifacts::TARGET));
    let mesh = artifacts::read_mesh(&target_path)?;
    let fk = out.fk()?;
    let warp = out.s2r()?;
    let pipeline = Pipeline::new(&fk, &warp)?;
    let a0 = Actuation::splat(cfg.target.start).map_err(|e| CliError::Input(format!("start actuation: {e}")))?;
    let result = solve_ik(&pipeline, &mesh, &a0, &cfg.ik)?;

    // distances from the calibrated samples to the posed target
    let probes = ProbeSet::halton(&pipeline, cfg.ik.sample_count)?;
    let state = PipelineState::new(&pipeline, &probes, &result.a_opt)?;
    let inv = result.pose.inverse();
    let dists = state
        .calibrated
        .iter()
        .map(|q| mesh.closest_point(&inv.apply(q)).map(|c| c.distance))
        .collect::<surfik::Result<Vec<f64>>>()?;
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    let max = dists.iter().copied().fold(0.0, f64::max);

    out.write("solve_trace.csv", result.trace_csv().as_bytes())?;
    let path = out.write("solve.json", result.to_json(true)?.as_bytes())?;
    println!(
        "converged {} ({:?}) after {} iterations; mean error {mean:.4} mm, max {max:.4} mm; wall time {:.1} ms",
        result.converged, result.termination, result.iterations, result.wall_time_ms
    );
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AuditKind {
    Gradcheck,
    Gradcost,
    Ablation,
}

pub fn audit(kind: AuditKind, cfg: &RunConfig, out: &Layout) -> Result<PathBuf, CliError> {
    let mut failures = Vec::new();
    let path = match kind {
        AuditKind::Gradcheck => {
            let (fk, warp) = (out.fk()?, out.s2r()?);
            let pipeline = Pipeline::new(&fk, &warp)?;
            let report = gradient_check(&pipeline, &cfg.audit.gradcheck)?;
            if report.max_rel_err >= report.tolerance {
                failures.push(format!(
                    "max relative error {:.3e} ≥ {:.0e}",
                    report.max_rel_err, report.tolerance
                ));
            }
            for b in report.branches.iter().filter(|b| !b.necessary) {
                failures.push(format!("{} branch not shown necessary", b.branch));
            }
            println!(
                "gradcheck: {} probes, max relative error {:.3e}",
                report.probes.len(),
                report.max_rel_err
            );
            out.write("audit_gradcheck.json", pretty(&report)?.as_bytes())?
        }
        AuditKind::Gradcost => {
            let (fk, warp) = (out.fk()?, out.s2r()?);
            let pipeline = Pipeline::new(&fk, &warp)?;
            let target = model_target(&fk, &warp, &target_actuation(cfg), cfg.target.grid)?;
            let report = gradient_cost_audit(&pipeline, &target, &cfg.ik, cfg.audit.gradcost_trials)?;
            if report.fd_evaluations != CHAMBERS + 1 {
                failures.push(format!("{} evaluations per difference gradient", report.fd_evaluations));
            }
            if report.ratio < cfg.audit.min_cost_ratio {
                failures.push(format!("cost ratio {:.2} < {}", report.ratio, cfg.audit.min_cost_ratio));
            }
            println!(
                "gradcost: analytic {:.2} ms, finite difference {:.2} ms, ratio {:.2}",
                report.analytic_ms, report.finite_difference_ms, report.ratio
            );
            out.write("audit_gradcost.json", pretty(&report)?.as_bytes())?
        }
        AuditKind::Ablation => {
            let ds = out.dataset()?;
            let vm = mannequin(cfg)?;
            let rows = vec![
                delta_vs_absolute(&ds, &vm, &cfg.fk)?,
                controls_vs_vertices(&ds, &vm, &cfg.fk)?,
            ];
            for r in &rows {
                println!(
                    "{}: {} {:.4} mm vs {} {:.4} mm",
                    r.check, r.preferred, r.preferred_error.mean, r.alternative, r.alternative_error.mean
                );
                if !r.holds {
                    failures.push(format!("{} does not hold", r.check));
                }
            }
            out.write("audit_ablation.json", pretty(&rows)?.as_bytes())?
        }
    };
    info!("wrote {}", path.display());
    if failures.is_empty() {
        Ok(path)
    } else {
        Err(CliError::Audit(failures))
    }
}
