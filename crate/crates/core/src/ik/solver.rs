use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::{icp_register, RigidTransform, TriangleMesh};
use crate::ik::{loss_gradient_with, Branches, Correspondences, IkConfig, Pipeline, PipelineState, ProbeSet};
use crate::oracle::{Actuation, CHAMBERS};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Initial,
    Descent,
    Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Accepted descent steps so far.
    pub iteration: usize,
    pub loss: f64,
    /// Mean distance from calibrated samples to the posed target (mm).
    pub mean_error: f64,
    pub step: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative improvement of a full round fell to `tau_terminal`.
    Tolerance,
    /// Mean squared residual reached `loss_floor`.
    LossFloor,
    /// Two consecutive line searches failed at the minimum step.
    Stall,
    /// `i_max` reached.
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub a_opt: Actuation,
    #[serde(skip)]
    pub pose: RigidTransform,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub rounds: usize,
    pub wall_time_ms: f64,
}

impl IkResult {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.loss)
    }

    pub fn final_mean_error(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.mean_error)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,loss,mean_error,step,stage\n");
        for t in &self.trace {
            let stage = match t.stage {
                Stage::Initial => "initial",
                Stage::Descent => "descent",
                Stage::Pose => "pose",
            };
            let _ = writeln!(s, "{},{},{},{},{}", t.iteration, t.loss, t.mean_error, t.step, stage);
        }
        s
    }

    /// JSON with the wall-clock field zeroed, for reproducibility checks.
    pub fn to_json(&self, include_time: bool) -> Result<String> {
        let mut copy = self.clone();
        if !include_time {
            copy.wall_time_ms = 0.0;
        }
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

struct Evaluated {
    state: PipelineState,
    corr: Correspondences,
    loss: f64,
}

fn evaluate(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    target: &TriangleMesh,
    pose: &RigidTransform,
    a: &Actuation,
) -> Result<Evaluated> {
    let state = PipelineState::new(pipeline, probes, a)?;
    let corr = Correspondences::find(&state.calibrated, target, pose)?;
    let loss = corr.loss(&state.calibrated);
    Ok(Evaluated { state, corr, loss })
}

fn step_from(a: &Actuation, g: &[f64; CHAMBERS], h: f64) -> Actuation {
    Actuation::clamped(std::array::from_fn(|k| a.values()[k] - h * g[k]))
}

/// ICP of the target against the current calibrated samples. The new pose
/// is kept only when it lowers the loss; returns whether it was kept.
fn repose(
    pipeline: &Pipeline,
    probes: &ProbeSet,
    target: &TriangleMesh,
    pose: &mut RigidTransform,
    cur: &mut Evaluated,
    cfg: &IkConfig,
) -> Result<bool> {
    let Ok(icp) = icp_register(&cur.state.calibrated, target, pose, cfg.icp_max_iters, cfg.icp_tol) else {
        return Ok(false);
    };
    let posed = evaluate(pipeline, probes, target, &icp.transform, &cur.state.actuation)?;
    if posed.loss < cur.loss {
        *pose = icp.transform;
        *cur = posed;
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Alternates ICP posing of the target with projected gradient descent on
/// the actuation, using a shrink-then-expand line search.
pub fn solve_ik(pipeline: &Pipeline, target: &TriangleMesh, a0: &Actuation, cfg: &IkConfig) -> Result<IkResult> {
    cfg.validate()?;
    let started = Instant::now();
    let probes = ProbeSet::halton(pipeline, cfg.sample_count)?;
    let n = probes.len() as f64;

    let mut pose = RigidTransform::identity();
    let mut cur = evaluate(pipeline, &probes, target, &pose, a0)?;
    repose(pipeline, &probes, target, &mut pose, &mut cur, cfg)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        loss: cur.loss,
        mean_error: cur.corr.mean_distance(&cur.state.calibrated),
        step: 0.0,
        stage: Stage::Initial,
    }];

    let mut iterations = 0;
    let mut rounds = 0;
    let mut stalls = 0;
    let termination = 'outer: loop {
        if rounds >= cfg.i_max {
            break Termination::MaxIterations;
        }
        rounds += 1;
        let round_start = cur.loss;
        let mut stalled = false;
        loop {
            if cur.loss / n <= cfg.loss_floor {
                break 'outer Termination::LossFloor;
            }
            if iterations >= cfg.i_max {
                break 'outer Termination::MaxIterations;
            }
            let g = loss_gradient_with(pipeline, &probes, &cur.state, &cur.corr, Branches::ALL)?;
            let a = cur.state.actuation;

            // shrink until the loss drops
            let mut h = cfg.initial_step;
            let mut accepted = None;
            while h >= cfg.min_step {
                let cand = step_from(&a, &g, h);
                if cand != a {
                    let e = evaluate(pipeline, &probes, target, &pose, &cand)?;
                    if e.loss < cur.loss {
                        accepted = Some(e);
                        break;
                    }
                }
                h *= cfg.shrink_factor;
            }
            let Some(mut best) = accepted else {
                stalled = true;
                break;
            };
            // expand in multiples of the found step while it keeps improving
            let found = h;
            let mut best_h = h;
            for k in 2..=cfg.max_expansions + 1 {
                let trial_h = found * k as f64;
                let cand = step_from(&a, &g, trial_h);
                if cand == best.state.actuation {
                    break;
                }
                let e = evaluate(pipeline, &probes, target, &pose, &cand)?;
                if e.loss < best.loss {
                    best = e;
                    best_h = trial_h;
                } else {
                    break;
                }
            }
            let rel = (cur.loss - best.loss) / cur.loss;
            cur = best;
            iterations += 1;
            stalls = 0;
            trace.push(TraceEntry {
                iteration: iterations,
                loss: cur.loss,
                mean_error: cur.corr.mean_distance(&cur.state.calibrated),
                step: best_h,
                stage: Stage::Descent,
            });
            if rel <= cfg.tau_terminal {
                break;
            }
            if cfg.repose_every_step && repose(pipeline, &probes, target, &mut pose, &mut cur, cfg)? {
                trace.push(TraceEntry {
                    iteration: iterations,
                    loss: cur.loss,
                    mean_error: cur.corr.mean_distance(&cur.state.calibrated),
                    step: 0.0,
                    stage: Stage::Pose,
                });
            }
        }
        if stalled {
            stalls += 1;
        }

        if repose(pipeline, &probes, target, &mut pose, &mut cur, cfg)? {
            trace.push(TraceEntry {
                iteration: iterations,
                loss: cur.loss,
                mean_error: cur.corr.mean_distance(&cur.state.calibrated),
                step: 0.0,
                stage: Stage::Pose,
            });
        }
        if stalls >= 2 {
            break Termination::Stall;
        }
        if cur.loss / n <= cfg.loss_floor {
            break Termination::LossFloor;
        }
        if !stalled && (round_start - cur.loss) / round_start <= cfg.tau_terminal {
            break Termination::Tolerance;
        }
    };

    let r = pose.rotation();
    let t = pose.translation();
    Ok(IkResult {
        a_opt: cur.state.actuation,
        pose,
        rotation: std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])),
        translation: [t.x, t.y, t.z],
        trace,
        converged: termination != Termination::MaxIterations,
        termination,
        iterations,
        rounds,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
