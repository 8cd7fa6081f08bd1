//! Tracking metrics, suite evaluation and motion export.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::Real;
use crate::dno::{optimize_noise, DnoError, DnoOptions, DnoTask, ObservationSet, OptStage, Prior};
use crate::kinematics::rotation::Vec3;
use crate::kinematics::SkeletonSpec;
use crate::representation::DecodedMotion;
use crate::tasks::{load_tracking_task, TaskError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("task {task} seed {seed}: {source}")]
    Optimization {
        task: String,
        seed: u64,
        #[source]
        source: DnoError,
    },
    #[error("task {0} has no observations to score")]
    NoObservations(String),
    #[error("suite directory {0} holds no task files")]
    EmptySuite(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Thresholds in meters.
pub const THRESHOLDS_M: [f64; 3] = [0.50, 0.10, 0.05];

/// Height below which a foot joint counts as on the ground.
pub const SKATE_HEIGHT: f64 = 0.05;
/// Horizontal per-frame displacement above which a grounded foot skates.
pub const SKATE_DISTANCE: f64 = 0.025;

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// Share of trajectories with any keyframe error above `threshold_m`.
pub fn traj_error(errors: &[Vec<f64>], threshold_m: f64) -> f64 {
    percent(
        errors.iter().filter(|t| t.iter().any(|&e| e > threshold_m)).count(),
        errors.len(),
    )
}

/// Share of keyframes with error above `threshold_m`.
pub fn loc_error(errors: &[Vec<f64>], threshold_m: f64) -> f64 {
    let total = errors.iter().map(Vec::len).sum();
    percent(errors.iter().flatten().filter(|&&e| e > threshold_m).count(), total)
}

/// Mean keyframe error in centimeters.
pub fn avg_error(errors: &[Vec<f64>]) -> f64 {
    let total: usize = errors.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    100.0 * errors.iter().flatten().sum::<f64>() / total as f64
}

/// Share of frame transitions in which some foot joint lower than
/// [`SKATE_HEIGHT`] moves more than [`SKATE_DISTANCE`] horizontally.
pub fn skating_ratio<P: AsRef<[Vec3]>>(skel: &SkeletonSpec, frames: &[P]) -> f64 {
    if frames.len() < 2 {
        return 0.0;
    }
    let skating = frames
        .windows(2)
        .filter(|w| {
            let (a, b) = (w[0].as_ref(), w[1].as_ref());
            skel.foot_joints.iter().any(|&j| {
                let d = b[j] - a[j];
                a[j].z < SKATE_HEIGHT && d.x.hypot(d.y) > SKATE_DISTANCE
            })
        })
        .count();
    percent(skating, frames.len() - 1)
}

pub fn motion_skating_ratio(skel: &SkeletonSpec, motion: &DecodedMotion) -> f64 {
    let frames: Vec<&[Vec3]> = (0..motion.frames).map(|i| motion.frame_positions(i)).collect();
    skating_ratio(skel, &frames)
}

/// Euclidean distance of every observation to its target, meters.
pub fn keyframe_errors(motion: &DecodedMotion, obs: &ObservationSet) -> Vec<f64> {
    obs.entries
        .iter()
        .map(|o| (o.point.position(motion, o.frame) - o.target).norm())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold_cm: f64,
    pub traj_error: f64,
    pub loc_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub rows: Vec<ThresholdRow>,
    pub avg_error_cm: f64,
    pub skating_ratio: f64,
    pub trajectories: usize,
    pub keyframes: usize,
}

pub const REPORT_CSV_HEADER: &str =
    "threshold_cm,traj_error_pct,loc_error_pct,avg_error_cm,skating_ratio_pct,trajectories,keyframes";

impl TrackingReport {
    /// Aggregates per-trajectory keyframe errors (meters) and per-motion
    /// skating ratios.
    pub fn from_errors(errors: &[Vec<f64>], skating: &[f64]) -> Self {
        let rows = THRESHOLDS_M
            .iter()
            .map(|&th| ThresholdRow {
                threshold_cm: th * 100.0,
                traj_error: traj_error(errors, th),
                loc_error: loc_error(errors, th),
            })
            .collect();
        TrackingReport {
            rows,
            avg_error_cm: avg_error(errors),
            skating_ratio: if skating.is_empty() {
                0.0
            } else {
                skating.iter().sum::<f64>() / skating.len() as f64
            },
            trajectories: errors.len(),
            keyframes: errors.iter().map(Vec::len).sum(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.rows {
            out += &format!(
                "{:.0},{:.4},{:.4},{:.4},{:.4},{},{}\n",
                r.threshold_cm, r.traj_error, r.loc_error, self.avg_error_cm, self.skating_ratio, self.trajectories, self.keyframes
            );
        }
        out
    }
}

/// One optimized trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub seed: u64,
    pub errors_m: Vec<f64>,
    pub skating_ratio: f64,
    pub close_initial: f64,
    pub close_final: f64,
}

pub const RUNS_CSV_HEADER: &str = "task,seed,keyframes,avg_error_cm,max_error_cm,skating_ratio_pct,close_initial,close_final";

impl RunRecord {
    pub fn csv_line(&self) -> String {
        let max = self.errors_m.iter().copied().fold(0.0, f64::max);
        format!(
            "{},{},{},{:.4},{:.4},{:.4},{:.6},{:.6}",
            self.task,
            self.seed,
            self.errors_m.len(),
            avg_error(std::slice::from_ref(&self.errors_m)),
            100.0 * max,
            self.skating_ratio,
            self.close_initial,
            self.close_final
        )
    }
}

pub struct Evaluation {
    pub report: TrackingReport,
    pub runs: Vec<RunRecord>,
}

/// Optimizes every task for every seed and scores the decoded motions.
/// Runs are independent; results are aggregated in `(task, seed)` order.
pub fn evaluate<F: Real + Send + Sync>(
    prior: &Prior<F>,
    suite: &[(String, DnoTask)],
    seeds: &[u64],
    stages: &[OptStage],
    options: &DnoOptions,
) -> Result<Evaluation, EvalError> {
    let jobs: Vec<(&String, &DnoTask, u64)> = suite
        .iter()
        .flat_map(|(name, task)| seeds.iter().map(move |&s| (name, task, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(name, task, seed)| {
            let obs = task.observations.as_ref().ok_or_else(|| EvalError::NoObservations(name.clone()))?;
            let r = optimize_noise(prior, task, stages, seed, options).map_err(|source| EvalError::Optimization {
                task: name.clone(),
                seed,
                source,
            })?;
            let close_final = crate::dno::loss_close(&r.motion, obs).map_err(|source| EvalError::Optimization {
                task: name.clone(),
                seed,
                source,
            })?;
            Ok(RunRecord {
                task: name.clone(),
                seed,
                errors_m: keyframe_errors(&r.motion, obs),
                skating_ratio: motion_skating_ratio(prior.skel, &r.motion),
                close_initial: r.initial.close,
                close_final,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let errors: Vec<Vec<f64>> = runs.iter().map(|r| r.errors_m.clone()).collect();
    let skating: Vec<f64> = runs.iter().map(|r| r.skating_ratio).collect();
    Ok(Evaluation {
        report: TrackingReport::from_errors(&errors, &skating),
        runs,
    })
}

/// Every `*.json` tracking task in `dir`, sorted by file name.
pub fn load_suite(dir: &Path, skel: &SkeletonSpec) -> Result<Vec<(String, DnoTask)>, EvalError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(EvalError::EmptySuite(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, load_tracking_task(p, skel)?.to_dno_task(skel)?))
        })
        .collect()
}

/// `frame,joint,x,y,z` rows for every joint of every frame.
pub fn export_csv<W: Write>(mut w: W, skel: &SkeletonSpec, motion: &DecodedMotion) -> std::io::Result<()> {
    writeln!(w, "frame,joint,x,y,z")?;
    for i in 0..motion.frames {
        for (j, joint) in skel.joints.iter().enumerate() {
            let p = motion.position(i, j);
            writeln!(w, "{i},{},{:.6},{:.6},{:.6}", joint.name, p.x, p.y, p.z)?;
        }
    }
    Ok(())
}

/// One OBJ object per frame holding the joint positions as vertices, with
/// bone segments as lines.
pub fn export_obj<W: Write>(mut w: W, skel: &SkeletonSpec, motion: &DecodedMotion) -> std::io::Result<()> {
    let jn = motion.joints;
    for i in 0..motion.frames {
        writeln!(w, "o frame_{i:05}")?;
        for p in motion.frame_positions(i) {
            writeln!(w, "v {:.6} {:.6} {:.6}", p.x, p.y, p.z)?;
        }
        for (j, joint) in skel.joints.iter().enumerate() {
            if let Some(parent) = joint.parent {
                // OBJ indices are 1-based and global across objects.
                writeln!(w, "l {} {}", i * jn + parent + 1, i * jn + j + 1)?;
            }
        }
    }
    Ok(())
}
