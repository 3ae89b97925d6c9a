//! Front end plus back end: plan a path, turn its waypoints into a smooth
//! trajectory, repair collisions, and answer flat-output queries.

use std::time::Instant;

use nalgebra::DMatrix;

use crate::grid::{GoalRegion, OccupancyGrid, WorldPoint};
use crate::heuristic::{filter_region, oracle_region, HeuristicRegion, RegionError};
use crate::planner::{plan, PlanError, PlanStats, PlannerConfig, SamplingMode};
use crate::polytraj::{
    collision_repair, solve_bivp, trapezoidal_time_allocation, BivpSpec, PiecewisePolynomial, TrajError,
};

/// Flat output and its derivatives at one instant: column `k` is the
/// `k`-th derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatFlag {
    pub matrix: DMatrix<f64>,
}

impl FlatFlag {
    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.matrix[(0, 0)], self.matrix[(1, 0)], self.matrix[(2, 0)])
    }
}

pub fn flat_flag_at(traj: &PiecewisePolynomial, t: f64, s: usize) -> Result<FlatFlag, TrajError> {
    let mut matrix = DMatrix::zeros(traj.dim(), s);
    for k in 0..s {
        matrix.set_column(k, &traj.eval(t, k)?);
    }
    Ok(FlatFlag { matrix })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum YawMode {
    #[default]
    None,
    VelocityAligned,
}

impl std::str::FromStr for YawMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(YawMode::None),
            "velocity" | "velocity-aligned" => Ok(YawMode::VelocityAligned),
            other => Err(format!("unknown yaw mode {other:?}")),
        }
    }
}

/// Below this speed the heading is undefined and the previous yaw is kept.
pub const HOVER_SPEED: f64 = 1e-6;

/// Yaw at `t`; `previous` is returned while hovering.
pub fn yaw_profile(traj: &PiecewisePolynomial, t: f64, mode: YawMode, previous: f64) -> Result<f64, TrajError> {
    match mode {
        YawMode::None => Ok(0.0),
        YawMode::VelocityAligned => {
            let v = traj.eval(t, 1)?;
            if v[0].hypot(v[1]) > HOVER_SPEED {
                Ok(v[1].atan2(v[0]))
            } else {
                Ok(previous)
            }
        }
    }
}

/// Yaw on a uniform time grid, starting from `initial`.
pub fn yaw_samples(
    traj: &PiecewisePolynomial,
    dt: f64,
    mode: YawMode,
    initial: f64,
) -> Result<Vec<(f64, f64)>, TrajError> {
    if !(dt > 0.0) {
        return Err(TrajError::InvalidSpec(format!("sample period {dt} must be positive")));
    }
    let total = traj.total_duration();
    let n = (total / dt).ceil() as usize;
    let mut yaw = initial;
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = (i as f64 * dt).min(total);
        yaw = yaw_profile(traj, t, mode, yaw)?;
        out.push((t, yaw));
    }
    Ok(out)
}

/// Drops interior waypoints whose turning angle is below `max_angle_deg`.
pub fn prune_collinear(path: &[WorldPoint], max_angle_deg: f64) -> Vec<WorldPoint> {
    let mut out: Vec<WorldPoint> = Vec::with_capacity(path.len());
    for (i, p) in path.iter().enumerate() {
        if let Some(last) = out.last() {
            if (p - last).norm() <= 1e-9 {
                continue;
            }
        }
        if i + 1 < path.len() && out.len() >= 1 {
            let a = p - out[out.len() - 1];
            let b = path[i + 1] - p;
            if b.norm() > 1e-9 && a.angle(&b).to_degrees() < max_angle_deg {
                continue;
            }
        }
        out.push(*p);
    }
    out
}

/// Greedy line-of-sight shortcut: from each kept waypoint jump to the
/// farthest later waypoint with a collision-free straight segment.
pub fn shortcut_path(path: &[WorldPoint], grid: &OccupancyGrid) -> Vec<WorldPoint> {
    if path.len() <= 2 {
        return path.to_vec();
    }
    let mut out = vec![path[0]];
    let mut i = 0;
    while i + 1 < path.len() {
        let mut j = path.len() - 1;
        while j > i + 1 && !grid.segment_collision_free(&path[i], &path[j]) {
            j -= 1;
        }
        out.push(path[j]);
        i = j;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pruning {
    /// Raw tree waypoints.
    None,
    /// Merge nearly collinear waypoints.
    Collinear,
    /// Collinear merge followed by line-of-sight shortcuts.
    #[default]
    Shortcut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub planner: PlannerConfig,
    pub mode: SamplingMode,
    /// 3 for minimum jerk, 4 for minimum snap.
    pub s: usize,
    pub v_max: f64,
    pub a_max: f64,
    /// Obstacle inflation for planning, in voxels.
    pub inflate: usize,
    pub yaw: YawMode,
    pub repair_rounds: usize,
    pub pruning: Pruning,
    /// Threshold applied to the region before sampling.
    pub region_threshold: f32,
}

impl PipelineConfig {
    pub fn new(planner: PlannerConfig, mode: SamplingMode) -> Self {
        Self {
            planner,
            mode,
            s: 3,
            v_max: 2.0,
            a_max: 2.0,
            inflate: 0,
            yaw: YawMode::None,
            repair_rounds: 30,
            pruning: Pruning::Shortcut,
            region_threshold: 0.5,
        }
    }
}

#[derive(thiserror::Error, Debug)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("start point is blocked after inflation")]
    StartBlocked,
    #[error("goal region center is blocked after inflation")]
    GoalBlocked,
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Traj(#[from] TrajError),
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub trajectory: PiecewisePolynomial,
    pub spec: BivpSpec,
    pub stats: PlanStats,
    /// Tree path, start to goal center.
    pub raw_path: Vec<WorldPoint>,
    /// Waypoints handed to the back end after pruning.
    pub waypoints: Vec<WorldPoint>,
    /// Waypoints after collision repair.
    pub final_waypoints: Vec<WorldPoint>,
    pub path_cost: f64,
    pub repair_rounds: usize,
    /// Wall time of the first back-end solve.
    pub solve_ms: f64,
}

impl PipelineOutput {
    pub fn effort(&self) -> f64 {
        self.trajectory.control_effort()
    }
}

/// Runs the full pipeline with the dilated-A* oracle as region source.
pub fn miner_rrt_star(
    grid: &OccupancyGrid,
    start: &WorldPoint,
    goal: &GoalRegion,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    run_pipeline(grid, None, start, goal, cfg)
}

/// Same as [`miner_rrt_star`], but heuristic mode samples `region` (when
/// given) instead of the oracle.
pub fn run_pipeline(
    grid: &OccupancyGrid,
    region: Option<&HeuristicRegion>,
    start: &WorldPoint,
    goal: &GoalRegion,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    if !(cfg.s == 3 || cfg.s == 4) {
        return Err(PipelineError::InvalidConfig(format!("s = {} must be 3 or 4", cfg.s)));
    }
    if !(cfg.v_max > 0.0 && cfg.a_max > 0.0) {
        return Err(TrajError::InvalidLimits { v_max: cfg.v_max, a_max: cfg.a_max }.into());
    }
    let planning = if cfg.inflate > 0 { grid.inflate(cfg.inflate) } else { grid.clone() };
    let start_voxel = planning.world_to_index(start).filter(|v| !planning.is_occupied(*v));
    let Some(start_voxel) = start_voxel else {
        return Err(PipelineError::StartBlocked);
    };
    let goal_voxel = planning.world_to_index(&goal.center).filter(|v| !planning.is_occupied(*v));
    let Some(goal_voxel) = goal_voxel else {
        return Err(PipelineError::GoalBlocked);
    };

    let filtered = if cfg.mode == SamplingMode::Heuristic {
        let raw = match region {
            Some(r) => r.clone(),
            None => oracle_region(&planning, start_voxel, goal_voxel)?,
        };
        Some(filter_region(&raw, &planning, start_voxel, goal_voxel, cfg.region_threshold)?)
    } else {
        None
    };

    let mut planner_cfg = cfg.planner.clone();
    planner_cfg.goal = *goal;
    let planned = plan(&planning, filtered.as_ref(), start, &planner_cfg, cfg.mode)?;

    let waypoints = match cfg.pruning {
        Pruning::None => planned.path.clone(),
        Pruning::Collinear => prune_collinear(&planned.path, 1.0),
        Pruning::Shortcut => shortcut_path(&prune_collinear(&planned.path, 1.0), &planning),
    };
    let durations = trapezoidal_time_allocation(&waypoints, cfg.v_max, cfg.a_max)?;
    let spec = BivpSpec::rest_to_rest_3d(cfg.s, &waypoints, durations)?;
    let clock = Instant::now();
    let initial = solve_bivp(&spec)?;
    let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
    let repaired = collision_repair(&initial, &spec, grid, cfg.v_max, cfg.a_max, cfg.repair_rounds)?;

    Ok(PipelineOutput {
        final_waypoints: repaired.spec.waypoints_3d(),
        trajectory: repaired.trajectory,
        spec: repaired.spec,
        stats: planned.stats,
        raw_path: planned.path,
        waypoints,
        path_cost: planned.cost,
        repair_rounds: repaired.rounds,
        solve_ms,
    })
}
