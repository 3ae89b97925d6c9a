//! Seeded Monte Carlo comparison of sampling modes over a set of maps.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use crate::grid::{random_cluttered_map, GridError, ObstacleSpec, OccupancyGrid, WorldPoint};
use crate::heuristic::astar_path;
use crate::pipeline::{run_pipeline, PipelineConfig, Pruning, YawMode};
use crate::planner::{PlannerConfig, SamplingMode, StageStats};
use crate::polytraj::{solve_bivp, trapezoidal_time_allocation, BivpSpec};

pub const CSV_HEADER: &str = "map,mode,seed,success,init_iter,init_nodes,init_cost,init_time_ms,\
opt_iter,opt_nodes,opt_time_ms,jerk_solve_ms,snap_solve_ms,final_cost,effort";

#[derive(Debug, Clone)]
pub struct BenchMap {
    pub id: String,
    pub grid: OccupancyGrid,
    pub start: WorldPoint,
    pub goal: WorldPoint,
}

/// Cubic map of 20 to 40 voxels per side with 15 to 20 random cuboids.
/// Start and goal sit two voxels in from opposite corners; the obstacle
/// seed is advanced until A* connects them.
pub fn paperlike_map(seed: u64) -> Result<BenchMap, GridError> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(20..=40usize);
    let dims = [n, n, n];
    let start_v = [2, 2, 2];
    let goal_v = [n - 3, n - 3, n - 3];
    let side = (n / 3).max(3);
    let spec = ObstacleSpec { count: (15, 20), size_min: [2, 2, 2], size_max: [side, side, n], max_retries: 100 };
    let mut keep = crate::grid::chebyshev_neighborhood(dims, start_v, 1);
    keep.extend(crate::grid::chebyshev_neighborhood(dims, goal_v, 1));
    for attempt in 0..1000u64 {
        let map_seed = rng.random::<u64>() ^ attempt;
        let grid = random_cluttered_map(dims, 1.0, WorldPoint::zeros(), &spec, &keep, map_seed)?;
        if astar_path(&grid, start_v, goal_v).is_ok() {
            return Ok(BenchMap {
                id: format!("paperlike-{seed}"),
                start: grid.index_to_world(start_v),
                goal: grid.index_to_world(goal_v),
                grid,
            });
        }
    }
    Err(GridError::Invalid(format!("no feasible paperlike map for seed {seed}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub trials: usize,
    pub seed_base: u64,
    pub max_iterations: usize,
    /// Target cost as a multiple of the start-goal distance; infinity ends
    /// each run at its first solution and `None` runs every iteration.
    pub target_factor: Option<f64>,
    pub mu1: f64,
    pub mu2: f64,
    /// Steer length in meters; defaults to two voxels of each map.
    pub step: Option<f64>,
    pub goal_radius: Option<f64>,
    pub s: usize,
    pub v_max: f64,
    pub a_max: f64,
    pub inflate: usize,
    pub repair_rounds: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed_base: 0,
            max_iterations: 20_000,
            target_factor: Some(1.05),
            mu1: 0.5,
            mu2: 0.9,
            step: None,
            goal_radius: None,
            s: 3,
            v_max: 2.0,
            a_max: 2.0,
            inflate: 0,
            repair_rounds: 30,
        }
    }
}

impl BenchConfig {
    pub fn pipeline_config(&self, map: &BenchMap, mode: SamplingMode, seed: u64) -> PipelineConfig {
        let mut pc = PlannerConfig::for_problem(&map.grid, &map.start, &map.goal, seed);
        if let Some(step) = self.step {
            pc.step = step;
        }
        pc.goal.radius = self.goal_radius.unwrap_or(pc.step);
        pc.max_iterations = self.max_iterations;
        pc.mu1 = self.mu1;
        pc.mu2 = self.mu2;
        pc.target_cost = self.target_factor.map(|f| f * (map.goal - map.start).norm());
        PipelineConfig {
            planner: pc,
            mode,
            s: self.s,
            v_max: self.v_max,
            a_max: self.a_max,
            inflate: self.inflate,
            yaw: YawMode::None,
            repair_rounds: self.repair_rounds,
            pruning: Pruning::Shortcut,
            region_threshold: 0.5,
        }
    }
}

/// One pipeline run. Stage fields are `None` when the stage was not
/// reached; back-end fields are `None` when the run failed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub map: String,
    pub mode: SamplingMode,
    pub seed: u64,
    pub success: bool,
    pub initial: Option<StageStats>,
    pub optimal: Option<StageStats>,
    pub jerk_solve_ms: Option<f64>,
    pub snap_solve_ms: Option<f64>,
    /// Front-end path cost at the end of the run.
    pub final_cost: Option<f64>,
    pub effort: Option<f64>,
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        let u = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
        let i = self.initial.as_ref();
        let o = self.optimal.as_ref();
        [
            self.map.clone(),
            self.mode.to_string(),
            self.seed.to_string(),
            (self.success as u8).to_string(),
            u(i.map(|s| s.iterations)),
            u(i.map(|s| s.nodes)),
            f(i.map(|s| s.cost)),
            f(i.map(|s| s.time_ms)),
            u(o.map(|s| s.iterations)),
            u(o.map(|s| s.nodes)),
            f(o.map(|s| s.time_ms)),
            f(self.jerk_solve_ms),
            f(self.snap_solve_ms),
            f(self.final_cost),
            f(self.effort),
        ]
        .join(",")
    }
}

fn timed_solve(waypoints: &[WorldPoint], s: usize, v_max: f64, a_max: f64) -> Option<f64> {
    let durations = trapezoidal_time_allocation(waypoints, v_max, a_max).ok()?;
    let spec = BivpSpec::rest_to_rest_3d(s, waypoints, durations).ok()?;
    let clock = Instant::now();
    solve_bivp(&spec).ok()?;
    Some(clock.elapsed().as_secs_f64() * 1e3)
}

pub fn run_trial(map: &BenchMap, mode: SamplingMode, seed: u64, cfg: &BenchConfig) -> TrialRecord {
    let pc = cfg.pipeline_config(map, mode, seed);
    let goal = pc.planner.goal;
    let mut rec = TrialRecord {
        map: map.id.clone(),
        mode,
        seed,
        success: false,
        initial: None,
        optimal: None,
        jerk_solve_ms: None,
        snap_solve_ms: None,
        final_cost: None,
        effort: None,
        error: None,
    };
    match run_pipeline(&map.grid, None, &map.start, &goal, &pc) {
        Ok(out) => {
            rec.success = true;
            rec.initial = out.stats.initial;
            rec.optimal = out.stats.optimal;
            rec.final_cost = Some(out.path_cost);
            rec.effort = Some(out.effort());
            rec.jerk_solve_ms = timed_solve(&out.waypoints, 3, cfg.v_max, cfg.a_max);
            rec.snap_solve_ms = timed_solve(&out.waypoints, 4, cfg.v_max, cfg.a_max);
        }
        Err(e) => {
            if let crate::pipeline::PipelineError::Plan(crate::planner::PlanError::NoSolution { stats, .. }) = &e {
                rec.initial = stats.initial;
            }
            rec.error = Some(e.to_string());
        }
    }
    rec
}

/// Mean and median of one field over successful trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Summary { count: n, mean: v.iter().sum::<f64>() / n as f64, median })
    }
}

pub const SUMMARY_FIELDS: [&str; 11] = [
    "init_iter",
    "init_nodes",
    "init_cost",
    "init_time_ms",
    "opt_iter",
    "opt_nodes",
    "opt_time_ms",
    "jerk_solve_ms",
    "snap_solve_ms",
    "final_cost",
    "effort",
];

fn field(rec: &TrialRecord, name: &str) -> Option<f64> {
    let i = rec.initial.as_ref();
    let o = rec.optimal.as_ref();
    match name {
        "init_iter" => i.map(|s| s.iterations as f64),
        "init_nodes" => i.map(|s| s.nodes as f64),
        "init_cost" => i.map(|s| s.cost),
        "init_time_ms" => i.map(|s| s.time_ms),
        "opt_iter" => o.map(|s| s.iterations as f64),
        "opt_nodes" => o.map(|s| s.nodes as f64),
        "opt_time_ms" => o.map(|s| s.time_ms),
        "jerk_solve_ms" => rec.jerk_solve_ms,
        "snap_solve_ms" => rec.snap_solve_ms,
        "final_cost" => rec.final_cost,
        "effort" => rec.effort,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub map: String,
    pub mode: SamplingMode,
    pub trials: usize,
    pub successes: usize,
    /// Per field of [`SUMMARY_FIELDS`], over successful trials.
    pub summaries: Vec<Option<Summary>>,
}

impl AggregateRow {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }

    pub fn summary(&self, name: &str) -> Option<Summary> {
        SUMMARY_FIELDS.iter().position(|f| *f == name).and_then(|i| self.summaries[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    /// Ordered by map, then mode, then trial.
    pub records: Vec<TrialRecord>,
    pub rows: Vec<AggregateRow>,
}

impl AggregateReport {
    pub fn from_records(records: Vec<TrialRecord>) -> Self {
        let mut keys: Vec<(String, SamplingMode)> = Vec::new();
        for r in &records {
            if !keys.iter().any(|k| k.0 == r.map && k.1 == r.mode) {
                keys.push((r.map.clone(), r.mode));
            }
        }
        let rows = keys
            .into_iter()
            .map(|(map, mode)| {
                let group: Vec<&TrialRecord> = records.iter().filter(|r| r.map == map && r.mode == mode).collect();
                let ok: Vec<&TrialRecord> = group.iter().copied().filter(|r| r.success).collect();
                let summaries = SUMMARY_FIELDS
                    .iter()
                    .map(|name| Summary::of(&ok.iter().filter_map(|r| field(r, name)).collect::<Vec<_>>()))
                    .collect();
                AggregateRow { map, mode, trials: group.len(), successes: ok.len(), summaries }
            })
            .collect();
        Self { records, rows }
    }

    pub fn row(&self, map: &str, mode: SamplingMode) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.map == map && r.mode == mode)
    }

    pub fn write_records_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }

    /// One line per (map, mode) with the success rate and the mean and
    /// median of every field.
    pub fn write_summary_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut header = vec!["map".to_string(), "mode".into(), "trials".into(), "success_rate".into()];
        for f in SUMMARY_FIELDS {
            header.push(format!("{f}_mean"));
            header.push(format!("{f}_median"));
        }
        writeln!(w, "{}", header.join(","))?;
        for row in &self.rows {
            let mut cells = vec![row.map.clone(), row.mode.to_string(), row.trials.to_string(), format!("{}", row.success_rate())];
            for s in &row.summaries {
                match s {
                    Some(s) => {
                        cells.push(format!("{}", s.mean));
                        cells.push(format!("{}", s.median));
                    }
                    None => cells.extend([String::new(), String::new()]),
                }
            }
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Runs `trials` seeded trials for every (map, mode) pair in parallel.
/// Trial `i` uses seed `seed_base + i`. Failures are recorded, never fatal.
pub fn run_benchmark(maps: &[BenchMap], modes: &[SamplingMode], cfg: &BenchConfig) -> AggregateReport {
    let jobs: Vec<(usize, SamplingMode, u64)> = maps
        .iter()
        .enumerate()
        .flat_map(|(m, _)| {
            modes.iter().flat_map(move |mode| (0..cfg.trials as u64).map(move |i| (m, *mode, cfg.seed_base + i)))
        })
        .collect();
    let records = jobs.par_iter().map(|(m, mode, seed)| run_trial(&maps[*m], *mode, *seed, cfg)).collect();
    AggregateReport::from_records(records)
}
