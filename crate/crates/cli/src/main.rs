use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use miner_core::bench::{paperlike_map, run_benchmark, BenchConfig, BenchMap, TrialRecord, CSV_HEADER};
use miner_core::grid::{random_cluttered_map, ObstacleSpec};
use miner_core::heuristic::{
    connectivity_penalty, filter_region, is_connected, is_safe, oracle_region, safety_penalty,
};
use miner_core::pipeline::{run_pipeline, yaw_samples, PipelineConfig, YawMode};
use miner_core::planner::write_path;
use miner_core::{GoalRegion, HeuristicRegion, OccupancyGrid, PiecewisePolynomial, PlannerConfig, SamplingMode, WorldPoint};

#[derive(Parser)]
#[command(name = "miner", version, about = "Heuristic-biased RRT* and minimum jerk/snap trajectories on voxel maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a trajectory on one map.
    Plan(PlanArgs),
    /// Monte Carlo comparison of sampling modes.
    Bench(BenchArgs),
    /// Generate a random cuboid map.
    Genmap(GenmapArgs),
    /// Build the dilated A* region for a query and report its quality.
    Region(RegionArgs),
    /// Sample a trajectory file to CSV.
    TrajExport(TrajExportArgs),
}

fn parse_point(s: &str) -> Result<WorldPoint, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(WorldPoint::new(*x, *y, *z)),
        _ => Err(format!("expected X,Y,Z, got {s:?}")),
    }
}

fn parse_triple(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(format!("expected three integers, got {s:?}")),
    }
}

#[derive(Args)]
struct PlannerArgs {
    #[arg(long, default_value = "heuristic")]
    mode: SamplingMode,
    /// Region sampling probability after the first solution.
    #[arg(long)]
    mu1: Option<f64>,
    /// Region sampling probability before the first solution.
    #[arg(long)]
    mu2: Option<f64>,
    /// Steer length in meters (default: two voxels).
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    goal_radius: Option<f64>,
    /// 3 for minimum jerk, 4 for minimum snap.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(3..=4))]
    s: u8,
    #[arg(long, default_value_t = 2.0)]
    vmax: f64,
    #[arg(long, default_value_t = 2.0)]
    amax: f64,
    /// Obstacle inflation in voxels.
    #[arg(long, default_value_t = 0)]
    inflate: usize,
    #[arg(long, default_value_t = 30)]
    repair_rounds: usize,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    map: PathBuf,
    /// External heuristic region used instead of the A* oracle.
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: WorldPoint,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    goal: WorldPoint,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Stop once the path cost reaches this value (default 1.05× the
    /// straight-line distance).
    #[arg(long)]
    target_cost: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Waypoint output.
    #[arg(long)]
    path: Option<PathBuf>,
    /// One-row CSV with the run's statistics.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Map files; each needs --start and --goal.
    #[arg(long)]
    map: Vec<PathBuf>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Option<WorldPoint>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    goal: Option<WorldPoint>,
    /// Number of generated "paperlike" maps added to the set.
    #[arg(long, default_value_t = 0)]
    paperlike: usize,
    /// Modes to compare (repeat or comma-separate).
    #[arg(long = "mode", value_delimiter = ',', default_value = "uniform,heuristic")]
    modes: Vec<SamplingMode>,
    #[arg(long)]
    mu1: Option<f64>,
    #[arg(long)]
    mu2: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    goal_radius: Option<f64>,
    /// Target cost as a multiple of the start-goal distance.
    #[arg(long, conflicts_with = "first_solution")]
    target_factor: Option<f64>,
    /// End each run at its first solution.
    #[arg(long)]
    first_solution: bool,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(3..=4))]
    s: u8,
    #[arg(long, default_value_t = 2.0)]
    vmax: f64,
    #[arg(long, default_value_t = 2.0)]
    amax: f64,
    #[arg(long, default_value_t = 0)]
    inflate: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    /// Seed of trial 0; trial i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per (map, mode) summary CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenmapArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generate a "paperlike" map and print its start and goal.
    #[arg(long)]
    paperlike: bool,
    #[arg(long, value_parser = parse_triple, default_value = "20,20,20")]
    dims: [usize; 3],
    #[arg(long, default_value_t = 1.0)]
    resolution: f64,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0,0,0")]
    origin: WorldPoint,
    #[arg(long, default_value_t = 15)]
    obstacles: usize,
    #[arg(long)]
    obstacles_max: Option<usize>,
    #[arg(long, value_parser = parse_triple, default_value = "2,2,4")]
    size_min: [usize; 3],
    #[arg(long, value_parser = parse_triple)]
    size_max: Option<[usize; 3]>,
    /// World points whose voxels stay free (repeatable).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    keep_free: Vec<WorldPoint>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RegionArgs {
    #[arg(long)]
    map: PathBuf,
    /// Evaluate this region instead of building the oracle.
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: WorldPoint,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    goal: WorldPoint,
    #[arg(long, default_value_t = 0)]
    inflate: usize,
    /// Write the filtered region here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    /// Connectivity penalty slack in voxels.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
}

#[derive(Args)]
struct TrajExportArgs {
    /// Trajectory file written by `plan --out`.
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Also write a `t,yaw` CSV next to the output.
    #[arg(long)]
    yaw: Option<YawMode>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn load_map(path: &Path) -> Result<OccupancyGrid> {
    OccupancyGrid::load(path).with_context(|| format!("cannot load map {}", path.display()))
}

fn map_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let grid = load_map(&args.map)?;
    let region = match &args.region {
        Some(p) => Some(HeuristicRegion::load(p).with_context(|| format!("cannot load region {}", p.display()))?),
        None => None,
    };
    let p = &args.planner;
    let mut pc = PlannerConfig::for_problem(&grid, &args.start, &args.goal, args.seed);
    if let Some(step) = p.step {
        pc.step = step;
        pc.goal.radius = step;
    }
    if let Some(r) = p.goal_radius {
        pc.goal.radius = r;
    }
    pc.mu1 = p.mu1.unwrap_or(pc.mu1);
    pc.mu2 = p.mu2.unwrap_or(pc.mu2);
    pc.max_iterations = p.max_iter.unwrap_or(pc.max_iterations);
    if args.target_cost.is_some() {
        pc.target_cost = args.target_cost;
    }
    let goal = GoalRegion::new(args.goal, pc.goal.radius)?;
    let cfg = PipelineConfig {
        s: p.s as usize,
        v_max: p.vmax,
        a_max: p.amax,
        inflate: p.inflate,
        repair_rounds: p.repair_rounds,
        ..PipelineConfig::new(pc, p.mode)
    };
    let out = run_pipeline(&grid, region.as_ref(), &args.start, &goal, &cfg)?;
    let initial = out.stats.initial.expect("successful run has an initial solution");
    println!("mode={} seed={}", p.mode, args.seed);
    println!(
        "initial: iterations={} nodes={} cost={:.4} time_ms={:.3}",
        initial.iterations, initial.nodes, initial.cost, initial.time_ms
    );
    match out.stats.optimal {
        Some(o) => println!("optimal: iterations={} nodes={} cost={:.4} time_ms={:.3}", o.iterations, o.nodes, o.cost, o.time_ms),
        None => println!("optimal: not reached"),
    }
    println!(
        "final: cost={:.4} waypoints={} segments={} repair_rounds={} duration={:.3} effort={:.6e} solve_ms={:.4}",
        out.path_cost,
        out.waypoints.len(),
        out.trajectory.segment_count(),
        out.repair_rounds,
        out.trajectory.total_duration(),
        out.effort(),
        out.solve_ms
    );
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        out.trajectory.write_to(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &args.path {
        let mut w = create(path)?;
        write_path(&mut w, &out.raw_path, out.path_cost, out.stats.iterations)?;
        w.flush()?;
    }
    if let Some(path) = &args.report {
        let rec = TrialRecord {
            map: map_id(&args.map),
            mode: p.mode,
            seed: args.seed,
            success: true,
            initial: out.stats.initial,
            optimal: out.stats.optimal,
            jerk_solve_ms: (cfg.s == 3).then_some(out.solve_ms),
            snap_solve_ms: (cfg.s == 4).then_some(out.solve_ms),
            final_cost: Some(out.path_cost),
            effort: Some(out.effort()),
            error: None,
        };
        let mut w = create(path)?;
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(w, "{}", rec.csv_row())?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let mut maps = Vec::new();
    if !args.map.is_empty() {
        let (Some(start), Some(goal)) = (args.start, args.goal) else {
            bail!("map files need --start and --goal");
        };
        for path in &args.map {
            maps.push(BenchMap { id: map_id(path), grid: load_map(path)?, start, goal });
        }
    }
    for i in 0..args.paperlike {
        maps.push(paperlike_map(args.seed.wrapping_add(i as u64))?);
    }
    if maps.is_empty() {
        bail!("no maps: pass --map or --paperlike N");
    }
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        trials: args.trials,
        seed_base: args.seed,
        max_iterations: args.max_iter.unwrap_or(defaults.max_iterations),
        target_factor: if args.first_solution { Some(f64::INFINITY) } else { args.target_factor.or(defaults.target_factor) },
        mu1: args.mu1.unwrap_or(defaults.mu1),
        mu2: args.mu2.unwrap_or(defaults.mu2),
        step: args.step,
        goal_radius: args.goal_radius,
        s: args.s as usize,
        v_max: args.vmax,
        a_max: args.amax,
        inflate: args.inflate,
        repair_rounds: defaults.repair_rounds,
    };
    let report = run_benchmark(&maps, &args.modes, &cfg);
    println!("map,mode,trials,success_rate,init_iter_median,init_cost_median,init_time_ms_median");
    for row in &report.rows {
        let med = |f: &str| row.summary(f).map_or(String::from("-"), |s| format!("{:.3}", s.median));
        println!(
            "{},{},{},{:.3},{},{},{}",
            row.map,
            row.mode,
            row.trials,
            row.success_rate(),
            med("init_iter"),
            med("init_cost"),
            med("init_time_ms")
        );
    }
    if let Some(path) = &args.report {
        let mut w = create(path)?;
        report.write_records_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        report.write_summary_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_genmap(args: GenmapArgs) -> Result<()> {
    if args.paperlike {
        let map = paperlike_map(args.seed)?;
        map.grid.save(&args.out)?;
        let (s, g) = (map.start, map.goal);
        println!("dims={:?} start={},{},{} goal={},{},{}", map.grid.dims(), s.x, s.y, s.z, g.x, g.y, g.z);
        return Ok(());
    }
    let spec = ObstacleSpec {
        count: (args.obstacles, args.obstacles_max.unwrap_or(args.obstacles)),
        size_min: args.size_min,
        size_max: args.size_max.unwrap_or(args.size_min),
        max_retries: 100,
    };
    let probe = OccupancyGrid::new(args.dims, args.resolution, args.origin)?;
    let keep = args
        .keep_free
        .iter()
        .map(|p| probe.world_to_index(p).with_context(|| format!("keep-free point {p:?} is outside the map")))
        .collect::<Result<Vec<_>>>()?;
    let grid = random_cluttered_map(args.dims, args.resolution, args.origin, &spec, &keep, args.seed)?;
    grid.save(&args.out)?;
    println!("dims={:?} occupied_fraction={:.4}", grid.dims(), grid.occupied_fraction());
    Ok(())
}

fn cmd_region(args: RegionArgs) -> Result<()> {
    let raw_grid = load_map(&args.map)?;
    let grid = if args.inflate > 0 { raw_grid.inflate(args.inflate) } else { raw_grid };
    let voxel = |p: &WorldPoint, what: &str| {
        grid.world_to_index(p).with_context(|| format!("{what} {p:?} is outside the map"))
    };
    let (s, g) = (voxel(&args.start, "start")?, voxel(&args.goal, "goal")?);
    let raw = match &args.region {
        Some(p) => HeuristicRegion::load(p).with_context(|| format!("cannot load region {}", p.display()))?,
        None => oracle_region(&grid, s, g)?,
    };
    let filtered = filter_region(&raw, &grid, s, g, args.threshold)?;
    println!("members={}", filtered.member_count());
    println!("connected={}", is_connected(&filtered, s, g));
    println!("safe={}", is_safe(&filtered, &grid)?);
    println!("connectivity_penalty={:.6}", connectivity_penalty(&filtered, args.delta));
    println!("safety_penalty={:.6}", safety_penalty(&filtered, &grid)?);
    if let Some(path) = &args.out {
        filtered.save(path)?;
    }
    Ok(())
}

fn cmd_traj_export(args: TrajExportArgs) -> Result<()> {
    let file = File::open(&args.traj).with_context(|| format!("cannot open {}", args.traj.display()))?;
    let traj = PiecewisePolynomial::read_from(BufReader::new(file))?;
    let mut w = create(&args.out)?;
    traj.write_samples_csv(&mut w, args.dt)?;
    w.flush()?;
    if let Some(mode) = args.yaw {
        let path = args.out.with_extension("yaw.csv");
        let mut w = create(&path)?;
        writeln!(w, "t,yaw")?;
        for (t, yaw) in yaw_samples(&traj, args.dt, mode, 0.0)? {
            writeln!(w, "{t},{yaw}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Genmap(a) => cmd_genmap(a),
        Command::Region(a) => cmd_region(a),
        Command::TrajExport(a) => cmd_traj_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
