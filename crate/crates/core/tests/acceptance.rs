//! Acceptance suite. Every test prints one `criterion N [PASS|FAIL]` line
//! straight to stdout (bypassing capture) and then asserts.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use miner_core::bench::{paperlike_map, run_benchmark, BenchConfig, BenchMap};
use miner_core::grid::VoxelIndex;
use miner_core::heuristic::{astar_path, filter_region, is_connected, is_safe, oracle_region};
use miner_core::pipeline::{miner_rrt_star, PipelineConfig};
use miner_core::planner::{plan, rewire_radius_bound, SamplingMode};
use miner_core::polytraj::{colliding_segments, solve_bivp, trapezoidal_time_allocation, BivpSpec};
use miner_core::{GoalRegion, OccupancyGrid, PiecewisePolynomial, PlannerConfig, WorldPoint};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {id:>2} [{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "{}", line.trim_end());
}

fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Polynomial helpers in ascending monomial order, independent of the crate.

fn factorial_ratio(j: usize, k: usize) -> f64 {
    (0..k).map(|i| (j - i) as f64).product()
}

/// Row of `d^k/dτ^k [1, τ, …, τ^(n-1)]`.
fn deriv_row(tau: f64, n: usize, k: usize) -> Vec<f64> {
    (0..n).map(|j| if j < k { 0.0 } else { factorial_ratio(j, k) * tau.powi((j - k) as i32) }).collect()
}

fn poly_deriv(p: &[f64], k: usize) -> Vec<f64> {
    (k..p.len()).map(|j| p[j] * factorial_ratio(j, k)).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len().max(b.len())).map(|i| a.get(i).unwrap_or(&0.0) + b.get(i).unwrap_or(&0.0)).collect()
}

fn integral_0_t(p: &[f64], t: f64) -> f64 {
    p.iter().enumerate().map(|(j, c)| c * t.powi(j as i32 + 1) / (j + 1) as f64).sum()
}

/// `∫ ‖p^{(s)}‖²` over all segments; `segs[i][axis]` are local coefficients.
fn effort_exact(s: usize, durations: &[f64], segs: &[Vec<Vec<f64>>]) -> f64 {
    segs.iter()
        .zip(durations)
        .map(|(axes, t)| {
            axes.iter()
                .map(|p| {
                    let d = poly_deriv(p, s);
                    integral_0_t(&poly_mul(&d, &d), *t)
                })
                .sum::<f64>()
        })
        .sum()
}

fn traj_segments(traj: &PiecewisePolynomial) -> Vec<Vec<Vec<f64>>> {
    traj.coefficients()
        .iter()
        .map(|c| (0..c.ncols()).map(|a| c.column(a).iter().copied().collect()).collect())
        .collect()
}

/// Dense assembly of the same boundary, waypoint and continuity conditions,
/// solved by nalgebra's LU.
fn dense_oracle(
    s: usize,
    start: &DMatrix<f64>,
    end: &DMatrix<f64>,
    inter: &[DMatrix<f64>],
    durations: &[f64],
) -> DMatrix<f64> {
    let m = durations.len();
    let n = 2 * s;
    let dim = start.nrows();
    let size = n * m;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DMatrix::<f64>::zeros(size, dim);
    let mut row = 0;
    let put = |row: usize, seg: usize, coeffs: Vec<f64>, sign: f64, a: &mut DMatrix<f64>| {
        for (j, v) in coeffs.into_iter().enumerate() {
            a[(row, seg * n + j)] += sign * v;
        }
    };
    for k in 0..s {
        put(row, 0, deriv_row(0.0, n, k), 1.0, &mut a);
        b.set_row(row, &start.column(k).transpose());
        row += 1;
    }
    for (i, cond) in inter.iter().enumerate() {
        let d = cond.ncols();
        for k in 0..d {
            put(row, i, deriv_row(durations[i], n, k), 1.0, &mut a);
            b.set_row(row, &cond.column(k).transpose());
            row += 1;
        }
        for k in 0..n - d {
            put(row, i, deriv_row(durations[i], n, k), 1.0, &mut a);
            put(row, i + 1, deriv_row(0.0, n, k), -1.0, &mut a);
            row += 1;
        }
    }
    for k in 0..s {
        put(row, m - 1, deriv_row(durations[m - 1], n, k), 1.0, &mut a);
        b.set_row(row, &end.column(k).transpose());
        row += 1;
    }
    assert_eq!(row, size);
    a.lu().solve(&b).expect("dense oracle system is singular")
}

struct RandomBivp {
    s: usize,
    start: DMatrix<f64>,
    end: DMatrix<f64>,
    inter: Vec<DMatrix<f64>>,
    durations: Vec<f64>,
}

impl RandomBivp {
    fn draw(rng: &mut ChaCha8Rng, s: usize, m: usize, dim: usize, mixed_orders: bool) -> Self {
        let flag = |cols: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(dim, cols, |_, _| rng.random_range(-5.0..5.0));
        let start = flag(s, rng);
        let end = flag(s, rng);
        let inter = (0..m - 1)
            .map(|_| {
                let d = if mixed_orders { rng.random_range(1..=s) } else { 1 };
                flag(d, rng)
            })
            .collect();
        let durations = (0..m).map(|_| rng.random_range(0.5..3.0)).collect();
        Self { s, start, end, inter, durations }
    }

    fn spec(&self) -> BivpSpec {
        BivpSpec::new(self.s, self.start.clone(), self.end.clone(), self.inter.clone(), self.durations.clone()).unwrap()
    }

    fn oracle(&self) -> DMatrix<f64> {
        dense_oracle(self.s, &self.start, &self.end, &self.inter, &self.durations)
    }
}

fn stacked(traj: &PiecewisePolynomial) -> DMatrix<f64> {
    let blocks = traj.coefficients();
    let n = blocks[0].nrows();
    let dim = blocks[0].ncols();
    DMatrix::from_fn(n * blocks.len(), dim, |r, c| blocks[r / n][(r % n, c)])
}

#[test]
fn criterion_01_banded_solver_matches_dense_oracle() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let s = if i % 2 == 0 { 3 } else { 4 };
        let m = rng.random_range(1..=50);
        let dim = rng.random_range(1..=3);
        let inst = RandomBivp::draw(&mut rng, s, m, dim, i % 4 >= 2);
        let traj = solve_bivp(&inst.spec()).unwrap();
        let got = stacked(&traj);
        let want = inst.oracle();
        let rel = (&got - &want).amax() / want.amax().max(1.0);
        worst = worst.max(rel);
    }
    let secs = clock.elapsed().as_secs_f64();
    report(1, "banded PLU vs dense elimination", worst <= 1e-8 && secs < 10.0, &format!("200 instances, worst relative error {worst:.2e}, {secs:.2}s"));
}

#[test]
fn criterion_02_analytic_single_segment_minimizers() {
    let expected: [(usize, Vec<f64>); 2] = [
        (3, vec![0.0, 0.0, 0.0, 10.0, -15.0, 6.0]),
        (4, vec![0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0]),
    ];
    let mut worst = 0.0f64;
    let mut effort_err = 0.0;
    for (s, coeffs) in &expected {
        let wps = [DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)];
        let spec = BivpSpec::rest_to_rest(*s, &wps, vec![1.0]).unwrap();
        let traj = solve_bivp(&spec).unwrap();
        let got = traj.coefficients()[0].column(0).iter().copied().collect::<Vec<_>>();
        let mut start = DMatrix::zeros(1, *s);
        let mut end = DMatrix::zeros(1, *s);
        start[(0, 0)] = 0.0;
        end[(0, 0)] = 1.0;
        let oracle = dense_oracle(*s, &start, &end, &[], &[1.0]);
        for j in 0..2 * s {
            worst = worst.max((got[j] - coeffs[j]).abs()).max((oracle[(j, 0)] - coeffs[j]).abs());
        }
        if *s == 3 {
            // ∫ (60 - 360 t + 360 t²)² dt over [0, 1].
            let jerk = [60.0, -360.0, 360.0];
            let symbolic = integral_0_t(&poly_mul(&jerk, &jerk), 1.0);
            assert!((symbolic - 720.0).abs() < 1e-9);
            effort_err = (traj.control_effort() - 720.0).abs() / 720.0;
        }
    }
    let pass = worst <= 1e-9 && effort_err <= 1e-6;
    report(2, "analytic minimum jerk/snap coefficients and effort", pass, &format!("max coefficient error {worst:.2e}, effort relative error {effort_err:.2e}"));
}

/// Degree `2s - 1` polynomial on `[0, t]` with derivatives `left` at 0 and
/// `right` at `t`, orders `0..s`.
fn hermite(s: usize, t: f64, left: &[f64], right: &[f64]) -> Vec<f64> {
    let n = 2 * s;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for k in 0..s {
        a.set_row(k, &DVector::from_vec(deriv_row(0.0, n, k)).transpose());
        b[k] = left[k];
        a.set_row(s + k, &DVector::from_vec(deriv_row(t, n, k)).transpose());
        b[s + k] = right[k];
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn criterion_03_continuity_and_local_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_jump = 0.0f64;
    let mut min_gain = f64::INFINITY;
    let mut perturbations = 0;
    for inst_id in 0..12 {
        let s = if inst_id % 2 == 0 { 3 } else { 4 };
        let m = rng.random_range(1..=8);
        let dim = 3;
        let inst = RandomBivp::draw(&mut rng, s, m, dim, false);
        let traj = solve_bivp(&inst.spec()).unwrap();
        for i in 0..m - 1 {
            for k in 0..=2 * s - 2 {
                let l = traj.eval_segment(i, inst.durations[i], k);
                let r = traj.eval_segment(i + 1, 0.0, k);
                let scale = l.amax().max(1.0);
                max_jump = max_jump.max((l - r).amax() / scale);
            }
        }
        let base = traj_segments(&traj);
        let j0 = effort_exact(s, &inst.durations, &base);
        for _ in 0..100 {
            perturbations += 1;
            let scale = 10f64.powf(rng.random_range(-3.0..0.0));
            // Shared random derivatives 1..s at interior joints, zero everywhere
            // the conditions pin them.
            let joint: Vec<Vec<Vec<f64>>> = (0..=m)
                .map(|j| {
                    (0..dim)
                        .map(|_| {
                            (0..s)
                                .map(|k| if k == 0 || j == 0 || j == m { 0.0 } else { scale * rng.random_range(-1.0..1.0) })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            let use_joint = rng.random_bool(0.5);
            let mut perturbed = base.clone();
            for (i, seg) in perturbed.iter_mut().enumerate() {
                let t = inst.durations[i];
                for (axis, p) in seg.iter_mut().enumerate() {
                    let mut delta = Vec::new();
                    if use_joint {
                        delta = hermite(s, t, &joint[i][axis], &joint[i + 1][axis]);
                    }
                    // Bubble τ^s (T - τ)^s q(τ) with random quadratic q.
                    let mut bubble = vec![1.0];
                    for _ in 0..s {
                        bubble = poly_mul(&bubble, &[0.0, 1.0]);
                        bubble = poly_mul(&bubble, &[t, -1.0]);
                    }
                    let q: Vec<f64> = (0..3).map(|_| scale * rng.random_range(-1.0..1.0) / t.powi(2 * s as i32)).collect();
                    delta = poly_add(&delta, &poly_mul(&bubble, &q));
                    *p = poly_add(p, &delta);
                }
            }
            let j1 = effort_exact(s, &inst.durations, &perturbed);
            min_gain = min_gain.min((j1 - j0) / j0.max(1.0));
        }
    }
    let pass = max_jump <= 1e-6 && min_gain >= -1e-9;
    report(3, "joint continuity and effort optimality", pass, &format!("max joint jump {max_jump:.2e}, {perturbations} perturbations, min relative effort change {min_gain:.2e}"));
}

fn timed_solve(spec: &BivpSpec, reps: usize) -> f64 {
    (0..reps)
        .map(|_| {
            let clock = Instant::now();
            std::hint::black_box(solve_bivp(std::hint::black_box(spec)).unwrap());
            clock.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn chain_spec(s: usize, m: usize, seed: u64) -> BivpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wps: Vec<WorldPoint> = (0..=m)
        .map(|i| WorldPoint::new(i as f64 * 2.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let durations = trapezoidal_time_allocation(&wps, 2.0, 2.0).unwrap();
    BivpSpec::rest_to_rest_3d(s, &wps, durations).unwrap()
}

#[test]
fn criterion_04_linear_complexity() {
    let clock = Instant::now();
    let small = chain_spec(4, 100, 4);
    let large = chain_spec(4, 2000, 5);
    let t_small = timed_solve(&small, 30);
    let t_large = timed_solve(&large, 5);
    let ratio = t_large / t_small;
    let secs = clock.elapsed().as_secs_f64();
    let pass = ratio <= 30.0 && secs < 5.0;
    report(4, "solve time scales linearly in M", pass, &format!("t(100)={:.3}ms t(2000)={:.3}ms ratio {ratio:.1}, {secs:.2}s", t_small * 1e3, t_large * 1e3));
}

#[test]
fn criterion_05_uniform_rrt_star_approaches_straight_line() {
    let clock = Instant::now();
    let grid = OccupancyGrid::new([50, 50, 50], 1.0, WorldPoint::zeros()).unwrap();
    let start = WorldPoint::new(5.0, 25.0, 25.0);
    let goal = WorldPoint::new(45.0, 25.0, 25.0);
    let straight = (goal - start).norm();
    let costs: Vec<f64> = (0..50)
        .map(|seed| {
            let mut cfg = PlannerConfig::for_problem(&grid, &start, &goal, seed);
            cfg.step = 10.0;
            cfg.goal.radius = 10.0;
            cfg.gamma_rrt = 2.0 * rewire_radius_bound(3, grid.free_measure());
            cfg.max_iterations = 5000;
            cfg.target_cost = None;
            plan(&grid, None, &start, &cfg, SamplingMode::Uniform).map_or(f64::INFINITY, |o| o.cost)
        })
        .collect();
    let med = median(costs);
    let secs = clock.elapsed().as_secs_f64();
    let pass = med <= 1.05 * straight && secs < 60.0;
    report(5, "uniform RRT* median cost near the straight line", pass, &format!("median {med:.3} vs {straight:.1} (ratio {:.4}), {secs:.1}s", med / straight));
}

#[test]
fn criterion_06_heuristic_sampling_speeds_up_first_solution() {
    let clock = Instant::now();
    let maps: Vec<BenchMap> = (0..20).map(|i| paperlike_map(600 + i).unwrap()).collect();
    let cfg = BenchConfig { trials: 50, seed_base: 0, target_factor: Some(f64::INFINITY), ..Default::default() };
    let report_ = run_benchmark(&maps, &[SamplingMode::Uniform, SamplingMode::Heuristic], &cfg);
    let pooled = |mode: SamplingMode, f: &dyn Fn(&miner_core::planner::StageStats) -> f64| {
        report_.records.iter().filter(|r| r.mode == mode && r.success).filter_map(|r| r.initial.as_ref().map(f)).collect::<Vec<f64>>()
    };
    let rate = |mode: SamplingMode| {
        let all: Vec<_> = report_.records.iter().filter(|r| r.mode == mode).collect();
        all.iter().filter(|r| r.success).count() as f64 / all.len() as f64
    };
    let it_u = median(pooled(SamplingMode::Uniform, &|s| s.iterations as f64));
    let it_h = median(pooled(SamplingMode::Heuristic, &|s| s.iterations as f64));
    let c_u = median(pooled(SamplingMode::Uniform, &|s| s.cost));
    let c_h = median(pooled(SamplingMode::Heuristic, &|s| s.cost));
    let ratio = it_h / it_u;
    let secs = clock.elapsed().as_secs_f64();
    let pass = ratio <= 0.5 && c_h < c_u;
    report(
        6,
        "heuristic region reduces first-solution iterations",
        pass,
        &format!(
            "median iterations {it_h:.1} vs {it_u:.1} (ratio {ratio:.3}), median initial cost {c_h:.2} vs {c_u:.2}, success {:.3}/{:.3}, {secs:.1}s",
            rate(SamplingMode::Heuristic),
            rate(SamplingMode::Uniform)
        ),
    );
}

#[test]
fn criterion_07_back_end_sub_millisecond() {
    let mut times = Vec::new();
    for s in [3, 4] {
        let spec = chain_spec(s, 15, 7);
        let samples: Vec<f64> = (0..200).map(|_| timed_solve(&spec, 1)).collect();
        times.push(median(samples) * 1e3);
    }
    let pass = times.iter().all(|t| *t < 1.0);
    report(7, "M=15 minimum jerk and snap solves under 1 ms", pass, &format!("median jerk {:.4}ms, snap {:.4}ms", times[0], times[1]));
}

fn endpoints(map: &BenchMap) -> (VoxelIndex, VoxelIndex) {
    (map.grid.world_to_index(&map.start).unwrap(), map.grid.world_to_index(&map.goal).unwrap())
}

#[test]
fn criterion_08_oracle_regions_connected_and_safe() {
    let mut good = 0;
    let mut filtered_good = 0;
    for seed in 0..100 {
        let map = paperlike_map(2000 + seed).unwrap();
        let (s, g) = endpoints(&map);
        let region = oracle_region(&map.grid, s, g).unwrap();
        if is_connected(&region, s, g) && is_safe(&region, &map.grid).unwrap() {
            good += 1;
        }
        let f = filter_region(&region, &map.grid, s, g, 0.5).unwrap();
        if is_connected(&f, s, g) && is_safe(&f, &map.grid).unwrap() {
            filtered_good += 1;
        }
    }
    report(8, "dilated A* regions are connected and safe", good == 100 && filtered_good == 100, &format!("{good}/100 raw, {filtered_good}/100 filtered"));
}

/// Point samples every `res / (20 v_max)` seconds, independent of the
/// repair checker's polyline traversal.
fn point_sampled_free(traj: &PiecewisePolynomial, grid: &OccupancyGrid, v_max: f64) -> bool {
    let dt = grid.resolution() / (20.0 * v_max);
    let total = traj.total_duration();
    let n = (total / dt).ceil() as usize;
    (0..=n).all(|i| grid.is_point_free(&traj.position_3d((i as f64 * dt).min(total)).unwrap()))
}

#[test]
fn criterion_09_end_to_end_collision_free() {
    let clock = Instant::now();
    let mut runs = 0;
    let mut ok = 0;
    let mut max_rounds = 0;
    let mut seed = 5000;
    let mut failures = Vec::new();
    while runs < 50 {
        let map = paperlike_map(seed).unwrap();
        seed += 1;
        let (s, g) = endpoints(&map);
        // Feasible with the planning margin, through passages a straight
        // segment can take (A* may cut corners between occupied voxels).
        let inflated = map.grid.inflate(1);
        let passable = astar_path(&inflated, s, g).is_ok_and(|p| {
            p.voxels.windows(2).all(|w| inflated.segment_collision_free(&inflated.index_to_world(w[0]), &inflated.index_to_world(w[1])))
        });
        if !passable {
            continue;
        }
        runs += 1;
        let mut pc = PlannerConfig::for_problem(&map.grid, &map.start, &map.goal, seed);
        pc.max_iterations = 20_000;
        let mut cfg = PipelineConfig::new(pc, SamplingMode::Heuristic);
        cfg.inflate = 1;
        let goal = GoalRegion::new(map.goal, cfg.planner.goal.radius).unwrap();
        match miner_rrt_star(&map.grid, &map.start, &goal, &cfg) {
            Ok(out) => {
                let traj = &out.trajectory;
                let end = traj.position_3d(traj.total_duration()).unwrap();
                let clean = colliding_segments(traj, &map.grid, cfg.v_max).is_empty()
                    && point_sampled_free(traj, &map.grid, cfg.v_max)
                    && (traj.position_3d(0.0).unwrap() - map.start).norm() < 1e-9
                    && (end - map.goal).norm() < 1e-9
                    && out.repair_rounds <= 30;
                max_rounds = max_rounds.max(out.repair_rounds);
                if clean {
                    ok += 1;
                } else {
                    failures.push(format!("{}: unclean", map.id));
                }
            }
            Err(e) => failures.push(format!("{}: {e}", map.id)),
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(9, "end-to-end trajectories are collision-free", ok == runs, &format!("{ok}/{runs} maps, max repair rounds {max_rounds}, {secs:.1}s{}", if failures.is_empty() { String::new() } else { format!(" failed: {failures:?}") }));
}

/// Dijkstra over 26-connected voxels; returns optimal step-class counts.
fn dijkstra_counts(grid: &OccupancyGrid, start: VoxelIndex, goal: VoxelIndex) -> Option<[usize; 3]> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let cost_of = |c: [usize; 3]| c[0] as f64 + c[1] as f64 * 2f64.sqrt() + c[2] as f64 * 3f64.sqrt();
    let dims = grid.dims();
    let idx = |v: VoxelIndex| v[0] + dims[0] * (v[1] + dims[1] * v[2]);
    let mut best: Vec<Option<[usize; 3]>> = vec![None; grid.num_cells()];
    let mut heap = BinaryHeap::new();
    best[idx(start)] = Some([0, 0, 0]);
    heap.push(Reverse((ordered(0.0), start)));
    while let Some(Reverse((d, v))) = heap.pop() {
        let counts = best[idx(v)].unwrap();
        if d.0 > cost_of(counts) {
            continue;
        }
        if v == goal {
            return Some(counts);
        }
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let changed = [dx, dy, dz].iter().filter(|d| **d != 0).count();
                    if changed == 0 {
                        continue;
                    }
                    let nb = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                    if !grid.in_bounds(nb) {
                        continue;
                    }
                    let nb = [nb[0] as usize, nb[1] as usize, nb[2] as usize];
                    if grid.is_occupied(nb) {
                        continue;
                    }
                    let mut c = counts;
                    c[changed - 1] += 1;
                    let better = best[idx(nb)].is_none_or(|old| cost_of(c) < cost_of(old) - 1e-12);
                    if better {
                        best[idx(nb)] = Some(c);
                        heap.push(Reverse((ordered(cost_of(c)), nb)));
                    }
                }
            }
        }
    }
    None
}

#[derive(Clone, Copy)]
struct Ordered(f64);

impl PartialEq for Ordered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn ordered(v: f64) -> Ordered {
    Ordered(v)
}

#[test]
fn criterion_10_astar_matches_dijkstra() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut agree = 0;
    let mut with_path = 0;
    let mut mismatches = Vec::new();
    for trial in 0..500 {
        let density = rng.random_range(0.0..0.45);
        let occ: Vec<bool> = (0..512).map(|_| rng.random_bool(density)).collect();
        let mut grid = OccupancyGrid::from_occupancy([8, 8, 8], 1.0, WorldPoint::zeros(), occ).unwrap();
        let pick = |rng: &mut ChaCha8Rng| [rng.random_range(0..8), rng.random_range(0..8), rng.random_range(0..8)];
        let (s, g) = (pick(&mut rng), pick(&mut rng));
        grid.set_occupied(s, false);
        grid.set_occupied(g, false);
        let astar = astar_path(&grid, s, g).ok();
        let oracle = dijkstra_counts(&grid, s, g);
        let same = match (&astar, oracle) {
            (Some(p), Some(c)) => {
                with_path += 1;
                let valid = p.voxels.first() == Some(&s)
                    && p.voxels.last() == Some(&g)
                    && p.voxels.iter().all(|v| !grid.is_occupied(*v))
                    && p.voxels.windows(2).all(|w| (0..3).all(|a| w[0][a].abs_diff(w[1][a]) <= 1) && w[0] != w[1]);
                valid && p.step_counts() == c
            }
            (None, None) => true,
            _ => false,
        };
        if same {
            agree += 1;
        } else {
            mismatches.push(trial);
        }
    }
    report(10, "A* cost equals Dijkstra on random 8^3 grids", agree == 500, &format!("{agree}/500 agree ({with_path} with a path){}", if mismatches.is_empty() { String::new() } else { format!(" mismatches: {mismatches:?}") }));
}
