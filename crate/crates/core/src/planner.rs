//! RRT* front end with uniform, informed-set, and heuristic-region-biased
//! sampling.

use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitBall};

use crate::grid::{is_finite_point, GoalRegion, OccupancyGrid, WorldPoint};
use crate::heuristic::{HeuristicRegion, RegionError, RegionSampler};

/// Configuration space dimension.
pub const DIM: usize = 3;

const DUPLICATE_EPS: f64 = 1e-9;

#[derive(thiserror::Error, Debug)]
pub enum PlanError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("start point is not in free space")]
    StartBlocked,
    #[error("heuristic mode requires a region")]
    MissingRegion,
    #[error("no path reached the goal region after {iterations} iterations")]
    NoSolution { iterations: usize, stats: Box<PlanStats> },
    #[error(transparent)]
    Region(#[from] RegionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplingMode {
    Uniform,
    Informed,
    Heuristic,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Uniform => "uniform",
            SamplingMode::Informed => "informed",
            SamplingMode::Heuristic => "heuristic",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SamplingMode::Uniform),
            "informed" => Ok(SamplingMode::Informed),
            "heuristic" => Ok(SamplingMode::Heuristic),
            other => Err(format!("unknown sampling mode {other:?}")),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig {
    /// Probability of sampling the region once a solution exists.
    pub mu1: f64,
    /// Probability of sampling the region before the first solution.
    pub mu2: f64,
    /// Steer length in meters.
    pub step: f64,
    pub goal: GoalRegion,
    pub max_iterations: usize,
    /// Cost at which the refinement stage ends. `None` runs all iterations.
    pub target_cost: Option<f64>,
    pub gamma_rrt: f64,
    pub rng_seed: u64,
}

impl PlannerConfig {
    /// Defaults for a given map and query: `mu2 = 0.9`, `mu1 = 0.5`,
    /// step of two voxels, goal radius of one step, target cost 1.05× the
    /// straight-line distance and a rewire constant 10% above the bound.
    pub fn for_problem(grid: &OccupancyGrid, start: &WorldPoint, goal: &WorldPoint, seed: u64) -> Self {
        let step = 2.0 * grid.resolution();
        let bound = rewire_radius_bound(DIM, grid.free_measure().max(f64::MIN_POSITIVE));
        Self {
            mu1: 0.5,
            mu2: 0.9,
            step,
            goal: GoalRegion { center: *goal, radius: step },
            max_iterations: 20_000,
            target_cost: Some(1.05 * (goal - start).norm()),
            gamma_rrt: 1.1 * bound,
            rng_seed: seed,
        }
    }

    pub fn validate(&self, grid: &OccupancyGrid) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.mu1) || !(0.0..=1.0).contains(&self.mu2) {
            return bad(format!("mu1={} mu2={} must lie in [0, 1]", self.mu1, self.mu2));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step {} must be positive", self.step));
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1".into());
        }
        if !(self.goal.radius > 0.0) || !is_finite_point(&self.goal.center) {
            return bad("goal radius must be positive".into());
        }
        let bound = rewire_radius_bound(DIM, grid.free_measure());
        if !(self.gamma_rrt > bound) {
            return bad(format!("gamma_rrt {} must exceed the bound {bound}", self.gamma_rrt));
        }
        Ok(())
    }
}

/// Volume of the unit ball in `m` dimensions.
pub fn unit_ball_volume(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(m - 2) * 2.0 * std::f64::consts::PI / m as f64,
    }
}

/// Lower bound on the rewire constant for asymptotic optimality:
/// `(2 (1 + 1/m))^(1/m) (free_measure / unit_ball_volume)^(1/m)`.
pub fn rewire_radius_bound(m: usize, free_measure: f64) -> f64 {
    let mf = m as f64;
    (2.0 * (1.0 + 1.0 / mf)).powf(1.0 / mf) * (free_measure / unit_ball_volume(m)).powf(1.0 / mf)
}

/// `min(step, gamma (ln n / n)^(1/m))`, with `r(1) = step`.
pub fn shrinking_radius(n: usize, gamma: f64, step: f64, m: usize) -> f64 {
    if n <= 1 {
        return step;
    }
    let nf = n as f64;
    step.min(gamma * (nf.ln() / nf).powf(1.0 / m as f64))
}

pub fn steer(from: &WorldPoint, to: &WorldPoint, step: f64) -> WorldPoint {
    let delta = to - from;
    let dist = delta.norm();
    if dist <= step {
        *to
    } else {
        from + delta * (step / dist)
    }
}

/// Axis-aligned sampling bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: WorldPoint,
    pub hi: WorldPoint,
}

impl Bounds {
    pub fn of_grid(grid: &OccupancyGrid) -> Self {
        Self { lo: grid.origin(), hi: grid.upper_corner() }
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldPoint {
        Vector3::from_fn(|a, _| self.lo[a] + rng.random::<f64>() * (self.hi[a] - self.lo[a]))
    }
}

/// Rotation whose first column is `axis` (unit length).
fn frame_from_axis(axis: &Vector3<f64>) -> Matrix3<f64> {
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let second = axis.cross(&helper).normalize();
    let third = axis.cross(&second);
    Matrix3::from_columns(&[*axis, second, third])
}

const INFORMED_RETRIES: usize = 1000;

/// Uniform sample from the prolate hyperspheroid with foci `start` and
/// `goal` and transverse diameter `c_best`, rejected against `bounds`. An
/// infinite `c_best` samples the bounds box.
pub fn informed_sample<R: Rng + ?Sized>(
    start: &WorldPoint,
    goal: &WorldPoint,
    c_best: f64,
    bounds: &Bounds,
    rng: &mut R,
) -> WorldPoint {
    if !c_best.is_finite() {
        return bounds.sample(rng);
    }
    let focal = (goal - start).norm();
    let on_segment = |rng: &mut R| start + (goal - start) * rng.random::<f64>();
    if c_best <= focal || focal < DUPLICATE_EPS {
        if focal < DUPLICATE_EPS {
            return *start;
        }
        return on_segment(rng);
    }
    let frame = frame_from_axis(&((goal - start) / focal));
    let conj = (c_best * c_best - focal * focal).sqrt() / 2.0;
    let radii = Matrix3::from_diagonal(&Vector3::new(c_best / 2.0, conj, conj));
    let transform = frame * radii;
    let center = (start + goal) / 2.0;
    for _ in 0..INFORMED_RETRIES {
        let u: [f64; 3] = UnitBall.sample(rng);
        let p = center + transform * Vector3::from(u);
        if bounds.contains(&p) && (p - start).norm() + (p - goal).norm() <= c_best {
            return p;
        }
    }
    on_segment(rng)
}

/// Uniform bucket grid over the sampling bounds for exact nearest and
/// radius queries.
#[derive(Debug, Clone)]
struct BucketIndex {
    lo: WorldPoint,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<usize>>,
    len: usize,
}

const LINEAR_SCAN_BELOW: usize = 256;
const MAX_BUCKETS_PER_AXIS: usize = 128;

impl BucketIndex {
    fn new(bounds: &Bounds, min_cell: f64) -> Self {
        let extent = bounds.hi - bounds.lo;
        let max_extent = extent.max();
        let cell = min_cell.max(max_extent / MAX_BUCKETS_PER_AXIS as f64);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).ceil() as usize).max(1));
        Self { lo: bounds.lo, cell, dims, buckets: vec![Vec::new(); dims[0] * dims[1] * dims[2]], len: 0 }
    }

    fn cell_of(&self, p: &WorldPoint) -> Option<[usize; 3]> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.lo[a]) / self.cell).floor();
            if !(u >= 0.0) || u as usize >= self.dims[a] + 1 {
                return None;
            }
            out[a] = (u as usize).min(self.dims[a] - 1);
        }
        Some(out)
    }

    fn bucket(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    fn insert(&mut self, id: usize, p: &WorldPoint) {
        let c = self.cell_of(p).unwrap_or_else(|| self.clamp_cell(p));
        let b = self.bucket(c);
        self.buckets[b].push(id);
        self.len += 1;
    }

    fn clamp_cell(&self, p: &WorldPoint) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let u = ((p[a] - self.lo[a]) / self.cell).floor();
            if u.is_nan() || u < 0.0 {
                0
            } else {
                (u as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn nearest(&self, points: &[WorldPoint], q: &WorldPoint) -> usize {
        let linear = || {
            let mut best = (0, f64::INFINITY);
            for (i, p) in points.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.1 {
                    best = (i, d);
                }
            }
            best.0
        };
        if self.len < LINEAR_SCAN_BELOW {
            return linear();
        }
        let Some(c) = self.cell_of(q) else { return linear() };
        let max_ring = *self.dims.iter().max().unwrap();
        let mut best = (usize::MAX, f64::INFINITY);
        for r in 0..=max_ring as i64 {
            let ri = r;
            for dz in -ri..=ri {
                for dy in -ri..=ri {
                    let shell = dz.abs() == ri || dy.abs() == ri;
                    let mut dx = -ri;
                    while dx <= ri {
                        self.scan_cell(points, q, c, [dx, dy, dz], &mut best);
                        dx = if shell || dx == ri { dx + 1 } else { ri };
                    }
                }
            }
            // Anything outside ring r is at least r cells away.
            if best.1.sqrt() <= r as f64 * self.cell {
                break;
            }
        }
        best.0
    }

    fn scan_cell(
        &self,
        points: &[WorldPoint],
        q: &WorldPoint,
        c: [usize; 3],
        d: [i64; 3],
        best: &mut (usize, f64),
    ) {
        let mut cc = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + d[a];
            if v < 0 || v as usize >= self.dims[a] {
                return;
            }
            cc[a] = v as usize;
        }
        for &id in &self.buckets[self.bucket(cc)] {
            let dist = (points[id] - q).norm_squared();
            if dist < best.1 || (dist == best.1 && id < best.0) {
                *best = (id, dist);
            }
        }
    }

    fn within(&self, points: &[WorldPoint], q: &WorldPoint, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let r2 = radius * radius;
        if self.len < LINEAR_SCAN_BELOW || self.cell_of(q).is_none() {
            out.extend((0..points.len()).filter(|i| (points[*i] - q).norm_squared() <= r2));
            return;
        }
        let lo = self.clamp_cell(&(q - Vector3::repeat(radius)));
        let hi = self.clamp_cell(&(q + Vector3::repeat(radius)));
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    for &id in &self.buckets[self.bucket([i, j, k])] {
                        if (points[id] - q).norm_squared() <= r2 {
                            out.push(id);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

/// RRT* tree: vertex 0 is the root, costs are path lengths from the root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    vertices: Vec<WorldPoint>,
    parent: Vec<Option<usize>>,
    cost: Vec<f64>,
    children: Vec<Vec<usize>>,
    index: BucketIndex,
    scratch: Vec<usize>,
}

impl SearchTree {
    pub fn new(root: WorldPoint, bounds: &Bounds, cell: f64) -> Self {
        let mut index = BucketIndex::new(bounds, cell);
        index.insert(0, &root);
        Self {
            vertices: vec![root],
            parent: vec![None],
            cost: vec![0.0],
            children: vec![Vec::new()],
            index,
            scratch: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, v: usize) -> &WorldPoint {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[WorldPoint] {
        &self.vertices
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn cost(&self, v: usize) -> f64 {
        self.cost[v]
    }

    pub fn nearest(&self, q: &WorldPoint) -> usize {
        self.index.nearest(&self.vertices, q)
    }

    /// Vertices within `radius` of `q`, ascending by id.
    pub fn near(&self, q: &WorldPoint, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.index.within(&self.vertices, q, radius, &mut out);
        out
    }

    /// Root-to-`v` vertex chain.
    pub fn path_to(&self, v: usize) -> Vec<WorldPoint> {
        let mut out = vec![self.vertices[v]];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            out.push(self.vertices[p]);
            cur = p;
        }
        out.reverse();
        out
    }

    /// Inserts `x_new` under the cheapest collision-free neighbor within
    /// `radius` (the nearest vertex is always a candidate), then reparents
    /// neighbors through it where that strictly lowers their cost. Returns
    /// `None` for a duplicate of an existing vertex.
    pub fn extend_and_rewire(&mut self, x_new: WorldPoint, grid: &OccupancyGrid, radius: f64) -> Option<usize> {
        let nearest = self.nearest(&x_new);
        if (self.vertices[nearest] - x_new).norm() < DUPLICATE_EPS {
            return None;
        }
        let mut near = std::mem::take(&mut self.scratch);
        self.index.within(&self.vertices, &x_new, radius, &mut near);
        if near.iter().any(|u| (self.vertices[*u] - x_new).norm() < DUPLICATE_EPS) {
            self.scratch = near;
            return None;
        }
        let mut best_parent = nearest;
        let mut best_cost = self.cost[nearest] + (self.vertices[nearest] - x_new).norm();
        for &u in &near {
            if u == nearest {
                continue;
            }
            let c = self.cost[u] + (self.vertices[u] - x_new).norm();
            if c < best_cost && grid.segment_collision_free(&self.vertices[u], &x_new) {
                best_parent = u;
                best_cost = c;
            }
        }
        let id = self.vertices.len();
        self.vertices.push(x_new);
        self.parent.push(Some(best_parent));
        self.cost.push(best_cost);
        self.children.push(Vec::new());
        self.children[best_parent].push(id);
        self.index.insert(id, &x_new);

        let mut touched = vec![id];
        for &u in &near {
            if u == best_parent {
                continue;
            }
            let c = best_cost + (self.vertices[u] - x_new).norm();
            if c < self.cost[u] && grid.segment_collision_free(&x_new, &self.vertices[u]) {
                self.reparent(u, id, c, &mut touched);
            }
        }
        self.scratch = near;
        #[cfg(debug_assertions)]
        for &v in &touched {
            debug_assert!(self.edge_consistent(v), "cost recurrence broken at vertex {v}");
        }
        Some(id)
    }

    fn reparent(&mut self, v: usize, new_parent: usize, new_cost: f64, touched: &mut Vec<usize>) {
        if let Some(old) = self.parent[v] {
            self.children[old].retain(|c| *c != v);
        }
        self.parent[v] = Some(new_parent);
        self.children[new_parent].push(v);
        self.cost[v] = new_cost;
        touched.push(v);
        let mut stack: Vec<usize> = self.children[v].clone();
        while let Some(c) = stack.pop() {
            let p = self.parent[c].unwrap();
            self.cost[c] = self.cost[p] + (self.vertices[c] - self.vertices[p]).norm();
            touched.push(c);
            stack.extend_from_slice(&self.children[c]);
        }
    }

    fn edge_consistent(&self, v: usize) -> bool {
        match self.parent[v] {
            None => v == 0 && self.cost[v] == 0.0,
            Some(p) => {
                let expected = self.cost[p] + (self.vertices[v] - self.vertices[p]).norm();
                (self.cost[v] - expected).abs() <= 1e-9
            }
        }
    }

    /// Full structural check: root, cost recurrence, acyclic parents,
    /// children lists mirroring parent links.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.parent[0].is_some() || self.cost[0] != 0.0 {
            return Err("root must have no parent and zero cost".into());
        }
        for v in 0..self.len() {
            if !self.edge_consistent(v) {
                return Err(format!("cost recurrence broken at {v}"));
            }
            if let Some(p) = self.parent[v] {
                if !self.children[p].contains(&v) {
                    return Err(format!("vertex {v} missing from children of {p}"));
                }
            }
        }
        // Every vertex must reach the root in fewer than len() hops.
        for v in 0..self.len() {
            let mut cur = v;
            let mut hops = 0;
            while let Some(p) = self.parent[cur] {
                cur = p;
                hops += 1;
                if hops > self.len() {
                    return Err(format!("cycle through vertex {v}"));
                }
            }
            if cur != 0 {
                return Err(format!("vertex {v} is not attached to the root"));
            }
        }
        Ok(())
    }
}

/// Metrics of one planning stage, cumulative from the start of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageStats {
    pub iterations: usize,
    pub nodes: usize,
    pub cost: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanStats {
    pub success: bool,
    /// First connection to the goal.
    pub initial: Option<StageStats>,
    /// First path with cost at or below the target.
    pub optimal: Option<StageStats>,
    pub iterations: usize,
    pub nodes: usize,
    pub best_cost: Option<f64>,
    pub time_ms: f64,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub tree: SearchTree,
    /// Waypoints from start to the goal center.
    pub path: Vec<WorldPoint>,
    pub cost: f64,
    /// Best cost after every iteration from the first solution on.
    pub cost_history: Vec<f64>,
    pub stats: PlanStats,
}

struct GoalLinks {
    center: WorldPoint,
    candidates: Vec<usize>,
}

impl GoalLinks {
    fn best(&self, tree: &SearchTree) -> Option<(usize, f64)> {
        self.candidates
            .iter()
            .map(|v| (*v, tree.cost(*v) + (tree.vertex(*v) - self.center).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    }
}

/// Runs RRT* from `start` towards `cfg.goal`.
///
/// Before the first goal connection, heuristic mode draws from the region
/// with probability `mu2`, afterwards with `mu1`; informed mode switches to
/// the informed set once a solution exists. The run stops at the first
/// path meeting `cfg.target_cost` or after `cfg.max_iterations`.
pub fn plan(
    grid: &OccupancyGrid,
    region: Option<&HeuristicRegion>,
    start: &WorldPoint,
    cfg: &PlannerConfig,
    mode: SamplingMode,
) -> Result<PlanOutput, PlanError> {
    cfg.validate(grid)?;
    if !grid.is_point_free(start) {
        return Err(PlanError::StartBlocked);
    }
    let sampler = match (mode, region) {
        (SamplingMode::Heuristic, Some(r)) => Some(RegionSampler::new(r, grid)?),
        (SamplingMode::Heuristic, None) => return Err(PlanError::MissingRegion),
        _ => None,
    };
    let bounds = Bounds::of_grid(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let clock = Instant::now();
    let elapsed_ms = |c: &Instant| c.elapsed().as_secs_f64() * 1e3;

    let mut tree = SearchTree::new(*start, &bounds, cfg.step);
    let goal_ok = grid.is_point_free(&cfg.goal.center);
    let mut links = GoalLinks { center: cfg.goal.center, candidates: Vec::new() };
    let mut stats = PlanStats::default();
    let mut best: Option<(usize, f64)> = None;
    let mut history = Vec::new();

    for iter in 1..=cfg.max_iterations {
        stats.iterations = iter;
        let solved = best.is_some();
        let sample = match (mode, &sampler) {
            (SamplingMode::Heuristic, Some(s)) => {
                let mu = if solved { cfg.mu1 } else { cfg.mu2 };
                if rng.random::<f64>() < mu {
                    s.sample(&mut rng)
                } else {
                    bounds.sample(&mut rng)
                }
            }
            (SamplingMode::Informed, _) => {
                let c_best = best.map_or(f64::INFINITY, |b| b.1);
                informed_sample(start, &cfg.goal.center, c_best, &bounds, &mut rng)
            }
            _ => bounds.sample(&mut rng),
        };
        let nearest = tree.nearest(&sample);
        let x_new = steer(tree.vertex(nearest), &sample, cfg.step);
        if grid.segment_collision_free(tree.vertex(nearest), &x_new) {
            let radius = shrinking_radius(tree.len(), cfg.gamma_rrt, cfg.step, DIM);
            if let Some(id) = tree.extend_and_rewire(x_new, grid, radius) {
                if goal_ok && cfg.goal.contains(&x_new) && grid.segment_collision_free(&x_new, &cfg.goal.center) {
                    links.candidates.push(id);
                }
            }
        }
        stats.nodes = tree.len() - 1;
        best = links.best(&tree);
        if let Some((_, cost)) = best {
            history.push(cost);
            let stage = StageStats { iterations: iter, nodes: stats.nodes, cost, time_ms: elapsed_ms(&clock) };
            if stats.initial.is_none() {
                stats.initial = Some(stage);
            }
            if cfg.target_cost.is_some_and(|t| cost <= t) {
                stats.optimal = Some(stage);
                break;
            }
        }
    }
    stats.time_ms = elapsed_ms(&clock);
    let Some((goal_vertex, cost)) = best else {
        return Err(PlanError::NoSolution { iterations: stats.iterations, stats: Box::new(stats) });
    };
    stats.success = true;
    stats.best_cost = Some(cost);
    let mut path = tree.path_to(goal_vertex);
    if (tree.vertex(goal_vertex) - cfg.goal.center).norm() > DUPLICATE_EPS {
        path.push(cfg.goal.center);
    }
    Ok(PlanOutput { tree, path, cost, cost_history: history, stats })
}

/// Length of a polyline.
pub fn path_length(path: &[WorldPoint]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Plain-text path export: a `# cost=<c> iterations=<n>` header and one
/// `x y z` line per waypoint.
pub fn write_path<W: std::io::Write>(
    w: &mut W,
    path: &[WorldPoint],
    cost: f64,
    iterations: usize,
) -> std::io::Result<()> {
    writeln!(w, "# cost={cost} iterations={iterations}")?;
    for p in path {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heuristic::{filter_region, oracle_region};

    fn empty(n: usize) -> OccupancyGrid {
        OccupancyGrid::new([n, n, n], 1.0, WorldPoint::zeros()).unwrap()
    }

    #[test]
    fn radius_bound_examples() {
        let v = rewire_radius_bound(3, 1000.0);
        let expected = (8.0f64 / 3.0).cbrt() * (1000.0 / (4.0 * std::f64::consts::PI / 3.0)).cbrt();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 8.603).abs() < 1e-3);
        let unit = rewire_radius_bound(3, 4.0 * std::f64::consts::PI / 3.0);
        assert!((unit - (8.0f64 / 3.0).cbrt()).abs() < 1e-12);
        assert!((unit - 1.3867).abs() < 1e-4);
        let ratio = rewire_radius_bound(3, 8000.0) / v;
        assert!((ratio - 2.0).abs() < 1e-12);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn shrinking_radius_examples() {
        assert_eq!(shrinking_radius(1, 10.0, 3.0, 3), 3.0);
        let r = shrinking_radius(1000, 10.0, 5.0, 3);
        assert!((r - 10.0 * (1000f64.ln() / 1000.0).cbrt()).abs() < 1e-12);
        assert!((r - 1.905).abs() < 1e-3);
        assert_eq!(shrinking_radius(1000, 10.0, 1.0, 3), 1.0);
        let mut prev = f64::INFINITY;
        for n in [3usize, 10, 100, 1000, 10_000, 100_000] {
            let r = shrinking_radius(n, 10.0, f64::INFINITY, 3);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn steer_examples() {
        let o = WorldPoint::zeros();
        let near = Vector3::new(0.5, 0.0, 0.0);
        assert_eq!(steer(&o, &near, 1.0), near);
        assert_eq!(steer(&o, &Vector3::new(2.0, 0.0, 0.0), 1.0), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(steer(&o, &o, 1.0), o);
    }

    #[test]
    fn informed_sampling_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bounds = Bounds { lo: WorldPoint::zeros(), hi: Vector3::repeat(10.0) };
        let s = Vector3::new(1.0, 1.0, 1.0);
        let g = Vector3::new(8.0, 5.0, 2.0);
        let focal = (g - s).norm();
        for _ in 0..200 {
            let p = informed_sample(&s, &g, focal, &bounds, &mut rng);
            let off = (p - s).cross(&(g - s)).norm() / focal;
            assert!(off < 1e-9);
            assert!((p - s).norm() + (p - g).norm() <= focal + 1e-9);
        }
        for _ in 0..200 {
            assert!(bounds.contains(&informed_sample(&s, &g, f64::INFINITY, &bounds, &mut rng)));
        }
        let c = 1.3 * focal;
        for _ in 0..100_000 {
            let p = informed_sample(&s, &g, c, &bounds, &mut rng);
            assert!((p - s).norm() + (p - g).norm() <= c + 1e-9);
            assert!(bounds.contains(&p));
        }
    }

    #[test]
    fn informed_sampling_fills_the_ellipsoid() {
        // Radial CDF check in the normalized frame: fraction inside the
        // half-scaled ellipsoid should be 1/8.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bounds = Bounds { lo: Vector3::repeat(-100.0), hi: Vector3::repeat(100.0) };
        let s = Vector3::new(-3.0, 0.0, 0.0);
        let g = Vector3::new(3.0, 0.0, 0.0);
        let c = 10.0;
        let (a, b) = (5.0, 4.0);
        let n = 40_000;
        let inner = (0..n)
            .filter(|_| {
                let p = informed_sample(&s, &g, c, &bounds, &mut rng);
                (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / b).powi(2) <= 0.25
            })
            .count();
        let frac = inner as f64 / n as f64;
        assert!((frac - 0.125).abs() < 0.01, "fraction {frac}");
    }

    fn detour_tree() -> SearchTree {
        // Root A, then B and C inserted with a tiny radius: A -> B -> C.
        let bounds = Bounds { lo: WorldPoint::zeros(), hi: Vector3::repeat(10.0) };
        let mut t = SearchTree::new(Vector3::new(1.0, 1.0, 1.0), &bounds, 1.0);
        let g = empty(10);
        t.extend_and_rewire(Vector3::new(3.0, 3.0, 1.0), &g, 0.1).unwrap();
        t.extend_and_rewire(Vector3::new(5.0, 1.0, 1.0), &g, 0.1).unwrap();
        t
    }

    #[test]
    fn rewire_shortcut_matches_exhaustive_parent_choice() {
        let g = empty(10);
        let mut t = detour_tree();
        assert_eq!(t.parent(2), Some(1));
        assert!((t.cost(2) - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        // X is collinear with A and C.
        let id = t.extend_and_rewire(Vector3::new(3.0, 1.0, 1.0), &g, 5.0).unwrap();
        assert_eq!(t.parent(id), Some(0));
        // Exhaustive parent enumeration over the final vertex set.
        for v in [id, 2] {
            let best = (0..t.len())
                .filter(|u| *u != v && t.parent(*u) != Some(v))
                .map(|u| t.cost(u) + (t.vertex(u) - t.vertex(v)).norm())
                .fold(f64::INFINITY, f64::min);
            assert!((t.cost(v) - best).abs() < 1e-12);
        }
        assert!((t.cost(2) - 4.0).abs() < 1e-12);
        assert_eq!(t.parent(2), Some(id));
        t.check_invariants().unwrap();
    }

    #[test]
    fn tiny_radius_means_plain_extension() {
        let g = empty(10);
        let mut t = detour_tree();
        let id = t.extend_and_rewire(Vector3::new(2.5, 1.0, 1.0), &g, 1e-3).unwrap();
        assert_eq!(t.parent(id), Some(0));
        assert_eq!(t.parent(2), Some(1));
        assert!((t.cost(2) - 2.0 * 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duplicate_vertex_rejected() {
        let g = empty(10);
        let mut t = detour_tree();
        assert!(t.extend_and_rewire(Vector3::new(3.0, 3.0, 1.0), &g, 1.0).is_none());
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn bucket_index_matches_linear_scan() {
        let bounds = Bounds { lo: WorldPoint::zeros(), hi: Vector3::repeat(20.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut idx = BucketIndex::new(&bounds, 1.5);
        let pts: Vec<WorldPoint> = (0..2000).map(|_| bounds.sample(&mut rng)).collect();
        for (i, p) in pts.iter().enumerate() {
            idx.insert(i, p);
        }
        let mut out = Vec::new();
        for _ in 0..500 {
            let q = bounds.sample(&mut rng);
            let brute = (0..pts.len())
                .min_by(|a, b| (pts[*a] - q).norm().total_cmp(&(pts[*b] - q).norm()))
                .unwrap();
            assert_eq!(idx.nearest(&pts, &q), brute);
            idx.within(&pts, &q, 2.0, &mut out);
            let expect: Vec<usize> = (0..pts.len()).filter(|i| (pts[*i] - q).norm() <= 2.0).collect();
            assert_eq!(out, expect);
        }
    }

    #[test]
    fn single_iteration_far_goal_fails() {
        let g = empty(20);
        let s = Vector3::new(1.0, 1.0, 1.0);
        let goal = Vector3::new(18.0, 18.0, 18.0);
        let mut cfg = PlannerConfig::for_problem(&g, &s, &goal, 1);
        cfg.max_iterations = 1;
        let err = plan(&g, None, &s, &cfg, SamplingMode::Uniform).unwrap_err();
        assert!(matches!(err, PlanError::NoSolution { iterations: 1, .. }));
    }

    #[test]
    fn uniform_plan_finds_path_and_keeps_invariants() {
        let g = empty(20);
        let s = Vector3::new(2.0, 2.0, 2.0);
        let goal = Vector3::new(17.0, 15.0, 12.0);
        let mut cfg = PlannerConfig::for_problem(&g, &s, &goal, 4);
        cfg.target_cost = None;
        cfg.max_iterations = 3000;
        let out = plan(&g, None, &s, &cfg, SamplingMode::Uniform).unwrap();
        out.tree.check_invariants().unwrap();
        assert_eq!(out.path.first(), Some(&s));
        assert_eq!(out.path.last(), Some(&goal));
        assert!((path_length(&out.path) - out.cost).abs() < 1e-9);
        for w in out.path.windows(2) {
            assert!(g.segment_collision_free(&w[0], &w[1]));
        }
        for w in out.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let st = &out.stats;
        let init = st.initial.unwrap();
        assert!(init.nodes <= init.iterations);
        assert!(st.nodes <= st.iterations);
        assert!(out.cost <= init.cost);
    }

    #[test]
    fn heuristic_mode_requires_region() {
        let g = empty(10);
        let s = Vector3::new(1.0, 1.0, 1.0);
        let cfg = PlannerConfig::for_problem(&g, &s, &Vector3::new(8.0, 8.0, 8.0), 1);
        assert!(matches!(plan(&g, None, &s, &cfg, SamplingMode::Heuristic), Err(PlanError::MissingRegion)));
    }

    #[test]
    fn bad_config_rejected() {
        let g = empty(10);
        let s = Vector3::new(1.0, 1.0, 1.0);
        let mut cfg = PlannerConfig::for_problem(&g, &s, &Vector3::new(8.0, 8.0, 8.0), 1);
        cfg.mu1 = 1.5;
        assert!(matches!(plan(&g, None, &s, &cfg, SamplingMode::Uniform), Err(PlanError::InvalidConfig(_))));
        let mut cfg2 = PlannerConfig::for_problem(&g, &s, &Vector3::new(8.0, 8.0, 8.0), 1);
        cfg2.gamma_rrt = 0.5 * rewire_radius_bound(3, g.free_measure());
        assert!(matches!(plan(&g, None, &s, &cfg2, SamplingMode::Uniform), Err(PlanError::InvalidConfig(_))));
    }

    #[test]
    fn heuristic_and_informed_modes_succeed() {
        let g = empty(20);
        let s = Vector3::new(1.5, 1.5, 1.5);
        let goal = Vector3::new(18.5, 17.5, 10.5);
        let sv = g.world_to_index(&s).unwrap();
        let gv = g.world_to_index(&goal).unwrap();
        let region = filter_region(&oracle_region(&g, sv, gv).unwrap(), &g, sv, gv, 0.5).unwrap();
        let cfg = PlannerConfig::for_problem(&g, &s, &goal, 2);
        let h = plan(&g, Some(&region), &s, &cfg, SamplingMode::Heuristic).unwrap();
        h.tree.check_invariants().unwrap();
        let i = plan(&g, None, &s, &cfg, SamplingMode::Informed).unwrap();
        i.tree.check_invariants().unwrap();
        assert!(h.stats.success && i.stats.success);
    }

    #[test]
    fn plan_is_deterministic() {
        let g = empty(15);
        let s = Vector3::new(1.5, 1.5, 1.5);
        let goal = Vector3::new(13.5, 12.5, 10.5);
        let cfg = PlannerConfig::for_problem(&g, &s, &goal, 77);
        let a = plan(&g, None, &s, &cfg, SamplingMode::Uniform).unwrap();
        let b = plan(&g, None, &s, &cfg, SamplingMode::Uniform).unwrap();
        assert_eq!(a.path, b.path);
        assert_eq!(a.stats.iterations, b.stats.iterations);
    }
}
