//! Heuristic promising regions.
//!
//! A region is a per-voxel weight in `[0, 1]` aligned with an
//! [`OccupancyGrid`]. Regions come either from an external predictor
//! (through the `MNRHEUR1` file format) or from the built-in oracle, which
//! runs a 26-connected A* search and dilates the resulting path into
//! 3×3×3 cubes. Before sampling, a region is passed through
//! [`filter_region`] so that its support is binary, obstacle-free and
//! attached to the start and goal voxels.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::grid::{
    check_magic, checked_len, chebyshev_neighborhood, read_dims, read_header, read_payload,
    GridError, OccupancyGrid, VoxelIndex, WorldPoint,
};

const REGION_MAGIC: &[u8; 8] = b"MNRHEUR1";

#[derive(thiserror::Error, Debug)]
pub enum RegionError {
    #[error("no path between {start:?} and {goal:?}")]
    NoPath { start: VoxelIndex, goal: VoxelIndex },
    #[error("voxel {0:?} is out of bounds or occupied")]
    BlockedEndpoint(VoxelIndex),
    #[error("region is empty after filtering")]
    EmptyAfterFilter,
    #[error("region has no sampling mass")]
    EmptyRegion,
    #[error("region dims {region:?} do not match grid dims {grid:?}")]
    DimensionMismatch { region: VoxelIndex, grid: VoxelIndex },
    #[error("region value {value} at cell {index} is outside [0, 1]")]
    InvalidValue { index: usize, value: f32 },
    #[error(transparent)]
    Format(#[from] GridError),
}

impl From<std::io::Error> for RegionError {
    fn from(e: std::io::Error) -> Self {
        RegionError::Format(GridError::Io(e))
    }
}

/// Per-voxel probability (or 0/1 mask) in the same voxel order as the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicRegion {
    dims: VoxelIndex,
    values: Vec<f32>,
}

/// 26-connected voxel path from start to goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridPath {
    pub voxels: Vec<VoxelIndex>,
}

impl GridPath {
    /// Number of axis, face-diagonal and space-diagonal steps.
    pub fn step_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for w in self.voxels.windows(2) {
            let changed = (0..3).filter(|a| w[0][*a] != w[1][*a]).count();
            if changed > 0 {
                counts[changed - 1] += 1;
            }
        }
        counts
    }

    /// Path length in voxel units. Summed per step class, so two paths with
    /// the same sequence of move types report bit-identical costs.
    pub fn cost(&self) -> f64 {
        let [a, f, d] = self.step_counts();
        a as f64 + f as f64 * std::f64::consts::SQRT_2 + d as f64 * 3f64.sqrt()
    }
}

impl HeuristicRegion {
    pub fn new(dims: VoxelIndex, values: Vec<f32>) -> Result<Self, RegionError> {
        let len = checked_len(dims)?;
        if values.len() != len {
            return Err(GridError::Invalid(format!(
                "region has {} values, dims require {len}",
                values.len()
            ))
            .into());
        }
        if let Some((index, value)) =
            values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= 1.0))
        {
            return Err(RegionError::InvalidValue { index, value: *value });
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: VoxelIndex) -> Result<Self, RegionError> {
        let len = checked_len(dims)?;
        Ok(Self { dims, values: vec![0.0; len] })
    }

    /// Every free voxel of `grid` set to 1.
    pub fn free_space(grid: &OccupancyGrid) -> Self {
        let values = grid.occupancy().iter().map(|o| if *o { 0.0 } else { 1.0 }).collect();
        Self { dims: grid.dims(), values }
    }

    pub fn dims(&self) -> VoxelIndex {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    fn linear(&self, v: VoxelIndex) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    fn voxel(&self, idx: usize) -> VoxelIndex {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn value(&self, v: VoxelIndex) -> f32 {
        self.values[self.linear(v)]
    }

    pub fn set_value(&mut self, v: VoxelIndex, value: f32) {
        let idx = self.linear(v);
        self.values[idx] = value.clamp(0.0, 1.0);
    }

    pub fn is_member(&self, v: VoxelIndex) -> bool {
        self.value(v) > 0.0
    }

    pub fn member_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    pub fn members(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| self.voxel(i))
    }

    pub fn check_dims(&self, grid: &OccupancyGrid) -> Result<(), RegionError> {
        if self.dims != grid.dims() {
            return Err(RegionError::DimensionMismatch { region: self.dims, grid: grid.dims() });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RegionError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RegionError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), RegionError> {
        w.write_all(REGION_MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, RegionError> {
        let mut header = [0u8; 20];
        read_header(r, &mut header)?;
        check_magic(&header[..8], REGION_MAGIC)?;
        let dims = read_dims(&header[8..20])?;
        let len = checked_len(dims).map_err(|e| GridError::MalformedHeader(e.to_string()))?;
        let payload = read_payload(r, len * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dims, values)
    }
}

/// Offsets of the 26-neighborhood in a fixed order.
fn neighbor_offsets() -> impl Iterator<Item = [i64; 3]> {
    (-1i64..=1).flat_map(|dz| {
        (-1i64..=1).flat_map(move |dy| {
            (-1i64..=1).filter_map(move |dx| {
                if dx == 0 && dy == 0 && dz == 0 {
                    None
                } else {
                    Some([dx, dy, dz])
                }
            })
        })
    })
}

fn offset_voxel(dims: VoxelIndex, v: VoxelIndex, d: [i64; 3]) -> Option<VoxelIndex> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let c = v[a] as i64 + d[a];
        if c < 0 || c as usize >= dims[a] {
            return None;
        }
        out[a] = c as usize;
    }
    Some(out)
}

fn voxel_distance(a: VoxelIndex, b: VoxelIndex) -> f64 {
    let d = Vector3::new(
        a[0] as f64 - b[0] as f64,
        a[1] as f64 - b[1] as f64,
        a[2] as f64 - b[2] as f64,
    );
    d.norm()
}

fn step_cost(d: [i64; 3]) -> f64 {
    match d.iter().filter(|c| **c != 0).count() {
        1 => 1.0,
        2 => std::f64::consts::SQRT_2,
        _ => 3f64.sqrt(),
    }
}

#[derive(PartialEq)]
struct OpenEntry {
    f: f64,
    h: f64,
    voxel: VoxelIndex,
    g: f64,
}

impl Eq for OpenEntry {}

impl Ord for OpenEntry {
    // BinaryHeap is a max-heap; invert so the smallest (f, h, voxel) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.h.total_cmp(&self.h))
            .then_with(|| other.voxel.cmp(&self.voxel))
    }
}

impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_endpoint(grid: &OccupancyGrid, v: VoxelIndex) -> Result<(), RegionError> {
    let inside = (0..3).all(|a| v[a] < grid.dims()[a]);
    if !inside || grid.is_occupied(v) {
        return Err(RegionError::BlockedEndpoint(v));
    }
    Ok(())
}

/// Cost-minimal 26-connected path with step costs 1, √2, √3 and a
/// Euclidean heuristic. Ties on f break toward lower h, then the
/// lexicographically smaller voxel.
pub fn astar_path(
    grid: &OccupancyGrid,
    start: VoxelIndex,
    goal: VoxelIndex,
) -> Result<GridPath, RegionError> {
    check_endpoint(grid, start)?;
    check_endpoint(grid, goal)?;
    let n = grid.num_cells();
    let mut best_g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = grid.linear_index(start);
    best_g[si] = 0.0;
    let h0 = voxel_distance(start, goal);
    open.push(OpenEntry { f: h0, h: h0, voxel: start, g: 0.0 });
    let offsets: Vec<[i64; 3]> = neighbor_offsets().collect();
    while let Some(OpenEntry { voxel, g, .. }) = open.pop() {
        let vi = grid.linear_index(voxel);
        if closed[vi] || g > best_g[vi] {
            continue;
        }
        closed[vi] = true;
        if voxel == goal {
            let mut voxels = vec![goal];
            let mut cur = vi;
            while cur != si {
                cur = parent[cur];
                voxels.push(grid.voxel_of_linear(cur));
            }
            voxels.reverse();
            return Ok(GridPath { voxels });
        }
        for d in &offsets {
            let Some(nb) = offset_voxel(grid.dims(), voxel, *d) else { continue };
            if grid.is_occupied(nb) {
                continue;
            }
            let ni = grid.linear_index(nb);
            let ng = g + step_cost(*d);
            if ng < best_g[ni] {
                best_g[ni] = ng;
                parent[ni] = vi;
                // A slightly inconsistent float heuristic may need a reopen.
                closed[ni] = false;
                let h = voxel_distance(nb, goal);
                open.push(OpenEntry { f: ng + h, h, voxel: nb, g: ng });
            }
        }
    }
    Err(RegionError::NoPath { start, goal })
}

/// Union of 3×3×3 cubes centered on every path voxel, clipped at bounds.
pub fn dilate_path(path: &GridPath, dims: VoxelIndex) -> Result<HeuristicRegion, RegionError> {
    let mut region = HeuristicRegion::zeros(dims)?;
    for v in &path.voxels {
        for nb in chebyshev_neighborhood(dims, *v, 1) {
            region.set_value(nb, 1.0);
        }
    }
    Ok(region)
}

/// Binary map with 3×3×3 cubes around the start and goal voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMap {
    pub start: VoxelIndex,
    pub goal: VoxelIndex,
    pub region: HeuristicRegion,
}

impl StateMap {
    pub fn new(dims: VoxelIndex, start: VoxelIndex, goal: VoxelIndex) -> Result<Self, RegionError> {
        let path = GridPath { voxels: vec![start, goal] };
        Ok(Self { start, goal, region: dilate_path(&path, dims)? })
    }
}

/// Dilated A* path with obstacle voxels removed.
pub fn oracle_region(
    grid: &OccupancyGrid,
    start: VoxelIndex,
    goal: VoxelIndex,
) -> Result<HeuristicRegion, RegionError> {
    let path = astar_path(grid, start, goal)?;
    let mut region = dilate_path(&path, grid.dims())?;
    for (v, occ) in region.values.iter_mut().zip(grid.occupancy()) {
        if *occ {
            *v = 0.0;
        }
    }
    Ok(region)
}

/// Labels 26-connected components of region members reachable from the
/// seeds; returns the reached mask.
fn reachable_members(region: &HeuristicRegion, seeds: &[VoxelIndex]) -> Vec<bool> {
    let mut seen = vec![false; region.values.len()];
    let mut queue = VecDeque::new();
    for s in seeds {
        let si = region.linear(*s);
        if region.values[si] > 0.0 && !seen[si] {
            seen[si] = true;
            queue.push_back(*s);
        }
    }
    let offsets: Vec<[i64; 3]> = neighbor_offsets().collect();
    while let Some(v) = queue.pop_front() {
        for d in &offsets {
            if let Some(nb) = offset_voxel(region.dims, v, *d) {
                let ni = region.linear(nb);
                if !seen[ni] && region.values[ni] > 0.0 {
                    seen[ni] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    seen
}

/// Threshold, drop obstacle voxels, force the endpoints in, and keep only
/// the components attached to the start or goal voxel.
pub fn filter_region(
    region: &HeuristicRegion,
    grid: &OccupancyGrid,
    start: VoxelIndex,
    goal: VoxelIndex,
    threshold: f32,
) -> Result<HeuristicRegion, RegionError> {
    region.check_dims(grid)?;
    check_endpoint(grid, start)?;
    check_endpoint(grid, goal)?;
    let mut binary: Vec<f32> = region
        .values
        .iter()
        .zip(grid.occupancy())
        .map(|(v, occ)| if *v >= threshold && !*occ { 1.0 } else { 0.0 })
        .collect();
    let mut out = HeuristicRegion { dims: region.dims, values: std::mem::take(&mut binary) };
    out.set_value(start, 1.0);
    out.set_value(goal, 1.0);
    let keep = reachable_members(&out, &[start, goal]);
    let mut kept = 0usize;
    for (v, k) in out.values.iter_mut().zip(&keep) {
        if !*k {
            *v = 0.0;
        } else {
            kept += 1;
        }
    }
    let forced = if start == goal { 1 } else { 2 };
    if kept <= forced {
        return Err(RegionError::EmptyAfterFilter);
    }
    Ok(out)
}

/// Sum of `max(0, |p_i - p_j| - delta)` over ordered member pairs with `j`
/// in the 26-neighborhood of `i`. A member with no member neighbors is
/// paired with its nearest other member instead. Distances are in voxels.
pub fn connectivity_penalty(region: &HeuristicRegion, delta: f64) -> f64 {
    let members: Vec<VoxelIndex> = region.members().collect();
    if members.len() < 2 {
        return 0.0;
    }
    let offsets: Vec<[i64; 3]> = neighbor_offsets().collect();
    let hinge = |x: f64| x.max(0.0);
    let mut total = 0.0;
    for &v in &members {
        let mut has_neighbor = false;
        for d in &offsets {
            if let Some(nb) = offset_voxel(region.dims, v, *d) {
                if region.is_member(nb) {
                    has_neighbor = true;
                    total += hinge(voxel_distance(v, nb) - delta);
                }
            }
        }
        if !has_neighbor {
            let nearest = members
                .iter()
                .filter(|u| **u != v)
                .map(|u| voxel_distance(v, *u))
                .fold(f64::INFINITY, f64::min);
            total += hinge(nearest - delta);
        }
    }
    total
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sum of `logistic(p_i * e_i)` over region members.
pub fn safety_penalty(region: &HeuristicRegion, grid: &OccupancyGrid) -> Result<f64, RegionError> {
    region.check_dims(grid)?;
    Ok(region
        .values
        .iter()
        .zip(grid.occupancy())
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, occ)| logistic(*v as f64 * if *occ { 1.0 } else { 0.0 }))
        .sum())
}

/// True iff region members join the start voxel to the goal voxel.
pub fn is_connected(region: &HeuristicRegion, start: VoxelIndex, goal: VoxelIndex) -> bool {
    let inside = |v: VoxelIndex| (0..3).all(|a| v[a] < region.dims[a]);
    if !inside(start) || !inside(goal) {
        return false;
    }
    if !region.is_member(start) || !region.is_member(goal) {
        return false;
    }
    reachable_members(region, &[start])[region.linear(goal)]
}

/// True iff at most one occupied voxel is a region member.
pub fn is_safe(region: &HeuristicRegion, grid: &OccupancyGrid) -> Result<bool, RegionError> {
    region.check_dims(grid)?;
    let overlap = region
        .values
        .iter()
        .zip(grid.occupancy())
        .filter(|(v, occ)| **v > 0.0 && **occ)
        .count();
    Ok(overlap <= 1)
}

/// Categorical sampler over region voxels, weighted by value, returning a
/// uniform point inside the chosen voxel.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    voxels: Vec<VoxelIndex>,
    weights: WeightedIndex<f64>,
    origin: WorldPoint,
    resolution: f64,
}

impl RegionSampler {
    pub fn new(region: &HeuristicRegion, grid: &OccupancyGrid) -> Result<Self, RegionError> {
        region.check_dims(grid)?;
        let mut voxels = Vec::new();
        let mut mass = Vec::new();
        for (i, v) in region.values.iter().enumerate() {
            if *v > 0.0 {
                voxels.push(region.voxel(i));
                mass.push(*v as f64);
            }
        }
        let weights = WeightedIndex::new(&mass).map_err(|_| RegionError::EmptyRegion)?;
        Ok(Self { voxels, weights, origin: grid.origin(), resolution: grid.resolution() })
    }

    pub fn support_len(&self) -> usize {
        self.voxels.len()
    }

    pub fn sample_voxel<R: Rng + ?Sized>(&self, rng: &mut R) -> VoxelIndex {
        self.voxels[self.weights.sample(rng)]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldPoint {
        let v = self.sample_voxel(rng);
        let jitter = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let corner = Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64);
        self.origin + (corner + jitter) * self.resolution
    }
}

/// One-shot weighted sample; build a [`RegionSampler`] for repeated draws.
pub fn sample_region<R: Rng + ?Sized>(
    region: &HeuristicRegion,
    grid: &OccupancyGrid,
    rng: &mut R,
) -> Result<WorldPoint, RegionError> {
    Ok(RegionSampler::new(region, grid)?.sample(rng))
}
