//! Dense 3D occupancy grids: coordinate transforms, exact segment
//! traversal, Chebyshev inflation, seeded clutter generation and the
//! binary map file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A point in world coordinates (meters).
pub type WorldPoint = Vector3<f64>;

/// Integer voxel coordinates `(i, j, k)`.
pub type VoxelIndex = [usize; 3];

const GRID_MAGIC: &[u8; 8] = b"MNRGRID1";

#[derive(thiserror::Error, Debug)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format version {found:?}")]
    VersionMismatch { found: String },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("obstacle placement failed after {retries} retries")]
    PlacementFailed { retries: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned voxel grid. `true` cells are obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    dims: VoxelIndex,
    resolution: f64,
    origin: WorldPoint,
    occupancy: Vec<bool>,
}

/// Spherical goal region around a target point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalRegion {
    pub center: WorldPoint,
    pub radius: f64,
}

impl GoalRegion {
    pub fn new(center: WorldPoint, radius: f64) -> Result<Self, GridError> {
        if !(radius > 0.0 && radius.is_finite()) || !is_finite_point(&center) {
            return Err(GridError::Invalid(format!("goal radius {radius} must be positive")));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        (p - self.center).norm() < self.radius
    }
}

pub(crate) fn is_finite_point(p: &WorldPoint) -> bool {
    p.iter().all(|v| v.is_finite())
}

impl OccupancyGrid {
    /// Creates an obstacle-free grid.
    pub fn new(dims: VoxelIndex, resolution: f64, origin: WorldPoint) -> Result<Self, GridError> {
        let len = checked_len(dims)?;
        Self::from_occupancy(dims, resolution, origin, vec![false; len])
    }

    pub fn from_occupancy(
        dims: VoxelIndex,
        resolution: f64,
        origin: WorldPoint,
        occupancy: Vec<bool>,
    ) -> Result<Self, GridError> {
        let len = checked_len(dims)?;
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::Invalid(format!("resolution {resolution} must be positive")));
        }
        if !is_finite_point(&origin) {
            return Err(GridError::Invalid("origin must be finite".into()));
        }
        if occupancy.len() != len {
            return Err(GridError::Invalid(format!(
                "occupancy has {} cells, dims require {len}",
                occupancy.len()
            )));
        }
        Ok(Self { dims, resolution, origin, occupancy })
    }

    pub fn dims(&self) -> VoxelIndex {
        self.dims
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> WorldPoint {
        self.origin
    }

    pub fn num_cells(&self) -> usize {
        self.occupancy.len()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    /// World-space corner opposite to `origin`.
    pub fn upper_corner(&self) -> WorldPoint {
        self.origin
            + Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
                * self.resolution
    }

    /// Linear offset of a voxel, x fastest then y then z.
    #[inline]
    pub fn linear_index(&self, v: VoxelIndex) -> usize {
        v[0] + self.dims[0] * (v[1] + self.dims[1] * v[2])
    }

    #[inline]
    pub fn voxel_of_linear(&self, idx: usize) -> VoxelIndex {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn in_bounds(&self, v: [i64; 3]) -> bool {
        (0..3).all(|a| v[a] >= 0 && (v[a] as usize) < self.dims[a])
    }

    /// Floor convention: a point on a voxel's upper face belongs to the next voxel.
    pub fn world_to_index(&self, p: &WorldPoint) -> Option<VoxelIndex> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let u = ((p[a] - self.origin[a]) / self.resolution).floor();
            if !(u >= 0.0 && u < self.dims[a] as f64) {
                return None;
            }
            out[a] = u as usize;
        }
        Some(out)
    }

    /// Center of the voxel.
    pub fn index_to_world(&self, v: VoxelIndex) -> WorldPoint {
        self.origin
            + Vector3::new(v[0] as f64 + 0.5, v[1] as f64 + 0.5, v[2] as f64 + 0.5)
                * self.resolution
    }

    pub fn is_occupied(&self, v: VoxelIndex) -> bool {
        self.occupancy[self.linear_index(v)]
    }

    pub fn set_occupied(&mut self, v: VoxelIndex, occupied: bool) {
        let idx = self.linear_index(v);
        self.occupancy[idx] = occupied;
    }

    /// Out-of-bounds points count as occupied.
    pub fn is_point_free(&self, p: &WorldPoint) -> bool {
        match self.world_to_index(p) {
            Some(v) => !self.is_occupied(v),
            None => false,
        }
    }

    pub fn free_count(&self) -> usize {
        self.occupancy.iter().filter(|o| !**o).count()
    }

    pub fn occupied_fraction(&self) -> f64 {
        let occ = self.occupancy.len() - self.free_count();
        occ as f64 / self.occupancy.len() as f64
    }

    /// Volume of free space in cubic meters.
    pub fn free_measure(&self) -> f64 {
        self.free_count() as f64 * self.resolution.powi(3)
    }

    /// Exact voxel walk along `a -> b`; true iff every visited voxel is in
    /// bounds and free.
    pub fn segment_collision_free(&self, a: &WorldPoint, b: &WorldPoint) -> bool {
        if !is_finite_point(a) || !is_finite_point(b) {
            return false;
        }
        let mut free = true;
        self.traverse_segment(a, b, |v| match v {
            Some(v) if !self.is_occupied(v) => true,
            _ => {
                free = false;
                false
            }
        });
        free
    }

    /// Visits the voxels crossed by `a -> b` in order (Amanatides–Woo).
    /// `None` is passed for an out-of-bounds voxel. The visitor returns
    /// `false` to stop early.
    pub fn traverse_segment<F>(&self, a: &WorldPoint, b: &WorldPoint, mut visit: F)
    where
        F: FnMut(Option<VoxelIndex>) -> bool,
    {
        let ua = (a - self.origin) / self.resolution;
        let ub = (b - self.origin) / self.resolution;
        let mut cell = [0i64; 3];
        let mut remaining = [0u64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        let dir = ub - ua;
        for ax in 0..3 {
            cell[ax] = ua[ax].floor() as i64;
            let end = ub[ax].floor() as i64;
            remaining[ax] = (end - cell[ax]).unsigned_abs();
            if end > cell[ax] {
                step[ax] = 1;
                t_delta[ax] = 1.0 / dir[ax];
                t_max[ax] = ((cell[ax] + 1) as f64 - ua[ax]) / dir[ax];
            } else if end < cell[ax] {
                step[ax] = -1;
                t_delta[ax] = -1.0 / dir[ax];
                t_max[ax] = (cell[ax] as f64 - ua[ax]) / dir[ax];
            }
        }
        let to_voxel = |c: [i64; 3]| -> Option<VoxelIndex> {
            if self.in_bounds(c) {
                Some([c[0] as usize, c[1] as usize, c[2] as usize])
            } else {
                None
            }
        };
        if !visit(to_voxel(cell)) {
            return;
        }
        // Step count per axis is fixed up front so the walk always ends in b's voxel.
        while remaining.iter().any(|r| *r > 0) {
            let mut axis = 3;
            let mut best = f64::INFINITY;
            for ax in 0..3 {
                if remaining[ax] > 0 && (axis == 3 || t_max[ax] < best) {
                    axis = ax;
                    best = t_max[ax];
                }
            }
            cell[axis] += step[axis];
            t_max[axis] += t_delta[axis];
            remaining[axis] -= 1;
            if !visit(to_voxel(cell)) {
                return;
            }
        }
    }

    /// Chebyshev dilation of the obstacle set by `radius_voxels`.
    pub fn inflate(&self, radius_voxels: usize) -> OccupancyGrid {
        if radius_voxels == 0 {
            return self.clone();
        }
        let mut cur = self.occupancy.clone();
        let dims = self.dims;
        let strides = [1, dims[0], dims[0] * dims[1]];
        // The cube is separable: dilate along one axis at a time.
        for ax in 0..3 {
            let mut next = vec![false; cur.len()];
            let n = dims[ax];
            for idx in 0..cur.len() {
                if !cur[idx] {
                    continue;
                }
                let coord = (idx / strides[ax]) % n;
                let lo = coord.saturating_sub(radius_voxels);
                let hi = (coord + radius_voxels).min(n - 1);
                let base = idx - coord * strides[ax];
                for c in lo..=hi {
                    next[base + c * strides[ax]] = true;
                }
            }
            cur = next;
        }
        OccupancyGrid { occupancy: cur, ..self.clone() }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<OccupancyGrid, GridError> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), GridError> {
        w.write_all(GRID_MAGIC)?;
        for d in self.dims {
            let d = u32::try_from(d)
                .map_err(|_| GridError::Invalid(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&self.resolution.to_le_bytes())?;
        for a in 0..3 {
            w.write_all(&self.origin[a].to_le_bytes())?;
        }
        let mut bytes = vec![0u8; self.occupancy.len().div_ceil(8)];
        for (i, occ) in self.occupancy.iter().enumerate() {
            if *occ {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<OccupancyGrid, GridError> {
        let mut header = [0u8; 8 + 12 + 32];
        read_header(r, &mut header)?;
        check_magic(&header[..8], GRID_MAGIC)?;
        let dims = read_dims(&header[8..20])?;
        let f = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let resolution = f(20);
        let origin = Vector3::new(f(28), f(36), f(44));
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(GridError::MalformedHeader(format!("resolution {resolution}")));
        }
        if !is_finite_point(&origin) {
            return Err(GridError::MalformedHeader("non-finite origin".into()));
        }
        let len = checked_len(dims).map_err(|e| GridError::MalformedHeader(e.to_string()))?;
        let expected = len.div_ceil(8);
        let payload = read_payload(r, expected)?;
        let occupancy = (0..len).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
        Self::from_occupancy(dims, resolution, origin, occupancy)
    }
}

pub(crate) fn checked_len(dims: VoxelIndex) -> Result<usize, GridError> {
    if dims.iter().any(|d| *d == 0) {
        return Err(GridError::Invalid(format!("dims {dims:?} must all be >= 1")));
    }
    dims.iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| GridError::Invalid(format!("dims {dims:?} overflow")))
}

pub(crate) fn read_header<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), GridError> {
    let n = read_fully(r, buf)?;
    if n < buf.len() {
        return Err(GridError::MalformedHeader(format!(
            "header needs {} bytes, found {n}",
            buf.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_magic(found: &[u8], magic: &[u8; 8]) -> Result<(), GridError> {
    if found == magic {
        return Ok(());
    }
    if found[..7] == magic[..7] {
        return Err(GridError::VersionMismatch {
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Err(GridError::MalformedHeader("bad magic".into()))
}

/// Dimensions are stored as u32; anything that is zero or negative when
/// read as i32 is rejected.
pub(crate) fn read_dims(bytes: &[u8]) -> Result<VoxelIndex, GridError> {
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let v = i32::from_le_bytes(bytes[a * 4..a * 4 + 4].try_into().unwrap());
        if v <= 0 {
            return Err(GridError::MalformedHeader(format!("dimension {a} is {v}")));
        }
        *d = v as usize;
    }
    Ok(dims)
}

pub(crate) fn read_payload<R: Read>(r: &mut R, expected: usize) -> Result<Vec<u8>, GridError> {
    let mut payload = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(GridError::TruncatedPayload { expected, found: payload.len() });
    }
    Ok(payload)
}

fn read_fully<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Parameters of the random cuboid generator. Sizes are in voxels,
/// inclusive ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSpec {
    pub count: (usize, usize),
    pub size_min: VoxelIndex,
    pub size_max: VoxelIndex,
    /// Re-rolls allowed per obstacle before giving up.
    pub max_retries: usize,
}

impl ObstacleSpec {
    pub fn fixed(count: usize, size: VoxelIndex) -> Self {
        Self { count: (count, count), size_min: size, size_max: size, max_retries: 100 }
    }
}

/// Places axis-aligned cuboids with a seeded ChaCha8 stream. Voxels listed
/// in `keep_free` never end up occupied: an obstacle covering one of them
/// is re-rolled.
pub fn random_cluttered_map(
    dims: VoxelIndex,
    resolution: f64,
    origin: WorldPoint,
    spec: &ObstacleSpec,
    keep_free: &[VoxelIndex],
    seed: u64,
) -> Result<OccupancyGrid, GridError> {
    let mut grid = OccupancyGrid::new(dims, resolution, origin)?;
    if spec.count.0 > spec.count.1 || (0..3).any(|a| spec.size_min[a] > spec.size_max[a]) {
        return Err(GridError::Invalid("obstacle spec ranges are inverted".into()));
    }
    if (0..3).any(|a| spec.size_min[a] == 0 || spec.size_min[a] > dims[a]) {
        return Err(GridError::Invalid("obstacle size must fit in the grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(spec.count.0..=spec.count.1);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..=spec.max_retries {
            let mut lo = [0usize; 3];
            let mut hi = [0usize; 3];
            for a in 0..3 {
                let size = rng.random_range(spec.size_min[a]..=spec.size_max[a].min(dims[a]));
                lo[a] = rng.random_range(0..=dims[a] - size);
                hi[a] = lo[a] + size;
            }
            let blocks_free = keep_free
                .iter()
                .any(|v| (0..3).all(|a| v[a] >= lo[a] && v[a] < hi[a]));
            if blocks_free {
                continue;
            }
            for k in lo[2]..hi[2] {
                for j in lo[1]..hi[1] {
                    for i in lo[0]..hi[0] {
                        grid.set_occupied([i, j, k], true);
                    }
                }
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(GridError::PlacementFailed { retries: spec.max_retries });
        }
    }
    Ok(grid)
}

/// All in-bounds voxels within Chebyshev distance `radius` of `center`.
pub fn chebyshev_neighborhood(dims: VoxelIndex, center: VoxelIndex, radius: usize) -> Vec<VoxelIndex> {
    let range = |a: usize| center[a].saturating_sub(radius)..=(center[a] + radius).min(dims[a] - 1);
    let mut out = Vec::new();
    for k in range(2) {
        for j in range(1) {
            for i in range(0) {
                out.push([i, j, k]);
            }
        }
    }
    out
}
