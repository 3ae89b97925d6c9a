//! Minimum control-effort piecewise polynomials.
//!
//! For integrator order `s` (3 = jerk, 4 = snap) each segment is a
//! degree `2s - 1` polynomial in local time. The optimal coefficients
//! satisfy a square `2Ms × 2Ms` banded system built from the boundary
//! flags, the intermediate conditions and the continuity conditions at
//! every joint, which is solved by banded LU in time linear in `M`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use crate::banded::{BandError, BandMatrix};
use crate::grid::{OccupancyGrid, WorldPoint};

#[derive(thiserror::Error, Debug)]
pub enum TrajError {
    #[error("invalid BIVP: {0}")]
    InvalidSpec(String),
    #[error("segment {index} has zero length")]
    ZeroLengthSegment { index: usize },
    #[error("invalid kinematic limits v_max={v_max} a_max={a_max}")]
    InvalidLimits { v_max: f64, a_max: f64 },
    #[error("singular system: {0}")]
    Singular(#[from] BandError),
    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("time {t} outside [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("derivative order {k} exceeds polynomial degree {degree}")]
    DerivativeOrder { k: usize, degree: usize },
    #[error("collision repair exhausted after {rounds} rounds")]
    RepairExhausted { rounds: usize },
    #[error("malformed trajectory file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Boundary-intermediate value problem for an `M`-segment spline.
///
/// Flags are `dim × order` matrices whose column `k` holds the `k`-th
/// derivative. `start`/`end` carry `s` columns, intermediate condition
/// `i` carries `d_i` columns with `1 <= d_i <= s`.
#[derive(Debug, Clone, PartialEq)]
pub struct BivpSpec {
    s: usize,
    dim: usize,
    durations: Vec<f64>,
    start: DMatrix<f64>,
    end: DMatrix<f64>,
    intermediate: Vec<DMatrix<f64>>,
}

impl BivpSpec {
    pub fn new(
        s: usize,
        start: DMatrix<f64>,
        end: DMatrix<f64>,
        intermediate: Vec<DMatrix<f64>>,
        durations: Vec<f64>,
    ) -> Result<Self, TrajError> {
        let spec = Self { s, dim: start.nrows(), durations, start, end, intermediate };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero higher derivatives at both ends, positions only in between.
    pub fn rest_to_rest(s: usize, waypoints: &[DVector<f64>], durations: Vec<f64>) -> Result<Self, TrajError> {
        if waypoints.len() < 2 {
            return Err(TrajError::InvalidSpec("need at least two waypoints".into()));
        }
        let dim = waypoints[0].len();
        let flag = |p: &DVector<f64>| {
            let mut m = DMatrix::zeros(dim, s);
            m.set_column(0, p);
            m
        };
        let intermediate = waypoints[1..waypoints.len() - 1]
            .iter()
            .map(|p| DMatrix::from_column_slice(dim, 1, p.as_slice()))
            .collect();
        Self::new(s, flag(&waypoints[0]), flag(&waypoints[waypoints.len() - 1]), intermediate, durations)
    }

    pub fn rest_to_rest_3d(s: usize, waypoints: &[WorldPoint], durations: Vec<f64>) -> Result<Self, TrajError> {
        let pts: Vec<DVector<f64>> = waypoints.iter().map(|p| DVector::from_column_slice(p.as_slice())).collect();
        Self::rest_to_rest(s, &pts, durations)
    }

    fn validate(&self) -> Result<(), TrajError> {
        let bad = |m: String| Err(TrajError::InvalidSpec(m));
        let s = self.s;
        if s == 0 || self.dim == 0 {
            return bad(format!("s={s} and dim={} must be positive", self.dim));
        }
        let m = self.durations.len();
        if m == 0 {
            return bad("need at least one segment".into());
        }
        if self.intermediate.len() + 1 != m {
            return bad(format!("{} intermediate conditions for {m} segments", self.intermediate.len()));
        }
        for (name, f) in [("start", &self.start), ("end", &self.end)] {
            if f.shape() != (self.dim, s) {
                return bad(format!("{name} flag is {:?}, expected ({}, {s})", f.shape(), self.dim));
            }
        }
        for (i, c) in self.intermediate.iter().enumerate() {
            if c.nrows() != self.dim || c.ncols() == 0 || c.ncols() > s {
                return bad(format!("intermediate condition {i} has shape {:?}", c.shape()));
            }
        }
        if let Some((i, t)) = self.durations.iter().enumerate().find(|(_, t)| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("duration {i} is {t}; durations must be positive"));
        }
        let all_finite = self.start.iter().chain(self.end.iter()).all(|v| v.is_finite())
            && self.intermediate.iter().all(|c| c.iter().all(|v| v.is_finite()));
        if !all_finite {
            return bad("conditions must be finite".into());
        }
        Ok(())
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn start_flag(&self) -> &DMatrix<f64> {
        &self.start
    }

    pub fn end_flag(&self) -> &DMatrix<f64> {
        &self.end
    }

    pub fn intermediate(&self) -> &[DMatrix<f64>] {
        &self.intermediate
    }

    /// Intermediate orders `d_i`.
    pub fn orders(&self) -> Vec<usize> {
        self.intermediate.iter().map(|c| c.ncols()).collect()
    }

    /// `M + 1` positions: start, every intermediate point, end.
    pub fn waypoints(&self) -> Vec<DVector<f64>> {
        let mut out = vec![self.start.column(0).into_owned()];
        out.extend(self.intermediate.iter().map(|c| c.column(0).into_owned()));
        out.push(self.end.column(0).into_owned());
        out
    }

    pub fn waypoints_3d(&self) -> Vec<WorldPoint> {
        self.waypoints()
            .iter()
            .map(|p| WorldPoint::new(p[0], p.get(1).copied().unwrap_or(0.0), p.get(2).copied().unwrap_or(0.0)))
            .collect()
    }

    /// Splits each listed segment at the midpoint of its endpoint
    /// positions (a new position-only condition) and assigns new durations.
    pub fn with_midpoints(&self, split: &[usize], durations: Vec<f64>) -> Result<Self, TrajError> {
        let wps = self.waypoints();
        let mut intermediate = Vec::with_capacity(self.intermediate.len() + split.len());
        for seg in 0..self.segments() {
            if split.contains(&seg) {
                let mid = (&wps[seg] + &wps[seg + 1]) / 2.0;
                intermediate.push(DMatrix::from_column_slice(self.dim, 1, mid.as_slice()));
            }
            if seg + 1 < self.segments() {
                intermediate.push(self.intermediate[seg].clone());
            }
        }
        Self::new(self.s, self.start.clone(), self.end.clone(), intermediate, durations)
    }
}

/// `d^k/dτ^k` of `(1, τ, …, τ^(2s-1))`.
pub fn poly_basis(tau: f64, s: usize, k: usize) -> Vec<f64> {
    let n = 2 * s;
    let mut out = vec![0.0; n];
    for (j, o) in out.iter_mut().enumerate().skip(k) {
        *o = falling_factorial(j, k) * tau.powi((j - k) as i32);
    }
    out
}

/// `j (j-1) … (j-k+1)`.
fn falling_factorial(j: usize, k: usize) -> f64 {
    ((j + 1 - k)..=j).fold(1.0, |acc, v| acc * v as f64)
}

/// Banded form of `A c = b`. Unknowns are ordered segment by segment,
/// basis coefficient fastest; `rhs` is row-major `2Ms × dim`.
#[derive(Debug, Clone)]
pub struct BandedSystem {
    pub matrix: BandMatrix,
    pub rhs: Vec<f64>,
    pub s: usize,
    pub dim: usize,
}

impl BandedSystem {
    pub fn order(&self) -> usize {
        self.matrix.order()
    }
}

/// Rows: `s` start rows, then per joint `d_i` value rows followed by
/// `2s - d_i` continuity rows, then `s` end rows.
pub fn build_banded_system(spec: &BivpSpec) -> Result<BandedSystem, TrajError> {
    let s = spec.s;
    let n_seg = spec.segments();
    if spec.intermediate.len() + 1 != n_seg || spec.start.shape() != (spec.dim, s) || spec.end.shape() != (spec.dim, s) {
        return Err(TrajError::InvalidSpec("inconsistent condition counts".into()));
    }
    let dim = spec.dim;
    let n = 2 * s * n_seg;
    let max_d = spec.orders().into_iter().max().unwrap_or(0);
    let lower = s + max_d;
    let upper = s.saturating_sub(1);
    let mut a = BandMatrix::zeros(n, lower, upper);
    let mut rhs = vec![0.0; n * dim];
    let mut row = 0usize;
    let put_row = |row: usize, col0: usize, coeffs: &[f64], a: &mut BandMatrix| -> Result<(), TrajError> {
        for (j, v) in coeffs.iter().enumerate() {
            if *v != 0.0 {
                a.set(row, col0 + j, *v)?;
            }
        }
        Ok(())
    };

    for k in 0..s {
        put_row(row, 0, &poly_basis(0.0, s, k), &mut a)?;
        for c in 0..dim {
            rhs[row * dim + c] = spec.start[(c, k)];
        }
        row += 1;
    }
    for (i, cond) in spec.intermediate.iter().enumerate() {
        let t = spec.durations[i];
        let col = 2 * s * i;
        let d = cond.ncols();
        if d == 0 || d > s {
            return Err(TrajError::InvalidSpec(format!("intermediate order {d} not in 1..={s}")));
        }
        for k in 0..d {
            put_row(row, col, &poly_basis(t, s, k), &mut a)?;
            for c in 0..dim {
                rhs[row * dim + c] = cond[(c, k)];
            }
            row += 1;
        }
        for k in 0..2 * s - d {
            put_row(row, col, &poly_basis(t, s, k), &mut a)?;
            a.set(row, col + 2 * s + k, -falling_factorial(k, k))?;
            row += 1;
        }
    }
    let last = spec.durations[n_seg - 1];
    for k in 0..s {
        put_row(row, 2 * s * (n_seg - 1), &poly_basis(last, s, k), &mut a)?;
        for c in 0..dim {
            rhs[row * dim + c] = spec.end[(c, k)];
        }
        row += 1;
    }
    debug_assert_eq!(row, n);
    Ok(BandedSystem { matrix: a, rhs, s, dim })
}

/// Solves the banded system by in-band partial-pivoting LU. Returns the
/// `2Ms × dim` coefficient stack.
pub fn banded_plu_solve(sys: &BandedSystem) -> Result<DMatrix<f64>, TrajError> {
    let n = sys.order();
    let lu = sys.matrix.clone().factor()?;
    let mut x = sys.rhs.clone();
    lu.solve_in_place(&mut x, sys.dim)?;
    let ax = sys.matrix.mul(&x, sys.dim);
    let residual = ax.iter().zip(&sys.rhs).map(|(l, r)| (l - r).abs()).fold(0.0, f64::max);
    let b_norm = sys.rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tolerance = 1e-8 * (1.0 + b_norm);
    if !(residual <= tolerance) {
        return Err(TrajError::Residual { residual, tolerance });
    }
    Ok(DMatrix::from_row_slice(n, sys.dim, &x))
}

/// Piecewise polynomial in local time; segment `i` maps
/// `τ ∈ [0, T_i]` through `coeffs[i]ᵀ ρ(τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    s: usize,
    dim: usize,
    durations: Vec<f64>,
    starts: Vec<f64>,
    coeffs: Vec<DMatrix<f64>>,
}

impl PiecewisePolynomial {
    pub fn new(s: usize, durations: Vec<f64>, coeffs: Vec<DMatrix<f64>>) -> Result<Self, TrajError> {
        if durations.is_empty() || durations.len() != coeffs.len() {
            return Err(TrajError::InvalidSpec("durations and coefficient blocks differ in count".into()));
        }
        let dim = coeffs[0].ncols();
        if coeffs.iter().any(|c| c.shape() != (2 * s, dim)) {
            return Err(TrajError::InvalidSpec(format!("coefficient blocks must be {} × {dim}", 2 * s)));
        }
        if durations.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(TrajError::InvalidSpec("durations must be positive".into()));
        }
        let mut starts = Vec::with_capacity(durations.len());
        let mut acc = 0.0;
        for t in &durations {
            starts.push(acc);
            acc += t;
        }
        Ok(Self { s, dim, durations, starts, coeffs })
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segment_count(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn total_duration(&self) -> f64 {
        self.starts[self.starts.len() - 1] + self.durations[self.durations.len() - 1]
    }

    /// Global start time of every segment.
    pub fn segment_starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn eval_segment(&self, seg: usize, tau: f64, k: usize) -> DVector<f64> {
        let basis = DVector::from_vec(poly_basis(tau, self.s, k));
        self.coeffs[seg].tr_mul(&basis)
    }

    /// Segment containing `t`: intervals are right-open except the last.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), TrajError> {
        let total = self.total_duration();
        if !(t >= 0.0 && t <= total) {
            return Err(TrajError::OutOfDomain { t, total });
        }
        let seg = self.starts.partition_point(|st| *st <= t).saturating_sub(1);
        Ok((seg, t - self.starts[seg]))
    }

    pub fn eval(&self, t: f64, k: usize) -> Result<DVector<f64>, TrajError> {
        if k > 2 * self.s - 1 {
            return Err(TrajError::DerivativeOrder { k, degree: 2 * self.s - 1 });
        }
        let (seg, tau) = self.locate(t)?;
        Ok(self.eval_segment(seg, tau, k))
    }

    pub fn position_3d(&self, t: f64) -> Result<WorldPoint, TrajError> {
        let p = self.eval(t, 0)?;
        Ok(WorldPoint::new(p[0], p.get(1).copied().unwrap_or(0.0), p.get(2).copied().unwrap_or(0.0)))
    }

    /// `Σ_i ∫_0^{T_i} ‖p^{(s)}‖² dτ`, integrated exactly.
    pub fn control_effort(&self) -> f64 {
        let s = self.s;
        let mut total = 0.0;
        for (c, t) in self.coeffs.iter().zip(&self.durations) {
            for axis in 0..self.dim {
                // Coefficients of the s-th derivative, degree s-1.
                let q: Vec<f64> = (s..2 * s).map(|j| c[(j, axis)] * falling_factorial(j, s)).collect();
                for (a, qa) in q.iter().enumerate() {
                    for (b, qb) in q.iter().enumerate() {
                        let p = (a + b + 1) as i32;
                        total += qa * qb * t.powi(p) / p as f64;
                    }
                }
            }
        }
        total
    }

    /// Text format: `# s=<s> m=<dim> M=<M>`, then per segment `T=<dur>`
    /// followed by `2s` lines of `dim` coefficients in ascending monomial order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), TrajError> {
        writeln!(w, "# s={} m={} M={}", self.s, self.dim, self.segment_count())?;
        for (c, t) in self.coeffs.iter().zip(&self.durations) {
            writeln!(w, "T={t}")?;
            for j in 0..2 * self.s {
                let row: Vec<String> = (0..self.dim).map(|a| format!("{}", c[(j, a)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TrajError> {
        let parse_err = |m: &str| TrajError::Parse(m.to_string());
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| parse_err("empty file"))??;
        let header = header.strip_prefix('#').ok_or_else(|| parse_err("missing header"))?;
        let mut s = None;
        let mut dim = None;
        let mut m = None;
        for field in header.split_whitespace() {
            let (key, val) = field.split_once('=').ok_or_else(|| parse_err("bad header field"))?;
            let val: usize = val.parse().map_err(|_| parse_err("bad header value"))?;
            match key {
                "s" => s = Some(val),
                "m" => dim = Some(val),
                "M" => m = Some(val),
                _ => return Err(parse_err("unknown header key")),
            }
        }
        let (s, dim, m) = match (s, dim, m) {
            (Some(s), Some(d), Some(m)) if s > 0 && d > 0 && m > 0 => (s, d, m),
            _ => return Err(parse_err("incomplete header")),
        };
        let mut next_line = || -> Result<String, TrajError> {
            loop {
                let l = lines.next().ok_or_else(|| parse_err("unexpected end of file"))??;
                if !l.trim().is_empty() {
                    return Ok(l);
                }
            }
        };
        let mut durations = Vec::with_capacity(m);
        let mut coeffs = Vec::with_capacity(m);
        for _ in 0..m {
            let line = next_line()?;
            let t: f64 = line
                .trim()
                .strip_prefix("T=")
                .ok_or_else(|| parse_err("expected T=<duration>"))?
                .parse()
                .map_err(|_| parse_err("bad duration"))?;
            let mut block = DMatrix::zeros(2 * s, dim);
            for j in 0..2 * s {
                let line = next_line()?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err("bad coefficient"))?;
                if vals.len() != dim {
                    return Err(parse_err("wrong coefficient count"));
                }
                for (a, v) in vals.into_iter().enumerate() {
                    block[(j, a)] = v;
                }
            }
            durations.push(t);
            coeffs.push(block);
        }
        Self::new(s, durations, coeffs)
    }

    /// CSV with `t,x,y,z,vx,vy,vz,ax,ay,az` rows every `dt` seconds; the
    /// final time is always included.
    pub fn write_samples_csv<W: Write>(&self, w: &mut W, dt: f64) -> Result<(), TrajError> {
        if self.dim != 3 {
            return Err(TrajError::InvalidSpec("sampled export needs a 3D trajectory".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajError::InvalidSpec(format!("dt {dt} must be positive")));
        }
        writeln!(w, "t,x,y,z,vx,vy,vz,ax,ay,az")?;
        let total = self.total_duration();
        let n = (total / dt).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).filter(|t| *t <= total).collect();
        if times.last().is_none_or(|t| (total - t).abs() > 1e-12) {
            times.push(total);
        }
        for t in times {
            let p = self.eval(t, 0)?;
            let v = self.eval(t, 1)?;
            let a = self.eval(t, 2)?;
            writeln!(w, "{t:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}", p[0], p[1], p[2], v[0], v[1], v[2], a[0], a[1], a[2])?;
        }
        Ok(())
    }
}

/// Builds and solves the BIVP.
pub fn solve_bivp(spec: &BivpSpec) -> Result<PiecewisePolynomial, TrajError> {
    let sys = build_banded_system(spec)?;
    let c = banded_plu_solve(&sys)?;
    let block = 2 * spec.s;
    let coeffs = (0..spec.segments()).map(|i| c.rows(i * block, block).into_owned()).collect();
    PiecewisePolynomial::new(spec.s, spec.durations.clone(), coeffs)
}

/// Accelerate at `a_max` to `v_max`, cruise, decelerate to rest.
pub fn trapezoidal_duration(distance: f64, v_max: f64, a_max: f64) -> f64 {
    let d_acc = v_max * v_max / (2.0 * a_max);
    if distance < 2.0 * d_acc {
        2.0 * (distance / a_max).sqrt()
    } else {
        2.0 * v_max / a_max + (distance - 2.0 * d_acc) / v_max
    }
}

pub fn trapezoidal_time_allocation(waypoints: &[WorldPoint], v_max: f64, a_max: f64) -> Result<Vec<f64>, TrajError> {
    if !(v_max > 0.0 && a_max > 0.0 && v_max.is_finite() && a_max.is_finite()) {
        return Err(TrajError::InvalidLimits { v_max, a_max });
    }
    waypoints
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let d = (w[1] - w[0]).norm();
            if !(d > 0.0) {
                return Err(TrajError::ZeroLengthSegment { index: i });
            }
            Ok(trapezoidal_duration(d, v_max, a_max))
        })
        .collect()
}

/// Indices of segments whose densely sampled polyline hits an obstacle.
/// Samples are `resolution / (2 v_max)` seconds apart and consecutive
/// samples are joined by exact voxel traversal.
pub fn colliding_segments(traj: &PiecewisePolynomial, grid: &OccupancyGrid, v_max: f64) -> Vec<usize> {
    let dt = grid.resolution() / (2.0 * v_max);
    let mut out = Vec::new();
    for seg in 0..traj.segment_count() {
        let t_end = traj.durations[seg];
        let n = ((t_end / dt).ceil() as usize).max(1);
        let point = |tau: f64| {
            let p = traj.eval_segment(seg, tau, 0);
            WorldPoint::new(p[0], p[1], p[2])
        };
        let mut prev = point(0.0);
        let mut hit = false;
        for i in 1..=n {
            let cur = point(t_end * i as f64 / n as f64);
            if !grid.segment_collision_free(&prev, &cur) {
                hit = true;
                break;
            }
            prev = cur;
        }
        if hit {
            out.push(seg);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub trajectory: PiecewisePolynomial,
    pub spec: BivpSpec,
    /// Number of re-solves performed.
    pub rounds: usize,
}

/// Splits every colliding segment at its straight-line midpoint,
/// re-allocates times and re-solves until the sampled trajectory is
/// collision-free. Fails once `max_rounds` re-solves did not suffice.
pub fn collision_repair(
    traj: &PiecewisePolynomial,
    spec: &BivpSpec,
    grid: &OccupancyGrid,
    v_max: f64,
    a_max: f64,
    max_rounds: usize,
) -> Result<RepairOutcome, TrajError> {
    if spec.dim != 3 || traj.dim != 3 {
        return Err(TrajError::InvalidSpec("collision repair needs a 3D trajectory".into()));
    }
    if !(v_max > 0.0 && a_max > 0.0) {
        return Err(TrajError::InvalidLimits { v_max, a_max });
    }
    let mut current = traj.clone();
    let mut current_spec = spec.clone();
    let mut rounds = 0;
    loop {
        let bad = colliding_segments(&current, grid, v_max);
        if bad.is_empty() {
            return Ok(RepairOutcome { trajectory: current, spec: current_spec, rounds });
        }
        if rounds >= max_rounds {
            return Err(TrajError::RepairExhausted { rounds });
        }
        let wps = current_spec.waypoints_3d();
        let mut new_wps = Vec::with_capacity(wps.len() + bad.len());
        for (i, w) in wps.iter().enumerate() {
            new_wps.push(*w);
            if bad.contains(&i) {
                new_wps.push((wps[i] + wps[i + 1]) / 2.0);
            }
        }
        let durations = trapezoidal_time_allocation(&new_wps, v_max, a_max)?;
        current_spec = current_spec.with_midpoints(&bad, durations)?;
        current = solve_bivp(&current_spec)?;
        rounds += 1;
    }
}
