//! Square banded matrices with an in-band LU factorization using partial
//! pivoting. Storage and work are linear in the order for fixed bandwidths.

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum BandError {
    #[error("pivot {value:e} at row {row} is below the singularity threshold")]
    Singular { row: usize, value: f64 },
    #[error("entry ({row}, {col}) lies outside the band")]
    OutOfBand { row: usize, col: usize },
    #[error("right-hand side has {found} rows, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
}

/// Pivots smaller than this in magnitude are treated as singular.
pub const PIVOT_EPS: f64 = 1e-12;

/// Row-major band storage. Row `r` keeps columns `r - lower ..= r + upper + lower`;
/// the extra `lower` columns on the right absorb fill-in from row swaps.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        let width = 2 * lower + upper + 1;
        Self { n, lower, upper, width, data: vec![0.0; n * width] }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let off = col as isize - row as isize + self.lower as isize;
        if off < 0 || off as usize >= self.width || col >= self.n {
            None
        } else {
            Some(row * self.width + off as usize)
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.slot(row, col).map_or(0.0, |i| self.data[i])
    }

    /// Writes an entry of the original matrix; it must lie within
    /// `-lower..=upper` of the diagonal.
    pub fn set(&mut self, row: usize, col: usize, value: f64) -> Result<(), BandError> {
        let d = col as isize - row as isize;
        if d < -(self.lower as isize) || d > self.upper as isize || row >= self.n || col >= self.n {
            return Err(BandError::OutOfBand { row, col });
        }
        let i = self.slot(row, col).unwrap();
        self.data[i] = value;
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|r| (0..self.n).map(|c| self.get(r, c)).collect()).collect()
    }

    /// `A x` for a row-major `n × k` right-hand block.
    pub fn mul(&self, x: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n * k];
        for r in 0..self.n {
            let lo = r.saturating_sub(self.lower);
            let hi = (r + self.upper + 1).min(self.n);
            for c in lo..hi {
                let a = self.get(r, c);
                if a != 0.0 {
                    for j in 0..k {
                        out[r * k + j] += a * x[c * k + j];
                    }
                }
            }
        }
        out
    }

    /// Factors in place.
    pub fn factor(mut self) -> Result<BandLu, BandError> {
        let n = self.n;
        let kl = self.lower;
        let reach = self.upper + kl;
        let mut pivots = Vec::with_capacity(n);
        let mut multipliers = vec![0.0; n * kl.max(1)];
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.get(j, j).abs();
            for r in j + 1..=last {
                let v = self.get(r, j).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < PIVOT_EPS {
                return Err(BandError::Singular { row: j, value: best });
            }
            pivots.push(p);
            let col_end = (j + reach + 1).min(n);
            if p != j {
                for c in j..col_end {
                    let a = self.slot(j, c).unwrap();
                    let b = self.slot(p, c).unwrap();
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(j, j);
            for r in j + 1..=last {
                let ir = self.slot(r, j).unwrap();
                let l = self.data[ir] / pivot;
                self.data[ir] = 0.0;
                multipliers[j * kl + (r - j - 1)] = l;
                if l == 0.0 {
                    continue;
                }
                for c in j + 1..col_end {
                    let u = self.data[self.slot(j, c).unwrap()];
                    if u != 0.0 {
                        let t = self.slot(r, c).unwrap();
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { u: self, pivots, multipliers })
    }
}

/// Result of [`BandMatrix::factor`]: L multipliers per elimination step,
/// row interchanges, and U with upper bandwidth `upper + lower`.
#[derive(Debug, Clone)]
pub struct BandLu {
    u: BandMatrix,
    pivots: Vec<usize>,
    multipliers: Vec<f64>,
}

impl BandLu {
    /// Solves for a row-major `n × k` right-hand block in place.
    pub fn solve_in_place(&self, b: &mut [f64], k: usize) -> Result<(), BandError> {
        let n = self.u.n;
        if b.len() != n * k {
            return Err(BandError::ShapeMismatch { expected: n * k, found: b.len() / k.max(1) });
        }
        let kl = self.u.lower;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                for c in 0..k {
                    b.swap(j * k + c, p * k + c);
                }
            }
            let last = (j + kl).min(n - 1);
            for r in j + 1..=last {
                let l = self.multipliers[j * kl + (r - j - 1)];
                if l != 0.0 {
                    for c in 0..k {
                        b[r * k + c] -= l * b[j * k + c];
                    }
                }
            }
        }
        let reach = self.u.upper + kl;
        for j in (0..n).rev() {
            let col_end = (j + reach + 1).min(n);
            for c in 0..k {
                let mut acc = b[j * k + c];
                for col in j + 1..col_end {
                    acc -= self.u.get(j, col) * b[col * k + c];
                }
                b[j * k + c] = acc / self.u.get(j, j);
            }
        }
        Ok(())
    }
}
