//! Sparse storage and banded direct solvers.
//!
//! Matrices produced by assembly on structured grids with lexicographic
//! numbering have a narrow band, so every direct solve goes through a band
//! factorization: Cholesky for the SPD state operator, partial-pivoting LU
//! for the indefinite optimality systems.

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

/// Accumulates `(row, col, value)` contributions in insertion order.
///
/// Duplicates are summed in the order they were pushed, so a fixed element
/// loop always yields bitwise identical matrices.
#[derive(Clone, Debug)]
pub struct TripletBuilder<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> TripletBuilder<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn build(mut self) -> CsrMatrix<T> {
        // stable: equal keys keep push order
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            values,
        }
    }
}

impl<T: Real> CsrMatrix<T> {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over `(col, value)` pairs of one row.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let range = self.indptr[i]..self.indptr[i + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map(|(_, v)| v)
            .unwrap_or_else(T::zero)
    }

    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("CsrMatrix::mul_vec", self.ncols, x.len())?;
        Ok((0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect())
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[T], y: &[T]) -> Result<T> {
        check_len("CsrMatrix::bilinear", self.nrows, x.len())?;
        let ay = self.mul_vec(y)?;
        Ok(crate::scalar::dot(x, &ay))
    }

    pub fn transpose(&self) -> CsrMatrix<T> {
        let mut b = TripletBuilder::new(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                b.push(j, i, v);
            }
        }
        b.build()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn half_bandwidth(&self) -> usize {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] += v;
            }
        }
        d
    }

    /// Principal submatrix on the given (sorted) index set.
    pub fn principal_submatrix(&self, keep: &[usize]) -> CsrMatrix<T> {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k;
        }
        let mut b = TripletBuilder::new(keep.len(), keep.len());
        for (k, &i) in keep.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    b.push(k, map[j], v);
                }
            }
        }
        b.build()
    }

    /// Rows restricted to `rows`, columns restricted to `cols`.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix<T> {
        let mut map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            map[j] = k;
        }
        let mut b = TripletBuilder::new(rows.len(), cols.len());
        for (k, &i) in rows.iter().enumerate() {
            for (j, v) in self.row(i) {
                if map[j] != usize::MAX {
                    b.push(k, map[j], v);
                }
            }
        }
        b.build()
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> T {
        let scale = self
            .values
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs()))
            .max(T::min_positive_value());
        let mut worst = T::zero();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Symmetric band matrix stored by lower band, factorized in place.
#[derive(Clone, Debug)]
pub struct BandCholesky<T> {
    n: usize,
    kd: usize,
    // row i holds columns i-kd ..= i at offsets 0 ..= kd
    l: Vec<T>,
}

impl<T: Real> BandCholesky<T> {
    /// Factorizes a symmetric positive definite matrix given as CSR
    /// (only the lower triangle is read).
    pub fn factor(a: &CsrMatrix<T>) -> Result<Self> {
        check_len("BandCholesky::factor", a.nrows(), a.ncols())?;
        let n = a.nrows();
        let kd = a.half_bandwidth();
        let mut l = vec![T::zero(); n * (kd + 1)];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    l[i * (kd + 1) + (kd - (i - j))] += v;
                }
            }
        }
        let mut f = Self { n, kd, l };
        f.decompose()?;
        Ok(f)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.l[i * (self.kd + 1) + (self.kd - (i - j))]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut T {
        let kd = self.kd;
        &mut self.l[i * (kd + 1) + (kd - (i - j))]
    }

    fn decompose(&mut self) -> Result<()> {
        let (n, kd) = (self.n, self.kd);
        for i in 0..n {
            let j0 = i.saturating_sub(kd);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(kd));
                let mut s = self.at(i, j);
                for k in k0..j {
                    s -= self.at(i, k) * self.at(j, k);
                }
                if i == j {
                    if !(s > T::zero()) {
                        return Err(Error::NotPositiveDefinite {
                            row: i,
                            pivot: s.as_f64(),
                        });
                    }
                    *self.at_mut(i, i) = s.sqrt();
                } else {
                    *self.at_mut(i, j) = s / self.at(j, j);
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        check_len("BandCholesky::solve", self.n, b.len())?;
        let (n, kd) = (self.n, self.kd);
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(kd)..i {
                s -= self.at(i, k) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + kd + 1).min(n) {
                s -= self.at(k, i) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        Ok(x)
    }
}

/// General band matrix with LU factorization by partial pivoting.
///
/// Row `r` stores columns `r - kl ..= r + kl + ku`; the extra `kl`
/// super-diagonals absorb fill from row interchanges.
#[derive(Clone, Debug)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    a: Vec<T>,
    pivots: Vec<usize>,
    factored: bool,
}

impl<T: Real> BandLu<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            a: vec![T::zero(); n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    /// Adds `v` at `(r, c)`; `c` must lie within `kl`/`ku` of `r`.
    pub fn add(&mut self, r: usize, c: usize, v: T) {
        assert!(
            c + self.kl >= r && c <= r + self.ku,
            "entry ({r}, {c}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let k = self.idx(r, c);
        self.a[k] += v;
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = self.a[self.idx(k, k)].abs();
            for r in (k + 1)..=last_row {
                let v = self.a[self.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::Singular(k));
            }
            self.pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (i1, i2) = (self.idx(k, c), self.idx(p, c));
                    self.a.swap(i1, i2);
                }
            }
            let piv = self.a[self.idx(k, k)];
            let len = last_col - k;
            let src_start = self.idx(k, k) + 1;
            for r in (k + 1)..=last_row {
                let ir = self.idx(r, k);
                let m = self.a[ir] / piv;
                self.a[ir] = m;
                if m != T::zero() {
                    // row r lies after row k in storage
                    let (head, tail) = self.a.split_at_mut(ir + 1);
                    let src = &head[src_start..src_start + len];
                    for (d, &s) in tail[..len].iter_mut().zip(src) {
                        *d -= m * s;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        check_len("BandLu::solve", self.n, b.len())?;
        assert!(self.factored, "BandLu::solve before factor");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != T::zero() {
                for r in (k + 1)..=(k + kl).min(n - 1) {
                    x[r] -= self.a[self.idx(r, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for c in (k + 1)..=(k + kl + ku).min(n - 1) {
                s -= self.a[self.idx(k, c)] * x[c];
            }
            x[k] = s / self.a[self.idx(k, k)];
        }
        Ok(x)
    }
}

/// Dense symmetric positive definite solve; `None` when not SPD.
pub(crate) fn dense_spd_solve<T: Real>(a: &[Vec<T>], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut x = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let lik = l[i][k];
            let xk = x[k];
            x[i] -= lik * xk;
        }
        x[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[k][i];
            let xk = x[k];
            x[i] -= lki * xk;
        }
        x[i] /= l[i][i];
    }
    Some(x)
}
