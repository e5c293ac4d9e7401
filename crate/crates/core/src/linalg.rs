//! Sparse matrices and the direct solver used by the flow discretization.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Relative residual every linear solve must reach.
pub const LINEAR_RTOL: f64 = 1e-10;

/// Sparsity pattern in compressed row form with sorted column indices.
#[derive(Clone, Debug)]
pub struct CsrPattern {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
}

impl CsrPattern {
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in entries {
            rows[r].push(c);
        }
        for r in 0..n {
            // the diagonal is always stored so empty rows stay factorizable
            rows[r].push(r);
            rows[r].sort_unstable();
            rows[r].dedup();
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        for row in rows {
            cols.extend(row);
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Storage slot of entry `(r, c)`.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.cols[a..b].binary_search(&c).ok().map(|k| a + k)
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]]
    }
}

/// Matrix-vector product with values laid out on `pattern`.
pub fn csr_mul(pattern: &CsrPattern, values: &[f64], x: &[f64], y: &mut [f64]) {
    for r in 0..pattern.n {
        let mut s = 0.0;
        for k in pattern.row_ptr[r]..pattern.row_ptr[r + 1] {
            s += values[k] * x[pattern.cols[k]];
        }
        y[r] = s;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_residual(pattern: &CsrPattern, values: &[f64], x: &[f64], b: &[f64], r: &mut [f64]) -> f64 {
    csr_mul(pattern, values, x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(r)
    } else {
        norm2(r) / bn
    }
}

/// Reverse Cuthill-McKee ordering; returns `perm[new] = old`.
pub fn reverse_cuthill_mckee(pattern: &CsrPattern) -> Vec<usize> {
    let n = pattern.n;
    let degree: Vec<usize> = (0..n).map(|r| pattern.row(r).len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut neighbors = Vec::new();
    while order.len() < n {
        let seed = (0..n)
            .filter(|&v| !visited[v])
            .min_by_key(|&v| degree[v])
            .expect("unvisited node remains");
        let start = pseudo_peripheral(pattern, seed, &degree);
        let first = order.len();
        visited[start] = true;
        order.push(start);
        let mut head = first;
        while head < order.len() {
            let v = order[head];
            head += 1;
            neighbors.clear();
            neighbors.extend(pattern.row(v).iter().copied().filter(|&w| !visited[w]));
            neighbors.sort_by_key(|&w| (degree[w], w));
            for &w in &neighbors {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(pattern: &CsrPattern, start: usize, level: &mut [usize]) -> (usize, Vec<usize>) {
    level.iter_mut().for_each(|l| *l = usize::MAX);
    level[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut depth = 0;
    let mut last = vec![start];
    while let Some(v) = queue.pop_front() {
        for &w in pattern.row(v) {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                if level[w] > depth {
                    depth = level[w];
                    last.clear();
                }
                if level[w] == depth {
                    last.push(w);
                }
                queue.push_back(w);
            }
        }
    }
    (depth, last)
}

fn pseudo_peripheral(pattern: &CsrPattern, seed: usize, degree: &[usize]) -> usize {
    let mut level = vec![usize::MAX; pattern.n];
    let mut current = seed;
    let (mut depth, mut last) = bfs_levels(pattern, current, &mut level);
    for _ in 0..8 {
        let candidate = *last.iter().min_by_key(|&&v| degree[v]).unwrap_or(&current);
        let (d, l) = bfs_levels(pattern, candidate, &mut level);
        if d <= depth {
            break;
        }
        current = candidate;
        depth = d;
        last = l;
    }
    current
}

/// Symbolic data of a banded LU: ordering and bandwidths for one pattern.
#[derive(Clone, Debug)]
pub struct BandedSolver {
    pattern: CsrPattern,
    perm: Vec<usize>,
    inv: Vec<usize>,
    kl: usize,
    ku: usize,
}

impl BandedSolver {
    pub fn new(pattern: CsrPattern) -> Self {
        let perm = reverse_cuthill_mckee(&pattern);
        let mut inv = vec![0; pattern.n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let (mut kl, mut ku) = (0, 0);
        for r in 0..pattern.n {
            for &c in pattern.row(r) {
                let (i, j) = (inv[r], inv[c]);
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        Self { pattern, perm, inv, kl, ku }
    }

    pub fn pattern(&self) -> &CsrPattern {
        &self.pattern
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// LU factorization without pivoting of the matrix with `values`.
    ///
    /// Safe for matrices whose symmetric part is positive definite.
    pub fn factor(&self, values: &[f64]) -> Result<BandedLu<'_>> {
        let n = self.pattern.n;
        let w = self.kl + self.ku + 1;
        let mut a = vec![0.0; n * w];
        let mut scale = 0.0_f64;
        for r in 0..n {
            let i = self.inv[r];
            for k in self.pattern.row_ptr[r]..self.pattern.row_ptr[r + 1] {
                let j = self.inv[self.pattern.cols[k]];
                a[i * w + (j + self.kl - i)] += values[k];
                scale = scale.max(values[k].abs());
            }
        }
        let (kl, ku) = (self.kl, self.ku);
        for k in 0..n {
            let pivot = a[k * w + kl];
            if !(pivot.abs() > 1e-14 * scale) {
                return Err(Error::Singular(format!(
                    "zero pivot {pivot:e} at row {k} of {n}"
                )));
            }
            let inv_pivot = 1.0 / pivot;
            let jmax = (k + ku).min(n - 1);
            let (upper, lower) = a.split_at_mut((k + 1) * w);
            let urow = &upper[k * w + kl + 1..k * w + kl + 1 + (jmax - k)];
            for i in k + 1..=(k + kl).min(n - 1) {
                let row = &mut lower[(i - k - 1) * w..(i - k) * w];
                let lk = k + kl - i;
                if row[lk] == 0.0 {
                    continue;
                }
                let l = row[lk] * inv_pivot;
                row[lk] = l;
                let dst = &mut row[lk + 1..lk + 1 + (jmax - k)];
                for (d, u) in dst.iter_mut().zip(urow) {
                    *d -= l * u;
                }
            }
        }
        Ok(BandedLu { solver: self, a, values: values.to_vec() })
    }

    /// Factor and solve `A x = b` to [`LINEAR_RTOL`] with iterative refinement.
    pub fn solve(&self, values: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.factor(values)?.solve(b)
    }
}

pub struct BandedLu<'a> {
    solver: &'a BandedSolver,
    a: Vec<f64>,
    values: Vec<f64>,
}

impl BandedLu<'_> {
    fn apply(&self, b: &[f64]) -> Vec<f64> {
        let s = self.solver;
        let n = s.pattern.n;
        let (kl, ku) = (s.kl, s.ku);
        let w = kl + ku + 1;
        let mut y: Vec<f64> = s.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let j0 = i.saturating_sub(kl);
            let row = &self.a[i * w..(i + 1) * w];
            let mut acc = y[i];
            for j in j0..i {
                acc -= row[j + kl - i] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let jmax = (i + ku).min(n - 1);
            let row = &self.a[i * w..(i + 1) * w];
            let mut acc = y[i];
            for j in i + 1..=jmax {
                acc -= row[j + kl - i] * y[j];
            }
            y[i] = acc / row[kl];
        }
        let mut x = vec![0.0; n];
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.solver.pattern.n;
        let mut x = self.apply(b);
        let mut r = vec![0.0; n];
        let mut res = relative_residual(&self.solver.pattern, &self.values, &x, b, &mut r);
        for _ in 0..4 {
            if res <= LINEAR_RTOL {
                return Ok(x);
            }
            let dx = self.apply(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            res = relative_residual(&self.solver.pattern, &self.values, &x, b, &mut r);
        }
        if res <= LINEAR_RTOL {
            Ok(x)
        } else {
            Err(Error::SolverBreakdown { residual: res })
        }
    }
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite matrices.
pub fn pcg(pattern: &CsrPattern, values: &[f64], b: &[f64], rtol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = pattern.n;
    let diag: Vec<f64> = (0..n)
        .map(|r| pattern.position(r, r).map_or(1.0, |k| values[k]))
        .collect();
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for _ in 0..max_iter {
        csr_mul(pattern, values, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::SolverBreakdown { residual: norm2(&r) / bn });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= rtol * bn {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverBreakdown { residual: norm2(&r) / bn })
}

/// Gaussian elimination with partial pivoting on a small dense row-major system.
pub fn solve_dense(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
            .expect("nonempty range");
        if !(m[p * n + k].abs() > 1e-13 * scale) {
            return Err(Error::Singular(format!("{n}x{n} system is singular")));
        }
        if p != k {
            for c in 0..n {
                m.swap(k * n + c, p * n + c);
            }
            x.swap(k, p);
        }
        for i in k + 1..n {
            let l = m[i * n + k] / m[k * n + k];
            for c in k..n {
                m[i * n + c] -= l * m[k * n + c];
            }
            x[i] -= l * x[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = x[k];
        for c in k + 1..n {
            s -= m[k * n + c] * x[c];
        }
        x[k] = s / m[k * n + k];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn laplacian(n: usize, shift: f64, skew: f64) -> (CsrPattern, Vec<f64>) {
        let idx = |i: usize, j: usize| j * n + i;
        let mut entries = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let r = idx(i, j);
                if i > 0 { entries.push((r, idx(i - 1, j))); }
                if i + 1 < n { entries.push((r, idx(i + 1, j))); }
                if j > 0 { entries.push((r, idx(i, j - 1))); }
                if j + 1 < n { entries.push((r, idx(i, j + 1))); }
            }
        }
        let p = CsrPattern::from_entries(n * n, entries);
        let mut v = vec![0.0; p.nnz()];
        for r in 0..n * n {
            for k in p.row_ptr[r]..p.row_ptr[r + 1] {
                let c = p.cols[k];
                v[k] = if c == r {
                    4.0 + shift
                } else if c > r {
                    -1.0 + skew
                } else {
                    -1.0 - skew
                };
            }
        }
        (p, v)
    }

    #[test]
    fn banded_matches_pcg() {
        let (p, v) = laplacian(9, 0.01, 0.0);
        let b: Vec<f64> = (0..p.n).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let s = BandedSolver::new(p.clone());
        let x = s.solve(&v, &b).unwrap();
        let y = pcg(&p, &v, &b, 1e-13, 1000).unwrap();
        for (a, c) in x.iter().zip(&y) {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn nonsymmetric_with_positive_symmetric_part() {
        let (p, v) = laplacian(7, 0.0, 0.3);
        let xs: Vec<f64> = (0..p.n).map(|i| (i as f64).sin()).collect();
        let mut b = vec![0.0; p.n];
        csr_mul(&p, &v, &xs, &mut b);
        let x = BandedSolver::new(p).solve(&v, &b).unwrap();
        for (a, c) in x.iter().zip(&xs) {
            assert!((a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn rcm_reduces_bandwidth() {
        // a path graph numbered badly
        let n = 50;
        let order: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
        let entries = order.windows(2).flat_map(|w| [(w[0], w[1]), (w[1], w[0])]);
        let p = CsrPattern::from_entries(n, entries);
        let s = BandedSolver::new(p);
        assert_eq!(s.bandwidths(), (1, 1));
    }

    #[test]
    fn singular_detected() {
        let p = CsrPattern::from_entries(2, [(0, 1), (1, 0)]);
        let v = vec![1.0, 1.0, 1.0, 1.0];
        assert!(matches!(BandedSolver::new(p).solve(&v, &[1.0, 0.0]), Err(Error::Singular(_))));
        assert!(solve_dense(2, &[1.0, 2.0, 2.0, 4.0], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn dense_solve_round_trip(vals in proptest::collection::vec(-1.0..1.0f64, 16), rhs in proptest::collection::vec(-1.0..1.0f64, 4)) {
            let mut a = vals.clone();
            for i in 0..4 { a[i * 4 + i] += 5.0; }
            let x = solve_dense(4, &a, &rhs).unwrap();
            for i in 0..4 {
                let s: f64 = (0..4).map(|j| a[i * 4 + j] * x[j]).sum();
                prop_assert!((s - rhs[i]).abs() < 1e-12);
            }
        }
    }
}
