//! Compressed sparse row matrices with a fixed pattern.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// Square CSR matrix. Column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the pattern `{(i, i)} ∪ {(i, j) : j ∈ neighbors(i)}`.
    pub fn with_graph_pattern<'a>(n: usize, neighbors: impl Fn(usize) -> &'a [usize]) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            let nb = neighbors(i);
            let mut inserted = false;
            for &j in nb {
                if !inserted && j > i {
                    col_idx.push(i);
                    inserted = true;
                }
                col_idx.push(j);
            }
            if !inserted {
                col_idx.push(i);
            }
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        Self { n, row_ptr, col_idx, values }
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            assert!(i < n && j < n, "triplet ({i}, {j}) out of range for n = {n}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].binary_search(&j).ok().map(|k| r.start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` at `(i, j)`; panics if the entry is outside the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).unwrap_or_else(|| panic!("({i}, {j}) not in sparsity pattern"));
        self.values[k] += v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.position(j, i).is_some_and(|k| self.values[k] == v)))
    }

    /// `a * self + b * other`; both must share a pattern.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Self {
        assert_eq!(self.row_ptr, other.row_ptr);
        assert_eq!(self.col_idx, other.col_idx);
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        Self { n: self.n, row_ptr: self.row_ptr.clone(), col_idx: self.col_idx.clone(), values }
    }

    /// Entries as (row, col, value), row-major.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    /// Matrix Market coordinate text, `symmetric` storage (lower triangle, 1-based).
    pub fn to_matrix_market(&self, comment: &str) -> String {
        let lower: Vec<(usize, usize, f64)> = self.triplets().into_iter().filter(|&(i, j, _)| j <= i).collect();
        let mut s = String::new();
        writeln!(s, "%%MatrixMarket matrix coordinate real symmetric").unwrap();
        for line in comment.lines() {
            writeln!(s, "% {line}").unwrap();
        }
        writeln!(s, "{} {} {}", self.n, self.n, lower.len()).unwrap();
        for (i, j, v) in lower {
            writeln!(s, "{} {} {:?}", i + 1, j + 1, v).unwrap();
        }
        s
    }

    pub fn write_matrix_market(&self, path: &Path, comment: &str) -> io::Result<()> {
        std::fs::write(path, self.to_matrix_market(comment))
    }

    /// Parses symmetric or general coordinate Matrix Market text.
    pub fn from_matrix_market(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty file")?.to_ascii_lowercase();
        if !header.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(format!("unsupported header: {header}"));
        }
        let symmetric = header.contains("symmetric");
        let mut body = lines.filter(|l| !l.starts_with('%') && !l.trim().is_empty());
        let size: Vec<usize> = body
            .next()
            .ok_or("missing size line")?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| "bad size line"))
            .collect::<Result<_, _>>()?;
        if size.len() != 3 || size[0] != size[1] {
            return Err("expected square matrix size line".into());
        }
        let mut triplets = Vec::with_capacity(size[2] * 2);
        for line in body {
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 3 {
                return Err(format!("bad entry line: {line}"));
            }
            let i: usize = t[0].parse().map_err(|_| "bad row")?;
            let j: usize = t[1].parse().map_err(|_| "bad col")?;
            let v: f64 = t[2].parse().map_err(|_| "bad value")?;
            triplets.push((i - 1, j - 1, v));
            if symmetric && i != j {
                triplets.push((j - 1, i - 1, v));
            }
        }
        Ok(Self::from_triplets(size[0], &triplets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_and_products() {
        let adj = [vec![1usize], vec![0, 2], vec![1]];
        let mut a = CsrMatrix::with_graph_pattern(3, |i| &adj[i]);
        assert_eq!(a.nnz(), 7);
        a.add(0, 0, 2.0);
        a.add(0, 1, -1.0);
        a.add(1, 0, -1.0);
        a.add(1, 1, 2.0);
        a.add(1, 2, -1.0);
        a.add(2, 1, -1.0);
        a.add(2, 2, 2.0);
        assert!(a.is_symmetric());
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![1.0, 0.0, 1.0]);
        assert_eq!(a.bilinear(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = CsrMatrix::from_triplets(3, &[(0, 0, 0.1), (0, 2, -0.3), (2, 0, -0.3), (1, 1, 1.0 / 3.0), (2, 2, 7.0)]);
        let text = a.to_matrix_market("test");
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric\n% test\n3 3 4\n"));
        let b = CsrMatrix::from_matrix_market(&text).unwrap();
        assert_eq!(a, b);
    }
}
