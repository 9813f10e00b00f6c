//! Row-compressed sparse matrices with forward and transpose action.

use crate::error::{Error, Result};

/// A `rows × cols` matrix in compressed sparse row layout.
///
/// Column indices within a row are strictly increasing, which rules out
/// duplicates and keeps the serialized form canonical.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLinearMap {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseLinearMap {
    /// Builds a map from raw CSR arrays, validating every structural invariant.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 {
            return Err(Error::Dimension(format!(
                "row offsets: expected {} entries, got {}",
                rows + 1,
                row_offsets.len()
            )));
        }
        if row_offsets[0] != 0 {
            return Err(Error::Dimension("row offsets must start at 0".into()));
        }
        let nnz = row_offsets[rows];
        if col_indices.len() != nnz || values.len() != nnz {
            return Err(Error::Dimension(format!(
                "nnz mismatch: offsets say {nnz}, {} column indices, {} values",
                col_indices.len(),
                values.len()
            )));
        }
        for r in 0..rows {
            let (start, end) = (row_offsets[r], row_offsets[r + 1]);
            if end < start {
                return Err(Error::Dimension(format!("row offsets decrease at row {r}")));
            }
            let cols_in_row = &col_indices[start..end];
            for (k, &c) in cols_in_row.iter().enumerate() {
                if c as usize >= cols {
                    return Err(Error::Dimension(format!(
                        "column index {c} out of range [0, {cols}) at row {r}, entry {}",
                        start + k
                    )));
                }
                if k > 0 && cols_in_row[k - 1] >= c {
                    return Err(Error::Dimension(format!(
                        "columns not strictly increasing at row {r}, entry {}",
                        start + k
                    )));
                }
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("sparse value at entry {i}")));
        }
        Ok(SparseLinearMap {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Assembles a map row by row. Entries within a row may come in any
    /// order; duplicate columns are summed and exact zeros dropped.
    pub fn from_rows<I, R>(cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = (usize, f64)>,
    {
        let mut row_offsets = vec![0usize];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for row in rows {
            scratch.clear();
            scratch.extend(row);
            scratch.sort_by_key(|&(c, _)| c);
            let mut i = 0;
            while i < scratch.len() {
                let c = scratch[i].0;
                let mut v = 0.0;
                while i < scratch.len() && scratch[i].0 == c {
                    v += scratch[i].1;
                    i += 1;
                }
                if c >= cols {
                    return Err(Error::Dimension(format!(
                        "column index {c} out of range [0, {cols}) at row {}",
                        row_offsets.len() - 1
                    )));
                }
                if v != 0.0 {
                    col_indices.push(c as u32);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        let nrows = row_offsets.len() - 1;
        Self::from_csr(nrows, cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        SparseLinearMap {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "apply: map has {} columns, vector has length {}",
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without length checks; callers guarantee the shapes.
    pub(crate) fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut acc = 0.0;
            for k in s..e {
                acc += self.values[k] * x[self.col_indices[k] as usize];
            }
            *out = acc;
        }
    }

    /// `x = Aᵀ y`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Dimension(format!(
                "apply_adjoint: map has {} rows, vector has length {}",
                self.rows,
                y.len()
            )));
        }
        let mut x = vec![0.0; self.cols];
        self.apply_adjoint_into(y, &mut x);
        Ok(x)
    }

    /// `x = Aᵀ y`, scattering rows in ascending order so results are reproducible.
    pub(crate) fn apply_adjoint_into(&self, y: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            for k in s..e {
                x[self.col_indices[k] as usize] += self.values[k] * yr;
            }
        }
    }

    pub fn transpose(&self) -> SparseLinearMap {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_indices {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                let slot = next[c as usize];
                col_indices[slot] = r as u32;
                values[slot] = v;
                next[c as usize] += 1;
            }
        }
        SparseLinearMap {
            rows: self.cols,
            cols: self.rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &SparseLinearMap) -> Result<SparseLinearMap> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul: inner dimensions {} and {} differ",
                self.cols, rhs.rows
            )));
        }
        let mut acc = vec![0.0; rhs.cols];
        let mut touched: Vec<usize> = Vec::new();
        let mut seen = vec![false; rhs.cols];
        let rows = (0..self.rows).map(|r| {
            touched.clear();
            let (cs, vs) = self.row(r);
            for (&k, &a) in cs.iter().zip(vs) {
                let (rc, rv) = rhs.row(k as usize);
                for (&c, &b) in rc.iter().zip(rv) {
                    let c = c as usize;
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            let row: Vec<(usize, f64)> = touched
                .iter()
                .map(|&c| {
                    let v = acc[c];
                    acc[c] = 0.0;
                    seen[c] = false;
                    (c, v)
                })
                .collect();
            row
        });
        let rows: Vec<_> = rows.collect();
        Self::from_rows(rhs.cols, rows)
    }

    /// Scales each nonzero row to unit sum; all-zero rows stay zero.
    pub fn row_normalized(&self) -> SparseLinearMap {
        let mut out = self.clone();
        for r in 0..self.rows {
            let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let sum: f64 = self.values[s..e].iter().sum();
            if sum != 0.0 {
                out.values[s..e].iter_mut().for_each(|v| *v /= sum);
            }
        }
        out
    }

    /// Zeroes every column `c` with `keep[c] == false`.
    pub fn retain_columns(&self, keep: &[bool]) -> SparseLinearMap {
        let rows = (0..self.rows).map(|r| {
            let (cs, vs) = self.row(r);
            cs.iter()
                .zip(vs)
                .filter(|(&c, _)| keep[c as usize])
                .map(|(&c, &v)| (c as usize, v))
                .collect::<Vec<_>>()
        });
        Self::from_rows(self.cols, rows.collect::<Vec<_>>()).expect("subset of a valid map")
    }

    /// Dense row-major copy; only sensible for small maps in tests and diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.cols]; self.rows];
        for (r, row) in out.iter_mut().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                row[c as usize] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(
        rng: &mut ChaCha8Rng,
        rows: usize,
        cols: usize,
        per_row: usize,
    ) -> SparseLinearMap {
        let entries: Vec<Vec<(usize, f64)>> = (0..rows)
            .map(|_| {
                (0..per_row)
                    .map(|_| (rng.random_range(0..cols), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        SparseLinearMap::from_rows(cols, entries).unwrap()
    }

    #[test]
    fn identity_leaves_vector_unchanged() {
        let id = SparseLinearMap::identity(5);
        let x = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(id.apply(&x).unwrap(), x);
        assert_eq!(id.apply_adjoint(&x).unwrap(), x);
    }

    #[test]
    fn zero_vector_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_map(&mut rng, 7, 9, 3);
        assert!(a.apply(&[0.0; 9]).unwrap().iter().all(|&v| v == 0.0));
        assert!(a
            .apply_adjoint(&[0.0; 7])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn inner_product_identity_40x60() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_map(&mut rng, 40, 60, 6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&a.apply(&x).unwrap(), &y);
            let rhs = dot(&x, &a.apply_adjoint(&y).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn length_mismatch_is_structural_error() {
        let a = SparseLinearMap::identity(3);
        assert!(matches!(a.apply(&[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(matches!(
            a.apply_adjoint(&[1.0; 4]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn from_csr_rejects_bad_structure() {
        // column out of range
        assert!(SparseLinearMap::from_csr(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        // duplicate column
        assert!(SparseLinearMap::from_csr(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        // nnz mismatch
        assert!(SparseLinearMap::from_csr(1, 3, vec![0, 2], vec![1], vec![1.0]).is_err());
    }

    #[test]
    fn transpose_and_matmul_agree_with_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_map(&mut rng, 6, 5, 3);
        let b = random_map(&mut rng, 5, 4, 2);
        let ab = a.matmul(&b).unwrap().to_dense();
        let (ad, bd) = (a.to_dense(), b.to_dense());
        for i in 0..6 {
            for j in 0..4 {
                let v: f64 = (0..5).map(|k| ad[i][k] * bd[k][j]).sum();
                assert!((v - ab[i][j]).abs() < 1e-14);
            }
        }
        let at = a.transpose().to_dense();
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(at[j][i], ad[i][j]);
            }
        }
    }
}
