//! Envelope (profile) Cholesky factorization for sparse symmetric positive
//! definite systems, with a reverse Cuthill-McKee ordering to keep the
//! envelope narrow.

use std::collections::{BTreeMap, VecDeque};

/// Pivots smaller than this fraction of the original diagonal are treated as
/// a loss of positive definiteness.
const PIVOT_RTOL: f64 = 1e-13;

/// Lower triangle of a symmetric matrix, one sorted map per row holding the
/// entries with column ≤ row.
#[derive(Clone, Debug, Default, PartialEq)]
pub(crate) struct SymmetricRows {
    rows: Vec<BTreeMap<usize, f64>>,
}

impl SymmetricRows {
    pub(crate) fn new(n: usize) -> Self {
        SymmetricRows { rows: vec![BTreeMap::new(); n] }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len()
    }

    /// Adds `value` at `(i, j)`; the mirrored entry is implied.
    pub(crate) fn add(&mut self, i: usize, j: usize, value: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        *self.rows[r].entry(c).or_insert(0.0) += value;
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.rows[r].get(&c).copied().unwrap_or(0.0)
    }

    pub(crate) fn diagonal(&self, i: usize) -> f64 {
        self.get(i, i)
    }

    /// Entries `(row, col, value)` with `col ≤ row`.
    pub(crate) fn lower_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(&j, &v)| (i, j, v)))
    }

    /// Symmetric adjacency lists (off-diagonal structural nonzeros).
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for (i, j, v) in self.lower_entries() {
            if i != j && v != 0.0 {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Restricts the matrix to `keep` (in the given order).
    pub(crate) fn submatrix(&self, keep: &[usize]) -> SymmetricRows {
        let mut position = vec![usize::MAX; self.len()];
        for (p, &k) in keep.iter().enumerate() {
            position[k] = p;
        }
        let mut out = SymmetricRows::new(keep.len());
        for (i, j, v) in self.lower_entries() {
            let (pi, pj) = (position[i], position[j]);
            if pi != usize::MAX && pj != usize::MAX {
                out.add(pi, pj, v);
            }
        }
        out
    }
}

/// Reverse Cuthill-McKee ordering. Returns `order` with `order[new] = old`.
/// Ties are broken by original index so the ordering depends only on the
/// sparsity structure.
pub(crate) fn reverse_cuthill_mckee(matrix: &SymmetricRows) -> Vec<usize> {
    let adj = matrix.adjacency();
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            order.push(node);
            let mut next: Vec<usize> = adj[node].iter().copied().filter(|&m| !visited[m]).collect();
            next.sort_by_key(|&m| (degree[m], m));
            for m in next {
                visited[m] = true;
                queue.push_back(m);
            }
        }
    }
    order.reverse();
    order
}

/// Failure of the factorization at a (permuted) pivot, reported in original
/// indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct PivotFailure {
    pub original_index: usize,
}

/// `P A Pᵀ = L Lᵀ` with `L` stored row-wise over its envelope.
#[derive(Clone, Debug)]
pub(crate) struct EnvelopeCholesky {
    /// `order[new] = old`.
    order: Vec<usize>,
    /// `position[old] = new`.
    position: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    values: Vec<f64>,
}

impl EnvelopeCholesky {
    pub(crate) fn factor(matrix: &SymmetricRows) -> Result<Self, PivotFailure> {
        let order = reverse_cuthill_mckee(matrix);
        let n = order.len();
        let mut position = vec![0; n];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }

        // Envelope of the permuted lower triangle.
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j, v) in matrix.lower_entries() {
            if v == 0.0 {
                continue;
            }
            let (pi, pj) = (position[i], position[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            first[r] = first[r].min(c);
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            row_start.push(total);
            total += i - f + 1;
        }
        row_start.push(total);

        let mut values = vec![0.0; total];
        for (i, j, v) in matrix.lower_entries() {
            let (pi, pj) = (position[i], position[j]);
            let (r, c) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            values[row_start[r] + c - first[r]] += v;
        }

        let mut chol = EnvelopeCholesky { order, position, first, row_start, values };
        chol.factor_in_place()?;
        Ok(chol)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.row_start[i] + j - self.first[i]]
    }

    fn factor_in_place(&mut self) -> Result<(), PivotFailure> {
        let n = self.first.len();
        for i in 0..n {
            let fi = self.first[i];
            let base_i = self.row_start[i];
            for j in fi..i {
                let fj = self.first[j];
                let base_j = self.row_start[j];
                let k0 = fi.max(fj);
                let mut s = self.values[base_i + j - fi];
                for k in k0..j {
                    s -= self.values[base_i + k - fi] * self.values[base_j + k - fj];
                }
                self.values[base_i + j - fi] = s / self.values[base_j + j - fj];
            }
            let original = self.values[base_i + i - fi];
            let mut d = original;
            for k in fi..i {
                let l = self.values[base_i + k - fi];
                d -= l * l;
            }
            if !(d > PIVOT_RTOL * original.abs()) || !d.is_finite() {
                return Err(PivotFailure { original_index: self.order[i] });
            }
            self.values[base_i + i - fi] = d.sqrt();
        }
        Ok(())
    }

    pub(crate) fn dim(&self) -> usize {
        self.first.len()
    }

    /// In-place `L z = b` on permuted data, starting at row `from` (entries
    /// of `b` before `from` must be zero).
    fn forward_from(&self, z: &mut [f64], from: usize) {
        for i in from..self.dim() {
            let fi = self.first[i].max(from);
            let mut s = z[i];
            for k in fi..i {
                s -= self.at(i, k) * z[k];
            }
            z[i] = s / self.at(i, i);
        }
    }

    /// In-place `Lᵀ x = z` on permuted data.
    fn backward(&self, z: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let xi = z[i] / self.at(i, i);
            z[i] = xi;
            for k in self.first[i]..i {
                z[k] -= self.at(i, k) * xi;
            }
        }
    }

    /// Solves `A x = b` in original indexing.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = self.order.iter().map(|&old| rhs[old]).collect();
        self.forward_from(&mut z, 0);
        self.backward(&mut z);
        let mut out = vec![0.0; rhs.len()];
        for (new, &old) in self.order.iter().enumerate() {
            out[old] = z[new];
        }
        out
    }

    /// `(A⁻¹)_jj = ‖L⁻¹ P e_j‖²`, one triangular solve per column.
    pub(crate) fn inverse_diagonal_entry(&self, j: usize) -> f64 {
        let p = self.position[j];
        let mut z = vec![0.0; self.dim()];
        z[p] = 1.0;
        self.forward_from(&mut z, p);
        z[p..].iter().map(|v| v * v).sum()
    }

    /// Number of stored entries in the envelope of `L`.
    #[cfg(test)]
    pub(crate) fn envelope_size(&self) -> usize {
        self.values.len()
    }
}
