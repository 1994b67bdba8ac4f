//! Compressed sparse row matrices with a structure fixed by mesh
//! connectivity.

use std::sync::Arc;

use rayon::prelude::*;

use crate::mesh::Mesh;

/// Row offsets and sorted, unique column indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsityPattern {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub col_indices: Vec<usize>,
}

impl SparsityPattern {
    /// Two dofs couple iff their nodes share a cell. Dof index is
    /// `node * vec + component`.
    pub fn from_mesh(mesh: &Mesh, vec: usize) -> Self {
        let nn = mesh.num_nodes();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for cell in mesh.cells() {
            for &a in cell {
                neighbors[a].extend_from_slice(cell);
            }
        }
        for nb in neighbors.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
        }
        let n = nn * vec;
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        let nnz: usize = neighbors.iter().map(|nb| nb.len() * vec * vec).sum();
        let mut col_indices = Vec::with_capacity(nnz);
        for nb in &neighbors {
            for _ in 0..vec {
                for &m in nb {
                    col_indices.extend((0..vec).map(|c| m * vec + c));
                }
                row_offsets.push(col_indices.len());
            }
        }
        Self {
            n,
            row_offsets,
            col_indices,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Storage position of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        self.row(i)
            .binary_search(&j)
            .ok()
            .map(|k| self.row_offsets[i] + k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<SparsityPattern>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: Arc<SparsityPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    pub fn identity(n: usize) -> Self {
        let pattern = SparsityPattern {
            n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
        };
        Self {
            pattern: Arc::new(pattern),
            values: vec![1.0; n],
        }
    }

    /// Dense row-major input; keeps nonzeros and the full diagonal.
    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        assert_eq!(dense.len(), n * n);
        let mut row_offsets = vec![0];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = dense[i * n + j];
                if v != 0.0 || i == j {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            pattern: Arc::new(SparsityPattern {
                n,
                row_offsets,
                col_indices,
            }),
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.pattern.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.pattern.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.position(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Add `v` at `(i, j)`. Panics if the entry is outside the pattern.
    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .pattern
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[p] += v;
    }

    /// Replace row `i` by the identity row.
    pub fn set_identity_row(&mut self, i: usize) {
        let (start, end) = (self.pattern.row_offsets[i], self.pattern.row_offsets[i + 1]);
        for p in start..end {
            self.values[p] = if self.pattern.col_indices[p] == i {
                1.0
            } else {
                0.0
            };
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`, rows computed independently in parallel.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let ro = &self.pattern.row_offsets;
        let ci = &self.pattern.col_indices;
        let vals = &self.values;
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for p in ro[i]..ro[i + 1] {
                s += vals[p] * x[ci[p]];
            }
            *yi = s;
        });
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Explicit transpose. Columns come out sorted within each row.
    pub fn transpose(&self) -> CsrMatrix {
        let n = self.n();
        let ro = &self.pattern.row_offsets;
        let ci = &self.pattern.col_indices;
        let mut counts = vec![0usize; n + 1];
        for &j in ci {
            counts[j + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; ci.len()];
        let mut values = vec![0.0; ci.len()];
        for i in 0..n {
            for p in ro[i]..ro[i + 1] {
                let j = ci[p];
                let dst = next[j];
                col_indices[dst] = i;
                values[dst] = self.values[p];
                next[j] += 1;
            }
        }
        let pattern = if row_offsets == *ro && col_indices == *ci {
            Arc::clone(&self.pattern)
        } else {
            Arc::new(SparsityPattern {
                n,
                row_offsets,
                col_indices,
            })
        };
        CsrMatrix { pattern, values }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for p in self.pattern.row_offsets[i]..self.pattern.row_offsets[i + 1] {
                d[i * n + self.pattern.col_indices[p]] = self.values[p];
            }
        }
        d
    }
}
