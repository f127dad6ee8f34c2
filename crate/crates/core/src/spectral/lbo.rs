use crate::error::Result;
use crate::meshgen::TriangleMesh;
use crate::volgrid::{cross, dot, norm, sub};

/// Symmetric sparse matrix in compressed-row form with both triangles stored
/// and column indices sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                cols.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Cotangent stiffness `W` and lumped mass `A` of a triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceOperator {
    pub stiffness: SparseMatrix,
    pub mass: Vec<f64>,
}

impl LaplaceOperator {
    pub fn vertex_count(&self) -> usize {
        self.mass.len()
    }
}

pub fn build_lbo(mesh: &TriangleMesh) -> Result<LaplaceOperator> {
    mesh.check_manifold(false)?;
    mesh.check_nondegenerate()?;
    let n = mesh.vertex_count();
    let mut mass = vec![0.0; n];
    let mut triplets = Vec::with_capacity(mesh.triangle_count() * 12);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let area = mesh.triangle_area(t);
        for c in 0..3 {
            let (i, j, k) = (tri[c], tri[(c + 1) % 3], tri[(c + 2) % 3]);
            mass[i] += area / 3.0;
            // angle at k is opposite edge (i, j)
            let (a, b) = (
                sub(mesh.vertices[i], mesh.vertices[k]),
                sub(mesh.vertices[j], mesh.vertices[k]),
            );
            let w = -0.5 * dot(a, b) / norm(cross(a, b));
            triplets.extend_from_slice(&[(i, j, w), (j, i, w), (i, i, -w), (j, j, -w)]);
        }
    }
    Ok(LaplaceOperator {
        stiffness: SparseMatrix::from_triplets(n, triplets),
        mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshgen::icosphere;

    #[test]
    fn equilateral_pair_weight() {
        let h = 3f64.sqrt() / 2.0;
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, h, 0.0], [0.5, -h, 0.0]];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [1, 0, 3]]).unwrap();
        let op = build_lbo(&m).unwrap();
        assert!((op.stiffness.get(0, 1) + 1.0 / 3f64.sqrt()).abs() < 1e-12);
        // boundary edge: a single opposite angle
        assert!((op.stiffness.get(0, 2) + 0.5 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn closed_mesh_invariants() {
        let m = icosphere(2, 1.3);
        let op = build_lbo(&m).unwrap();
        let w = &op.stiffness;
        let ones = vec![1.0; w.n];
        assert!(w.mul_vec(&ones).iter().all(|r| r.abs() < 1e-8));
        for i in 0..w.n {
            for (j, v) in w.row(i) {
                assert!((v - w.get(j, i)).abs() < 1e-10);
            }
        }
        assert!(op.mass.iter().all(|&a| a > 0.0));
        assert!((op.mass.iter().sum::<f64>() - m.total_area()).abs() < 1e-10);
    }

    #[test]
    fn triplets_sum_duplicates() {
        let s = SparseMatrix::from_triplets(2, vec![(1, 0, 2.0), (0, 0, 1.0), (1, 0, 3.0)]);
        assert_eq!(s.get(1, 0), 5.0);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.row_ptr, vec![0, 1, 2]);
    }
}
