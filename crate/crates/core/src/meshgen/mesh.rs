use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volgrid::{cross, norm, sub, Vec3};

/// Minimum triangle area accepted by the spectral pipeline.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle mesh with vertices in voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidData(format!(
                "triangle {t:?} references a vertex beyond {n}"
            )));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Signed enclosed volume; positive for closed meshes with outward normals.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i]);
                a[0] * (b[1] * c[2] - b[2] * c[1]) - a[1] * (b[0] * c[2] - b[2] * c[0])
                    + a[2] * (b[0] * c[1] - b[1] * c[0])
            })
            .sum::<f64>()
            / 6.0
    }

    /// Undirected edges `(i < j)` with the number of incident triangles,
    /// sorted by edge.
    pub fn edge_incidence(&self) -> Vec<((usize, usize), usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(i, j)| (i.min(j), i.max(j)))
            .collect();
        edges.sort_unstable();
        let mut out: Vec<((usize, usize), usize)> = Vec::new();
        for e in edges {
            match out.last_mut() {
                Some((last, count)) if *last == e => *count += 1,
                _ => out.push((e, 1)),
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.edge_incidence().len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every edge bounds one or two triangles (two everywhere if `closed`),
    /// and no triangle repeats a vertex.
    pub fn check_manifold(&self, closed: bool) -> Result<()> {
        if let Some(t) = self
            .triangles
            .iter()
            .find(|t| t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
        {
            return Err(Error::MeshNotManifold(format!("triangle {t:?} repeats a vertex")));
        }
        for (e, count) in self.edge_incidence() {
            if count > 2 || (closed && count != 2) {
                return Err(Error::MeshNotManifold(format!(
                    "edge {e:?} bounds {count} triangles"
                )));
            }
        }
        Ok(())
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            let area = self.triangle_area(t);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::DegenerateTriangle { index: t, area });
            }
        }
        Ok(())
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> TriangleMesh {
        assert_eq!(vertices.len(), self.vertices.len());
        TriangleMesh {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    /// ASCII OFF.
    pub fn to_off(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_off(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let bad = |what: &str| Error::Parse(format!("OFF: {what}"));
        if tokens.next() != Some("OFF") {
            return Err(bad("missing OFF magic"));
        }
        let mut next_num = |what: &str| -> Result<f64> {
            tokens
                .next()
                .ok_or_else(|| bad(&format!("unexpected end reading {what}")))?
                .parse::<f64>()
                .map_err(|_| bad(&format!("bad number in {what}")))
        };
        let nv = next_num("header")? as usize;
        let nf = next_num("header")? as usize;
        let _ne = next_num("header")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([next_num("vertex")?, next_num("vertex")?, next_num("vertex")?]);
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            if next_num("face")? as usize != 3 {
                return Err(bad("only triangular faces are supported"));
            }
            triangles.push([
                next_num("face")? as usize,
                next_num("face")? as usize,
                next_num("face")? as usize,
            ]);
        }
        TriangleMesh::new(vertices, triangles)
    }

    pub fn write_off(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_off())?;
        Ok(())
    }

    pub fn read_off(path: &Path) -> Result<Self> {
        TriangleMesh::from_off(&fs::read_to_string(path)?)
    }
}

/// Geodesic sphere: icosahedron subdivided `level` times, projected to the
/// sphere. `10·4^level + 2` vertices.
pub fn icosphere(level: usize, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut triangles: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let unit = |v: Vec3| {
        let n = norm(v);
        [v[0] / n, v[1] / n, v[2] / n]
    };
    for v in vertices.iter_mut() {
        *v = unit(*v);
    }
    for _ in 0..level {
        let mut midpoints = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push(unit([
                    pa[0] + pb[0],
                    pa[1] + pb[1],
                    pa[2] + pb[2],
                ]));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in vertices.iter_mut() {
        *v = [v[0] * radius, v[1] * radius, v[2] * radius];
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_orientation() {
        for level in 0..4 {
            let m = icosphere(level, 1.0);
            assert_eq!(m.vertex_count(), 10 * 4usize.pow(level as u32) + 2);
            assert_eq!(m.euler_characteristic(), 2);
            m.check_manifold(true).unwrap();
            assert!(m.signed_volume() > 0.0);
        }
        let m = icosphere(4, 1.0);
        assert_eq!(m.vertex_count(), 2562);
        assert!((m.total_area() - 4.0 * std::f64::consts::PI).abs() < 0.02);
    }

    #[test]
    fn off_round_trip() {
        let m = icosphere(1, 2.5);
        let back = TriangleMesh::from_off(&m.to_off()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn off_rejects_garbage() {
        assert!(TriangleMesh::from_off("PLY\n").is_err());
        assert!(TriangleMesh::from_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n").is_err());
        assert!(TriangleMesh::from_off("OFF\n4 1 0\n0 0 0\n").is_err());
    }

    #[test]
    fn detects_non_manifold_edges() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]]).unwrap();
        assert!(matches!(m.check_manifold(false), Err(Error::MeshNotManifold(_))));
    }
}
