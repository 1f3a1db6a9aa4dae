use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::geometry::bvh::{Bvh, ClosestPoint};
use crate::{Error, Result, Vec3};

/// Triangle mesh with a closest-point acceleration structure built at
/// construction. Immutable once built.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    bvh: Bvh,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a vertex past {}",
                    vertices.len()
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex index")));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            if (b - a).cross(&(c - a)).norm() <= 0.0 {
                return Err(Error::InvalidMesh(format!("triangle {t} has zero area")));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let bvh = Bvh::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            bvh,
        })
    }

    /// Triangulates a row-major `rows × cols` grid of points, two triangles
    /// per cell, consistently oriented.
    pub fn from_grid(points: Vec<Vec3>, rows: usize, cols: usize) -> Result<Self> {
        if points.len() != rows * cols {
            return Err(Error::mismatch("grid points", rows * cols, points.len()));
        }
        let mut triangles = Vec::with_capacity(2 * rows.saturating_sub(1) * cols.saturating_sub(1));
        for i in 0..rows.saturating_sub(1) {
            for j in 0..cols.saturating_sub(1) {
                let a = i * cols + j;
                let b = a + 1;
                let c = a + cols;
                let d = c + 1;
                triangles.push([a, c, b]);
                triangles.push([b, c, d]);
            }
        }
        Self::new(points, triangles)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn closest_point(&self, query: &Vec3) -> Result<ClosestPoint> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        Ok(self.bvh.closest_point(&self.vertices, &self.triangles, query))
    }

    /// Sorted one-ring neighbour indices per vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.vertices.len()];
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in tri {
                normals[i] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    pub fn transformed(&self, t: &crate::geometry::RigidTransform) -> Result<Self> {
        Self::new(t.apply_all(&self.vertices), self.triangles.clone())
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }

    /// Parses ASCII OBJ with `v` and triangular `f` records; everything else
    /// (normals, texture coordinates, groups, comments) is ignored.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let coords: Vec<f64> = fields
                        .take(3)
                        .map(|f| f.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::Parse(format!(
                            "line {}: vertex needs three coordinates",
                            lineno + 1
                        )));
                    }
                    vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = fields
                        .map(|f| {
                            let first = f.split('/').next().unwrap_or("");
                            let i: i64 = first
                                .parse()
                                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
                            // negative indices are relative to the current vertex count
                            let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                            usize::try_from(resolved)
                                .map_err(|_| Error::Parse(format!("line {}: bad index {i}", lineno + 1)))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(Error::Parse(format!(
                            "line {}: only triangular faces are supported",
                            lineno + 1
                        )));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        Self::new(vertices, triangles)
    }
}
