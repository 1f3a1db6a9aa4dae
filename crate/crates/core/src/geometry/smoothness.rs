use nalgebra::{Matrix2, Vector2};

use crate::geometry::TriangleMesh;
use crate::{Error, Result, Vec3};

/// Uniform (umbrella) Laplacian `δ_i = (1/d_i) Σ_j (V_i − V_j)` per vertex.
pub fn umbrella_laplacian(mesh: &TriangleMesh) -> Result<Vec<Vec3>> {
    let verts = mesh.vertices();
    mesh.vertex_neighbors()
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            if ring.is_empty() {
                return Err(Error::IsolatedVertex(i));
            }
            let sum: Vec3 = ring.iter().map(|&j| verts[i] - verts[j]).sum();
            Ok(sum / ring.len() as f64)
        })
        .collect()
}

/// Per-vertex roughness `S_i = ‖∇‖δ_i‖‖`. The gradient of the scalar field
/// `‖δ‖` is a least-squares linear fit over the one-ring, expressed in the
/// tangent plane of the vertex normal.
pub fn laplacian_smoothness(mesh: &TriangleMesh) -> Result<Vec<f64>> {
    let verts = mesh.vertices();
    let field: Vec<f64> = umbrella_laplacian(mesh)?.iter().map(|d| d.norm()).collect();
    let normals = mesh.vertex_normals();
    let rings = mesh.vertex_neighbors();
    let out = rings
        .iter()
        .enumerate()
        .map(|(i, ring)| {
            let (t1, t2) = tangent_basis(&normals[i]);
            let mut ata = Matrix2::zeros();
            let mut atb = Vector2::zeros();
            for &j in ring {
                let d = verts[j] - verts[i];
                let x = Vector2::new(d.dot(&t1), d.dot(&t2));
                ata += x * x.transpose();
                atb += x * (field[j] - field[i]);
            }
            match ata.try_inverse() {
                Some(inv) if ata.determinant().abs() > 1e-12 * ata.norm_squared() => (inv * atb).norm(),
                // a collinear ring only constrains one direction
                _ => {
                    let eig = ata.symmetric_eigen();
                    let mut g = Vector2::zeros();
                    for k in 0..2 {
                        let lambda = eig.eigenvalues[k];
                        if lambda > 1e-12 * eig.eigenvalues.amax() {
                            let e = eig.eigenvectors.column(k);
                            g += e * (e.dot(&atb) / lambda);
                        }
                    }
                    g.norm()
                }
            }
        })
        .collect();
    Ok(out)
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let n = if n.norm() > 0.0 { n.normalize() } else { Vec3::z() };
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}
