//! Meshes, closest-point queries, rigid registration and surface roughness.

mod bvh;
mod icp;
mod mesh;
mod sampled;
mod smoothness;
mod transform;

pub use bvh::{closest_point_on_triangle, ClosestPoint, LEAF_SIZE};
pub use icp::{fit_rigid, icp_register, IcpResult};
pub use mesh::TriangleMesh;
pub use sampled::{grid_params, SampledSurface};
pub use smoothness::{laplacian_smoothness, umbrella_laplacian};
pub use transform::{apply_transform, RigidTransform};

use crate::{Result, Vec3};

pub fn closest_point(query: &Vec3, mesh: &TriangleMesh) -> Result<ClosestPoint> {
    mesh.closest_point(query)
}

#[cfg(test)]
mod tests;
