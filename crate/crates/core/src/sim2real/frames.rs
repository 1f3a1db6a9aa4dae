use crate::bspline::BSplineSurface;
use crate::fk::ShapeModel;
use crate::oracle::{Actuation, MarkerFrame, Observation, RealityGap};
use crate::{Error, Result, Vec3};

/// Captured marker frames paired with the model-predicted surface for each
/// frame's actuation.
#[derive(Debug, Clone)]
pub struct TrainingFrameSet {
    pub frames: Vec<MarkerFrame>,
    pub surfaces: Vec<BSplineSurface>,
    pub marker_uvs: Vec<[f64; 2]>,
}

impl TrainingFrameSet {
    pub fn new(frames: Vec<MarkerFrame>, shapes: &dyn ShapeModel, marker_uvs: Vec<[f64; 2]>) -> Result<Self> {
        for f in &frames {
            if let Some(o) = f.observations.iter().find(|o| o.marker_id >= marker_uvs.len()) {
                return Err(Error::Invalid(format!(
                    "marker id {} outside the canonical set of {}",
                    o.marker_id,
                    marker_uvs.len()
                )));
            }
        }
        let surfaces = frames
            .iter()
            .map(|f| shapes.controls(&f.actuation))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            surfaces,
            marker_uvs,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn marker_count(&self) -> usize {
        self.marker_uvs.len()
    }

    /// Virtual markers on frame `j`'s predicted surface.
    pub fn virtual_markers(&self, j: usize) -> Result<Vec<Vec3>> {
        virtual_markers(&self.surfaces[j], &self.marker_uvs)
    }

    /// Subset holding only frames in which every marker was observed.
    pub fn complete_only(&self) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&j| self.frames[j].is_complete(self.marker_count()))
            .collect();
        Self {
            frames: keep.iter().map(|&j| self.frames[j].clone()).collect(),
            surfaces: keep.iter().map(|&j| self.surfaces[j].clone()).collect(),
            marker_uvs: self.marker_uvs.clone(),
        }
    }

    pub fn complete_count(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| f.is_complete(self.marker_count()))
            .count()
    }

    pub fn observed_count(&self) -> usize {
        self.frames.iter().map(MarkerFrame::observed_count).sum()
    }
}

pub fn virtual_markers(surface: &BSplineSurface, marker_uvs: &[[f64; 2]]) -> Result<Vec<Vec3>> {
    marker_uvs.iter().map(|uv| surface.evaluate(uv[0], uv[1])).collect()
}

/// Noise-free, complete frames whose physical markers are `gap` applied to
/// the shape model's own virtual markers. With an affine `gap` the warp
/// that explains them is exactly representable.
pub fn model_frames(
    shapes: &dyn ShapeModel,
    gap: &RealityGap,
    actuations: &[Actuation],
    marker_uvs: &[[f64; 2]],
) -> Result<Vec<MarkerFrame>> {
    actuations
        .iter()
        .map(|a| {
            let markers = virtual_markers(&shapes.controls(a)?, marker_uvs)?;
            Ok(MarkerFrame {
                actuation: *a,
                observations: markers
                    .iter()
                    .enumerate()
                    .map(|(marker_id, p)| Observation {
                        marker_id,
                        position: Some(gap.warp(p)),
                    })
                    .collect(),
            })
        })
        .collect()
}
