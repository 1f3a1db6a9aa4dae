//! Synthetic ground truth standing in for the physical system: the virtual
//! mannequin, a fixed reality gap, virtual motion capture and the actuation
//! sampling designs.

mod actuation;
mod capture;
mod gap;
mod mannequin;
mod sampling;

pub use actuation::{Actuation, CHAMBERS};
pub use capture::{
    capture_frame, capture_frames, default_marker_uvs, random_actuations, read_frames, write_frames, CaptureConfig,
    DropoutPolicy, MarkerFrame, Observation, DEFAULT_MARKERS,
};
pub use gap::{GapBump, RealityGap};
pub use mannequin::{real_surface, sim_surface, ChamberSpec, MannequinConfig, VirtualMannequin};
pub use sampling::{corner_actuations, halton, halton_actuations, radical_inverse};
