//! Volumetric lesion detection toolkit.
//!
//! The crate covers the non-neural parts of a 3D detection pipeline for CT
//! volumes: voxel-grid I/O and resampling, ellipsoid pseudo-masks derived from
//! box annotations, training-patch placement, two augmentation schemes,
//! detection losses with analytic gradients, a Retina U-Net topology planner,
//! tiled inference with stitching and two-model ensembling, and FROC
//! evaluation. A deterministic threshold detector stands in for a trained
//! network so the whole chain can be checked on synthetic phantoms.
//!
//! Voxel kernels run on rayon when the `parallel` feature is enabled (the
//! default). Every kernel that fans out also takes an [`Exec`] so callers and
//! benchmarks can force the sequential path; both paths give identical output.

pub mod annotate;
pub mod augment;
pub mod detect;
mod error;
pub mod exec;
pub mod froc;
pub mod losses;
pub mod pipeline;
pub mod sampler;
pub mod topo;
pub mod volgrid;

pub use annotate::BoxF;
pub use error::{Error, Result};
pub use exec::Exec;
pub use sampler::PatchSpec;
pub use volgrid::Volume;
