//! Hyperspectral cubes, label rasters, synthetic scenes, patches and splits.

pub mod cube;
pub mod patch;
pub mod scene;
pub mod split;

pub use cube::{load_cube, load_labels, raster_paths, save_cube, save_labels, LabelRaster, SpectralCube};
pub use patch::{Patch, PatchSet, Sample};
pub use scene::{generate_scene, GroundTruthScene, SceneSpec, SmoothingDomain};
pub use split::{split, Split, SplitRule, SplitSpec};
