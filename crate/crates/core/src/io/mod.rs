//! File formats: float maps, 8-bit previews, sparse maps, configs and scene
//! bundles.

mod bundle;
mod config;
mod pfm;
mod png;
mod tsr1;

pub use bundle::{
    read_bundle, read_scene_meta, write_bundle, SceneBundle, SceneMeta, SCENE_FILE, TRUTH_FILE,
};
pub use config::{ConfigFile, Section};
pub use pfm::{read_flow_pfm, read_pfm, write_flow_pfm, write_pfm};
pub use png::{read_png, write_png};
pub use tsr1::{read_sparse_map, write_sparse_map};
