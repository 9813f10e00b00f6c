//! Scene bundle directories.
//!
//! ```text
//! scene.cfg                 description ([scene] section)
//! gt.pfm                    true texture
//! views/view_000.pfm        low-resolution observations
//! chains/view_000.tsr1      texture-to-image projection P
//! flows/view_000.pfm        per-view flow (only when the scene has flow)
//! ```
//!
//! Blur widths, factor and grid sizes come from `scene.cfg`; each view's
//! chain is rebuilt from its projection, flow, blur and the box downsample.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ConfigFile;
use super::pfm::{read_flow_pfm, read_pfm, write_flow_pfm, write_pfm};
use super::tsr1::{read_sparse_map, write_sparse_map};
use crate::atlas::{TextureAtlas, ViewObservation};
use crate::error::{Error, Result};
use crate::operators::{build_blur, build_warp, compose_chain, SparseLinearMap, ViewChain};
use crate::synth::{GroundTruth, TextureKind};

pub const SCENE_FILE: &str = "scene.cfg";
pub const TRUTH_FILE: &str = "gt.pfm";

const SCENE_KEYS: &[&str] = &[
    "width",
    "height",
    "hr_width",
    "hr_height",
    "factor",
    "num_views",
    "sigma",
    "noise_std",
    "seed",
    "texture",
    "flow",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub tex_dims: (usize, usize),
    pub hr_dims: (usize, usize),
    pub factor: usize,
    pub num_views: usize,
    /// Blur width of each view's chain.
    pub sigmas: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub texture: TextureKind,
    pub has_flow: bool,
}

impl SceneMeta {
    fn to_config(&self) -> String {
        let sigmas: Vec<String> = self.sigmas.iter().map(|s| s.to_string()).collect();
        let mut out = String::from("[scene]\n");
        let lines = [
            ("width", self.tex_dims.0.to_string()),
            ("height", self.tex_dims.1.to_string()),
            ("hr_width", self.hr_dims.0.to_string()),
            ("hr_height", self.hr_dims.1.to_string()),
            ("factor", self.factor.to_string()),
            ("num_views", self.num_views.to_string()),
            ("sigma", sigmas.join(", ")),
            ("noise_std", self.noise_std.to_string()),
            ("seed", self.seed.to_string()),
            ("texture", self.texture.to_string()),
            ("flow", self.has_flow.to_string()),
        ];
        for (k, v) in lines {
            writeln!(out, "{k} = {v}").expect("writing to a string");
        }
        out
    }

    fn from_config(cfg: &ConfigFile) -> Result<Self> {
        cfg.check_schema(&[("scene", SCENE_KEYS)])?;
        let s = cfg.section("scene");
        let num_views: usize = s.require("num_views")?;
        let sigmas: Vec<f64> = s
            .list("sigma")?
            .ok_or_else(|| Error::Config("scene description lacks sigma".into()))?;
        if sigmas.len() != num_views {
            return Err(Error::Config(format!(
                "scene lists {} blur widths for {num_views} views",
                sigmas.len()
            )));
        }
        let meta = SceneMeta {
            tex_dims: (s.require("width")?, s.require("height")?),
            hr_dims: (s.require("hr_width")?, s.require("hr_height")?),
            factor: s.require("factor")?,
            num_views,
            sigmas,
            noise_std: s.get_or("noise_std", 0.0)?,
            seed: s.get_or("seed", 0)?,
            texture: s.get_or("texture", TextureKind::default())?,
            has_flow: s.get_or("flow", false)?,
        };
        let (hw, hh) = meta.hr_dims;
        if meta.factor == 0 || hw % meta.factor != 0 || hh % meta.factor != 0 || hw == 0 || hh == 0
        {
            return Err(Error::Config(format!(
                "image grid {hw}x{hh} is not divisible by factor {}",
                meta.factor
            )));
        }
        Ok(meta)
    }
}

#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub meta: SceneMeta,
    pub truth: TextureAtlas,
    pub views: Vec<ViewObservation>,
    pub chains: Vec<ViewChain>,
}

fn view_file(dir: &Path, sub: &str, id: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("view_{id:03}.{ext}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes every file of the bundle; existing files are overwritten.
pub fn write_bundle(dir: &Path, truth: &GroundTruth, texture: TextureKind) -> Result<()> {
    let has_flow = truth.flows.iter().any(Option::is_some);
    let meta = SceneMeta {
        tex_dims: truth.spec.tex_dims,
        hr_dims: truth.hr_dims(),
        factor: truth.spec.factor,
        num_views: truth.views.len(),
        sigmas: truth.sigmas(),
        noise_std: truth.spec.noise_std,
        seed: truth.spec.seed,
        texture,
        has_flow,
    };
    for sub in ["views", "chains"]
        .into_iter()
        .chain(has_flow.then_some("flows"))
    {
        create_dir(&dir.join(sub))?;
    }
    let scene = dir.join(SCENE_FILE);
    fs::write(&scene, meta.to_config()).map_err(|e| Error::io(&scene, e))?;
    write_pfm(&dir.join(TRUTH_FILE), truth.texture.data())?;
    for (view, chain) in truth.views.iter().zip(&truth.chains) {
        write_pfm(&view_file(dir, "views", view.id, "pfm"), &view.image)?;
        write_sparse_map(
            &view_file(dir, "chains", view.id, "tsr1"),
            chain.projection(),
        )?;
        if let Some(flow) = &view.flow {
            write_flow_pfm(&view_file(dir, "flows", view.id, "pfm"), flow)?;
        }
    }
    Ok(())
}

pub fn read_scene_meta(dir: &Path) -> Result<SceneMeta> {
    SceneMeta::from_config(&ConfigFile::load(&dir.join(SCENE_FILE))?)
}

/// Loads the bundle, keeping the first `max_views` views when given (the
/// returned description then lists only those). Visibility is recomputed
/// from each chain's coverage.
pub fn read_bundle(dir: &Path, max_views: Option<usize>) -> Result<SceneBundle> {
    let mut meta = read_scene_meta(dir)?;
    let n = match max_views {
        Some(0) => return Err(Error::Config("num_views must be at least 1".into())),
        Some(k) if k > meta.num_views => {
            return Err(Error::Config(format!(
                "{k} views requested, scene has {}",
                meta.num_views
            )))
        }
        Some(k) => k,
        None => meta.num_views,
    };
    meta.num_views = n;
    meta.sigmas.truncate(n);
    let gt_path = dir.join(TRUTH_FILE);
    let texture = read_pfm(&gt_path)?;
    if texture.dims() != meta.tex_dims {
        return Err(Error::parse(
            &gt_path,
            format!(
                "texture is {:?}, scene.cfg says {:?}",
                texture.dims(),
                meta.tex_dims
            ),
        ));
    }
    let truth = TextureAtlas::from_raster(texture)?;
    let mut views = Vec::with_capacity(n);
    let mut chains = Vec::with_capacity(n);
    let hr_n = meta.hr_dims.0 * meta.hr_dims.1;
    for id in 0..n {
        let projection = read_sparse_map(&view_file(dir, "chains", id, "tsr1"))?;
        let flow = if meta.has_flow {
            let path = view_file(dir, "flows", id, "pfm");
            let f = read_flow_pfm(&path)?;
            if f.dims() != meta.hr_dims {
                return Err(Error::parse(
                    &path,
                    format!("flow is {:?}, expected {:?}", f.dims(), meta.hr_dims),
                ));
            }
            Some(f)
        } else {
            None
        };
        let warp = flow
            .as_ref()
            .map(build_warp)
            .unwrap_or_else(|| SparseLinearMap::identity(hr_n));
        let chain = compose_chain(
            projection,
            warp,
            build_blur(meta.sigmas[id])?,
            meta.factor,
            meta.tex_dims,
            meta.hr_dims,
        )?;
        let image_path = view_file(dir, "views", id, "pfm");
        let image = read_pfm(&image_path)?;
        if image.dims() != chain.lr_dims() {
            return Err(Error::parse(
                &image_path,
                format!(
                    "view is {:?}, chain produces {:?}",
                    image.dims(),
                    chain.lr_dims()
                ),
            ));
        }
        views.push(ViewObservation::new(
            id,
            image,
            chain.coverage_visibility(),
            flow,
        )?);
        chains.push(chain);
    }
    Ok(SceneBundle {
        meta,
        truth,
        views,
        chains,
    })
}
