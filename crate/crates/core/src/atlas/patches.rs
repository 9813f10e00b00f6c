//! Patch-based decomposition of an atlas and its views for training.
//!
//! Every texture patch is paired, per view, with a square crop of the
//! pre-downsample image grid large enough to contain the patch's
//! reprojection, and with the matching crop of the low-resolution image.
//! The image-formation chain is restricted to that crop.

use log::warn;

use super::{TextureAtlas, ViewObservation};
use crate::error::{Error, Result};
use crate::operators::{build_downsample, SparseLinearMap, ViewChain};
use crate::raster::{Mask, Raster};

/// Side of a texture patch, in texels.
pub const PATCH_SIZE: usize = 64;
/// Side of a pre-downsample image crop, in pixels.
pub const IMAGE_CROP: usize = 200;

/// Default stride for training patches (50% overlap).
pub const TRAIN_STRIDE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchStatus {
    Ok,
    /// The atlas is smaller than one patch; no patches were produced.
    AtlasTooSmall,
}

/// One view restricted to a patch.
#[derive(Debug, Clone)]
pub struct ViewCrop {
    /// Top-left corner of the crop on the pre-downsample grid (multiple of the factor).
    pub origin: (isize, isize),
    /// Chain from the texture patch to the low-resolution crop.
    pub chain: ViewChain,
    /// Low-resolution crop; pixels outside the view or not fully covered by
    /// the cropped chain are invisible.
    pub observation: ViewObservation,
}

#[derive(Debug, Clone)]
pub struct Patch {
    /// Top-left texel of the patch in the source atlas.
    pub offset: (usize, usize),
    pub texture: TextureAtlas,
    pub views: Vec<ViewCrop>,
}

#[derive(Debug, Clone)]
pub struct PatchSet {
    pub factor: usize,
    pub patches: Vec<Patch>,
    pub status: PatchStatus,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn offsets(&self) -> Vec<(usize, usize)> {
        self.patches.iter().map(|p| p.offset).collect()
    }
}

fn window_offsets(extent: usize, stride: usize) -> Vec<usize> {
    let last = extent - PATCH_SIZE;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().expect("extent >= PATCH_SIZE") != last {
        v.push(last);
    }
    v
}

/// Cuts `atlas` into `PATCH_SIZE²` windows holding at least one valid texel,
/// in row-major order of their offsets. The last window in each direction is
/// aligned to the atlas edge when the stride does not land there.
pub fn extract_patches(
    atlas: &TextureAtlas,
    views: &[ViewObservation],
    chains: &[ViewChain],
    factor: usize,
    stride: usize,
) -> Result<PatchSet> {
    if factor != 2 && factor != 4 {
        return Err(Error::Parameter(format!(
            "factor must be 2 or 4, got {factor}"
        )));
    }
    if stride == 0 {
        return Err(Error::Parameter("patch stride must be at least 1".into()));
    }
    if views.len() != chains.len() {
        return Err(Error::Dimension(format!(
            "{} views but {} chains",
            views.len(),
            chains.len()
        )));
    }
    let (w, h) = atlas.dims();
    if w < PATCH_SIZE || h < PATCH_SIZE {
        warn!("atlas {w}x{h} is smaller than one {PATCH_SIZE}x{PATCH_SIZE} patch");
        return Ok(PatchSet {
            factor,
            patches: Vec::new(),
            status: PatchStatus::AtlasTooSmall,
        });
    }
    for c in chains {
        if c.tex_dims() != (w, h) {
            return Err(Error::Dimension(
                "chain texture dims differ from atlas".into(),
            ));
        }
    }
    let mut patches = Vec::new();
    for &oy in &window_offsets(h, stride) {
        for &ox in &window_offsets(w, stride) {
            let mask = atlas
                .mask()
                .crop(ox as isize, oy as isize, PATCH_SIZE, PATCH_SIZE);
            if mask.count() == 0 {
                continue;
            }
            let data = atlas
                .data()
                .crop(ox as isize, oy as isize, PATCH_SIZE, PATCH_SIZE);
            let texture = TextureAtlas::new(data, mask)?;
            let crops = views
                .iter()
                .zip(chains)
                .map(|(v, c)| crop_view(v, c, (ox, oy), factor))
                .collect::<Result<Vec<_>>>()?;
            patches.push(Patch {
                offset: (ox, oy),
                texture,
                views: crops,
            });
        }
    }
    Ok(PatchSet {
        factor,
        patches,
        status: PatchStatus::Ok,
    })
}

/// Bounding box `(umin, vmin, umax, vmax)` of image pixels whose projection row touches the window.
fn footprint(chain: &ViewChain, offset: (usize, usize)) -> Option<(usize, usize, usize, usize)> {
    let (tw, _) = chain.tex_dims();
    let (iw, _) = chain.hr_dims();
    let p = chain.projection();
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for r in 0..p.rows() {
        let touches = p.row(r).0.iter().any(|&c| {
            let (x, y) = (c as usize % tw, c as usize / tw);
            x >= offset.0 && x < offset.0 + PATCH_SIZE && y >= offset.1 && y < offset.1 + PATCH_SIZE
        });
        if touches {
            let (u, v) = (r % iw, r / iw);
            bbox = Some(match bbox {
                None => (u, v, u, v),
                Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
            });
        }
    }
    bbox
}

fn crop_view(
    view: &ViewObservation,
    chain: &ViewChain,
    offset: (usize, usize),
    factor: usize,
) -> Result<ViewCrop> {
    let (tw, _) = chain.tex_dims();
    let (iw, ih) = chain.hr_dims();
    let s = factor as isize;
    let half = (IMAGE_CROP / 2) as isize;
    let origin = match footprint(chain, offset) {
        Some((u0, v0, u1, v1)) => {
            let cu = ((u0 + u1) / 2) as isize;
            let cv = ((v0 + v1) / 2) as isize;
            ((cu - half).div_euclid(s) * s, (cv - half).div_euclid(s) * s)
        }
        None => (0, 0),
    };
    let n = IMAGE_CROP;
    let in_image = |u: isize, v: isize| u >= 0 && v >= 0 && (u as usize) < iw && (v as usize) < ih;
    let crop_index = |full: usize| -> Option<usize> {
        let (u, v) = (
            (full % iw) as isize - origin.0,
            (full / iw) as isize - origin.1,
        );
        (u >= 0 && v >= 0 && (u as usize) < n && (v as usize) < n)
            .then(|| v as usize * n + u as usize)
    };

    // Projection rows restricted to the crop; columns remapped into the patch.
    let p = chain.projection();
    let proj_rows = (0..n * n).map(|k| {
        let (u, v) = (origin.0 + (k % n) as isize, origin.1 + (k / n) as isize);
        if !in_image(u, v) {
            return Vec::new();
        }
        let (cs, vs) = p.row(v as usize * iw + u as usize);
        let mut row = Vec::with_capacity(cs.len());
        for (&c, &val) in cs.iter().zip(vs) {
            let (x, y) = (c as usize % tw, c as usize / tw);
            if x < offset.0
                || x >= offset.0 + PATCH_SIZE
                || y < offset.1
                || y >= offset.1 + PATCH_SIZE
            {
                return Vec::new();
            }
            row.push(((y - offset.1) * PATCH_SIZE + x - offset.0, val));
        }
        row
    });
    let projection =
        SparseLinearMap::from_rows(PATCH_SIZE * PATCH_SIZE, proj_rows.collect::<Vec<_>>())?;

    // Warp rows restricted to the crop; rows sampling outside it are dropped.
    let wmap = chain.warp();
    let warp_rows = (0..n * n).map(|k| {
        let (u, v) = (origin.0 + (k % n) as isize, origin.1 + (k / n) as isize);
        if !in_image(u, v) {
            return Vec::new();
        }
        let (cs, vs) = wmap.row(v as usize * iw + u as usize);
        let mut row = Vec::with_capacity(cs.len());
        for (&c, &val) in cs.iter().zip(vs) {
            match crop_index(c as usize) {
                Some(j) => row.push((j, val)),
                None => return Vec::new(),
            }
        }
        row
    });
    let warp = SparseLinearMap::from_rows(n * n, warp_rows.collect::<Vec<_>>())?;

    let downsample = build_downsample(factor, (n, n))?;
    let lr = n / factor;
    let cropped = ViewChain::compose(
        projection,
        warp,
        chain.blur().clone(),
        downsample,
        (PATCH_SIZE, PATCH_SIZE),
        (n, n),
        (lr, lr),
    )?;

    let (lx, ly) = (origin.0 / s, origin.1 / s);
    let image: Raster = view.image.crop(lx, ly, lr, lr);
    let visibility: Mask = view
        .visibility
        .crop(lx, ly, lr, lr)
        .and(&cropped.visibility_with_margin(chain.blur().radius() + 1));
    let flow = view.flow.as_ref().map(|f| f.crop(origin.0, origin.1, n, n));
    let observation = ViewObservation::new(view.id, image.masked(&visibility), visibility, flow)?;
    Ok(ViewCrop {
        origin,
        chain: cropped,
        observation,
    })
}
