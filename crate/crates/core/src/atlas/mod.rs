//! Texture atlases, low-resolution views, atlas initialization and patching.

mod patches;

pub use patches::{
    extract_patches, Patch, PatchSet, PatchStatus, ViewCrop, IMAGE_CROP, PATCH_SIZE, TRAIN_STRIDE,
};

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::operators::{FlowField, SparseLinearMap, ViewChain};
use crate::raster::{Mask, Raster};

/// Default dilation radius for chart masks, in texels.
pub const DEFAULT_DILATION_RADIUS: usize = 8;

/// Single-channel high-resolution texture with its chart mask.
///
/// Texels outside the mask always hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureAtlas {
    data: Raster,
    mask: Mask,
}

impl TextureAtlas {
    pub fn new(data: Raster, mask: Mask) -> Result<Self> {
        if data.dims() != mask.dims() {
            return Err(Error::Dimension(
                "atlas data and mask differ in size".into(),
            ));
        }
        if data.width() == 0 || data.height() == 0 {
            return Err(Error::Parameter("atlas must be at least 1x1".into()));
        }
        if !data.is_finite() {
            return Err(Error::NonFinite("atlas data".into()));
        }
        let data = data.masked(&mask);
        Ok(TextureAtlas { data, mask })
    }

    /// Fully valid atlas.
    pub fn from_raster(data: Raster) -> Result<Self> {
        let mask = Mask::full(data.width(), data.height());
        Self::new(data, mask)
    }

    pub fn data(&self) -> &Raster {
        &self.data
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }

    pub fn into_parts(self) -> (Raster, Mask) {
        (self.data, self.mask)
    }
}

/// One low-resolution observation `bᵢ`.
///
/// `id` identifies the view and its image-formation chain; reductions over
/// views always run in ascending `id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub id: usize,
    pub image: Raster,
    pub visibility: Mask,
    pub flow: Option<FlowField>,
}

impl ViewObservation {
    pub fn new(
        id: usize,
        image: Raster,
        visibility: Mask,
        flow: Option<FlowField>,
    ) -> Result<Self> {
        if image.dims() != visibility.dims() {
            return Err(Error::Dimension(format!(
                "view {id}: image and visibility differ in size"
            )));
        }
        if !image.is_finite() {
            return Err(Error::NonFinite(format!("view {id} image")));
        }
        Ok(ViewObservation {
            id,
            image,
            visibility,
            flow,
        })
    }

    /// Checks that a stored flow lives on `hr_dims`.
    pub fn check_flow(&self, hr_dims: (usize, usize)) -> Result<()> {
        match &self.flow {
            Some(f) if f.dims() != hr_dims => Err(Error::Dimension(format!(
                "view {}: flow is {:?}, pre-downsample grid is {:?}",
                self.id,
                f.dims(),
                hr_dims
            ))),
            _ => Ok(()),
        }
    }
}

/// Indices of `ids` sorted ascending by value.
pub(crate) fn order_by_id(ids: impl Iterator<Item = usize>) -> Vec<usize> {
    let ids: Vec<usize> = ids.collect();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| ids[i]);
    order
}

/// Pullback from a view's low-resolution image onto the texture grid: the
/// transpose of `D·W·P` restricted to visible pixels, each row normalized to
/// unit sum. Texels the view never sees get an empty row.
pub fn build_pullback(chain: &ViewChain, visibility: &Mask) -> Result<SparseLinearMap> {
    let dwp = chain
        .downsample()
        .matmul(chain.warp())?
        .matmul(chain.projection())?;
    Ok(dwp
        .transpose()
        .retain_columns(visibility.as_slice())
        .row_normalized())
}

/// Pullback from the pre-downsample image grid onto the texture: normalized
/// transpose of `W·P`, restricted to fully covered pixels.
pub fn build_hr_pullback(chain: &ViewChain) -> Result<SparseLinearMap> {
    let wp = chain.warp().matmul(chain.projection())?;
    let covered: Vec<bool> = wp
        .row_sums()
        .iter()
        .map(|s| (s - 1.0).abs() <= 1e-6)
        .collect();
    Ok(wp.transpose().retain_columns(&covered).row_normalized())
}

/// Averages each texel over the views that see it.
///
/// Contributions are accumulated in ascending view-id order, so the result
/// does not depend on the order of `views`. Texels no view sees become zero
/// and are marked invalid.
pub fn init_atlas_average(
    views: &[ViewObservation],
    pullbacks: &[SparseLinearMap],
    tex_dims: (usize, usize),
) -> Result<TextureAtlas> {
    if views.is_empty() {
        return Err(Error::Usage(
            "atlas initialization needs at least one view".into(),
        ));
    }
    if views.len() != pullbacks.len() {
        return Err(Error::Dimension(format!(
            "{} views but {} pullback maps",
            views.len(),
            pullbacks.len()
        )));
    }
    let n = tex_dims.0 * tex_dims.1;
    let mut sum = vec![0.0; n];
    let mut count = vec![0u32; n];
    for i in order_by_id(views.iter().map(|v| v.id)) {
        let (view, map) = (&views[i], &pullbacks[i]);
        if map.rows() != n || map.cols() != view.image.len() {
            return Err(Error::Dimension(format!(
                "view {}: pullback is {}x{}, expected {}x{}",
                view.id,
                map.rows(),
                map.cols(),
                n,
                view.image.len()
            )));
        }
        let b = view.image.as_slice();
        let vis = view.visibility.as_slice();
        for t in 0..n {
            let (cs, vs) = map.row(t);
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for (&c, &w) in cs.iter().zip(vs) {
                if vis[c as usize] {
                    acc += w * b[c as usize];
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                sum[t] += acc / wsum;
                count[t] += 1;
            }
        }
    }
    let data: Vec<f64> = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mask: Vec<bool> = count.iter().map(|&c| c > 0).collect();
    TextureAtlas::new(
        Raster::from_vec(tex_dims.0, tex_dims.1, data)?,
        Mask::from_vec(tex_dims.0, tex_dims.1, mask)?,
    )
}

/// Averaged initial atlas from each view's own pullback.
pub fn initial_atlas(views: &[ViewObservation], chains: &[ViewChain]) -> Result<TextureAtlas> {
    if views.len() != chains.len() {
        return Err(Error::Dimension(format!(
            "{} views but {} chains",
            views.len(),
            chains.len()
        )));
    }
    let tex_dims = chains
        .first()
        .map(|c| c.tex_dims())
        .ok_or_else(|| Error::Usage("atlas initialization needs at least one view".into()))?;
    let pullbacks = views
        .iter()
        .zip(chains)
        .map(|(v, c)| build_pullback(c, &v.visibility))
        .collect::<Result<Vec<_>>>()?;
    init_atlas_average(views, &pullbacks, tex_dims)
}

/// Single-view baseline: bicubic upsampling of the observation to the
/// pre-downsample grid, pulled back onto the texture.
pub fn bicubic_baseline(view: &ViewObservation, chain: &ViewChain) -> Result<TextureAtlas> {
    let factor = chain.hr_dims().0 / chain.lr_dims().0;
    let up = upsample_bicubic(&view.image, factor);
    pull_back(&build_hr_pullback(chain)?, &up, chain.tex_dims())
}

/// Morphological dilation with a `(2r+1) × (2r+1)` square.
pub fn dilate_mask(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    // The square element is separable: dilate rows, then columns.
    let rows = Mask::from_fn(w, h, |x, y| {
        let lo = x.saturating_sub(radius);
        let hi = (x + radius).min(w - 1);
        (lo..=hi).any(|xx| mask.get(xx, y))
    });
    Mask::from_fn(w, h, |x, y| {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        (lo..=hi).any(|yy| rows.get(x, yy))
    })
}

/// Catmull-Rom bicubic upsampling by an integer factor, pixel-centre aligned.
pub fn upsample_bicubic(raster: &Raster, factor: usize) -> Raster {
    let (w, h) = raster.dims();
    let img: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
        w as u32,
        h as u32,
        raster.as_slice().iter().map(|&v| v as f32).collect(),
    )
    .expect("buffer sized from raster");
    let up = image::imageops::resize(
        &img,
        (w * factor) as u32,
        (h * factor) as u32,
        image::imageops::FilterType::CatmullRom,
    );
    Raster::from_vec(
        w * factor,
        h * factor,
        up.into_raw().into_iter().map(f64::from).collect(),
    )
    .expect("resized dims")
}

/// Pulls an image on the pre-downsample grid back onto the texture; texels
/// with an empty pullback row stay zero.
pub fn pull_back(
    map: &SparseLinearMap,
    image: &Raster,
    tex_dims: (usize, usize),
) -> Result<TextureAtlas> {
    let vals = map.apply(image.as_slice())?;
    let mask: Vec<bool> = (0..map.rows()).map(|r| !map.row(r).0.is_empty()).collect();
    TextureAtlas::new(
        Raster::from_vec(tex_dims.0, tex_dims.1, vals)?,
        Mask::from_vec(tex_dims.0, tex_dims.1, mask)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(id: usize, image: Raster) -> ViewObservation {
        let (w, h) = image.dims();
        ViewObservation::new(id, image, Mask::full(w, h), None).unwrap()
    }

    #[test]
    fn single_identity_view_reproduces_image() {
        let img = Raster::from_fn(5, 4, |x, y| (x * 4 + y) as f64 / 20.0);
        let atlas = init_atlas_average(
            &[view(0, img.clone())],
            &[SparseLinearMap::identity(20)],
            (5, 4),
        )
        .unwrap();
        assert_eq!(atlas.data(), &img);
        assert_eq!(atlas.mask().count(), 20);
    }

    #[test]
    fn equal_views_average_to_same_value() {
        let views: Vec<_> = (0..3).map(|i| view(i, Raster::filled(4, 4, 0.5))).collect();
        let maps = vec![SparseLinearMap::identity(16); 3];
        let atlas = init_atlas_average(&views, &maps, (4, 4)).unwrap();
        assert!(atlas.data().as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conflicting_views_take_the_mean() {
        let views = vec![
            view(0, Raster::filled(1, 1, 0.2)),
            view(1, Raster::filled(1, 1, 0.6)),
        ];
        let maps = vec![SparseLinearMap::identity(1); 2];
        let atlas = init_atlas_average(&views, &maps, (1, 1)).unwrap();
        assert!((atlas.data().get(0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn unseen_texels_are_invalid_zero() {
        // Pullback sees only texel 0 of two.
        let map = SparseLinearMap::from_rows(1, vec![vec![(0, 1.0)], vec![]]).unwrap();
        let atlas =
            init_atlas_average(&[view(0, Raster::filled(1, 1, 0.9))], &[map], (2, 1)).unwrap();
        assert_eq!(atlas.data().as_slice(), &[0.9, 0.0]);
        assert_eq!(atlas.mask().as_slice(), &[true, false]);
    }

    #[test]
    fn view_order_does_not_matter() {
        let imgs: Vec<Raster> = (0..4)
            .map(|i| {
                Raster::from_fn(3, 3, |x, y| {
                    ((x + 2 * y + i) % 5) as f64 * 0.1 + 0.013 * i as f64
                })
            })
            .collect();
        let views: Vec<_> = imgs
            .iter()
            .enumerate()
            .map(|(i, r)| view(i, r.clone()))
            .collect();
        let maps = vec![SparseLinearMap::identity(9); 4];
        let a = init_atlas_average(&views, &maps, (3, 3)).unwrap();
        let mut rev = views.clone();
        rev.reverse();
        let b = init_atlas_average(&rev, &maps, (3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_pullback_is_structural_error() {
        let err = init_atlas_average(
            &[view(0, Raster::filled(2, 2, 0.1))],
            &[SparseLinearMap::identity(3)],
            (2, 2),
        );
        assert!(matches!(err, Err(Error::Dimension(_))));
        assert!(matches!(
            init_atlas_average(&[], &[], (2, 2)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn dilation_examples() {
        let full = Mask::full(7, 7);
        assert_eq!(dilate_mask(&full, 3), full);
        let mut seed = Mask::empty(7, 7);
        seed.set(3, 3, true);
        let d = dilate_mask(&seed, 1);
        assert_eq!(d.count(), 9);
        for y in 2..=4 {
            for x in 2..=4 {
                assert!(d.get(x, y));
            }
        }
        assert_eq!(dilate_mask(&Mask::empty(5, 5), 4).count(), 0);
        assert_eq!(dilate_mask(&seed, 0), seed);
    }

    #[test]
    fn bicubic_preserves_constants() {
        let up = upsample_bicubic(&Raster::filled(6, 5, 0.25), 2);
        assert_eq!(up.dims(), (12, 10));
        assert!(up.as_slice().iter().all(|v| (v - 0.25).abs() < 1e-6));
    }
}
