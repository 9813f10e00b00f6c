//! Bilinear resampling operators: plane-to-image projection, flow warp,
//! and block-average downsampling.

use crate::error::{Error, Result};
use crate::operators::sparse::SparseLinearMap;
use crate::raster::Mask;

/// Fractional parts this close to an integer are snapped onto it, so that
/// exact grid hits produce a single tap instead of a spurious out-of-range one.
const SNAP: f64 = 1e-10;

/// A projective map of the plane, `(x, y) ↦ H · (x, y, 1)` dehomogenized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        let h = Homography { m };
        let det = h.det();
        if !(det.abs() > 1e-12) || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "homography is not invertible (det = {det:e})"
            )));
        }
        Ok(h)
    }

    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Homography> {
        let m = &self.m;
        let det = self.det();
        if !(det.abs() > 1e-12) {
            return Err(Error::Parameter("homography is not invertible".into()));
        }
        let c = |a: usize, b: usize, c: usize, d: usize| m[a][b] * m[c][d];
        let inv = [
            [
                (c(1, 1, 2, 2) - c(1, 2, 2, 1)) / det,
                (c(0, 2, 2, 1) - c(0, 1, 2, 2)) / det,
                (c(0, 1, 1, 2) - c(0, 2, 1, 1)) / det,
            ],
            [
                (c(1, 2, 2, 0) - c(1, 0, 2, 2)) / det,
                (c(0, 0, 2, 2) - c(0, 2, 2, 0)) / det,
                (c(0, 2, 1, 0) - c(0, 0, 1, 2)) / det,
            ],
            [
                (c(1, 0, 2, 1) - c(1, 1, 2, 0)) / det,
                (c(0, 1, 2, 0) - c(0, 0, 2, 1)) / det,
                (c(0, 0, 1, 1) - c(0, 1, 1, 0)) / det,
            ],
        ];
        Homography::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Homography {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Homography { m }
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }
}

/// How texture coordinates reach one view's high-resolution image grid.
#[derive(Debug, Clone)]
pub enum ProjectionSpec {
    /// Texture plane to image plane (synthetic scenes).
    Homography(Homography),
    /// An externally computed projection matrix (rows: image pixels, cols: texels).
    Precomputed(SparseLinearMap),
}

/// Per-pixel displacement on the pre-downsample image grid, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub const DEFAULT_MAX_MAGNITUDE: f64 = 3.0;

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn uniform(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        FlowField {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    /// Validates finiteness and the default magnitude bound.
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        Self::with_max_magnitude(width, height, dx, dy, Self::DEFAULT_MAX_MAGNITUDE)
    }

    pub fn with_max_magnitude(
        width: usize,
        height: usize,
        dx: Vec<f64>,
        dy: Vec<f64>,
        max_magnitude: f64,
    ) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::Dimension(format!(
                "flow {width}x{height} needs {} vectors",
                width * height
            )));
        }
        for (i, (a, b)) in dx.iter().zip(&dy).enumerate() {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite(format!("flow vector {i}")));
            }
            if a.hypot(*b) > max_magnitude {
                return Err(Error::Parameter(format!(
                    "flow vector {i} has magnitude {} > {max_magnitude}",
                    a.hypot(*b)
                )));
            }
        }
        Ok(FlowField {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn max_magnitude(&self) -> f64 {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Window at `(x0, y0)`; vectors outside the field read as zero.
    pub fn crop(&self, x0: isize, y0: isize, w: usize, h: usize) -> FlowField {
        let mut out = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (x0 + x as isize, y0 + y as isize);
                if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                    let (a, b) = self.get(sx as usize, sy as usize);
                    out.dx[y * w + x] = a;
                    out.dy[y * w + x] = b;
                }
            }
        }
        out
    }
}

/// Bilinear taps for sampling a `w × h` grid at `(x, y)`, pixel centres on
/// integer coordinates. `None` when any tap with nonzero weight lands outside
/// the grid or on a masked-out cell.
fn bilinear_taps(
    x: f64,
    y: f64,
    w: usize,
    h: usize,
    mask: Option<&Mask>,
) -> Option<Vec<(usize, f64)>> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < SNAP {
            r
        } else {
            v
        }
    };
    let (x, y) = (snap(x), snap(y));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let mut taps = Vec::with_capacity(4);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let weight = wx * wy;
            if weight == 0.0 {
                continue;
            }
            let (tx, ty) = (x0 + dx, y0 + dy);
            if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                return None;
            }
            let (tx, ty) = (tx as usize, ty as usize);
            if let Some(m) = mask {
                if !m.get(tx, ty) {
                    return None;
                }
            }
            taps.push((ty * w + tx, weight));
        }
    }
    Some(taps)
}

/// Projection `P`: rows are pixels of the `img_dims` grid, columns texels of
/// `tex_dims`. Each row bilinearly samples the texture at the pixel's preimage;
/// rows whose footprint leaves the texture or touches a masked texel are zero.
pub fn build_projection(
    spec: &ProjectionSpec,
    tex_dims: (usize, usize),
    img_dims: (usize, usize),
    tex_mask: Option<&Mask>,
) -> Result<SparseLinearMap> {
    let (tw, th) = tex_dims;
    let (iw, ih) = img_dims;
    if tw == 0 || th == 0 || iw == 0 || ih == 0 {
        return Err(Error::Parameter(
            "projection dims must be at least 1".into(),
        ));
    }
    if let Some(m) = tex_mask {
        if m.dims() != tex_dims {
            return Err(Error::Dimension(
                "texture mask does not match texture dims".into(),
            ));
        }
    }
    match spec {
        ProjectionSpec::Homography(h) => {
            let inv = h.inverse()?;
            let rows = (0..ih)
                .flat_map(|v| (0..iw).map(move |u| (u, v)))
                .map(|(u, v)| {
                    let (x, y) = inv.apply(u as f64, v as f64);
                    bilinear_taps(x, y, tw, th, tex_mask).unwrap_or_default()
                });
            SparseLinearMap::from_rows(tw * th, rows.collect::<Vec<_>>())
        }
        ProjectionSpec::Precomputed(map) => {
            if map.rows() != iw * ih || map.cols() != tw * th {
                return Err(Error::Dimension(format!(
                    "precomputed projection is {}x{}, expected {}x{}",
                    map.rows(),
                    map.cols(),
                    iw * ih,
                    tw * th
                )));
            }
            Ok(match tex_mask {
                Some(m) => {
                    let rows = (0..map.rows()).map(|r| {
                        let (cs, vs) = map.row(r);
                        if cs.iter().all(|&c| m.as_slice()[c as usize]) {
                            cs.iter().zip(vs).map(|(&c, &v)| (c as usize, v)).collect()
                        } else {
                            Vec::new()
                        }
                    });
                    SparseLinearMap::from_rows(map.cols(), rows.collect::<Vec<_>>())?
                }
                None => map.clone(),
            })
        }
    }
}

/// Warp `W`: pixel `x` resamples the same grid at `x + flow(x)`.
pub fn build_warp(flow: &FlowField) -> SparseLinearMap {
    let (w, h) = flow.dims();
    let rows = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (dx, dy) = flow.get(x, y);
            bilinear_taps(x as f64 + dx, y as f64 + dy, w, h, None).unwrap_or_default()
        });
    SparseLinearMap::from_rows(w * h, rows.collect::<Vec<_>>()).expect("in-range taps")
}

/// Downsampling `D`: box average over non-overlapping `factor × factor` blocks.
pub fn build_downsample(factor: usize, hr_dims: (usize, usize)) -> Result<SparseLinearMap> {
    let (w, h) = hr_dims;
    if factor == 0 {
        return Err(Error::Parameter(
            "downsampling factor must be positive".into(),
        ));
    }
    if w == 0 || h == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::Parameter(format!(
            "high-resolution dims {w}x{h} are not divisible by {factor}"
        )));
    }
    let (lw, lh) = (w / factor, h / factor);
    let weight = 1.0 / (factor * factor) as f64;
    let rows = (0..lh)
        .flat_map(|by| (0..lw).map(move |bx| (bx, by)))
        .map(|(bx, by)| {
            let mut row = Vec::with_capacity(factor * factor);
            for dy in 0..factor {
                for dx in 0..factor {
                    row.push(((by * factor + dy) * w + bx * factor + dx, weight));
                }
            }
            row
        });
    SparseLinearMap::from_rows(w * h, rows.collect::<Vec<_>>())
}
