use std::sync::Arc;

use crate::error::{Error, Result};
use crate::operators::blur::BlurKernel;
use crate::operators::sparse::SparseLinearMap;
use crate::raster::{Mask, Raster};

/// Row sums of `W·P` within this distance of one count as fully covered.
const COVERAGE_TOL: f64 = 1e-6;

/// The image-formation chain `A = D·K·W·P` of one view, applied lazily.
///
/// `P` maps texels to the high-resolution image grid, `W` resamples that grid
/// along the flow, `K` blurs it and `D` box-averages it down to the observed
/// resolution. The sparse factors are shared, so re-parameterizing the blur
/// with [`ViewChain::with_sigma`] is cheap.
#[derive(Debug, Clone)]
pub struct ViewChain {
    tex_dims: (usize, usize),
    hr_dims: (usize, usize),
    lr_dims: (usize, usize),
    projection: Arc<SparseLinearMap>,
    warp: Arc<SparseLinearMap>,
    blur: BlurKernel,
    downsample: Arc<SparseLinearMap>,
}

impl ViewChain {
    /// Checks that `texture → HR image → HR image → LR image` dimensions agree.
    pub fn compose(
        projection: SparseLinearMap,
        warp: SparseLinearMap,
        blur: BlurKernel,
        downsample: SparseLinearMap,
        tex_dims: (usize, usize),
        hr_dims: (usize, usize),
        lr_dims: (usize, usize),
    ) -> Result<Self> {
        let tex_n = tex_dims.0 * tex_dims.1;
        let hr_n = hr_dims.0 * hr_dims.1;
        let lr_n = lr_dims.0 * lr_dims.1;
        let check = |what: &str, m: &SparseLinearMap, rows: usize, cols: usize| {
            if m.rows() != rows || m.cols() != cols {
                Err(Error::Dimension(format!(
                    "{what} is {}x{}, chain needs {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )))
            } else {
                Ok(())
            }
        };
        check("projection", &projection, hr_n, tex_n)?;
        check("warp", &warp, hr_n, hr_n)?;
        check("downsample", &downsample, lr_n, hr_n)?;
        Ok(ViewChain {
            tex_dims,
            hr_dims,
            lr_dims,
            projection: Arc::new(projection),
            warp: Arc::new(warp),
            blur,
            downsample: Arc::new(downsample),
        })
    }

    pub fn tex_dims(&self) -> (usize, usize) {
        self.tex_dims
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.hr_dims
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr_dims
    }

    pub fn projection(&self) -> &SparseLinearMap {
        &self.projection
    }

    pub fn warp(&self) -> &SparseLinearMap {
        &self.warp
    }

    pub fn downsample(&self) -> &SparseLinearMap {
        &self.downsample
    }

    pub fn blur(&self) -> &BlurKernel {
        &self.blur
    }

    pub fn sigma(&self) -> f64 {
        self.blur.sigma()
    }

    /// Same geometry, different blur width.
    pub fn with_sigma(&self, sigma: f64) -> Result<ViewChain> {
        Ok(ViewChain {
            blur: BlurKernel::new(sigma)?,
            ..self.clone()
        })
    }

    /// `W·P·t` on the high-resolution image grid.
    pub fn warped(&self, t: &Raster) -> Result<Raster> {
        t.ensure_dims(self.tex_dims, "chain input")?;
        let p = self.projection.apply(t.as_slice())?;
        let w = self.warp.apply(&p)?;
        Raster::from_vec(self.hr_dims.0, self.hr_dims.1, w)
    }

    /// `A t = D K W P t`.
    pub fn forward(&self, t: &Raster) -> Result<Raster> {
        let hr = self.warped(t)?;
        let blurred = self.blur.apply(&hr);
        let lr = self.downsample.apply(blurred.as_slice())?;
        Raster::from_vec(self.lr_dims.0, self.lr_dims.1, lr)
    }

    /// `Aᵀ q = Pᵀ Wᵀ Kᵀ Dᵀ q`.
    pub fn adjoint(&self, q: &Raster) -> Result<Raster> {
        q.ensure_dims(self.lr_dims, "chain adjoint input")?;
        let up = self.downsample.apply_adjoint(q.as_slice())?;
        let up = Raster::from_vec(self.hr_dims.0, self.hr_dims.1, up)?;
        let kt = self.blur.apply_adjoint(&up);
        let wt = self.warp.apply_adjoint(kt.as_slice())?;
        let pt = self.projection.apply_adjoint(&wt)?;
        Raster::from_vec(self.tex_dims.0, self.tex_dims.1, pt)
    }

    /// `∂(A t)/∂σ = D · ∂K/∂σ · (W P t)`.
    pub fn sigma_derivative(&self, t: &Raster) -> Result<Raster> {
        let hr = self.warped(t)?;
        self.sigma_derivative_of_warped(&hr)
    }

    /// As [`ViewChain::sigma_derivative`], given the precomputed `W P t`.
    pub fn sigma_derivative_of_warped(&self, hr: &Raster) -> Result<Raster> {
        hr.ensure_dims(self.hr_dims, "warped raster")?;
        let d = self.blur.sigma_derivative(hr);
        let lr = self.downsample.apply(d.as_slice())?;
        Raster::from_vec(self.lr_dims.0, self.lr_dims.1, lr)
    }

    /// Low-resolution pixels whose whole downsampling block is fully covered
    /// by the warped projection (row sums of `W·P` equal to one).
    pub fn coverage_visibility(&self) -> Mask {
        self.visibility_with_margin(0)
    }

    /// As [`ViewChain::coverage_visibility`], but the block is grown by
    /// `margin` pixels on every side before testing coverage. With a margin
    /// of at least the blur radius, a visible pixel never mixes in uncovered
    /// or out-of-grid samples.
    pub fn visibility_with_margin(&self, margin: usize) -> Mask {
        let (hw, hh) = self.hr_dims;
        let (lw, lh) = self.lr_dims;
        let factor = hw / lw;
        let ones = vec![1.0; self.tex_dims.0 * self.tex_dims.1];
        let p = self
            .projection
            .apply(&ones)
            .expect("dims checked at construction");
        let c = self.warp.apply(&p).expect("dims checked at construction");
        let covered: Vec<bool> = c.iter().map(|v| (v - 1.0).abs() <= COVERAGE_TOL).collect();
        let m = margin as isize;
        Mask::from_fn(lw, lh, |bx, by| {
            let (x0, y0) = ((bx * factor) as isize - m, (by * factor) as isize - m);
            let (x1, y1) = (
                ((bx + 1) * factor) as isize + m,
                ((by + 1) * factor) as isize + m,
            );
            (y0..y1).all(|y| {
                (x0..x1).all(|x| {
                    x >= 0
                        && y >= 0
                        && (x as usize) < hw
                        && (y as usize) < hh
                        && covered[y as usize * hw + x as usize]
                })
            })
        })
    }

    /// Explicit product `D·K·W·P` (small instances only).
    pub fn to_sparse(&self) -> Result<SparseLinearMap> {
        let k = self.blur.to_sparse(self.hr_dims.0, self.hr_dims.1);
        self.downsample
            .matmul(&k)?
            .matmul(&self.warp)?
            .matmul(&self.projection)
    }

    /// Estimates `‖A‖₂` by power iteration on `AᵀA`.
    pub fn operator_norm_estimate(&self, iterations: usize) -> f64 {
        let (w, h) = self.tex_dims;
        let mut x = Raster::from_fn(w, h, |i, j| 1.0 + ((i * 7 + j * 13) % 5) as f64 * 0.1);
        let mut est = 0.0;
        for _ in 0..iterations {
            let n = crate::raster::norm2(x.as_slice());
            if n == 0.0 {
                return 0.0;
            }
            x = x.map(|v| v / n);
            let y = self
                .adjoint(&self.forward(&x).expect("dims"))
                .expect("dims");
            est = crate::raster::dot(x.as_slice(), y.as_slice())
                .max(0.0)
                .sqrt();
            x = y;
        }
        est
    }
}
