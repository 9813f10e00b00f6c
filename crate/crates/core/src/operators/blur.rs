//! Separable Gaussian blur with per-pixel renormalized boundaries.
//!
//! Near the raster edge the taps that fall outside are dropped and the
//! remaining ones rescaled to sum to one, so constants pass through
//! unchanged. Each 1-D pass is therefore `out[i] = Σₖ wₖ x[i+k] / Zᵢ` with
//! `Zᵢ` the in-bounds tap mass at `i`.

use crate::error::{Error, Result};
use crate::operators::sparse::SparseLinearMap;
use crate::raster::Raster;

/// Normalized, symmetric 1-D Gaussian taps plus their σ-derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    sigma: f64,
    radius: usize,
    taps: Vec<f64>,
    dtaps: Vec<f64>,
}

impl BlurKernel {
    /// Gaussian of standard deviation `sigma`, truncated at `ceil(3σ)` (at least 1).
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!(
                "blur sigma must be > 0, got {sigma}"
            )));
        }
        let radius = ((3.0 * sigma).ceil() as usize).max(1);
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let draw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .zip(&raw)
            .map(|(k, g)| g * (k * k) as f64 / (sigma * sigma * sigma))
            .collect();
        let s: f64 = raw.iter().sum();
        let ds: f64 = draw.iter().sum();
        let taps = raw.iter().map(|g| g / s).collect();
        let dtaps = raw
            .iter()
            .zip(&draw)
            .map(|(g, dg)| dg / s - g * ds / (s * s))
            .collect();
        Ok(BlurKernel {
            sigma,
            radius,
            taps,
            dtaps,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Taps indexed `0..=2r`, centre at `r`.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Blurs `raster` (rows first, then columns).
    pub fn apply(&self, raster: &Raster) -> Raster {
        let (w, h) = raster.dims();
        let mut tmp = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        self.pass_rows(raster.as_slice(), &mut tmp, w, h);
        self.pass_cols(&tmp, &mut out, w, h);
        Raster::from_vec(w, h, out).expect("same dims")
    }

    /// Transpose action of [`BlurKernel::apply`].
    pub fn apply_adjoint(&self, raster: &Raster) -> Raster {
        let (w, h) = raster.dims();
        let mut tmp = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        self.pass_cols_adjoint(raster.as_slice(), &mut tmp, w, h);
        self.pass_rows_adjoint(&tmp, &mut out, w, h);
        Raster::from_vec(w, h, out).expect("same dims")
    }

    /// Derivative of `apply(raster)` with respect to σ, with the
    /// per-pixel renormalization differentiated as well.
    pub fn sigma_derivative(&self, raster: &Raster) -> Raster {
        let (w, h) = raster.dims();
        let x = raster.as_slice();
        let mut hx = vec![0.0; w * h];
        let mut dhx = vec![0.0; w * h];
        self.pass_rows(x, &mut hx, w, h);
        self.dpass_rows(x, &hx, &mut dhx, w, h);
        // d(V H x) = V' (H x) + V (H' x)
        let mut vhx = vec![0.0; w * h];
        let mut out = vec![0.0; w * h];
        self.pass_cols(&hx, &mut vhx, w, h);
        self.dpass_cols(&hx, &vhx, &mut out, w, h);
        let mut vdhx = vec![0.0; w * h];
        self.pass_cols(&dhx, &mut vdhx, w, h);
        for (o, v) in out.iter_mut().zip(&vdhx) {
            *o += v;
        }
        Raster::from_vec(w, h, out).expect("same dims")
    }

    /// Explicit matrix of the blur on a `w × h` grid (small grids only).
    pub fn to_sparse(&self, w: usize, h: usize) -> SparseLinearMap {
        let wx = self.dense_1d(w);
        let wy = self.dense_1d(h);
        let rows = (0..h).flat_map(|y| {
            let (wx, wy) = (&wx, &wy);
            (0..w).map(move |x| {
                let mut row = Vec::new();
                for &(yy, a) in wy[y].iter() {
                    for &(xx, b) in wx[x].iter() {
                        row.push((yy * w + xx, a * b));
                    }
                }
                row
            })
        });
        SparseLinearMap::from_rows(w * h, rows.collect::<Vec<_>>()).expect("valid blur matrix")
    }

    fn dense_1d(&self, n: usize) -> Vec<Vec<(usize, f64)>> {
        (0..n)
            .map(|i| {
                let (lo, hi) = self.support(i, n);
                let z: f64 = (lo..=hi).map(|j| self.tap(j, i)).sum();
                (lo..=hi).map(|j| (j, self.tap(j, i) / z)).collect()
            })
            .collect()
    }

    #[inline]
    fn support(&self, i: usize, n: usize) -> (usize, usize) {
        (i.saturating_sub(self.radius), (i + self.radius).min(n - 1))
    }

    #[inline]
    fn tap(&self, j: usize, i: usize) -> f64 {
        self.taps[j + self.radius - i]
    }

    /// In-bounds tap mass `Zᵢ` and its σ-derivative for each position of a length-`n` line.
    fn normalizers(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut z = Vec::with_capacity(n);
        let mut dz = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = self.support(i, n);
            let ks = (lo + self.radius - i)..=(hi + self.radius - i);
            z.push(self.taps[ks.clone()].iter().sum());
            dz.push(self.dtaps[ks].iter().sum());
        }
        (z, dz)
    }

    fn pass_rows(&self, x: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, _) = self.normalizers(w);
        for y in 0..h {
            let line = &x[y * w..(y + 1) * w];
            for i in 0..w {
                let (lo, hi) = self.support(i, w);
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += self.tap(j, i) * line[j];
                }
                out[y * w + i] = acc / z[i];
            }
        }
    }

    fn pass_cols(&self, x: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, _) = self.normalizers(h);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let (lo, hi) = self.support(i, h);
            let dst = &mut out[i * w..(i + 1) * w];
            for j in lo..=hi {
                let t = self.tap(j, i) / z[i];
                let src = &x[j * w..(j + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
    }

    fn pass_rows_adjoint(&self, y: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, _) = self.normalizers(w);
        out.iter_mut().for_each(|v| *v = 0.0);
        for row in 0..h {
            let src = &y[row * w..(row + 1) * w];
            let dst = &mut out[row * w..(row + 1) * w];
            for i in 0..w {
                let (lo, hi) = self.support(i, w);
                let s = src[i] / z[i];
                for j in lo..=hi {
                    dst[j] += self.tap(j, i) * s;
                }
            }
        }
    }

    fn pass_cols_adjoint(&self, y: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, _) = self.normalizers(h);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..h {
            let (lo, hi) = self.support(i, h);
            for j in lo..=hi {
                let t = self.tap(j, i) / z[i];
                let src = &y[i * w..(i + 1) * w];
                for (d, s) in out[j * w..(j + 1) * w].iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
    }

    /// σ-derivative of one row pass given its input `x` and output `hx`.
    fn dpass_rows(&self, x: &[f64], hx: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, dz) = self.normalizers(w);
        for y in 0..h {
            let line = &x[y * w..(y + 1) * w];
            for i in 0..w {
                let (lo, hi) = self.support(i, w);
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += self.dtaps[j + self.radius - i] * line[j];
                }
                out[y * w + i] = (acc - hx[y * w + i] * dz[i]) / z[i];
            }
        }
    }

    fn dpass_cols(&self, x: &[f64], vx: &[f64], out: &mut [f64], w: usize, h: usize) {
        let (z, dz) = self.normalizers(h);
        for i in 0..h {
            let (lo, hi) = self.support(i, h);
            let dst = &mut out[i * w..(i + 1) * w];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for j in lo..=hi {
                let t = self.dtaps[j + self.radius - i];
                let src = &x[j * w..(j + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
            let vrow = &vx[i * w..(i + 1) * w];
            for (d, v) in dst.iter_mut().zip(vrow) {
                *d = (*d - v * dz[i]) / z[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_raster(seed: u64, w: usize, h: usize) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, |_, _| rng.random::<f64>())
    }

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(BlurKernel::new(0.0).is_err());
        assert!(BlurKernel::new(-1.0).is_err());
        assert!(BlurKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn taps_normalized_and_symmetric() {
        for sigma in [0.05, 0.3, 0.8, 1.0, 2.7, 5.0] {
            let k = BlurKernel::new(sigma).unwrap();
            assert_eq!(k.radius(), ((3.0 * sigma).ceil() as usize).max(1));
            let s: f64 = k.taps().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let t = k.taps();
            for i in 0..t.len() {
                assert_eq!(t[i], t[t.len() - 1 - i]);
            }
        }
    }

    #[test]
    fn tiny_sigma_is_near_delta() {
        let k = BlurKernel::new(0.04).unwrap();
        let r = Raster::filled(9, 7, 0.3);
        assert!(k.apply(&r).max_abs_diff(&r) < 1e-12);
        let x = random_raster(2, 9, 7);
        assert!(k.apply(&x).max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constants_preserved_for_any_sigma() {
        for sigma in [0.1, 0.8, 1.7, 4.0] {
            let k = BlurKernel::new(sigma).unwrap();
            let r = Raster::filled(13, 6, 0.7);
            let out = k.apply(&r);
            assert!(out.as_slice().iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn unit_sigma_center_tap() {
        // Oracle: exp(-k²/2) over k = -3..=3, normalized.
        let total: f64 = (-3..=3).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).sum();
        let k = BlurKernel::new(1.0).unwrap();
        assert_eq!(k.radius(), 3);
        assert!((k.taps()[3] - 1.0 / total).abs() < 1e-15);
    }

    #[test]
    fn adjoint_matches_explicit_transpose() {
        let k = BlurKernel::new(1.3).unwrap();
        let (w, h) = (11, 8);
        let m = k.to_sparse(w, h);
        let x = random_raster(5, w, h);
        let y = random_raster(6, w, h);
        let fwd = m.apply(x.as_slice()).unwrap();
        let adj = m.apply_adjoint(y.as_slice()).unwrap();
        let kf = k.apply(&x);
        let ka = k.apply_adjoint(&y);
        for i in 0..w * h {
            assert!((fwd[i] - kf.as_slice()[i]).abs() < 1e-13);
            assert!((adj[i] - ka.as_slice()[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn sigma_derivative_zero_on_constants() {
        let k = BlurKernel::new(1.2).unwrap();
        let d = k.sigma_derivative(&Raster::filled(10, 10, 0.4));
        assert!(d.as_slice().iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn sigma_derivative_matches_central_difference() {
        let x = random_raster(9, 17, 12);
        for sigma in [0.55, 0.9, 1.45] {
            let h = 1e-4;
            let k = BlurKernel::new(sigma).unwrap();
            let plus = BlurKernel::new(sigma + h).unwrap().apply(&x);
            let minus = BlurKernel::new(sigma - h).unwrap().apply(&x);
            let d = k.sigma_derivative(&x);
            let num: f64 = d
                .as_slice()
                .iter()
                .zip(plus.as_slice().iter().zip(minus.as_slice()))
                .map(|(a, (p, m))| (a - (p - m) / (2.0 * h)).powi(2))
                .sum::<f64>()
                .sqrt();
            let den = crate::raster::norm2(d.as_slice());
            assert!(num / den < 1e-5, "sigma {sigma}: rel err {}", num / den);
        }
    }

    #[test]
    fn sigma_derivative_at_lower_clamp_is_one_sided() {
        let x = random_raster(11, 8, 8);
        let k = BlurKernel::new(0.05).unwrap();
        let d = k.sigma_derivative(&x);
        let h = 1e-4;
        let fwd = BlurKernel::new(0.05 + h).unwrap().apply(&x);
        let base = k.apply(&x);
        for i in 0..64 {
            let fd = (fwd.as_slice()[i] - base.as_slice()[i]) / h;
            assert!(d.as_slice()[i].is_finite());
            assert!((d.as_slice()[i] - fd).abs() < 1e-8);
        }
    }
}
