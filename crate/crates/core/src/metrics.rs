//! PSNR, SSIM and SRE on masked rasters with dynamic range 1.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(x_hat: &Raster, x: &Raster, mask: &Mask) -> Result<usize> {
    if x_hat.dims() != x.dims() || mask.dims() != x.dims() {
        return Err(Error::Dimension(format!(
            "metric inputs differ in size: {:?}, {:?}, mask {:?}",
            x_hat.dims(),
            x.dims(),
            mask.dims()
        )));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::Usage("metric mask has no valid texels".into()));
    }
    Ok(n)
}

fn masked_sq_error(x_hat: &Raster, x: &Raster, mask: &Mask) -> f64 {
    x_hat
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b) * (a - b))
        .sum()
}

/// `10·log10(1 / MSE)` over valid texels; `+∞` for identical inputs.
pub fn psnr(x_hat: &Raster, x: &Raster, mask: &Mask) -> Result<f64> {
    let n = check(x_hat, x, mask)?;
    let mse = masked_sq_error(x_hat, x, mask) / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// Signal-to-reconstruction error `10·log10(μ² / (‖x̂ − x‖² / n))`, with `μ`
/// the mean of `x` over valid texels.
pub fn sre(x_hat: &Raster, x: &Raster, mask: &Mask) -> Result<f64> {
    let n = check(x_hat, x, mask)?;
    let mu = x
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|(v, _)| v)
        .sum::<f64>()
        / n as f64;
    if mu == 0.0 {
        return Err(Error::Undefined(
            "SRE needs a reference with nonzero mean".into(),
        ));
    }
    let err = masked_sq_error(x_hat, x, mask) / n as f64;
    Ok(if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (mu * mu / err).log10()
    })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Correlates `data` (w×h) with `taps ⊗ taps`, keeping only placements that
/// lie fully inside the grid.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&line[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * rows[(y + j) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean local SSIM over `11×11` Gaussian windows (σ = 1.5) that lie fully
/// inside the raster. Window weights are renormalized over valid texels and
/// windows with fewer than half their texels valid are skipped.
pub fn ssim(x_hat: &Raster, x: &Raster, mask: &Mask) -> Result<f64> {
    check(x_hat, x, mask)?;
    let (w, h) = x.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} texels, got {w}x{h}"
        )));
    }
    let g = gaussian_taps();
    let ones = [1.0; SSIM_WINDOW];
    let m: Vec<f64> = mask
        .as_slice()
        .iter()
        .map(|&b| if b { 1.0 } else { 0.0 })
        .collect();
    let a: Vec<f64> = x_hat
        .as_slice()
        .iter()
        .zip(&m)
        .map(|(v, m)| if *m > 0.0 { *v } else { 0.0 })
        .collect();
    let b: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(&m)
        .map(|(v, m)| if *m > 0.0 { *v } else { 0.0 })
        .collect();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };

    let count = filter_valid(&m, w, h, &ones);
    let wsum = filter_valid(&m, w, h, &g);
    let sa = filter_valid(&a, w, h, &g);
    let sb = filter_valid(&b, w, h, &g);
    let saa = filter_valid(&prod(&a, &a), w, h, &g);
    let sbb = filter_valid(&prod(&b, &b), w, h, &g);
    let sab = filter_valid(&prod(&a, &b), w, h, &g);

    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let min_count = (SSIM_WINDOW * SSIM_WINDOW) as f64 / 2.0;
    let mut total = 0.0;
    let mut windows = 0usize;
    for i in 0..count.len() {
        if count[i] < min_count || wsum[i] <= 0.0 {
            continue;
        }
        let z = wsum[i];
        let (mx, my) = (sa[i] / z, sb[i] / z);
        let vx = saa[i] / z - mx * mx;
        let vy = sbb[i] / z - my * my;
        let cxy = sab[i] / z - mx * my;
        total +=
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        windows += 1;
    }
    if windows == 0 {
        return Err(Error::Usage(
            "no SSIM window has enough valid texels".into(),
        ));
    }
    Ok(total / windows as f64)
}

/// Which metrics a report computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSelection {
    pub psnr: bool,
    pub ssim: bool,
    pub sre: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        MetricSelection {
            psnr: true,
            ssim: true,
            sre: true,
        }
    }
}

/// One entry of a [`MetricReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Value(f64),
    /// The metric has no value for these inputs (SRE of a zero-mean reference).
    Undefined,
    /// Not requested.
    Skipped,
}

impl MetricValue {
    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(*v),
            _ => None,
        }
    }

    fn render(&self, decimals: usize) -> String {
        match self {
            MetricValue::Value(v) if *v == f64::INFINITY => "inf".into(),
            MetricValue::Value(v) if *v == f64::NEG_INFINITY => "-inf".into(),
            MetricValue::Value(v) => format!("{v:.decimals$}"),
            MetricValue::Undefined => "undefined".into(),
            MetricValue::Skipped => "skipped".into(),
        }
    }
}

impl Serialize for MetricValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            MetricValue::Value(v) if v.is_finite() => s.serialize_f64(*v),
            other => s.serialize_str(&other.render(0)),
        }
    }
}

/// Metrics for one output, plus the number of texels they cover.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub name: String,
    pub psnr_db: MetricValue,
    pub ssim: MetricValue,
    pub sre_db: MetricValue,
    pub n_valid: usize,
    /// Metrics are always restricted to the evaluation mask.
    pub masked: bool,
}

impl MetricReport {
    pub fn evaluate(name: &str, x_hat: &Raster, x: &Raster, mask: &Mask) -> Result<Self> {
        Self::evaluate_selected(name, x_hat, x, mask, MetricSelection::default())
    }

    pub fn evaluate_selected(
        name: &str,
        x_hat: &Raster,
        x: &Raster,
        mask: &Mask,
        which: MetricSelection,
    ) -> Result<Self> {
        let n_valid = check(x_hat, x, mask)?;
        let psnr_db = if which.psnr {
            MetricValue::Value(psnr(x_hat, x, mask)?)
        } else {
            MetricValue::Skipped
        };
        let ssim = if which.ssim {
            MetricValue::Value(ssim(x_hat, x, mask)?)
        } else {
            MetricValue::Skipped
        };
        let sre_db = if !which.sre {
            MetricValue::Skipped
        } else {
            match sre(x_hat, x, mask) {
                Ok(v) => MetricValue::Value(v),
                Err(Error::Undefined(_)) => MetricValue::Undefined,
                Err(e) => return Err(e),
            }
        };
        Ok(MetricReport {
            name: name.to_string(),
            psnr_db,
            ssim,
            sre_db,
            n_valid,
            masked: true,
        })
    }

    /// `name psnr ssim sre n_valid`
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.name,
            self.psnr_db.render(4),
            self.ssim.render(6),
            self.sre_db.render(4),
            self.n_valid
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let x = Raster::from_fn(12, 12, |a, b| ((a + b) % 5) as f64 / 5.0);
        let m = Mask::full(12, 12);
        assert_eq!(psnr(&x, &x, &m).unwrap(), f64::INFINITY);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(&y, &x, &m).unwrap() - 20.0).abs() < 1e-9);
        assert!(matches!(
            psnr(&y, &x, &Mask::empty(12, 12)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn sre_worked_example() {
        let x = Raster::filled(12, 12, 0.5);
        let y = x.map(|v| v + 0.05);
        let m = Mask::full(12, 12);
        let v = sre(&y, &x, &m).unwrap();
        assert!((v - 20.0).abs() < 1e-12, "{v}");
        assert!(matches!(
            sre(&y, &Raster::zeros(12, 12), &m),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let x = Raster::from_fn(
            16,
            16,
            |a, b| if (a / 2 + b / 3) % 2 == 0 { 0.2 } else { 0.8 },
        );
        let m = Mask::full(16, 16);
        assert!((ssim(&x, &x, &m).unwrap() - 1.0).abs() < 1e-12);
        let inv = x.map(|v| 1.0 - v);
        assert!(ssim(&inv, &x, &m).unwrap() < 0.0);
        assert!(matches!(
            ssim(
                &Raster::zeros(10, 12),
                &Raster::zeros(10, 12),
                &Mask::full(10, 12)
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn report_formats() {
        let x = Raster::filled(12, 12, 0.5);
        let r = MetricReport::evaluate("mva", &x, &x, &Mask::full(12, 12)).unwrap();
        assert_eq!(r.to_line(), "mva inf 1.000000 inf 144");
        let j = r.to_json();
        assert!(j.contains("\"psnr_db\": \"inf\"") && j.contains("\"masked\": true"));

        let sel = MetricSelection {
            ssim: false,
            ..Default::default()
        };
        let y = Raster::filled(12, 12, 0.4);
        let r = MetricReport::evaluate_selected(
            "b",
            &y,
            &Raster::zeros(12, 12),
            &Mask::full(12, 12),
            sel,
        )
        .unwrap();
        assert_eq!(r.to_line(), "b 7.9588 skipped undefined 144");
    }
}
