use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::TextureAtlas;
use crate::error::{Error, Result};
use crate::operators::BlurKernel;
use crate::raster::Raster;

/// Content generators for synthetic ground-truth textures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TextureKind {
    /// Alternating 0/1 squares of `cell` texels.
    Checker { cell: usize },
    /// Dark glyph-like strokes on a light background.
    Glyphs,
    /// Low-pass filtered white noise stretched to `[0, 1]`.
    SmoothedNoise,
    /// Glyph strokes over a smoothed-noise background.
    #[default]
    Mixed,
}

impl fmt::Display for TextureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TextureKind::Checker { cell } => write!(f, "checker:{cell}"),
            TextureKind::Glyphs => f.write_str("glyphs"),
            TextureKind::SmoothedNoise => f.write_str("smoothed-noise"),
            TextureKind::Mixed => f.write_str("mixed"),
        }
    }
}

impl FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "checker" => return Ok(TextureKind::Checker { cell: 8 }),
            "glyphs" | "text-glyphs" => return Ok(TextureKind::Glyphs),
            "smoothed-noise" => return Ok(TextureKind::SmoothedNoise),
            "mixed" => return Ok(TextureKind::Mixed),
            _ => {}
        }
        if let Some(cell) = s.strip_prefix("checker:") {
            let cell: usize = cell
                .parse()
                .map_err(|_| Error::Config(format!("bad checker cell size '{cell}'")))?;
            if cell == 0 {
                return Err(Error::Config("checker cell size must be at least 1".into()));
            }
            return Ok(TextureKind::Checker { cell });
        }
        Err(Error::Config(format!("unknown texture kind '{s}'")))
    }
}

const MIN_SIDE: usize = 16;

/// Deterministic texture with values in `[0, 1]` and a full validity mask.
pub fn gen_texture(kind: TextureKind, dims: (usize, usize), seed: u64) -> Result<TextureAtlas> {
    let (w, h) = dims;
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Parameter(format!(
            "texture {w}x{h} is smaller than {MIN_SIDE}x{MIN_SIDE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        TextureKind::Checker { cell } => {
            if cell == 0 {
                return Err(Error::Parameter(
                    "checker cell size must be at least 1".into(),
                ));
            }
            Raster::from_fn(w, h, |x, y| ((x / cell + y / cell) % 2) as f64)
        }
        TextureKind::Glyphs => {
            let mut r = Raster::filled(w, h, 0.9);
            draw_glyphs(&mut r, &mut rng, 0.1);
            r
        }
        TextureKind::SmoothedNoise => smoothed_noise(w, h, &mut rng)?,
        TextureKind::Mixed => {
            let mut r = smoothed_noise(w, h, &mut rng)?.map(|v| 0.25 + 0.5 * v);
            draw_glyphs(&mut r, &mut rng, 0.05);
            r
        }
    };
    TextureAtlas::from_raster(data)
}

fn smoothed_noise(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<Raster> {
    let white = Raster::from_fn(w, h, |_, _| rng.random::<f64>());
    let sigma = (w.min(h) as f64 / 32.0).max(1.0);
    let smooth = BlurKernel::new(sigma)?.apply(&white);
    let (lo, hi) = smooth
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = hi - lo;
    Ok(if span > 0.0 {
        smooth.map(|v| (v - lo) / span)
    } else {
        Raster::filled(w, h, 0.5)
    })
}

/// Glyph cells are laid out on a grid; each glyph joins 2 to 4 random pairs
/// of a 3×3 anchor lattice with antialiased strokes of intensity `ink`.
fn draw_glyphs(r: &mut Raster, rng: &mut ChaCha8Rng, ink: f64) {
    let (w, h) = r.dims();
    let cell_w = 10usize;
    let cell_h = 14usize;
    let half_width = 0.9;
    for gy in 0..h / cell_h {
        for gx in 0..w / cell_w {
            let (x0, y0) = ((gx * cell_w) as f64 + 1.5, (gy * cell_h) as f64 + 1.5);
            let (sx, sy) = ((cell_w - 4) as f64 / 2.0, (cell_h - 4) as f64 / 2.0);
            let anchor = |k: usize| (x0 + (k % 3) as f64 * sx, y0 + (k / 3) as f64 * sy);
            let strokes = rng.random_range(2..=4);
            for _ in 0..strokes {
                let a = rng.random_range(0..9);
                let mut b = rng.random_range(0..9);
                if b == a {
                    b = (a + 4) % 9;
                }
                let (p, q) = (anchor(a), anchor(b));
                let xs = (p.0.min(q.0) - 2.0).max(0.0) as usize
                    ..=((p.0.max(q.0) + 2.0) as usize).min(w - 1);
                for y in (p.1.min(q.1) - 2.0).max(0.0) as usize
                    ..=((p.1.max(q.1) + 2.0) as usize).min(h - 1)
                {
                    for x in xs.clone() {
                        let d = segment_distance((x as f64, y as f64), p, q);
                        let cover = (half_width + 0.5 - d).clamp(0.0, 1.0);
                        if cover > 0.0 {
                            let v = r.get(x, y);
                            r.set(x, y, v + cover * (ink - v));
                        }
                    }
                }
            }
        }
    }
}

fn segment_distance(pt: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((pt.0 - a.0) * dx + (pt.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (pt.0 - a.0 - t * dx).hypot(pt.1 - a.1 - t * dy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checker_cell_one_alternates() {
        let t = gen_texture(TextureKind::Checker { cell: 1 }, (16, 16), 0).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(t.data().get(x, y), ((x + y) % 2) as f64);
            }
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        for kind in [
            TextureKind::Glyphs,
            TextureKind::SmoothedNoise,
            TextureKind::Mixed,
        ] {
            let a = gen_texture(kind, (40, 32), 11).unwrap();
            let b = gen_texture(kind, (40, 32), 11).unwrap();
            assert_eq!(a.data(), b.data());
            assert!(a.data().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            let c = gen_texture(kind, (40, 32), 12).unwrap();
            assert_ne!(a.data(), c.data());
        }
    }

    #[test]
    fn smoothed_noise_spans_range() {
        let t = gen_texture(TextureKind::SmoothedNoise, (256, 256), 5).unwrap();
        let s = t.data().as_slice();
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= 0.1 && hi >= 0.9, "range [{lo}, {hi}]");
    }

    #[test]
    fn kind_parsing() {
        assert_eq!(
            "checker:3".parse::<TextureKind>().unwrap(),
            TextureKind::Checker { cell: 3 }
        );
        assert_eq!("mixed".parse::<TextureKind>().unwrap(), TextureKind::Mixed);
        assert!("plaid".parse::<TextureKind>().is_err());
        for k in [
            TextureKind::Checker { cell: 4 },
            TextureKind::Glyphs,
            TextureKind::SmoothedNoise,
        ] {
            assert_eq!(k.to_string().parse::<TextureKind>().unwrap(), k);
        }
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(gen_texture(TextureKind::Glyphs, (15, 32), 0).is_err());
    }
}
