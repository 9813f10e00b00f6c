//! Synthetic scenes with exact ground truth: a textured plane seen by several
//! cameras, each rendered through the same operator chain the solver inverts.

mod texture;

pub use texture::{gen_texture, TextureKind};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::atlas::{initial_atlas, TextureAtlas, ViewObservation};
use crate::error::{Error, Result};
use crate::operators::{
    build_blur, build_projection, build_warp, compose_chain, FlowField, Homography, ProjectionSpec,
    SparseLinearMap, ViewChain,
};
use crate::raster::Raster;
use crate::solver::{run_unrolled, SolverConfig, WeightMap, DEFAULT_LAMBDA, REFERENCE_ITERS};

const MAX_OFFSET_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub tex_dims: (usize, usize),
    pub num_views: usize,
    pub factor: usize,
    /// Blur width per view; a single entry applies to every view.
    pub sigma_true: Vec<f64>,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_std: f64,
    /// Largest translation per axis, in high-resolution pixels.
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    /// Largest relative scale change across the texture caused by the
    /// projective row of the homography.
    pub max_skew: f64,
    /// Peak flow magnitude in pixels; zero disables flow.
    pub flow_amplitude: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            tex_dims: (64, 64),
            num_views: 8,
            factor: 2,
            sigma_true: vec![0.8],
            noise_std: 0.005,
            max_translation: 4.0,
            max_rotation_deg: 5.0,
            max_skew: 0.02,
            flow_amplitude: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.tex_dims;
        if self.num_views == 0 {
            return Err(Error::Parameter("a scene needs at least one view".into()));
        }
        if self.factor == 0 || w == 0 || h == 0 || w % self.factor != 0 || h % self.factor != 0 {
            return Err(Error::Parameter(format!(
                "texture {w}x{h} is not divisible by factor {}",
                self.factor
            )));
        }
        if self.sigma_true.len() != 1 && self.sigma_true.len() != self.num_views {
            return Err(Error::Parameter(format!(
                "{} blur widths for {} views",
                self.sigma_true.len(),
                self.num_views
            )));
        }
        if self.sigma_true.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("blur widths must be positive".into()));
        }
        let nonneg = [
            ("noise_std", self.noise_std),
            ("max_translation", self.max_translation),
            ("max_rotation_deg", self.max_rotation_deg),
            ("max_skew", self.max_skew),
            ("flow_amplitude", self.flow_amplitude),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.max_skew >= 0.5 {
            return Err(Error::Parameter("max_skew must be below 0.5".into()));
        }
        if self.flow_amplitude > FlowField::DEFAULT_MAX_MAGNITUDE {
            return Err(Error::Parameter(format!(
                "flow_amplitude must not exceed {} px",
                FlowField::DEFAULT_MAX_MAGNITUDE
            )));
        }
        Ok(())
    }

    pub fn sigma_of(&self, view: usize) -> f64 {
        if self.sigma_true.len() == 1 {
            self.sigma_true[0]
        } else {
            self.sigma_true[view]
        }
    }

    fn has_geometry(&self) -> bool {
        self.max_translation > 0.0 || self.max_rotation_deg > 0.0 || self.max_skew > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub spec: SceneSpec,
    pub texture: TextureAtlas,
    /// Texture-to-image homography of each view.
    pub homographies: Vec<Homography>,
    pub flows: Vec<Option<FlowField>>,
    pub chains: Vec<ViewChain>,
    /// Noise-free renderings.
    pub clean: Vec<Raster>,
    /// Noisy renderings with their visibility masks; ids are `0..N`.
    pub views: Vec<ViewObservation>,
}

impl GroundTruth {
    pub fn hr_dims(&self) -> (usize, usize) {
        self.chains[0].hr_dims()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.chains.iter().map(|c| c.sigma()).collect()
    }
}

/// Homography about the texture centre `c`: `x ↦ c + R·(x − c) + t`, with a
/// small projective row.
fn sample_local_homography(
    spec: &SceneSpec,
    rng: &mut ChaCha8Rng,
    t: (f64, f64),
) -> Result<Homography> {
    let (w, h) = spec.tex_dims;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = if spec.max_rotation_deg > 0.0 {
        rng.random_range(-spec.max_rotation_deg..=spec.max_rotation_deg)
            .to_radians()
    } else {
        0.0
    };
    let (g0, g1) = if spec.max_skew > 0.0 {
        let g = spec.max_skew / (w.max(h) as f64);
        (rng.random_range(-g..=g), rng.random_range(-g..=g))
    } else {
        (0.0, 0.0)
    };
    let (c, s) = (theta.cos(), theta.sin());
    let to_origin = Homography::translation(-cx, -cy);
    // projective row about the centre keeps the centre fixed
    let persp = Homography::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [g0, g1, 1.0]])?;
    let rot = Homography::new([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])?;
    let back = Homography::translation(cx + t.0, cy + t.1);
    Ok(back.compose(&rot.compose(&persp.compose(&to_origin))))
}

fn frac(v: f64) -> f64 {
    v - v.floor()
}

fn toroidal_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let d = |x: f64, y: f64| {
        let d = (x - y).abs() % 1.0;
        d.min(1.0 - d)
    };
    d(a.0, b.0).hypot(d(a.1, b.1))
}

/// Samples one homography per view; with a nonzero translation range the
/// sub-pixel phases `frac(t / s)` are kept pairwise at least `1/(4N)` apart.
fn sample_geometry(spec: &SceneSpec) -> Result<Vec<Homography>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_views;
    let min_dist = 1.0 / (4.0 * n as f64);
    let s = spec.factor as f64;
    let mut phases: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for view in 0..n {
        let mut attempt = 0;
        let t = loop {
            let t = if spec.max_translation > 0.0 {
                let m = spec.max_translation;
                (rng.random_range(-m..=m), rng.random_range(-m..=m))
            } else {
                (0.0, 0.0)
            };
            let phase = (frac(t.0 / s), frac(t.1 / s));
            if spec.max_translation == 0.0
                || phases
                    .iter()
                    .all(|&p| toroidal_distance(p, phase) >= min_dist)
            {
                phases.push(phase);
                break t;
            }
            attempt += 1;
            if attempt >= MAX_OFFSET_ATTEMPTS {
                return Err(Error::Parameter(format!(
                    "could not place view {view} with a distinct sub-pixel offset"
                )));
            }
        };
        out.push(sample_local_homography(spec, &mut rng, t)?);
    }
    Ok(out)
}

/// Smallest margin (multiple of the factor) around the texture so that every
/// view sees the whole plane, including blur and flow reach.
fn scene_margin(spec: &SceneSpec, local: &[Homography]) -> Result<usize> {
    if !spec.has_geometry() && spec.flow_amplitude == 0.0 {
        return Ok(0);
    }
    let (w, h) = spec.tex_dims;
    let (xm, ym) = ((w - 1) as f64, (h - 1) as f64);
    let mut reach: f64 = 0.0;
    for hmg in local {
        for (x, y) in [(0.0, 0.0), (xm, 0.0), (0.0, ym), (xm, ym)] {
            let (u, v) = hmg.apply(x, y);
            if !(u.is_finite() && v.is_finite()) {
                return Err(Error::Parameter("degenerate view homography".into()));
            }
            reach = reach.max(-u).max(-v).max(u - xm).max(v - ym);
        }
    }
    let radius = (0..spec.num_views)
        .map(|i| build_blur(spec.sigma_of(i)).map(|k| k.radius()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    let need = reach.max(0.0).ceil() as usize + spec.flow_amplitude.ceil() as usize + radius + 2;
    Ok(need.div_ceil(spec.factor) * spec.factor)
}

/// Band-limited displacement: a few low-frequency sinusoids per component,
/// rescaled so the largest vector has length `amplitude`.
fn sample_flow(dims: (usize, usize), amplitude: f64, seed: u64) -> Result<FlowField> {
    let (w, h) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut component = || {
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..1.0),
                    rng.random_range(-2.0..=2.0),
                    rng.random_range(-2.0..=2.0),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = waves
                    .iter()
                    .map(|&(a, fx, fy, ph)| {
                        a * (std::f64::consts::TAU
                            * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                            + ph)
                            .sin()
                    })
                    .sum();
            }
        }
        v
    };
    let mut dx = component();
    let mut dy = component();
    let peak = dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| a.hypot(*b))
        .fold(0.0, f64::max);
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    for v in dx.iter_mut().chain(dy.iter_mut()) {
        *v *= scale;
    }
    FlowField::with_max_magnitude(w, h, dx, dy, amplitude * (1.0 + 1e-12))
}

/// Renders every view of `spec` from the texture `truth`.
///
/// Noise for view `i` is drawn from a generator seeded with `seed + i`, so
/// views can be rendered in parallel and in any order.
pub fn render_views(truth: &TextureAtlas, spec: &SceneSpec) -> Result<GroundTruth> {
    spec.validate()?;
    if truth.dims() != spec.tex_dims {
        return Err(Error::Dimension(format!(
            "texture is {:?}, scene expects {:?}",
            truth.dims(),
            spec.tex_dims
        )));
    }
    let local = sample_geometry(spec)?;
    let margin = scene_margin(spec, &local)? as f64;
    let shift = Homography::translation(margin, margin);
    let homographies: Vec<Homography> = local.iter().map(|h| shift.compose(h)).collect();
    let (w, h) = spec.tex_dims;
    let hr_dims = (w + 2 * margin as usize, h + 2 * margin as usize);

    type Rendered = (Option<FlowField>, ViewChain, Raster, ViewObservation);
    let rendered: Vec<Rendered> = (0..spec.num_views)
        .into_par_iter()
        .map(|i| -> Result<Rendered> {
            let view_seed = spec.seed.wrapping_add(i as u64);
            let p = build_projection(
                &ProjectionSpec::Homography(homographies[i]),
                spec.tex_dims,
                hr_dims,
                None,
            )?;
            let flow = if spec.flow_amplitude > 0.0 {
                Some(sample_flow(hr_dims, spec.flow_amplitude, view_seed)?)
            } else {
                None
            };
            let warp = match &flow {
                Some(f) => build_warp(f),
                None => SparseLinearMap::identity(hr_dims.0 * hr_dims.1),
            };
            let chain = compose_chain(
                p,
                warp,
                build_blur(spec.sigma_of(i))?,
                spec.factor,
                spec.tex_dims,
                hr_dims,
            )?;
            let clean = chain.forward(truth.data())?;
            let noisy = if spec.noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(view_seed);
                rng.set_stream(2);
                let normal = Normal::new(0.0, spec.noise_std)
                    .map_err(|e| Error::Parameter(e.to_string()))?;
                let mut noisy = clean.clone();
                for v in noisy.as_mut_slice() {
                    *v += normal.sample(&mut rng);
                }
                noisy
            } else {
                clean.clone()
            };
            let obs = ViewObservation::new(i, noisy, chain.coverage_visibility(), flow.clone())?;
            Ok((flow, chain, clean, obs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut flows = Vec::with_capacity(spec.num_views);
    let mut chains = Vec::with_capacity(spec.num_views);
    let mut clean = Vec::with_capacity(spec.num_views);
    let mut views = Vec::with_capacity(spec.num_views);
    for (f, c, b, v) in rendered {
        flows.push(f);
        chains.push(c);
        clean.push(b);
        views.push(v);
    }
    Ok(GroundTruth {
        spec: spec.clone(),
        texture: truth.clone(),
        homographies,
        flows,
        chains,
        clean,
        views,
    })
}

/// Reference-depth MVA solve at ×2 from all views, starting from the averaged
/// atlas with λ ≡ [`DEFAULT_LAMBDA`]. Texels no view sees stay invalid.
pub fn make_pseudo_gt(
    views: &[ViewObservation],
    chains: &[ViewChain],
    factor: usize,
) -> Result<TextureAtlas> {
    if factor != 2 {
        return Err(Error::Parameter(format!(
            "pseudo ground truth is built at x2, got x{factor}"
        )));
    }
    for c in chains {
        if c.hr_dims().0 != c.lr_dims().0 * factor {
            return Err(Error::Dimension(format!(
                "chain downsamples {:?} to {:?}, not by {factor}",
                c.hr_dims(),
                c.lr_dims()
            )));
        }
    }
    let init = initial_atlas(views, chains)?;
    let (w, h) = init.dims();
    let lambda = WeightMap::constant(w, h, DEFAULT_LAMBDA)?;
    let out = run_unrolled(
        init.data(),
        views,
        chains,
        &lambda,
        None,
        &SolverConfig::with_iters(REFERENCE_ITERS),
    )?;
    TextureAtlas::new(out.t, init.mask().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_scene_reproduces_texture() {
        let truth = gen_texture(TextureKind::Mixed, (24, 20), 3).unwrap();
        let spec = SceneSpec {
            tex_dims: (24, 20),
            num_views: 1,
            factor: 1,
            sigma_true: vec![0.05],
            noise_std: 0.0,
            max_translation: 0.0,
            max_rotation_deg: 0.0,
            max_skew: 0.0,
            ..Default::default()
        };
        let gt = render_views(&truth, &spec).unwrap();
        assert_eq!(gt.views[0].image.dims(), (24, 20));
        assert!(gt.views[0].image.max_abs_diff(truth.data()) < 1e-12);
        assert_eq!(gt.views[0].visibility.count(), 24 * 20);
    }

    #[test]
    fn clean_images_match_forward_and_noise_free_data() {
        let truth = gen_texture(TextureKind::Glyphs, (32, 32), 1).unwrap();
        let spec = SceneSpec {
            tex_dims: (32, 32),
            num_views: 3,
            noise_std: 0.0,
            flow_amplitude: 0.7,
            ..Default::default()
        };
        let gt = render_views(&truth, &spec).unwrap();
        for (i, c) in gt.chains.iter().enumerate() {
            assert_eq!(c.forward(truth.data()).unwrap(), gt.clean[i]);
            assert_eq!(gt.views[i].image, gt.clean[i]);
            assert!(gt.flows[i].is_some());
        }
    }

    #[test]
    fn whole_texture_is_visible_and_offsets_are_diverse() {
        let truth = gen_texture(TextureKind::Mixed, (32, 32), 1).unwrap();
        let spec = SceneSpec {
            tex_dims: (32, 32),
            num_views: 6,
            seed: 9,
            ..Default::default()
        };
        let gt = render_views(&truth, &spec).unwrap();
        let init = initial_atlas(&gt.views, &gt.chains).unwrap();
        assert_eq!(init.mask().count(), 32 * 32);
        let c = (15.5, 15.5);
        let phases: Vec<(f64, f64)> = gt
            .homographies
            .iter()
            .map(|h| {
                let (u, v) = h.apply(c.0, c.1);
                (frac((u - c.0) / 2.0), frac((v - c.1) / 2.0))
            })
            .collect();
        for i in 0..phases.len() {
            for j in 0..i {
                assert!(toroidal_distance(phases[i], phases[j]) >= 1.0 / 24.0 - 1e-9);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let truth = gen_texture(TextureKind::SmoothedNoise, (32, 32), 2).unwrap();
        let spec = SceneSpec {
            tex_dims: (32, 32),
            num_views: 4,
            flow_amplitude: 0.5,
            seed: 77,
            ..Default::default()
        };
        let a = render_views(&truth, &spec).unwrap();
        let b = render_views(&truth, &spec).unwrap();
        for i in 0..4 {
            assert_eq!(a.views[i].image, b.views[i].image);
            assert_eq!(a.homographies[i], b.homographies[i]);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let truth = gen_texture(TextureKind::Glyphs, (30, 30), 0).unwrap();
        let bad = SceneSpec {
            tex_dims: (30, 30),
            factor: 4,
            ..Default::default()
        };
        assert!(matches!(
            render_views(&truth, &bad),
            Err(Error::Parameter(_))
        ));
        let bad = SceneSpec {
            tex_dims: (30, 30),
            num_views: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
