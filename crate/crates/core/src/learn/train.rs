use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    adam_step, backprop_through_solver, loss, loss_gradients, AdamState, LearnableParams,
    LossTerms, TrainConfig,
};
use crate::atlas::{extract_patches, initial_atlas, PatchStatus, TextureAtlas, ViewObservation};
use crate::error::{Error, Result};
use crate::operators::ViewChain;
use crate::raster::{Mask, Raster};
use crate::solver::{run_unrolled, SolverConfig, WeightMap};

/// One training example: a texture window with its cropped views.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    /// Position of the window on the λ grid.
    pub offset: (usize, usize),
    pub truth: Raster,
    /// Starting texture for the solver (zero outside `mask`).
    pub init: Raster,
    /// Texels that are valid in the truth and seen by at least one view.
    pub mask: Mask,
    pub views: Vec<ViewObservation>,
    pub chains: Vec<ViewChain>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// Size of the λ grid the samples index into.
    pub tex_dims: (usize, usize),
    /// Reference blur widths, one per view.
    pub sigma0: Vec<f64>,
    pub samples: Vec<TrainingSample>,
}

impl TrainingSet {
    /// Cuts a scene into patches. The solver starts each patch from the crop
    /// of the scene's averaged initial atlas.
    pub fn from_scene(
        truth: &TextureAtlas,
        views: &[ViewObservation],
        chains: &[ViewChain],
        sigma0: &[f64],
        factor: usize,
        stride: usize,
    ) -> Result<Self> {
        if sigma0.len() != views.len() {
            return Err(Error::Dimension(format!(
                "{} reference blur widths for {} views",
                sigma0.len(),
                views.len()
            )));
        }
        let init = initial_atlas(views, chains)?;
        if init.dims() != truth.dims() {
            return Err(Error::Dimension(
                "truth and views disagree on the texture grid".into(),
            ));
        }
        let patches = extract_patches(&init, views, chains, factor, stride)?;
        if patches.status == PatchStatus::AtlasTooSmall {
            return Err(Error::Usage(
                "atlas is smaller than one training patch".into(),
            ));
        }
        let samples = patches
            .patches
            .into_iter()
            .map(|p| {
                let (w, h) = p.texture.dims();
                let (ox, oy) = (p.offset.0 as isize, p.offset.1 as isize);
                let (init, init_mask) = p.texture.into_parts();
                let mask = truth.mask().crop(ox, oy, w, h).and(&init_mask);
                TrainingSample {
                    offset: p.offset,
                    truth: truth.data().crop(ox, oy, w, h),
                    init,
                    mask,
                    views: p.views.iter().map(|c| c.observation.clone()).collect(),
                    chains: p.views.into_iter().map(|c| c.chain).collect(),
                }
            })
            .collect();
        Ok(TrainingSet {
            tex_dims: truth.dims(),
            sigma0: sigma0.to_vec(),
            samples,
        })
    }

    /// A single sample covering a whole scene.
    pub fn whole_scene(
        truth: &TextureAtlas,
        views: &[ViewObservation],
        chains: &[ViewChain],
        sigma0: &[f64],
    ) -> Result<Self> {
        let init = initial_atlas(views, chains)?;
        let mask = truth.mask().and(init.mask());
        Ok(TrainingSet {
            tex_dims: truth.dims(),
            sigma0: sigma0.to_vec(),
            samples: vec![TrainingSample {
                offset: (0, 0),
                truth: truth.data().clone(),
                init: init.data().clone(),
                mask,
                views: views.to_vec(),
                chains: chains.to_vec(),
            }],
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
    }

    fn check_params(&self, params: &LearnableParams) -> Result<()> {
        if params.tex_dims() != self.tex_dims || params.num_views() != self.sigma0.len() {
            return Err(Error::Dimension(format!(
                "parameters are for a {:?} grid with {} views, training set has {:?} with {}",
                params.tex_dims(),
                params.num_views(),
                self.tex_dims,
                self.sigma0.len()
            )));
        }
        Ok(())
    }
}

/// Texture after the solver and after the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Solver output restricted to the mask.
    pub mva: Raster,
    pub refined: Raster,
}

/// Solver followed by the prior network; texels outside `mask` are zero in both outputs.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    params: &LearnableParams,
    init: &Raster,
    mask: &Mask,
    views: &[ViewObservation],
    chains: &[ViewChain],
    lambda: &WeightMap,
    sigmas: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<PipelineOutput> {
    let out = run_unrolled(init, views, chains, lambda, sigmas, cfg)?;
    let mva = out.t.masked(mask);
    let refined = params.prior.forward(&mva, Some(mask))?;
    if !refined.is_finite() {
        return Err(Error::NonFinite("prior network output".into()));
    }
    Ok(PipelineOutput { mva, refined })
}

/// Loss of one sample and the gradient with respect to every parameter, in
/// [`LearnableParams::to_vec`] order.
pub fn sample_gradients(
    params: &LearnableParams,
    set: &TrainingSet,
    sample: &TrainingSample,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<f64>)> {
    let (w, h) = sample.init.dims();
    let (ox, oy) = sample.offset;
    let lambda_full = params.lambda();
    let lambda = WeightMap::new(lambda_full.raster().crop(ox as isize, oy as isize, w, h))?;
    let sigmas = params.sigmas();
    let solver_cfg = SolverConfig {
        record_states: true,
        ..cfg.solver
    };
    let out = run_unrolled(
        &sample.init,
        &sample.views,
        &sample.chains,
        &lambda,
        Some(&sigmas),
        &solver_cfg,
    )?;
    let mva = out.t.masked(&sample.mask);
    let (t_hat, cache) = params.prior.forward_cached(&mva, Some(&sample.mask))?;
    if !t_hat.is_finite() {
        return Err(Error::NonFinite("prior network output".into()));
    }
    let terms = loss(
        &t_hat,
        &sample.truth,
        &sample.mask,
        &sigmas,
        &set.sigma0,
        cfg.alpha,
    )?;
    let (g_hat, g_sigma_reg) = loss_gradients(
        &t_hat,
        &sample.truth,
        &sample.mask,
        &sigmas,
        &set.sigma0,
        cfg.alpha,
    );
    let (g_prior, g_mva) = params.prior.backward(&cache, &g_hat)?;
    let g_solver_out = g_mva.masked(&sample.mask);
    let g_solver = backprop_through_solver(out.trace.as_ref(), &g_solver_out)?;

    let mut grads = vec![0.0; params.len()];
    let (tw, _) = params.tex_dims();
    let raw = params.lambda_raw.as_slice();
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = (ox + x, oy + y);
            if gx < tw && gy < params.tex_dims().1 {
                let i = gy * tw + gx;
                grads[i] += g_solver.lambda.get(x, y) * super::sigmoid(raw[i]);
            }
        }
    }
    let nl = params.lambda_raw.len();
    for (k, jac) in params.sigma_jacobian().into_iter().enumerate() {
        grads[nl + k] = (g_solver.sigmas[k] + g_sigma_reg[k]) * jac;
    }
    grads[nl + params.num_views()..].copy_from_slice(&g_prior);
    Ok((terms, grads))
}

/// Loss of one sample together with the pattern of every nonsmooth choice
/// made along the way: saturated duals, ReLU signs and residual signs. Two
/// parameter values with equal patterns lie on the same smooth piece.
pub fn sample_loss_with_pattern(
    params: &LearnableParams,
    set: &TrainingSet,
    sample: &TrainingSample,
    cfg: &TrainConfig,
) -> Result<(LossTerms, Vec<i8>)> {
    let (w, h) = sample.init.dims();
    let (ox, oy) = sample.offset;
    let lambda = WeightMap::new(
        params
            .lambda()
            .raster()
            .crop(ox as isize, oy as isize, w, h),
    )?;
    let sigmas = params.sigmas();
    let solver_cfg = SolverConfig {
        record_states: true,
        ..cfg.solver
    };
    let out = run_unrolled(
        &sample.init,
        &sample.views,
        &sample.chains,
        &lambda,
        Some(&sigmas),
        &solver_cfg,
    )?;
    let mva = out.t.masked(&sample.mask);
    let (t_hat, cache) = params.prior.forward_cached(&mva, Some(&sample.mask))?;
    let terms = loss(
        &t_hat,
        &sample.truth,
        &sample.mask,
        &sigmas,
        &set.sigma0,
        cfg.alpha,
    )?;
    let trace = out.trace.expect("states recorded");
    let mut pattern: Vec<i8> = trace.active_set().into_iter().map(i8::from).collect();
    pattern.extend(cache.relu_pattern().into_iter().map(i8::from));
    pattern.extend(
        t_hat
            .as_slice()
            .iter()
            .zip(sample.truth.as_slice())
            .zip(sample.mask.as_slice())
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| super::sign(a - b) as i8),
    );
    pattern.extend(
        sigmas
            .iter()
            .zip(&set.sigma0)
            .map(|(s, s0)| super::sign(s - s0) as i8),
    );
    Ok((terms, pattern))
}

/// Mean losses of the batches of one epoch, each measured before its update.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub mean: LossTerms,
    pub batch_losses: Vec<LossTerms>,
}

/// One pass over `set` in an order shuffled by `cfg.seed` and `epoch`.
/// Each batch is followed by a single Adam update of all parameters.
pub fn train_epoch(
    set: &TrainingSet,
    params: &mut LearnableParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
    epoch: u64,
) -> Result<EpochMetrics> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    set.check_params(params)?;
    if state.m.len() != params.len() {
        return Err(Error::Dimension(
            "optimizer state does not match parameters".into(),
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);

    let mut batch_losses = Vec::new();
    for batch in order.chunks(cfg.batch_size) {
        let results: Vec<(LossTerms, Vec<f64>)> = batch
            .par_iter()
            .map(|&i| sample_gradients(params, set, &set.samples[i], cfg))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut grads = vec![0.0; params.len()];
        let mut terms = LossTerms::default();
        for (t, g) in &results {
            for (a, b) in grads.iter_mut().zip(g) {
                *a += b * scale;
            }
            terms.data_l1 += t.data_l1 * scale;
            terms.sigma_reg += t.sigma_reg * scale;
            terms.total += t.total * scale;
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
        let mut flat = params.to_vec();
        adam_step(&mut flat, &grads, state, &cfg.adam)?;
        params.set_from(&flat)?;
        batch_losses.push(terms);
    }
    let n = batch_losses.len() as f64;
    let mean = batch_losses
        .iter()
        .fold(LossTerms::default(), |acc, t| LossTerms {
            data_l1: acc.data_l1 + t.data_l1 / n,
            sigma_reg: acc.sigma_reg + t.sigma_reg / n,
            total: acc.total + t.total / n,
        });
    Ok(EpochMetrics { mean, batch_losses })
}

/// Runs the pipeline on a scene the parameters were not trained on: λ is the
/// mean of the learned map, σ the scene's own reference widths, and the prior
/// is applied as learned. Returns the refined texture and the evaluation mask.
pub fn evaluate_pipeline(
    params: &LearnableParams,
    truth: &TextureAtlas,
    views: &[ViewObservation],
    chains: &[ViewChain],
    cfg: &SolverConfig,
) -> Result<(PipelineOutput, Mask)> {
    let init = initial_atlas(views, chains)?;
    let mask = truth.mask().and(init.mask());
    let lam = params.lambda();
    let mean = lam.as_slice().iter().sum::<f64>() / lam.as_slice().len() as f64;
    let (w, h) = truth.dims();
    let lambda = WeightMap::constant(w, h, mean)?;
    let out = run_pipeline(
        params,
        init.data(),
        &mask,
        views,
        chains,
        &lambda,
        None,
        cfg,
    )?;
    Ok((out, mask))
}
