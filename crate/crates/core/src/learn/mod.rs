//! Learnable solver parameters (per-texel λ, per-view σ), the residual prior
//! network, the training loss and the optimizer.

mod adam;
mod backprop;
mod checkpoint;
mod prior;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backprop::{backprop_through_solver, SolverGradients};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use prior::{PriorCache, PriorNet, HIDDEN};
pub use train::{
    evaluate_pipeline, run_pipeline, sample_gradients, sample_loss_with_pattern, train_epoch,
    EpochMetrics, PipelineOutput, TrainingSample, TrainingSet,
};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};
use crate::solver::{SolverConfig, WeightMap, DEFAULT_LAMBDA, TRAIN_ITERS};

pub const SIGMA_MIN: f64 = 0.05;
pub const SIGMA_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Weight of the blur-deviation term.
    pub alpha: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Solver settings for the unrolled forward pass (states are always recorded).
    pub solver: SolverConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            adam: AdamConfig::default(),
            batch_size: 4,
            epochs: 1,
            seed: 0,
            solver: SolverConfig::with_iters(TRAIN_ITERS),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be >= 0, got {}",
                a.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::Parameter(
                "adam betas must lie in [0, 1) and epsilon be > 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        self.solver.validate()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Free parameters of the full pipeline, stored unconstrained.
///
/// `λ = softplus(lambda_raw)` and `σ = 0.05 + 4.95 · sigmoid(sigma_raw)`, so
/// every reachable value satisfies the constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableParams {
    pub lambda_raw: Raster,
    pub sigma_raw: Vec<f64>,
    pub prior: PriorNet,
}

impl LearnableParams {
    /// `λ ≡ 0.1`, `σ = sigma0`, identity prior with He-initialized hidden layers.
    pub fn new(tex_dims: (usize, usize), sigma0: &[f64], seed: u64) -> Result<Self> {
        let sigma_raw = sigma0
            .iter()
            .map(|&s| {
                if !(s > SIGMA_MIN && s < SIGMA_MAX) {
                    return Err(Error::Parameter(format!(
                        "initial blur width {s} must lie strictly inside ({SIGMA_MIN}, {SIGMA_MAX})"
                    )));
                }
                let r = (s - SIGMA_MIN) / (SIGMA_MAX - SIGMA_MIN);
                Ok((r / (1.0 - r)).ln())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LearnableParams {
            lambda_raw: Raster::filled(tex_dims.0, tex_dims.1, softplus_inverse(DEFAULT_LAMBDA)),
            sigma_raw,
            prior: PriorNet::new(seed),
        })
    }

    pub fn tex_dims(&self) -> (usize, usize) {
        self.lambda_raw.dims()
    }

    pub fn num_views(&self) -> usize {
        self.sigma_raw.len()
    }

    pub fn lambda(&self) -> WeightMap {
        WeightMap::new(self.lambda_raw.map(softplus)).expect("softplus is nonnegative")
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.sigma_raw
            .iter()
            .map(|&r| SIGMA_MIN + (SIGMA_MAX - SIGMA_MIN) * sigmoid(r))
            .collect()
    }

    /// `dσ / d sigma_raw` per view.
    pub(crate) fn sigma_jacobian(&self) -> Vec<f64> {
        self.sigma_raw
            .iter()
            .map(|&r| {
                let s = sigmoid(r);
                (SIGMA_MAX - SIGMA_MIN) * s * (1.0 - s)
            })
            .collect()
    }

    /// Sets the raw values so that `λ` equals `lambda` (entries must be > 0).
    pub fn set_lambda(&mut self, lambda: &Raster) -> Result<()> {
        lambda.ensure_dims(self.tex_dims(), "weight map")?;
        if let Some(v) = lambda
            .as_slice()
            .iter()
            .find(|v| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::Parameter(format!(
                "learnable weights must be > 0, got {v}"
            )));
        }
        self.lambda_raw = lambda.map(softplus_inverse);
        Ok(())
    }

    /// Sets the raw values so that `σ` equals `sigmas`.
    pub fn set_sigmas(&mut self, sigmas: &[f64]) -> Result<()> {
        if sigmas.len() != self.num_views() {
            return Err(Error::Dimension(format!(
                "{} blur widths for {} views",
                sigmas.len(),
                self.num_views()
            )));
        }
        let fresh = LearnableParams::new((1, 1), sigmas, 0)?;
        self.sigma_raw = fresh.sigma_raw;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambda_raw.len() + self.sigma_raw.len() + PriorNet::PARAM_COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// λ raw values, then σ raw values, then the prior parameters.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.lambda_raw.as_slice());
        v.extend_from_slice(&self.sigma_raw);
        v.extend(self.prior.to_vec());
        v
    }

    pub fn set_from(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        let nl = self.lambda_raw.len();
        let ns = self.sigma_raw.len();
        self.lambda_raw
            .as_mut_slice()
            .copy_from_slice(&values[..nl]);
        self.sigma_raw.copy_from_slice(&values[nl..nl + ns]);
        self.prior.set_from(&values[nl + ns..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    /// `Σ |T̂ − T|` over valid texels.
    pub data_l1: f64,
    /// `Σᵢ |σᵢ − σᵢ⁰|`.
    pub sigma_reg: f64,
    pub total: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Training objective `‖T̂ − T‖₁ + α Σᵢ |σᵢ − σᵢ⁰|`.
pub fn loss(
    t_hat: &Raster,
    t_gt: &Raster,
    mask: &Mask,
    sigmas: &[f64],
    sigmas0: &[f64],
    alpha: f64,
) -> Result<LossTerms> {
    if t_hat.dims() != t_gt.dims() || mask.dims() != t_gt.dims() {
        return Err(Error::Dimension("loss inputs differ in size".into()));
    }
    if sigmas.len() != sigmas0.len() {
        return Err(Error::Dimension(format!(
            "{} blur widths against {} reference widths",
            sigmas.len(),
            sigmas0.len()
        )));
    }
    let data_l1: f64 = t_hat
        .as_slice()
        .iter()
        .zip(t_gt.as_slice())
        .zip(mask.as_slice())
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b).abs())
        .sum();
    let sigma_reg: f64 = sigmas
        .iter()
        .zip(sigmas0)
        .map(|(s, s0)| (s - s0).abs())
        .sum();
    Ok(LossTerms {
        data_l1,
        sigma_reg,
        total: data_l1 + alpha * sigma_reg,
    })
}

/// Gradients of [`loss`] with respect to `T̂` and to each σ, with `sign(0) = 0`.
pub fn loss_gradients(
    t_hat: &Raster,
    t_gt: &Raster,
    mask: &Mask,
    sigmas: &[f64],
    sigmas0: &[f64],
    alpha: f64,
) -> (Raster, Vec<f64>) {
    let (w, h) = t_hat.dims();
    let g = t_hat
        .as_slice()
        .iter()
        .zip(t_gt.as_slice())
        .zip(mask.as_slice())
        .map(|((a, b), &m)| if m { sign(a - b) } else { 0.0 })
        .collect();
    let gs = sigmas
        .iter()
        .zip(sigmas0)
        .map(|(s, s0)| alpha * sign(s - s0))
        .collect();
    (Raster::from_vec(w, h, g).expect("same dims"), gs)
}
