//! Gradient check shared by the gradient tests and the acceptance suite:
//! central finite differences against the analytic gradients of the full
//! pipeline (unrolled solver, prior network, L1 loss with blur deviation).

#![allow(clippy::needless_range_loop)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texsr::learn::{
    sample_gradients, sample_loss_with_pattern, LearnableParams, PriorNet, TrainConfig, TrainingSet,
};
use texsr::raster::Raster;
use texsr::solver::SolverConfig;
use texsr::synth::{gen_texture, render_views, SceneSpec, TextureKind};

pub const H: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-4;

pub struct Instance {
    pub set: TrainingSet,
    pub params: LearnableParams,
    pub cfg: TrainConfig,
}

pub fn instance(solver: SolverConfig, lambda_range: (f64, f64)) -> Instance {
    let truth = gen_texture(TextureKind::Mixed, (16, 16), 5).unwrap();
    let spec = SceneSpec {
        tex_dims: (16, 16),
        num_views: 2,
        factor: 2,
        sigma_true: vec![0.8],
        noise_std: 0.005,
        max_translation: 2.0,
        seed: 5,
        ..Default::default()
    };
    let gt = render_views(&truth, &spec).unwrap();
    let sigma0 = [0.8, 0.8];
    let set = TrainingSet::whole_scene(&gt.texture, &gt.views, &gt.chains, &sigma0).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = LearnableParams::new((16, 16), &sigma0, 3).unwrap();
    let lambda = Raster::from_fn(16, 16, |_, _| {
        rng.random_range(lambda_range.0..lambda_range.1)
    });
    params.set_lambda(&lambda).unwrap();
    params.set_sigmas(&[0.9, 1.15]).unwrap();
    let prior: Vec<f64> = params
        .prior
        .to_vec()
        .into_iter()
        .map(|w| {
            if w == 0.0 {
                rng.random_range(-0.1..0.1)
            } else {
                w
            }
        })
        .collect();
    params.prior = PriorNet::from_slice(&prior).unwrap();

    let cfg = TrainConfig {
        solver,
        ..Default::default()
    };
    Instance { set, params, cfg }
}

#[derive(Default, Debug)]
pub struct Tally {
    /// Smallest magnitude central differences resolve to `REL_TOL`. The loss
    /// sums `n` texel terms, so its rounding error is about `√n ε |L|`, and
    /// that of `(L(θ+h) − L(θ−h)) / 2h` about `√n ε |L| / h`.
    pub floor: f64,
    pub resolved: usize,
    pub checked: usize,
    pub excluded: usize,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Tally {
    fn compare(&mut self, name: String, analytic: f64, fd: Option<f64>) {
        let Some(fd) = fd else {
            self.excluded += 1;
            return;
        };
        self.checked += 1;
        if analytic.abs().max(fd.abs()) >= self.floor {
            self.resolved += 1;
        }
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(self.floor);
        self.worst = self.worst.max(err);
        if err > REL_TOL {
            self.failures.push(format!(
                "{name}: analytic {analytic:.9e} fd {fd:.9e} rel {err:.2e}"
            ));
        }
    }
}

/// Central difference of the loss along one coordinate; `None` when the two
/// probes straddle a kink (projection boundary, ReLU, or residual sign).
pub fn central(
    inst: &Instance,
    set_value: impl Fn(&mut LearnableParams, f64),
    at: f64,
) -> Option<f64> {
    let eval = |v: f64| {
        let mut p = inst.params.clone();
        set_value(&mut p, v);
        sample_loss_with_pattern(&p, &inst.set, &inst.set.samples[0], &inst.cfg).unwrap()
    };
    let (plus, pat_plus) = eval(at + H);
    let (minus, pat_minus) = eval(at - H);
    (pat_plus == pat_minus).then(|| (plus.total - minus.total) / (2.0 * H))
}

pub fn check_all(inst: &Instance) -> Tally {
    let (terms, raw_grads) =
        sample_gradients(&inst.params, &inst.set, &inst.set.samples[0], &inst.cfg).unwrap();
    let mut tally = Tally {
        floor: (inst.set.samples[0].mask.count() as f64).sqrt() * f64::EPSILON * terms.total.abs()
            / H
            / REL_TOL,
        ..Default::default()
    };
    let lambda = inst.params.lambda().raster().clone();
    let nl = lambda.len();

    for i in 0..nl {
        let base = lambda.as_slice()[i];
        let fd = central(
            inst,
            |p, v| {
                let mut l = lambda.clone();
                l.as_mut_slice()[i] = v;
                p.set_lambda(&l).unwrap();
            },
            base,
        );
        // dλ/draw = sigmoid(raw) = 1 − exp(−λ)
        let analytic = raw_grads[i] / (-(-base).exp_m1());
        tally.compare(format!("lambda[{i}]"), analytic, fd);
    }

    let sigmas = inst.params.sigmas();
    for k in 0..sigmas.len() {
        let fd = central(
            inst,
            |p, v| {
                let mut s = sigmas.clone();
                s[k] = v;
                p.set_sigmas(&s).unwrap();
            },
            sigmas[k],
        );
        let r = (sigmas[k] - 0.05) / 4.95;
        let analytic = raw_grads[nl + k] / (4.95 * r * (1.0 - r));
        tally.compare(format!("sigma[{k}]"), analytic, fd);
    }

    let weights = inst.params.prior.to_vec();
    let offset = nl + sigmas.len();
    for j in 0..weights.len() {
        let fd = central(
            inst,
            |p, v| {
                let mut w = weights.clone();
                w[j] = v;
                p.prior = PriorNet::from_slice(&w).unwrap();
            },
            weights[j],
        );
        tally.compare(format!("prior[{j}]"), raw_grads[offset + j], fd);
    }
    tally
}

pub fn report(tally: &Tally) {
    eprintln!(
        "checked {} ({} above floor {:.1e}) excluded {} worst relative error {:.3e}",
        tally.checked, tally.resolved, tally.floor, tally.excluded, tally.worst
    );
    for f in tally.failures.iter().take(20) {
        eprintln!("  {f}");
    }
}
