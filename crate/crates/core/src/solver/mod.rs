//! Unrolled primal-dual solver for the multi-view weighted-TV energy
//!
//! ```text
//! min_T  Σᵢ ‖Aᵢ T − bᵢ‖₁ + Σₓ λ(x) ‖∇T(x)‖₂ ,   Aᵢ = D Kᵢ Wᵢ Pᵢ
//! ```
//!
//! Each step performs dual ascent on the per-view data duals `qᵢ` (clamped to
//! `[−1, 1]`) and on the TV dual `p` (projected onto the unit disc), a primal
//! descent on `T`, and over-relaxation `T̄ = 2T' − T`.

mod calculus;

pub use calculus::{clamp_interval, div_op, grad_op, project_l2_ball, VectorField};

use log::warn;
use rayon::prelude::*;

use crate::atlas::{order_by_id, ViewObservation};
use crate::error::{Error, Result};
use crate::operators::ViewChain;
use crate::raster::Raster;

/// Unroll depth used while training.
pub const TRAIN_ITERS: usize = 50;
/// Unroll depth used for inference.
pub const INFERENCE_ITERS: usize = 400;
/// Unroll depth for reference (pseudo ground truth) solutions.
pub const REFERENCE_ITERS: usize = 2000;
/// Default constant regularization weight.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Dual step size.
    pub eta: f64,
    /// Primal step size.
    pub tau: f64,
    pub num_pd_iters: usize,
    /// Keep every intermediate state for reverse-mode differentiation.
    pub record_states: bool,
    /// Use `div(λ·p)` in the primal update (the exact adjoint of the TV dual
    /// ascent) rather than `λ·div(p)`.
    pub exact_adjoint_tv: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            eta: 0.025,
            tau: 0.025,
            num_pd_iters: INFERENCE_ITERS,
            record_states: false,
            exact_adjoint_tv: true,
        }
    }
}

impl SolverConfig {
    pub fn with_iters(num_pd_iters: usize) -> Self {
        SolverConfig {
            num_pd_iters,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.tau > 0.0 && self.eta.is_finite() && self.tau.is_finite()) {
            return Err(Error::Parameter(format!(
                "step sizes must be positive (eta = {}, tau = {})",
                self.eta, self.tau
            )));
        }
        Ok(())
    }
}

/// Nonnegative per-texel regularization weight λ.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(Raster);

impl WeightMap {
    pub fn new(raster: Raster) -> Result<Self> {
        if let Some(i) = raster
            .as_slice()
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::Parameter(format!(
                "weight map entry {i} is {} (must be finite and >= 0)",
                raster.as_slice()[i]
            )));
        }
        Ok(WeightMap(raster))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(width, height, value))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// Primal, over-relaxed primal, and dual variables of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: Raster,
    pub t_bar: Raster,
    /// Data duals, one per view, in the order the views were supplied.
    pub q: Vec<Raster>,
    pub p: VectorField,
}

impl SolverState {
    /// `T = T̄ = t_init`, all duals zero.
    pub fn initial(t_init: &Raster, chains: &[ViewChain]) -> Self {
        let (w, h) = t_init.dims();
        SolverState {
            t: t_init.clone(),
            t_bar: t_init.clone(),
            q: chains
                .iter()
                .map(|c| Raster::zeros(c.lr_dims().0, c.lr_dims().1))
                .collect(),
            p: VectorField::zeros(w, h),
        }
    }

    /// Dual feasibility: `|qᵢ| ≤ 1`, `‖p‖₂ ≤ 1`, everything finite.
    pub fn satisfies_invariants(&self) -> bool {
        self.t.is_finite()
            && self.t_bar.is_finite()
            && self.p.is_finite()
            && self
                .q
                .iter()
                .all(|q| q.as_slice().iter().all(|v| v.abs() <= 1.0))
            && self
                .p
                .xs()
                .iter()
                .zip(self.p.ys())
                .all(|(a, b)| a.hypot(*b) <= 1.0 + 1e-15)
    }
}

/// Views, their chains and the weight map, validated against each other.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Problem<'a> {
    pub views: &'a [ViewObservation],
    pub chains: &'a [ViewChain],
    pub lambda: &'a WeightMap,
}

impl<'a> Problem<'a> {
    pub fn new(
        views: &'a [ViewObservation],
        chains: &'a [ViewChain],
        lambda: &'a WeightMap,
    ) -> Result<Self> {
        if views.len() != chains.len() {
            return Err(Error::Dimension(format!(
                "{} views but {} chains",
                views.len(),
                chains.len()
            )));
        }
        let tex = lambda.dims();
        for (v, c) in views.iter().zip(chains) {
            if c.tex_dims() != tex {
                return Err(Error::Dimension(format!(
                    "view {}: chain texture grid {:?} differs from weight map {:?}",
                    v.id,
                    c.tex_dims(),
                    tex
                )));
            }
            if v.image.dims() != c.lr_dims() || v.visibility.dims() != c.lr_dims() {
                return Err(Error::Dimension(format!(
                    "view {}: image {:?} does not match chain output {:?}",
                    v.id,
                    v.image.dims(),
                    c.lr_dims()
                )));
            }
        }
        Ok(Problem {
            views,
            chains,
            lambda,
        })
    }

    fn check_state(&self, state: &SolverState) -> Result<()> {
        let tex = self.lambda.dims();
        if state.t.dims() != tex || state.t_bar.dims() != tex || state.p.dims() != tex {
            return Err(Error::Dimension(
                "solver state does not match texture grid".into(),
            ));
        }
        if state.q.len() != self.chains.len()
            || state
                .q
                .iter()
                .zip(self.chains)
                .any(|(q, c)| q.dims() != c.lr_dims())
        {
            return Err(Error::Dimension("data duals do not match views".into()));
        }
        Ok(())
    }

    /// View indices in ascending id order.
    pub fn order(&self) -> Vec<usize> {
        order_by_id(self.views.iter().map(|v| v.id))
    }
}

/// Pre-projection dual arguments `uᵢ = qᵢ + η(Aᵢ T̄ − bᵢ)` (invisible pixels zero).
pub(crate) fn data_dual_arguments(problem: &Problem, state: &SolverState, eta: f64) -> Vec<Raster> {
    problem
        .views
        .par_iter()
        .zip(problem.chains.par_iter())
        .zip(state.q.par_iter())
        .map(|((view, chain), q)| {
            let at = chain.forward(&state.t_bar).expect("dims validated");
            let vals = at
                .as_slice()
                .iter()
                .zip(view.image.as_slice())
                .zip(q.as_slice())
                .zip(view.visibility.as_slice())
                .map(|(((a, b), q), &vis)| if vis { q + eta * (a - b) } else { 0.0 })
                .collect();
            Raster::from_vec(at.width(), at.height(), vals).expect("same dims")
        })
        .collect()
}

/// Pre-projection TV dual argument `v = p + η λ ∇T̄`.
pub(crate) fn tv_dual_argument(problem: &Problem, state: &SolverState, eta: f64) -> VectorField {
    let g = grad_op(&state.t_bar);
    let lam = problem.lambda.as_slice();
    let (w, h) = g.dims();
    let xs = g
        .xs()
        .iter()
        .zip(state.p.xs())
        .zip(lam)
        .map(|((g, p), l)| p + eta * l * g)
        .collect();
    let ys = g
        .ys()
        .iter()
        .zip(state.p.ys())
        .zip(lam)
        .map(|((g, p), l)| p + eta * l * g)
        .collect();
    VectorField::from_planes(w, h, xs, ys)
}

pub(crate) fn project_tv_dual(v: &VectorField) -> VectorField {
    let (w, h) = v.dims();
    let mut xs = Vec::with_capacity(w * h);
    let mut ys = Vec::with_capacity(w * h);
    for (&a, &b) in v.xs().iter().zip(v.ys()) {
        let (a, b) = project_l2_ball((a, b));
        xs.push(a);
        ys.push(b);
    }
    VectorField::from_planes(w, h, xs, ys)
}

/// `Σᵢ Aᵢᵀ qᵢ`, summed in ascending view-id order.
pub(crate) fn sum_adjoints(problem: &Problem, q: &[Raster]) -> Raster {
    let parts: Vec<Raster> = problem
        .chains
        .par_iter()
        .zip(q.par_iter())
        .map(|(c, q)| c.adjoint(q).expect("dims validated"))
        .collect();
    let (w, h) = problem.lambda.dims();
    let mut acc = Raster::zeros(w, h);
    for i in problem.order() {
        for (a, v) in acc.as_mut_slice().iter_mut().zip(parts[i].as_slice()) {
            *a += v;
        }
    }
    acc
}

/// The TV part of the primal update: `div(λ p)` or `λ · div p`.
pub(crate) fn tv_primal_term(lambda: &WeightMap, p: &VectorField, exact_adjoint: bool) -> Raster {
    if exact_adjoint {
        div_op(&p.scaled(lambda.as_slice()))
    } else {
        let d = div_op(p);
        let vals = d
            .as_slice()
            .iter()
            .zip(lambda.as_slice())
            .map(|(d, l)| d * l)
            .collect();
        Raster::from_vec(d.width(), d.height(), vals).expect("same dims")
    }
}

fn step(problem: &Problem, state: &SolverState, cfg: &SolverConfig) -> SolverState {
    // dual ascent on the data terms, then on the TV term
    let q: Vec<Raster> = data_dual_arguments(problem, state, cfg.eta)
        .into_iter()
        .map(|u| u.map(clamp_interval))
        .collect();
    let p = project_tv_dual(&tv_dual_argument(problem, state, cfg.eta));
    // primal descent
    let tv = tv_primal_term(problem.lambda, &p, cfg.exact_adjoint_tv);
    let data = sum_adjoints(problem, &q);
    let (w, h) = state.t.dims();
    let t_new: Vec<f64> = state
        .t
        .as_slice()
        .iter()
        .zip(tv.as_slice())
        .zip(data.as_slice())
        .map(|((t, tv), d)| t + cfg.tau * (tv - d))
        .collect();
    // over-relaxation
    let t_bar: Vec<f64> = t_new
        .iter()
        .zip(state.t.as_slice())
        .map(|(n, o)| 2.0 * n - o)
        .collect();
    SolverState {
        t: Raster::from_vec(w, h, t_new).expect("same dims"),
        t_bar: Raster::from_vec(w, h, t_bar).expect("same dims"),
        q,
        p,
    }
}

/// One primal-dual iteration.
pub fn pd_step(
    state: &SolverState,
    views: &[ViewObservation],
    chains: &[ViewChain],
    lambda: &WeightMap,
    cfg: &SolverConfig,
) -> Result<SolverState> {
    cfg.validate()?;
    let problem = Problem::new(views, chains, lambda)?;
    problem.check_state(state)?;
    Ok(step(&problem, state, cfg))
}

/// Everything reverse-mode differentiation needs from a forward solve.
#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub(crate) cfg: SolverConfig,
    pub(crate) views: Vec<ViewObservation>,
    pub(crate) chains: Vec<ViewChain>,
    pub(crate) lambda: WeightMap,
    /// Input state of every iteration, oldest first.
    pub(crate) states: Vec<SolverState>,
}

impl SolverTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[SolverState] {
        &self.states
    }

    pub fn chains(&self) -> &[ViewChain] {
        &self.chains
    }

    /// Which pre-projection duals lie on or beyond their constraint boundary,
    /// step by step: every visible data dual of every view, then every TV dual.
    pub fn active_set(&self) -> Vec<bool> {
        let problem = Problem {
            views: &self.views,
            chains: &self.chains,
            lambda: &self.lambda,
        };
        let mut out = Vec::new();
        for s in &self.states {
            for (u, view) in data_dual_arguments(&problem, s, self.cfg.eta)
                .iter()
                .zip(&self.views)
            {
                for (v, &vis) in u.as_slice().iter().zip(view.visibility.as_slice()) {
                    if vis {
                        out.push(v.abs() >= 1.0);
                    }
                }
            }
            let v = tv_dual_argument(&problem, s, self.cfg.eta);
            out.extend(v.xs().iter().zip(v.ys()).map(|(a, b)| a.hypot(*b) > 1.0));
        }
        out
    }

    /// Smallest distance of any pre-projection dual from its constraint
    /// boundary over the whole solve (`1 − |u|` for data duals, `1 − ‖v‖`
    /// for TV duals, in absolute value). Gradients are only smooth when this
    /// is bounded away from zero.
    pub fn min_boundary_distance(&self) -> f64 {
        let problem = Problem {
            views: &self.views,
            chains: &self.chains,
            lambda: &self.lambda,
        };
        let mut best = f64::INFINITY;
        for s in &self.states {
            for (u, view) in data_dual_arguments(&problem, s, self.cfg.eta)
                .iter()
                .zip(&self.views)
            {
                for (v, &vis) in u.as_slice().iter().zip(view.visibility.as_slice()) {
                    if vis {
                        best = best.min((1.0 - v.abs()).abs());
                    }
                }
            }
            let v = tv_dual_argument(&problem, s, self.cfg.eta);
            for (a, b) in v.xs().iter().zip(v.ys()) {
                best = best.min((1.0 - a.hypot(*b)).abs());
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub t: Raster,
    pub state: SolverState,
    pub trace: Option<SolverTrace>,
}

/// Runs exactly `cfg.num_pd_iters` iterations from `T = T̄ = t_init` and zero duals.
///
/// `sigmas`, when given, overrides the blur width of each chain. Aborts with
/// [`Error::NonFinite`] as soon as the primal stops being finite.
pub fn run_unrolled(
    t_init: &Raster,
    views: &[ViewObservation],
    chains: &[ViewChain],
    lambda: &WeightMap,
    sigmas: Option<&[f64]>,
    cfg: &SolverConfig,
) -> Result<SolveOutput> {
    cfg.validate()?;
    let chains: Vec<ViewChain> = match sigmas {
        Some(s) => {
            if s.len() != chains.len() {
                return Err(Error::Dimension(format!(
                    "{} blur widths for {} views",
                    s.len(),
                    chains.len()
                )));
            }
            chains
                .iter()
                .zip(s)
                .map(|(c, &s)| c.with_sigma(s))
                .collect::<Result<_>>()?
        }
        None => chains.to_vec(),
    };
    let problem = Problem::new(views, &chains, lambda)?;
    t_init.ensure_dims(lambda.dims(), "initial texture")?;
    let mut state = SolverState::initial(t_init, &chains);
    let mut states = Vec::new();
    for k in 0..cfg.num_pd_iters {
        let next = step(&problem, &state, cfg);
        if !next.t.is_finite() {
            return Err(Error::NonFinite(format!(
                "primal texture at iteration {}",
                k + 1
            )));
        }
        if cfg.record_states {
            states.push(state);
        }
        state = next;
    }
    let trace = cfg.record_states.then(|| SolverTrace {
        cfg: *cfg,
        views: views.to_vec(),
        chains: chains.clone(),
        lambda: lambda.clone(),
        states,
    });
    Ok(SolveOutput {
        t: state.t.clone(),
        state,
        trace,
    })
}

/// The energy `Σᵢ ‖Aᵢ T − bᵢ‖₁ (visible pixels) + Σₓ λ(x) ‖∇T(x)‖₂`.
pub fn energy(
    t: &Raster,
    views: &[ViewObservation],
    chains: &[ViewChain],
    lambda: &WeightMap,
) -> Result<f64> {
    let problem = Problem::new(views, chains, lambda)?;
    t.ensure_dims(lambda.dims(), "texture")?;
    let mut data = 0.0;
    for i in problem.order() {
        let at = chains[i].forward(t)?;
        data += at
            .as_slice()
            .iter()
            .zip(views[i].image.as_slice())
            .zip(views[i].visibility.as_slice())
            .filter(|(_, &vis)| vis)
            .map(|((a, b), _)| (a - b).abs())
            .sum::<f64>();
    }
    let g = grad_op(t);
    let tv: f64 = g
        .xs()
        .iter()
        .zip(g.ys())
        .zip(lambda.as_slice())
        .map(|((a, b), l)| l * a.hypot(*b))
        .sum();
    Ok(data + tv)
}

/// Power-iteration estimate of `η τ ‖K‖²` for the stacked operator
/// `K = [A₁; …; A_N; λ∇]`. Warns when it exceeds one, the classical bound for
/// guaranteed convergence.
pub fn step_size_product(
    chains: &[ViewChain],
    lambda: &WeightMap,
    cfg: &SolverConfig,
    iterations: usize,
) -> f64 {
    let (w, h) = lambda.dims();
    let mut x = Raster::from_fn(w, h, |i, j| 1.0 + ((3 * i + 5 * j) % 7) as f64 * 0.05);
    let mut norm_sq = 0.0;
    for _ in 0..iterations {
        let n = crate::raster::norm2(x.as_slice());
        if n == 0.0 {
            break;
        }
        x = x.map(|v| v / n);
        let mut y = Raster::zeros(w, h);
        for c in chains {
            let ata = c.adjoint(&c.forward(&x).expect("dims")).expect("dims");
            for (a, v) in y.as_mut_slice().iter_mut().zip(ata.as_slice()) {
                *a += v;
            }
        }
        let lam = lambda.as_slice();
        let lg = grad_op(&x).scaled(lam).scaled(lam);
        let tv = div_op(&lg);
        for (a, v) in y.as_mut_slice().iter_mut().zip(tv.as_slice()) {
            *a -= v;
        }
        norm_sq = x.dot(&y);
        x = y;
    }
    let product = cfg.eta * cfg.tau * norm_sq;
    if product > 1.0 {
        warn!("step sizes exceed the convergence bound: eta*tau*|K|^2 = {product:.3}");
    }
    product
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_blur, compose_chain, SparseLinearMap};
    use crate::raster::Mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_chain(w: usize, h: usize) -> ViewChain {
        compose_chain(
            SparseLinearMap::identity(w * h),
            SparseLinearMap::identity(w * h),
            build_blur(0.01).unwrap(),
            1,
            (w, h),
            (w, h),
        )
        .unwrap()
    }

    fn obs(id: usize, image: Raster) -> ViewObservation {
        let (w, h) = image.dims();
        ViewObservation::new(id, image, Mask::full(w, h), None).unwrap()
    }

    #[test]
    fn zero_data_stays_at_origin() {
        let chains = vec![identity_chain(6, 5), identity_chain(6, 5)];
        let views = vec![obs(0, Raster::zeros(6, 5)), obs(1, Raster::zeros(6, 5))];
        let lambda = WeightMap::constant(6, 5, 0.7).unwrap();
        let mut s = SolverState::initial(&Raster::zeros(6, 5), &chains);
        for _ in 0..5 {
            s = pd_step(&s, &views, &chains, &lambda, &SolverConfig::default()).unwrap();
        }
        assert!(s.t.as_slice().iter().all(|&v| v == 0.0));
        assert!(s.q.iter().all(|q| q.as_slice().iter().all(|&v| v == 0.0)));
        assert_eq!(s.p.max_norm(), 0.0);
    }

    #[test]
    fn exact_data_is_a_fixed_point_without_regularization() {
        let b = Raster::from_fn(5, 5, |x, y| ((x * 3 + y) % 4) as f64 / 4.0);
        let chains = vec![identity_chain(5, 5)];
        let views = vec![obs(0, b.clone())];
        let lambda = WeightMap::constant(5, 5, 0.0).unwrap();
        let s0 = SolverState::initial(&b, &chains);
        let s1 = pd_step(&s0, &views, &chains, &lambda, &SolverConfig::default()).unwrap();
        assert_eq!(s1, s0);
    }

    #[test]
    fn duals_stay_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = Raster::from_fn(8, 8, |_, _| rng.random::<f64>() * 40.0);
        let chains = vec![identity_chain(8, 8)];
        let views = vec![obs(0, b)];
        let lambda = WeightMap::constant(8, 8, 30.0).unwrap();
        let cfg = SolverConfig::default();
        let mut s = SolverState::initial(&Raster::zeros(8, 8), &chains);
        for _ in 0..60 {
            s = pd_step(&s, &views, &chains, &lambda, &cfg).unwrap();
            assert!(s.satisfies_invariants());
        }
        assert!(s.q[0].as_slice().iter().any(|v| v.abs() == 1.0));
    }

    #[test]
    fn zero_iterations_is_passthrough() {
        let t0 = Raster::from_fn(4, 4, |x, y| (x + y) as f64 * 0.1);
        let chains = vec![identity_chain(4, 4)];
        let views = vec![obs(0, Raster::filled(4, 4, 0.3))];
        let lambda = WeightMap::constant(4, 4, 0.1).unwrap();
        let out = run_unrolled(
            &t0,
            &views,
            &chains,
            &lambda,
            None,
            &SolverConfig::with_iters(0),
        )
        .unwrap();
        assert_eq!(out.t, t0);
    }

    #[test]
    fn energy_examples() {
        let t = Raster::filled(5, 4, 0.4);
        let chains = vec![identity_chain(5, 4)];
        let lambda = WeightMap::constant(5, 4, 0.2).unwrap();
        let e = energy(&t, &[obs(0, t.clone())], &chains, &lambda).unwrap();
        assert_eq!(e, 0.0);

        let b = Raster::from_fn(5, 4, |x, y| (x * y) as f64 * 0.01);
        let shifted = b.map(|v| v + 0.1);
        let zero = WeightMap::constant(5, 4, 0.0).unwrap();
        let e = energy(&shifted, &[obs(0, b)], &chains, &zero).unwrap();
        assert!((e - 0.1 * 20.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let chains = vec![identity_chain(4, 4)];
        let views = vec![obs(0, Raster::zeros(3, 4))];
        let lambda = WeightMap::constant(4, 4, 0.1).unwrap();
        let s = SolverState::initial(&Raster::zeros(4, 4), &chains);
        assert!(matches!(
            pd_step(&s, &views, &chains, &lambda, &SolverConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn weight_map_rejects_negative() {
        assert!(WeightMap::new(Raster::filled(2, 2, -0.1)).is_err());
        assert!(WeightMap::new(Raster::filled(2, 2, f64::NAN)).is_err());
    }
}
