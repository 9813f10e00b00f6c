//! Reverse-mode differentiation of [`run_unrolled`](crate::solver::run_unrolled)
//! from its recorded state trace.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::solver::{
    data_dual_arguments, div_op, grad_op, project_tv_dual, tv_dual_argument, Problem, SolverTrace,
    VectorField,
};

/// Gradients of a scalar function of the solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverGradients {
    pub t_init: Raster,
    pub lambda: Raster,
    /// One entry per view, in the order the views were supplied.
    pub sigmas: Vec<f64>,
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Exact Jacobian-transpose of the unit-disc projection at `v`, applied to `g`.
fn ball_backward(v: (f64, f64), g: (f64, f64)) -> (f64, f64) {
    let n = v.0.hypot(v.1);
    if n <= 1.0 {
        g
    } else {
        let (nx, ny) = (v.0 / n, v.1 / n);
        let d = nx * g.0 + ny * g.1;
        ((g.0 - d * nx) / n, (g.1 - d * ny) / n)
    }
}

/// Propagates `upstream = ∂L/∂T_out` back through every recorded iteration.
///
/// Derivatives of the interval clamp pass through strictly inside `(−1, 1)`
/// and vanish on and beyond the boundary; the disc projection uses its exact
/// Jacobian. With zero iterations, the λ and σ gradients are exactly zero and
/// the initial-texture gradient equals `upstream`.
pub fn backprop_through_solver(
    trace: Option<&SolverTrace>,
    upstream: &Raster,
) -> Result<SolverGradients> {
    let trace = trace.ok_or_else(|| {
        Error::Usage("reverse pass needs a trace; run the solver with record_states".into())
    })?;
    let problem = Problem {
        views: &trace.views,
        chains: &trace.chains,
        lambda: &trace.lambda,
    };
    let tex = trace.lambda.dims();
    upstream.ensure_dims(tex, "upstream gradient")?;
    let (w, h) = tex;
    let n = w * h;
    let cfg = trace.cfg;
    let (eta, tau) = (cfg.eta, cfg.tau);
    let lam = trace.lambda.as_slice();
    let order = problem.order();

    // adjoints of the state after the current step
    let mut g_t = upstream.as_slice().to_vec();
    let mut g_tbar = vec![0.0; n];
    let mut g_q: Vec<Vec<f64>> = trace
        .chains
        .iter()
        .map(|c| vec![0.0; c.lr_dims().0 * c.lr_dims().1])
        .collect();
    let mut g_p = VectorField::zeros(w, h);
    let mut g_lambda = vec![0.0; n];
    let mut g_sigma = vec![0.0; trace.chains.len()];

    for state in trace.states.iter().rev() {
        // recompute the step's intermediates
        let u = data_dual_arguments(&problem, state, eta);
        let v = tv_dual_argument(&problem, state, eta);
        let p_new = project_tv_dual(&v);

        // T̄' = 2T' − T and T' = T + τ(…): both feed the previous primal
        let mut g_tnew = g_t;
        axpy(&mut g_tnew, 2.0, &g_tbar);
        let mut g_t_prev = g_tnew.clone();
        axpy(&mut g_t_prev, -1.0, &g_tbar);
        let g_tnew = Raster::from_vec(w, h, g_tnew)?;

        // TV part of the primal update
        let mut g_pnew = g_p;
        if cfg.exact_adjoint_tv {
            let gg = grad_op(&g_tnew);
            for i in 0..n {
                g_pnew.xs_mut()[i] -= tau * lam[i] * gg.xs()[i];
                g_pnew.ys_mut()[i] -= tau * lam[i] * gg.ys()[i];
                g_lambda[i] -= tau * (gg.xs()[i] * p_new.xs()[i] + gg.ys()[i] * p_new.ys()[i]);
            }
        } else {
            let scaled = Raster::from_vec(
                w,
                h,
                g_tnew
                    .as_slice()
                    .iter()
                    .zip(lam)
                    .map(|(g, l)| g * l)
                    .collect(),
            )?;
            let gs = grad_op(&scaled);
            let dp = div_op(&p_new);
            for i in 0..n {
                g_pnew.xs_mut()[i] -= tau * gs.xs()[i];
                g_pnew.ys_mut()[i] -= tau * gs.ys()[i];
                g_lambda[i] += tau * g_tnew.as_slice()[i] * dp.as_slice()[i];
            }
        }

        // data duals, per view: q' = clamp(u), u = q + η(A T̄ − b)
        let per_view: Vec<(Vec<f64>, Raster, f64)> = trace
            .chains
            .par_iter()
            .zip(trace.views.par_iter())
            .zip(u.par_iter())
            .zip(g_q.par_iter())
            .map(
                |(((chain, view), u), gq)| -> Result<(Vec<f64>, Raster, f64)> {
                    let a_g = chain.forward(&g_tnew)?;
                    let dk_g = chain.sigma_derivative(&g_tnew)?;
                    let mut g_u = gq.clone();
                    axpy(&mut g_u, -tau, a_g.as_slice());
                    let mut d_sigma = 0.0;
                    for (((gu, &uu), &vis), dk) in g_u
                        .iter_mut()
                        .zip(u.as_slice())
                        .zip(view.visibility.as_slice())
                        .zip(dk_g.as_slice())
                    {
                        let q_new = if vis { uu.clamp(-1.0, 1.0) } else { 0.0 };
                        d_sigma -= tau * dk * q_new;
                        if !(vis && uu.abs() < 1.0) {
                            *gu = 0.0;
                        }
                    }
                    let g_u = Raster::from_vec(u.width(), u.height(), g_u)?;
                    let dk_tbar = chain.sigma_derivative(&state.t_bar)?;
                    d_sigma += eta * g_u.dot(&dk_tbar);
                    let back = chain.adjoint(&g_u)?;
                    Ok((g_u.into_vec(), back, d_sigma))
                },
            )
            .collect::<Result<Vec<_>>>()?;

        let mut g_tbar_prev = vec![0.0; n];
        for &i in &order {
            axpy(&mut g_tbar_prev, eta, per_view[i].1.as_slice());
            g_sigma[i] += per_view[i].2;
        }
        g_q = per_view.into_iter().map(|(gu, _, _)| gu).collect();

        // TV dual: p' = Π(v), v = p + η λ ∇T̄
        let grad_tbar = grad_op(&state.t_bar);
        let mut g_v = VectorField::zeros(w, h);
        for i in 0..n {
            let (gx, gy) = ball_backward((v.xs()[i], v.ys()[i]), (g_pnew.xs()[i], g_pnew.ys()[i]));
            g_v.xs_mut()[i] = gx;
            g_v.ys_mut()[i] = gy;
            g_lambda[i] += eta * (gx * grad_tbar.xs()[i] + gy * grad_tbar.ys()[i]);
        }
        let back_tv = div_op(&g_v.scaled(lam));
        axpy(&mut g_tbar_prev, -eta, back_tv.as_slice());
        g_p = g_v;

        g_t = g_t_prev;
        g_tbar = g_tbar_prev;
    }
    let mut t_init = g_t;
    axpy(&mut t_init, 1.0, &g_tbar);
    Ok(SolverGradients {
        t_init: Raster::from_vec(w, h, t_init)?,
        lambda: Raster::from_vec(w, h, g_lambda)?,
        sigmas: g_sigma,
    })
}
