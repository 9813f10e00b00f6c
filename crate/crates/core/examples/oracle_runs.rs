//! Reference runs whose measured values are frozen into the acceptance suite.
//!
//! `cargo run --release -p texsr-core --example oracle_runs`

use std::time::Instant;

use texsr::atlas::{bicubic_baseline, initial_atlas};
use texsr::metrics::psnr;
use texsr::solver::{
    energy, pd_step, run_unrolled, SolverConfig, SolverState, WeightMap, DEFAULT_LAMBDA,
};
use texsr::synth::{gen_texture, render_views, SceneSpec, TextureKind};

fn main() -> texsr::Result<()> {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    if which == "all" || which == "convergence" {
        convergence()?;
    }
    if which == "all" || which == "baseline" {
        baseline()?;
    }
    if which == "steps" {
        let args: Vec<f64> = std::env::args()
            .skip(2)
            .map(|a| a.parse().unwrap())
            .collect();
        steps(args[0], args[1])?;
    }
    if which == "all" || which == "exact" {
        exact()?;
    }
    if which == "train" {
        let args: Vec<String> = std::env::args().skip(2).collect();
        let lr: f64 = args.first().map(|a| a.parse().unwrap()).unwrap_or(3e-3);
        let batch: usize = args.get(1).map(|a| a.parse().unwrap()).unwrap_or(1);
        let views: usize = args.get(2).map(|a| a.parse().unwrap()).unwrap_or(4);
        train(lr, batch, views)?;
    }
    Ok(())
}

fn sized_scene(
    dims: (usize, usize),
    num_views: usize,
    seed: u64,
) -> texsr::Result<texsr::synth::GroundTruth> {
    let truth = gen_texture(TextureKind::Mixed, dims, seed)?;
    let spec = SceneSpec {
        tex_dims: dims,
        num_views,
        seed,
        ..Default::default()
    };
    render_views(&truth, &spec)
}

/// Training smoke run: 200 optimizer steps on the four patches of a 96×96
/// scene, validated on a held-out 64×64 scene.
fn train(lr: f64, batch: usize, views: usize) -> texsr::Result<()> {
    use texsr::learn::{
        evaluate_pipeline, train_epoch, AdamConfig, AdamState, LearnableParams, TrainConfig,
        TrainingSet,
    };
    let start = Instant::now();
    let gt = sized_scene((96, 96), views, 11)?;
    let val = sized_scene((64, 64), views, 12)?;
    let sigma0 = gt.sigmas();
    let set = TrainingSet::from_scene(
        &gt.texture,
        &gt.views,
        &gt.chains,
        &sigma0,
        2,
        texsr::atlas::TRAIN_STRIDE,
    )?;
    println!("patches {}", set.len());
    let cfg = TrainConfig {
        adam: AdamConfig {
            learning_rate: lr,
            ..Default::default()
        },
        batch_size: batch,
        seed: 7,
        ..Default::default()
    };
    let mut params = LearnableParams::new((96, 96), &sigma0, 7)?;
    let mut adam = AdamState::new(params.len());
    let val_cfg = SolverConfig::with_iters(texsr::solver::TRAIN_ITERS);
    let val_psnr = |p: &LearnableParams| -> texsr::Result<f64> {
        let (out, mask) = evaluate_pipeline(p, &val.texture, &val.views, &val.chains, &val_cfg)?;
        psnr(&out.refined, val.texture.data(), &mask)
    };
    let p0 = val_psnr(&params)?;
    let mut first = None;
    let mut epoch = 0u64;
    while adam.step < 200 {
        let m = train_epoch(&set, &mut params, &mut adam, &cfg, epoch)?;
        if first.is_none() {
            first = Some(m.batch_losses[0].total);
        }
        if epoch.is_multiple_of(5) {
            println!(
                "step {:4} epoch loss {:.5} ({:.1}s)",
                adam.step,
                m.mean.total,
                start.elapsed().as_secs_f64()
            );
        }
        epoch += 1;
    }
    let mut full = 0.0;
    let initial_params = LearnableParams::new((96, 96), &sigma0, 7)?;
    let mut init_full = 0.0;
    for s in &set.samples {
        full += texsr::learn::sample_gradients(&params, &set, s, &cfg)?
            .0
            .total;
        init_full += texsr::learn::sample_gradients(&initial_params, &set, s, &cfg)?
            .0
            .total;
    }
    println!(
        "set loss initial {init_full:.5} final {full:.5} reduction {:.4}",
        1.0 - full / init_full
    );
    println!(
        "val psnr untrained {p0:.4} trained {:.4}",
        val_psnr(&params)?
    );
    println!("sigmas {:?}", params.sigmas());
    println!("runtime {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn scene(num_views: usize, noise: f64, seed: u64) -> texsr::Result<texsr::synth::GroundTruth> {
    let truth = gen_texture(TextureKind::Mixed, (64, 64), seed)?;
    let spec = SceneSpec {
        tex_dims: (64, 64),
        num_views,
        factor: 2,
        sigma_true: vec![0.8],
        noise_std: noise,
        seed,
        ..Default::default()
    };
    render_views(&truth, &spec)
}

fn convergence() -> texsr::Result<()> {
    let start = Instant::now();
    let gt = scene(8, 0.005, 1)?;
    let init = initial_atlas(&gt.views, &gt.chains)?;
    let lambda = WeightMap::constant(64, 64, DEFAULT_LAMBDA)?;
    let cfg = SolverConfig::default();
    let mut state = SolverState::initial(init.data(), &gt.chains);
    let mut energies = Vec::new();
    for k in 1..=40 {
        for _ in 0..100 {
            state = pd_step(&state, &gt.views, &gt.chains, &lambda, &cfg)?;
        }
        let e = energy(&state.t, &gt.views, &gt.chains, &lambda)?;
        energies.push(e);
        println!("iter {:5} energy {:.6}", k * 100, e);
    }
    let (e2, e4) = (energies[19], energies[39]);
    println!("relative gap 2000/4000: {:.3e}", (e2 - e4).abs() / e4);
    println!("convergence runtime {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn baseline() -> texsr::Result<()> {
    let gt = scene(8, 0.005, 1)?;
    let init = initial_atlas(&gt.views, &gt.chains)?;
    let mask = gt.texture.mask().and(init.mask());
    let lambda = WeightMap::constant(64, 64, DEFAULT_LAMBDA)?;
    let out = run_unrolled(
        init.data(),
        &gt.views,
        &gt.chains,
        &lambda,
        None,
        &SolverConfig::with_iters(400),
    )?;
    let p_mva = psnr(&out.t, gt.texture.data(), &mask)?;
    let p_init = psnr(init.data(), gt.texture.data(), &mask)?;
    let mut p_bic = f64::NEG_INFINITY;
    for (v, c) in gt.views.iter().zip(&gt.chains) {
        let b = bicubic_baseline(v, c)?;
        let m = mask.and(b.mask());
        p_bic = p_bic.max(psnr(b.data(), gt.texture.data(), &m)?);
    }
    println!("baseline: mva {p_mva:.4} init {p_init:.4} bicubic {p_bic:.4}");
    Ok(())
}

fn exact() -> texsr::Result<()> {
    let gt = scene(16, 0.0, 2)?;
    let init = initial_atlas(&gt.views, &gt.chains)?;
    let mask = gt.texture.mask().and(init.mask());
    let lambda = WeightMap::constant(64, 64, DEFAULT_LAMBDA)?;
    let out = run_unrolled(
        init.data(),
        &gt.views,
        &gt.chains,
        &lambda,
        None,
        &SolverConfig::with_iters(400),
    )?;
    println!(
        "exact: mva {:.4} init {:.4}",
        psnr(&out.t, gt.texture.data(), &mask)?,
        psnr(init.data(), gt.texture.data(), &mask)?
    );
    Ok(())
}

fn steps(eta: f64, tau: f64) -> texsr::Result<()> {
    let gt = scene(8, 0.005, 1)?;
    let init = initial_atlas(&gt.views, &gt.chains)?;
    let mask = gt.texture.mask().and(init.mask());
    let lambda = WeightMap::constant(64, 64, DEFAULT_LAMBDA)?;
    let cfg = SolverConfig {
        eta,
        tau,
        ..Default::default()
    };
    println!(
        "product {:.4}",
        texsr::solver::step_size_product(&gt.chains, &lambda, &cfg, 30)
    );
    let mut state = SolverState::initial(init.data(), &gt.chains);
    let mut energies = Vec::new();
    for k in 1..=40 {
        for _ in 0..100 {
            state = pd_step(&state, &gt.views, &gt.chains, &lambda, &cfg)?;
        }
        energies.push(energy(&state.t, &gt.views, &gt.chains, &lambda)?);
        if k == 4 {
            println!("psnr@400 {:.4}", psnr(&state.t, gt.texture.data(), &mask)?);
        }
    }
    let mono = energies.windows(2).skip(1).all(|w| w[1] <= w[0]);
    println!(
        "e400 {:.5} e2000 {:.5} e4000 {:.5} gap {:.3e} mono {mono}",
        energies[3],
        energies[19],
        energies[39],
        (energies[19] - energies[39]).abs() / energies[39]
    );
    println!("psnr@4000 {:.4}", psnr(&state.t, gt.texture.data(), &mask)?);
    let ex = scene(16, 0.0, 2)?;
    let init = initial_atlas(&ex.views, &ex.chains)?;
    let mask = ex.texture.mask().and(init.mask());
    let out = run_unrolled(
        init.data(),
        &ex.views,
        &ex.chains,
        &lambda,
        None,
        &SolverConfig {
            num_pd_iters: 400,
            ..cfg
        },
    )?;
    println!(
        "exact psnr@400 {:.4}",
        psnr(&out.t, ex.texture.data(), &mask)?
    );
    Ok(())
}
