//! The four batch commands behind the `texsr` binary: `synth`, `solve`,
//! `train` and `eval`. Each reads one config file and writes into a directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::atlas::{initial_atlas, TRAIN_STRIDE};
use crate::error::{Error, Result};
use crate::io::{
    read_bundle, read_pfm, write_bundle, write_pfm, write_png, ConfigFile, SceneBundle,
};
use crate::learn::{
    evaluate_pipeline, read_checkpoint, run_pipeline, train_epoch, write_checkpoint, AdamConfig,
    AdamState, LearnableParams, TrainConfig, TrainingSet,
};
use crate::metrics::{psnr, MetricReport, MetricSelection};
use crate::solver::{
    run_unrolled, SolverConfig, WeightMap, DEFAULT_LAMBDA, INFERENCE_ITERS, TRAIN_ITERS,
};
use crate::synth::{gen_texture, render_views, SceneSpec, TextureKind};

/// Environment variable capping the worker count; 0 or unset means automatic.
pub const THREADS_ENV: &str = "TEXSR_THREADS";

/// Sizes the global worker pool from the value of [`THREADS_ENV`] and
/// returns the number of workers in use.
pub fn init_thread_pool(value: Option<&str>) -> Result<usize> {
    let requested = match value.map(str::trim) {
        None | Some("") => 0,
        Some(v) => v.parse::<usize>().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got {v:?}"
            ))
        })?,
    };
    if requested > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(requested)
            .build_global()
            .map_err(|e| Error::Usage(format!("worker pool: {e}")))?;
    }
    Ok(rayon::current_num_threads())
}

pub const OUTPUT_PFM: &str = "texture_sr.pfm";
pub const OUTPUT_PNG: &str = "texture_sr.png";
pub const TRAIN_LOG: &str = "train_log.txt";

const SYNTH_SCHEMA: &[(&str, &[&str])] = &[
    ("paths", &["output"]),
    (
        "scene",
        &[
            "width",
            "height",
            "num_views",
            "factor",
            "sigma",
            "noise_std",
            "max_translation",
            "max_rotation_deg",
            "max_skew",
            "flow_amplitude",
            "seed",
            "texture",
        ],
    ),
];

const RUN_SCHEMA: &[(&str, &[&str])] = &[
    (
        "paths",
        &["scene", "output", "checkpoint", "validation_scene", "input"],
    ),
    ("run", &["factor", "num_views", "seed"]),
    (
        "solver",
        &["iterations", "eta", "tau", "lambda", "exact_adjoint_tv"],
    ),
    (
        "train",
        &[
            "iterations",
            "alpha",
            "learning_rate",
            "beta1",
            "beta2",
            "epsilon",
            "batch_size",
            "epochs",
            "stride",
            "max_patches",
        ],
    ),
    ("metrics", &["psnr", "ssim", "sre"]),
];

fn check_factor(factor: usize) -> Result<()> {
    if factor == 2 || factor == 4 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "factor must be 2 or 4, got {factor}"
        )))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parsed `synth` config.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub output_dir: PathBuf,
    pub spec: SceneSpec,
    pub texture: TextureKind,
}

impl SynthConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = ConfigFile::load(path)?;
        file.check_schema(SYNTH_SCHEMA)?;
        let output_dir = file
            .section("paths")
            .path("output")
            .ok_or_else(|| Error::Config(format!("{}: missing [paths] output", path.display())))?;
        let s = file.section("scene");
        let d = SceneSpec::default();
        let spec = SceneSpec {
            tex_dims: (
                s.get_or("width", d.tex_dims.0)?,
                s.get_or("height", d.tex_dims.1)?,
            ),
            num_views: s.get_or("num_views", d.num_views)?,
            factor: s.get_or("factor", d.factor)?,
            sigma_true: s.list("sigma")?.unwrap_or(d.sigma_true),
            noise_std: s.get_or("noise_std", d.noise_std)?,
            max_translation: s.get_or("max_translation", d.max_translation)?,
            max_rotation_deg: s.get_or("max_rotation_deg", d.max_rotation_deg)?,
            max_skew: s.get_or("max_skew", d.max_skew)?,
            flow_amplitude: s.get_or("flow_amplitude", d.flow_amplitude)?,
            seed: s.get_or("seed", d.seed)?,
        };
        check_factor(spec.factor)?;
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(SynthConfig {
            output_dir,
            spec,
            texture: s.get_or("texture", TextureKind::default())?,
        })
    }
}

/// Renders a synthetic scene and writes it as a bundle.
pub fn synth(config: &Path) -> Result<SynthConfig> {
    let cfg = SynthConfig::load(config)?;
    let texture = gen_texture(cfg.texture, cfg.spec.tex_dims, cfg.spec.seed)?;
    let truth = render_views(&texture, &cfg.spec)?;
    create_dir(&cfg.output_dir)?;
    write_bundle(&cfg.output_dir, &truth, cfg.texture)?;
    info!(
        "wrote {} views of a {}x{} {} texture to {}",
        cfg.spec.num_views,
        cfg.spec.tex_dims.0,
        cfg.spec.tex_dims.1,
        cfg.texture,
        cfg.output_dir.display()
    );
    Ok(cfg)
}

/// Settings shared by `solve`, `train` and `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene_dir: PathBuf,
    pub output_dir: PathBuf,
    /// `solve`: learned parameters to apply; `train`: state to resume from.
    pub checkpoint: Option<PathBuf>,
    /// `train`: held-out scene scored after every epoch.
    pub validation_scene: Option<PathBuf>,
    /// `eval`: texture to score (defaults to the `solve` output).
    pub input: Option<PathBuf>,
    /// Must match the scene when given.
    pub factor: Option<usize>,
    /// Use only the first `n` views.
    pub num_views: Option<usize>,
    pub seed: u64,
    /// Constant weight for `solve` without a checkpoint.
    pub lambda: f64,
    /// Solver used by `solve` and for validation.
    pub solver: SolverConfig,
    /// Training settings; `train.solver` shares the step sizes of `solver`.
    pub train: TrainConfig,
    pub stride: usize,
    pub max_patches: Option<usize>,
    pub metrics: MetricSelection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let file = ConfigFile::load(path)?;
        file.check_schema(RUN_SCHEMA)?;
        let origin = path.display();
        let paths = file.section("paths");
        let run = file.section("run");
        let sol = file.section("solver");
        let tr = file.section("train");
        let met = file.section("metrics");

        let scene_dir = paths
            .path("scene")
            .ok_or_else(|| Error::Config(format!("{origin}: missing [paths] scene")))?;
        let output_dir = paths
            .path("output")
            .ok_or_else(|| Error::Config(format!("{origin}: missing [paths] output")))?;
        let solver = SolverConfig {
            eta: sol.get_or("eta", SolverConfig::default().eta)?,
            tau: sol.get_or("tau", SolverConfig::default().tau)?,
            num_pd_iters: sol.get_or("iterations", INFERENCE_ITERS)?,
            exact_adjoint_tv: sol.get_or("exact_adjoint_tv", true)?,
            record_states: false,
        };
        let ad = AdamConfig::default();
        let td = TrainConfig::default();
        let seed = run.get_or("seed", 0)?;
        let train = TrainConfig {
            alpha: tr.get_or("alpha", td.alpha)?,
            adam: AdamConfig {
                learning_rate: tr.get_or("learning_rate", ad.learning_rate)?,
                beta1: tr.get_or("beta1", ad.beta1)?,
                beta2: tr.get_or("beta2", ad.beta2)?,
                epsilon: tr.get_or("epsilon", ad.epsilon)?,
            },
            batch_size: tr.get_or("batch_size", td.batch_size)?,
            epochs: tr.get_or("epochs", td.epochs)?,
            seed,
            solver: SolverConfig {
                num_pd_iters: tr.get_or("iterations", TRAIN_ITERS)?,
                record_states: true,
                ..solver
            },
        };
        let cfg = RunConfig {
            scene_dir,
            output_dir,
            checkpoint: paths.path("checkpoint"),
            validation_scene: paths.path("validation_scene"),
            input: paths.path("input"),
            factor: run.get("factor")?,
            num_views: run.get("num_views")?,
            seed,
            lambda: sol.get_or("lambda", DEFAULT_LAMBDA)?,
            solver,
            train,
            stride: tr.get_or("stride", TRAIN_STRIDE)?,
            max_patches: tr.get("max_patches")?,
            metrics: MetricSelection {
                psnr: met.get_or("psnr", true)?,
                ssim: met.get_or("ssim", true)?,
                sre: met.get_or("sre", true)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Parameter(m) => Error::Config(m),
            other => other,
        };
        if let Some(f) = self.factor {
            check_factor(f)?;
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        self.solver.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        if !self.scene_dir.is_dir() {
            return Err(Error::Usage(format!(
                "scene directory {} does not exist",
                self.scene_dir.display()
            )));
        }
        for (what, p) in [
            ("checkpoint", &self.checkpoint),
            ("validation scene", &self.validation_scene),
            ("input", &self.input),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Usage(format!(
                        "{what} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    fn load_scene(&self, dir: &Path) -> Result<SceneBundle> {
        let bundle = read_bundle(dir, self.num_views)?;
        check_factor(bundle.meta.factor)?;
        if let Some(f) = self.factor {
            if f != bundle.meta.factor {
                return Err(Error::Config(format!(
                    "config asks for x{f}, scene {} is x{}",
                    dir.display(),
                    bundle.meta.factor
                )));
            }
        }
        Ok(bundle)
    }
}

fn write_report(dir: &Path, stem: &str, report: &MetricReport) -> Result<()> {
    write_text(
        &dir.join(format!("{stem}.txt")),
        &format!("{}\n", report.to_line()),
    )?;
    write_text(
        &dir.join(format!("{stem}.json")),
        &format!("{}\n", report.to_json()),
    )
}

/// Runs the solver (and the prior, with a checkpoint) on a scene bundle;
/// writes the texture as PFM and PNG plus `report.txt` / `report.json`.
pub fn solve(config: &Path) -> Result<MetricReport> {
    let cfg = RunConfig::load(config)?;
    let scene = cfg.load_scene(&cfg.scene_dir)?;
    let init = initial_atlas(&scene.views, &scene.chains)?;
    let mask = scene.truth.mask().and(init.mask());
    let (w, h) = scene.meta.tex_dims;
    let output = match &cfg.checkpoint {
        Some(path) => {
            let params = read_checkpoint(path)?.params;
            if params.tex_dims() != (w, h) || params.num_views() != scene.views.len() {
                return Err(Error::Usage(format!(
                    "checkpoint is for a {:?} texture with {} views, scene has {:?} with {}",
                    params.tex_dims(),
                    params.num_views(),
                    (w, h),
                    scene.views.len()
                )));
            }
            let sigmas = params.sigmas();
            let out = run_pipeline(
                &params,
                init.data(),
                &mask,
                &scene.views,
                &scene.chains,
                &params.lambda(),
                Some(&sigmas),
                &cfg.solver,
            )?;
            out.refined
        }
        None => {
            let lambda = WeightMap::constant(w, h, cfg.lambda)?;
            run_unrolled(
                init.data(),
                &scene.views,
                &scene.chains,
                &lambda,
                None,
                &cfg.solver,
            )?
            .t
        }
    };
    create_dir(&cfg.output_dir)?;
    write_pfm(&cfg.output_dir.join(OUTPUT_PFM), &output)?;
    write_png(&cfg.output_dir.join(OUTPUT_PNG), &output)?;
    let report = MetricReport::evaluate_selected(
        "texture_sr",
        &output,
        scene.truth.data(),
        &mask,
        cfg.metrics,
    )?;
    write_report(&cfg.output_dir, "report", &report)?;
    info!("{}", report.to_line());
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: f64,
    pub validation_psnr: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains on patches of the scene; writes `checkpoint_epoch_NNN.tsrc` after
/// every epoch and one line per epoch to `train_log.txt`.
pub fn train(config: &Path) -> Result<Vec<EpochSummary>> {
    let cfg = RunConfig::load(config)?;
    let scene = cfg.load_scene(&cfg.scene_dir)?;
    let validation = cfg
        .validation_scene
        .as_deref()
        .map(|d| cfg.load_scene(d))
        .transpose()?;
    let mut set = TrainingSet::from_scene(
        &scene.truth,
        &scene.views,
        &scene.chains,
        &scene.meta.sigmas,
        scene.meta.factor,
        cfg.stride,
    )?;
    if let Some(n) = cfg.max_patches {
        set.truncate(n);
    }
    if set.is_empty() {
        return Err(Error::Usage("no training patches".into()));
    }
    let (mut params, mut adam) = match &cfg.checkpoint {
        Some(path) => {
            let c = read_checkpoint(path)?;
            if c.params.tex_dims() != set.tex_dims || c.params.num_views() != scene.views.len() {
                return Err(Error::Usage(
                    "checkpoint does not match the training scene".into(),
                ));
            }
            (c.params, c.adam)
        }
        None => {
            let p = LearnableParams::new(set.tex_dims, &scene.meta.sigmas, cfg.seed)?;
            let n = p.len();
            (p, AdamState::new(n))
        }
    };
    info!("training on {} patches", set.len());
    create_dir(&cfg.output_dir)?;
    let mut log = String::new();
    let mut summaries = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        let metrics = train_epoch(&set, &mut params, &mut adam, &cfg.train, epoch as u64)?;
        let checkpoint = cfg
            .output_dir
            .join(format!("checkpoint_epoch_{:03}.tsrc", epoch + 1));
        write_checkpoint(&checkpoint, &params, &adam)?;
        let validation_psnr = match &validation {
            Some(v) => {
                let (out, mask) =
                    evaluate_pipeline(&params, &v.truth, &v.views, &v.chains, &cfg.solver)?;
                Some(psnr(&out.refined, v.truth.data(), &mask)?)
            }
            None => None,
        };
        write!(
            log,
            "epoch {} loss {:.9} data_l1 {:.9} sigma_reg {:.9}",
            epoch + 1,
            metrics.mean.total,
            metrics.mean.data_l1,
            metrics.mean.sigma_reg
        )
        .expect("writing to a string");
        if let Some(p) = validation_psnr {
            write!(log, " val_psnr {p:.6}").expect("writing to a string");
        }
        log.push('\n');
        write_text(&cfg.output_dir.join(TRAIN_LOG), &log)?;
        info!("{}", log.lines().last().unwrap_or_default());
        summaries.push(EpochSummary {
            epoch: epoch + 1,
            loss: metrics.mean.total,
            validation_psnr,
            checkpoint,
        });
    }
    Ok(summaries)
}

/// Scores a texture against the scene's truth over texels seen by at least
/// one view; writes `eval_report.txt` / `eval_report.json`.
pub fn eval(config: &Path) -> Result<MetricReport> {
    let cfg = RunConfig::load(config)?;
    let scene = cfg.load_scene(&cfg.scene_dir)?;
    let input = cfg
        .input
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(OUTPUT_PFM));
    if !input.exists() {
        return Err(Error::Usage(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let texture = read_pfm(&input)?;
    let init = initial_atlas(&scene.views, &scene.chains)?;
    let mask = scene.truth.mask().and(init.mask());
    let name = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "texture".into());
    let report =
        MetricReport::evaluate_selected(&name, &texture, scene.truth.data(), &mask, cfg.metrics)?;
    create_dir(&cfg.output_dir)?;
    write_report(&cfg.output_dir, "eval_report", &report)?;
    info!("{}", report.to_line());
    Ok(report)
}
