use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use texsr::atlas::initial_atlas;
use texsr::io::{read_bundle, read_pfm};

fn texsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texsr"))
        .args(args)
        .current_dir(dir)
        .env_remove("TEXSR_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const SCENE: &str = "[paths]\noutput = bundle\n\n[scene]\nwidth = 32\nheight = 28\nnum_views = 4\nfactor = 2\n\
                     sigma = 0.8, 0.9, 1.0, 0.7\nflow_amplitude = 0.4\nseed = 3\ntexture = checker:4\n";

fn synth_scene(dir: &Path) {
    fs::write(dir.join("scene.cfg"), SCENE).unwrap();
    let out = texsr(dir, &["synth", "scene.cfg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_config(dir: &Path, name: &str, body: &str) {
    fs::write(dir.join(name), body).unwrap();
}

#[test]
fn synth_writes_the_whole_bundle() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    let b = dir.path().join("bundle");
    for f in ["scene.cfg", "gt.pfm"] {
        assert!(b.join(f).is_file(), "{f}");
    }
    for id in 0..4 {
        for (sub, ext) in [("views", "pfm"), ("chains", "tsr1"), ("flows", "pfm")] {
            let p = b.join(sub).join(format!("view_{id:03}.{ext}"));
            assert!(p.is_file(), "{}", p.display());
        }
    }
    let scene = fs::read_to_string(b.join("scene.cfg")).unwrap();
    assert!(scene.contains("sigma = 0.8, 0.9, 1, 0.7"), "{scene}");
    assert!(scene.contains("texture = checker:4"), "{scene}");
}

#[test]
fn zero_iterations_write_the_initial_atlas() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    run_config(
        dir.path(),
        "run.cfg",
        "[paths]\nscene = bundle\noutput = out\n\n[solver]\niterations = 0\n",
    );
    let out = texsr(dir.path(), &["solve", "run.cfg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("texture_sr "), "{stdout}");

    let bundle = read_bundle(&dir.path().join("bundle"), None).unwrap();
    let init = initial_atlas(&bundle.views, &bundle.chains).unwrap();
    let written = read_pfm(&dir.path().join("out/texture_sr.pfm")).unwrap();
    assert_eq!(written, init.data().map(|v| v as f32 as f64));
    for f in ["texture_sr.png", "report.txt", "report.json"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        synth_scene(dir.path());
        run_config(
            dir.path(),
            "run.cfg",
            "[paths]\nscene = bundle\noutput = out\n\n[solver]\niterations = 80\n",
        );
        assert_eq!(code(&texsr(dir.path(), &["solve", "run.cfg"])), 0);
        let eval = texsr(dir.path(), &["eval", "run.cfg"]);
        assert_eq!(code(&eval), 0);
        let files: Vec<Vec<u8>> = [
            "bundle/views/view_002.pfm",
            "out/texture_sr.pfm",
            "out/report.txt",
            "out/eval_report.json",
        ]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
        (files, eval.stdout)
    };
    let (a, sa) = run();
    let (b, sb) = run();
    assert_eq!(a, b);
    assert_eq!(sa, sb);
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    synth_scene(dir.path());
    run_config(
        dir.path(),
        "run.cfg",
        "[paths]\nscene = bundle\noutput = out\n\n[solver]\niterations = 30\n",
    );
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_texsr"))
            .args(["solve", "run.cfg"])
            .current_dir(dir.path())
            .env("TEXSR_THREADS", threads)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        outputs.push(fs::read(dir.path().join("out/texture_sr.pfm")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_then_solve_with_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("scene.cfg"),
        "[paths]\noutput = bundle\n\n[scene]\nwidth = 64\nheight = 64\nnum_views = 2\nseed = 5\ntexture = mixed\n",
    )
    .unwrap();
    assert_eq!(code(&texsr(dir.path(), &["synth", "scene.cfg"])), 0);
    run_config(
        dir.path(),
        "train.cfg",
        "[paths]\nscene = bundle\noutput = train\nvalidation_scene = bundle\n\n[solver]\niterations = 5\n\n\
         [train]\niterations = 5\nepochs = 2\nbatch_size = 1\nlearning_rate = 0.01\n",
    );
    let out = texsr(dir.path(), &["train", "train.cfg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    assert!(stdout.lines().all(|l| l.contains(" val_psnr ")), "{stdout}");
    let log = fs::read_to_string(dir.path().join("train/train_log.txt")).unwrap();
    assert!(log.starts_with("epoch 1 loss "), "{log}");
    assert!(dir.path().join("train/checkpoint_epoch_002.tsrc").is_file());

    run_config(
        dir.path(),
        "solve.cfg",
        "[paths]\nscene = bundle\noutput = out\ncheckpoint = train/checkpoint_epoch_002.tsrc\n\n[solver]\niterations = 5\n",
    );
    let out = texsr(dir.path(), &["solve", "solve.cfg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&texsr(d, &["--help"])), 0);
    assert_eq!(code(&texsr(d, &["frobnicate"])), 2);
    assert_eq!(code(&texsr(d, &["solve"])), 2);

    let missing = texsr(d, &["solve", "absent.cfg"]);
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error: "));

    run_config(d, "noscene.cfg", "[paths]\nscene = nope\noutput = out\n");
    assert_eq!(code(&texsr(d, &["solve", "noscene.cfg"])), 2);
    run_config(
        d,
        "typo.cfg",
        "[paths]\nscene = .\noutput = out\n\n[solver]\niteratons = 3\n",
    );
    assert_eq!(code(&texsr(d, &["solve", "typo.cfg"])), 2);

    synth_scene(d);
    run_config(
        d,
        "run.cfg",
        "[paths]\nscene = bundle\noutput = out\n\n[solver]\niterations = 3\n",
    );
    let capped = Command::new(env!("CARGO_BIN_EXE_texsr"))
        .args(["solve", "run.cfg"])
        .current_dir(d)
        .env("TEXSR_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&capped), 2);

    run_config(
        d,
        "wide.cfg",
        "[paths]\nscene = bundle\noutput = out\n\n[run]\nfactor = 4\n",
    );
    assert_eq!(code(&texsr(d, &["solve", "wide.cfg"])), 2);

    run_config(
        d,
        "blowup.cfg",
        "[paths]\nscene = bundle\noutput = out\n\n[solver]\niterations = 50\neta = 1e300\ntau = 1e300\n",
    );
    let blowup = texsr(d, &["solve", "blowup.cfg"]);
    assert_eq!(
        code(&blowup),
        1,
        "{}",
        String::from_utf8_lossy(&blowup.stderr)
    );

    fs::write(d.join("bundle/views/view_001.pfm"), b"Pf\n2 2\n-1.0\n").unwrap();
    assert_eq!(code(&texsr(d, &["solve", "run.cfg"])), 3);
}
