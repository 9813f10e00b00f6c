use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texsr::metrics::{psnr, sre, ssim, MetricReport, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use texsr::{Error, Mask, Raster};

fn random_pair(w: usize, h: usize, seed: u64) -> (Raster, Raster, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Raster::from_fn(w, h, |_, _| rng.random::<f64>());
    let y = Raster::from_fn(w, h, |i, j| {
        (x.get(i, j) + 0.2 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
    });
    // an irregular blob of invalid texels plus scattered holes
    let m = Mask::from_fn(w, h, |i, j| {
        let (dx, dy) = (i as f64 - 0.3 * w as f64, j as f64 - 0.6 * h as f64);
        dx * dx + dy * dy > 36.0 && rng.random::<f64>() > 0.1
    });
    (y, x, m)
}

fn valid_pairs<'a>(a: &'a Raster, b: &'a Raster, m: &'a Mask) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for j in 0..a.height() {
        for i in 0..a.width() {
            if m.get(i, j) {
                out.push((a.get(i, j), b.get(i, j)));
            }
        }
    }
    out
}

fn psnr_direct(a: &Raster, b: &Raster, m: &Mask) -> f64 {
    let pairs = valid_pairs(a, b, m);
    let mse = pairs.iter().map(|(p, q)| (p - q).powi(2)).sum::<f64>() / pairs.len() as f64;
    -10.0 * mse.log10()
}

fn sre_direct(a: &Raster, b: &Raster, m: &Mask) -> f64 {
    let pairs = valid_pairs(a, b, m);
    let n = pairs.len() as f64;
    let mu = pairs.iter().map(|(_, q)| q).sum::<f64>() / n;
    let err: f64 = pairs.iter().map(|(p, q)| (p - q).powi(2)).sum();
    10.0 * (mu * mu / (err / n)).log10()
}

/// Per-window SSIM with explicit two-pass weighted moments.
fn ssim_direct(a: &Raster, b: &Raster, m: &Mask) -> f64 {
    let k = SSIM_WINDOW;
    let r = (k / 2) as f64;
    let mut g = vec![vec![0.0; k]; k];
    for (v, row) in g.iter_mut().enumerate() {
        for (u, e) in row.iter_mut().enumerate() {
            let d2 = (u as f64 - r).powi(2) + (v as f64 - r).powi(2);
            *e = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let (mut total, mut count) = (0.0, 0usize);
    for y0 in 0..=a.height() - k {
        for x0 in 0..=a.width() - k {
            let mut taps = Vec::new();
            for (v, row) in g.iter().enumerate() {
                for (u, &wgt) in row.iter().enumerate() {
                    if m.get(x0 + u, y0 + v) {
                        taps.push((wgt, a.get(x0 + u, y0 + v), b.get(x0 + u, y0 + v)));
                    }
                }
            }
            if 2 * taps.len() < k * k {
                continue;
            }
            let z: f64 = taps.iter().map(|t| t.0).sum();
            let mx = taps.iter().map(|t| t.0 * t.1).sum::<f64>() / z;
            let my = taps.iter().map(|t| t.0 * t.2).sum::<f64>() / z;
            let vx = taps.iter().map(|t| t.0 * (t.1 - mx).powi(2)).sum::<f64>() / z;
            let vy = taps.iter().map(|t| t.0 * (t.2 - my).powi(2)).sum::<f64>() / z;
            let cxy = taps
                .iter()
                .map(|t| t.0 * (t.1 - mx) * (t.2 - my))
                .sum::<f64>()
                / z;
            total += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn psnr_and_sre_match_direct_formulas() {
    for seed in 0..20 {
        let (a, b, m) = random_pair(23 + seed as usize % 7, 19 + seed as usize % 5, seed);
        let (p, q) = (psnr(&a, &b, &m).unwrap(), psnr_direct(&a, &b, &m));
        assert!((p - q).abs() <= 1e-10, "psnr seed {seed}: {p} vs {q}");
        let (s, t) = (sre(&a, &b, &m).unwrap(), sre_direct(&a, &b, &m));
        assert!((s - t).abs() <= 1e-10, "sre seed {seed}: {s} vs {t}");
    }
}

#[test]
fn ssim_matches_per_window_oracle() {
    for seed in 0..10 {
        let (a, b, m) = random_pair(24 + seed as usize % 4, 20 + seed as usize % 3, 100 + seed);
        let (s, o) = (ssim(&a, &b, &m).unwrap(), ssim_direct(&a, &b, &m));
        assert!((s - o).abs() <= 1e-8, "seed {seed}: {s} vs {o}");
        assert!((-1.0..=1.0).contains(&s));
    }
}

#[test]
fn worked_examples() {
    let x = Raster::filled(16, 16, 0.5);
    let full = Mask::full(16, 16);
    let e = x.map(|v| v + 0.05);
    let v = sre(&e, &x, &full).unwrap();
    // 0.05 has no exact binary form; the difference 0.55 − 0.5 is off by 4e-17
    assert!((v - 20.0).abs() <= 1e-12, "{v}");
    let r = MetricReport::evaluate("worked", &e, &x, &full).unwrap();
    assert!(r.to_line().ends_with(" 20.0000 256"), "{}", r.to_line());

    let p = psnr(&x.map(|v| v - 0.1), &x, &full).unwrap();
    assert!((p - 20.0).abs() <= 1e-12, "{p}");
    assert_eq!(psnr(&x, &x, &full).unwrap(), f64::INFINITY);
    assert_eq!(sre(&x, &x, &full).unwrap(), f64::INFINITY);
    assert!((ssim(&x, &x, &full).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn metrics_ignore_invalid_texels() {
    let (a, b, m) = random_pair(30, 26, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let scramble = |r: &Raster, rng: &mut ChaCha8Rng| {
        Raster::from_fn(r.width(), r.height(), |i, j| {
            if m.get(i, j) {
                r.get(i, j)
            } else {
                rng.random::<f64>() * 50.0 - 25.0
            }
        })
    };
    let (a2, b2) = (scramble(&a, &mut rng), scramble(&b, &mut rng));
    assert_eq!(psnr(&a, &b, &m).unwrap(), psnr(&a2, &b2, &m).unwrap());
    assert_eq!(sre(&a, &b, &m).unwrap(), sre(&a2, &b2, &m).unwrap());
    assert!((ssim(&a, &b, &m).unwrap() - ssim(&a2, &b2, &m).unwrap()).abs() <= 1e-12);
}

#[test]
fn swapping_arguments() {
    let (a, b, m) = random_pair(20, 20, 3);
    assert_eq!(psnr(&a, &b, &m).unwrap(), psnr(&b, &a, &m).unwrap());
    // equal means make SRE symmetric too
    let c = b.map(|v| 1.0 - v);
    let d = b.clone();
    let full = Mask::full(20, 20);
    let shift = |r: &Raster, s: f64| r.map(|v| v + s);
    let mean = |r: &Raster| r.as_slice().iter().sum::<f64>() / r.len() as f64;
    let c = shift(&c, mean(&d) - mean(&c));
    assert!((sre(&c, &d, &full).unwrap() - sre(&d, &c, &full).unwrap()).abs() <= 1e-12);
}

#[test]
fn errors_are_explicit() {
    let x = Raster::filled(12, 12, 0.3);
    assert!(matches!(
        psnr(&x, &x, &Mask::empty(12, 12)),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        sre(&x, &Raster::zeros(12, 12), &Mask::full(12, 12)),
        Err(Error::Undefined(_))
    ));
    let small = Raster::zeros(10, 30);
    assert!(matches!(
        ssim(&small, &small, &Mask::full(10, 30)),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        psnr(&x, &small, &Mask::full(12, 12)),
        Err(Error::Dimension(_))
    ));
}
