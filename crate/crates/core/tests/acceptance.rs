//! Acceptance suite: one test per criterion, each enforcing its tolerances
//! and runtime budget and printing a PASS line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::time::{Duration, Instant};

use puhdr::dataprep;
use puhdr::hdrio;
use puhdr::image::LinearImage;
use puhdr::jod::{self, Anchor, ComparisonMatrix};
use puhdr::lab;
use puhdr::metrics;
use puhdr::rawsim;
use puhdr::xfer::{self, Pu21Params};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::ContinuousCDF;

fn budget(criterion: &str, started: Instant, limit: Duration) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < limit,
        "{criterion}: runtime {elapsed:?} exceeded {limit:?}"
    );
    println!("acceptance {criterion}: PASS ({elapsed:?})");
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (lo_l, hi_l) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (lo_l + (hi_l - lo_l) * i as f64 / (n - 1) as f64).exp())
}

#[test]
fn criterion_1_pu21_exactness() {
    let started = Instant::now();
    let p = Pu21Params::default();

    assert_eq!(xfer::pu21_encode(0.005, &p).unwrap(), 0.0);

    // frozen 50-digit evaluation of the log-quadratic at the ceiling
    let ceiling = xfer::pu21_encode(10000.0, &p).unwrap();
    assert!((ceiling - 0.9992193486103145).abs() < 1e-9, "{ceiling}");

    for l in log_grid(0.005, 10000.0, 10_000) {
        let back = xfer::pu21_decode(xfer::pu21_encode(l, &p).unwrap(), &p).unwrap();
        assert!(
            ((back - l) / l).abs() < 1e-6,
            "roundtrip at {l}: {back}"
        );
    }

    budget("1 (PU21 exactness)", started, Duration::from_secs(1));
}

#[test]
fn criterion_2_encoding_ordering_experiment() {
    let started = Instant::now();
    let report = lab::autoencoder_ordering_experiment(&lab::AeConfig::default());

    assert!(
        report.err_linear > report.err_pu21,
        "linear {} must exceed pu21 {}",
        report.err_linear,
        report.err_pu21
    );
    assert!(
        report.err_linear > report.err_ldr,
        "linear {} must exceed ldr {}",
        report.err_linear,
        report.err_ldr
    );
    assert!(
        report.err_pu21 / report.err_ldr < 2.0,
        "pu21/ldr ratio {} out of range",
        report.err_pu21 / report.err_ldr
    );

    budget("2 (encoding ordering)", started, Duration::from_secs(120));
}

#[test]
fn criterion_3_dr_metric() {
    let started = Instant::now();

    let constant = LinearImage::from_fn(64, 64, |_, _| [25.0; 3]).unwrap();
    assert_eq!(metrics::effective_dr(&constant).dr_stops, 0.0);

    let plateau = LinearImage::from_fn(128, 64, |x, _| {
        let v = if x < 64 { 1.0 } else { 1024.0 };
        [v, v, v]
    })
    .unwrap();
    let stops = metrics::effective_dr(&plateau).dr_stops;
    assert!((stops - 10.0).abs() <= 0.1, "plateau fixture: {stops}");

    let gradient =
        rawsim::synth_radial_gradient(129, 4000.0, 0.005, rawsim::Chroma::White).unwrap();
    let ours = metrics::effective_dr(&gradient).dr_stops;
    let oracle = brute_force_dr(&gradient, 3.0, 0.5, 99.5);
    assert!(
        (ours - oracle).abs() < 0.1,
        "gradient: {ours} vs oracle {oracle}"
    );

    budget("3 (DR metric)", started, Duration::from_secs(5));
}

/// Independent single-pass reimplementation of the DR pipeline: direct 2-D
/// convolution in f64 and sort-based percentiles.
fn brute_force_dr(img: &LinearImage, sigma: f64, p_low: f64, p_high: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut luma = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = img.pixel(x, y);
            luma[y * w + x] = 0.2126 * r as f64 + 0.7152 * g as f64 + 0.0722 * b as f64;
        }
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let reflect = |i: isize, n: usize| -> usize {
        let p = 2 * n as isize;
        let mut m = i % p;
        if m < 0 {
            m += p;
        }
        if m < n as isize {
            m as usize
        } else {
            (p - 1 - m) as usize
        }
    };
    let mut smoothed = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (kj, wj) in taps.iter().enumerate() {
                let sy = reflect(y as isize + kj as isize - radius, h);
                for (ki, wi) in taps.iter().enumerate() {
                    let sx = reflect(x as isize + ki as isize - radius, w);
                    acc += wj * wi * luma[sy * w + sx];
                }
            }
            smoothed[y * w + x] = acc / (norm * norm);
        }
    }
    smoothed.sort_by(f64::total_cmp);
    let pick = |p: f64| {
        let rank = p / 100.0 * (smoothed.len() - 1) as f64;
        let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
        let frac = rank - lo as f64;
        smoothed[lo] * (1.0 - frac) + smoothed[hi] * frac
    };
    let low = pick(p_low).max(0.005);
    let high = pick(p_high).max(low);
    (high / low).log2()
}

#[test]
fn criterion_4_flow_matching_mechanism() {
    let started = Instant::now();

    // finite-difference agreement over 20 random configurations
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut checked = 0usize;
    let mut matched = 0usize;
    for config in 0..20 {
        let z_dim = rng.random_range(2..5usize);
        let cond_dim = if config % 2 == 0 {
            0
        } else {
            rng.random_range(1..3usize)
        };
        let hidden: Vec<usize> = (0..rng.random_range(1..3usize))
            .map(|_| rng.random_range(4..8usize))
            .collect();
        let net = lab::DenseNet::new(z_dim, cond_dim, &hidden, 1000 + config as u64);
        let batch_n = rng.random_range(4..9usize);
        let x0: Vec<f64> = (0..batch_n * z_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps: Vec<f64> = (0..batch_n * z_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..batch_n).map(|_| rng.random_range(0.05..0.95)).collect();
        let batch = lab::FlowBatch::new(x0, eps, t, z_dim).unwrap();
        let cond: Option<Vec<f64>> = (cond_dim > 0).then(|| {
            (0..batch_n * cond_dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        });
        let use_lora = config % 3 == 0;

        if use_lora {
            let mut adapter = lab::LoraAdapter::new(&net, 2, 2000 + config as u64);
            for layer in &mut adapter.layers {
                for b in &mut layer.b {
                    *b = rng.random_range(-0.2..0.2);
                }
            }
            let (_, grads) = lab::flow_loss_lora(&net, &adapter, &batch, cond.as_deref()).unwrap();
            let h = 1e-4;
            for l in 0..adapter.layers.len() {
                let n_a = adapter.layers[l].a.len();
                for p in 0..n_a + adapter.layers[l].b.len() {
                    let mut plus = adapter.clone();
                    let mut minus = adapter.clone();
                    if p < n_a {
                        plus.layers[l].a[p] += h;
                        minus.layers[l].a[p] -= h;
                    } else {
                        plus.layers[l].b[p - n_a] += h;
                        minus.layers[l].b[p - n_a] -= h;
                    }
                    let (lp, _) = lab::flow_loss_lora(&net, &plus, &batch, cond.as_deref()).unwrap();
                    let (lm, _) =
                        lab::flow_loss_lora(&net, &minus, &batch, cond.as_deref()).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let analytic = if p < n_a {
                        grads.layers[l].a[p]
                    } else {
                        grads.layers[l].b[p - n_a]
                    };
                    checked += 1;
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-10);
                    if rel < 1e-4 || (analytic - fd).abs() < 1e-7 {
                        matched += 1;
                    }
                }
            }
        } else {
            let (_, grads) = lab::flow_loss(&net, &batch, cond.as_deref()).unwrap();
            let h = 1e-4;
            for l in 0..net.layers.len() {
                let n_w = net.layers[l].weights.len();
                for p in 0..n_w + net.layers[l].bias.len() {
                    let mut plus = net.clone();
                    let mut minus = net.clone();
                    if p < n_w {
                        plus.layers[l].weights[p] += h;
                        minus.layers[l].weights[p] -= h;
                    } else {
                        plus.layers[l].bias[p - n_w] += h;
                        minus.layers[l].bias[p - n_w] -= h;
                    }
                    let (lp, _) = lab::flow_loss(&plus, &batch, cond.as_deref()).unwrap();
                    let (lm, _) = lab::flow_loss(&minus, &batch, cond.as_deref()).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let analytic = if p < n_w {
                        grads.layers[l].weights[p]
                    } else {
                        grads.layers[l].bias[p - n_w]
                    };
                    checked += 1;
                    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-10);
                    if rel < 1e-4 || (analytic - fd).abs() < 1e-7 {
                        matched += 1;
                    }
                }
            }
        }
    }
    assert!(
        matched as f64 >= 0.99 * checked as f64,
        "{matched}/{checked} gradients within tolerance"
    );

    // single-datapoint training, then Euler sampling onto the datapoint
    let x_star = vec![1.5, -1.0];
    let data = lab::Dataset::new(x_star.clone(), 2).unwrap();
    let mut net = lab::DenseNet::new(2, 0, &[64, 64, 64], 5);
    let cfg = lab::TrainConfig {
        steps: 2000,
        batch_size: 256,
        seed: 5,
        ..Default::default()
    };
    lab::train_net(&mut net, &data, &cfg).unwrap();
    let samples = lab::sample_flow(&net, None, 256, 64, None, 9);
    let norm = 2.0f64.sqrt();
    let close = samples
        .chunks(2)
        .filter(|s| {
            let dist = s
                .iter()
                .zip(&x_star)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / norm;
            dist < 0.05
        })
        .count();
    assert!(
        close as f64 >= 0.95 * 256.0,
        "{close}/256 samples within 0.05 normalized L2"
    );

    budget("4 (flow-matching mechanism)", started, Duration::from_secs(180));
}

#[test]
fn criterion_5_lora_algebra() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(50);

    // B = 0 no-op is bit-exact
    let net = lab::DenseNet::new(6, 2, &[24, 24], 51);
    let fresh = lab::LoraAdapter::new(&net, 8, 52);
    let merged = fresh.merge(&net);
    for _ in 0..16 {
        let z: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0.0..1.0);
        assert_eq!(net.forward(&z, t, Some(&c)), merged.forward(&z, t, Some(&c)));
    }

    // merged vs unmerged forward across the required ranks, α = r
    for rank in [1usize, 4, 32] {
        let mut adapter = lab::LoraAdapter::new(&net, rank, 53 + rank as u64);
        assert_eq!(adapter.layers[0].alpha, rank as f64);
        for layer in &mut adapter.layers {
            for b in &mut layer.b {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        let merged = adapter.merge(&net);
        for _ in 0..16 {
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let c: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let t = rng.random_range(0.0..1.0);
            let dense = merged.forward(&z, t, Some(&c));
            let low_rank = forward_unmerged(&net, &adapter, &z, t, Some(&c));
            for (a, b) in dense.iter().zip(&low_rank) {
                assert!(
                    (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0),
                    "rank {rank}: {a} vs {b}"
                );
            }
        }
    }

    budget("5 (LoRA algebra)", started, Duration::from_secs(10));
}

/// Forward pass keeping the base weights and low-rank path separate.
fn forward_unmerged(
    net: &lab::DenseNet,
    adapter: &lab::LoraAdapter,
    z: &[f64],
    t: f64,
    cond: Option<&[f64]>,
) -> Vec<f64> {
    let mut x = net.assemble_input(z, t, cond);
    for (layer, lora) in net.layers.iter().zip(&adapter.layers) {
        let mut pre: Vec<f64> = (0..layer.out_dim)
            .map(|o| {
                layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim]
                    .iter()
                    .zip(&x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + layer.bias[o]
            })
            .collect();
        let h = lora.down(&x);
        lora.up_into(&h, &mut pre);
        x = pre.iter().map(|&u| layer.activation.apply(u)).collect();
    }
    x
}

#[test]
fn criterion_6_jod_scaling() {
    let started = Instant::now();

    // 75/25 is one JOD by the unit's definition
    let m = ComparisonMatrix::new(
        vec!["a".into(), "b".into()],
        vec![vec![0, 75], vec![25, 0]],
    )
    .unwrap();
    let fit = jod::fit_jod(&m, Anchor::Reference(1)).unwrap();
    assert!(
        (fit.scores[0] - 1.0).abs() <= 0.02,
        "75/25 gap: {}",
        fit.scores[0]
    );

    // planted recovery at 500 trials per pair
    let planted = [0.0, 0.7, 1.9];
    let m = simulate_matrix(&planted, 500, 60);
    let fit = jod::fit_jod(&m, Anchor::Reference(0)).unwrap();
    for (got, want) in fit.scores.iter().zip(&planted) {
        assert!((got - want).abs() <= 0.15, "recovered {got} vs {want}");
    }

    // dense grid-search oracle on the anchored slice, step 0.01
    let m = simulate_matrix(&[0.0, 0.6, 1.3], 120, 61);
    let fit = jod::fit_jod(&m, Anchor::Reference(0)).unwrap();
    let oracle = grid_search_oracle(&m);
    for (got, want) in fit.scores.iter().zip(&oracle) {
        assert!((got - want).abs() <= 0.02, "fit {got} vs grid {want}");
    }

    // bootstrap coverage over 100 replications
    let planted = [0.0, 0.8, 1.6];
    let mut covered = 0usize;
    let mut total = 0usize;
    for rep in 0..100u64 {
        let m = simulate_matrix(&planted, 500, 600 + rep);
        let ci = jod::bootstrap_ci(&m, Anchor::Reference(0), 500, 900 + rep).unwrap();
        for c in 1..planted.len() {
            total += 1;
            if planted[c] >= ci.ci_low[c] && planted[c] <= ci.ci_high[c] {
                covered += 1;
            }
        }
    }
    assert!(
        covered as f64 >= 0.90 * total as f64,
        "coverage {covered}/{total}"
    );

    budget("6 (JOD scaling)", started, Duration::from_secs(120));
}

fn simulate_matrix(planted: &[f64], trials: u64, seed: u64) -> ComparisonMatrix {
    let k = planted.len();
    let normal = statrs::distribution::Normal::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![vec![0u64; k]; k];
    for i in 0..k {
        for j in (i + 1)..k {
            let p = normal.cdf((planted[i] - planted[j]) / jod::sigma_jod());
            let wins = (0..trials).filter(|_| rng.random::<f64>() < p).count() as u64;
            counts[i][j] = wins;
            counts[j][i] = trials - wins;
        }
    }
    ComparisonMatrix::new((0..k).map(|i| format!("c{i}")).collect(), counts).unwrap()
}

fn grid_search_oracle(m: &ComparisonMatrix) -> [f64; 3] {
    let normal = statrs::distribution::Normal::standard();
    let sigma = jod::sigma_jod();
    let ll = |q: &[f64; 3]| -> f64 {
        let mut total = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                // the public fit smooths unanimous pairs; this oracle fits
                // the same smoothed counts
                let (a, b) = (m.get(i, j) as f64, m.get(j, i) as f64);
                let c = if a + b > 0.0 && (a == 0.0 || b == 0.0) {
                    if m.get(i, j) == 0 {
                        0.5
                    } else {
                        a + 0.5
                    }
                } else {
                    a
                };
                if c > 0.0 {
                    total += c * normal.cdf((q[i] - q[j]) / sigma).max(f64::MIN_POSITIVE).ln();
                }
            }
        }
        total
    };
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i1 in -500..=500i64 {
        for i2 in -500..=500i64 {
            let q = [0.0, i1 as f64 * 0.01, i2 as f64 * 0.01];
            let value = ll(&q);
            if value > best.0 {
                best = (value, q);
            }
        }
    }
    best.1
}

#[test]
fn criterion_7_parsers() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(70);

    // random positive image with bounded per-pixel chroma spread, as shared
    // exponents require
    let img = LinearImage::from_fn(48, 32, |_, _| {
        let level: f32 = rng.random_range(-8.0..14.0f32).exp2();
        [(); 3].map(|_| level * rng.random_range(0.5..1.0f32))
    })
    .unwrap();

    for mode in [
        hdrio::RgbeScanlineMode::Flat,
        hdrio::RgbeScanlineMode::AdaptiveRle,
    ] {
        let (bytes, _) = hdrio::write_rgbe(&img, mode);
        let decoded = hdrio::read_rgbe(&bytes).unwrap();

        // code-value exactness: a second write/read cycle changes nothing
        let (bytes2, _) = hdrio::write_rgbe(&decoded, mode);
        assert_eq!(bytes, bytes2, "read->write->read not byte-stable");
        let decoded2 = hdrio::read_rgbe(&bytes2).unwrap();
        assert_eq!(decoded.data(), decoded2.data());

        // linear roundtrip error within 1%
        for (a, b) in decoded.data().iter().zip(img.data()) {
            let rel = ((*a as f64) - (*b as f64)).abs() / *b as f64;
            assert!(rel <= 0.01, "rgbe roundtrip rel {rel}");
        }
    }

    // PFM bit-exactness
    let pfm_bytes = hdrio::write_pfm(&img);
    let back = hdrio::read_pfm(&pfm_bytes).unwrap();
    for (a, b) in back.data().iter().zip(img.data()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(hdrio::write_pfm(&back), pfm_bytes);

    budget("7 (parsers)", started, Duration::from_secs(10));
}

#[test]
fn criterion_8_noise_law() {
    let started = Instant::now();

    let n = 1_000_000usize;
    let value = 10.0f32;
    let params = rawsim::NoiseParams {
        photon_gain: 400.0,
        read_sigma: 0.02,
        seed: 80,
    };
    let frame = rawsim::BayerFrame::new(1000, 1000, vec![value; n]).unwrap();
    let noisy = rawsim::add_noise(&frame, &params).unwrap();

    let mean: f64 = noisy.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var: f64 = noisy
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / (n - 1) as f64;
    let expected_var = value as f64 / params.photon_gain + params.read_sigma.powi(2);
    let se = (expected_var / n as f64).sqrt();

    assert!(
        (mean - value as f64).abs() < 3.0 * se,
        "mean {mean} vs {value} (se {se})"
    );
    assert!(
        ((var - expected_var) / expected_var).abs() < 0.05,
        "variance {var} vs {expected_var}"
    );

    budget("8 (noise law)", started, Duration::from_secs(30));
}

// Exercised here so the acceptance suite touches every external surface the
// later stages consume: encoded-image containers, EV rendering to PPM, crop
// manifests, and the Bayer sidecar format.
#[test]
fn external_surfaces_smoke() {
    let gradient =
        rawsim::synth_radial_gradient(64, 4000.0, 0.005, rawsim::Chroma::Yellow).unwrap();

    let rendered = dataprep::render_ev(&gradient, -4.0, None).unwrap();
    let ppm = hdrio::write_ppm8(&rendered).unwrap();
    assert!(ppm.starts_with(b"P6\n64 64\n255\n"));

    let manifest = dataprep::build_manifest(
        &[("gradient".to_string(), gradient.clone())],
        &[32],
        5.0,
        2,
        4000.0,
        1,
    );
    let json = serde_json::to_value(&manifest).unwrap();
    assert!(json["entries"].is_array());

    let frame = rawsim::mosaic(&gradient).unwrap();
    let (pfm, sidecar) = rawsim::bayer_to_pfm(&frame);
    let back = rawsim::bayer_from_pfm(&pfm, Some(&sidecar)).unwrap();
    assert_eq!(back, frame);

    // luminance map percentiles feed the DR report consumed downstream
    let report = metrics::effective_dr(&gradient);
    let serialized = serde_json::to_value(report).unwrap();
    for key in ["dr_stops", "l_low", "l_high", "sigma"] {
        assert!(serialized.get(key).is_some());
    }
}
