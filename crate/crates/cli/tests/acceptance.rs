//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p repstat-cli --test acceptance`.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repstat_cli::correlation::{pearson, pearson_r, t_test_p};
use repstat_core::cka::{linear_cka, linear_cka_with, CkaOptions, CkaVariant};
use repstat_core::cluster::{
    auc_binary, avg_u_labels, avg_u_oracle_labels, normalization_delta, DistanceSpec, UResult,
};
use repstat_core::features::{
    f0_track, formants, mfcc, spectral_centroid, stft_power, FeatureConfig, WaveBuffer,
};
use repstat_core::pool::{column_moments, pool, stack_layers, zscore, PoolingSpec};
use repstat_core::segments::{Segment, SegmentTable};
use repstat_core::tensor::{read_tensor, write_tensor};
use repstat_core::{FrameMatrix, LabelKey, PooledMatrix};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

fn labels(n: usize, k: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{}", i % k)).collect()
}

fn matrix(cols: usize, data: Vec<f64>, labels: &[String]) -> PooledMatrix {
    PooledMatrix::with_classes(cols, data, labels).unwrap()
}

fn rept_round_trip() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut floats = 0usize;
    for i in 0..1000 {
        let rows = rng.random_range(1..=200);
        let cols = rng.random_range(1..=1024);
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| loop {
                let v = f32::from_bits(rng.random());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let m = FrameMatrix::new(format!("u{i}"), rows, cols, data, 50.0, 0.01).unwrap();
        let path = dir.path().join("m.rept");
        write_tensor(&m, &path).map_err(|e| e.to_string())?;
        let back = read_tensor(&path).map_err(|e| e.to_string())?;
        ensure((back.rows(), back.cols()) == (rows, cols), || format!("matrix {i}: shape"))?;
        ensure(
            back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("matrix {i}: payload differs"),
        )?;
        floats += rows * cols;
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("1000 matrices, {floats} floats bit-exact in {:.1?}", start.elapsed()))
}

/// Random orthogonal matrix by Gram-Schmidt on a Gaussian matrix (columns).
fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for _ in 0..2 {
            for u in &q {
                let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= p * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|a| a / norm).collect());
    }
    q
}

fn times(x: &[f64], d: usize, q: &[Vec<f64>]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| q.iter().map(move |col| row.iter().zip(col).map(|(a, b)| a * b).sum::<f64>()))
        .collect()
}

fn cka_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200;
    let l = labels(n, 4);
    let mut worst = [0.0f64; 4];
    let dims = [8, 32, 256];
    let rotations: Vec<Vec<Vec<f64>>> = dims.iter().map(|&d| orthogonal(&mut rng, d)).collect();
    for i in 0..100 {
        let di = i % 3;
        let d = dims[di];
        let xd: Vec<f64> = (0..n * d).map(|_| gaussian(&mut rng)).collect();
        let dy = rng.random_range(2..40);
        let yd: Vec<f64> = (0..n * dy).map(|_| gaussian(&mut rng)).collect();
        let a = rng.random_range(0.001..1000.0);
        let x = matrix(d, xd.clone(), &l);
        let y = matrix(dy, yd, &l);
        let xs = matrix(d, xd.iter().map(|v| a * v).collect(), &l);
        let xq = matrix(d, times(&xd, d, &rotations[di]), &l);
        for v in [CkaVariant::LiteralCorr, CkaVariant::CenteredFeature] {
            let cka = |p: &PooledMatrix, q: &PooledMatrix| linear_cka(p, q, v).map_err(|e| e.to_string());
            let base = cka(&x, &y)?;
            worst[0] = worst[0].max((cka(&x, &x)? - 1.0).abs());
            worst[1] = worst[1].max((cka(&xq, &y)? - base).abs());
            worst[2] = worst[2].max((cka(&xs, &y)? - base).abs());
            worst[3] = worst[3].max((cka(&y, &x)? - base).abs());
        }
    }
    ensure(worst[0] < 1e-9, || format!("self {:e}", worst[0]))?;
    ensure(worst[1] < 1e-8, || format!("orthogonal {:e}", worst[1]))?;
    ensure(worst[2] < 1e-8, || format!("scale {:e}", worst[2]))?;
    ensure(worst[3] < 1e-12, || format!("symmetry {:e}", worst[3]))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "max deviations self {:.1e}, orthogonal {:.1e}, scale {:.1e}, symmetry {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

/// Pearson correlation of the explicitly flattened Gram matrices.
fn flattened_gram_corr(x: &PooledMatrix, y: &PooledMatrix) -> f64 {
    let n = x.rows();
    let gram = |m: &PooledMatrix| -> Vec<f64> {
        let mut g = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                g.push(m.row(i).iter().zip(m.row(j)).map(|(a, b)| a * b).sum());
            }
        }
        g
    };
    let (a, b) = (gram(x), gram(y));
    let len = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / len, b.iter().sum::<f64>() / len);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (p, q) in a.iter().zip(&b) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn cka_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pools: Vec<rayon::ThreadPool> = [1, 2, 8]
        .iter()
        .map(|&t| rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap())
        .collect();
    let mut worst = 0.0f64;
    for i in 0..50 {
        let n = rng.random_range(3..=300);
        let (dx, dy) = (rng.random_range(1..48), rng.random_range(1..48));
        let l = labels(n, 2);
        let x = matrix(dx, (0..n * dx).map(|_| rng.random_range(-2.0..2.0)).collect(), &l);
        let y = matrix(dy, (0..n * dy).map(|_| rng.random_range(-2.0..2.0)).collect(), &l);
        let reference = linear_cka(&x, &y, CkaVariant::LiteralCorr).map_err(|e| e.to_string())?;
        worst = worst.max((reference - flattened_gram_corr(&x, &y)).abs());
        for block in [1, 7, 64, n] {
            for p in &pools {
                let v = p
                    .install(|| linear_cka_with(&x, &y, CkaVariant::LiteralCorr, &CkaOptions { block_rows: block }))
                    .map_err(|e| e.to_string())?;
                ensure(v.to_bits() == reference.to_bits(), || {
                    format!("pair {i}: block {block}, {} threads gave {v} vs {reference}", p.current_num_threads())
                })?;
            }
        }
    }
    ensure(worst < 1e-10, || format!("max oracle deviation {worst:e}"))?;
    Ok(format!(
        "50 pairs, max oracle deviation {worst:.1e}; identical bits for 4 block sizes x 3 thread counts"
    ))
}

fn check_points(r: &UResult) -> Result<(), String> {
    for p in &r.per_point {
        ensure(p.u1_twice + p.u2_twice == 2 * (p.n1 * p.n2) as u64, || {
            format!("point {}: U1'+U2' != n1 n2", p.index)
        })?;
        ensure((0.5..=1.0).contains(&p.u), || format!("point {}: U_x = {}", p.index, p.u))?;
    }
    Ok(())
}

fn avg_u_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = DistanceSpec::default();
    let (mut points, mut tied_instances, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..200 {
        let n = rng.random_range(4..=400);
        let k = rng.random_range(2..=10);
        let d = rng.random_range(1..6);
        let ties = i % 2 == 1;
        tied_instances += ties as usize;
        let data: Vec<f64> = (0..n * d)
            .map(|_| if ties { rng.random_range(0..4) as f64 } else { gaussian(&mut rng) })
            .collect();
        let l: Vec<String> = (0..n).map(|_| format!("c{}", rng.random_range(0..k))).collect();
        let x = matrix(d, data, &l);
        let (fast, slow) = match (avg_u_labels(&x, &l, &spec), avg_u_oracle_labels(&x, &l, &spec)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(a), Err(b)) if a.to_string() == b.to_string() => continue,
            (a, b) => return Err(format!("instance {i}: {:?} vs {:?}", a.err(), b.err())),
        };
        worst = worst.max((fast.avg_u - slow.avg_u).abs());
        for (p, q) in fast.per_point.iter().zip(&slow.per_point) {
            ensure(p.index == q.index, || format!("instance {i}: point sets differ"))?;
            worst = worst.max((p.u - q.u).abs());
        }
        ensure(fast.per_point.len() == slow.per_point.len(), || format!("instance {i}: counts"))?;
        check_points(&fast)?;
        points += fast.per_point.len();
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!(
        "200 instances ({tied_instances} with integer-grid ties), {points} points, max deviation {worst:e}, in {:.1?}",
        start.elapsed()
    ))
}

fn two_gaussians(rng: &mut ChaCha8Rng, per_class: usize, d: usize, sep: f64) -> (Vec<f64>, Vec<String>) {
    let mut data = Vec::new();
    let mut l = Vec::new();
    for c in 0..2 {
        for _ in 0..per_class {
            data.extend((0..d).map(|j| gaussian(rng) + if j == 0 { sep * c as f64 } else { 0.0 }));
            l.push(format!("c{c}"));
        }
    }
    (data, l)
}

fn range_and_null() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = DistanceSpec::default();
    let (data, l) = two_gaussians(&mut rng, 100, 8, 10.0);
    let separated = avg_u_labels(&matrix(8, data, &l), &l, &spec).map_err(|e| e.to_string())?;
    check_points(&separated)?;
    let (data, mut l) = two_gaussians(&mut rng, 200, 8, 10.0);
    l.shuffle(&mut rng);
    let null = avg_u_labels(&matrix(8, data, &l), &l, &spec).map_err(|e| e.to_string())?;
    check_points(&null)?;
    ensure(separated.avg_u >= 0.99, || format!("separated AvgU {}", separated.avg_u))?;
    ensure(null.avg_u <= 0.55, || format!("null AvgU {}", null.avg_u))?;
    Ok(format!(
        "separated AvgU {:.4}, permuted-label AvgU {:.4}, all U_x in [0.5, 1]",
        separated.avg_u, null.avg_u
    ))
}

/// Trapezoidal area under the empirical ROC curve.
fn roc_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    let (mut area, mut prev) = (0.0, (0.0, 0.0));
    for t in thresholds {
        let tp = scores.iter().zip(positive).filter(|(s, &b)| b && **s >= t).count() as f64;
        let fp = scores.iter().zip(positive).filter(|(s, &b)| !b && **s >= t).count() as f64;
        let point = (fp / n, tp / p);
        area += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        prev = point;
    }
    area
}

fn auc_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut tied = 0;
    for i in 0..100 {
        let n = rng.random_range(2..=60);
        let ties = i % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if ties { rng.random_range(0..5) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        positive[0] = true;
        positive[1] = false;
        tied += ties as usize;
        let a = auc_binary(&scores, &positive).map_err(|e| e.to_string())?;
        worst = worst.max((a - roc_auc(&scores, &positive)).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances ({tied} with ties), max deviation {worst:.1e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn dsp_checks() -> Outcome {
    let cfg = FeatureConfig::default();
    let sr = common::SR;
    let srf = sr as f64;

    let saw: Vec<f64> = (0..sr).map(|i| 0.6 * (2.0 * (220.0 * i as f64 / srf).fract() - 1.0)).collect();
    let f0 = f0_track(&WaveBuffer::new(saw, sr).unwrap(), &cfg).map_err(|e| e.to_string())?;
    let voiced: Vec<f64> = (0..f0.rows()).filter(|&k| f0.get(k, 1) == 1.0).map(|k| f0.get(k, 0) as f64).collect();
    ensure(!voiced.is_empty(), || "no voiced frames".into())?;
    let f0_med = median(voiced);
    ensure((f0_med - 220.0).abs() <= 2.0, || format!("median F0 {f0_med}"))?;

    let period = srf / 120.0;
    let mut x: Vec<f64> = (0..8000).map(|i| if (i as f64 % period) < 1.0 { 1.0 } else { 0.0 }).collect();
    for (f, bw) in [(700.0, 80.0), (1200.0, 90.0)] {
        let r = (-PI * bw / srf).exp();
        let (a1, a2) = (2.0 * r * (2.0 * PI * f / srf).cos(), -r * r);
        let (mut y1, mut y2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = *v + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let w = WaveBuffer::new(x.iter().map(|v| 0.5 * v / peak).collect(), sr).unwrap();
    let fm = formants(&w, &cfg).map_err(|e| e.to_string())?;
    let f1 = median((0..fm.rows()).map(|k| fm.get(k, 0) as f64).collect());
    let f2 = median((0..fm.rows()).map(|k| fm.get(k, 1) as f64).collect());
    ensure((f1 - 700.0).abs() <= 50.0, || format!("F1 {f1}"))?;
    ensure((f2 - 1200.0).abs() <= 75.0, || format!("F2 {f2}"))?;

    let fr = cfg.framing(sr).unwrap();
    let bin = srf / fr.fft_size as f64;
    let sine: Vec<f64> = (0..8000).map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / srf).sin()).collect();
    let c = spectral_centroid(&WaveBuffer::new(sine, sr).unwrap(), &cfg).map_err(|e| e.to_string())?;
    let centroid = (0..c.rows()).map(|k| c.get(k, 0) as f64).sum::<f64>() / c.rows() as f64;
    ensure((centroid - 1000.0).abs() <= bin, || format!("centroid {centroid}"))?;

    let m = mfcc(&WaveBuffer::new(vec![0.25; 8000], sr).unwrap(), &cfg).map_err(|e| e.to_string())?;
    ensure(m.cols() == 39, || format!("{} MFCC columns", m.cols()))?;
    ensure((0..m.rows()).all(|k| m.row(k)[13..].iter().all(|&v| v == 0.0)), || "non-zero deltas".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise: Vec<f64> = (0..8000).map(|_| rng.random_range(-0.5..0.5)).collect();
    let p = stft_power(&WaveBuffer::new(noise.clone(), sr).unwrap(), &cfg).map_err(|e| e.to_string())?;
    let hann: Vec<f64> = (0..fr.window).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / fr.window as f64).cos()).collect();
    let half = fr.fft_size / 2;
    let mut worst = 0.0f64;
    for k in 0..p.rows() {
        let energy: f64 = noise[k * fr.hop..k * fr.hop + fr.window]
            .iter()
            .zip(&hann)
            .map(|(a, h)| (a * h).powi(2))
            .sum();
        let row = p.row(k);
        let spec = (row[0] as f64 + row[half] as f64 + 2.0 * row[1..half].iter().map(|&v| v as f64).sum::<f64>())
            / fr.fft_size as f64;
        worst = worst.max((spec - energy).abs() / energy);
    }
    ensure(worst <= 1e-5, || format!("Parseval relative error {worst:e}"))?;
    Ok(format!(
        "F0 {f0_med:.2} Hz, F1 {f1:.1} Hz, F2 {f2:.1} Hz, centroid {centroid:.1} Hz (bin {bin} Hz), Parseval {worst:.1e}"
    ))
}

fn pooling_and_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, d, rate, t0) = (300, 12, 100.0, 0.0125);
    let data: Vec<f32> = (0..n * d).map(|_| rng.random_range(-5.0..5.0)).collect();
    let frames = FrameMatrix::new("u", n, d, data, rate, t0).unwrap();
    let mut rows = Vec::new();
    let mut t = 0.0;
    while t < 2.9 {
        let end = t + rng.random_range(0.01..0.2);
        rows.push(Segment {
            utterance_id: "u".into(),
            start: t,
            end,
            phone: ["aa", "s", "iy", "t"][rng.random_range(0..4)].into(),
            speaker: "s1".into(),
            dataset: "d".into(),
            gender: "f".into(),
        });
        t = end;
    }
    let segs = SegmentTable { rows };
    let pooled = pool(&frames, &segs, &PoolingSpec::default()).map_err(|e| e.to_string())?.pooled;
    let mut worst_pool = 0.0f64;
    for (r, label) in pooled.labels().iter().enumerate() {
        let members: Vec<usize> = (0..n)
            .filter(|&k| {
                let c = t0 + k as f64 / rate;
                c >= label.start && c < label.end
            })
            .collect();
        for c in 0..d {
            let mean = members.iter().map(|&k| frames.get(k, c) as f64).sum::<f64>() / members.len() as f64;
            worst_pool = worst_pool.max((pooled.row(r)[c] - mean).abs());
        }
    }
    ensure(worst_pool <= 1e-12, || format!("pooling deviation {worst_pool:e}"))?;

    let l: Vec<String> = (0..400).map(|i| format!("p{}", i % 6)).collect();
    let raw: Vec<f64> = (0..400 * 10).map(|i| 50.0 * (i % 10) as f64 + (1.0 + (i % 10) as f64) * gaussian(&mut rng)).collect();
    let x = matrix(10, raw, &l);
    let z = zscore(&x).map_err(|e| e.to_string())?.matrix;
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for (mean, std) in column_moments(&z) {
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    ensure(worst_mean < 1e-9, || format!("column mean {worst_mean:e}"))?;
    ensure(worst_std <= 1e-6, || format!("column std off by {worst_std:e}"))?;
    let zz = zscore(&z).map_err(|e| e.to_string())?.matrix;
    let idem = z.data().iter().zip(zz.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    ensure(idem < 1e-9, || format!("zscore not idempotent: {idem:e}"))?;

    let layers: Vec<PooledMatrix> = (0..4)
        .map(|k| {
            let data: Vec<f64> = (0..400 * 6).map(|i| (k + 1) as f64 * gaussian(&mut rng) + (i % 6) as f64).collect();
            zscore(&matrix(6, data, &l)).unwrap().matrix
        })
        .collect();
    let stack = stack_layers("z", layers).map_err(|e| e.to_string())?;
    let delta = normalization_delta(&stack, LabelKey::Phone, &DistanceSpec::default()).map_err(|e| e.to_string())?;
    let worst_delta = delta.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(worst_delta < 1e-9, || format!("normalization delta {worst_delta:e}"))?;
    Ok(format!(
        "{} segments, pooling {worst_pool:.1e}, mean {worst_mean:.1e}, std {worst_std:.1e}, idempotence {idem:.1e}, delta {worst_delta:.1e}",
        pooled.rows()
    ))
}

fn speaker_phone_tradeoff() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n_phones, n_speakers, per_cell, d) = (8, 6, 8, 16);
    let unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / norm).collect()
    };
    let phone_means: Vec<Vec<f64>> = (0..n_phones).map(|_| unit(&mut rng).iter().map(|a| 2.0 * a).collect()).collect();
    let speaker_dirs: Vec<Vec<f64>> = (0..n_speakers).map(|_| unit(&mut rng)).collect();
    let mut cells = Vec::new();
    for p in 0..n_phones {
        for s in 0..n_speakers {
            for _ in 0..per_cell {
                let noise: Vec<f64> = (0..d).map(|_| 0.6 * gaussian(&mut rng)).collect();
                cells.push((p, s, noise));
            }
        }
    }
    let phones: Vec<String> = cells.iter().map(|c| format!("p{}", c.0)).collect();
    let speakers: Vec<String> = cells.iter().map(|c| format!("s{}", c.1)).collect();
    let spec = DistanceSpec::default();
    let mut sweep = Vec::new();
    for offset in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let data: Vec<f64> = cells
            .iter()
            .flat_map(|(p, s, noise)| (0..d).map(move |j| (p, s, noise, j)))
            .map(|(p, s, noise, j)| phone_means[*p][j] + offset * speaker_dirs[*s][j] + noise[j])
            .collect();
        let x = matrix(d, data, &phones);
        let su = avg_u_labels(&x, &speakers, &spec).map_err(|e| e.to_string())?.avg_u;
        let pu = avg_u_labels(&x, &phones, &spec).map_err(|e| e.to_string())?.avg_u;
        sweep.push((offset, su, pu));
    }
    for w in sweep.windows(2) {
        ensure(w[1].1 > w[0].1, || format!("speaker AvgU not increasing: {sweep:?}"))?;
        ensure(w[1].2 < w[0].2, || format!("phone AvgU not decreasing: {sweep:?}"))?;
    }
    within_budget(start, Duration::from_secs(60))?;
    let fmt: Vec<String> = sweep.iter().map(|(o, s, p)| format!("{o}: spk {s:.3} / phone {p:.3}")).collect();
    Ok(fmt.join(", "))
}

/// Two-sided Student-t tail by quadrature: with `s = sqrt(df) tan(theta)`,
/// `P(|T| > t) = ∫_{θt}^{π/2} cos^{df-1} / ∫_0^{π/2} cos^{df-1}`, i.e. the
/// regularized incomplete beta `I_{df/(df+t²)}(df/2, 1/2)`.
fn t_tail_quadrature(t: f64, df: f64) -> f64 {
    let simpson = |a: f64, b: f64| {
        let n = 200_000;
        let h = (b - a) / n as f64;
        let f = |x: f64| x.cos().powf(df - 1.0);
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let theta = (t / df.sqrt()).atan();
    simpson(theta, PI / 2.0) / simpson(0.0, PI / 2.0)
}

fn direct_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn correlation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_r = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(3..40);
        let x: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|a| 0.5 * a + gaussian(&mut rng)).collect();
        worst_r = worst_r.max((pearson_r(&x, &y).map_err(|e| e.to_string())? - direct_r(&x, &y)).abs());
    }
    ensure(worst_r <= 1e-12, || format!("r deviation {worst_r:e}"))?;

    // n = 7 data with r = 0.84 by construction
    let x: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let mean = 4.0;
    let xc: Vec<f64> = x.iter().map(|a| a - mean).collect();
    let z: Vec<f64> = vec![0.3, -1.2, 0.8, 0.1, -0.4, 1.5, -0.2];
    let zm = z.iter().sum::<f64>() / 7.0;
    let mut zc: Vec<f64> = z.iter().map(|a| a - zm).collect();
    let proj = zc.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>() / xc.iter().map(|a| a * a).sum::<f64>();
    zc.iter_mut().zip(&xc).for_each(|(a, b)| *a -= proj * b);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let (nx, nz) = (norm(&xc), norm(&zc));
    let y: Vec<f64> = xc.iter().zip(&zc).map(|(a, b)| 0.84 * a / nx + (1.0 - 0.84f64 * 0.84).sqrt() * b / nz).collect();
    let c = pearson(&x, &y, 0).map_err(|e| e.to_string())?;
    ensure((c.r - 0.84).abs() < 1e-12, || format!("constructed r {}", c.r))?;
    ensure((c.p_t - 0.018).abs() <= 0.002, || format!("p_t {}", c.p_t))?;
    let t = 0.84 * (5.0f64 / (1.0 - 0.84 * 0.84)).sqrt();
    let oracle = t_tail_quadrature(t, 5.0);
    ensure((c.p_t - oracle).abs() < 1e-9, || format!("p_t {} vs quadrature {oracle}", c.p_t))?;
    let mut worst_p = 0.0f64;
    for (r, n) in [(0.1, 5), (0.5, 10), (0.75, 6), (0.95, 4), (0.3, 30)] {
        let df = (n - 2) as f64;
        let tv = r * (df / (1.0 - r * r)).sqrt();
        worst_p = worst_p.max((t_test_p(r, n) - t_tail_quadrature(tv, df)).abs());
    }
    ensure(worst_p < 1e-9, || format!("t tail deviation {worst_p:e}"))?;

    let x6: Vec<f64> = (0..6).map(|_| gaussian(&mut rng)).collect();
    let y6: Vec<f64> = (0..6).map(|_| gaussian(&mut rng)).collect();
    let c6 = pearson(&x6, &y6, 0).map_err(|e| e.to_string())?;
    let scaled = c6.p_perm * 720.0;
    ensure(c6.exhaustive && (scaled - scaled.round()).abs() < 1e-9, || {
        format!("n=6 permutation p {} is not a multiple of 1/720", c6.p_perm)
    })?;
    Ok(format!(
        "r deviation {worst_r:.1e}; n=7 r=0.84 p_t {:.4} (quadrature {oracle:.4}); n=6 p_perm {}/720",
        c.p_t,
        scaled.round()
    ))
}

fn cli_determinism() -> Outcome {
    let corpus = common::build_corpus(4, 11);
    let bin = env!("CARGO_BIN_EXE_repstat");
    let runs: [&[&str]; 3] = [
        &["cka", "--target", "f0_centroid", "--variant", "literal"],
        &["cka", "--target", "f1_f2", "--variant", "centered", "--vowels-only"],
        &["avgu", "--label", "speaker", "--normalized"],
    ];
    let outputs = [
        "cka_f0_centroid_literal",
        "cka_f1_f2_centered_vowels",
        "avgu_speaker_euclidean_norm",
    ];
    let mut snapshots: Vec<Vec<Vec<u8>>> = Vec::new();
    for threads in ["1", "4", "1"] {
        let mut files = Vec::new();
        for args in runs {
            let out = Command::new(bin)
                .env("REPSTAT_THREADS", threads)
                .args(args)
                .arg("--manifest")
                .arg(&corpus.manifest)
                .arg("--layers")
                .arg(&corpus.layers)
                .output()
                .map_err(|e| e.to_string())?;
            ensure(out.status.success(), || {
                format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr))
            })?;
        }
        for stem in outputs {
            for ext in ["csv", "svg"] {
                files.push(fs::read(corpus.out_dir().join(format!("{stem}.{ext}"))).map_err(|e| e.to_string())?);
            }
        }
        snapshots.push(files);
    }
    ensure(snapshots[0] == snapshots[2], || "repeated runs differ".into())?;
    ensure(snapshots[0] == snapshots[1], || "outputs depend on the thread count".into())?;
    let bytes: usize = snapshots[0].iter().map(Vec::len).sum();
    Ok(format!("6 artifacts ({bytes} bytes) identical across 3 runs with 1 and 4 threads"))
}

fn main() -> ExitCode {
    let criteria: [Check; 11] = [
        ("REPT round-trip", rept_round_trip),
        ("CKA self/invariance suite", cka_invariance),
        ("CKA literal-formula oracle", cka_oracle),
        ("AvgU oracle equivalence", avg_u_oracle_equivalence),
        ("AvgU range and null", range_and_null),
        ("AUC equivalence", auc_equivalence),
        ("DSP checks", dsp_checks),
        ("Pooling and normalization", pooling_and_normalization),
        ("Speaker/phone trade-off", speaker_phone_tradeoff),
        ("Correlation", correlation),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{took:.1?}]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {reason} [{took:.1?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
