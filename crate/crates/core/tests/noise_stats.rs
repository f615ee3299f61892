use fefet_core::nonideality::{
    generate_noise_trace, perturb_read, sample_d2d, Lorentzian, NoisePsdSpec, OneOverF, ReadKind,
    VariationSpec,
};
use fefet_core::rng::{stream, Purpose};
use rustfft::{num_complex::Complex, FftPlanner};

const READS: usize = 100_000;

fn rel_deviations(kind: ReadKind, seed: u64) -> Vec<f64> {
    let spec = VariationSpec::default();
    let i0 = 3.7e-6;
    let mut rng = stream(seed, Purpose::ReadNoise, 0);
    (0..READS).map(|_| perturb_read(i0, &spec, kind, &mut rng) / i0 - 1.0).collect()
}

fn std_of(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn flicker_read_sigma() {
    let s = std_of(&rel_deviations(ReadKind::Flicker, 1));
    println!("flicker sigma {:.4}%", s * 100.0);
    assert!((0.006..=0.008).contains(&s));
}

#[test]
fn c2c_read_sigma() {
    let s = std_of(&rel_deviations(ReadKind::C2c, 2));
    println!("c2c sigma {:.4}%", s * 100.0);
    assert!((0.011..=0.013).contains(&s));
}

#[test]
fn flicker_tail_and_bulk() {
    let mut d: Vec<f64> = rel_deviations(ReadKind::Flicker, 3).iter().map(|x| x.abs()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p99 = d[(0.99 * d.len() as f64) as usize];
    assert!(p99 < 3.0 * 0.007, "99th percentile {p99}");
    // P(|z| < 1/0.7) for a unit normal is 0.84687.
    let within = d.iter().filter(|&&x| x < 0.01).count() as f64 / d.len() as f64;
    assert!((within - 0.84687).abs() < 0.01, "within 1%: {within}");
}

#[test]
fn d2d_mean_and_spread() {
    let spec = VariationSpec { d2d_sigma_rel: 0.15, rng_seed: 9, ..Default::default() };
    let g0 = 2.5e-5;
    let g: Vec<f64> = (0..READS as u64).map(|i| sample_d2d(g0, &spec, i) / g0).collect();
    let m = g.iter().sum::<f64>() / g.len() as f64;
    let s = std_of(&g);
    // Standard deviation of a unit normal truncated to ±3.
    let want = 0.15 * 0.986_578_392_558_108_6;
    assert!((m - 1.0).abs() < 0.01, "mean {m}");
    assert!(((s - want) / want).abs() < 0.03, "sigma {s} vs {want}");
    assert!(g.iter().all(|&x| (x - 1.0).abs() <= 0.45 + 1e-12));
}

/// Averaged one-sided periodogram over half-overlapping Hann segments.
fn welch(x: &[f64], fs: f64, seg: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / seg as f64).cos())
        .collect();
    let u: f64 = w.iter().map(|v| v * v).sum();
    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut acc = vec![0.0; seg / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let mut buf: Vec<Complex<f64>> =
            x[start..start + seg].iter().zip(&w).map(|(a, b)| Complex::new(a * b, 0.0)).collect();
        fft.process(&mut buf);
        for (k, a) in acc.iter_mut().enumerate() {
            let scale = if k == 0 || k == seg / 2 { 1.0 } else { 2.0 };
            *a += scale * buf[k].norm_sqr() / (fs * u);
        }
        count += 1;
        start += seg / 2;
    }
    acc.iter().map(|a| a / count as f64).collect()
}

#[test]
fn synthesized_trace_follows_target_psd() {
    let spec = NoisePsdSpec {
        lorentzians: vec![Lorentzian { corner_hz: 20.0, amplitude: 1e-6 }],
        one_over_f: Some(OneOverF { amplitude: 4e-6, gamma: 1.0 }),
    };
    let (fs, seg) = (1000.0, 2048);
    let mut mean = vec![0.0; seg / 2 + 1];
    let seeds = 50;
    for s in 0..seeds {
        let x = generate_noise_trace(&spec, 32.768, fs, s).unwrap();
        for (m, p) in mean.iter_mut().zip(welch(&x, fs, seg)) {
            *m += p / seeds as f64;
        }
    }
    let mut worst = 0.0f64;
    for (k, m) in mean.iter().enumerate() {
        let f = k as f64 * fs / seg as f64;
        if !(2.0..=200.0).contains(&f) {
            continue;
        }
        let db = 10.0 * (m / spec.psd(f)).log10();
        worst = worst.max(db.abs());
    }
    println!("worst deviation {worst:.2} dB");
    assert!(worst < 3.0);
}
