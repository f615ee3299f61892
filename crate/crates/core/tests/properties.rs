use fefet_core::crossbar::{map_weights, InjectorCounts, MapOptions, ReadNoise, WeightMapping};
use fefet_core::device::{channel_conductance, BiasPoint, DeviceParams, PolarizationState};
use fefet_core::network::{train_qat, Dataset, Hyperparams, Split, Topology};
use fefet_core::nonideality::{aging_factor, d2d_factor, retention_extrapolate, AgingSpec};
use fefet_core::programming::{
    adaptive_program, apply_pulse, read_device, target_bands, DeviceInstance, ProgramConfig,
    PulseSpec,
};
use fefet_core::rng::{stream, Purpose};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn levels_stay_ordered(vgs in 0.0f64..1.5, temp in 233.0f64..=300.0, vds in 0.01f64..0.3) {
        let p = DeviceParams::default();
        let b = BiasPoint::new(vgs, vds, temp);
        let g: Vec<f64> = (0..4)
            .map(|l| channel_conductance(&p, PolarizationState::new(l, 4).unwrap(), &b).unwrap())
            .collect();
        // Deep subthreshold HRS may sit on the current floor together with level 1.
        prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(g[3] > g[0]);
    }

    #[test]
    fn d2d_draws_are_reproducible(seed in any::<u64>(), idx in any::<u64>(), sigma in 0.0f64..0.3) {
        let a = d2d_factor(sigma, seed, idx);
        prop_assert_eq!(a.to_bits(), d2d_factor(sigma, seed, idx).to_bits());
        prop_assert!((a - 1.0).abs() <= 3.0 * sigma + 1e-15);
    }

    #[test]
    fn aging_is_affine_in_level(hrs in 0.01f64..1.0, lrs in 0.01f64..1.0) {
        let s = AgingSpec { retain_hrs: hrs, retain_lrs: lrs };
        let f: Vec<f64> = (0..4).map(|l| aging_factor(l, 4, &s)).collect();
        prop_assert_eq!(f[0], hrs);
        prop_assert_eq!(f[3], lrs);
        prop_assert!(((f[1] - f[0]) - (f[2] - f[1])).abs() < 1e-15);
        prop_assert!(((f[2] - f[1]) - (f[3] - f[2])).abs() < 1e-15);
    }

    #[test]
    fn exact_line_has_zero_residual(a in -1.0f64..1.0, b in -0.1f64..0.1, horizon in 1e5f64..1e10) {
        let s: Vec<(f64, f64)> = (0..=8).map(|k| {
            let x = 0.5 * k as f64;
            (x, a + b * x)
        }).collect();
        let f = retention_extrapolate(&s, horizon).unwrap();
        let want = a + b * horizon.log10();
        prop_assert!((f.value - want).abs() < 1e-12);
        for (x, y) in s {
            prop_assert!((f.intercept + f.slope * x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn converged_devices_read_in_band(seed in any::<u64>(), level in 0u8..4, vg in 0.6f64..0.9) {
        let p = DeviceParams::default();
        let cfg = ProgramConfig::default();
        let band = target_bands(&p, vg, &cfg).unwrap()[level as usize];
        let mut d = DeviceInstance::erased(&p, 0);
        let mut rng = stream(seed, Purpose::Program, 0);
        let o = adaptive_program(&p, &cfg, &mut d, &band, vg, cfg.budget, &mut rng, None).unwrap();
        if o.converged {
            let g = d.conductance(&p, o.vg_read_used, p.t_nom).unwrap();
            prop_assert!(band.contains(g));
            prop_assert_eq!(d.state.level(), level);
        }
    }

    #[test]
    fn reads_leave_state_untouched(seed in any::<u64>(), level in 0u8..4, reads in 1usize..50) {
        let p = DeviceParams::default();
        let mut d = DeviceInstance::at_level(&p, 0, level);
        let before = d;
        let mut rng = stream(seed, Purpose::Program, 1);
        for _ in 0..reads {
            let vg = rng.random_range(0.0..1.45);
            read_device(&p, 0.04, &mut d, vg, 300.0, &mut rng).unwrap();
        }
        prop_assert_eq!(d, before);
    }

    #[test]
    fn larger_pulses_never_retreat(seed in any::<u64>(), a1 in 1.5f64..5.0, da in 0.0f64..1.0, start in 0u8..4, positive in any::<bool>()) {
        let p = DeviceParams::default();
        let a2 = (a1 + da).min(5.0);
        let sign = if positive { 1.0 } else { -1.0 };
        let run = |amp: f64| {
            let mut d = DeviceInstance::at_level(&p, 0, start);
            let mut rng = stream(seed, Purpose::Program, 2);
            apply_pulse(&p, 0.04, &mut d, &PulseSpec::new(sign * amp, 100.0).unwrap(), &mut rng).unwrap();
            d.vth
        };
        let (v1, v2) = (run(a1), run(a2));
        if positive {
            prop_assert!(v2 <= v1);
        } else {
            prop_assert!(v2 >= v1);
        }
    }
}

#[test]
fn negated_weights_negate_noiseless_output() {
    let mapping = WeightMapping::four_level_signed();
    let p = DeviceParams::default();
    let cfg = ProgramConfig { sigma_prog: 0.0, ..Default::default() };
    let mut rng = stream(3, Purpose::WeightInit, 0);
    let (rows, cols) = (17, 5);
    let w: Vec<f32> =
        (0..rows * cols).map(|_| mapping.codebook[rng.random_range(0..mapping.codebook.len())].value).collect();
    let neg: Vec<f32> = w.iter().map(|v| -v).collect();
    let o = MapOptions::default();
    let (a, _) = map_weights(&w, rows, cols, &mapping, &p, &cfg, &o, None).unwrap();
    let (b, _) = map_weights(&neg, rows, cols, &mapping, &p, &cfg, &o, None).unwrap();
    let x: Vec<f64> = (0..rows).map(|_| rng.random::<f64>()).collect();
    let mut c = InjectorCounts::default();
    let ya = a.analog_matvec(&x, &ReadNoise::NONE, 0, &mut c).unwrap();
    let yb = b.analog_matvec(&x, &ReadNoise::NONE, 0, &mut c).unwrap();
    for (p, q) in ya.iter().zip(&yb) {
        assert_eq!(*p, -*q);
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (n, px) = (600, 9);
    let mut rng = stream(1, Purpose::Shuffle, 9);
    let images: Vec<f32> = (0..n * px).map(|_| rng.random::<f32>()).collect();
    let labels: Vec<u8> = (0..n).map(|i| (images[i * px] > 0.5) as u8).collect();
    let ds = Dataset { images, labels, rows: 3, cols: 3, split: Split::Train };
    let topo = Topology { sizes: vec![9, 8, 10] };
    let mut hp = Hyperparams::four_level();
    hp.epochs = 3;
    hp.validation_size = 100;
    let (n1, l1) = train_qat(&ds, &topo, 4, &hp, 5).unwrap();
    let (n2, l2) = train_qat(&ds, &topo, 4, &hp, 5).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(n1, n2);
    let (_, l3) = train_qat(&ds, &topo, 4, &hp, 6).unwrap();
    assert_ne!(l1, l3);
}
