use fefet_core::device::DeviceParams;
use fefet_core::programming::{
    adaptive_program, target_bands, DeviceInstance, ProgramConfig, TargetBand,
};
use fefet_core::rng::{stream, Purpose};

const DEVICES: u64 = 10_000;

struct Run {
    converged: u64,
    within_10: u64,
    violations: u64,
    reads: Vec<Vec<f64>>,
}

fn run(cfg: &ProgramConfig, budget: u32) -> (Run, Vec<TargetBand>) {
    let p = DeviceParams::default();
    let bands = target_bands(&p, 0.75, cfg).unwrap();
    let mut r = Run { converged: 0, within_10: 0, violations: 0, reads: vec![Vec::new(); 4] };
    for i in 0..DEVICES {
        let band = &bands[(i % 4) as usize];
        let mut d = DeviceInstance::erased(&p, i);
        let mut rng = stream(11, Purpose::Program, i);
        let o = adaptive_program(&p, cfg, &mut d, band, 0.75, budget, &mut rng, None).unwrap();
        r.converged += o.converged as u64;
        r.within_10 += (o.converged && o.iterations <= 10) as u64;
        let g = d.conductance(&p, o.vg_read_used, p.t_nom).unwrap();
        if !band.contains(g) {
            r.violations += 1;
        }
        r.reads[band.level as usize].push(g);
    }
    (r, bands)
}

#[test]
fn closed_loop_separates_levels() {
    let cfg = ProgramConfig::default();
    let (r, bands) = run(&cfg, cfg.budget);
    println!(
        "closed loop: converged {}/{DEVICES}, within 10 iterations {}, violations {}",
        r.converged, r.within_10, r.violations
    );
    assert!(r.within_10 as f64 >= 0.99 * DEVICES as f64);
    assert_eq!(r.violations, DEVICES - r.converged);
    for w in r.reads.windows(2) {
        let hi = w[0].iter().copied().fold(f64::MIN, f64::max);
        let lo = w[1].iter().copied().fold(f64::MAX, f64::min);
        assert!(hi < lo, "level distributions overlap: {hi} >= {lo}");
    }
    let _ = bands;
}

#[test]
fn single_pulse_levels_overlap() {
    let cfg = ProgramConfig { adjust_vg: false, ..Default::default() };
    let (r, _) = run(&cfg, 1);
    let frac = r.violations as f64 / DEVICES as f64;
    println!("single pulse: band violations {frac:.4}");
    assert!(frac >= 0.01);
}
