//! Pulse response, read-voltage sanity check, closed-loop program-and-read
//! controller, and the LTP/LTD staircase model.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::{
    channel_conductance_vth, drain_current_vth, transconductance_vth, BiasPoint, DeviceParams,
    PolarizationState,
};
use crate::math::{expm1, round};
use crate::{Error, Result};

/// Below this gate amplitude a pulse (or read) leaves polarization untouched.
pub const COERCIVE_V: f64 = 1.5;
/// Amplitude that fully switches to an end state.
pub const FULL_PULSE_V: f64 = 4.5;
pub const MAX_PULSE_V: f64 = 5.0;

/// Number of repeated reads used by the read-disturb check.
pub const DISTURB_CHECK_READS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub amplitude: f64,
    pub width_ns: f64,
}

impl PulseSpec {
    pub fn new(amplitude: f64, width_ns: f64) -> Result<Self> {
        let p = Self { amplitude, width_ns };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() || self.amplitude.abs() > MAX_PULSE_V {
            return Err(Error::InvalidParams("pulse amplitude must be within ±5 V".into()));
        }
        if !(self.width_ns > 0.0) {
            return Err(Error::InvalidParams("pulse width must be positive".into()));
        }
        Ok(())
    }
}

/// One programmable transistor: discrete level plus its realized threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceInstance {
    pub index: u64,
    pub state: PolarizationState,
    /// Realized threshold at nominal temperature (V).
    pub vth: f64,
    /// Per-device read-gate offset chosen by the programmer (V).
    pub vg_trim: f64,
    pub pulses: u32,
}

impl DeviceInstance {
    /// Fresh device in the erased state.
    pub fn erased(p: &DeviceParams, index: u64) -> Self {
        Self { index, state: PolarizationState::hrs(), vth: p.vth_hrs, vg_trim: 0.0, pulses: 0 }
    }

    /// Device sitting exactly at a nominal level.
    pub fn at_level(p: &DeviceParams, index: u64, level: u8) -> Self {
        Self {
            index,
            state: PolarizationState::new(level.min(p.n_levels - 1), p.n_levels)
                .unwrap_or(PolarizationState::hrs()),
            vth: p.vth_of_level(level, p.n_levels),
            vg_trim: 0.0,
            pulses: 0,
        }
    }

    pub fn conductance(&self, p: &DeviceParams, vg: f64, temp: f64) -> Result<f64> {
        channel_conductance_vth(p, self.vth, &BiasPoint::new(vg, p.vds_read, temp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgramConfig {
    /// Spread of the realized post-pulse threshold (V).
    pub sigma_prog: f64,
    /// Band half-width as a fraction of the inter-level conductance spacing.
    pub band_half_width: f64,
    /// Minimum free gap between adjacent bands, same units.
    pub guard_gap: f64,
    pub vg_step: f64,
    pub vg_window: [f64; 2],
    /// Largest per-device read-gate offset the controller may apply (V).
    pub max_vg_trim: f64,
    pub amp_step: f64,
    pub budget: u32,
    pub pulse_width_ns: f64,
    /// Largest accepted relative read noise at the read bias.
    pub read_noise_bound: f64,
    /// Relative current noise per unit gm/Id (V).
    pub noise_coeff: f64,
    pub adjust_vg: bool,
}

impl Default for ProgramConfig {
    fn default() -> Self {
        Self {
            sigma_prog: 0.04,
            band_half_width: 0.2,
            guard_gap: 0.1,
            vg_step: 0.01,
            vg_window: [0.6, 0.9],
            max_vg_trim: 0.05,
            amp_step: 0.1,
            budget: 16,
            pulse_width_ns: 100.0,
            read_noise_bound: 0.01,
            noise_coeff: 0.0034,
            adjust_vg: true,
        }
    }
}

impl ProgramConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if !(self.sigma_prog >= 0.0) {
            return bad("sigma_prog must be non-negative");
        }
        if !(self.band_half_width > 0.0) || 1.0 - 2.0 * self.band_half_width < self.guard_gap {
            return bad("band half-width leaves less than the guard gap between levels");
        }
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(self.vg_window[0] < self.vg_window[1]) || !(self.vg_step > 0.0) {
            return bad("read-voltage window must be increasing with a positive step");
        }
        if !(self.amp_step > 0.0) || !(self.pulse_width_ns > 0.0) {
            return bad("amplitude step and pulse width must be positive");
        }
        Ok(())
    }
}

/// Mean threshold a pulse drives toward.
pub fn pulse_target_vth(p: &DeviceParams, amplitude: f64) -> Option<f64> {
    let a = amplitude.abs();
    if a < COERCIVE_V {
        return None;
    }
    let frac = ((a - COERCIVE_V) / (FULL_PULSE_V - COERCIVE_V)).clamp(0.0, 1.0);
    Some(if amplitude > 0.0 {
        p.vth_hrs + frac * (p.vth_lrs - p.vth_hrs)
    } else {
        p.vth_lrs + frac * (p.vth_hrs - p.vth_lrs)
    })
}

/// Positive amplitude whose mean target is `vth` (clamped to the switching range).
pub fn amplitude_for_vth(p: &DeviceParams, vth: f64) -> f64 {
    let frac = ((p.vth_hrs - vth) / (p.vth_hrs - p.vth_lrs)).clamp(0.0, 1.0);
    COERCIVE_V + frac * (FULL_PULSE_V - COERCIVE_V)
}

/// Nominal positive program amplitude for a level, interpolated between the
/// coercive voltage and the full pulse.
pub fn level_amplitude(level: u8, n_levels: u8) -> f64 {
    if n_levels < 2 {
        return FULL_PULSE_V;
    }
    COERCIVE_V + (FULL_PULSE_V - COERCIVE_V) * level as f64 / (n_levels - 1) as f64
}

/// Nearest discrete level of a threshold.
pub fn level_of_vth(p: &DeviceParams, vth: f64) -> PolarizationState {
    let n = p.n_levels;
    let x = (p.vth_hrs - vth) / (p.vth_hrs - p.vth_lrs) * (n - 1) as f64;
    let l = round(x).clamp(0.0, (n - 1) as f64) as u8;
    PolarizationState::new(l, n).unwrap_or(PolarizationState::hrs())
}

/// Applies one write pulse. The realized threshold is drawn around the pulse
/// target; a pulse never pushes the device away from its target rail.
pub fn apply_pulse<R: Rng + ?Sized>(
    p: &DeviceParams,
    sigma_prog: f64,
    dev: &mut DeviceInstance,
    pulse: &PulseSpec,
    rng: &mut R,
) -> Result<PolarizationState> {
    pulse.validate()?;
    dev.pulses = dev.pulses.saturating_add(1);
    let Some(target) = pulse_target_vth(p, pulse.amplitude) else {
        return Ok(dev.state);
    };
    let z: f64 = if sigma_prog > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
    let realized = target + sigma_prog * z;
    let moved = if pulse.amplitude > 0.0 {
        realized.min(dev.vth)
    } else {
        realized.max(dev.vth)
    };
    dev.vth = moved;
    dev.state = level_of_vth(p, moved);
    Ok(dev.state)
}

/// Reads a device at a gate voltage. Reads at or above the coercive voltage
/// act as weak program pulses.
pub fn read_device<R: Rng + ?Sized>(
    p: &DeviceParams,
    sigma_prog: f64,
    dev: &mut DeviceInstance,
    vg: f64,
    temp: f64,
    rng: &mut R,
) -> Result<f64> {
    if vg.abs() >= COERCIVE_V {
        let pulse = PulseSpec::new(vg.clamp(-MAX_PULSE_V, MAX_PULSE_V), 100.0)?;
        apply_pulse(p, sigma_prog, dev, &pulse, rng)?;
    }
    dev.conductance(p, vg, temp)
}

/// Relative read-current noise `coeff · gm/Id` at a bias.
pub fn relative_read_noise(p: &DeviceParams, vth: f64, vg: f64, temp: f64, coeff: f64) -> Result<f64> {
    let b = BiasPoint::new(vg, p.vds_read, temp);
    let id = drain_current_vth(p, vth, &b)?;
    if id <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(coeff * transconductance_vth(p, vth, &b)? / id)
}

/// First candidate that neither disturbs the device nor exceeds the noise bound.
pub fn verify_read_voltage<R: Rng + ?Sized>(
    p: &DeviceParams,
    cfg: &ProgramConfig,
    dev: &DeviceInstance,
    candidates: &[f64],
    rng: &mut R,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::InvalidParams("no read-voltage candidates".into()));
    }
    if candidates.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParams("read-voltage candidates must be ascending".into()));
    }
    for &vg in candidates {
        if vg.abs() >= COERCIVE_V {
            continue;
        }
        let mut probe = *dev;
        probe.pulses = 0;
        for _ in 0..DISTURB_CHECK_READS {
            read_device(p, cfg.sigma_prog, &mut probe, vg, p.t_nom, rng)?;
        }
        if probe.state != dev.state || probe.vth != dev.vth {
            continue;
        }
        let noise = relative_read_noise(p, dev.vth, vg, p.t_nom, cfg.noise_coeff)?;
        if noise <= cfg.read_noise_bound {
            return Ok(vg);
        }
    }
    Err(Error::NoStableRead(candidates.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBand {
    pub level: u8,
    pub g_lo: f64,
    pub g_hi: f64,
    /// Nominal level conductance the band is built around.
    pub g_target: f64,
}

impl TargetBand {
    pub fn contains(&self, g: f64) -> bool {
        g >= self.g_lo && g <= self.g_hi
    }

    pub fn center(&self) -> f64 {
        self.g_target
    }
}

/// Bands whose centers are equally spaced in conductance between the end
/// states at the read bias and nominal temperature.
pub fn target_bands(p: &DeviceParams, vg_read: f64, cfg: &ProgramConfig) -> Result<Vec<TargetBand>> {
    cfg.validate()?;
    let n = p.n_levels;
    let b = BiasPoint::new(vg_read, p.vds_read, p.t_nom);
    let g0 = channel_conductance_vth(p, p.vth_hrs, &b)?;
    let gn = channel_conductance_vth(p, p.vth_lrs, &b)?;
    let spacing = (gn - g0) / (n - 1) as f64;
    if !(spacing > 0.0) {
        return Err(Error::InvalidParams("no conductance window at this read voltage".into()));
    }
    let half = cfg.band_half_width * spacing;
    Ok((0..n)
        .map(|k| {
            let c = if k == n - 1 { gn } else { g0 + k as f64 * spacing };
            TargetBand { level: k, g_lo: (c - half).max(0.0), g_hi: c + half, g_target: c }
        })
        .collect())
}

/// Threshold at which a device reads `g` at (vg, nominal temperature).
pub fn vth_for_conductance(p: &DeviceParams, vg: f64, g: f64) -> Result<f64> {
    let b = BiasPoint::new(vg, p.vds_read, p.t_nom);
    let mut lo = p.vth_lrs - 1.0;
    let mut hi = p.vth_hrs + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if channel_conductance_vth(p, mid, &b)? > g {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Order in which levels are written: LRS, then erase, then intermediates.
pub fn program_order(n_levels: u8) -> Vec<u8> {
    let mut v = alloc::vec![n_levels - 1, 0];
    v.extend(1..n_levels - 1);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramOutcome {
    pub achieved_g: f64,
    pub iterations: u32,
    pub vg_read_used: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub device: u64,
    pub iteration: u32,
    /// Last pulse applied before this read, 0 if the read followed a gate trim.
    pub pulse_v: f64,
    pub vg_read: f64,
    pub g_read: f64,
    pub in_band: bool,
}

/// Closed-loop program-and-read. Each iteration reads the device; on a miss the
/// controller alternates between trimming the read gate and re-pulsing with a
/// trimmed amplitude.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_program<R: Rng + ?Sized>(
    p: &DeviceParams,
    cfg: &ProgramConfig,
    dev: &mut DeviceInstance,
    target: &TargetBand,
    vg_read: f64,
    budget: u32,
    rng: &mut R,
    mut transcript: Option<&mut Vec<TranscriptRow>>,
) -> Result<ProgramOutcome> {
    if budget == 0 {
        return Err(Error::InvalidParams("budget must be at least 1".into()));
    }
    let top = p.n_levels - 1;
    // Intermediate targets sit at equal conductance steps, so the stored label
    // is the programmed level rather than the nearest nominal threshold.
    let level_state = PolarizationState::new(target.level, p.n_levels)?;
    let width = cfg.pulse_width_ns;
    let erase = |dev: &mut DeviceInstance, amp: f64, rng: &mut R| {
        apply_pulse(p, cfg.sigma_prog, dev, &PulseSpec { amplitude: -amp, width_ns: width }, rng)
    };
    let program = |dev: &mut DeviceInstance, amp: f64, rng: &mut R| {
        apply_pulse(p, cfg.sigma_prog, dev, &PulseSpec { amplitude: amp, width_ns: width }, rng)
    };

    let mut amp = if target.level == 0 || target.level == top {
        FULL_PULSE_V
    } else {
        amplitude_for_vth(p, vth_for_conductance(p, vg_read, target.center())?)
    };
    dev.vg_trim = 0.0;
    erase(dev, FULL_PULSE_V, rng)?;
    let mut last_pulse = -FULL_PULSE_V;
    if target.level > 0 {
        program(dev, amp, rng)?;
        last_pulse = amp;
    }

    let mut g = 0.0;
    for it in 1..=budget {
        let vg = vg_read + dev.vg_trim;
        g = dev.conductance(p, vg, p.t_nom)?;
        let hit = target.contains(g);
        if let Some(t) = transcript.as_deref_mut() {
            t.push(TranscriptRow {
                device: dev.index,
                iteration: it,
                pulse_v: last_pulse,
                vg_read: vg,
                g_read: g,
                in_band: hit,
            });
        }
        if hit {
            dev.state = level_state;
            return Ok(ProgramOutcome { achieved_g: g, iterations: it, vg_read_used: vg, converged: true });
        }
        if it == budget {
            break;
        }
        let need_more = g < target.g_lo;
        let step = if need_more { cfg.vg_step } else { -cfg.vg_step };
        let trim = dev.vg_trim + step;
        let trim_ok = cfg.adjust_vg
            && trim.abs() <= cfg.max_vg_trim + 1e-12
            && vg_read + trim >= cfg.vg_window[0] - 1e-12
            && vg_read + trim <= cfg.vg_window[1] + 1e-12;
        if it % 2 == 1 && trim_ok {
            dev.vg_trim = trim;
            last_pulse = 0.0;
            continue;
        }
        dev.vg_trim = 0.0;
        if target.level == 0 {
            amp = (amp + cfg.amp_step).min(MAX_PULSE_V);
            erase(dev, amp, rng)?;
            last_pulse = -amp;
        } else if need_more {
            amp = (amp + cfg.amp_step).min(MAX_PULSE_V);
            program(dev, amp, rng)?;
            last_pulse = amp;
        } else {
            amp = (amp - cfg.amp_step).max(COERCIVE_V);
            erase(dev, FULL_PULSE_V, rng)?;
            program(dev, amp, rng)?;
            last_pulse = amp;
        }
    }
    dev.state = level_state;
    Ok(ProgramOutcome {
        achieved_g: g,
        iterations: budget,
        vg_read_used: vg_read + dev.vg_trim,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Potentiate,
    Depress,
}

/// Bounded-exponential analog update staircase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtpLtdModel {
    pub g_min: f64,
    pub g_max: f64,
    pub pulses: u32,
    /// Nonlinearity per pulse; 0 is a linear staircase.
    pub nonlinearity: f64,
}

impl Default for LtpLtdModel {
    fn default() -> Self {
        Self { g_min: 1.0e-7, g_max: 4.8e-5, pulses: 32, nonlinearity: 0.004 }
    }
}

/// Normalized progress `(1 − e^(−iA)) / (1 − e^(−PA))`.
pub fn staircase_fraction(i: f64, pulses: f64, a: f64) -> f64 {
    if a == 0.0 {
        return i / pulses;
    }
    expm1(-i * a) / expm1(-pulses * a)
}

pub fn ltp_ltd_update(m: &LtpLtdModel, direction: Direction, pulse_index: u32) -> Result<f64> {
    if pulse_index > m.pulses || m.pulses == 0 {
        return Err(Error::InvalidParams("pulse index beyond the pulse train".into()));
    }
    let f = staircase_fraction(pulse_index as f64, m.pulses as f64, m.nonlinearity);
    let range = m.g_max - m.g_min;
    Ok(match direction {
        Direction::Potentiate => m.g_min + range * f,
        Direction::Depress => m.g_max - range * f,
    })
}

/// Full staircase `G(0..=P)`.
pub fn staircase(m: &LtpLtdModel, direction: Direction) -> Result<Vec<f64>> {
    (0..=m.pulses).map(|i| ltp_ltd_update(m, direction, i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityReport {
    pub a_ltp: f64,
    pub a_ltd: f64,
    pub asymmetry: f64,
    /// Set when either trace is not monotone.
    pub fit_warning: bool,
}

/// Search range for the fitted nonlinearity.
pub const FIT_A_MAX: f64 = 4.0;

fn fit_nonlinearity(y: &[f64]) -> f64 {
    let pulses = (y.len() - 1) as f64;
    let sse = |a: f64| -> f64 {
        y.iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = staircase_fraction(i as f64, pulses, a) - v;
                d * d
            })
            .sum()
    };
    let gr = 0.5 * (libm::sqrt(5.0) - 1.0);
    let (mut lo, mut hi) = (-FIT_A_MAX, FIT_A_MAX);
    let mut x1 = hi - gr * (hi - lo);
    let mut x2 = lo + gr * (hi - lo);
    let (mut f1, mut f2) = (sse(x1), sse(x2));
    while hi - lo > 1e-12 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = sse(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = sse(x2);
        }
    }
    0.5 * (lo + hi)
}

fn monotone(t: &[f64], increasing: bool) -> bool {
    t.windows(2).all(|w| if increasing { w[1] >= w[0] } else { w[1] <= w[0] })
}

/// Fits the staircase model to potentiation and depression traces.
pub fn linearity_metric(ltp: &[f64], ltd: &[f64]) -> Result<LinearityReport> {
    if ltp.len() != ltd.len() || ltp.len() < 8 {
        return Err(Error::InvalidParams("traces must share a length of at least 8".into()));
    }
    let n = ltp.len();
    let up = ltp[n - 1] - ltp[0];
    let down = ltd[0] - ltd[n - 1];
    if up == 0.0 || down == 0.0 {
        return Err(Error::InvalidParams("trace has no conductance swing".into()));
    }
    let y_ltp: Vec<f64> = ltp.iter().map(|g| (g - ltp[0]) / up).collect();
    let y_ltd: Vec<f64> = ltd.iter().map(|g| (ltd[0] - g) / down).collect();
    let fit_warning = !monotone(ltp, up > 0.0) || !monotone(ltd, down < 0.0);

    let gmax = ltp.iter().chain(ltd).copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = ltp.iter().chain(ltd).copied().fold(f64::INFINITY, f64::min);
    let asymmetry = (0..n)
        .map(|i| (ltp[i] - ltd[n - 1 - i]).abs())
        .fold(0.0, f64::max)
        / (gmax - gmin);

    Ok(LinearityReport {
        a_ltp: fit_nonlinearity(&y_ltp),
        a_ltd: fit_nonlinearity(&y_ltd),
        asymmetry,
        fit_warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;

    fn p() -> DeviceParams {
        DeviceParams::default()
    }

    #[test]
    fn full_pulses_reach_end_states() {
        let p = p();
        let mut rng = stream(1, Purpose::Program, 0);
        for i in 0..200 {
            let mut d = DeviceInstance::at_level(&p, i, (i % 4) as u8);
            let s = apply_pulse(&p, 0.04, &mut d, &PulseSpec::new(4.5, 100.0).unwrap(), &mut rng).unwrap();
            assert_eq!(s.level(), 3);
            assert!((d.vth - p.vth_lrs).abs() < 0.2);
            let s = apply_pulse(&p, 0.04, &mut d, &PulseSpec::new(-4.5, 100.0).unwrap(), &mut rng).unwrap();
            assert_eq!(s.level(), 0);
        }
    }

    #[test]
    fn subcoercive_pulse_is_a_no_op() {
        let p = p();
        let mut rng = stream(1, Purpose::Program, 0);
        let mut d = DeviceInstance::at_level(&p, 0, 2);
        let before = d;
        apply_pulse(&p, 0.04, &mut d, &PulseSpec::new(1.49, 100.0).unwrap(), &mut rng).unwrap();
        apply_pulse(&p, 0.04, &mut d, &PulseSpec::new(-1.2, 100.0).unwrap(), &mut rng).unwrap();
        assert_eq!((d.state, d.vth), (before.state, before.vth));
    }

    #[test]
    fn noiseless_pulse_hits_nominal_level() {
        let p = p();
        let mut rng = stream(1, Purpose::Program, 0);
        for l in 1..4u8 {
            let mut d = DeviceInstance::erased(&p, 0);
            let a = level_amplitude(l, 4);
            apply_pulse(&p, 0.0, &mut d, &PulseSpec::new(a, 100.0).unwrap(), &mut rng).unwrap();
            assert_eq!(d.state.level(), l);
            assert_relative_eq!(d.vth, p.vth_of_level(l, 4), max_relative = 1e-12);
        }
    }

    #[test]
    fn pulse_validation() {
        assert!(PulseSpec::new(5.5, 100.0).is_err());
        assert!(PulseSpec::new(4.5, 0.0).is_err());
    }

    #[test]
    fn verify_read_accepts_075_and_rejects_disturbing() {
        let p = p();
        let cfg = ProgramConfig::default();
        let mut rng = stream(1, Purpose::Program, 0);
        let d = DeviceInstance::at_level(&p, 0, 3);
        assert_eq!(verify_read_voltage(&p, &cfg, &d, &[0.75], &mut rng).unwrap(), 0.75);
        let d0 = DeviceInstance::at_level(&p, 0, 0);
        assert_eq!(
            verify_read_voltage(&p, &cfg, &d0, &[1.6, 2.0], &mut rng),
            Err(Error::NoStableRead(2))
        );
        assert!(verify_read_voltage(&p, &cfg, &d, &[], &mut rng).is_err());
        assert!(verify_read_voltage(&p, &cfg, &d, &[0.9, 0.7], &mut rng).is_err());
    }

    #[test]
    fn repeated_reads_leave_state_unchanged() {
        let p = p();
        let mut rng = stream(2, Purpose::Program, 0);
        for l in 0..4 {
            let mut d = DeviceInstance::at_level(&p, 0, l);
            let before = d;
            for _ in 0..100 {
                read_device(&p, 0.04, &mut d, 0.75, 300.0, &mut rng).unwrap();
            }
            assert_eq!(d, before);
        }
    }

    #[test]
    fn bands_are_disjoint_with_guard() {
        let p = p();
        let cfg = ProgramConfig::default();
        let b = target_bands(&p, 0.75, &cfg).unwrap();
        assert_eq!(b.len(), 4);
        let spacing = b[3].center() - b[2].center();
        for w in b.windows(2) {
            assert!(w[0].g_lo < w[0].g_hi);
            assert!(w[1].g_lo - w[0].g_hi >= cfg.guard_gap * spacing * (1.0 - 1e-9));
        }
    }

    #[test]
    fn noiseless_programming_converges_in_one_iteration() {
        let p = p();
        let cfg = ProgramConfig { sigma_prog: 0.0, ..Default::default() };
        let bands = target_bands(&p, 0.75, &cfg).unwrap();
        let mut rng = stream(3, Purpose::Program, 0);
        for b in &bands {
            let mut d = DeviceInstance::erased(&p, 0);
            let o = adaptive_program(&p, &cfg, &mut d, b, 0.75, 16, &mut rng, None).unwrap();
            assert!(o.converged);
            assert_eq!(o.iterations, 1);
            assert_relative_eq!(o.achieved_g, b.center(), max_relative = 1e-9, epsilon = 1e-15);
        }
    }

    #[test]
    fn program_order_matches_narrative() {
        assert_eq!(program_order(4), alloc::vec![3, 0, 1, 2]);
        assert_eq!(program_order(2), alloc::vec![1, 0]);
    }

    #[test]
    fn linear_staircase_limit() {
        let m = LtpLtdModel { nonlinearity: 0.0, ..Default::default() };
        let t = staircase(&m, Direction::Potentiate).unwrap();
        let step = (m.g_max - m.g_min) / 32.0;
        for (i, g) in t.iter().enumerate() {
            assert_relative_eq!(*g, m.g_min + step * i as f64, max_relative = 1e-12);
        }
        assert!(ltp_ltd_update(&m, Direction::Depress, 33).is_err());
    }

    #[test]
    fn mirrored_traces_are_symmetric() {
        let m = LtpLtdModel { nonlinearity: 0.3, ..Default::default() };
        let ltp = staircase(&m, Direction::Potentiate).unwrap();
        let ltd: Vec<f64> = ltp.iter().rev().copied().collect();
        let r = linearity_metric(&ltp, &ltd).unwrap();
        assert_eq!(r.asymmetry, 0.0);
        assert!(!r.fit_warning);
    }

    #[test]
    fn non_monotone_trace_is_flagged() {
        let mut ltp: Vec<f64> = (0..10).map(|i| i as f64).collect();
        ltp[4] = 2.0;
        let ltd: Vec<f64> = (0..10).rev().map(|i| i as f64).collect();
        assert!(linearity_metric(&ltp, &ltd).unwrap().fit_warning);
        assert!(linearity_metric(&ltp[..5], &ltd[..5]).is_err());
    }
}
