//! Device-to-device variation, read noise, aging, retention drift and
//! flicker-noise trace synthesis.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::device::{channel_conductance_vth, BiasPoint, DeviceParams};
use crate::math::{log10, sqrt};
use crate::rng::{stream, Purpose};
use crate::{Error, Result};

/// Smallest conductance a variation draw may produce (S).
pub const CONDUCTANCE_EPS: f64 = 1e-14;

/// Truncation of device-to-device draws, in standard deviations.
pub const D2D_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSpec {
    pub d2d_sigma_rel: f64,
    pub c2c_sigma_rel: f64,
    pub flicker_sigma_rel: f64,
    pub rng_seed: u64,
    /// Optional per-level D2D sigmas (index = level). Empty means
    /// `d2d_sigma_rel` applies to every level.
    #[serde(default)]
    pub d2d_level_sigma: Vec<f64>,
}

impl Default for VariationSpec {
    fn default() -> Self {
        Self {
            d2d_sigma_rel: 0.15,
            c2c_sigma_rel: 0.012,
            flicker_sigma_rel: 0.007,
            rng_seed: 0,
            d2d_level_sigma: Vec::new(),
        }
    }
}

impl VariationSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s.is_finite() && (0.0..0.5).contains(&s);
        let all_ok = ok(self.d2d_sigma_rel)
            && ok(self.c2c_sigma_rel)
            && ok(self.flicker_sigma_rel)
            && self.d2d_level_sigma.iter().all(|&s| ok(s));
        if all_ok {
            Ok(())
        } else {
            Err(Error::InvalidParams("variation sigmas must lie in [0, 0.5)".into()))
        }
    }

    pub fn d2d_sigma_for_level(&self, level: u8) -> f64 {
        self.d2d_level_sigma
            .get(level as usize)
            .copied()
            .unwrap_or(self.d2d_sigma_rel)
    }

    pub fn read_sigma(&self, kind: ReadKind) -> f64 {
        match kind {
            ReadKind::Flicker => self.flicker_sigma_rel,
            ReadKind::C2c => self.c2c_sigma_rel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReadKind {
    Flicker,
    C2c,
}

/// Multiplicative D2D factor `1 + σz`, z truncated to ±3 by resampling.
pub fn d2d_factor(sigma_rel: f64, seed: u64, device_index: u64) -> f64 {
    if sigma_rel == 0.0 {
        return 1.0;
    }
    let mut rng = stream(seed, Purpose::DeviceVariation, device_index);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= D2D_TRUNCATION {
            return 1.0 + sigma_rel * z;
        }
    }
}

pub fn sample_d2d(nominal_g: f64, spec: &VariationSpec, device_index: u64) -> f64 {
    if spec.d2d_sigma_rel == 0.0 {
        return nominal_g;
    }
    let f = d2d_factor(spec.d2d_sigma_rel, spec.rng_seed, device_index);
    (nominal_g * f).max(CONDUCTANCE_EPS)
}

/// One read of a current with a fresh multiplicative Gaussian fluctuation.
pub fn perturb_read<R: Rng + ?Sized>(
    i_nominal: f64,
    spec: &VariationSpec,
    kind: ReadKind,
    rng: &mut R,
) -> f64 {
    let sigma = spec.read_sigma(kind);
    if sigma == 0.0 {
        return i_nominal;
    }
    let e: f64 = rng.sample(StandardNormal);
    i_nominal * (1.0 + sigma * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgingSpec {
    pub retain_hrs: f64,
    pub retain_lrs: f64,
}

impl Default for AgingSpec {
    fn default() -> Self {
        Self { retain_hrs: 0.226, retain_lrs: 0.743 }
    }
}

impl AgingSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| r > 0.0 && r <= 1.0;
        if ok(self.retain_hrs) && ok(self.retain_lrs) {
            Ok(())
        } else {
            Err(Error::InvalidParams("retention fractions must lie in (0, 1]".into()))
        }
    }
}

/// Retained conductance fraction of a level, affine between the end states.
pub fn aging_factor(level: u8, n_levels: u8, spec: &AgingSpec) -> f64 {
    if n_levels < 2 {
        return spec.retain_hrs;
    }
    let t = level as f64 / (n_levels - 1) as f64;
    (1.0 - t) * spec.retain_hrs + t * spec.retain_lrs
}

/// Longest time covered by retention measurements (s).
pub const RETENTION_WINDOW_S: f64 = 1e4;

/// Ten years in seconds.
pub const TEN_YEARS_S: f64 = 10.0 * 365.25 * 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionFit {
    pub value: f64,
    /// Conductance change per decade of time.
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line through `(log10 t, G)` samples, evaluated at `horizon_s`.
pub fn retention_extrapolate(samples: &[(f64, f64)], horizon_s: f64) -> Result<RetentionFit> {
    if samples.len() < 3 {
        return Err(Error::IllConditionedFit("need at least three samples"));
    }
    if !(horizon_s > 0.0) || !horizon_s.is_finite() {
        return Err(Error::IllConditionedFit("horizon must be positive"));
    }
    if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::IllConditionedFit("non-finite sample"));
    }
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 3.0 - 1e-9 {
        return Err(Error::IllConditionedFit("samples span less than three decades"));
    }
    if hi > log10(RETENTION_WINDOW_S) + 1e-9 {
        return Err(Error::IllConditionedFit("samples beyond the measured window"));
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in samples {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    Ok(RetentionFit { value: intercept + slope * log10(horizon_s), slope, intercept })
}

/// Log-linear retention drift of the two end states at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionDrift {
    pub temp: f64,
    /// Relative conductance change per decade for LRS and HRS.
    pub lrs_slope_per_decade: f64,
    pub hrs_slope_per_decade: f64,
}

pub fn default_retention_drifts() -> Vec<RetentionDrift> {
    alloc::vec![
        RetentionDrift { temp: 233.0, lrs_slope_per_decade: -0.006, hrs_slope_per_decade: 0.02 },
        RetentionDrift { temp: 266.0, lrs_slope_per_decade: -0.008, hrs_slope_per_decade: 0.03 },
        RetentionDrift { temp: 300.0, lrs_slope_per_decade: -0.010, hrs_slope_per_decade: 0.04 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetentionWindow {
    pub temp: f64,
    pub g_lrs: f64,
    pub g_hrs: f64,
    pub ratio: f64,
}

/// Samples the drift model over the measured window (one point per decade
/// from 1 s) and extrapolates both end states to `horizon_s`.
pub fn retention_window(
    p: &DeviceParams,
    drift: &RetentionDrift,
    vg_read: f64,
    horizon_s: f64,
) -> Result<RetentionWindow> {
    let b = BiasPoint::new(vg_read, p.vds_read, drift.temp);
    let g_l0 = channel_conductance_vth(p, p.vth_lrs, &b)?;
    let g_h0 = channel_conductance_vth(p, p.vth_hrs, &b)?;
    let samples = |g0: f64, m: f64| -> Vec<(f64, f64)> {
        (0..=4).map(|d| (d as f64, g0 * (1.0 + m * d as f64))).collect()
    };
    let l = retention_extrapolate(&samples(g_l0, drift.lrs_slope_per_decade), horizon_s)?;
    let h = retention_extrapolate(&samples(g_h0, drift.hrs_slope_per_decade), horizon_s)?;
    let g_hrs = h.value.max(CONDUCTANCE_EPS);
    Ok(RetentionWindow { temp: drift.temp, g_lrs: l.value, g_hrs, ratio: l.value / g_hrs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lorentzian {
    pub corner_hz: f64,
    /// One-sided low-frequency plateau of the relative-current PSD (1/Hz).
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneOverF {
    /// One-sided PSD at 1 Hz (1/Hz).
    pub amplitude: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisePsdSpec {
    #[serde(default)]
    pub lorentzians: Vec<Lorentzian>,
    #[serde(default)]
    pub one_over_f: Option<OneOverF>,
}

impl NoisePsdSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lorentzians.is_empty() && self.one_over_f.is_none() {
            return Err(Error::EmptySpectrum);
        }
        for l in &self.lorentzians {
            if !(l.corner_hz > 0.0) || !(l.amplitude >= 0.0) {
                return Err(Error::InvalidParams(
                    "Lorentzian corners must be positive and amplitudes non-negative".into(),
                ));
            }
        }
        if let Some(f) = self.one_over_f {
            if !(0.8..=1.2).contains(&f.gamma) || !(f.amplitude >= 0.0) {
                return Err(Error::InvalidParams("1/f exponent must lie in [0.8, 1.2]".into()));
            }
        }
        Ok(())
    }

    /// Analytic one-sided PSD.
    pub fn psd(&self, f: f64) -> f64 {
        let mut s = 0.0;
        for l in &self.lorentzians {
            let r = f / l.corner_hz;
            s += l.amplitude / (1.0 + r * r);
        }
        if let Some(o) = self.one_over_f {
            if f > 0.0 {
                s += o.amplitude / crate::math::powf(f, o.gamma);
            }
        }
        s
    }
}

/// Largest trace length accepted by [`generate_noise_trace`].
pub const MAX_TRACE_SAMPLES: usize = 1 << 24;

/// Synthesizes a relative current-fluctuation trace: one symmetric random
/// telegraph process per Lorentzian plus spectrally shaped 1/f^γ noise.
#[cfg(feature = "std")]
pub fn generate_noise_trace(
    psd: &NoisePsdSpec,
    duration_s: f64,
    sample_rate_hz: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    use crate::math::{exp, powf};
    use rustfft::{num_complex::Complex, FftPlanner};

    psd.validate()?;
    if !(duration_s > 0.0) || !(sample_rate_hz > 0.0) {
        return Err(Error::InvalidParams("duration and sample rate must be positive".into()));
    }
    let n_f = crate::math::round(duration_s * sample_rate_hz);
    if n_f > MAX_TRACE_SAMPLES as f64 {
        return Err(Error::InvalidParams("trace longer than 2^24 samples".into()));
    }
    let n = (n_f as usize).max(1);
    let dt = 1.0 / sample_rate_hz;
    let mut trace = alloc::vec![0.0f64; n];

    for (k, l) in psd.lorentzians.iter().enumerate() {
        if l.amplitude == 0.0 {
            continue;
        }
        // Symmetric telegraph signal ±a with switching rate λ has one-sided
        // PSD (2a²/λ) / (1 + (πf/λ)²), so λ = π·fc and a² = A·π·fc/2.
        let lambda = core::f64::consts::PI * l.corner_hz;
        let a = sqrt(l.amplitude * lambda / 2.0);
        let p_flip = 0.5 * (1.0 - exp(-2.0 * lambda * dt));
        let mut rng = stream(seed, Purpose::NoiseTrace, k as u64 + 1);
        let mut s = if rng.random::<bool>() { a } else { -a };
        for x in trace.iter_mut() {
            if rng.random::<f64>() < p_flip {
                s = -s;
            }
            *x += s;
        }
    }

    if let Some(o) = psd.one_over_f.filter(|o| o.amplitude > 0.0) {
        let mut rng = stream(seed, Purpose::NoiseTrace, 0);
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let kk = k.min(n - k);
            if kk == 0 {
                *c = Complex::new(0.0, 0.0);
                continue;
            }
            let f = kk as f64 * sample_rate_hz / n as f64;
            let h = sqrt(o.amplitude / powf(f, o.gamma) * sample_rate_hz / 2.0);
            *c *= h;
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        for (x, c) in trace.iter_mut().zip(&buf) {
            *x += c.re / n as f64;
        }
    }

    let mean = trace.iter().sum::<f64>() / n as f64;
    for x in trace.iter_mut() {
        *x -= mean;
    }
    Ok(trace)
}

/// Rescales a zero-mean trace to the given standard deviation.
pub fn scale_to_std(trace: &mut [f64], sigma: f64) {
    if trace.is_empty() {
        return;
    }
    let var = trace.iter().map(|x| x * x).sum::<f64>() / trace.len() as f64;
    if var > 0.0 {
        let k = sigma / sqrt(var);
        for x in trace.iter_mut() {
            *x *= k;
        }
    }
}
