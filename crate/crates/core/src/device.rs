//! Closed-form FE-FinFET drain current with a polarization-dependent threshold.
//!
//! The channel charge uses the forward/reverse interpolation
//! `F(u) = ln²(1 + e^(u/2))`, which is smooth from weak to strong inversion.

use serde::{Deserialize, Serialize};

use crate::math::{powf, sigmoid, softplus};
use crate::{Error, Result};

/// Boltzmann constant over elementary charge, V/K.
pub const BOLTZMANN_OVER_Q: f64 = 8.617_333_262e-5;

/// Lowest and highest supported simulation temperatures (K).
pub const TEMP_MIN: f64 = 233.0;
pub const TEMP_MAX: f64 = 300.0;

/// Currents below this are reported as this value with a clamp flag.
pub const CURRENT_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub k_gain: f64,
    pub n_slope: f64,
    pub vth_lrs: f64,
    pub vth_hrs: f64,
    pub n_levels: u8,
    pub ute: f64,
    pub kt1: f64,
    pub t_nom: f64,
    pub vds_read: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            k_gain: 2.0e-4,
            n_slope: 1.3,
            vth_lrs: 0.2,
            vth_hrs: 1.1,
            n_levels: 4,
            ute: -1.5,
            kt1: -0.45,
            t_nom: 300.0,
            vds_read: 0.1,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.k_gain,
            self.n_slope,
            self.vth_lrs,
            self.vth_hrs,
            self.ute,
            self.kt1,
            self.t_nom,
            self.vds_read,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite device parameter".into()));
        }
        if self.vth_hrs <= self.vth_lrs {
            return Err(Error::InvalidParams("vth_hrs must exceed vth_lrs".into()));
        }
        if self.n_levels != 2 && self.n_levels != 4 {
            return Err(Error::InvalidParams("n_levels must be 2 or 4".into()));
        }
        if self.t_nom <= 0.0 || self.vds_read <= 0.0 || self.k_gain <= 0.0 {
            return Err(Error::InvalidParams(
                "t_nom, vds_read and k_gain must be positive".into(),
            ));
        }
        if self.n_slope < 1.0 {
            return Err(Error::InvalidParams("n_slope must be at least 1".into()));
        }
        Ok(())
    }

    /// Nominal-temperature threshold of a level, linear between the end states.
    pub fn vth(&self, s: PolarizationState) -> f64 {
        self.vth_of_level(s.level(), self.n_levels)
    }

    pub fn vth_of_level(&self, level: u8, n_levels: u8) -> f64 {
        if n_levels < 2 {
            return self.vth_hrs;
        }
        let t = level as f64 / (n_levels - 1) as f64;
        (1.0 - t) * self.vth_hrs + t * self.vth_lrs
    }

    /// Copy with a different level count, e.g. a binary view of an MLC fit.
    pub fn with_levels(&self, n_levels: u8) -> Self {
        Self { n_levels, ..*self }
    }
}

/// Programmed polarization level; 0 is HRS ("00"), `n_levels - 1` is LRS ("11").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolarizationState {
    level: u8,
}

impl PolarizationState {
    pub fn new(level: u8, n_levels: u8) -> Result<Self> {
        if level >= n_levels {
            return Err(Error::InvalidParams(alloc::format!(
                "level {level} out of range for {n_levels} levels"
            )));
        }
        Ok(Self { level })
    }

    pub const fn hrs() -> Self {
        Self { level: 0 }
    }

    pub const fn lrs(n_levels: u8) -> Self {
        Self { level: n_levels - 1 }
    }

    pub const fn level(self) -> u8 {
        self.level
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub vgs: f64,
    pub vds: f64,
    pub temp: f64,
}

impl BiasPoint {
    pub const fn new(vgs: f64, vds: f64, temp: f64) -> Self {
        Self { vgs, vds, temp }
    }

    fn check(&self) -> Result<()> {
        if !self.vgs.is_finite() || !self.vds.is_finite() || !self.temp.is_finite() {
            return Err(Error::InvalidBias("non-finite bias"));
        }
        if self.vds < 0.0 {
            return Err(Error::InvalidBias("negative drain bias"));
        }
        check_temperature(self.temp)
    }
}

pub fn check_temperature(temp: f64) -> Result<()> {
    if !temp.is_finite() {
        return Err(Error::InvalidBias("non-finite temperature"));
    }
    if !(TEMP_MIN..=TEMP_MAX).contains(&temp) {
        return Err(Error::UnsupportedTemperature(temp));
    }
    Ok(())
}

pub fn thermal_voltage(temp: f64) -> f64 {
    BOLTZMANN_OVER_Q * temp
}

/// Mobility relative to nominal temperature, `(T/t_nom)^(-ute)`.
pub fn mobility_ratio(p: &DeviceParams, temp: f64) -> f64 {
    powf(temp / p.t_nom, -p.ute)
}

/// Shift a nominal-temperature threshold to `temp`.
pub fn shift_threshold(p: &DeviceParams, vth_nom: f64, temp: f64) -> f64 {
    if temp == p.t_nom {
        return vth_nom;
    }
    vth_nom + p.kt1 * (temp / p.t_nom - 1.0)
}

pub fn threshold_at_temperature(p: &DeviceParams, s: PolarizationState, temp: f64) -> Result<f64> {
    check_temperature(temp)?;
    Ok(shift_threshold(p, p.vth(s), temp))
}

/// Charge interpolation `F(u) = ln²(1 + e^(u/2))`.
pub fn charge_interp(u: f64) -> f64 {
    let s = softplus(0.5 * u);
    s * s
}

/// `dF/du = ln(1 + e^(u/2)) · σ(u/2)`.
pub fn charge_interp_deriv(u: f64) -> f64 {
    softplus(0.5 * u) * sigmoid(0.5 * u)
}

/// Normalized forward and reverse potentials `(uf, ur)`.
pub fn normalized_potentials(p: &DeviceParams, vth_nom: f64, b: &BiasPoint) -> (f64, f64) {
    let phi = thermal_voltage(b.temp);
    let vth = shift_threshold(p, vth_nom, b.temp);
    let uf = (b.vgs - vth) / (p.n_slope * phi);
    (uf, uf - b.vds / phi)
}

/// Drain current for a device whose nominal-temperature threshold is `vth_nom`.
/// This is the continuous form used for programmed devices with residual offsets.
pub fn drain_current_vth(p: &DeviceParams, vth_nom: f64, b: &BiasPoint) -> Result<f64> {
    b.check()?;
    if !vth_nom.is_finite() {
        return Err(Error::InvalidBias("non-finite threshold"));
    }
    if b.vds == 0.0 {
        return Ok(0.0);
    }
    let phi = thermal_voltage(b.temp);
    let (uf, ur) = normalized_potentials(p, vth_nom, b);
    let id = p.k_gain * mobility_ratio(p, b.temp) * p.n_slope * phi * phi
        * (charge_interp(uf) - charge_interp(ur));
    Ok(id.max(0.0))
}

pub fn drain_current(p: &DeviceParams, s: PolarizationState, b: &BiasPoint) -> Result<f64> {
    drain_current_vth(p, p.vth(s), b)
}

/// Current with the underflow floor applied; the flag is set when clamped.
pub fn clamp_current(id: f64) -> (f64, bool) {
    if id > 0.0 && id < CURRENT_FLOOR {
        (CURRENT_FLOOR, true)
    } else {
        (id, false)
    }
}

/// Analytic `dId/dVgs`.
pub fn transconductance_vth(p: &DeviceParams, vth_nom: f64, b: &BiasPoint) -> Result<f64> {
    b.check()?;
    if b.vds == 0.0 {
        return Ok(0.0);
    }
    let phi = thermal_voltage(b.temp);
    let (uf, ur) = normalized_potentials(p, vth_nom, b);
    Ok(p.k_gain
        * mobility_ratio(p, b.temp)
        * phi
        * (charge_interp_deriv(uf) - charge_interp_deriv(ur)))
}

pub fn transconductance(p: &DeviceParams, s: PolarizationState, b: &BiasPoint) -> Result<f64> {
    transconductance_vth(p, p.vth(s), b)
}

pub fn channel_conductance_vth(p: &DeviceParams, vth_nom: f64, b: &BiasPoint) -> Result<f64> {
    if b.vds == 0.0 {
        return Err(Error::ZeroDrainBias);
    }
    let (id, _) = clamp_current(drain_current_vth(p, vth_nom, b)?);
    Ok(id / b.vds)
}

pub fn channel_conductance(p: &DeviceParams, s: PolarizationState, b: &BiasPoint) -> Result<f64> {
    channel_conductance_vth(p, p.vth(s), b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnOffRatio {
    pub ratio: f64,
    /// True when the HRS current fell under [`CURRENT_FLOOR`]; the ratio is
    /// then `I_LRS / CURRENT_FLOOR`, an upper cap rather than a measurement.
    pub capped: bool,
}

/// Conductance ratio between two states at a bias.
pub fn conductance_ratio(
    p: &DeviceParams,
    num: PolarizationState,
    den: PolarizationState,
    b: &BiasPoint,
) -> Result<OnOffRatio> {
    if num == den {
        return Ok(OnOffRatio { ratio: 1.0, capped: false });
    }
    let (i_num, _) = clamp_current(drain_current(p, num, b)?);
    let (i_den, capped) = clamp_current(drain_current(p, den, b)?);
    if i_den == 0.0 {
        return Err(Error::ZeroDrainBias);
    }
    Ok(OnOffRatio { ratio: i_num / i_den, capped })
}

pub fn on_off_ratio(p: &DeviceParams, vg_read: f64, temp: f64) -> Result<OnOffRatio> {
    if !(vg_read > 0.0) {
        return Err(Error::InvalidBias("read voltage must be positive"));
    }
    let b = BiasPoint::new(vg_read, p.vds_read, temp);
    conductance_ratio(p, PolarizationState::lrs(p.n_levels), PolarizationState::hrs(), &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p() -> DeviceParams {
        DeviceParams::default()
    }

    fn state(l: u8) -> PolarizationState {
        PolarizationState::new(l, 4).unwrap()
    }

    #[test]
    fn zero_drain_bias_gives_zero_current() {
        for l in 0..4 {
            let b = BiasPoint::new(0.8, 0.0, 270.0);
            assert_eq!(drain_current(&p(), state(l), &b).unwrap(), 0.0);
        }
        let b = BiasPoint::new(0.8, 0.0, 300.0);
        assert_eq!(channel_conductance(&p(), state(3), &b), Err(Error::ZeroDrainBias));
    }

    #[test]
    fn nominal_temperature_is_identity() {
        let p = p();
        assert_eq!(mobility_ratio(&p, 300.0), 1.0);
        for l in 0..4 {
            assert_eq!(threshold_at_temperature(&p, state(l), 300.0).unwrap(), p.vth(state(l)));
        }
        let mut q = p;
        q.kt1 = 0.0;
        assert_eq!(threshold_at_temperature(&q, state(1), 233.0).unwrap(), q.vth(state(1)));
    }

    #[test]
    fn cold_threshold_shift() {
        let p = p();
        let got = threshold_at_temperature(&p, state(0), 233.0).unwrap() - p.vth_hrs;
        assert_relative_eq!(got, 0.45 * (1.0 - 233.0 / 300.0), max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = p();
        let b = BiasPoint::new(f64::NAN, 0.1, 300.0);
        assert!(matches!(drain_current(&p, state(0), &b), Err(Error::InvalidBias(_))));
        let b = BiasPoint::new(0.5, 0.1, 350.0);
        assert!(matches!(drain_current(&p, state(0), &b), Err(Error::UnsupportedTemperature(_))));
        assert!(PolarizationState::new(4, 4).is_err());
        let mut q = p;
        q.vth_hrs = 0.1;
        assert!(q.validate().is_err());
        q = p;
        q.n_levels = 3;
        assert!(q.validate().is_err());
        assert!(p.validate().is_ok());
    }

    #[test]
    fn level_interpolation_endpoints() {
        let p = p();
        assert_eq!(p.vth(PolarizationState::hrs()), p.vth_hrs);
        assert_eq!(p.vth(PolarizationState::lrs(4)), p.vth_lrs);
        assert_relative_eq!(p.vth(state(1)), 0.8, max_relative = 1e-12);
    }

    #[test]
    fn read_margin_at_075() {
        let p = p();
        for t in [233.0, 266.0, 300.0] {
            let r = on_off_ratio(&p, 0.75, t).unwrap();
            assert!(r.ratio > 1e3 && !r.capped, "{t}: {r:?}");
        }
        assert_eq!(
            conductance_ratio(&p, state(2), state(2), &BiasPoint::new(0.75, 0.1, 300.0))
                .unwrap()
                .ratio,
            1.0
        );
    }

    #[test]
    fn hrs_stays_subthreshold_when_cooled() {
        let p = p();
        for t in [233.0, 250.0, 266.0, 300.0] {
            let b = BiasPoint::new(0.75, p.vds_read, t);
            let (uf, _) = normalized_potentials(&p, p.vth_hrs, &b);
            assert!(uf < 0.0);
        }
    }

    #[test]
    fn hrs_conductance_drops_on_cooling() {
        let p = p();
        let g = |t| channel_conductance(&p, state(0), &BiasPoint::new(0.75, 0.1, t)).unwrap();
        assert!(g(233.0) < g(266.0) && g(266.0) < g(300.0));
    }

    #[test]
    fn deep_subthreshold_is_clamped_and_flagged() {
        let p = p();
        let b = BiasPoint::new(0.2, 0.1, 233.0);
        let raw = drain_current(&p, state(0), &b).unwrap();
        assert!(raw < CURRENT_FLOOR && raw > 0.0);
        assert_eq!(clamp_current(raw), (CURRENT_FLOOR, true));
        let r = on_off_ratio(&p, 0.2, 233.0).unwrap();
        assert!(r.capped && r.ratio.is_finite());
    }

    #[test]
    fn subthreshold_slope() {
        let p = p();
        let b1 = BiasPoint::new(0.40, 0.1, 300.0);
        let b2 = BiasPoint::new(0.45, 0.1, 300.0);
        let i1 = drain_current(&p, state(0), &b1).unwrap();
        let i2 = drain_current(&p, state(0), &b2).unwrap();
        let slope = (libm::log10(i2) - libm::log10(i1)) / 0.05;
        let ideal = 1.0 / (p.n_slope * thermal_voltage(300.0) * core::f64::consts::LN_10);
        assert_relative_eq!(slope, ideal, max_relative = 0.01);
    }

    #[test]
    fn strong_inversion_is_linear_in_overdrive() {
        // Small vds, large overdrive: Id ≈ k·(vgs − vth)·vds up to the vds/2n term.
        let p = p();
        let vds = 0.01;
        let id = |v: f64| drain_current(&p, state(3), &BiasPoint::new(v, vds, 300.0)).unwrap();
        let vgs = [0.9, 1.0, 1.1, 1.2, 1.3, 1.4];
        let d = (id(1.4) - id(0.9)) / 0.5;
        for v in vgs {
            let lin = id(0.9) + d * (v - 0.9);
            assert_relative_eq!(id(v), lin, max_relative = 0.02);
        }
    }
}
