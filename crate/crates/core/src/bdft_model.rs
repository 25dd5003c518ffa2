//! Second-order BDFT model
//!
//! ```text
//!                 G wn²
//! H(s) = ---------------------
//!         s² + 2 zeta wn s + wn²
//! ```
//!
//! mapping vehicle acceleration (m/s²) to involuntary finger displacement
//! (mm), its bilinear discretization, and affine parameter schedules.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identification::{FrequencyResponse, FrfPoint};
use crate::series::TimeSeries;

/// Time constants discarded before steady-state comparisons.
pub const TRANSIENT_TIME_CONSTANTS: f64 = 5.0;

/// Gain, natural frequency and damping ratio of the BDFT model.
///
/// Gain is in mm per m/s² and may be negative (inverted feedthrough).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct BdftParams {
    gain: f64,
    natural_frequency: f64,
    damping_ratio: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    gain: f64,
    natural_frequency_rad_s: f64,
    damping_ratio: f64,
}

impl TryFrom<RawParams> for BdftParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        BdftParams::new(r.gain, r.natural_frequency_rad_s, r.damping_ratio)
    }
}

impl From<BdftParams> for RawParams {
    fn from(p: BdftParams) -> Self {
        RawParams {
            gain: p.gain,
            natural_frequency_rad_s: p.natural_frequency,
            damping_ratio: p.damping_ratio,
        }
    }
}

impl BdftParams {
    pub fn new(gain: f64, natural_frequency: f64, damping_ratio: f64) -> Result<Self> {
        if !gain.is_finite() {
            return Err(Error::InvalidParams(format!("gain must be finite, got {gain}")));
        }
        if !(natural_frequency.is_finite() && natural_frequency > 0.0) {
            return Err(Error::InvalidParams(format!(
                "natural frequency must be positive, got {natural_frequency}"
            )));
        }
        if !(damping_ratio.is_finite() && damping_ratio > 0.0) {
            return Err(Error::InvalidParams(format!(
                "damping ratio must be positive, got {damping_ratio}"
            )));
        }
        Ok(Self {
            gain,
            natural_frequency,
            damping_ratio,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// rad/s
    pub fn natural_frequency(&self) -> f64 {
        self.natural_frequency
    }

    pub fn damping_ratio(&self) -> f64 {
        self.damping_ratio
    }

    /// Envelope decay time `1 / (zeta wn)` for underdamped poles, slow-pole
    /// time constant otherwise.
    pub fn time_constant(&self) -> f64 {
        let (wn, z) = (self.natural_frequency, self.damping_ratio);
        if z < 1.0 {
            1.0 / (z * wn)
        } else {
            1.0 / (wn * (z - (z * z - 1.0).sqrt()))
        }
    }

    /// `H(j omega)` of the continuous-time model.
    pub fn response_at(&self, omega: f64) -> Complex64 {
        let wn = self.natural_frequency;
        let den = Complex64::new(wn * wn - omega * omega, 2.0 * self.damping_ratio * wn * omega);
        Complex64::new(self.gain * wn * wn, 0.0) / den
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParams(e.to_string()))
    }
}

/// Parameter-wise arithmetic mean.
pub fn average_params(params: &[BdftParams]) -> Result<BdftParams> {
    if params.is_empty() {
        return Err(Error::InvalidArgument("cannot average zero parameter sets".into()));
    }
    let n = params.len() as f64;
    let sum = params.iter().fold([0.0; 3], |acc, p| {
        [
            acc[0] + p.gain,
            acc[1] + p.natural_frequency,
            acc[2] + p.damping_ratio,
        ]
    });
    BdftParams::new(sum[0] / n, sum[1] / n, sum[2] / n)
}

/// Exact continuous-time frequency response at each `omega` (rad/s).
pub fn evaluate_frf(params: &BdftParams, omegas: &[f64]) -> Result<FrequencyResponse> {
    if let Some(w) = omegas.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "frequencies must be finite and non-negative, got {w}"
        )));
    }
    FrequencyResponse::new(
        omegas
            .iter()
            .map(|&w| FrfPoint::new(w, params.response_at(w), 1.0))
            .collect(),
    )
}

/// Frequency response of the model as realized by [`DiscreteBdft`] at
/// `sample_rate`.
///
/// The bilinear map sends `e^{j w T}` to `s = j K tan(w T / 2)`, so the
/// realized response is the continuous one at a warped frequency.
pub fn evaluate_frf_discrete(
    params: &BdftParams,
    omegas: &[f64],
    sample_rate: f64,
    discretization: Discretization,
) -> Result<FrequencyResponse> {
    check_sample_rate(params, sample_rate)?;
    let nyquist = PI * sample_rate;
    if let Some(w) = omegas
        .iter()
        .find(|w| !(w.is_finite() && **w >= 0.0 && **w < nyquist))
    {
        return Err(Error::InvalidArgument(format!(
            "frequency {w} rad/s outside [0, Nyquist)"
        )));
    }
    FrequencyResponse::new(
        omegas
            .iter()
            .map(|&w| {
                let warped = discretization.warp(w, params.natural_frequency, sample_rate);
                FrfPoint::new(w, params.response_at(warped), 1.0)
            })
            .collect(),
    )
}

/// Continuous-to-discrete mapping used for the BDFT filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Trapezoidal rule, `s = 2 fs (z - 1)/(z + 1)`.
    #[default]
    Bilinear,
    /// Bilinear with the frequency axis matched at the natural frequency.
    Prewarp,
}

impl Discretization {
    /// The constant `K` in `s = K (z - 1)/(z + 1)`.
    pub fn bilinear_constant(self, natural_frequency: f64, sample_rate: f64) -> f64 {
        match self {
            Discretization::Bilinear => 2.0 * sample_rate,
            Discretization::Prewarp => {
                natural_frequency / (natural_frequency / (2.0 * sample_rate)).tan()
            }
        }
    }

    /// Continuous frequency that the discrete filter reproduces at `omega`.
    pub fn warp(self, omega: f64, natural_frequency: f64, sample_rate: f64) -> f64 {
        self.bilinear_constant(natural_frequency, sample_rate) * (omega / (2.0 * sample_rate)).tan()
    }
}

pub(crate) fn check_sample_rate(params: &BdftParams, sample_rate: f64) -> Result<()> {
    if !(sample_rate.is_finite() && sample_rate > params.natural_frequency / PI) {
        return Err(Error::SampleRateTooLow {
            sample_rate,
            natural_frequency: params.natural_frequency,
        });
    }
    Ok(())
}

/// Second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn bdft(params: &BdftParams, sample_rate: f64, discretization: Discretization) -> Result<Self> {
        check_sample_rate(params, sample_rate)?;
        let wn = params.natural_frequency;
        let z = params.damping_ratio;
        let k = discretization.bilinear_constant(wn, sample_rate);
        let num = params.gain * wn * wn;
        let a0 = k * k + 2.0 * z * wn * k + wn * wn;
        let a1 = 2.0 * (wn * wn - k * k);
        let a2 = k * k - 2.0 * z * wn * k + wn * wn;
        Ok(Self {
            b: [num / a0, 2.0 * num / a0, num / a0],
            a: [a1 / a0, a2 / a0],
        })
    }

    /// Unity-gain first-order lag `bw / (s + bw)`, bilinear.
    pub fn first_order_lag(bandwidth: f64, sample_rate: f64) -> Self {
        let k = 2.0 * sample_rate;
        let g = bandwidth / (k + bandwidth);
        Self {
            b: [g, g, 0.0],
            a: [(bandwidth - k) / (k + bandwidth), 0.0],
        }
    }

    /// `B(z)/A(z)` at `z = e^{j omega / fs}`.
    pub fn frequency_response(&self, omega: f64, sample_rate: f64) -> Complex64 {
        let zi = Complex64::from_polar(1.0, -omega / sample_rate);
        let zi2 = zi * zi;
        let num = self.b[0] + zi * self.b[1] + zi2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + zi * self.a[0] + zi2 * self.a[1];
        num / den
    }

    /// Transposed direct form II step.
    #[inline]
    pub fn step(&self, state: &mut [f64; 2], x: f64) -> f64 {
        let y = self.b[0] * x + state[0];
        state[0] = self.b[1] * x - self.a[0] * y + state[1];
        state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// State for which a constant input `x` is already at steady state.
    pub fn steady_state(&self, x: f64) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let y = dc * x;
        let s1 = self.b[2] * x - self.a[1] * y;
        let s0 = self.b[1] * x - self.a[0] * y + s1;
        [s0, s1]
    }

    pub fn filter(&self, state: &mut [f64; 2], input: &[f64]) -> Vec<f64> {
        input.iter().map(|&x| self.step(state, x)).collect()
    }
}

/// Discretized BDFT filter with its two-sample state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBdft {
    params: BdftParams,
    sample_rate: f64,
    discretization: Discretization,
    coeffs: Biquad,
    state: [f64; 2],
}

impl DiscreteBdft {
    pub fn new(params: BdftParams, sample_rate: f64, discretization: Discretization) -> Result<Self> {
        Ok(Self {
            coeffs: Biquad::bdft(&params, sample_rate, discretization)?,
            params,
            sample_rate,
            discretization,
            state: [0.0; 2],
        })
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.coeffs.step(&mut self.state, x)
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Swaps coefficients for `params`, keeping the internal state.
    pub fn retune(&mut self, params: BdftParams) -> Result<()> {
        self.coeffs = Biquad::bdft(&params, self.sample_rate, self.discretization)?;
        self.params = params;
        Ok(())
    }

    pub fn params(&self) -> &BdftParams {
        &self.params
    }

    pub fn coefficients(&self) -> &Biquad {
        &self.coeffs
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn discretization(&self) -> Discretization {
        self.discretization
    }
}

/// Zero-initial-condition response of the bilinear-discretized model.
pub fn simulate_response(params: &BdftParams, input: &TimeSeries) -> Result<TimeSeries> {
    simulate_response_with(params, input, Discretization::default())
}

pub fn simulate_response_with(
    params: &BdftParams,
    input: &TimeSeries,
    discretization: Discretization,
) -> Result<TimeSeries> {
    let mut filter = DiscreteBdft::new(*params, input.sample_rate(), discretization)?;
    let out = input.samples().iter().map(|&x| filter.step(x)).collect();
    TimeSeries::new(out, input.sample_rate())
}

/// Samples covering `TRANSIENT_TIME_CONSTANTS` time constants of the slowest
/// of `params`.
pub fn transient_window_samples(params: &[BdftParams], sample_rate: f64) -> usize {
    let tau = params.iter().map(|p| p.time_constant()).fold(0.0, f64::max);
    (TRANSIENT_TIME_CONSTANTS * tau * sample_rate).ceil() as usize
}

/// Per-parameter slopes of an affine schedule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSensitivities {
    pub gain: f64,
    pub natural_frequency_rad_s: f64,
    pub damping_ratio: f64,
}

/// Affine parameter schedule in a single scheduling variable:
/// `p(v) = p_base + slope * (v - reference)` over `[range.0, range.1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct LpvSchedule {
    base: BdftParams,
    sensitivities: ParamSensitivities,
    variable_name: String,
    reference: f64,
    range: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    base: BdftParams,
    sensitivities: ParamSensitivities,
    variable_name: String,
    reference: f64,
    range: (f64, f64),
}

impl TryFrom<RawSchedule> for LpvSchedule {
    type Error = Error;

    fn try_from(r: RawSchedule) -> Result<Self> {
        LpvSchedule::new(r.base, r.sensitivities, r.variable_name, r.reference, r.range)
    }
}

impl From<LpvSchedule> for RawSchedule {
    fn from(s: LpvSchedule) -> Self {
        RawSchedule {
            base: s.base,
            sensitivities: s.sensitivities,
            variable_name: s.variable_name,
            reference: s.reference,
            range: s.range,
        }
    }
}

impl LpvSchedule {
    /// Rejects schedules whose natural frequency or damping would leave the
    /// positive half-line anywhere in `range`.
    pub fn new(
        base: BdftParams,
        sensitivities: ParamSensitivities,
        variable_name: impl Into<String>,
        reference: f64,
        range: (f64, f64),
    ) -> Result<Self> {
        let (lo, hi) = range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidSchedule(format!("bad range [{lo}, {hi}]")));
        }
        if !reference.is_finite()
            || ![
                sensitivities.gain,
                sensitivities.natural_frequency_rad_s,
                sensitivities.damping_ratio,
            ]
            .iter()
            .all(|s| s.is_finite())
        {
            return Err(Error::InvalidSchedule("non-finite coefficient".into()));
        }
        let schedule = Self {
            base,
            sensitivities,
            variable_name: variable_name.into(),
            reference,
            range,
        };
        // Affine in v, so the endpoints bound the whole range.
        for v in [lo, hi] {
            schedule
                .params_at(v)
                .map_err(|e| Error::InvalidSchedule(format!("at {v}: {e}")))?;
        }
        Ok(schedule)
    }

    /// Constant schedule (zero sensitivities) over `range`.
    pub fn constant(base: BdftParams, variable_name: impl Into<String>, range: (f64, f64)) -> Result<Self> {
        Self::new(
            base,
            ParamSensitivities::default(),
            variable_name,
            0.5 * (range.0 + range.1),
            range,
        )
    }

    fn params_at(&self, v: f64) -> Result<BdftParams> {
        let d = v - self.reference;
        BdftParams::new(
            self.base.gain + self.sensitivities.gain * d,
            self.base.natural_frequency + self.sensitivities.natural_frequency_rad_s * d,
            self.base.damping_ratio + self.sensitivities.damping_ratio * d,
        )
    }

    pub fn base(&self) -> &BdftParams {
        &self.base
    }

    pub fn sensitivities(&self) -> &ParamSensitivities {
        &self.sensitivities
    }

    pub fn variable_name(&self) -> &str {
        &self.variable_name
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }
}

/// Parameters of `schedule` at `variable_value`.
pub fn evaluate_schedule(schedule: &LpvSchedule, variable_value: f64) -> Result<BdftParams> {
    let (min, max) = schedule.range;
    if !(variable_value >= min && variable_value <= max) {
        return Err(Error::OutOfRange {
            value: variable_value,
            min,
            max,
        });
    }
    schedule
        .params_at(variable_value)
        .map_err(|e| Error::InvalidSchedule(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(g: f64, wn: f64, z: f64) -> BdftParams {
        BdftParams::new(g, wn, z).unwrap()
    }

    #[test]
    fn dc_gain_and_resonance() {
        let params = p(3.5, 12.0, 0.3);
        assert_eq!(params.response_at(0.0), Complex64::new(3.5, 0.0));
        assert_relative_eq!(
            params.response_at(12.0).norm(),
            3.5 / 0.6,
            max_relative = 1e-12
        );
    }

    #[test]
    fn hand_computed_point() {
        // 1*100 / (-100 + 2*0.5*10*10j + 100) = 100 / 100j = -j
        let h = evaluate_frf(&p(1.0, 10.0, 0.5), &[10.0]).unwrap();
        let v = h.points()[0].value;
        assert!((v - Complex64::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rolloff() {
        let params = p(2.0, 8.0, 0.4);
        assert!(params.response_at(800.0).norm() < 2.0 * 1.1e-4);
    }

    #[test]
    fn param_validation() {
        assert!(BdftParams::new(1.0, 0.0, 0.5).is_err());
        assert!(BdftParams::new(1.0, 1.0, 0.0).is_err());
        assert!(BdftParams::new(f64::NAN, 1.0, 0.5).is_err());
        assert!(BdftParams::new(-2.0, 1.0, 0.5).is_ok());
    }

    #[test]
    fn params_json_shape() {
        let params = p(1.5, 10.0, 0.3);
        let v: serde_json::Value = serde_json::from_str(&params.to_json()).unwrap();
        assert_eq!(v["gain"], 1.5);
        assert_eq!(v["natural_frequency_rad_s"], 10.0);
        assert_eq!(v["damping_ratio"], 0.3);
        assert_eq!(BdftParams::from_json(&params.to_json()).unwrap(), params);
        assert!(BdftParams::from_json(
            r#"{"gain":1,"natural_frequency_rad_s":-1,"damping_ratio":0.3}"#
        )
        .is_err());
    }

    #[test]
    fn zero_input_zero_output() {
        let x = TimeSeries::constant(0.0, 500, 100.0).unwrap();
        let y = simulate_response(&p(2.0, 10.0, 0.5), &x).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_settles_at_gain() {
        let params = p(2.5, 10.0, 0.5);
        let fs = 200.0;
        let settle = 10.0 / (0.5 * 10.0);
        let n = ((settle + 1.0) * fs) as usize;
        let y = simulate_response(&params, &TimeSeries::constant(1.0, n, fs).unwrap()).unwrap();
        let after = (settle * fs) as usize;
        assert!(y.samples()[after..].iter().all(|&v| (v - 2.5).abs() < 1e-4));
    }

    #[test]
    fn sample_rate_guard() {
        let params = p(1.0, 100.0, 0.5);
        let x = TimeSeries::constant(0.0, 10, 30.0).unwrap();
        assert!(matches!(
            simulate_response(&params, &x),
            Err(Error::SampleRateTooLow { .. })
        ));
        let x = TimeSeries::constant(0.0, 10, 32.0).unwrap();
        assert!(simulate_response(&params, &x).is_ok());
    }

    #[test]
    fn warped_response_matches_difference_equation() {
        let params = p(-1.7, 25.0, 0.15);
        for disc in [Discretization::Bilinear, Discretization::Prewarp] {
            let biquad = Biquad::bdft(&params, 100.0, disc).unwrap();
            for w in [0.5, 5.0, 25.0, 120.0, 300.0] {
                let direct = biquad.frequency_response(w, 100.0);
                let warped = evaluate_frf_discrete(&params, &[w], 100.0, disc).unwrap().points()[0].value;
                assert!((direct - warped).norm() <= 1e-12 * direct.norm().max(1.0));
            }
        }
    }

    #[test]
    fn prewarp_matches_resonance_exactly() {
        let params = p(1.0, 40.0, 0.2);
        let biquad = Biquad::bdft(&params, 50.0, Discretization::Prewarp).unwrap();
        let h = biquad.frequency_response(40.0, 50.0);
        assert_relative_eq!(h.norm(), 1.0 / 0.4, max_relative = 1e-12);
    }

    #[test]
    fn steady_state_init() {
        let lag = Biquad::first_order_lag(5.0, 100.0);
        let mut st = lag.steady_state(3.0);
        for _ in 0..10 {
            assert!((lag.step(&mut st, 3.0) - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn schedule_examples() {
        let base = p(1.0, 10.0, 0.4);
        let flat = LpvSchedule::constant(base, "rms", (0.0, 4.0)).unwrap();
        for v in [0.0, 1.3, 4.0] {
            assert_eq!(evaluate_schedule(&flat, v).unwrap(), base);
        }
        let sens = ParamSensitivities {
            gain: 0.1,
            ..Default::default()
        };
        let s = LpvSchedule::new(base, sens, "rms", 1.0, (0.0, 4.0)).unwrap();
        assert_eq!(evaluate_schedule(&s, 1.0).unwrap(), base);
        assert_relative_eq!(evaluate_schedule(&s, 3.0).unwrap().gain(), 1.2, max_relative = 1e-15);
        assert!(matches!(evaluate_schedule(&s, 4.5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn schedule_rejects_negative_damping_in_range() {
        let sens = ParamSensitivities {
            damping_ratio: -0.2,
            ..Default::default()
        };
        assert!(matches!(
            LpvSchedule::new(p(1.0, 10.0, 0.4), sens, "rms", 0.0, (0.0, 3.0)),
            Err(Error::InvalidSchedule(_))
        ));
    }
}
