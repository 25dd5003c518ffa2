//! Nonparametric FRF estimation at multisine excitation bins, parametric
//! fitting of the second-order BDFT model, VAF scoring and LPV schedule
//! fitting.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bdft_model::{BdftParams, Discretization, LpvSchedule, ParamSensitivities};
use crate::error::{Error, Result};
use crate::series::{dft_bin, variance, TimeSeries};
use crate::signals::{excitation_bins, MultisineSpec};
use crate::simulator::AxisRecord;

/// Excitation power below this fraction of total signal power is treated as
/// absent.
pub const ZERO_EXCITATION_RATIO: f64 = 1e-12;

pub const DEFAULT_MAX_ITERATIONS: usize = 500;
pub const DEFAULT_COST_TOLERANCE: f64 = 1e-10;

/// One FRF estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPoint", into = "RawPoint")]
pub struct FrfPoint {
    /// rad/s
    pub omega: f64,
    pub value: Complex64,
    /// In `[0, 1]`; 1 for noise-free or single-period estimates.
    pub coherence_weight: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    omega_rad_s: f64,
    re: f64,
    im: f64,
    weight: f64,
}

impl From<RawPoint> for FrfPoint {
    fn from(r: RawPoint) -> Self {
        FrfPoint::new(r.omega_rad_s, Complex64::new(r.re, r.im), r.weight)
    }
}

impl From<FrfPoint> for RawPoint {
    fn from(p: FrfPoint) -> Self {
        RawPoint {
            omega_rad_s: p.omega,
            re: p.value.re,
            im: p.value.im,
            weight: p.coherence_weight,
        }
    }
}

impl FrfPoint {
    pub fn new(omega: f64, value: Complex64, coherence_weight: f64) -> Self {
        Self {
            omega,
            value,
            coherence_weight,
        }
    }
}

/// Complex response estimates at strictly increasing frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFrf", into = "RawFrf")]
pub struct FrequencyResponse {
    points: Vec<FrfPoint>,
}

#[derive(Serialize, Deserialize)]
struct RawFrf {
    points: Vec<FrfPoint>,
}

impl TryFrom<RawFrf> for FrequencyResponse {
    type Error = Error;

    fn try_from(r: RawFrf) -> Result<Self> {
        FrequencyResponse::new(r.points)
    }
}

impl From<FrequencyResponse> for RawFrf {
    fn from(f: FrequencyResponse) -> Self {
        RawFrf { points: f.points }
    }
}

impl FrequencyResponse {
    pub fn new(points: Vec<FrfPoint>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.omega.is_finite() && p.value.re.is_finite() && p.value.im.is_finite()) {
                return Err(Error::InvalidArgument(format!("FRF point {i} is not finite")));
            }
            if !(0.0..=1.0).contains(&p.coherence_weight) {
                return Err(Error::InvalidArgument(format!(
                    "FRF point {i}: weight {} outside [0, 1]",
                    p.coherence_weight
                )));
            }
        }
        if points.windows(2).any(|w| w[1].omega <= w[0].omega) {
            return Err(Error::InvalidArgument(
                "FRF frequencies must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[FrfPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.omega).collect()
    }

    pub fn values(&self) -> Vec<Complex64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("frf serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// CSV with header `omega_rad_s,re,im,weight`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for p in &self.points {
            wtr.serialize(RawPoint::from(*p))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut points = Vec::new();
        for (i, rec) in rdr.deserialize::<RawPoint>().enumerate() {
            let raw = rec.map_err(|e| Error::Schema {
                row: i + 2,
                column: String::new(),
                message: e.to_string(),
            })?;
            points.push(raw.into());
        }
        Self::new(points)
    }
}

/// Largest period count `P` such that the record splits into `P` equal
/// segments each holding whole cycles of every excitation bin.
pub fn period_count(bins: &[usize], n_samples: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = bins.iter().fold(0, |acc, &b| gcd(acc, b));
    (1..=g.max(1))
        .rev()
        .find(|d| g % d == 0 && n_samples.is_multiple_of(*d))
        .unwrap_or(1)
}

/// Cross-spectral FRF estimate `S_fu / S_ff` at each excitation bin.
///
/// Values come from full-record DFTs. When the record holds `P >= 2` signal
/// periods the per-period estimates are used for the weight
/// `1 - var_p(H_p) / |mean_p(H_p)|²`, clamped to `[0, 1]`.
pub fn estimate_frf(
    perturbation: &TimeSeries,
    response: &TimeSeries,
    spec: &MultisineSpec,
) -> Result<FrequencyResponse> {
    perturbation.ensure_aligned(response, "perturbation vs response")?;
    let n = perturbation.len();
    let fs = perturbation.sample_rate();
    let bins = excitation_bins(spec, fs, n)?;
    let periods = period_count(&bins, n);
    let seg = n / periods;

    let x = perturbation.samples();
    let y = response.samples();
    let total_power = x.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let mut points = Vec::with_capacity(bins.len());
    for (&bin, c) in bins.iter().zip(spec.components()) {
        let fx = dft_bin(x, bin);
        let fy = dft_bin(y, bin);
        let auto = fx.norm_sqr();
        let bin_power = 2.0 * auto / (n as f64 * n as f64);
        if !(total_power > 0.0 && bin_power >= ZERO_EXCITATION_RATIO * total_power) {
            return Err(Error::ZeroExcitation { bin });
        }
        let value = fx.conj() * fy / auto;

        let weight = if periods >= 2 {
            let local = bin / periods;
            let estimates: Vec<Complex64> = (0..periods)
                .map(|p| {
                    let r = p * seg..(p + 1) * seg;
                    let sx = dft_bin(&x[r.clone()], local);
                    let sy = dft_bin(&y[r], local);
                    sx.conj() * sy / sx.norm_sqr()
                })
                .collect();
            let mean = estimates.iter().sum::<Complex64>() / periods as f64;
            let var = estimates.iter().map(|e| (e - mean).norm_sqr()).sum::<f64>()
                / (periods - 1) as f64;
            let w = 1.0 - var / mean.norm_sqr();
            if w.is_finite() {
                w.clamp(0.0, 1.0)
            } else {
                0.0
            }
        } else {
            1.0
        };
        points.push(FrfPoint::new(c.freq_rad_s, value, weight));
    }
    FrequencyResponse::new(points)
}

/// How the fitted model's frequency response is formed.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelRealization {
    /// `H(j omega)` of the continuous-time model.
    #[default]
    Continuous,
    /// Response of the model as discretized for a canceller running at
    /// `sample_rate`.
    Discrete {
        sample_rate: f64,
        discretization: Discretization,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub realization: ModelRealization,
    pub max_iterations: usize,
    pub cost_tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            realization: ModelRealization::Continuous,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            cost_tolerance: DEFAULT_COST_TOLERANCE,
        }
    }
}

/// Outcome of [`fit_bdft_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: BdftParams,
    /// Weighted complex least-squares cost at `params`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step of the winning start.
    #[serde(skip)]
    pub cost_trace: Vec<f64>,
}

/// Model value and derivatives w.r.t. `(G, ln wn, ln zeta)` at one frequency.
fn model_with_jacobian(
    theta: &[f64; 3],
    omega: f64,
    realization: ModelRealization,
) -> (Complex64, [Complex64; 3]) {
    let g = theta[0];
    let wn = theta[1].exp();
    let z = theta[2].exp();
    let (w, dw_dwn) = match realization {
        ModelRealization::Continuous => (omega, 0.0),
        ModelRealization::Discrete {
            sample_rate,
            discretization,
        } => {
            let t = (omega / (2.0 * sample_rate)).tan();
            match discretization {
                Discretization::Bilinear => (2.0 * sample_rate * t, 0.0),
                Discretization::Prewarp => {
                    let a = wn / (2.0 * sample_rate);
                    let k = wn / a.tan();
                    let dk = 1.0 / a.tan() - a / a.sin().powi(2);
                    (k * t, dk * t)
                }
            }
        }
    };
    let j = Complex64::new(0.0, 1.0);
    let d = Complex64::new(wn * wn - w * w, 2.0 * z * wn * w);
    let d2 = d * d;
    let h = g * wn * wn / d;
    let dh_dg = wn * wn / d;
    let dd_dwn = Complex64::new(2.0 * wn, 2.0 * z * w);
    let dd_dw = Complex64::new(-2.0 * w, 2.0 * z * wn);
    let dh_dwn = g * (2.0 * wn * d - wn * wn * dd_dwn) / d2 - g * wn * wn * dd_dw / d2 * dw_dwn;
    let dh_dz = -g * wn * wn * (2.0 * j * wn * w) / d2;
    (h, [dh_dg, dh_dwn * wn, dh_dz * z])
}

fn theta_of(p: &BdftParams) -> [f64; 3] {
    [p.gain(), p.natural_frequency().ln(), p.damping_ratio().ln()]
}

fn params_of(theta: &[f64; 3]) -> Option<BdftParams> {
    BdftParams::new(theta[0], theta[1].exp(), theta[2].exp()).ok()
}

fn weighted_cost(frf: &FrequencyResponse, theta: &[f64; 3], realization: ModelRealization) -> f64 {
    frf.points()
        .iter()
        .map(|p| {
            let (h, _) = model_with_jacobian(theta, p.omega, realization);
            p.coherence_weight * (p.value - h).norm_sqr()
        })
        .sum()
}

/// Damped Gauss–Newton (Levenberg–Marquardt) from a single start.
fn levenberg_marquardt(
    frf: &FrequencyResponse,
    init: &BdftParams,
    opts: &FitOptions,
) -> FitResult {
    let realization = opts.realization;
    let mut theta = theta_of(init);
    let mut cost = weighted_cost(frf, &theta, realization);
    let scale = frf
        .points()
        .iter()
        .map(|p| p.coherence_weight * p.value.norm_sqr())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    let mut lambda = 1e-3;
    let mut trace = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let mut a = Matrix3::<f64>::zeros();
        let mut grad = Vector3::<f64>::zeros();
        for p in frf.points() {
            let (h, dh) = model_with_jacobian(&theta, p.omega, realization);
            let r = p.value - h;
            // residual r = Hhat - H, so dr/dtheta = -dH/dtheta
            for i in 0..3 {
                grad[i] -= p.coherence_weight * (dh[i].re * r.re + dh[i].im * r.im);
                for k in 0..3 {
                    a[(i, k)] +=
                        p.coherence_weight * (dh[i].re * dh[k].re + dh[i].im * dh[k].im);
                }
            }
        }
        if !a.iter().chain(grad.iter()).all(|v| v.is_finite()) {
            break;
        }

        let floor = 1e-12 * a.trace().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a;
            for i in 0..3 {
                damped[(i, i)] += lambda * a[(i, i)].max(floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => ch.solve(&(-grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2]];
            let new_cost = if params_of(&candidate).is_some() {
                weighted_cost(frf, &candidate, realization)
            } else {
                f64::INFINITY
            };
            if new_cost.is_finite() && new_cost < cost {
                let rel = (cost - new_cost) / cost;
                theta = candidate;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.cost_tolerance || cost <= 1e-30 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let params = params_of(&theta).unwrap_or(*init);
    FitResult {
        params,
        residual: cost,
        iterations,
        converged: converged && cost.is_finite(),
        cost_trace: trace,
    }
}

/// Starting points when no initial guess is given: five natural
/// frequencies log-spaced over the FRF band, each with damping 0.2 and 0.7,
/// gain from the lowest-frequency estimate.
pub fn default_starts(frf: &FrequencyResponse) -> Vec<BdftParams> {
    let pts = frf.points();
    let lo = pts[0].omega.max(1e-6);
    let hi = pts[pts.len() - 1].omega.max(lo * 1.0001);
    let h0 = pts[0].value;
    let gain = if h0.re < 0.0 { -h0.norm() } else { h0.norm() };
    let gain = if gain == 0.0 { 1.0 } else { gain };
    let mut starts = Vec::with_capacity(10);
    for i in 0..5 {
        let wn = lo * (hi / lo).powf(i as f64 / 4.0);
        for zeta in [0.2, 0.7] {
            if let Ok(p) = BdftParams::new(gain, wn, zeta) {
                starts.push(p);
            }
        }
    }
    starts
}

/// Weighted least-squares fit of `(G, wn, zeta)` to an FRF.
///
/// Natural frequency and damping are optimized in log space so they stay
/// positive. Without `init` the best of [`default_starts`] is returned.
/// A fit that hits the iteration cap comes back with `converged == false`.
pub fn fit_bdft_model(frf: &FrequencyResponse, init: Option<BdftParams>) -> Result<FitResult> {
    fit_bdft_model_with(frf, init, &FitOptions::default())
}

pub fn fit_bdft_model_with(
    frf: &FrequencyResponse,
    init: Option<BdftParams>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let usable = frf.points().iter().filter(|p| p.coherence_weight > 0.0).count();
    if usable < 3 {
        return Err(Error::TooFewPoints {
            required: 3,
            got: usable,
        });
    }
    if let ModelRealization::Discrete { sample_rate, .. } = opts.realization {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidArgument("realization sample rate must be positive".into()));
        }
        if frf.points().iter().any(|p| p.omega >= std::f64::consts::PI * sample_rate) {
            return Err(Error::InvalidArgument(
                "FRF extends beyond the realization's Nyquist frequency".into(),
            ));
        }
    }
    let starts = match init {
        Some(p) => vec![p],
        None => default_starts(frf),
    };
    let best = starts
        .iter()
        .map(|s| levenberg_marquardt(frf, s, opts))
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("at least one start");
    Ok(best)
}

/// Variance accounted for, in percent: `100 (1 - var(m - p) / var(m))`.
///
/// Not clamped; a model worse than predicting the mean scores below zero.
pub fn vaf(measured: &TimeSeries, predicted: &TimeSeries) -> Result<f64> {
    measured.ensure_aligned(predicted, "vaf")?;
    vaf_slices(measured.samples(), predicted.samples())
}

pub(crate) fn vaf_slices(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    let var_m = variance(measured);
    if var_m == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let err: Vec<f64> = measured.iter().zip(predicted).map(|(m, p)| m - p).collect();
    Ok(100.0 * (1.0 - variance(&err) / var_m))
}

/// The feedthrough component of one axis, used as the "measured" side of
/// model VAF.
///
/// Ground truth when the trial carries it, otherwise `recorded - voluntary`,
/// otherwise the projection of `recorded` onto the excitation bins of `spec`
/// (everything at other frequencies is attributed to reference following).
pub fn bdft_channel(axis: &AxisRecord, spec: &MultisineSpec) -> Result<TimeSeries> {
    if let Some(truth) = &axis.truth_bdft {
        return Ok(truth.clone());
    }
    if let Some(vol) = &axis.voluntary {
        return axis.recorded.sub(vol);
    }
    let u = axis.recorded.samples();
    let n = u.len();
    let bins = excitation_bins(spec, axis.recorded.sample_rate(), n)?;
    let coeffs: Vec<(usize, Complex64)> = bins.iter().map(|&b| (b, dft_bin(u, b))).collect();
    let step = std::f64::consts::TAU / n as f64;
    let samples = (0..n)
        .map(|i| {
            coeffs
                .iter()
                .map(|&(b, x)| {
                    let idx = ((i as u128 * b as u128) % n as u128) as f64;
                    2.0 / n as f64 * (x * Complex64::from_polar(1.0, step * idx)).re
                })
                .sum()
        })
        .collect();
    TimeSeries::new(samples, axis.recorded.sample_rate())
}

/// Ordinary least-squares affine schedule through per-condition fits.
///
/// The reference point is the mean scheduling value and the declared range is
/// the observed `[min, max]`.
pub fn fit_lpv_schedule(
    per_condition_fits: &[(f64, BdftParams)],
    variable_name: &str,
) -> Result<LpvSchedule> {
    if per_condition_fits.len() < 2 {
        return Err(Error::DegenerateVariable);
    }
    let n = per_condition_fits.len() as f64;
    let xs: Vec<f64> = per_condition_fits.iter().map(|(v, _)| *v).collect();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("scheduling values must be finite".into()));
    }
    let x_mean = xs.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateVariable);
    }
    let line = |get: fn(&BdftParams) -> f64| {
        let mean = per_condition_fits.iter().map(|(_, p)| get(p)).sum::<f64>() / n;
        let first = get(&per_condition_fits[0].1);
        let sxy: f64 = per_condition_fits
            .iter()
            .map(|(x, p)| (x - x_mean) * (get(p) - first))
            .sum();
        (mean, sxy / sxx)
    };
    let (g0, gs) = line(BdftParams::gain);
    let (w0, ws) = line(BdftParams::natural_frequency);
    let (z0, zs) = line(BdftParams::damping_ratio);
    let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    LpvSchedule::new(
        BdftParams::new(g0, w0, z0)?,
        ParamSensitivities {
            gain: gs,
            natural_frequency_rad_s: ws,
            damping_ratio: zs,
        },
        variable_name,
        x_mean,
        (min, max),
    )
}
