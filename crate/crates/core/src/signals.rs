//! Multisine perturbation signals.
//!
//! A perturbation is a finite sum of sinusoids
//! `f(t) = sum_k A[k] sin(w[k] t + phi[k])` with strictly positive, distinct
//! frequencies. On a record that holds an integer number of periods of every
//! component each sinusoid lands exactly on one DFT bin, which is what makes
//! the spectral estimator in [`crate::identification`] leakage-free.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::TimeSeries;

/// Relative tolerance for the integer-period test.
pub const COMMENSURATE_TOL: f64 = 1e-9;

/// Phase trials used when no count is given.
pub const DEFAULT_PHASE_TRIALS: usize = 100;

/// Record length (seconds) whose DFT grid fitted frequencies snap onto.
pub const DEFAULT_BASE_RECORD_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    /// Acceleration amplitude, m/s².
    pub amplitude: f64,
    pub freq_rad_s: f64,
    pub phase_rad: f64,
}

impl SineComponent {
    pub fn new(amplitude: f64, freq_rad_s: f64, phase_rad: f64) -> Self {
        Self {
            amplitude,
            freq_rad_s,
            phase_rad,
        }
    }

    pub fn freq_hz(&self) -> f64 {
        self.freq_rad_s / TAU
    }
}

/// Amplitudes, frequencies and phases of a multisine.
///
/// Components are kept sorted by frequency and phases are normalized to
/// `[0, 2pi)`. Serializes as a JSON array of `{amplitude, freq_rad_s, phase_rad}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SineComponent>", into = "Vec<SineComponent>")]
pub struct MultisineSpec {
    components: Vec<SineComponent>,
}

impl MultisineSpec {
    pub fn new(components: Vec<SineComponent>) -> Result<Self> {
        let spec = Self::build(components)?;
        if !spec.components.iter().any(|c| c.amplitude > 0.0) {
            return Err(Error::InvalidSpec(
                "at least one amplitude must be strictly positive".into(),
            ));
        }
        Ok(spec)
    }

    fn build(mut components: Vec<SineComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptySpec);
        }
        for (i, c) in components.iter_mut().enumerate() {
            if !(c.freq_rad_s.is_finite() && c.freq_rad_s > 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "component {i}: frequency must be finite and positive, got {}",
                    c.freq_rad_s
                )));
            }
            if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                return Err(Error::InvalidSpec(format!(
                    "component {i}: amplitude must be finite and non-negative, got {}",
                    c.amplitude
                )));
            }
            if !c.phase_rad.is_finite() {
                return Err(Error::InvalidSpec(format!("component {i}: phase is not finite")));
            }
            c.phase_rad = normalize_phase(c.phase_rad);
        }
        components.sort_by(|a, b| a.freq_rad_s.total_cmp(&b.freq_rad_s));
        if let Some(w) = components.windows(2).find(|w| w[0].freq_rad_s == w[1].freq_rad_s) {
            return Err(Error::InvalidSpec(format!(
                "duplicate frequency {} rad/s",
                w[0].freq_rad_s
            )));
        }
        Ok(Self { components })
    }

    /// Convenience constructor from `(amplitude, freq_hz)` pairs with zero phase.
    pub fn from_hz(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(a, f)| SineComponent::new(a, f * TAU, 0.0))
                .collect(),
        )
    }

    /// Copy with every amplitude multiplied by `factor`.
    ///
    /// `factor == 0` yields a silent spec with the same frequency grid. It is
    /// the only way to obtain an all-zero spec and exists for null-perturbation
    /// control runs.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be finite and non-negative, got {factor}"
            )));
        }
        Self::build(
            self.components
                .iter()
                .map(|c| SineComponent {
                    amplitude: c.amplitude * factor,
                    ..*c
                })
                .collect(),
        )
    }

    /// Copy with replaced phases (same order as [`components`](Self::components)).
    pub fn with_phases(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.components.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} phases, got {}",
                self.components.len(),
                phases.len()
            )));
        }
        Self::build(
            self.components
                .iter()
                .zip(phases)
                .map(|(c, &p)| SineComponent { phase_rad: p, ..*c })
                .collect(),
        )
    }

    pub fn components(&self) -> &[SineComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_silent(&self) -> bool {
        self.components.iter().all(|c| c.amplitude == 0.0)
    }

    pub fn frequencies_rad_s(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.freq_rad_s).collect()
    }

    pub fn max_freq_hz(&self) -> f64 {
        self.components.last().map(|c| c.freq_hz()).unwrap_or(0.0)
    }

    pub fn min_freq_hz(&self) -> f64 {
        self.components.first().map(|c| c.freq_hz()).unwrap_or(0.0)
    }

    /// Analytic variance, `sum A²/2`.
    pub fn variance(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude * c.amplitude / 2.0).sum()
    }

    /// Continuous-time value at `t` seconds.
    pub fn value_at(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude * (c.freq_rad_s * t + c.phase_rad).sin())
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

impl TryFrom<Vec<SineComponent>> for MultisineSpec {
    type Error = Error;

    fn try_from(components: Vec<SineComponent>) -> Result<Self> {
        MultisineSpec::new(components)
    }
}

impl From<MultisineSpec> for Vec<SineComponent> {
    fn from(spec: MultisineSpec) -> Self {
        spec.components
    }
}

fn normalize_phase(p: f64) -> f64 {
    let r = p.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// A record length holding an integer number of periods of a spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementWindow {
    pub duration: f64,
    /// Full periods of the lowest spec frequency.
    pub periods: u64,
}

impl MeasurementWindow {
    /// Checks that `duration` holds an integer number of cycles of every
    /// component.
    pub fn new(spec: &MultisineSpec, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "duration must be positive, got {duration}"
            )));
        }
        let mut periods = 0;
        for (i, c) in spec.components().iter().enumerate() {
            let cycles = c.freq_hz() * duration;
            let k = integer_cycles(cycles).ok_or(Error::NonCommensurate {
                freq_hz: c.freq_hz(),
                cycles,
            })?;
            if i == 0 {
                periods = k;
            }
        }
        Ok(Self { duration, periods })
    }
}

pub(crate) fn integer_cycles(cycles: f64) -> Option<u64> {
    let r = cycles.round();
    if r >= 1.0 && (cycles - r).abs() <= COMMENSURATE_TOL * cycles.abs().max(1.0) {
        Some(r as u64)
    } else {
        None
    }
}

/// Samples `spec` at `sample_rate` for `duration` seconds.
pub fn generate_multisine(
    spec: &MultisineSpec,
    sample_rate: f64,
    duration: f64,
) -> Result<TimeSeries> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample rate must be positive, got {sample_rate}"
        )));
    }
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be positive, got {duration}"
        )));
    }
    check_nyquist(spec, sample_rate)?;
    let n = (duration * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s at {sample_rate} Hz yields no samples"
        )));
    }
    let samples = (0..n)
        .map(|i| spec.value_at(i as f64 / sample_rate))
        .collect();
    TimeSeries::new(samples, sample_rate)
}

pub(crate) fn check_nyquist(spec: &MultisineSpec, sample_rate: f64) -> Result<()> {
    match spec
        .components()
        .iter()
        .find(|c| c.freq_hz() >= sample_rate / 2.0)
    {
        Some(c) => Err(Error::NyquistViolation {
            freq_hz: c.freq_hz(),
            sample_rate,
        }),
        None => Ok(()),
    }
}

/// Peak-to-RMS ratio `max|x| / rms(x)`.
pub fn crest_factor(series: &TimeSeries) -> Result<f64> {
    let rms = series.rms();
    if rms == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(series.peak() / rms)
}

/// Sampling grid `(sample_rate_hz, duration_s)` on which [`randomize_phases`]
/// scores candidate phase sets: 16 samples per cycle of the highest component
/// over one common period (capped at 100 cycles of the lowest component and
/// 2^18 samples).
pub fn crest_eval_grid(spec: &MultisineSpec) -> (f64, f64) {
    let f_max = spec.max_freq_hz();
    let f_min = spec.min_freq_hz();
    let sample_rate = 16.0 * f_max;
    let f0 = common_fundamental_hz(&spec.components().iter().map(|c| c.freq_hz()).collect::<Vec<_>>());
    let mut duration = (1.0 / f0).min(100.0 / f_min);
    let max_len = (1usize << 18) as f64;
    if duration * sample_rate > max_len {
        duration = max_len / sample_rate;
    }
    (sample_rate, duration)
}

/// Approximate greatest common divisor of a set of frequencies.
fn common_fundamental_hz(freqs: &[f64]) -> f64 {
    let tol = 1e-9 * freqs.iter().fold(0.0_f64, |m, f| m.max(*f));
    let gcd = |mut a: f64, mut b: f64| {
        while b > tol {
            let r = a % b;
            a = b;
            b = r;
        }
        a
    };
    freqs.iter().skip(1).fold(freqs[0], |acc, &f| gcd(acc.max(f), acc.min(f)))
}

/// Draws `trials` uniform random phase sets from a seeded stream and keeps the
/// one with the lowest crest factor on [`crest_eval_grid`].
///
/// Trial `k` always sees the same draw for a given seed, so raising `trials`
/// can only lower (never raise) the returned crest factor.
pub fn randomize_phases(spec: &MultisineSpec, seed: u64, trials: usize) -> Result<MultisineSpec> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let (fs, duration) = crest_eval_grid(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, MultisineSpec)> = None;
    for _ in 0..trials {
        let phases: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(0.0..TAU)).collect();
        let candidate = spec.with_phases(&phases)?;
        let series = generate_multisine(&candidate, fs, duration)?;
        // A silent spec has no crest factor; every draw ties.
        let cf = crest_factor(&series).unwrap_or(0.0);
        if best.as_ref().is_none_or(|(b, _)| cf < *b) {
            best = Some((cf, candidate));
        }
    }
    Ok(best.expect("at least one trial").1)
}

/// One point of a one-sided acceleration power spectral density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdPoint {
    pub freq_hz: f64,
    /// (m/s²)²/Hz
    pub psd: f64,
}

impl PsdPoint {
    pub fn new(freq_hz: f64, psd: f64) -> Self {
        Self { freq_hz, psd }
    }
}

fn validate_psd(psd: &[PsdPoint]) -> Result<()> {
    if psd.is_empty() {
        return Err(Error::InvalidArgument("target PSD is empty".into()));
    }
    for (i, p) in psd.iter().enumerate() {
        if !(p.freq_hz.is_finite() && p.freq_hz >= 0.0) {
            return Err(Error::InvalidArgument(format!("PSD row {i}: bad frequency")));
        }
        if !(p.psd.is_finite() && p.psd >= 0.0) {
            return Err(Error::InvalidArgument(format!("PSD row {i}: density must be >= 0")));
        }
    }
    if psd.windows(2).any(|w| w[1].freq_hz <= w[0].freq_hz) {
        return Err(Error::InvalidArgument(
            "PSD frequencies must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn interp_psd(psd: &[PsdPoint], f: f64) -> f64 {
    match psd.iter().position(|p| p.freq_hz >= f) {
        Some(0) => psd[0].psd,
        Some(i) => {
            let (a, b) = (psd[i - 1], psd[i]);
            a.psd + (b.psd - a.psd) * (f - a.freq_hz) / (b.freq_hz - a.freq_hz)
        }
        None => psd[psd.len() - 1].psd,
    }
}

/// Exact integral of the piecewise-linear PSD over `[lo, hi]`.
pub(crate) fn integrate_psd(psd: &[PsdPoint], lo: f64, hi: f64) -> f64 {
    let mut knots = vec![lo];
    knots.extend(
        psd.iter()
            .map(|p| p.freq_hz)
            .filter(|&f| f > lo && f < hi),
    );
    knots.push(hi);
    knots
        .windows(2)
        .map(|w| 0.5 * (interp_psd(psd, w[0]) + interp_psd(psd, w[1])) * (w[1] - w[0]))
        .sum()
}

/// Log-spaced bin edges over `[lo, hi]`, `n + 1` values.
pub fn log_bin_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let ratio = hi / lo;
    (0..=n)
        .map(|j| {
            if j == n {
                hi
            } else {
                lo * ratio.powf(j as f64 / n as f64)
            }
        })
        .collect()
}

/// Builds a multisine whose per-component power matches a target PSD.
///
/// The band is split into `n_components` log-uniform bins; component `k` sits
/// at the geometric centre of its bin snapped to the `1/base_record_s` grid
/// (bumped upward on collision) and carries `A²/2 = integral of the PSD over
/// the bin`. Phases are zero; see [`randomize_phases`].
pub fn fit_multisine_to_psd(
    target_psd: &[PsdPoint],
    n_components: usize,
    band: (f64, f64),
) -> Result<MultisineSpec> {
    fit_multisine_to_psd_with(target_psd, n_components, band, DEFAULT_BASE_RECORD_S)
}

pub fn fit_multisine_to_psd_with(
    target_psd: &[PsdPoint],
    n_components: usize,
    band: (f64, f64),
    base_record_s: f64,
) -> Result<MultisineSpec> {
    validate_psd(target_psd)?;
    if n_components == 0 {
        return Err(Error::InvalidArgument("n_components must be at least 1".into()));
    }
    if !(base_record_s.is_finite() && base_record_s > 0.0) {
        return Err(Error::InvalidArgument("base record length must be positive".into()));
    }
    let (lo, hi) = band;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(Error::InvalidArgument(format!(
            "band must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    let first = target_psd[0].freq_hz;
    let last = target_psd[target_psd.len() - 1].freq_hz;
    if lo < first || hi > last {
        return Err(Error::BandOutsidePsd { lo, hi });
    }

    let edges = log_bin_edges(lo, hi, n_components);
    let powers: Vec<f64> = edges
        .windows(2)
        .map(|w| integrate_psd(target_psd, w[0], w[1]))
        .collect();
    if powers.iter().all(|&p| p <= 0.0) {
        return Err(Error::BandEmpty { lo, hi });
    }

    let min_index = (lo * base_record_s).ceil().max(1.0) as u64;
    let max_index = (hi * base_record_s).floor() as u64;
    let mut indices: Vec<u64> = Vec::with_capacity(n_components);
    for w in edges.windows(2) {
        let centre = (w[0] * w[1]).sqrt();
        let mut m = ((centre * base_record_s).round() as u64).max(min_index);
        if let Some(&prev) = indices.last() {
            m = m.max(prev + 1);
        }
        if m > max_index {
            return Err(Error::FrequencyCollision {
                requested: n_components,
                reason: format!(
                    "grid step {} Hz leaves too few points in [{lo}, {hi}] Hz",
                    1.0 / base_record_s
                ),
            });
        }
        indices.push(m);
    }

    let components = indices
        .iter()
        .zip(&powers)
        .map(|(&m, &p)| SineComponent::new((2.0 * p).sqrt(), TAU * m as f64 / base_record_s, 0.0))
        .collect();
    MultisineSpec::new(components)
}

/// Reads a PSD table with header `freq_hz,psd`.
pub fn read_psd_csv<R: Read>(reader: R) -> Result<Vec<PsdPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["freq_hz", "psd"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Schema {
                row: 1,
                column: col.into(),
                message: "missing column".into(),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<PsdPoint>().enumerate() {
        out.push(rec.map_err(|e| Error::Schema {
            row: i + 2,
            column: String::new(),
            message: e.to_string(),
        })?);
    }
    validate_psd(&out)?;
    Ok(out)
}

pub fn write_psd_csv<W: Write>(writer: W, psd: &[PsdPoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for p in psd {
        wtr.serialize(p)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Built-in illustrative vehicle motion spectra.
///
/// These are placeholder shapes for the three vehicle classes, not measured
/// data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleProfile {
    /// Lateral, 0.5–8 Hz.
    Road,
    /// Vertical, 1–10 Hz.
    Air,
    /// Vertical, 0.05–0.5 Hz.
    Water,
}

impl VehicleProfile {
    pub fn band(self) -> (f64, f64) {
        match self {
            VehicleProfile::Road => (0.5, 8.0),
            VehicleProfile::Air => (1.0, 10.0),
            VehicleProfile::Water => (0.05, 0.5),
        }
    }

    pub fn target_psd(self) -> Vec<PsdPoint> {
        let table: &[(f64, f64)] = match self {
            VehicleProfile::Road => &[
                (0.25, 0.02),
                (0.5, 0.2),
                (1.5, 0.3),
                (4.0, 0.1),
                (8.0, 0.02),
                (10.0, 0.01),
            ],
            VehicleProfile::Air => &[
                (0.5, 0.05),
                (1.0, 0.15),
                (3.0, 0.25),
                (6.0, 0.12),
                (10.0, 0.04),
                (12.0, 0.02),
            ],
            VehicleProfile::Water => &[
                (0.02, 0.5),
                (0.05, 2.0),
                (0.12, 4.0),
                (0.25, 2.0),
                (0.5, 0.3),
                (0.6, 0.1),
            ],
        };
        table.iter().map(|&(f, p)| PsdPoint::new(f, p)).collect()
    }

    /// `n_components`-sine fit of the profile, base record 60 s, zero phases.
    pub fn multisine(self, n_components: usize) -> Result<MultisineSpec> {
        fit_multisine_to_psd(&self.target_psd(), n_components, self.band())
    }
}

impl std::str::FromStr for VehicleProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "road" => Ok(VehicleProfile::Road),
            "air" => Ok(VehicleProfile::Air),
            "water" => Ok(VehicleProfile::Water),
            other => Err(Error::InvalidArgument(format!(
                "unknown vehicle profile `{other}` (expected road, air or water)"
            ))),
        }
    }
}

/// DFT bin index of every component on an `n_samples` record.
pub fn excitation_bins(
    spec: &MultisineSpec,
    sample_rate: f64,
    n_samples: usize,
) -> Result<Vec<usize>> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) || n_samples == 0 {
        return Err(Error::InvalidArgument(
            "sample rate and record length must be positive".into(),
        ));
    }
    let record_s = n_samples as f64 / sample_rate;
    spec.components()
        .iter()
        .map(|c| {
            let cycles = c.freq_rad_s / (2.0 * PI) * record_s;
            let k = integer_cycles(cycles).ok_or(Error::NonCommensurate {
                freq_hz: c.freq_hz(),
                cycles,
            })? as usize;
            if 2 * k >= n_samples {
                return Err(Error::NyquistViolation {
                    freq_hz: c.freq_hz(),
                    sample_rate,
                });
            }
            Ok(k)
        })
        .collect()
}
