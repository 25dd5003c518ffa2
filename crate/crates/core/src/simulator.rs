//! Synthetic touchscreen participants.
//!
//! A trial realizes, per screen axis,
//!
//! ```text
//! recorded = lag(reference) + remnant + H_bdft * perturbation
//! ```
//!
//! where `lag` is a first-order lag at the participant's tracking bandwidth
//! and the remnant is low-passed Gaussian noise scaled to a fixed RMS. All
//! positions are in mm, screen-centred: the 150 x 100 mm screen spans
//! `y in [-75, 75]`, `z in [-50, 50]`.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bdft_model::{BdftParams, Biquad, Discretization, DiscreteBdft};
use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::signals::{excitation_bins, generate_multisine, integer_cycles, MultisineSpec};

pub const SCREEN_WIDTH_MM: f64 = 150.0;
pub const SCREEN_HEIGHT_MM: f64 = 100.0;

/// Warm-up length, in time constants, used to put periodic responses in
/// steady state before the record starts.
const WARMUP_TIME_CONSTANTS: f64 = 40.0;

/// Reference content at an excitation bin above this fraction of the
/// reference's peak excursion (floored at 1 mm) counts as overlap.
const OVERLAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParticipant {
    pub bdft_y: BdftParams,
    pub bdft_z: BdftParams,
    /// Bandwidth of the reference-following lag, rad/s.
    pub tracking_bandwidth: f64,
    /// Remnant RMS, mm.
    pub remnant_level: f64,
    pub rng_seed: u64,
}

impl SyntheticParticipant {
    pub fn validate(&self) -> Result<()> {
        if !(self.tracking_bandwidth.is_finite() && self.tracking_bandwidth > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tracking bandwidth must be positive, got {}",
                self.tracking_bandwidth
            )));
        }
        if !(self.remnant_level.is_finite() && self.remnant_level >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "remnant level must be non-negative, got {}",
                self.remnant_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// `A sin(2 pi f t + phi)` per axis; phases drawn from the seed.
    Lissajous {
        amplitude_y: f64,
        amplitude_z: f64,
        freq_y_hz: f64,
        freq_z_hz: f64,
    },
    /// Equal-length segments, each ramping over its first half to a target
    /// drawn from the seed and holding over its second half.
    RampHold { segments: usize },
    FixedPoint { y: f64, z: f64 },
}

impl Default for ReferenceKind {
    fn default() -> Self {
        ReferenceKind::Lissajous {
            amplitude_y: 50.0,
            amplitude_z: 30.0,
            freq_y_hz: 0.1,
            freq_z_hz: 0.2,
        }
    }
}

/// Commanded finger trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub y: TimeSeries,
    pub z: TimeSeries,
    /// Whether the record holds whole periods of the trajectory, so that it
    /// can be continued periodically.
    pub periodic: bool,
}

/// Ramp-hold targets for `segments` segments, uniform inside 80% of the
/// screen.
pub fn ramp_hold_targets(segments: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hy, hz) = (0.4 * SCREEN_WIDTH_MM, 0.4 * SCREEN_HEIGHT_MM);
    (0..segments)
        .map(|_| [rng.random_range(-hy..=hy), rng.random_range(-hz..=hz)])
        .collect()
}

pub fn make_reference(
    kind: &ReferenceKind,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Reference> {
    if !(duration.is_finite() && duration > 0.0 && sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::InvalidArgument(
            "duration and sample rate must be positive".into(),
        ));
    }
    let n = (duration * sample_rate).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument("reference would have no samples".into()));
    }
    let t = |i: usize| i as f64 / sample_rate;
    let (y, z, periodic) = match *kind {
        ReferenceKind::FixedPoint { y, z } => (vec![y; n], vec![z; n], true),
        ReferenceKind::Lissajous {
            amplitude_y,
            amplitude_z,
            freq_y_hz,
            freq_z_hz,
        } => {
            if !(freq_y_hz > 0.0 && freq_z_hz > 0.0) {
                return Err(Error::InvalidArgument("lissajous frequencies must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (py, pz) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
            let record = n as f64 / sample_rate;
            let periodic = integer_cycles(freq_y_hz * record).is_some()
                && integer_cycles(freq_z_hz * record).is_some();
            (
                (0..n)
                    .map(|i| amplitude_y * (TAU * freq_y_hz * t(i) + py).sin())
                    .collect(),
                (0..n)
                    .map(|i| amplitude_z * (TAU * freq_z_hz * t(i) + pz).sin())
                    .collect(),
                periodic,
            )
        }
        ReferenceKind::RampHold { segments } => {
            if segments == 0 {
                return Err(Error::InvalidArgument("ramp-hold needs at least one segment".into()));
            }
            let targets = ramp_hold_targets(segments, seed);
            let seg_len = duration / segments as f64;
            let value = |ti: f64, axis: usize| {
                let i = ((ti / seg_len).floor() as usize).min(segments - 1);
                let start = if i == 0 { 0.0 } else { targets[i - 1][axis] };
                let frac = ((ti - i as f64 * seg_len) / (0.5 * seg_len)).min(1.0);
                start + (targets[i][axis] - start) * frac
            };
            (
                (0..n).map(|i| value(t(i), 0)).collect(),
                (0..n).map(|i| value(t(i), 1)).collect(),
                false,
            )
        }
    };
    Ok(Reference {
        y: TimeSeries::new(y, sample_rate)?,
        z: TimeSeries::new(z, sample_rate)?,
        periodic,
    })
}

/// One axis of a trial. Optional channels are absent for ingested
/// recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRecord {
    /// Vehicle acceleration, m/s².
    pub perturbation: TimeSeries,
    /// Finger position as measured, mm.
    pub recorded: TimeSeries,
    pub reference: Option<TimeSeries>,
    /// Reference-following component, mm.
    pub voluntary: Option<TimeSeries>,
    pub remnant: Option<TimeSeries>,
    /// Ground-truth feedthrough component, mm.
    pub truth_bdft: Option<TimeSeries>,
}

impl AxisRecord {
    fn validate(&self) -> Result<()> {
        let base = &self.perturbation;
        base.ensure_aligned(&self.recorded, "recorded")?;
        for (name, s) in [
            ("reference", &self.reference),
            ("voluntary", &self.voluntary),
            ("remnant", &self.remnant),
            ("truth_bdft", &self.truth_bdft),
        ] {
            if let Some(s) = s {
                base.ensure_aligned(s, name)?;
            }
        }
        if let (Some(v), Some(r), Some(b)) = (&self.voluntary, &self.remnant, &self.truth_bdft) {
            for (i, (((u, v), r), b)) in self
                .recorded
                .samples()
                .iter()
                .zip(v.samples())
                .zip(r.samples())
                .zip(b.samples())
                .enumerate()
            {
                if (u - v - r - b).abs() > 1e-9 * (1.0 + u.abs()) {
                    return Err(Error::InvalidSeries(format!(
                        "sample {i}: recorded != voluntary + remnant + bdft"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub y: AxisRecord,
    pub z: AxisRecord,
    /// Samples (counted per axis) whose recorded position left the screen box.
    pub out_of_box_samples: usize,
}

impl Trial {
    pub fn new(y: AxisRecord, z: AxisRecord) -> Result<Self> {
        y.validate()?;
        z.validate()?;
        y.perturbation.ensure_aligned(&z.perturbation, "y vs z")?;
        let out_of_box_samples = count_out_of_box(&y.recorded, SCREEN_WIDTH_MM)
            + count_out_of_box(&z.recorded, SCREEN_HEIGHT_MM);
        Ok(Self {
            y,
            z,
            out_of_box_samples,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.y.perturbation.sample_rate()
    }

    pub fn len(&self) -> usize {
        self.y.perturbation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV with header `t,fd_y,fd_z,u_y,u_z[,uvol_y,uvol_z][,ubdft_y,ubdft_z]`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let with_vol = self.y.voluntary.is_some() && self.z.voluntary.is_some();
        let with_truth = self.y.truth_bdft.is_some() && self.z.truth_bdft.is_some();
        let mut header = vec!["t", "fd_y", "fd_z", "u_y", "u_z"];
        let mut cols: Vec<&[f64]> = vec![
            self.y.perturbation.samples(),
            self.z.perturbation.samples(),
            self.y.recorded.samples(),
            self.z.recorded.samples(),
        ];
        if with_vol {
            header.extend(["uvol_y", "uvol_z"]);
            cols.push(self.y.voluntary.as_ref().unwrap().samples());
            cols.push(self.z.voluntary.as_ref().unwrap().samples());
        }
        if with_truth {
            header.extend(["ubdft_y", "ubdft_z"]);
            cols.push(self.y.truth_bdft.as_ref().unwrap().samples());
            cols.push(self.z.truth_bdft.as_ref().unwrap().samples());
        }
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&header)?;
        let fs = self.sample_rate();
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            row.push((i as f64 / fs).to_string());
            row.extend(cols.iter().map(|c| c[i].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a trial CSV, inferring the sample rate from the `t` column.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let table = read_columns(reader)?;
        let t = table.required("t")?;
        if t.len() < 2 {
            return Err(Error::Schema {
                row: 2,
                column: "t".into(),
                message: "need at least two rows to infer the sample rate".into(),
            });
        }
        let span = t[t.len() - 1] - t[0];
        let mut fs = (t.len() - 1) as f64 / span;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::Schema {
                row: 2,
                column: "t".into(),
                message: "time column must be increasing".into(),
            });
        }
        if (fs - fs.round()).abs() < 1e-6 * fs {
            fs = fs.round();
        }
        for (i, w) in t.windows(2).enumerate() {
            if ((w[1] - w[0]) * fs - 1.0).abs() > 1e-6 {
                return Err(Error::Schema {
                    row: i + 3,
                    column: "t".into(),
                    message: "non-uniform sampling".into(),
                });
            }
        }
        Self::from_table(&table, fs)
    }

    /// Reads a trial CSV with a known sample rate (the `t` column is ignored).
    pub fn read_csv_with_rate<R: Read>(reader: R, sample_rate: f64) -> Result<Self> {
        Self::from_table(&read_columns(reader)?, sample_rate)
    }

    fn from_table(table: &Columns, fs: f64) -> Result<Self> {
        let series = |name: &str| -> Result<TimeSeries> {
            TimeSeries::new(table.required(name)?.to_vec(), fs)
        };
        let optional = |name: &str| -> Result<Option<TimeSeries>> {
            table
                .optional(name)
                .map(|c| TimeSeries::new(c.to_vec(), fs))
                .transpose()
        };
        let axis = |a: &str| -> Result<AxisRecord> {
            Ok(AxisRecord {
                perturbation: series(&format!("fd_{a}"))?,
                recorded: series(&format!("u_{a}"))?,
                reference: None,
                voluntary: optional(&format!("uvol_{a}"))?,
                remnant: None,
                truth_bdft: optional(&format!("ubdft_{a}"))?,
            })
        };
        Trial::new(axis("y")?, axis("z")?)
    }
}

struct Columns {
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Columns {
    fn optional(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    fn required(&self, name: &str) -> Result<&[f64]> {
        self.optional(name).ok_or_else(|| Error::Schema {
            row: 1,
            column: name.into(),
            message: "missing required column".into(),
        })
    }
}

fn read_columns<R: Read>(reader: R) -> Result<Columns> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut data = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != names.len() {
            return Err(Error::Schema {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Schema {
                row,
                column: names[j].clone(),
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Schema {
                    row,
                    column: names[j].clone(),
                    message: "value is not finite".into(),
                });
            }
            data[j].push(v);
        }
    }
    if data.first().is_none_or(|c| c.is_empty()) {
        return Err(Error::Schema {
            row: 2,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    Ok(Columns { names, data })
}

fn count_out_of_box(s: &TimeSeries, extent: f64) -> usize {
    s.samples().iter().filter(|v| v.abs() > 0.5 * extent).count()
}

/// Per-trial switches beyond the participant and perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialOptions {
    /// Skip the check that the reference carries no content at excitation
    /// bins. Needed for broadband references such as ramp-hold; the FRF
    /// estimate is then biased by the reference.
    pub allow_reference_overlap: bool,
}

/// Runs one trial with the same perturbation spec on both axes.
pub fn run_trial(
    participant: &SyntheticParticipant,
    reference: &Reference,
    perturbation_spec: &MultisineSpec,
    sample_rate: f64,
    duration: f64,
) -> Result<Trial> {
    run_trial_with(
        participant,
        reference,
        (perturbation_spec, perturbation_spec),
        sample_rate,
        duration,
        &TrialOptions::default(),
    )
}

/// Runs one trial with separate `(y, z)` perturbation specs.
pub fn run_trial_with(
    participant: &SyntheticParticipant,
    reference: &Reference,
    perturbation_specs: (&MultisineSpec, &MultisineSpec),
    sample_rate: f64,
    duration: f64,
    options: &TrialOptions,
) -> Result<Trial> {
    participant.validate()?;
    let n = (duration * sample_rate).round() as usize;
    let fd_y = generate_multisine(perturbation_specs.0, sample_rate, duration)?;
    let fd_z = generate_multisine(perturbation_specs.1, sample_rate, duration)?;
    fd_y.ensure_aligned(&reference.y, "reference y")?;
    fd_z.ensure_aligned(&reference.z, "reference z")?;
    let bins_y = excitation_bins(perturbation_specs.0, sample_rate, n)?;
    let bins_z = excitation_bins(perturbation_specs.1, sample_rate, n)?;
    if !options.allow_reference_overlap {
        check_disjoint(&reference.y, &bins_y)?;
        check_disjoint(&reference.z, &bins_z)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(participant.rng_seed);
    let remnant_y = remnant(&mut rng, participant, n, sample_rate)?;
    let remnant_z = remnant(&mut rng, participant, n, sample_rate)?;

    let reference_periodic = reference.periodic;
    let axis = |fd: TimeSeries, reference: &TimeSeries, rem: TimeSeries, params: &BdftParams| {
        let voluntary = track(reference, participant.tracking_bandwidth, reference_periodic)?;
        let truth = periodic_bdft_response(params, &fd)?;
        let recorded = voluntary.add(&rem)?.add(&truth)?;
        Ok::<_, Error>(AxisRecord {
            perturbation: fd,
            recorded,
            reference: Some(reference.clone()),
            voluntary: Some(voluntary),
            remnant: Some(rem),
            truth_bdft: Some(truth),
        })
    };
    let y = axis(fd_y, &reference.y, remnant_y, &participant.bdft_y)?;
    let z = axis(fd_z, &reference.z, remnant_z, &participant.bdft_z)?;
    Trial::new(y, z)
}

fn check_disjoint(reference: &TimeSeries, bins: &[usize]) -> Result<()> {
    let mean = reference.mean();
    let centred: Vec<f64> = reference.samples().iter().map(|v| v - mean).collect();
    let excursion = centred.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let limit = OVERLAP_TOLERANCE * excursion.max(1.0);
    let n = centred.len() as f64;
    for &bin in bins {
        let amplitude = 2.0 * crate::series::dft_bin(&centred, bin).norm() / n;
        if amplitude > limit {
            return Err(Error::ReferenceOverlap {
                bin,
                freq_hz: bin as f64 * reference.sample_rate() / n,
            });
        }
    }
    Ok(())
}

/// Number of warm-up passes over a record of `duration` seconds needed to
/// cover `WARMUP_TIME_CONSTANTS` time constants.
fn warmup_passes(time_constant: f64, duration: f64) -> usize {
    ((WARMUP_TIME_CONSTANTS * time_constant / duration).ceil() as usize).max(1)
}

/// First-order-lag tracking of the reference. Periodic references start in
/// periodic steady state, others at rest on their first sample.
fn track(reference: &TimeSeries, bandwidth: f64, periodic: bool) -> Result<TimeSeries> {
    let fs = reference.sample_rate();
    let lag = Biquad::first_order_lag(bandwidth, fs);
    let x = reference.samples();
    let mut state = lag.steady_state(x[0]);
    if periodic {
        for _ in 0..warmup_passes(1.0 / bandwidth, reference.duration()) {
            for &v in x {
                lag.step(&mut state, v);
            }
        }
    }
    TimeSeries::new(lag.filter(&mut state, x), fs)
}

/// BDFT response to a periodic perturbation, started in periodic steady state.
pub fn periodic_bdft_response(params: &BdftParams, perturbation: &TimeSeries) -> Result<TimeSeries> {
    let mut filter = DiscreteBdft::new(*params, perturbation.sample_rate(), Discretization::Bilinear)?;
    let x = perturbation.samples();
    for _ in 0..warmup_passes(params.time_constant(), perturbation.duration()) {
        for &v in x {
            filter.step(v);
        }
    }
    TimeSeries::new(x.iter().map(|&v| filter.step(v)).collect(), perturbation.sample_rate())
}

fn remnant(
    rng: &mut ChaCha8Rng,
    participant: &SyntheticParticipant,
    n: usize,
    sample_rate: f64,
) -> Result<TimeSeries> {
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    if participant.remnant_level == 0.0 {
        return TimeSeries::constant(0.0, n, sample_rate);
    }
    let lag = Biquad::first_order_lag(participant.tracking_bandwidth, sample_rate);
    let mut state = [0.0; 2];
    let shaped = lag.filter(&mut state, &white);
    let rms = (shaped.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { participant.remnant_level / rms } else { 0.0 };
    TimeSeries::new(shaped.iter().map(|v| v * scale).collect(), sample_rate)
}

/// Population with log-normally perturbed BDFT parameters: each of gain,
/// natural frequency and damping on each axis is multiplied by
/// `exp(N(0, spread))`. Tracking and remnant settings are copied from
/// `base`; every participant gets its own remnant seed.
pub fn make_population(
    n: usize,
    spread: f64,
    base: &SyntheticParticipant,
    seed: u64,
) -> Result<Vec<SyntheticParticipant>> {
    if n == 0 {
        return Err(Error::InvalidArgument("population size must be at least 1".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::InvalidArgument(format!("spread must be >= 0, got {spread}")));
    }
    base.validate()?;
    let normal = Normal::new(0.0, spread).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturb = |p: &BdftParams, rng: &mut ChaCha8Rng| {
        let f: [f64; 3] = std::array::from_fn(|_| normal.sample(rng).exp());
        BdftParams::new(
            p.gain() * f[0],
            p.natural_frequency() * f[1],
            p.damping_ratio() * f[2],
        )
    };
    (0..n)
        .map(|_| {
            let bdft_y = perturb(&base.bdft_y, &mut rng)?;
            let bdft_z = perturb(&base.bdft_z, &mut rng)?;
            Ok(SyntheticParticipant {
                bdft_y,
                bdft_z,
                rng_seed: rng.next_u64(),
                ..*base
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn participant(remnant_level: f64) -> SyntheticParticipant {
        SyntheticParticipant {
            bdft_y: BdftParams::new(4.0, 12.0, 0.35).unwrap(),
            bdft_z: BdftParams::new(-2.0, 20.0, 0.5).unwrap(),
            tracking_bandwidth: 8.0,
            remnant_level,
            rng_seed: 11,
        }
    }

    fn spec() -> MultisineSpec {
        MultisineSpec::from_hz(&[(0.5, 0.3), (0.4, 0.7), (0.3, 1.3), (0.2, 2.9)]).unwrap()
    }

    #[test]
    fn fixed_point_is_constant() {
        let r = make_reference(&ReferenceKind::FixedPoint { y: 3.0, z: -4.0 }, 2.0, 50.0, 1).unwrap();
        assert!(r.y.samples().iter().all(|&v| v == 3.0));
        assert!(r.z.samples().iter().all(|&v| v == -4.0));
        assert!(r.periodic);
    }

    #[test]
    fn lissajous_bound() {
        let kind = ReferenceKind::Lissajous {
            amplitude_y: 1.0,
            amplitude_z: 1.0,
            freq_y_hz: 0.05,
            freq_z_hz: 0.1,
        };
        let r = make_reference(&kind, 60.0, 200.0, 3).unwrap();
        assert!((r.y.peak() - 1.0).abs() < 1e-6);
        assert!((r.z.peak() - 1.0).abs() < 1e-6);
        assert!(r.periodic);
        let r2 = make_reference(&kind, 60.0, 200.0, 3).unwrap();
        assert_eq!(r, r2);
        let r3 = make_reference(&kind, 61.0, 200.0, 3).unwrap();
        assert!(!r3.periodic);
    }

    #[test]
    fn ramp_hold_knots() {
        let seed = 5;
        let targets = ramp_hold_targets(3, seed);
        let fs = 100.0;
        let r = make_reference(&ReferenceKind::RampHold { segments: 3 }, 30.0, fs, seed).unwrap();
        // Segment i spans [10 i, 10 i + 10); ramp ends at 10 i + 5.
        let at = |t: f64| (t * fs).round() as usize;
        let mut prev = [0.0, 0.0];
        for (i, tgt) in targets.iter().enumerate() {
            let start = at(10.0 * i as f64);
            let end_ramp = at(10.0 * i as f64 + 5.0);
            let mid_ramp = at(10.0 * i as f64 + 2.5);
            assert!((r.y.samples()[start] - prev[0]).abs() < 1e-9);
            assert!((r.z.samples()[start] - prev[1]).abs() < 1e-9);
            assert!((r.y.samples()[mid_ramp] - 0.5 * (prev[0] + tgt[0])).abs() < 1e-9);
            assert!((r.y.samples()[end_ramp] - tgt[0]).abs() < 1e-9);
            assert!((r.z.samples()[end_ramp + 100] - tgt[1]).abs() < 1e-9);
            prev = *tgt;
        }
    }

    #[test]
    fn construction_identity_and_determinism() {
        let reference = make_reference(&ReferenceKind::default(), 30.0, 100.0, 2).unwrap();
        let p = participant(1.5);
        let a = run_trial(&p, &reference, &spec(), 100.0, 30.0).unwrap();
        let b = run_trial(&p, &reference, &spec(), 100.0, 30.0).unwrap();
        assert_eq!(a, b);
        let rem = a.y.remnant.as_ref().unwrap();
        assert!((rem.rms() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_remnant_records_voluntary_plus_bdft() {
        let reference = make_reference(&ReferenceKind::default(), 30.0, 100.0, 2).unwrap();
        let trial = run_trial(&participant(0.0), &reference, &spec(), 100.0, 30.0).unwrap();
        for axis in [&trial.y, &trial.z] {
            let diff = axis.recorded.sub(axis.voluntary.as_ref().unwrap()).unwrap();
            for (d, t) in diff.samples().iter().zip(axis.truth_bdft.as_ref().unwrap().samples()) {
                assert!((d - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fixed_point_without_perturbation_tracks_exactly() {
        let reference = make_reference(&ReferenceKind::FixedPoint { y: 10.0, z: -5.0 }, 20.0, 100.0, 0).unwrap();
        let silent = spec().scaled(0.0).unwrap();
        let trial = run_trial(&participant(0.0), &reference, &silent, 100.0, 20.0).unwrap();
        assert!(trial.y.recorded.samples().iter().all(|v| (v - 10.0).abs() < 1e-6));
        assert!(trial.z.recorded.samples().iter().all(|v| (v + 5.0).abs() < 1e-6));
    }

    #[test]
    fn overlapping_reference_is_rejected() {
        let kind = ReferenceKind::Lissajous {
            amplitude_y: 20.0,
            amplitude_z: 10.0,
            freq_y_hz: 0.3,
            freq_z_hz: 0.2,
        };
        let reference = make_reference(&kind, 30.0, 100.0, 2).unwrap();
        let err = run_trial(&participant(0.0), &reference, &spec(), 100.0, 30.0).unwrap_err();
        assert!(matches!(err, Error::ReferenceOverlap { .. }));

        let ramp = make_reference(&ReferenceKind::RampHold { segments: 3 }, 30.0, 100.0, 2).unwrap();
        assert!(run_trial(&participant(0.0), &ramp, &spec(), 100.0, 30.0).is_err());
        let opts = TrialOptions {
            allow_reference_overlap: true,
        };
        assert!(run_trial_with(&participant(0.0), &ramp, (&spec(), &spec()), 100.0, 30.0, &opts).is_ok());
    }

    #[test]
    fn non_commensurate_duration_fails() {
        let reference = make_reference(&ReferenceKind::FixedPoint { y: 0.0, z: 0.0 }, 12.5, 100.0, 0).unwrap();
        let s = MultisineSpec::from_hz(&[(1.0, 0.3)]).unwrap();
        assert!(matches!(
            run_trial(&participant(0.0), &reference, &s, 100.0, 12.5),
            Err(Error::NonCommensurate { .. })
        ));
    }

    #[test]
    fn population_spread_zero() {
        let base = participant(1.0);
        let pop = make_population(5, 0.0, &base, 9).unwrap();
        for p in &pop {
            assert_eq!(p.bdft_y, base.bdft_y);
            assert_eq!(p.bdft_z, base.bdft_z);
        }
        assert_eq!(pop, make_population(5, 0.0, &base, 9).unwrap());
    }

    #[test]
    fn trial_csv_roundtrip_keeps_channels() {
        let reference = make_reference(&ReferenceKind::default(), 10.0, 50.0, 2).unwrap();
        let s = MultisineSpec::from_hz(&[(0.5, 0.3), (0.4, 0.7), (0.3, 1.3)]).unwrap();
        let trial = run_trial(&participant(0.5), &reference, &s, 50.0, 10.0).unwrap();
        let mut buf = Vec::new();
        trial.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,fd_y,fd_z,u_y,u_z,uvol_y,uvol_z,ubdft_y,ubdft_z\n"));
        let back = Trial::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.sample_rate(), 50.0);
        assert_eq!(back.y.recorded, trial.y.recorded);
        assert_eq!(back.z.truth_bdft, trial.z.truth_bdft);
        assert!(back.y.remnant.is_none());
    }

    #[test]
    fn csv_schema_errors_name_column_and_row() {
        let text = "t,fd_y,fd_z,u_y,u_z\n0,1,2,3,4\n0.01,1,x,3,4\n";
        match Trial::read_csv(text.as_bytes()) {
            Err(Error::Schema { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "fd_z");
            }
            other => panic!("unexpected {other:?}"),
        }
        let text = "t,fd_y,u_y,u_z\n0,1,3,4\n0.01,1,3,4\n";
        match Trial::read_csv(text.as_bytes()) {
            Err(Error::Schema { column, .. }) => assert_eq!(column, "fd_z"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
