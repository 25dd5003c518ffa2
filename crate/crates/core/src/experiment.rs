//! Individual-versus-average BDFT model comparison over a synthetic
//! population.
//!
//! Population -> one trial per participant -> FRF per axis -> individual fit
//! -> parameter-wise average model -> cancellation with both models -> VAF
//! table. Participants are processed in parallel; records are always stored
//! in participant order so the result is independent of scheduling.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdft_model::{
    average_params, simulate_response, transient_window_samples, BdftParams, Discretization,
};
use crate::cancellation::cancel_axis;
use crate::error::{Error, Result};
use crate::identification::{
    bdft_channel, estimate_frf, fit_bdft_model_with, vaf_slices, FitOptions, FitResult,
    FrequencyResponse, ModelRealization,
};
use crate::series::TimeSeries;
use crate::signals::{
    fit_multisine_to_psd_with, randomize_phases, read_psd_csv, MultisineSpec, VehicleProfile,
    DEFAULT_BASE_RECORD_S, DEFAULT_PHASE_TRIALS,
};
use crate::simulator::{
    make_population, make_reference, run_trial, AxisRecord, ReferenceKind, SyntheticParticipant,
    Trial,
};
use crate::AxisPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub size: usize,
    /// Standard deviation of the log-normal parameter factors.
    pub spread: f64,
    pub seed: u64,
}

fn default_phase_trials() -> usize {
    DEFAULT_PHASE_TRIALS
}

fn default_base_record() -> f64 {
    DEFAULT_BASE_RECORD_S
}

/// Where the perturbation multisine comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationSource {
    /// Explicit components; phases optionally re-drawn.
    Spec {
        components: MultisineSpec,
        #[serde(default)]
        phase_trials: Option<usize>,
        #[serde(default)]
        phase_seed: u64,
    },
    /// Built-in vehicle spectrum.
    Profile {
        profile: VehicleProfile,
        n_components: usize,
        #[serde(default = "default_phase_trials")]
        phase_trials: usize,
        #[serde(default)]
        phase_seed: u64,
        #[serde(default = "default_base_record")]
        base_record_s: f64,
    },
    /// PSD table (`freq_hz,psd` CSV), relative paths resolved against the
    /// config file's directory.
    PsdFile {
        path: PathBuf,
        band: (f64, f64),
        n_components: usize,
        #[serde(default = "default_phase_trials")]
        phase_trials: usize,
        #[serde(default)]
        phase_seed: u64,
        #[serde(default = "default_base_record")]
        base_record_s: f64,
    },
}

impl PerturbationSource {
    /// Resolves to a concrete spec; `base_dir` anchors relative PSD paths.
    pub fn resolve(&self, base_dir: &Path) -> Result<MultisineSpec> {
        match self {
            PerturbationSource::Spec {
                components,
                phase_trials,
                phase_seed,
            } => match phase_trials {
                Some(t) => randomize_phases(components, *phase_seed, *t),
                None => Ok(components.clone()),
            },
            PerturbationSource::Profile {
                profile,
                n_components,
                phase_trials,
                phase_seed,
                base_record_s,
            } => {
                let spec = fit_multisine_to_psd_with(
                    &profile.target_psd(),
                    *n_components,
                    profile.band(),
                    *base_record_s,
                )?;
                randomize_phases(&spec, *phase_seed, *phase_trials)
            }
            PerturbationSource::PsdFile {
                path,
                band,
                n_components,
                phase_trials,
                phase_seed,
                base_record_s,
            } => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let file = std::fs::File::open(&full).map_err(|e| Error::Config {
                    field: "perturbation.path".into(),
                    message: format!("{}: {e}", full.display()),
                })?;
                let psd = read_psd_csv(file)?;
                let spec = fit_multisine_to_psd_with(&psd, *n_components, *band, *base_record_s)?;
                randomize_phases(&spec, *phase_seed, *phase_trials)
            }
        }
    }
}

/// Which frequency response the individual fits match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTarget {
    /// The model as realized by the canceller at the trial sample rate.
    #[default]
    Discrete,
    /// The continuous-time model.
    Continuous,
}

/// A complete, self-contained description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub population: PopulationConfig,
    pub base_participant: SyntheticParticipant,
    pub perturbation: PerturbationSource,
    #[serde(default)]
    pub reference: ReferenceKind,
    #[serde(default)]
    pub reference_seed: u64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub fit_target: FitTarget,
    /// Used by the command-line front end only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn config_err(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// 18 participants at 20% spread, ten excitation frequencies, 60 s trials
    /// at 100 Hz. Amplitudes, BDFT parameters and remnant level are
    /// placeholders.
    pub fn default_study() -> Self {
        let freqs_hz = [0.3, 0.5, 0.7, 1.1, 1.7, 2.3, 3.1, 4.3, 6.1, 8.3];
        let pairs: Vec<(f64, f64)> = freqs_hz.iter().map(|&f| (0.3, f)).collect();
        Self {
            population: PopulationConfig {
                size: 18,
                spread: 0.2,
                seed: 2024,
            },
            base_participant: SyntheticParticipant {
                bdft_y: BdftParams::new(3.0, 12.0, 0.35).expect("valid preset"),
                bdft_z: BdftParams::new(4.0, 15.0, 0.3).expect("valid preset"),
                tracking_bandwidth: 6.0,
                remnant_level: 1.0,
                rng_seed: 0,
            },
            perturbation: PerturbationSource::Spec {
                components: MultisineSpec::from_hz(&pairs).expect("valid preset"),
                phase_trials: Some(DEFAULT_PHASE_TRIALS),
                phase_seed: 7,
            },
            reference: ReferenceKind::default(),
            reference_seed: 1,
            duration_s: 60.0,
            sample_rate_hz: 100.0,
            fit_target: FitTarget::Discrete,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config {
            field: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Eager checks of everything the pipeline would otherwise reject late.
    pub fn validate(&self) -> Result<()> {
        if self.population.size == 0 {
            return Err(config_err("population.size", "must be at least 1"));
        }
        if !(self.population.spread.is_finite() && self.population.spread >= 0.0) {
            return Err(config_err("population.spread", "must be finite and >= 0"));
        }
        self.base_participant
            .validate()
            .map_err(|e| config_err("base_participant", e.to_string()))?;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(config_err("duration_s", "must be positive"));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(config_err("sample_rate_hz", "must be positive"));
        }
        for (axis, p) in [("bdft_y", &self.base_participant.bdft_y), ("bdft_z", &self.base_participant.bdft_z)] {
            if p.natural_frequency() >= std::f64::consts::PI * self.sample_rate_hz {
                return Err(config_err(
                    &format!("base_participant.{axis}.natural_frequency_rad_s"),
                    "at or above the Nyquist frequency of sample_rate_hz",
                ));
            }
        }
        match &self.perturbation {
            PerturbationSource::Spec { phase_trials, .. } => {
                if *phase_trials == Some(0) {
                    return Err(config_err("perturbation.phase_trials", "must be at least 1"));
                }
            }
            PerturbationSource::Profile {
                n_components,
                phase_trials,
                base_record_s,
                ..
            }
            | PerturbationSource::PsdFile {
                n_components,
                phase_trials,
                base_record_s,
                ..
            } => {
                if *n_components == 0 {
                    return Err(config_err("perturbation.n_components", "must be at least 1"));
                }
                if *phase_trials == 0 {
                    return Err(config_err("perturbation.phase_trials", "must be at least 1"));
                }
                if !(base_record_s.is_finite() && *base_record_s > 0.0) {
                    return Err(config_err("perturbation.base_record_s", "must be positive"));
                }
            }
        }
        if let PerturbationSource::PsdFile { band, .. } = &self.perturbation {
            if !(band.0 > 0.0 && band.1 > band.0) {
                return Err(config_err("perturbation.band", "must satisfy 0 < lo < hi"));
            }
        }
        Ok(())
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            realization: match self.fit_target {
                FitTarget::Discrete => ModelRealization::Discrete {
                    sample_rate: self.sample_rate_hz,
                    discretization: Discretization::Bilinear,
                },
                FitTarget::Continuous => ModelRealization::Continuous,
            },
            ..FitOptions::default()
        }
    }
}

/// Per-participant outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub index: usize,
    pub true_params: AxisPair<BdftParams>,
    pub fit: AxisPair<FitResult>,
    pub frf: AxisPair<FrequencyResponse>,
    /// VAF (%) of the individual model on the feedthrough channel.
    pub model_vaf_individual: AxisPair<f64>,
    /// VAF (%) of the population-average model on the feedthrough channel.
    pub model_vaf_average: AxisPair<f64>,
    /// VAF (%) of the uncancelled position against the voluntary input.
    pub tracking_vaf_uncancelled: AxisPair<f64>,
    pub tracking_vaf_individual: AxisPair<f64>,
    pub tracking_vaf_average: AxisPair<f64>,
    pub out_of_box_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFailure {
    pub index: usize,
    pub error: String,
}

/// Population means of the per-participant VAF columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub participants: usize,
    pub failed: usize,
    pub mean_model_vaf_individual: AxisPair<f64>,
    pub mean_model_vaf_average: AxisPair<f64>,
    pub mean_tracking_vaf_uncancelled: AxisPair<f64>,
    pub mean_tracking_vaf_individual: AxisPair<f64>,
    pub mean_tracking_vaf_average: AxisPair<f64>,
    /// Participants whose individual model VAF is at least the average model's.
    pub individual_at_least_average: AxisPair<usize>,
}

impl PopulationSummary {
    pub fn from_records(records: &[ParticipantRecord], failed: usize) -> Self {
        let n = records.len().max(1) as f64;
        let mean = |get: fn(&ParticipantRecord) -> AxisPair<f64>| AxisPair {
            y: records.iter().map(|r| get(r).y).sum::<f64>() / n,
            z: records.iter().map(|r| get(r).z).sum::<f64>() / n,
        };
        Self {
            participants: records.len(),
            failed,
            mean_model_vaf_individual: mean(|r| r.model_vaf_individual),
            mean_model_vaf_average: mean(|r| r.model_vaf_average),
            mean_tracking_vaf_uncancelled: mean(|r| r.tracking_vaf_uncancelled),
            mean_tracking_vaf_individual: mean(|r| r.tracking_vaf_individual),
            mean_tracking_vaf_average: mean(|r| r.tracking_vaf_average),
            individual_at_least_average: AxisPair {
                y: records
                    .iter()
                    .filter(|r| r.model_vaf_individual.y >= r.model_vaf_average.y)
                    .count(),
                z: records
                    .iter()
                    .filter(|r| r.model_vaf_individual.z >= r.model_vaf_average.z)
                    .count(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub perturbation: MultisineSpec,
    pub average_params: Option<AxisPair<BdftParams>>,
    pub records: Vec<ParticipantRecord>,
    pub failures: Vec<ParticipantFailure>,
    pub summary: PopulationSummary,
}

impl ExperimentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// One row per participant and axis.
    pub fn table_csv(&self) -> String {
        let mut out = String::from(
            "participant,axis,gain,natural_frequency_rad_s,damping_ratio,true_gain,true_natural_frequency_rad_s,true_damping_ratio,model_vaf_individual,model_vaf_average,tracking_vaf_uncancelled,tracking_vaf_individual,tracking_vaf_average\n",
        );
        for r in &self.records {
            for (axis, fit, truth, mi, ma, tu, ti, ta) in [
                (
                    "y",
                    &r.fit.y,
                    &r.true_params.y,
                    r.model_vaf_individual.y,
                    r.model_vaf_average.y,
                    r.tracking_vaf_uncancelled.y,
                    r.tracking_vaf_individual.y,
                    r.tracking_vaf_average.y,
                ),
                (
                    "z",
                    &r.fit.z,
                    &r.true_params.z,
                    r.model_vaf_individual.z,
                    r.model_vaf_average.z,
                    r.tracking_vaf_uncancelled.z,
                    r.tracking_vaf_individual.z,
                    r.tracking_vaf_average.z,
                ),
            ] {
                out.push_str(&format!(
                    "{},{axis},{},{},{},{},{},{},{mi},{ma},{tu},{ti},{ta}\n",
                    r.index,
                    fit.params.gain(),
                    fit.params.natural_frequency(),
                    fit.params.damping_ratio(),
                    truth.gain(),
                    truth.natural_frequency(),
                    truth.damping_ratio(),
                ));
            }
        }
        out
    }
}

struct Identified {
    index: usize,
    participant: SyntheticParticipant,
    trial: Trial,
    frf: AxisPair<FrequencyResponse>,
    fit: AxisPair<FitResult>,
}

fn identify_participant(
    index: usize,
    participant: &SyntheticParticipant,
    cfg: &ExperimentConfig,
    spec: &MultisineSpec,
) -> Result<Identified> {
    let reference = make_reference(
        &cfg.reference,
        cfg.duration_s,
        cfg.sample_rate_hz,
        cfg.reference_seed,
    )?;
    let trial = run_trial(participant, &reference, spec, cfg.sample_rate_hz, cfg.duration_s)?;
    let opts = cfg.fit_options();
    let frf_y = estimate_frf(&trial.y.perturbation, &trial.y.recorded, spec)?;
    let frf_z = estimate_frf(&trial.z.perturbation, &trial.z.recorded, spec)?;
    let fit_y = fit_bdft_model_with(&frf_y, None, &opts)?;
    let fit_z = fit_bdft_model_with(&frf_z, None, &opts)?;
    Ok(Identified {
        index,
        participant: *participant,
        trial,
        frf: AxisPair::new(frf_y, frf_z),
        fit: AxisPair::new(fit_y, fit_z),
    })
}

/// VAF scores of one axis: `(model_individual, model_average,
/// tracking_uncancelled, tracking_individual, tracking_average)`.
fn score_axis(
    axis: &AxisRecord,
    spec: &MultisineSpec,
    individual: &BdftParams,
    average: &BdftParams,
) -> Result<[f64; 5]> {
    let fs = axis.perturbation.sample_rate();
    let n = axis.perturbation.len();
    let skip = transient_window_samples(&[*individual, *average], fs).min(n / 2);
    let tail = |s: &TimeSeries| s.samples()[skip..].to_vec();

    let measured = tail(&bdft_channel(axis, spec)?);
    let pred_ind = tail(&simulate_response(individual, &axis.perturbation)?);
    let pred_avg = tail(&simulate_response(average, &axis.perturbation)?);

    let voluntary = match &axis.voluntary {
        Some(v) => tail(v),
        None => tail(&axis.recorded.sub(&bdft_channel(axis, spec)?)?),
    };
    let can_ind = tail(&cancel_axis(&axis.perturbation, &axis.recorded, individual)?);
    let can_avg = tail(&cancel_axis(&axis.perturbation, &axis.recorded, average)?);
    let raw = tail(&axis.recorded);

    Ok([
        vaf_slices(&measured, &pred_ind)?,
        vaf_slices(&measured, &pred_avg)?,
        vaf_slices(&voluntary, &raw)?,
        vaf_slices(&voluntary, &can_ind)?,
        vaf_slices(&voluntary, &can_avg)?,
    ])
}

fn score_participant(
    id: &Identified,
    spec: &MultisineSpec,
    average: &AxisPair<BdftParams>,
) -> Result<ParticipantRecord> {
    let y = score_axis(&id.trial.y, spec, &id.fit.y.params, &average.y)?;
    let z = score_axis(&id.trial.z, spec, &id.fit.z.params, &average.z)?;
    let pair = |i: usize| AxisPair::new(y[i], z[i]);
    Ok(ParticipantRecord {
        index: id.index,
        true_params: AxisPair::new(id.participant.bdft_y, id.participant.bdft_z),
        fit: id.fit.clone(),
        frf: id.frf.clone(),
        model_vaf_individual: pair(0),
        model_vaf_average: pair(1),
        tracking_vaf_uncancelled: pair(2),
        tracking_vaf_individual: pair(3),
        tracking_vaf_average: pair(4),
        out_of_box_samples: id.trial.out_of_box_samples,
    })
}

/// Runs the full comparison. Configuration problems fail the run;
/// per-participant failures are collected in
/// [`ExperimentResult::failures`].
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentResult> {
    cfg.validate()?;
    let spec = cfg.perturbation.resolve(base_dir)?;
    if spec.max_freq_hz() * TAU >= std::f64::consts::PI * cfg.sample_rate_hz {
        return Err(config_err("sample_rate_hz", "perturbation exceeds Nyquist"));
    }
    let population = make_population(
        cfg.population.size,
        cfg.population.spread,
        &cfg.base_participant,
        cfg.population.seed,
    )?;

    let identified: Vec<(usize, Result<Identified>)> = population
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, identify_participant(i, p, cfg, &spec)))
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in identified {
        match r {
            Ok(id) => ok.push(id),
            Err(e) => failures.push(ParticipantFailure {
                index: i,
                error: e.to_string(),
            }),
        }
    }

    let average = if ok.is_empty() {
        None
    } else {
        let ys: Vec<BdftParams> = ok.iter().map(|id| id.fit.y.params).collect();
        let zs: Vec<BdftParams> = ok.iter().map(|id| id.fit.z.params).collect();
        Some(AxisPair::new(average_params(&ys)?, average_params(&zs)?))
    };

    let mut records = Vec::new();
    if let Some(avg) = &average {
        let scored: Vec<(usize, Result<ParticipantRecord>)> = ok
            .par_iter()
            .map(|id| (id.index, score_participant(id, &spec, avg)))
            .collect();
        for (i, r) in scored {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => failures.push(ParticipantFailure {
                    index: i,
                    error: e.to_string(),
                }),
            }
        }
    }
    failures.sort_by_key(|f| f.index);
    let summary = PopulationSummary::from_records(&records, failures.len());
    Ok(ExperimentResult {
        perturbation: spec,
        average_params: average,
        records,
        failures,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_study_round_trips_through_json() {
        let cfg = ExperimentConfig::default_study();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = ExperimentConfig::default_study();
        cfg.population.spread = -1.0;
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "population.spread"),
            other => panic!("{other:?}"),
        }
        let err = ExperimentConfig::from_json("{\"population\": 3}").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
