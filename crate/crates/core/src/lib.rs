//! Biodynamic feedthrough (BDFT) toolkit for touchscreen input under vehicle
//! motion.
//!
//! The pipeline mirrors how BDFT is handled in practice:
//!
//! * [`signals`] designs periodic multisine accelerations,
//! * [`simulator`] produces synthetic participants and labelled trials,
//! * [`identification`] estimates the feedthrough FRF at the excitation
//!   frequencies and fits the second-order model of [`bdft_model`],
//! * [`cancellation`] subtracts the model-predicted feedthrough from the
//!   recorded finger position, in batch or one sample at a time,
//! * [`experiment`] runs the individual-versus-average model comparison over
//!   a synthetic population.
//!
//! Units: accelerations in m/s², finger positions in mm, frequencies in
//! rad/s unless a name says `_hz`.

pub mod bdft_model;
pub mod cancellation;
pub mod error;
pub mod experiment;
pub mod identification;
pub mod series;
pub mod signals;
pub mod simulator;

use serde::{Deserialize, Serialize};

pub use bdft_model::{
    average_params, evaluate_frf, evaluate_frf_discrete, evaluate_schedule, simulate_response,
    BdftParams, Discretization, LpvSchedule, ParamSensitivities,
};
pub use cancellation::{cancel_axis, cancel_axis_with, cancel_batch, canceller_push, CancellerState, DualAxisCanceller};
pub use error::{Error, Result};
pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentResult, FitTarget, ParticipantFailure,
    ParticipantRecord, PerturbationSource, PopulationConfig, PopulationSummary,
};
pub use identification::{
    bdft_channel, estimate_frf, fit_bdft_model, fit_bdft_model_with, fit_lpv_schedule, vaf,
    FitOptions, FitResult, FrequencyResponse, FrfPoint, ModelRealization,
};
pub use num_complex::Complex64;
pub use series::TimeSeries;
pub use signals::{
    crest_factor, excitation_bins, fit_multisine_to_psd, generate_multisine, randomize_phases,
    read_psd_csv, write_psd_csv, MeasurementWindow, MultisineSpec, PsdPoint, SineComponent,
    VehicleProfile,
};
pub use simulator::{
    make_population, make_reference, run_trial, run_trial_with, AxisRecord, Reference,
    ReferenceKind, SyntheticParticipant, Trial, TrialOptions,
};

/// A value per screen axis (`y` lateral, `z` vertical).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisPair<T> {
    pub y: T,
    pub z: T,
}

impl<T> AxisPair<T> {
    pub fn new(y: T, z: T) -> Self {
        Self { y, z }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> AxisPair<U> {
        AxisPair {
            y: f(&self.y),
            z: f(&self.z),
        }
    }
}
