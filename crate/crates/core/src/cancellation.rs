//! Model-based BDFT cancellation.
//!
//! The measured acceleration is run through the discretized BDFT model and
//! the predicted feedthrough is subtracted from the finger position:
//! `u_can[n] = u[n] - (H * f_d)[n]`. Prediction is causal, so the batch and
//! streaming forms produce identical output sample for sample.

use crate::bdft_model::{
    evaluate_schedule, simulate_response_with, Biquad, BdftParams, Discretization, DiscreteBdft,
    LpvSchedule,
};
use crate::error::Result;
use crate::series::TimeSeries;
use crate::simulator::Trial;
use crate::AxisPair;

/// Streaming canceller for one screen axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CancellerState {
    filter: DiscreteBdft,
}

impl CancellerState {
    pub fn new(params: BdftParams, sample_rate: f64) -> Result<Self> {
        Self::with_discretization(params, sample_rate, Discretization::default())
    }

    pub fn with_discretization(
        params: BdftParams,
        sample_rate: f64,
        discretization: Discretization,
    ) -> Result<Self> {
        Ok(Self {
            filter: DiscreteBdft::new(params, sample_rate, discretization)?,
        })
    }

    /// Consumes one `(f_d, u)` pair and returns the cancelled position.
    #[inline]
    pub fn push(&mut self, fd_sample: f64, u_sample: f64) -> f64 {
        u_sample - self.filter.step(fd_sample)
    }

    /// Clears the filter state; coefficients are kept.
    pub fn reset(&mut self) {
        self.filter.reset();
    }

    /// Re-evaluates `schedule` at `variable_value` and swaps in the new
    /// coefficients. The filter state is carried over, so the switch is
    /// only approximately bumpless.
    pub fn update_params(&mut self, schedule: &LpvSchedule, variable_value: f64) -> Result<()> {
        let params = evaluate_schedule(schedule, variable_value)?;
        self.set_params(params)
    }

    pub fn set_params(&mut self, params: BdftParams) -> Result<()> {
        self.filter.retune(params)
    }

    pub fn params(&self) -> &BdftParams {
        self.filter.params()
    }

    pub fn coefficients(&self) -> &Biquad {
        self.filter.coefficients()
    }

    pub fn state(&self) -> [f64; 2] {
        self.filter.state()
    }

    pub fn sample_rate(&self) -> f64 {
        self.filter.sample_rate()
    }
}

/// Free-function form of [`CancellerState::push`].
#[inline]
pub fn canceller_push(state: &mut CancellerState, fd_sample: f64, u_sample: f64) -> f64 {
    state.push(fd_sample, u_sample)
}

/// Two independent axis cancellers.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAxisCanceller {
    pub y: CancellerState,
    pub z: CancellerState,
}

impl DualAxisCanceller {
    pub fn new(params: AxisPair<BdftParams>, sample_rate: f64) -> Result<Self> {
        Ok(Self {
            y: CancellerState::new(params.y, sample_rate)?,
            z: CancellerState::new(params.z, sample_rate)?,
        })
    }

    /// Returns `(ucan_y, ucan_z)`.
    pub fn push(&mut self, fd: (f64, f64), u: (f64, f64)) -> (f64, f64) {
        (self.y.push(fd.0, u.0), self.z.push(fd.1, u.1))
    }

    pub fn reset(&mut self) {
        self.y.reset();
        self.z.reset();
    }
}

/// `recorded - simulate_response(params, perturbation)`.
pub fn cancel_axis(
    perturbation: &TimeSeries,
    recorded: &TimeSeries,
    params: &BdftParams,
) -> Result<TimeSeries> {
    cancel_axis_with(perturbation, recorded, params, Discretization::default())
}

pub fn cancel_axis_with(
    perturbation: &TimeSeries,
    recorded: &TimeSeries,
    params: &BdftParams,
    discretization: Discretization,
) -> Result<TimeSeries> {
    perturbation.ensure_aligned(recorded, "perturbation vs recorded")?;
    let predicted = simulate_response_with(params, perturbation, discretization)?;
    recorded.sub(&predicted)
}

/// Cancelled `(y, z)` positions for a whole trial.
pub fn cancel_batch(
    trial: &Trial,
    params_y: &BdftParams,
    params_z: &BdftParams,
) -> Result<(TimeSeries, TimeSeries)> {
    Ok((
        cancel_axis(&trial.y.perturbation, &trial.y.recorded, params_y)?,
        cancel_axis(&trial.z.perturbation, &trial.z.recorded, params_z)?,
    ))
}
