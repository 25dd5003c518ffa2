//! Uniformly sampled scalar signals and the single-bin DFT used by the
//! identification and verification code.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A uniformly sampled real signal.
///
/// Always holds at least one sample, every sample is finite and the sample
/// rate is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidSeries(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidSeries("series must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidSeries(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Constant-valued series of `len` samples.
    pub fn constant(value: f64, len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![value; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Record length in seconds (`len / sample_rate`).
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn time_at(&self, index: usize) -> f64 {
        index as f64 / self.sample_rate
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance (divides by `len`).
    pub fn variance(&self) -> f64 {
        variance(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Same length and sample rate as `other`.
    pub fn is_aligned_with(&self, other: &TimeSeries) -> bool {
        self.samples.len() == other.samples.len() && self.sample_rate == other.sample_rate
    }

    pub(crate) fn ensure_aligned(&self, other: &TimeSeries, what: &str) -> Result<()> {
        if self.is_aligned_with(other) {
            Ok(())
        } else {
            Err(Error::LengthMismatch(format!(
                "{what}: {} samples @ {} Hz vs {} samples @ {} Hz",
                self.len(),
                self.sample_rate,
                other.len(),
                other.sample_rate
            )))
        }
    }

    /// Sample-wise `self - other`.
    pub fn sub(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.ensure_aligned(other, "subtract")?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a - b)
            .collect();
        Ok(TimeSeries {
            samples,
            sample_rate: self.sample_rate,
        })
    }

    /// Sample-wise `self + other`.
    pub fn add(&self, other: &TimeSeries) -> Result<TimeSeries> {
        self.ensure_aligned(other, "add")?;
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(TimeSeries {
            samples,
            sample_rate: self.sample_rate,
        })
    }

    pub fn scaled(&self, factor: f64) -> TimeSeries {
        TimeSeries {
            samples: self.samples.iter().map(|x| x * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `[start, end)` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.samples.len() {
            return Err(Error::InvalidArgument(format!(
                "slice [{start}, {end}) out of bounds for {} samples",
                self.samples.len()
            )));
        }
        Ok(TimeSeries {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }

    /// DFT coefficient `X[k] = sum_n x[n] exp(-j 2 pi k n / N)`.
    pub fn dft_bin(&self, bin: usize) -> Complex64 {
        dft_bin(&self.samples, bin)
    }
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Single DFT bin by direct summation with an exact per-sample twiddle.
///
/// The phase index `k*n mod N` is reduced in integers so the twiddle stays
/// accurate on long records.
pub fn dft_bin(x: &[f64], bin: usize) -> Complex64 {
    let n = x.len();
    if n == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let step = (bin % n) as u128;
    let len = n as u128;
    let scale = -2.0 * PI / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let idx = ((i as u128 * step) % len) as f64;
        let (s, c) = (scale * idx).sin_cos();
        acc += Complex64::new(v * c, v * s);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(TimeSeries::new(vec![1.0, f64::NAN], 10.0).is_err());
        assert!(TimeSeries::new(vec![], 10.0).is_err());
        assert!(TimeSeries::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn dft_of_cosine_is_half_n() {
        let n = 64;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / n as f64).cos())
            .collect();
        let b = dft_bin(&x, 5);
        assert!((b.re - 32.0).abs() < 1e-10);
        assert!(b.im.abs() < 1e-10);
        assert!(dft_bin(&x, 6).norm() < 1e-10);
    }

    #[test]
    fn basic_statistics() {
        let s = TimeSeries::new(vec![1.0, -1.0, 1.0, -1.0], 4.0).unwrap();
        assert_eq!(s.mean(), 0.0);
        assert_eq!(s.variance(), 1.0);
        assert_eq!(s.rms(), 1.0);
        assert_eq!(s.duration(), 1.0);
    }
}
