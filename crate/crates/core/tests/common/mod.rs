#![allow(dead_code)]

use std::f64::consts::TAU;

use bdft_core::*;

pub const GRID_HZ: [f64; 10] = [0.3, 0.5, 0.7, 1.1, 1.7, 2.3, 3.1, 4.3, 6.1, 8.3];

pub fn grid_spec() -> MultisineSpec {
    let spec = MultisineSpec::from_hz(&GRID_HZ.map(|f| (0.3, f))).unwrap();
    randomize_phases(&spec, 7, 20).unwrap()
}

pub fn participant(y: BdftParams, z: BdftParams, remnant: f64, seed: u64) -> SyntheticParticipant {
    SyntheticParticipant {
        bdft_y: y,
        bdft_z: z,
        tracking_bandwidth: 6.0,
        remnant_level: remnant,
        rng_seed: seed,
    }
}

pub fn base_participant(remnant: f64) -> SyntheticParticipant {
    participant(
        BdftParams::new(3.0, 12.0, 0.35).unwrap(),
        BdftParams::new(4.0, 15.0, 0.3).unwrap(),
        remnant,
        1,
    )
}

pub fn lissajous(duration: f64, fs: f64) -> Reference {
    make_reference(&ReferenceKind::default(), duration, fs, 0).unwrap()
}

/// Complex amplitude at `bin` by direct summation.
pub fn phasor(x: &[f64], bin: usize) -> Complex64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| v * Complex64::from_polar(1.0, -TAU * bin as f64 * i as f64 / n))
        .sum::<Complex64>()
        * (2.0 / n)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Remnant RMS at which the worst excitation bin (over both axes, averaged
/// over calibration seeds) has the requested feedthrough-to-remnant power
/// ratio. Every other bin then has a higher ratio.
pub fn remnant_for_snr(
    who: &SyntheticParticipant,
    spec: &MultisineSpec,
    fs: f64,
    duration: f64,
    snr_db: f64,
) -> f64 {
    let reference = lissajous(duration, fs);
    let mut unit = *who;
    unit.remnant_level = 1.0;
    let k = spec.len();
    let mut signal = vec![0.0; 2 * k];
    let mut noise = vec![0.0; 2 * k];
    for seed in 10_000..10_010 {
        unit.rng_seed = seed;
        let trial = run_trial(&unit, &reference, spec, fs, duration).unwrap();
        let bins = excitation_bins(spec, fs, trial.len()).unwrap();
        for (a, axis) in [&trial.y, &trial.z].into_iter().enumerate() {
            for (j, &b) in bins.iter().enumerate() {
                signal[a * k + j] += phasor(axis.truth_bdft.as_ref().unwrap().samples(), b).norm_sqr();
                noise[a * k + j] += phasor(axis.remnant.as_ref().unwrap().samples(), b).norm_sqr();
            }
        }
    }
    let worst = signal
        .iter()
        .zip(&noise)
        .map(|(s, n)| s / n)
        .fold(f64::INFINITY, f64::min);
    (worst / 10f64.powf(snr_db / 10.0)).sqrt()
}
