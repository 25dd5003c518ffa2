mod common;

use bdft_core::bdft_model::transient_window_samples;
use bdft_core::*;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn bin_power(x: &[f64], bins: &[usize]) -> f64 {
    bins.iter().map(|&b| phasor(x, b).norm_sqr()).sum()
}

fn white(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn perfect_model_removes_feedthrough() {
    let spec = grid_spec();
    let fs = 100.0;
    let duration = 60.0;
    let who = base_participant(0.0);
    let trial = run_trial(&who, &lissajous(duration, fs), &spec, fs, duration).unwrap();
    let (ucan_y, ucan_z) = cancel_batch(&trial, &who.bdft_y, &who.bdft_z).unwrap();

    // Drop the first 10 s period; the remaining 50 s still holds whole periods.
    let skip = (10.0 * fs) as usize;
    let kept = trial.len() - skip;
    let bins = excitation_bins(&spec, fs, kept).unwrap();
    let bin_of = |hz: f64| (hz * kept as f64 / fs).round() as usize;

    for (axis, ucan, reference_bin) in [(&trial.y, &ucan_y, bin_of(0.1)), (&trial.z, &ucan_z, bin_of(0.2))] {
        let vol = axis.voluntary.as_ref().unwrap();
        let residual = ucan.sub(vol).unwrap();
        let before = axis.recorded.sub(vol).unwrap();
        let ratio = bin_power(&residual.samples()[skip..], &bins) / bin_power(&before.samples()[skip..], &bins);
        assert!(ratio <= 1e-8, "{ratio}");

        let rec = &axis.recorded.samples()[skip..];
        let can = &ucan.samples()[skip..];
        let (r, c) = (phasor(rec, reference_bin).norm_sqr(), phasor(can, reference_bin).norm_sqr());
        assert!((r - c).abs() <= 1e-9 * r, "{r} vs {c}");
    }
}

#[test]
fn parameter_update_settles_to_fresh_canceller() {
    let fs = 100.0;
    let a = BdftParams::new(3.0, 12.0, 0.35).unwrap();
    let b = BdftParams::new(3.6, 14.0, 0.3).unwrap();
    let fd = white(6000, 4);
    let switch = 2000;
    let settle = transient_window_samples(&[a, b], fs);

    let mut updated = CancellerState::new(a, fs).unwrap();
    let mut fresh = CancellerState::new(b, fs).unwrap();
    let mut worst: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for (i, &f) in fd.iter().enumerate() {
        if i == switch {
            updated.set_params(b).unwrap();
        }
        let (x, y) = (updated.push(f, 0.0), fresh.push(f, 0.0));
        if i >= switch + settle {
            worst = worst.max((x - y).abs());
            peak = peak.max(y.abs());
        }
    }
    assert!(worst <= 1e-3 * peak, "{worst} vs peak {peak}");
}

#[test]
fn dual_axis_matches_single_axis() {
    let fs = 100.0;
    let params = AxisPair {
        y: BdftParams::new(3.0, 12.0, 0.35).unwrap(),
        z: BdftParams::new(4.0, 15.0, 0.3).unwrap(),
    };
    let mut dual = DualAxisCanceller::new(params, fs).unwrap();
    let mut y = CancellerState::new(params.y, fs).unwrap();
    let mut z = CancellerState::new(params.z, fs).unwrap();
    let (fy, fz, u) = (white(500, 1), white(500, 2), white(500, 3));
    for i in 0..500 {
        let out = dual.push((fy[i], fz[i]), (u[i], -u[i]));
        assert_eq!(out, (y.push(fy[i], u[i]), z.push(fz[i], -u[i])));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn streaming_equals_batch(g in -6.0f64..6.0, w in 3.0f64..40.0, z in 0.1f64..1.2, seed in 0u64..1000) {
        let fs = 100.0;
        let p = BdftParams::new(g, w, z).unwrap();
        let fd = TimeSeries::new(white(2000, seed), fs).unwrap();
        let u = TimeSeries::new(white(2000, seed + 1), fs).unwrap();
        let batch = cancel_axis(&fd, &u, &p).unwrap();
        let mut c = CancellerState::new(p, fs).unwrap();
        for ((&f, &x), &expected) in fd.samples().iter().zip(u.samples()).zip(batch.samples()) {
            prop_assert_eq!(canceller_push(&mut c, f, x), expected);
        }
    }
}

#[test]
fn average_model_sits_between_none_and_truth() {
    let spec = grid_spec();
    let fs = 100.0;
    let duration = 60.0;
    let base = base_participant(0.0);
    let population = make_population(18, 0.2, &base, 2024).unwrap();
    let average = AxisPair {
        y: average_params(&population.iter().map(|p| p.bdft_y).collect::<Vec<_>>()).unwrap(),
        z: average_params(&population.iter().map(|p| p.bdft_z).collect::<Vec<_>>()).unwrap(),
    };
    let reference = lissajous(duration, fs);
    for who in &population {
        let trial = run_trial(who, &reference, &spec, fs, duration).unwrap();
        for (axis, truth, avg) in [(&trial.y, who.bdft_y, average.y), (&trial.z, who.bdft_z, average.z)] {
            let skip = transient_window_samples(&[truth, avg], fs);
            let tail = |s: &TimeSeries| s.slice(skip, s.len()).unwrap();
            let vol = tail(axis.voluntary.as_ref().unwrap());
            let none = vaf(&vol, &tail(&axis.recorded)).unwrap();
            let with_avg = vaf(&vol, &tail(&cancel_axis(&axis.perturbation, &axis.recorded, &avg).unwrap())).unwrap();
            let with_truth = vaf(&vol, &tail(&cancel_axis(&axis.perturbation, &axis.recorded, &truth).unwrap())).unwrap();
            assert!(none < with_avg && with_avg < with_truth, "{none} {with_avg} {with_truth}");
        }
    }
}
