mod common;

use std::f64::consts::TAU;

use bdft_core::bdft_model::transient_window_samples;
use bdft_core::*;
use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn discrete_opts(fs: f64) -> FitOptions {
    FitOptions {
        realization: ModelRealization::Discrete {
            sample_rate: fs,
            discretization: Discretization::Bilinear,
        },
        ..FitOptions::default()
    }
}

fn params_strategy() -> impl Strategy<Value = BdftParams> {
    (0.5f64..8.0, prop::bool::ANY, 4.0f64..40.0, 0.1f64..1.0).prop_map(|(g, neg, w, z)| {
        BdftParams::new(if neg { -g } else { g }, w, z).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn noise_free_estimate_is_exact(p in params_strategy(), q in params_strategy()) {
        let spec = grid_spec();
        let fs = 100.0;
        let who = participant(p, q, 0.0, 5);
        let trial = run_trial(&who, &lissajous(10.0, fs), &spec, fs, 10.0).unwrap();
        for (axis, truth) in [(&trial.y, p), (&trial.z, q)] {
            let est = estimate_frf(&axis.perturbation, &axis.recorded, &spec).unwrap();
            let exact = evaluate_frf_discrete(&truth, &spec.frequencies_rad_s(), fs, Discretization::Bilinear).unwrap();
            for (e, x) in est.points().iter().zip(exact.points()) {
                prop_assert!((e.value - x.value).norm() <= 1e-6 * x.value.norm());
                prop_assert!(e.coherence_weight > 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn exact_frf_round_trip(p in params_strategy()) {
        let omegas: Vec<f64> = GRID_HZ.iter().map(|f| TAU * f).collect();
        let frf = evaluate_frf(&p, &omegas).unwrap();
        let fit = fit_bdft_model(&frf, None).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(rel_err(fit.params.gain(), p.gain()) < 1e-6);
        prop_assert!(rel_err(fit.params.natural_frequency(), p.natural_frequency()) < 1e-6);
        prop_assert!(rel_err(fit.params.damping_ratio(), p.damping_ratio()) < 1e-6);
    }

    #[test]
    fn accepted_steps_never_raise_the_cost(p in params_strategy(), seed in 0u64..1000) {
        let omegas: Vec<f64> = GRID_HZ.iter().map(|f| TAU * f).collect();
        let exact = evaluate_frf(&p, &omegas).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<FrfPoint> = exact
            .points()
            .iter()
            .map(|pt| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let noise = Complex64::new(re, im) * 0.1 * pt.value.norm();
                FrfPoint::new(pt.omega, pt.value + noise, 0.5 + 0.5 * (pt.omega / 60.0).min(1.0))
            })
            .collect();
        let frf = FrequencyResponse::new(points).unwrap();
        let fit = fit_bdft_model(&frf, None).unwrap();
        for w in fit.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        if fit.converged {
            prop_assert!(fit.residual.is_finite());
        }
    }
}

#[test]
fn noise_free_trial_recovers_parameters() {
    let spec = grid_spec();
    let fs = 100.0;
    let who = base_participant(0.0);
    let trial = run_trial(&who, &lissajous(60.0, fs), &spec, fs, 60.0).unwrap();
    for (axis, truth) in [(&trial.y, who.bdft_y), (&trial.z, who.bdft_z)] {
        let frf = estimate_frf(&axis.perturbation, &axis.recorded, &spec).unwrap();
        let fit = fit_bdft_model_with(&frf, None, &discrete_opts(fs)).unwrap();
        assert!(rel_err(fit.params.gain(), truth.gain()) < 1e-3);
        assert!(rel_err(fit.params.natural_frequency(), truth.natural_frequency()) < 1e-3);
        assert!(rel_err(fit.params.damping_ratio(), truth.damping_ratio()) < 1e-3);
    }
}

#[test]
fn averaged_noisy_trials_recover_gain() {
    let spec = grid_spec();
    let fs = 100.0;
    let base = base_participant(0.0);
    let level = remnant_for_snr(&base, &spec, fs, 60.0, 20.0);
    let reference = lissajous(60.0, fs);
    let mut sum = vec![Complex64::new(0.0, 0.0); spec.len()];
    for seed in 0..18 {
        let mut who = base;
        who.remnant_level = level;
        who.rng_seed = 100 + seed;
        let trial = run_trial(&who, &reference, &spec, fs, 60.0).unwrap();
        let frf = estimate_frf(&trial.y.perturbation, &trial.y.recorded, &spec).unwrap();
        for (s, v) in sum.iter_mut().zip(frf.values()) {
            *s += v / 18.0;
        }
    }
    let points = spec
        .frequencies_rad_s()
        .into_iter()
        .zip(sum)
        .map(|(w, v)| FrfPoint::new(w, v, 1.0))
        .collect();
    let fit = fit_bdft_model_with(&FrequencyResponse::new(points).unwrap(), None, &discrete_opts(fs)).unwrap();
    assert!(rel_err(fit.params.gain(), base.bdft_y.gain()) < 0.05);
}

#[test]
fn more_periods_reject_more_remnant() {
    let spec = MultisineSpec::from_hz(&[(0.5, 0.5), (0.5, 1.0), (0.4, 1.5), (0.4, 2.5), (0.3, 4.0)]).unwrap();
    let fs = 50.0;
    let p = BdftParams::new(3.0, 12.0, 0.35).unwrap();
    let exact = evaluate_frf_discrete(&p, &spec.frequencies_rad_s(), fs, Discretization::Bilinear).unwrap();
    let mut variances = Vec::new();
    for periods in [2usize, 4, 8] {
        let duration = 2.0 * periods as f64;
        let reference = make_reference(&ReferenceKind::FixedPoint { y: 0.0, z: 0.0 }, duration, fs, 0).unwrap();
        let estimates: Vec<Vec<Complex64>> = (0..20)
            .map(|seed| {
                let who = participant(p, p, 1.0, 500 + seed);
                let t = run_trial(&who, &reference, &spec, fs, duration).unwrap();
                estimate_frf(&t.y.perturbation, &t.y.recorded, &spec).unwrap().values()
            })
            .collect();
        let mut variance = 0.0;
        for (k, truth) in exact.values().iter().enumerate() {
            let mean = estimates.iter().map(|e| e[k]).sum::<Complex64>() / 20.0;
            let var = estimates.iter().map(|e| (e[k] - mean).norm_sqr()).sum::<f64>() / 19.0;
            // Bias is within sampling error of the mean.
            assert!((mean - truth).norm() <= 4.0 * (var / 20.0).sqrt(), "P = {periods}, bin {k}");
            variance += var;
        }
        variances.push(variance);
    }
    assert!(variances[0] > variances[1] && variances[1] > variances[2], "{variances:?}");
}

fn steady_tail(s: &TimeSeries, skip: usize) -> TimeSeries {
    s.slice(skip, s.len()).unwrap()
}

#[test]
fn truth_model_vaf() {
    let spec = grid_spec();
    let fs = 100.0;
    let clean = base_participant(0.0);
    let p = clean.bdft_y;
    let skip = 4 * transient_window_samples(&[p], fs);
    let reference = lissajous(60.0, fs);
    let trial = run_trial(&clean, &reference, &spec, fs, 60.0).unwrap();
    let predicted = steady_tail(&simulate_response(&p, &trial.y.perturbation).unwrap(), skip);
    let measured = steady_tail(&bdft_channel(&trial.y, &spec).unwrap(), skip);
    let perfect = vaf(&measured, &predicted).unwrap();
    assert!((perfect - 100.0).abs() < 1e-6);

    let mut last = perfect;
    for level in [0.2, 0.5, 1.0] {
        let mut noisy = clean;
        noisy.remnant_level = level;
        let mut axis = run_trial(&noisy, &reference, &spec, fs, 60.0).unwrap().y;
        axis.truth_bdft = None;
        let measured = steady_tail(&bdft_channel(&axis, &spec).unwrap(), skip);
        let v = vaf(&measured, &predicted).unwrap();
        assert!(v < last, "{v} after {last}");
        last = v;
    }
}

#[test]
fn equal_variance_noise_gives_zero_vaf() {
    let n = 1000;
    let draws: Vec<f64> = (0..50)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let measured: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let predicted: Vec<f64> = measured
                .iter()
                .map(|m| { let e: f64 = StandardNormal.sample(&mut rng); m + e })
                .collect();
            vaf(
                &TimeSeries::new(measured, 100.0).unwrap(),
                &TimeSeries::new(predicted, 100.0).unwrap(),
            )
            .unwrap()
        })
        .collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    assert!(mean.abs() < 3.0, "{mean}");
}

#[test]
fn frf_exports() {
    let p = BdftParams::new(2.0, 9.0, 0.4).unwrap();
    let frf = evaluate_frf(&p, &[1.0, 5.0, 9.0, 20.0]).unwrap();
    let mut csv = Vec::new();
    frf.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert!(text.starts_with("omega_rad_s,re,im,weight\n"));
    assert_eq!(FrequencyResponse::read_csv(&csv[..]).unwrap(), frf);
    assert_eq!(FrequencyResponse::from_json(&frf.to_json()).unwrap(), frf);

    let fit = fit_bdft_model(&frf, None).unwrap();
    let json: serde_json::Value = serde_json::to_value(&fit).unwrap();
    for key in ["params", "residual", "iterations", "converged"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}
