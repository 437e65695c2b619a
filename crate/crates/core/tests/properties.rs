use ndarray::Array2;
use photon_imaging::bounds::{alpha_for_expected_count, crlb_reflectivity, exact_ml_bias};
use photon_imaging::censor::{censor_detections, rom_times};
use photon_imaging::pml::{pml_depth, pml_reflectivity, SolverSettings};
use photon_imaging::scenes::{calibrate_flux, make_scene, SceneKind, SceneParams};
use photon_imaging::simulator::simulate_frame;
use photon_imaging::{DetectionFrame, InstrumentConfig, Scene};
use proptest::prelude::*;

fn cfg() -> InstrumentConfig<f64> {
    InstrumentConfig {
        eta: 0.35,
        signal: 1.0,
        background: 0.0,
        pulses: 1000,
        period: 100e-9,
        pulse_width: 270e-12,
        delta: 8e-12,
        c: 2.998e8,
    }
}

fn desk(n: usize, sbr: f64) -> (Scene<f64>, InstrumentConfig<f64>) {
    let scene = make_scene(SceneKind::Mannequinoid, n, &SceneParams::default()).unwrap();
    let c = calibrate_flux(&scene, &cfg(), 1.5, sbr).unwrap();
    (scene, c)
}

fn random_frame(n: usize, seed: u64) -> DetectionFrame {
    let (scene, c) = desk(n, 1.0);
    simulate_frame(&scene, &c, &c.gaussian_pulse().unwrap(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn more_background_never_shrinks_the_kept_set(seed in 0_u64..1000, scale in 1.0_f64..20.0) {
        let frame = random_frame(16, seed);
        let (_, c) = desk(16, 1.0);
        let alpha = Array2::from_elem((16, 16), 0.4);
        let rom = rom_times::<f64>(&frame);
        let low = censor_detections(&frame, &c, &alpha, &rom).unwrap();
        let mut high_cfg = c;
        high_cfg.background *= scale;
        let high = censor_detections(&frame, &high_cfg, &alpha, &rom).unwrap();
        for (a, b) in low.pixels().iter().zip(high.pixels()) {
            prop_assert!(a.iter().all(|l| b.contains(l)));
        }
    }

    #[test]
    fn kept_indices_are_a_subset(seed in 0_u64..1000) {
        let frame = random_frame(16, seed);
        let (_, c) = desk(16, 1.0);
        let alpha = Array2::from_elem((16, 16), 0.2);
        let mask = censor_detections(&frame, &c, &alpha, &rom_times(&frame)).unwrap();
        prop_assert!(mask.is_consistent_with(&frame));
        for (keep, ts) in mask.pixels().iter().zip(frame.pixels()) {
            prop_assert!(keep.len() <= ts.len());
        }
    }

    #[test]
    fn censoring_commutes_with_reordering(seed in 0_u64..1000, rot in 1_usize..5) {
        let frame = random_frame(16, seed);
        let (_, c) = desk(16, 1.0);
        let alpha = Array2::from_elem((16, 16), 0.3);
        let rom = rom_times::<f64>(&frame);
        let mask = censor_detections(&frame, &c, &alpha, &rom).unwrap();
        let rotated: Vec<Vec<f64>> = frame
            .pixels()
            .iter()
            .map(|ts| {
                let mut v = ts.clone();
                if !v.is_empty() {
                    let k = rot % v.len();
                    v.rotate_left(k);
                }
                v
            })
            .collect();
        let other = DetectionFrame::new(16, rotated).unwrap();
        let mask2 = censor_detections(&other, &c, &alpha, &rom_times(&other)).unwrap();
        for (idx, ts) in frame.pixels().iter().enumerate() {
            let kept: Vec<f64> = mask.pixels()[idx].iter().map(|&l| ts[l as usize]).collect();
            let mut kept2: Vec<f64> = mask2.pixels()[idx].iter().map(|&l| other.pixels()[idx][l as usize]).collect();
            let mut kept = kept;
            kept.sort_by(f64::total_cmp);
            kept2.sort_by(f64::total_cmp);
            prop_assert_eq!(kept, kept2);
        }
    }
}

#[test]
fn tighter_tolerance_never_raises_the_objective() {
    let (scene, c) = desk(32, 1.0);
    let pulse = c.gaussian_pulse().unwrap();
    let frame = simulate_frame(&scene, &c, &pulse, 17).unwrap();
    let mut last_refl = f64::INFINITY;
    let mut last_depth = f64::INFINITY;
    for tol in [1e-3, 1e-5, 1e-7, 1e-9] {
        let mut s = SolverSettings::new(1.0);
        s.rel_tol = tol;
        let refl = pml_reflectivity(&frame, &c, &s).unwrap();
        assert!(refl.objective <= last_refl, "tol {tol}: {} > {last_refl}", refl.objective);
        last_refl = refl.objective;

        // Same mask for every tolerance so the depth objectives are comparable.
        let mut base = SolverSettings::new(1.0);
        base.rel_tol = 1e-9;
        let alpha = pml_reflectivity(&frame, &c, &base).unwrap();
        let mask = censor_detections(&frame, &c, &alpha.image, &rom_times(&frame)).unwrap();
        let mut s = SolverSettings::new(10.0);
        s.rel_tol = tol;
        let depth = pml_depth(&frame, &mask, &c, &pulse, &s).unwrap();
        assert!(depth.objective <= last_depth, "tol {tol}: {} > {last_depth}", depth.objective);
        last_depth = depth.objective;
    }
}

#[test]
fn solvers_ignore_thread_count() {
    let (scene, c) = desk(32, 1.0);
    let pulse = c.gaussian_pulse().unwrap();
    let frame = simulate_frame(&scene, &c, &pulse, 23).unwrap();
    let run = || {
        let alpha = pml_reflectivity(&frame, &c, &SolverSettings::new(1.0)).unwrap();
        let mask = censor_detections(&frame, &c, &alpha.image, &rom_times(&frame)).unwrap();
        let depth = pml_depth(&frame, &mask, &c, &pulse, &SolverSettings::new(10.0)).unwrap();
        (alpha.image, depth.image, depth.objective.to_bits())
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(one.install(run), three.install(run));
}

#[test]
fn ml_bias_vanishes_with_more_pulses() {
    let mut c = cfg();
    c.signal = 1e-2;
    c.background = 0.0;
    let biases: Vec<f64> = [100_u64, 1000, 10_000]
        .iter()
        .map(|&n| {
            c.pulses = n;
            let alpha = alpha_for_expected_count(&c, 5.0).unwrap();
            exact_ml_bias(&c, alpha)
        })
        .collect();
    assert!(biases.iter().all(|b| *b > 0.0), "{biases:?}");
    assert!(biases.windows(2).all(|w| w[1] < w[0]), "{biases:?}");
}

#[test]
fn reflectivity_bound_halves_with_double_pulses() {
    let mut c = cfg();
    c.signal = 2e-3;
    c.background = 1e-4;
    let one = crlb_reflectivity(&c, 0.7);
    c.pulses *= 2;
    assert!((crlb_reflectivity(&c, 0.7) * 2.0 / one - 1.0).abs() < 1e-14);
}
