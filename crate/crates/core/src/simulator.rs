//! Photon-detection data generated from the exact low-flux statistics.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{quantize, signal_probability, DetectionFrame, InstrumentConfig, Scene};
use crate::pixelwise::{cml_reflectivity, log_matched_filter_depth};
use crate::pulse::PulseShape;
use crate::rng::{pixel_stream, DOMAIN_GROUND_TRUTH, DOMAIN_PIXEL};

/// Pulse budget per pixel when accumulating a fixed number of detections.
pub const GROUND_TRUTH_PULSE_CAP: u64 = 10_000_000;

/// Frame plus the true origin of every detection (`true` = signal).
#[derive(Clone, Debug)]
pub struct LabeledFrame {
    pub frame: DetectionFrame,
    pub labels: Vec<Vec<bool>>,
}

impl LabeledFrame {
    pub fn signal_fraction(&self) -> f64 {
        let total: usize = self.labels.iter().map(Vec::len).sum();
        let signal: usize = self.labels.iter().flatten().filter(|l| **l).count();
        signal as f64 / total.max(1) as f64
    }
}

/// Frame acquired with a per-pixel stopping rule; `pulses` is the number of
/// pulses each pixel needed.
#[derive(Clone, Debug)]
pub struct GroundTruthFrame {
    pub frame: DetectionFrame,
    pub pulses: Array2<u64>,
}

impl GroundTruthFrame {
    /// Pixelwise ML reflectivity and depth using each pixel's own pulse count.
    pub fn estimates(&self, cfg: &InstrumentConfig<f64>, pulse: &PulseShape<f64>) -> (Array2<f64>, Array2<f64>) {
        let n = self.frame.n();
        let mut alpha = Array2::zeros((n, n));
        let mut depth = Array2::zeros((n, n));
        for ((i, j), a) in alpha.indexed_iter_mut() {
            let mut local = *cfg;
            local.pulses = self.pulses[(i, j)];
            let k = self.frame.count(i, j) as u64;
            *a = cml_reflectivity(&local, k).value;
            depth[(i, j)] = log_matched_filter_depth(cfg, pulse, self.frame.pixel(i, j)).unwrap_or(f64::NAN);
        }
        (alpha, depth)
    }
}

fn draw_time<R: Rng>(rng: &mut R, cfg: &InstrumentConfig<f64>, pulse: &PulseShape<f64>, z: f64, signal: bool) -> f64 {
    let t = if signal {
        let arrival = cfg.round_trip(z);
        loop {
            let t = arrival + pulse.inverse_cdf(rng.random::<f64>());
            if (0.0..cfg.period).contains(&t) {
                break t;
            }
        }
    } else {
        rng.random::<f64>() * cfg.period
    };
    let q = quantize(t, cfg.delta);
    if q < cfg.period {
        q
    } else {
        ((cfg.period / cfg.delta).ceil() - 1.0) * cfg.delta
    }
}

fn simulate_pixel<R: Rng>(
    rng: &mut R,
    cfg: &InstrumentConfig<f64>,
    pulse: &PulseShape<f64>,
    alpha: f64,
    z: f64,
) -> (Vec<f64>, Vec<bool>) {
    let flux = cfg.flux(alpha);
    if !(flux > 0.0) {
        return (Vec::new(), Vec::new());
    }
    let p_hit = -(-flux).exp_m1();
    let k = Binomial::new(cfg.pulses, p_hit).expect("valid binomial").sample(rng);
    let ws = signal_probability(cfg, alpha);
    let mut times = Vec::with_capacity(k as usize);
    let mut labels = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let signal = rng.random::<f64>() < ws;
        times.push(draw_time(rng, cfg, pulse, z, signal));
        labels.push(signal);
    }
    (times, labels)
}

fn check_inputs(scene: &Scene<f64>, cfg: &InstrumentConfig<f64>) -> Result<()> {
    cfg.validate()?;
    scene.check_range(cfg)?;
    cfg.low_flux_check(scene);
    Ok(())
}

/// Simulates `N` pulses at every pixel. Deterministic in `(seed, scene, cfg)`.
pub fn simulate_frame(
    scene: &Scene<f64>,
    cfg: &InstrumentConfig<f64>,
    pulse: &PulseShape<f64>,
    seed: u64,
) -> Result<DetectionFrame> {
    Ok(simulate_labeled_frame(scene, cfg, pulse, seed)?.frame)
}

/// [`simulate_frame`] keeping the signal/background origin of each detection.
/// Produces the same times as [`simulate_frame`] for the same seed.
pub fn simulate_labeled_frame(
    scene: &Scene<f64>,
    cfg: &InstrumentConfig<f64>,
    pulse: &PulseShape<f64>,
    seed: u64,
) -> Result<LabeledFrame> {
    check_inputs(scene, cfg)?;
    let n = scene.n();
    let (times, labels): (Vec<_>, Vec<_>) = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let mut rng = pixel_stream(seed, DOMAIN_PIXEL, i, j);
            simulate_pixel(&mut rng, cfg, pulse, scene.alpha[(i, j)], scene.depth[(i, j)])
        })
        .unzip();
    Ok(LabeledFrame { frame: DetectionFrame::new(n, times)?, labels })
}

/// Keeps pulsing each pixel until `min_detections` detections have accumulated.
pub fn simulate_ground_truth_frame(
    scene: &Scene<f64>,
    cfg: &InstrumentConfig<f64>,
    pulse: &PulseShape<f64>,
    seed: u64,
    min_detections: u32,
) -> Result<GroundTruthFrame> {
    if min_detections < 1 {
        return Err(Error::Contract("min_detections must be at least 1".into()));
    }
    check_inputs(scene, cfg)?;
    let n = scene.n();
    let results: Vec<Result<(Vec<f64>, u64)>> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let (alpha, z) = (scene.alpha[(i, j)], scene.depth[(i, j)]);
            let flux = cfg.flux(alpha);
            let cap_err = Error::NonTermination { row: i, col: j, cap: GROUND_TRUTH_PULSE_CAP };
            if !(flux > 0.0) {
                return Err(cap_err);
            }
            let p_hit = -(-flux).exp_m1();
            let gaps = Geometric::new(p_hit).map_err(|_| Error::Contract(format!("bad detection probability {p_hit}")))?;
            let ws = signal_probability(cfg, alpha);
            let mut rng = pixel_stream(seed, DOMAIN_GROUND_TRUTH, i, j);
            let mut pulses = 0_u64;
            let mut times = Vec::with_capacity(min_detections as usize);
            for _ in 0..min_detections {
                pulses = pulses.saturating_add(gaps.sample(&mut rng).saturating_add(1));
                if pulses > GROUND_TRUTH_PULSE_CAP {
                    return Err(cap_err);
                }
                let signal = rng.random::<f64>() < ws;
                times.push(draw_time(&mut rng, cfg, pulse, z, signal));
            }
            Ok((times, pulses))
        })
        .collect();
    let mut times = Vec::with_capacity(n * n);
    let mut pulses = Array2::zeros((n, n));
    for (idx, r) in results.into_iter().enumerate() {
        let (t, p) = r?;
        times.push(t);
        pulses[(idx / n, idx % n)] = p;
    }
    Ok(GroundTruthFrame { frame: DetectionFrame::new(n, times)?, pulses })
}
