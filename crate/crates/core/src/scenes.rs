//! Synthetic test targets and photon-budget calibration.

use std::str::FromStr;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{InstrumentConfig, Scene};

/// Smallest supported side length.
pub const MIN_SCENE_SIZE: usize = 16;

/// Plateau heights (m) of the step target.
pub const STEP_HEIGHTS: [f64; 5] = [0.004, 0.008, 0.016, 0.032, 0.064];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    /// 16 vertical bars of linear gray levels at one depth.
    Chart,
    /// Flat board carrying square plateaus of [`STEP_HEIGHTS`].
    StepTarget,
    /// Smooth head-and-torso relief in front of a tilted wall.
    Mannequinoid,
}

impl FromStr for SceneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chart" => Ok(SceneKind::Chart),
            "step" | "steptarget" | "step-target" => Ok(SceneKind::StepTarget),
            "mannequinoid" | "mannequin" => Ok(SceneKind::Mannequinoid),
            _ => Err(Error::UnknownSceneKind(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneParams {
    /// Reference depth (m): the chart and board plane, the figure's front.
    pub base_depth: f64,
    /// Reflectivity of the step-target board.
    pub board_reflectivity: f64,
    /// Scale of the mannequinoid relief (m).
    pub relief: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self { base_depth: 7.5, board_reflectivity: 0.8, relief: 1.0 }
    }
}

pub fn make_scene(kind: SceneKind, n: usize, params: &SceneParams) -> Result<Scene<f64>> {
    if n < MIN_SCENE_SIZE {
        return Err(Error::InvalidScene(format!("scene size must be at least {MIN_SCENE_SIZE}, got {n}")));
    }
    if !(params.base_depth > STEP_HEIGHTS[4] + params.relief) {
        return Err(Error::InvalidScene(format!("base depth {} too small for the relief", params.base_depth)));
    }
    let (alpha, depth) = match kind {
        SceneKind::Chart => chart(n, params),
        SceneKind::StepTarget => step_target(n, params),
        SceneKind::Mannequinoid => mannequinoid(n, params),
    };
    Scene::new(alpha, depth)
}

fn chart(n: usize, p: &SceneParams) -> (Array2<f64>, Array2<f64>) {
    let alpha = Array2::from_shape_fn((n, n), |(_, j)| ((j * 16 / n) + 1) as f64 / 16.0);
    (alpha, Array2::from_elem((n, n), p.base_depth))
}

fn step_target(n: usize, p: &SceneParams) -> (Array2<f64>, Array2<f64>) {
    let side = (n / 7).max(2);
    let gap = (n - 5 * side) / 6;
    let top = (n - side) / 2;
    let mut depth = Array2::from_elem((n, n), p.base_depth);
    for (s, h) in STEP_HEIGHTS.iter().enumerate() {
        let left = gap + s * (side + gap);
        for i in top..top + side {
            for j in left..left + side {
                depth[(i, j)] = p.base_depth - h;
            }
        }
    }
    (Array2::from_elem((n, n), p.board_reflectivity), depth)
}

fn ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> f64 {
    ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2)
}

fn mannequinoid(n: usize, p: &SceneParams) -> (Array2<f64>, Array2<f64>) {
    let mut alpha = Array2::zeros((n, n));
    let mut depth = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let u = (j as f64 + 0.5) / n as f64;
            let v = (i as f64 + 0.5) / n as f64;
            let head = ellipse(u, v, 0.5, 0.25, 0.12, 0.15);
            let torso = ellipse(u, v, 0.5, 0.78, 0.3, 0.36);
            let neck = (u - 0.5).abs() < 0.06 && (0.36..0.48).contains(&v);
            let wall_z = p.base_depth + 0.5 * p.relief + 0.2 * p.relief * (u - 0.5);
            let (a, z) = if head < 1.0 {
                let dome = (1.0 - head).sqrt();
                let nose = (-((u - 0.5).powi(2) + (v - 0.27).powi(2)) / 0.0008).exp();
                (0.85 - 0.25 * (v - 0.1), p.base_depth + 0.2 * p.relief * (1.0 - dome) - 0.03 * p.relief * nose)
            } else if neck {
                (0.75, p.base_depth + 0.2 * p.relief)
            } else if torso < 1.0 {
                let dome = (1.0 - torso).sqrt();
                let belt = (0.82..0.87).contains(&v);
                (if belt { 0.35 } else { 0.9 - 0.3 * v }, p.base_depth + 0.1 * p.relief + 0.25 * p.relief * (1.0 - dome))
            } else {
                (0.45 + 0.15 * u, wall_z)
            };
            alpha[(i, j)] = a;
            depth[(i, j)] = z;
        }
    }
    (alpha, depth)
}

fn mean_expected_count(scene: &Scene<f64>, cfg: &InstrumentConfig<f64>) -> f64 {
    let n = cfg.pulses as f64;
    scene.alpha.iter().map(|&a| n * -(-cfg.flux(a)).exp_m1()).sum::<f64>() / scene.alpha.len() as f64
}

/// Chooses `S` and `B` so that the scene-averaged expected count is
/// `mean_ppp` and the scene-averaged `ηαS/B` is `sbr` (`sbr = ∞` gives `B = 0`).
pub fn calibrate_flux(scene: &Scene<f64>, cfg: &InstrumentConfig<f64>, mean_ppp: f64, sbr: f64) -> Result<InstrumentConfig<f64>> {
    let mean_alpha = scene.alpha.mean().unwrap_or(0.0);
    if !(mean_alpha > 0.0) {
        return Err(Error::InvalidScene("calibration needs a scene with positive mean reflectivity".into()));
    }
    if !(mean_ppp > 0.0 && mean_ppp < cfg.pulses as f64) || !(sbr > 0.0) {
        return Err(Error::Contract(format!("unreachable photon budget: ppp {mean_ppp}, sbr {sbr}")));
    }
    let with_signal = |s: f64| {
        let mut c = *cfg;
        c.signal = s;
        c.background = if sbr.is_infinite() { 0.0 } else { c.eta * mean_alpha * s / sbr };
        c
    };
    let count = |s: f64| mean_expected_count(scene, &with_signal(s));
    let (mut lo, mut hi) = (0.0, 1.0 / cfg.pulses as f64);
    while count(hi) < mean_ppp {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Contract("photon budget calibration diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count(mid) < mean_ppp { lo = mid } else { hi = mid }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let out = with_signal(0.5 * (lo + hi));
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sbr;
    use approx::assert_relative_eq;

    fn cfg() -> InstrumentConfig<f64> {
        InstrumentConfig {
            eta: 0.35,
            signal: 0.004,
            background: 0.0,
            pulses: 1000,
            period: 100e-9,
            pulse_width: 270e-12,
            delta: 8e-12,
            c: 2.998e8,
        }
    }

    #[test]
    fn chart_levels() {
        let s = make_scene(SceneKind::Chart, 64, &SceneParams::default()).unwrap();
        let mut levels: Vec<f64> = s.alpha.iter().copied().collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let expect: Vec<f64> = (1..=16).map(|k| k as f64 / 16.0).collect();
        assert_eq!(levels, expect);
        assert!(s.depth.iter().all(|&z| z == 7.5));
    }

    #[test]
    fn step_target_heights() {
        let s = make_scene(SceneKind::StepTarget, 70, &SceneParams::default()).unwrap();
        let mut offsets: Vec<i64> = s.depth.iter().map(|z| ((7.5 - z) * 1e3).round() as i64).collect();
        offsets.sort();
        offsets.dedup();
        assert_eq!(offsets, vec![0, 4, 8, 16, 32, 64]);
    }

    #[test]
    fn kinds_parse_and_validate() {
        assert_eq!("chart".parse::<SceneKind>().unwrap(), SceneKind::Chart);
        assert_eq!("step".parse::<SceneKind>().unwrap(), SceneKind::StepTarget);
        assert!(matches!("teapot".parse::<SceneKind>(), Err(Error::UnknownSceneKind(_))));
        assert!(make_scene(SceneKind::Chart, 15, &SceneParams::default()).is_err());
        for kind in [SceneKind::Chart, SceneKind::StepTarget, SceneKind::Mannequinoid] {
            for n in [16, 33, 128] {
                let s = make_scene(kind, n, &SceneParams::default()).unwrap();
                assert_eq!(s.n(), n);
                s.check_range(&cfg()).unwrap();
                assert_eq!(s, make_scene(kind, n, &SceneParams::default()).unwrap());
            }
        }
    }

    #[test]
    fn calibration_hits_targets() {
        let s = make_scene(SceneKind::Mannequinoid, 64, &SceneParams::default()).unwrap();
        let c = calibrate_flux(&s, &cfg(), 1.2, 1.0).unwrap();
        assert_relative_eq!(mean_expected_count(&s, &c), 1.2, max_relative = 1e-9);
        assert_relative_eq!(sbr(&s, &c), 1.0, max_relative = 1e-12);
        let c = calibrate_flux(&s, &cfg(), 0.5, f64::INFINITY).unwrap();
        assert_eq!(c.background, 0.0);
        assert!(calibrate_flux(&s, &cfg(), 0.0, 1.0).is_err());
    }
}
