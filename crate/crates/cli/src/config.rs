//! Run configuration: CLI flag, then config file, then built-in default.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use photon_imaging::pipeline::{ReconstructionSettings, DEFAULT_BETA_ALPHA, DEFAULT_BETA_Z};
use photon_imaging::scenes::{calibrate_flux, make_scene, SceneKind, SceneParams};
use photon_imaging::{InstrumentConfig, Result};
use serde::Deserialize;

/// Every key is optional; absent ones fall back to the built-in defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    eta: Option<f64>,
    #[serde(rename = "S")]
    signal: Option<f64>,
    #[serde(rename = "B")]
    background: Option<f64>,
    #[serde(rename = "N")]
    pulses: Option<u64>,
    #[serde(rename = "T_r")]
    period: Option<f64>,
    #[serde(rename = "T_p")]
    pulse_width: Option<f64>,
    delta: Option<f64>,
    c: Option<f64>,
    seed: Option<u64>,
    trials: Option<usize>,
    beta_alpha: Option<f64>,
    beta_z: Option<f64>,
    /// Applied to both solvers.
    rel_tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RunOverrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub beta_alpha: Option<f64>,
    pub beta_z: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RunConfig {
    pub instrument: InstrumentConfig<f64>,
    pub seed: u64,
    pub trials: usize,
    pub settings: ReconstructionSettings,
}

/// Desk operating point: S and B give about 1.2 detections per pixel at
/// SBR 1 on the default 128² mannequinoid.
pub fn default_instrument() -> Result<InstrumentConfig<f64>> {
    let base = InstrumentConfig {
        eta: 0.35,
        signal: 1.0,
        background: 0.0,
        pulses: 1000,
        period: 100e-9,
        pulse_width: 270e-12,
        delta: 8e-12,
        c: 2.998e8,
    };
    let scene = make_scene(SceneKind::Mannequinoid, 128, &SceneParams::default())?;
    calibrate_flux(&scene, &base, 1.2, 1.0)
}

impl RunConfig {
    pub fn resolve(path: Option<&Path>, flags: &RunOverrides) -> Result<Self> {
        let file: FileConfig = match path {
            Some(p) => serde_json::from_reader(BufReader::new(File::open(p)?))?,
            None => FileConfig::default(),
        };
        let d = default_instrument()?;
        let instrument = InstrumentConfig {
            eta: file.eta.unwrap_or(d.eta),
            signal: file.signal.unwrap_or(d.signal),
            background: file.background.unwrap_or(d.background),
            pulses: file.pulses.unwrap_or(d.pulses),
            period: file.period.unwrap_or(d.period),
            pulse_width: file.pulse_width.unwrap_or(d.pulse_width),
            delta: file.delta.unwrap_or(d.delta),
            c: file.c.unwrap_or(d.c),
        };
        instrument.validate()?;
        let mut settings = ReconstructionSettings::new(
            flags.beta_alpha.or(file.beta_alpha).unwrap_or(DEFAULT_BETA_ALPHA),
            flags.beta_z.or(file.beta_z).unwrap_or(DEFAULT_BETA_Z),
        );
        for s in [&mut settings.reflectivity, &mut settings.depth] {
            s.rel_tol = file.rel_tol.unwrap_or(s.rel_tol);
            s.max_iters = file.max_iters.unwrap_or(s.max_iters);
        }
        settings.reflectivity.validate()?;
        settings.depth.validate()?;
        Ok(Self {
            instrument,
            seed: flags.seed.or(file.seed).unwrap_or(0),
            trials: flags.trials.or(file.trials).unwrap_or(1),
            settings,
        })
    }
}
