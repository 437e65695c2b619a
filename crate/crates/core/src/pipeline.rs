//! End-to-end reconstruction: pixelwise baselines, penalized reflectivity,
//! censoring, penalized depth.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::censor::{censor_detections, rom_times};
use crate::error::Error;
use crate::formats::{load_config, load_scene, save_frame, save_images, save_mask};
use crate::metrics::{psnr, rmse, sbr};
use crate::model::{CensorMask, DetectionFrame, InstrumentConfig, Scene};
use crate::pixelwise::{denoised_pixelwise_depth, pixelwise_estimates, PixelwiseImages};
use crate::pml::{pml_depth, pml_reflectivity, select_beta, write_telemetry_csv, Solution, SolverSettings};
use crate::pulse::PulseShape;
use crate::report::{finite_range, write_heatmap, write_metrics_csv, MetricRow};
use crate::simulator::simulate_frame;

/// Processing stages, in execution order. The discriminant is the CLI exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Input = 2,
    Simulate = 3,
    Pixelwise = 4,
    Reflectivity = 5,
    Censor = 6,
    Depth = 7,
    Metrics = 8,
    Output = 9,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Simulate => "simulate",
            Stage::Pixelwise => "pixelwise",
            Stage::Reflectivity => "reflectivity",
            Stage::Censor => "censor",
            Stage::Depth => "depth",
            Stage::Metrics => "metrics",
            Stage::Output => "output",
        }
    }

    pub fn exit_code(self) -> i32 {
        self as i32
    }
}

/// An error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage.name(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<Error>> StageContext<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError { stage, source: e.into() })
    }
}

/// Reflectivity penalty chosen by [`calibrate_betas`] on the calibration
/// scene (mannequinoid, base depth 7 m, relief 0.8, 128², 1.2 ppp, SBR 1).
pub const DEFAULT_BETA_ALPHA: f64 = 1.0;
/// Depth penalty from the same calibration.
pub const DEFAULT_BETA_Z: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructionSettings {
    pub reflectivity: SolverSettings<f64>,
    pub depth: SolverSettings<f64>,
}

impl ReconstructionSettings {
    pub fn new(beta_alpha: f64, beta_z: f64) -> Self {
        Self { reflectivity: SolverSettings::new(beta_alpha), depth: SolverSettings::new(beta_z) }
    }
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        Self::new(DEFAULT_BETA_ALPHA, DEFAULT_BETA_Z)
    }
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub pixelwise: PixelwiseImages<f64>,
    /// Pixelwise depth after neighbour-mean imputation and a 3×3 median.
    pub pixelwise_depth: Array2<f64>,
    pub reflectivity: Solution<f64>,
    pub mask: CensorMask,
    pub depth: Solution<f64>,
}

/// Runs the three reconstruction steps on one frame.
pub fn reconstruct(
    frame: &DetectionFrame,
    cfg: &InstrumentConfig<f64>,
    pulse: &PulseShape<f64>,
    settings: &ReconstructionSettings,
) -> Result<Reconstruction, StageError> {
    frame.validate(cfg).stage(Stage::Input)?;
    let pixelwise = pixelwise_estimates(frame, cfg, pulse);
    let pixelwise_depth = denoised_pixelwise_depth(&pixelwise.depth).stage(Stage::Pixelwise)?;
    let reflectivity = pml_reflectivity(frame, cfg, &settings.reflectivity).stage(Stage::Reflectivity)?;
    let rom = rom_times(frame);
    let mask = censor_detections(frame, cfg, &reflectivity.image, &rom).stage(Stage::Censor)?;
    let depth = pml_depth(frame, &mask, cfg, pulse, &settings.depth).stage(Stage::Depth)?;
    Ok(Reconstruction { pixelwise, pixelwise_depth, reflectivity, mask, depth })
}

/// Options for [`run_pipeline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub seed: u64,
    /// Frames simulated with seeds `seed..seed + trials`; the first one is written out.
    pub trials: usize,
    pub settings: ReconstructionSettings,
}

#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub metrics: Vec<MetricRow>,
    pub files: Vec<PathBuf>,
}

impl PipelineReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == name).map(|m| m.value)
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>, StageError> {
    let path = dir.join(name);
    let file = File::create(&path).stage(Stage::Output)?;
    files.push(path);
    Ok(BufWriter::new(file))
}

/// File name, image, colour range, units.
type HeatmapSpec<'a> = (&'a str, &'a Array2<f64>, (f64, f64), &'a str);

/// Simulate, reconstruct and score `scene`, writing images, the frame, the
/// mask, telemetry, metrics, heatmaps and a JSON summary into `out_dir`.
pub fn run_pipeline(
    cfg: &InstrumentConfig<f64>,
    scene: &Scene<f64>,
    options: &PipelineOptions,
    out_dir: &Path,
) -> Result<PipelineReport, StageError> {
    cfg.validate().stage(Stage::Input)?;
    scene.check_range(cfg).stage(Stage::Input)?;
    if options.trials < 1 {
        return Err(StageError { stage: Stage::Input, source: Error::Contract("trials must be at least 1".into()) });
    }
    std::fs::create_dir_all(out_dir).stage(Stage::Output)?;
    let pulse = cfg.gaussian_pulse().stage(Stage::Input)?;
    let n = scene.n();
    let mut files = Vec::new();
    let mut metrics = Vec::new();
    let mut sq_pixelwise = Array2::<f64>::zeros((n, n));
    let mut sq_pml = Array2::<f64>::zeros((n, n));
    let mut rmse_sums = (0.0, 0.0);

    for trial in 0..options.trials {
        let seed = options.seed.wrapping_add(trial as u64);
        let frame = simulate_frame(scene, cfg, &pulse, seed).stage(Stage::Simulate)?;
        let rec = reconstruct(&frame, cfg, &pulse, &options.settings)?;
        let err_pw = &rec.pixelwise_depth - &scene.depth;
        let err_pml = &rec.depth.image - &scene.depth;
        sq_pixelwise += &(&err_pw * &err_pw);
        sq_pml += &(&err_pml * &err_pml);
        let rmse_pw = rmse(&scene.depth, &rec.pixelwise_depth).stage(Stage::Metrics)?;
        let rmse_pml = rmse(&scene.depth, &rec.depth.image).stage(Stage::Metrics)?;
        rmse_sums.0 += rmse_pw;
        rmse_sums.1 += rmse_pml;
        if trial > 0 {
            continue;
        }

        save_frame(out_dir.join("frame.peid"), &frame).stage(Stage::Output)?;
        files.push(out_dir.join("frame.peid"));
        save_mask(out_dir.join("mask.peim"), &rec.mask).stage(Stage::Output)?;
        files.push(out_dir.join("mask.peim"));
        save_images(out_dir.join("pixelwise.peis"), &rec.pixelwise.cml, &rec.pixelwise_depth).stage(Stage::Output)?;
        files.push(out_dir.join("pixelwise.peis"));
        save_images(out_dir.join("pml.peis"), &rec.reflectivity.image, &rec.depth.image).stage(Stage::Output)?;
        files.push(out_dir.join("pml.peis"));
        write_telemetry_csv(create(out_dir, "telemetry_reflectivity.csv", &mut files)?, &rec.reflectivity.history)
            .stage(Stage::Output)?;
        write_telemetry_csv(create(out_dir, "telemetry_depth.csv", &mut files)?, &rec.depth.history).stage(Stage::Output)?;

        let psnr_pw = psnr(&scene.alpha, &rec.pixelwise.cml).stage(Stage::Metrics)?;
        let psnr_pml = psnr(&scene.alpha, &rec.reflectivity.image).stage(Stage::Metrics)?;
        metrics.extend([
            MetricRow::new("psnr_pixelwise", psnr_pw, "dB"),
            MetricRow::new("psnr_pml", psnr_pml, "dB"),
            MetricRow::new("rmse_pixelwise", rmse_pw, "m"),
            MetricRow::new("rmse_pml", rmse_pml, "m"),
            MetricRow::new("sbr", sbr(scene, cfg), "1"),
            MetricRow::new("mean_ppp", frame.mean_count(), "counts"),
            MetricRow::new("missing_fraction", frame.missing_fraction(), "1"),
            MetricRow::new(
                "kept_fraction",
                rec.mask.total_kept() as f64 / frame.total_detections().max(1) as f64,
                "1",
            ),
            MetricRow::new("iterations_reflectivity", rec.reflectivity.iterations as f64, "1"),
            MetricRow::new("iterations_depth", rec.depth.iterations as f64, "1"),
        ]);

        let alpha_range = (0.0, finite_range(&scene.alpha).1);
        let depth_range = finite_range(&scene.depth);
        let maps: [HeatmapSpec; 6] = [
            ("reflectivity_truth.svg", &scene.alpha, alpha_range, ""),
            ("reflectivity_pixelwise.svg", &rec.pixelwise.cml, alpha_range, ""),
            ("reflectivity_pml.svg", &rec.reflectivity.image, alpha_range, ""),
            ("depth_truth.svg", &scene.depth, depth_range, "m"),
            ("depth_pixelwise.svg", &rec.pixelwise_depth, depth_range, "m"),
            ("depth_pml.svg", &rec.depth.image, depth_range, "m"),
        ];
        for (name, image, range, units) in maps {
            write_heatmap(create(out_dir, name, &mut files)?, image, name.trim_end_matches(".svg"), range, units)
                .stage(Stage::Output)?;
        }
    }

    let trials = options.trials as f64;
    let mut rmse_range = None;
    if options.trials > 1 {
        let map_pw = sq_pixelwise.mapv(|s| (s / trials).sqrt());
        let map_pml = sq_pml.mapv(|s| (s / trials).sqrt());
        save_images(out_dir.join("rmse_maps.peis"), &map_pw, &map_pml).stage(Stage::Output)?;
        files.push(out_dir.join("rmse_maps.peis"));
        let range = (0.0, finite_range(&map_pw).1.max(finite_range(&map_pml).1));
        write_heatmap(create(out_dir, "rmse_pixelwise.svg", &mut files)?, &map_pw, "per-pixel RMSE, pixelwise", range, "m")
            .stage(Stage::Output)?;
        write_heatmap(create(out_dir, "rmse_pml.svg", &mut files)?, &map_pml, "per-pixel RMSE, PML", range, "m")
            .stage(Stage::Output)?;
        metrics.push(MetricRow::new("mean_rmse_pixelwise", rmse_sums.0 / trials, "m"));
        metrics.push(MetricRow::new("mean_rmse_pml", rmse_sums.1 / trials, "m"));
        rmse_range = Some(range);
    }
    write_metrics_csv(create(out_dir, "metrics.csv", &mut files)?, &metrics).stage(Stage::Output)?;

    let s = &options.settings;
    let summary = serde_json::json!({
        "config": cfg,
        "scene_size": n,
        "seed": options.seed,
        "trials": options.trials,
        "trial_seeds": [options.seed, options.seed.wrapping_add(options.trials as u64 - 1)],
        "beta_alpha": s.reflectivity.beta,
        "beta_z": s.depth.beta,
        "max_iters": [s.reflectivity.max_iters, s.depth.max_iters],
        "rel_tol": [s.reflectivity.rel_tol, s.depth.rel_tol],
        "colour_ranges": {
            "reflectivity": [0.0, finite_range(&scene.alpha).1],
            "depth_m": finite_range(&scene.depth),
            "rmse_m": rmse_range,
        },
        "metrics": metrics.iter().map(|m| (m.metric.clone(), serde_json::json!(m.value))).collect::<serde_json::Map<_, _>>(),
    });
    let mut out = create(out_dir, "report.json", &mut files)?;
    serde_json::to_writer_pretty(&mut out, &summary).stage(Stage::Output)?;
    out.write_all(b"\n").stage(Stage::Output)?;
    out.flush().stage(Stage::Output)?;
    Ok(PipelineReport { metrics, files })
}

/// [`run_pipeline`] reading the configuration and scene from disk.
pub fn run_pipeline_files(
    config: &Path,
    scene: &Path,
    options: &PipelineOptions,
    out_dir: &Path,
) -> Result<PipelineReport, StageError> {
    let cfg = load_config(config).stage(Stage::Input)?;
    let scene = load_scene(scene).stage(Stage::Input)?;
    run_pipeline(&cfg, &scene, options, out_dir)
}

/// Penalty weights chosen on a calibration scene: `β_α` maximising
/// reflectivity PSNR, then `β_z` minimising depth RMSE.
#[derive(Clone, Debug)]
pub struct BetaCalibration {
    pub beta_alpha: f64,
    pub beta_z: f64,
    pub psnr_by_beta: Vec<(f64, f64)>,
    pub rmse_by_beta: Vec<(f64, f64)>,
}

pub fn calibrate_betas(
    scene: &Scene<f64>,
    cfg: &InstrumentConfig<f64>,
    seed: u64,
    grid: &[f64],
    base: &ReconstructionSettings,
) -> Result<BetaCalibration, StageError> {
    let pulse = cfg.gaussian_pulse().stage(Stage::Input)?;
    let frame = simulate_frame(scene, cfg, &pulse, seed).stage(Stage::Simulate)?;
    let (beta_alpha, psnr_by_beta) = select_beta(grid, |b| {
        let mut s = base.reflectivity;
        s.beta = b;
        let sol = pml_reflectivity(&frame, cfg, &s)?;
        psnr(&scene.alpha, &sol.image)
    })
    .stage(Stage::Reflectivity)?;
    let mut s = base.reflectivity;
    s.beta = beta_alpha;
    let alpha = pml_reflectivity(&frame, cfg, &s).stage(Stage::Reflectivity)?;
    let mask = censor_detections(&frame, cfg, &alpha.image, &rom_times(&frame)).stage(Stage::Censor)?;
    let (beta_z, neg_rmse) = select_beta(grid, |b| {
        let mut s = base.depth;
        s.beta = b;
        let sol = pml_depth(&frame, &mask, cfg, &pulse, &s)?;
        Ok(-rmse(&scene.depth, &sol.image)?)
    })
    .stage(Stage::Depth)?;
    let rmse_by_beta = neg_rmse.into_iter().map(|(b, s)| (b, -s)).collect();
    Ok(BetaCalibration { beta_alpha, beta_z, psnr_by_beta, rmse_by_beta })
}
