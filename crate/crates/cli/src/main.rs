//! `peimg`: simulate single-photon acquisitions and reconstruct reflectivity
//! and depth from them.

mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use photon_imaging::bounds::{reflectivity_sweep, write_sweep_csv, SweepKind};
use photon_imaging::censor::{censor_detections, rom_times};
use photon_imaging::formats::{load_frame, load_images, load_mask, load_scene, save_config, save_frame, save_images, save_mask, save_scene};
use photon_imaging::metrics::{psnr, rmse};
use photon_imaging::pipeline::{reconstruct, run_pipeline, PipelineOptions, Stage, StageContext, StageError};
use photon_imaging::pixelwise::{denoised_pixelwise_depth, histogram_depth, pixelwise_estimates};
use photon_imaging::pml::{pml_depth, pml_reflectivity, write_telemetry_csv};
use photon_imaging::report::{write_metrics_csv, MetricRow};
use photon_imaging::scenes::{calibrate_flux, make_scene, SceneKind, SceneParams};
use photon_imaging::simulator::simulate_frame;
use photon_imaging::Error;

use crate::config::{RunConfig, RunOverrides};

#[derive(Parser, Debug)]
#[command(name = "peimg", version, about = "Photon-efficient reflectivity and depth imaging")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Pixelwise,
    Histogram,
    Pml,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Kind {
    Chart,
    Step,
    Mannequinoid,
}

impl From<Kind> for SceneKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Chart => SceneKind::Chart,
            Kind::Step => SceneKind::StepTarget,
            Kind::Mannequinoid => SceneKind::Mannequinoid,
        }
    }
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// JSON instrument/run configuration. Missing keys take built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta_alpha: Option<f64>,
    #[arg(long)]
    beta_z: Option<f64>,
}

impl Common {
    fn resolve(&self, trials: Option<usize>) -> Result<RunConfig, StageError> {
        let overrides = RunOverrides { seed: self.seed, trials, beta_alpha: self.beta_alpha, beta_z: self.beta_z };
        RunConfig::resolve(self.config.as_deref(), &overrides).stage(Stage::Input)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene (PEIS); optionally a matching configuration.
    Scene {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        base_depth: Option<f64>,
        #[arg(long)]
        relief: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write a configuration whose S and B hit `--ppp` and `--sbr` on this scene.
        #[arg(long)]
        config_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.2)]
        ppp: f64,
        #[arg(long, default_value_t = 1.0)]
        sbr: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate one detection frame (PEID) for a scene.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct reflectivity and depth (PEIS) from a frame.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        frame: PathBuf,
        /// Censor mask for the penalized depth step; computed when absent.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Histogram bin width in seconds (default: T_p).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Directory for solver telemetry CSVs (penalized method only).
        #[arg(long)]
        telemetry: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reject background detections (PEIM) given a reflectivity estimate.
    Censor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        frame: PathBuf,
        /// PEIS whose first image is the reflectivity estimate.
        #[arg(long)]
        reflectivity: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reflectivity bound against Monte Carlo over a parameter sweep (CSV).
    Bounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_sweep)]
        sweep: SweepKind,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Reflectivity held fixed when another parameter moves.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// CSV path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// PSNR and RMSE of an estimate (PEIS) against a scene (CSV).
    Metrics {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// CSV path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, reconstruct and score; writes every artifact into `--out`.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_sweep(s: &str) -> Result<SweepKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn default_sweep(kind: SweepKind) -> Vec<f64> {
    match kind {
        SweepKind::Alpha => vec![0.1, 0.2, 0.5, 1.0, 2.0],
        SweepKind::Pulses => vec![100.0, 300.0, 1000.0, 3000.0, 10000.0],
        SweepKind::Sbr => vec![0.1, 0.3, 1.0, 3.0, 10.0],
    }
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>, StageError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).stage(Stage::Output)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Scene { kind, size, base_depth, relief, out, config_out, ppp, sbr, config } => {
            let defaults = SceneParams::default();
            let params = SceneParams {
                base_depth: base_depth.unwrap_or(defaults.base_depth),
                relief: relief.unwrap_or(defaults.relief),
                ..defaults
            };
            let scene = make_scene(kind.into(), size, &params).stage(Stage::Input)?;
            save_scene(&out, &scene).stage(Stage::Output)?;
            if let Some(path) = config_out {
                let base = RunConfig::resolve(config.as_deref(), &RunOverrides::default()).stage(Stage::Input)?;
                let cfg = calibrate_flux(&scene, &base.instrument, ppp, sbr).stage(Stage::Input)?;
                save_config(path, &cfg).stage(Stage::Output)?;
            }
        }
        Command::Simulate { common, scene, out } => {
            let run = common.resolve(None)?;
            let scene = load_scene(scene).stage(Stage::Input)?;
            let pulse = run.instrument.gaussian_pulse().stage(Stage::Input)?;
            let frame = simulate_frame(&scene, &run.instrument, &pulse, run.seed).stage(Stage::Simulate)?;
            save_frame(out, &frame).stage(Stage::Output)?;
        }
        Command::Estimate { common, method, frame, mask, bin_width, telemetry, out } => {
            let run = common.resolve(None)?;
            let cfg = run.instrument;
            let pulse = cfg.gaussian_pulse().stage(Stage::Input)?;
            let frame = load_frame(frame).stage(Stage::Input)?;
            frame.validate(&cfg).stage(Stage::Input)?;
            let (alpha, depth) = match method {
                Method::Pixelwise => {
                    let pw = pixelwise_estimates(&frame, &cfg, &pulse);
                    let depth = denoised_pixelwise_depth(&pw.depth).stage(Stage::Pixelwise)?;
                    (pw.cml, depth)
                }
                Method::Histogram => {
                    let pw = pixelwise_estimates(&frame, &cfg, &pulse);
                    let width = bin_width.unwrap_or(cfg.pulse_width);
                    let n = frame.n();
                    let mut raw = ndarray::Array2::from_elem((n, n), None);
                    for ((i, j), d) in raw.indexed_iter_mut() {
                        *d = histogram_depth(&cfg, &pulse, frame.pixel(i, j), width).stage(Stage::Pixelwise)?;
                    }
                    (pw.cml, denoised_pixelwise_depth(&raw).stage(Stage::Pixelwise)?)
                }
                Method::Pml => {
                    let (alpha, depth) = match mask {
                        None => {
                            let rec = reconstruct(&frame, &cfg, &pulse, &run.settings)?;
                            (rec.reflectivity, rec.depth)
                        }
                        Some(path) => {
                            let mask = load_mask(path).stage(Stage::Input)?;
                            let alpha = pml_reflectivity(&frame, &cfg, &run.settings.reflectivity).stage(Stage::Reflectivity)?;
                            let depth = pml_depth(&frame, &mask, &cfg, &pulse, &run.settings.depth).stage(Stage::Depth)?;
                            (alpha, depth)
                        }
                    };
                    if let Some(dir) = telemetry {
                        std::fs::create_dir_all(&dir).stage(Stage::Output)?;
                        write_telemetry_csv(writer(Some(&dir.join("telemetry_reflectivity.csv")))?, &alpha.history)
                            .stage(Stage::Output)?;
                        write_telemetry_csv(writer(Some(&dir.join("telemetry_depth.csv")))?, &depth.history).stage(Stage::Output)?;
                    }
                    (alpha.image, depth.image)
                }
            };
            save_images(out, &alpha, &depth).stage(Stage::Output)?;
        }
        Command::Censor { common, frame, reflectivity, out } => {
            let run = common.resolve(None)?;
            let frame = load_frame(frame).stage(Stage::Input)?;
            frame.validate(&run.instrument).stage(Stage::Input)?;
            let (alpha, _) = load_images(reflectivity).stage(Stage::Input)?;
            let mask = censor_detections(&frame, &run.instrument, &alpha, &rom_times(&frame)).stage(Stage::Censor)?;
            save_mask(out, &mask).stage(Stage::Output)?;
        }
        Command::Bounds { common, sweep, values, alpha, trials, out } => {
            let run = common.resolve(None)?;
            let values = values.unwrap_or_else(|| default_sweep(sweep));
            let rows = reflectivity_sweep(&run.instrument, alpha, sweep, &values, trials, run.seed).stage(Stage::Metrics)?;
            let mut w = writer(out.as_deref())?;
            write_sweep_csv(&mut w, &rows).stage(Stage::Output)?;
            w.flush().stage(Stage::Output)?;
        }
        Command::Metrics { scene, estimate, out } => {
            let scene = load_scene(scene).stage(Stage::Input)?;
            let (alpha, depth) = load_images(estimate).stage(Stage::Input)?;
            let rows = [
                MetricRow::new("psnr", psnr(&scene.alpha, &alpha).stage(Stage::Metrics)?, "dB"),
                MetricRow::new("rmse", rmse(&scene.depth, &depth).stage(Stage::Metrics)?, "m"),
            ];
            let mut w = writer(out.as_deref())?;
            write_metrics_csv(&mut w, &rows).stage(Stage::Output)?;
            w.flush().stage(Stage::Output)?;
        }
        Command::Pipeline { common, scene, trials, out } => {
            let run = common.resolve(trials)?;
            let scene = load_scene(scene).stage(Stage::Input)?;
            let options = PipelineOptions { seed: run.seed, trials: run.trials, settings: run.settings };
            let report = run_pipeline(&run.instrument, &scene, &options, &out)?;
            for m in &report.metrics {
                log::info!("{} = {} {}", m.metric, m.value, m.units);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot set up {threads} threads: {e}");
            return ExitCode::from(Stage::Input.exit_code() as u8);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
