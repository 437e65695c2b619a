//! Penalized maximum-likelihood reconstruction: a smooth per-pixel negative
//! log-likelihood plus `β · TV`, minimised over a box by proximal gradient.

use std::io::Write;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::censor::rom_times;
use crate::model::{CensorMask, DetectionFrame, InstrumentConfig};
use crate::pixelwise::normalized_count_reflectivity;
use crate::pulse::PulseShape;
use crate::scalar::{CompensatedSum, Real};
use crate::tv::{tv_seminorm, TvProx};

const DIVERGENCE_PATIENCE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule<T> {
    /// Constant step `1/L` with the given Lipschitz constant.
    FixedLipschitz(T),
    /// Beck–Teboulle backtracking on the quadratic upper model.
    Backtracking,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings<T> {
    /// Penalty weight `β ≥ 0`.
    pub beta: T,
    pub max_iters: usize,
    /// Stop once the relative objective decrease of an accepted step falls below this.
    pub rel_tol: T,
    pub step_rule: StepRule<T>,
    /// Nesterov momentum (monotone variant under backtracking).
    pub accelerated: bool,
    /// Duality-gap tolerance of the inner TV prox, relative to `‖v‖²`.
    pub prox_gap_tol: T,
}

impl<T: Real> SolverSettings<T> {
    pub fn new(beta: T) -> Self {
        Self {
            beta,
            max_iters: 1000,
            rel_tol: T::lit(1e-9),
            step_rule: StepRule::Backtracking,
            accelerated: true,
            prox_gap_tol: T::lit(crate::tv::DEFAULT_GAP_TOL),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return Err(Error::Contract(format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        if self.max_iters < 1 {
            return Err(Error::Contract("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > T::zero()) {
            return Err(Error::Contract(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if let StepRule::FixedLipschitz(l) = self.step_rule {
            if !(l > T::zero()) || !l.is_finite() {
                return Err(Error::Contract(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        Ok(())
    }
}

/// One telemetry record: objective of the current iterate and the step `1/L` used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Telemetry<T> {
    pub iter: usize,
    pub objective: T,
    pub step: T,
}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub image: Array2<T>,
    pub objective: T,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<Telemetry<T>>,
}

/// Writes `iter,objective,step` rows (with header).
pub fn write_telemetry_csv<T: Real, W: Write>(mut out: W, history: &[Telemetry<T>]) -> std::io::Result<()> {
    writeln!(out, "iter,objective,step")?;
    for h in history {
        writeln!(out, "{},{:e},{:e}", h.iter, h.objective, h.step)?;
    }
    Ok(())
}

/// Separable smooth data term `Σ f_ij(x_ij)`.
pub trait PixelTerm<T: Real>: Sync {
    fn dim(&self) -> (usize, usize);
    /// `(f_ij(x), f'_ij(x))`; may return `+∞` outside the domain.
    fn eval(&self, i: usize, j: usize, x: T) -> (T, T);

    fn value(&self, x: &Array2<T>) -> T {
        let mut vals = Array2::zeros(x.dim());
        Zip::indexed(&mut vals).and(x).par_for_each(|(i, j), v, &xv| *v = self.eval(i, j, xv).0);
        let sum: CompensatedSum<T> = vals.iter().copied().collect();
        sum.value()
    }

    fn value_and_gradient(&self, x: &Array2<T>, grad: &mut Array2<T>) -> T {
        let mut vals = Array2::zeros(x.dim());
        Zip::indexed(&mut vals).and(grad).and(x).par_for_each(|(i, j), v, g, &xv| {
            let (f, d) = self.eval(i, j, xv);
            *v = f;
            *g = d;
        });
        let sum: CompensatedSum<T> = vals.iter().copied().collect();
        sum.value()
    }
}

/// `(N−k) ηS α − k ln(1 − e^{−(ηSα + B)})`, constants dropped.
pub fn reflectivity_nll<T: Real>(cfg: &InstrumentConfig<T>, alpha: T, k: u64) -> T {
    reflectivity_nll_and_slope(cfg, alpha, k).0
}

/// Value and `d/dα` of [`reflectivity_nll`].
pub fn reflectivity_nll_and_slope<T: Real>(cfg: &InstrumentConfig<T>, alpha: T, k: u64) -> (T, T) {
    let es = cfg.eta * cfg.signal;
    let misses = T::lit((cfg.pulses - k.min(cfg.pulses)) as f64);
    let linear = misses * es * alpha;
    if k == 0 {
        return (linear, misses * es);
    }
    let x = es * alpha + cfg.background;
    if !(x > T::zero()) {
        return (T::infinity(), T::neg_infinity());
    }
    let kk = T::lit(k as f64);
    let hit = -(-x).exp_m1();
    (linear - kk * hit.ln(), misses * es - kk * es / x.exp_m1())
}

/// `−Σ_ℓ ln s(t_ℓ − 2z/c)`; zero for an empty set.
pub fn depth_nll<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, z: T, times: &[T]) -> T {
    depth_nll_and_slope(cfg, pulse, z, times).0
}

/// Value and `d/dz` of [`depth_nll`].
pub fn depth_nll_and_slope<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, z: T, times: &[T]) -> (T, T) {
    let shift = cfg.round_trip(z);
    let scale = T::lit(2.0) / cfg.c;
    let mut value = T::zero();
    let mut slope = T::zero();
    for &t in times {
        value -= pulse.log_flux(t - shift);
        slope += scale * pulse.dlog_flux(t - shift);
    }
    (value, slope)
}

struct ReflectivityTerm<'a, T> {
    cfg: &'a InstrumentConfig<T>,
    counts: Array2<u32>,
}

impl<T: Real> PixelTerm<T> for ReflectivityTerm<'_, T> {
    fn dim(&self) -> (usize, usize) {
        self.counts.dim()
    }
    fn eval(&self, i: usize, j: usize, x: T) -> (T, T) {
        reflectivity_nll_and_slope(self.cfg, x, self.counts[(i, j)] as u64)
    }
}

struct DepthTerm<'a, T> {
    cfg: &'a InstrumentConfig<T>,
    pulse: &'a PulseShape<T>,
    n: usize,
    times: Vec<Vec<T>>,
}

impl<T: Real> PixelTerm<T> for DepthTerm<'_, T> {
    fn dim(&self) -> (usize, usize) {
        (self.n, self.n)
    }
    fn eval(&self, i: usize, j: usize, x: T) -> (T, T) {
        depth_nll_and_slope(self.cfg, self.pulse, x, &self.times[i * self.n + j])
    }
}

fn clamp_box<T: Real>(x: &mut Array2<T>, lower: T, upper: T) {
    x.mapv_inplace(|v| v.max(lower).min(upper));
}

fn initial_lipschitz<T: Real, F: PixelTerm<T>>(term: &F, x: &Array2<T>, lower: T, upper: T) -> T {
    let mut g0 = Array2::zeros(x.dim());
    let mut g1 = Array2::zeros(x.dim());
    term.value_and_gradient(x, &mut g0);
    let mut shifted = x.mapv(|v| {
        let d = T::lit(1e-4) * (T::one() + v.abs());
        if v + d <= upper { v + d } else { v - d }
    });
    clamp_box(&mut shifted, lower, upper);
    term.value_and_gradient(&shifted, &mut g1);
    let num: T = (&g1 - &g0).iter().map(|d| *d * *d).sum::<T>().sqrt();
    let den: T = (&shifted - x).iter().map(|d| *d * *d).sum::<T>().sqrt();
    let l = num / den;
    if l.is_finite() && l > T::zero() { l } else { T::one() }
}

/// Minimises `Σ f_ij(x_ij) + β TV(x)` over `lower ≤ x ≤ upper`. The prox step
/// is the TV prox followed by projection onto the box. Each telemetry record
/// is also passed to `observer`.
pub fn proximal_gradient<T: Real, F: PixelTerm<T>>(
    term: &F,
    x0: Array2<T>,
    lower: T,
    upper: T,
    settings: &SolverSettings<T>,
    mut observer: impl FnMut(&Telemetry<T>),
) -> Result<Solution<T>> {
    settings.validate()?;
    let (rows, cols) = term.dim();
    if x0.dim() != (rows, cols) {
        return Err(Error::Shape(format!("initial image {:?} vs data {:?}", x0.dim(), (rows, cols))));
    }
    let beta = settings.beta;
    let objective = |x: &Array2<T>| term.value(x) + if beta > T::zero() { beta * tv_seminorm(x) } else { T::zero() };
    let mut prox = TvProx::new(rows, cols);
    prox.gap_tol = settings.prox_gap_tol;
    let mut forward_backward = |y: &Array2<T>, g: &Array2<T>, lip: T| -> Array2<T> {
        let v = y - &(g / lip);
        let mut z = if beta > T::zero() { prox.prox(&v, beta / lip).image } else { v };
        clamp_box(&mut z, lower, upper);
        z
    };

    let mut x = x0;
    clamp_box(&mut x, lower, upper);
    let mut fx = objective(&x);
    if fx.is_nan() {
        return Err(Error::Contract("objective is NaN at the initial point".into()));
    }
    let mut lip = match settings.step_rule {
        StepRule::FixedLipschitz(l) => l,
        StepRule::Backtracking => initial_lipschitz(term, &x, lower, upper),
    };
    let mut history = vec![Telemetry { iter: 0, objective: fx, step: lip.recip() }];
    observer(&history[0]);

    let mut y = x.clone();
    let mut t = T::one();
    let mut grad = Array2::zeros((rows, cols));
    let mut converged = false;
    let mut increases = 0;
    let mut iterations = 0;

    for iter in 1..=settings.max_iters {
        iterations = iter;
        let fy = term.value_and_gradient(&y, &mut grad);
        let z = match settings.step_rule {
            StepRule::FixedLipschitz(_) => forward_backward(&y, &grad, lip),
            StepRule::Backtracking => loop {
                let z = forward_backward(&y, &grad, lip);
                let fz = term.value(&z);
                let d = &z - &y;
                let lin: T = Zip::from(&grad).and(&d).fold(T::zero(), |acc, g, dd| acc + *g * *dd);
                let sq: T = d.iter().map(|v| *v * *v).sum();
                let model = fy + lin + T::lit(0.5) * lip * sq;
                let slack = T::lit(1e-12) * (fy.abs() + T::one());
                if fz.is_finite() && fz <= model + slack {
                    break z;
                }
                lip *= T::lit(2.0);
                if !lip.is_finite() {
                    return Err(Error::Contract("backtracking failed to find a valid step".into()));
                }
            },
        };
        let fz = objective(&z);
        if fz.is_nan() {
            return Err(Error::Contract(format!("objective became NaN at iteration {iter}")));
        }
        let t_next = T::lit(0.5) * (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt());
        let previous = fx;
        let mut accepted_step = true;
        match settings.step_rule {
            StepRule::FixedLipschitz(_) => {
                increases = if fz > fx { increases + 1 } else { 0 };
                if increases >= DIVERGENCE_PATIENCE {
                    return Err(Error::SolverDiverged { iters: increases });
                }
                let x_prev = std::mem::replace(&mut x, z);
                fx = fz;
                y = if settings.accelerated {
                    let mut y = &x + &((&x - &x_prev) * ((t - T::one()) / t_next));
                    clamp_box(&mut y, lower, upper);
                    y
                } else {
                    x.clone()
                };
                t = t_next;
            }
            StepRule::Backtracking => {
                let accepted = fz <= fx;
                accepted_step = accepted;
                let x_prev = x.clone();
                if accepted {
                    x = z.clone();
                    fx = fz;
                }
                if settings.accelerated && accepted {
                    let mut yn = &x + &((&z - &x) * (t / t_next)) + ((&x - &x_prev) * ((t - T::one()) / t_next));
                    clamp_box(&mut yn, lower, upper);
                    y = yn;
                    t = t_next;
                } else {
                    // Momentum restart.
                    y = x.clone();
                    t = T::one();
                }
                // Let the step grow back when the local curvature drops.
                lip *= T::lit(0.9);
            }
        }
        let record = Telemetry { iter, objective: fx, step: lip.recip() };
        observer(&record);
        history.push(record);

        // A rejected candidate that barely moves the objective also means the
        // iteration has stalled at the prox accuracy.
        let change = if accepted_step { previous - fx } else { (fz - previous).abs() };
        let scale = previous.abs().max(fx.abs()).max(T::min_positive_value());
        if change >= T::zero() && change / scale < settings.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(Solution { image: x, objective: fx, iterations, converged, history })
}

/// Penalized ML reflectivity over `α ≥ 0`, started from normalized counts.
pub fn pml_reflectivity<T: Real>(
    frame: &DetectionFrame,
    cfg: &InstrumentConfig<T>,
    settings: &SolverSettings<T>,
) -> Result<Solution<T>> {
    pml_reflectivity_observed(frame, cfg, settings, |_| {})
}

pub fn pml_reflectivity_observed<T: Real>(
    frame: &DetectionFrame,
    cfg: &InstrumentConfig<T>,
    settings: &SolverSettings<T>,
    observer: impl FnMut(&Telemetry<T>),
) -> Result<Solution<T>> {
    cfg.validate()?;
    let counts = frame.counts();
    let x0 = counts.mapv(|k| normalized_count_reflectivity(cfg, k as u64));
    let term = ReflectivityTerm { cfg, counts };
    proximal_gradient(&term, x0, T::zero(), T::infinity(), settings, observer)
}

/// Depth initial guess: `c·t_ROM/2` where the ROM exists, else `cT_r/4`.
pub fn depth_initial_guess<T: Real>(frame: &DetectionFrame, cfg: &InstrumentConfig<T>) -> Array2<T> {
    let rom: Array2<T> = rom_times(frame);
    let mid = cfg.max_depth() / T::lit(2.0);
    rom.mapv(|t| if t.is_finite() { cfg.depth_of_time(t).max(T::zero()).min(cfg.depth_upper()) } else { mid })
}

/// Penalized ML depth over `[0, cT_r/2)` from the uncensored detections.
pub fn pml_depth<T: Real>(
    frame: &DetectionFrame,
    mask: &CensorMask,
    cfg: &InstrumentConfig<T>,
    pulse: &PulseShape<T>,
    settings: &SolverSettings<T>,
) -> Result<Solution<T>> {
    pml_depth_observed(frame, mask, cfg, pulse, settings, |_| {})
}

pub fn pml_depth_observed<T: Real>(
    frame: &DetectionFrame,
    mask: &CensorMask,
    cfg: &InstrumentConfig<T>,
    pulse: &PulseShape<T>,
    settings: &SolverSettings<T>,
    observer: impl FnMut(&Telemetry<T>),
) -> Result<Solution<T>> {
    cfg.validate()?;
    pulse.check_log_concave()?;
    if !mask.is_consistent_with(frame) {
        return Err(Error::Shape("censor mask does not match the detection frame".into()));
    }
    let n = frame.n();
    let times: Vec<Vec<T>> = frame
        .pixels()
        .iter()
        .zip(mask.pixels())
        .map(|(ts, keep)| keep.iter().map(|&l| T::lit(ts[l as usize])).collect())
        .collect();
    let x0 = depth_initial_guess(frame, cfg);
    let term = DepthTerm { cfg, pulse, n, times };
    proximal_gradient(&term, x0, T::zero(), cfg.depth_upper(), settings, observer)
}

/// Grid search over penalty weights. `score` is maximised (pass a negated
/// error to minimise one). Returns the best weight and every score.
pub fn select_beta<T: Real>(grid: &[T], mut score: impl FnMut(T) -> Result<f64>) -> Result<(T, Vec<(T, f64)>)> {
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(T, f64)> = None;
    for &beta in grid {
        let s = score(beta)?;
        scores.push((beta, s));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((beta, s));
        }
    }
    best.map(|(b, _)| (b, scores)).ok_or_else(|| Error::Contract("empty penalty grid".into()))
}

/// `10^{lo}, …, 10^{hi}` with `per_decade` points per decade.
pub fn log_grid<T: Real>(lo: i32, hi: i32, per_decade: usize) -> Vec<T> {
    let steps = (hi - lo) as usize * per_decade;
    (0..=steps).map(|s| T::lit(10f64.powf(lo as f64 + s as f64 / per_decade as f64))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixelwise::cml_reflectivity;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn cfg() -> InstrumentConfig<f64> {
        InstrumentConfig {
            eta: 0.35,
            signal: 0.004,
            background: 0.0007,
            pulses: 1000,
            period: 100e-9,
            pulse_width: 270e-12,
            delta: 8e-12,
            c: 2.998e8,
        }
    }

    #[test]
    fn reflectivity_nll_zero_count_is_linear() {
        let c = cfg();
        let es = c.eta * c.signal;
        assert_relative_eq!(reflectivity_nll(&c, 0.3, 0), 1000.0 * es * 0.3);
        assert!(reflectivity_nll(&c, 0.0, 0) < reflectivity_nll(&c, 0.1, 0));
    }

    #[test]
    fn reflectivity_nll_infinite_without_flux() {
        let mut c = cfg();
        c.background = 0.0;
        assert!(reflectivity_nll(&c, 0.0, 3).is_infinite());
    }

    #[test]
    fn reflectivity_nll_stationary_at_cml() {
        let mut c = cfg();
        c.pulses = 1000;
        let k = 7;
        let a = cml_reflectivity(&c, k).value;
        assert!(a > 0.0);
        let h = 1e-6 * a;
        let d = (reflectivity_nll(&c, a + h, k) - reflectivity_nll(&c, a - h, k)) / (2.0 * h);
        let scale = reflectivity_nll_and_slope(&c, a, 0).1;
        assert!(d.abs() < 1e-6 * scale, "{d}");
        assert!(reflectivity_nll_and_slope(&c, a, k).1.abs() < 1e-9 * scale);
    }

    #[test]
    fn reflectivity_nll_strictly_convex_on_grid() {
        let c = cfg();
        let h = 1e-3;
        for k in [1_u64, 4, 20] {
            for i in 1..200 {
                let a = i as f64 * 0.01;
                let second = reflectivity_nll(&c, a + h, k) - 2.0 * reflectivity_nll(&c, a, k) + reflectivity_nll(&c, a - h, k);
                assert!(second > 0.0, "k={k} a={a}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.05..3.0);
            let k: u64 = rng.random_range(0..12);
            let h = 1e-5 * a;
            let fd = (reflectivity_nll(&c, a + h, k) - reflectivity_nll(&c, a - h, k)) / (2.0 * h);
            let an = reflectivity_nll_and_slope(&c, a, k).1;
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "a={a} k={k}: {fd} vs {an}");

            let z: f64 = rng.random_range(1.0..14.0);
            let times: Vec<f64> = (0..rng.random_range(1..5)).map(|_| c.round_trip(z) + rng.random_range(-4e-10..4e-10)).collect();
            let h = 1e-6;
            let fd = (depth_nll(&c, &p, z + h, &times) - depth_nll(&c, &p, z - h, &times)) / (2.0 * h);
            let an = depth_nll_and_slope(&c, &p, z, &times).1;
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "z={z}: {fd} vs {an}");
        }
    }

    #[test]
    fn depth_nll_empty_and_quadratic() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        assert_eq!(depth_nll(&c, &p, 3.0, &[]), 0.0);
        let times = [20e-9, 20.3e-9, 19.8e-9];
        let f = |z: f64| depth_nll(&c, &p, z, &times);
        let quad = |z: f64| times.iter().map(|t| (t - c.round_trip(z)).powi(2) / (2.0 * c.pulse_width.powi(2))).sum::<f64>();
        let off = f(3.0) - quad(3.0);
        for z in [2.5, 2.9, 3.1, 3.4] {
            assert_relative_eq!(f(z) - quad(z), off, max_relative = 1e-9);
        }
    }

    #[test]
    fn depth_nll_minimiser_is_mean_time() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        let times = [30e-9, 30.4e-9, 29.9e-9, 30.05e-9];
        let closed = c.c / 2.0 * times.iter().sum::<f64>() / 4.0;
        // Newton on the exact quadratic from a distant start.
        let mut z = 2.0;
        for _ in 0..5 {
            let (_, g) = depth_nll_and_slope(&c, &p, z, &times);
            let h = 1e-4;
            let curv = (depth_nll_and_slope(&c, &p, z + h, &times).1 - depth_nll_and_slope(&c, &p, z - h, &times).1) / (2.0 * h);
            z -= g / curv;
        }
        assert_relative_eq!(z, closed, max_relative = 1e-9);
    }

    #[test]
    fn convexity_probes() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let k: u64 = rng.random_range(0..10);
            let (x, y): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let l: f64 = rng.random_range(0.01..0.99);
            let f = |a| reflectivity_nll(&c, a, k);
            assert!(f(l * x + (1.0 - l) * y) <= l * f(x) + (1.0 - l) * f(y) + 1e-9);
            let times = [40e-9, 41e-9];
            let g = |z| depth_nll(&c, &p, z, &times);
            let (x, y) = (x * 4.0 + 1.0, y * 4.0 + 1.0);
            assert!(g(l * x + (1.0 - l) * y) <= l * g(x) + (1.0 - l) * g(y) + 1e-9);
            let a = Array2::from_shape_fn((3, 3), |_| rng.random_range(0.0..1.0));
            let b = Array2::from_shape_fn((3, 3), |_| rng.random_range(0.0..1.0));
            let mix = &a * l + &b * (1.0 - l);
            assert!(tv_seminorm(&mix) <= l * tv_seminorm(&a) + (1.0 - l) * tv_seminorm(&b) + 1e-9);
        }
    }

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::new(-1.0_f64).validate().is_err());
        let mut s = SolverSettings::new(1.0_f64);
        s.max_iters = 0;
        assert!(s.validate().is_err());
        let mut s = SolverSettings::new(1.0_f64);
        s.rel_tol = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn fixed_step_too_large_diverges() {
        struct Quad;
        impl PixelTerm<f64> for Quad {
            fn dim(&self) -> (usize, usize) {
                (2, 2)
            }
            fn eval(&self, _: usize, _: usize, x: f64) -> (f64, f64) {
                (50.0 * (x - 1.0).powi(2), 100.0 * (x - 1.0))
            }
        }
        let mut s = SolverSettings::new(0.0);
        s.step_rule = StepRule::FixedLipschitz(1.0);
        s.accelerated = false;
        s.max_iters = 200;
        let err = proximal_gradient(&Quad, Array2::zeros((2, 2)), f64::NEG_INFINITY, f64::INFINITY, &s, |_| {}).unwrap_err();
        assert!(matches!(err, Error::SolverDiverged { .. }));
        s.step_rule = StepRule::Backtracking;
        let sol = proximal_gradient(&Quad, Array2::zeros((2, 2)), -1e9, 1e9, &s, |_| {}).unwrap();
        assert!(sol.image.iter().all(|x| (x - 1.0).abs() < 1e-4));
    }

    #[test]
    fn telemetry_csv_format() {
        let hist = vec![Telemetry { iter: 0, objective: 2.5_f64, step: 0.1 }, Telemetry { iter: 1, objective: 2.0, step: 0.1 }];
        let mut buf = Vec::new();
        write_telemetry_csv(&mut buf, &hist).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,objective,step");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn beta_grid_selection() {
        let grid = log_grid::<f64>(-3, 1, 1);
        assert_eq!(grid.len(), 5);
        assert_relative_eq!(grid[0], 1e-3);
        assert_relative_eq!(grid[4], 10.0);
        let (best, scores) = select_beta(&grid, |b| Ok(-(b.log10() + 1.0).powi(2))).unwrap();
        assert_relative_eq!(best, 0.1, max_relative = 1e-12);
        assert_eq!(scores.len(), 5);
    }
}
