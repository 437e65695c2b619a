//! Cramér–Rao bounds and closed-form MSEs for the pixelwise estimators, with
//! Monte-Carlo harnesses to check them.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{expected_count, log_count_pmf, InstrumentConfig};
use crate::pixelwise::unconstrained_ml_reflectivity;
use crate::pulse::{PulseKind, PulseShape};
use crate::quadrature::{integrate_with_breaks, QuadSettings};
use crate::rng::{substream, DOMAIN_MONTE_CARLO};
use crate::scalar::{CompensatedSum, Real};

/// Trials per substream; fixed so results do not depend on thread count.
pub const MC_CHUNK: usize = 10_000;

const Z95: f64 = 1.959_963_984_540_054;

/// `(e^{ηαS+B} − 1) / (N η² S²)`.
pub fn crlb_reflectivity<T: Real>(cfg: &InstrumentConfig<T>, alpha: T) -> T {
    let es = cfg.eta * cfg.signal;
    cfg.flux(alpha).exp_m1() / (T::lit(cfg.pulses as f64) * es * es)
}

/// Low-flux form `(ηαS + B) / (N η² S²)`; also the MSE of
/// [`poisson_limit_ml_reflectivity`] under Poisson counts.
pub fn crlb_reflectivity_low_flux<T: Real>(cfg: &InstrumentConfig<T>, alpha: T) -> T {
    let es = cfg.eta * cfg.signal;
    cfg.flux(alpha) / (T::lit(cfg.pulses as f64) * es * es)
}

/// `k/(NηS) − B/(ηS)`, not clamped.
pub fn poisson_limit_ml_reflectivity<T: Real>(cfg: &InstrumentConfig<T>, k: u64) -> T {
    let es = cfg.eta * cfg.signal;
    T::lit(k as f64) / (T::lit(cfg.pulses as f64) * es) - cfg.background / es
}

/// Reflectivity at which the mean count `N(1 − e^{−(ηαS+B)})` equals `count`.
pub fn alpha_for_expected_count<T: Real>(cfg: &InstrumentConfig<T>, count: T) -> Result<T> {
    let n = T::lit(cfg.pulses as f64);
    if !(count >= T::zero() && count < n) {
        return Err(Error::Domain { what: "expected count", value: count.as_f64() });
    }
    let flux = -(-count / n).ln_1p();
    let alpha = (flux - cfg.background) / (cfg.eta * cfg.signal);
    if alpha < T::zero() {
        return Err(Error::Domain { what: "expected count below background level", value: count.as_f64() });
    }
    Ok(alpha)
}

/// Monte-Carlo mean with a normal-approximation 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub trials: u64,
}

impl McEstimate {
    fn from_moments(sum: f64, sum_sq: f64, trials: u64) -> Self {
        let n = trials as f64;
        let mean = sum / n;
        let var = if trials > 1 { ((sum_sq - sum * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        let std_err = (var / n).sqrt();
        Self { mean, std_err, ci_lo: mean - Z95 * std_err, ci_hi: mean + Z95 * std_err, trials }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_lo <= value && value <= self.ci_hi
    }
}

/// Draws `trials` samples of `sample` (which may reject a draw by returning
/// `None`) in fixed-size chunks, one substream per chunk.
/// Returns the estimate over accepted samples and the rejected count.
pub fn monte_carlo<F>(trials: u64, seed: u64, sample: F) -> (McEstimate, u64)
where
    F: Fn(&mut ChaCha8Rng) -> Option<f64> + Sync,
{
    let chunks = trials.div_ceil(MC_CHUNK as u64);
    let parts: Vec<(f64, f64, u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, DOMAIN_MONTE_CARLO, c);
            let len = (trials - c * MC_CHUNK as u64).min(MC_CHUNK as u64);
            let mut sum = CompensatedSum::new();
            let mut sum_sq = CompensatedSum::new();
            let (mut used, mut rejected) = (0, 0);
            for _ in 0..len {
                match sample(&mut rng) {
                    Some(x) => {
                        sum.add(x);
                        sum_sq.add(x * x);
                        used += 1;
                    }
                    None => rejected += 1,
                }
            }
            (sum.value(), sum_sq.value(), used, rejected)
        })
        .collect();
    let mut sum = CompensatedSum::new();
    let mut sum_sq = CompensatedSum::new();
    let (mut used, mut rejected) = (0, 0);
    for (s, q, u, r) in parts {
        sum.add(s);
        sum_sq.add(q);
        used += u;
        rejected += r;
    }
    (McEstimate::from_moments(sum.value(), sum_sq.value(), used), rejected)
}

fn binomial(cfg: &InstrumentConfig<f64>, alpha: f64) -> Result<Binomial> {
    let p = -(-cfg.flux(alpha)).exp_m1();
    Binomial::new(cfg.pulses, p).map_err(|e| Error::Contract(format!("binomial parameters: {e}")))
}

/// Monte-Carlo MSE of [`poisson_limit_ml_reflectivity`] with binomial counts.
pub fn mc_poisson_limit_mse(cfg: &InstrumentConfig<f64>, alpha: f64, trials: u64, seed: u64) -> Result<McEstimate> {
    cfg.validate()?;
    let law = binomial(cfg, alpha)?;
    let (est, _) = monte_carlo(trials, seed, |rng| {
        let e = poisson_limit_ml_reflectivity(cfg, law.sample(rng)) - alpha;
        Some(e * e)
    });
    Ok(est)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasReport {
    /// Mean of `α̂ − α` over draws with `k < N`.
    pub bias: McEstimate,
    /// Draws with `k = N`, where the estimator is undefined.
    pub saturated: u64,
}

/// Monte-Carlo bias of the unconstrained ML reflectivity
/// `(1/ηS)[ln(N/(N−k)) − B]` under binomial counts.
pub fn ml_bias_test(cfg: &InstrumentConfig<f64>, alpha: f64, trials: u64, seed: u64) -> Result<BiasReport> {
    cfg.validate()?;
    if !(alpha > 0.0) {
        return Err(Error::Domain { what: "reflectivity", value: alpha });
    }
    if trials < 100_000 {
        return Err(Error::Contract(format!("bias test needs at least 1e5 trials, got {trials}")));
    }
    let law = binomial(cfg, alpha)?;
    let n = cfg.pulses;
    let (bias, saturated) = monte_carlo(trials, seed, |rng| {
        let k = law.sample(rng);
        (k < n).then(|| unconstrained_ml_reflectivity(cfg, k) - alpha)
    });
    Ok(BiasReport { bias, saturated })
}

/// Exact bias of the unconstrained ML reflectivity conditioned on `k < N`,
/// by summing over the count law.
pub fn exact_ml_bias(cfg: &InstrumentConfig<f64>, alpha: f64) -> f64 {
    let n = cfg.pulses;
    let flux = cfg.flux(alpha);
    let mut mass = CompensatedSum::new();
    let mut moment = CompensatedSum::new();
    for k in 0..n {
        let p = log_count_pmf(n, flux, k).exp();
        mass.add(p);
        moment.add(p * (unconstrained_ml_reflectivity(cfg, k) - alpha));
    }
    moment.value() / mass.value()
}

/// Depth CRLB `(c²/4) / (C(α) ∫ ṗ²/p dt)` with `p` the normalised detection
/// density on `[0, T_r)`.
pub fn crlb_depth<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, alpha: T, z: T) -> Result<T> {
    let total = cfg.flux(alpha);
    if !(total > T::zero()) {
        return Err(Error::UndefinedDensity);
    }
    let fisher = time_fisher_information(cfg, pulse, alpha, z)?;
    let quarter = T::lit(0.25);
    Ok(quarter * cfg.c * cfg.c / (expected_count(cfg, alpha) * fisher))
}

/// `∫ ṗ²/p dt` over `[0, T_r)` for a shift in arrival time, where the
/// integrand is taken as zero wherever `p = 0`.
pub fn time_fisher_information<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, alpha: T, z: T) -> Result<T> {
    let total = cfg.flux(alpha);
    let shift = cfg.round_trip(z);
    let bg = cfg.background / cfg.period;
    let amp = cfg.eta * alpha;
    let (lo, hi) = pulse.support();
    let step = cfg.delta;
    let integrand = |t: T| {
        let u = t - shift;
        let lambda = amp * pulse.flux(u) + bg;
        if !(lambda > T::zero()) {
            return T::zero();
        }
        let d = amp * pulse.flux_derivative(u, step);
        d * d / lambda
    };
    let w = pulse.rms_width();
    let zero = T::zero();
    let mut offsets = vec![lo, -T::lit(3.0) * w, -w, zero, w, T::lit(3.0) * w, hi];
    if let PulseKind::Sampled { times, .. } = pulse.kind() {
        // Kinks of the interpolant and of its central difference.
        for &t in times {
            offsets.extend([t - step, t, t + step]);
        }
    }
    let mut breaks: Vec<T> = offsets.iter().map(|&b| (b + shift).max(zero).min(cfg.period)).collect();
    breaks.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    breaks.dedup();
    let settings = QuadSettings { abs_tol: T::zero(), rel_tol: T::lit(1e-10), max_intervals: 4000 + 2 * breaks.len() };
    let quad = integrate_with_breaks(integrand, &breaks, settings)?;
    Ok(quad.value / total)
}

/// `∫₀^C (e^τ − 1)/τ dτ`.
pub fn ein(c: f64) -> Result<f64> {
    Ok(scaled_ein(c)? * c.exp())
}

/// `e^{−C} ∫₀^C (e^τ − 1)/τ dτ`, finite for every `C ≥ 0`.
pub fn scaled_ein(c: f64) -> Result<f64> {
    if !(c >= 0.0) || !c.is_finite() {
        return Err(Error::Domain { what: "expected count", value: c });
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    if c < 1.0 {
        let mut term = 1.0;
        let mut sum = CompensatedSum::new();
        for k in 1..200 {
            term *= c / k as f64;
            let add = term / k as f64;
            sum.add(add);
            if add < 1e-18 * sum.value() {
                break;
            }
        }
        return Ok(sum.value() * (-c).exp());
    }
    let integrand = |t: f64| {
        if t < 1.0 {
            if t == 0.0 { (-c).exp() } else { t.exp_m1() / t * (-c).exp() }
        } else {
            ((t - c).exp() - (-c).exp()) / t
        }
    };
    let mut breaks = vec![0.0, 1.0_f64.min(c)];
    for back in [40.0, 10.0, 2.0] {
        if c - back > breaks[breaks.len() - 1] {
            breaks.push(c - back);
        }
    }
    breaks.push(c);
    let quad = integrate_with_breaks(integrand, &breaks, QuadSettings::default())?;
    Ok(quad.value)
}

/// MSE (m²) of the mean-time depth estimator with a uniform guess on
/// `[0, cT_r/2)` when nothing is detected, for a Gaussian pulse and no
/// background, under Poisson counts with mean `C(α)`:
/// `e^{−C}[(cT_r/2)²/12 + (z − cT_r/4)²] + e^{−C}(cT_p/2)² ∫₀^C (e^τ−1)/τ dτ`.
pub fn mse_depth_gaussian(cfg: &InstrumentConfig<f64>, alpha: f64, z: f64) -> Result<f64> {
    if cfg.background != 0.0 {
        return Err(Error::Contract(format!("depth MSE formula assumes B = 0, got B = {}", cfg.background)));
    }
    let c = expected_count(cfg, alpha);
    mse_depth_gaussian_at_count(cfg, c, z)
}

/// [`mse_depth_gaussian`] parameterised directly by the mean count `C`.
pub fn mse_depth_gaussian_at_count(cfg: &InstrumentConfig<f64>, count: f64, z: f64) -> Result<f64> {
    let range = cfg.max_depth();
    let guess = range * range / 12.0 + (z - range / 2.0).powi(2);
    let width = cfg.c * cfg.pulse_width / 2.0;
    Ok((-count).exp() * guess + width * width * scaled_ein(count)?)
}

/// Monte Carlo of the estimator behind [`mse_depth_gaussian`]: `K ~ Poisson(C)`,
/// `K` continuous arrival times from the pulse, `ẑ = (c/2)·mean(t)`.
pub fn mc_depth_mse(cfg: &InstrumentConfig<f64>, pulse: &PulseShape<f64>, count: f64, z: f64, trials: u64, seed: u64) -> Result<McEstimate> {
    let range = cfg.max_depth();
    let shift = cfg.round_trip(z);
    let law = (count > 0.0)
        .then(|| Poisson::new(count).map_err(|e| Error::Contract(format!("poisson parameter: {e}"))))
        .transpose()?;
    let (est, _) = monte_carlo(trials, seed, |rng| {
        let k = law.as_ref().map_or(0, |l| l.sample(rng) as u64);
        let zhat = if k == 0 {
            rng.random::<f64>() * range
        } else {
            let mut sum = 0.0;
            for _ in 0..k {
                sum += shift + pulse.inverse_cdf(rng.random::<f64>());
            }
            cfg.c / 2.0 * sum / k as f64
        };
        Some((zhat - z).powi(2))
    });
    Ok(est)
}

/// Which parameter a bound sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Alpha,
    Pulses,
    Sbr,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Alpha => "alpha",
            SweepKind::Pulses => "N",
            SweepKind::Sbr => "sbr",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepKind::Alpha),
            "N" | "n" => Ok(SweepKind::Pulses),
            "sbr" => Ok(SweepKind::Sbr),
            other => Err(Error::Contract(format!("unknown sweep `{other}` (expected alpha, N or sbr)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub param: SweepKind,
    pub value: f64,
    pub bound: f64,
    pub mc: McEstimate,
}

/// Reflectivity CRLB against the Monte-Carlo MSE of the Poisson-limit
/// estimator while one parameter moves. For `Sbr`, `B` is set to
/// `ηαS / sbr`; for `Pulses`, values are rounded to integers.
pub fn reflectivity_sweep(
    cfg: &InstrumentConfig<f64>,
    alpha: f64,
    kind: SweepKind,
    values: &[f64],
    trials: u64,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut c = *cfg;
            let mut a = alpha;
            match kind {
                SweepKind::Alpha => a = value,
                SweepKind::Pulses => c.pulses = value.round().max(1.0) as u64,
                SweepKind::Sbr => {
                    if !(value > 0.0) {
                        return Err(Error::Domain { what: "sbr", value });
                    }
                    c.background = c.eta * alpha * c.signal / value;
                }
            }
            let mc = mc_poisson_limit_mse(&c, a, trials, seed.wrapping_add(i as u64))?;
            Ok(SweepRow { param: kind, value, bound: crlb_reflectivity(&c, a), mc })
        })
        .collect()
}

/// `param,value,bound,mc_estimate,ci_lo,ci_hi`.
pub fn write_sweep_csv<W: Write>(mut out: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "param,value,bound,mc_estimate,ci_lo,ci_hi")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e},{:e},{:e}", r.param.name(), r.value, r.bound, r.mc.mean, r.mc.ci_lo, r.mc.ci_hi)?;
    }
    Ok(())
}

/// Fisher information of a unit-area Gaussian about its mean, `1/σ²`,
/// for comparison with [`time_fisher_information`].
pub fn gaussian_fisher_oracle(rms_width: f64) -> f64 {
    1.0 / (rms_width * rms_width)
}
