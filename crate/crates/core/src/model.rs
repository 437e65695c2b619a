//! Acquisition constants, scene and detection containers, and the exact
//! low-flux photon-detection laws.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::PulseShape;
use crate::scalar::Real;

/// Above this per-period mean count the binomial/mixture laws stop being accurate.
pub const LOW_FLUX_LIMIT: f64 = 0.1;

/// Acquisition constants. Serialises with the keys `eta,S,B,N,T_r,T_p,delta,c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentConfig<T = f64> {
    /// Detection quantum efficiency η.
    pub eta: T,
    /// Integrated photon count of one pulse, `S`.
    #[serde(rename = "S")]
    pub signal: T,
    /// Background plus dark counts per repetition period, `B`.
    #[serde(rename = "B")]
    pub background: T,
    /// Pulses per pixel, `N`.
    #[serde(rename = "N")]
    pub pulses: u64,
    /// Repetition period `T_r` in seconds.
    #[serde(rename = "T_r")]
    pub period: T,
    /// RMS pulse width `T_p` in seconds.
    #[serde(rename = "T_p")]
    pub pulse_width: T,
    /// Timing bin width Δ in seconds.
    pub delta: T,
    /// Speed of light in m/s.
    pub c: T,
}

impl<T: Real> InstrumentConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.eta > T::zero() && self.eta <= T::one()) {
            return bad(format!("eta must lie in (0, 1], got {}", self.eta));
        }
        if !(self.signal >= T::zero()) || !self.signal.is_finite() {
            return bad(format!("S must be finite and non-negative, got {}", self.signal));
        }
        if !(self.background >= T::zero()) || !self.background.is_finite() {
            return bad(format!("B must be finite and non-negative, got {}", self.background));
        }
        if self.pulses < 1 {
            return bad("N must be at least 1".into());
        }
        if !(self.period > T::zero()) || !(self.pulse_width > T::zero()) || !(self.c > T::zero()) {
            return bad("T_r, T_p and c must be positive".into());
        }
        if !(self.pulse_width < self.period / T::lit(100.0)) {
            return bad(format!("T_p ({}) must be below T_r/100 ({})", self.pulse_width, self.period / T::lit(100.0)));
        }
        if !(self.delta > T::zero() && self.delta < self.pulse_width) {
            return bad(format!("delta ({}) must lie in (0, T_p)", self.delta));
        }
        Ok(())
    }

    /// Mean detected-photon count per period, `η α S + B`.
    #[inline]
    pub fn flux(&self, alpha: T) -> T {
        self.eta * alpha * self.signal + self.background
    }

    /// Unambiguous range `c T_r / 2`.
    #[inline]
    pub fn max_depth(&self) -> T {
        self.c * self.period / T::lit(2.0)
    }

    /// Largest depth inside the half-open box `[0, c T_r / 2)`.
    #[inline]
    pub fn depth_upper(&self) -> T {
        self.max_depth().prev_down()
    }

    #[inline]
    pub fn round_trip(&self, z: T) -> T {
        T::lit(2.0) * z / self.c
    }

    #[inline]
    pub fn depth_of_time(&self, t: T) -> T {
        self.c * t / T::lit(2.0)
    }

    pub fn cast<U: Real>(&self) -> InstrumentConfig<U> {
        let f = |x: T| U::lit(x.as_f64());
        InstrumentConfig {
            eta: f(self.eta),
            signal: f(self.signal),
            background: f(self.background),
            pulses: self.pulses,
            period: f(self.period),
            pulse_width: f(self.pulse_width),
            delta: f(self.delta),
            c: f(self.c),
        }
    }

    /// Gaussian pulse matching `S` and `T_p`.
    pub fn gaussian_pulse(&self) -> Result<PulseShape<T>> {
        PulseShape::gaussian(self.signal, self.pulse_width)
    }

    /// Checks `max(η α S + B) < 0.1` over the scene, logging a warning when violated.
    pub fn low_flux_check(&self, scene: &Scene<T>) -> LowFluxCheck {
        let max_alpha = scene.alpha.iter().copied().fold(T::zero(), T::max);
        let max_flux = self.flux(max_alpha).as_f64();
        let satisfied = max_flux < LOW_FLUX_LIMIT;
        if !satisfied {
            log::warn!("low-flux assumption violated: max(eta*alpha*S + B) = {max_flux:.4} >= {LOW_FLUX_LIMIT}");
        }
        LowFluxCheck { max_flux, satisfied }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowFluxCheck {
    pub max_flux: f64,
    pub satisfied: bool,
}

/// Paired reflectivity and depth images on an `n × n` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T = f64> {
    pub alpha: Array2<T>,
    pub depth: Array2<T>,
}

impl<T: Real> Scene<T> {
    pub fn new(alpha: Array2<T>, depth: Array2<T>) -> Result<Self> {
        let (r, c) = alpha.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidScene(format!("images must be square and non-empty, got {r}x{c}")));
        }
        if depth.dim() != alpha.dim() {
            return Err(Error::InvalidScene("reflectivity and depth dimensions differ".into()));
        }
        if alpha.iter().any(|a| !(*a >= T::zero()) || !a.is_finite()) {
            return Err(Error::InvalidScene("reflectivity must be finite and non-negative".into()));
        }
        if depth.iter().any(|z| !(*z >= T::zero()) || !z.is_finite()) {
            return Err(Error::InvalidScene("depth must be finite and non-negative".into()));
        }
        Ok(Self { alpha, depth })
    }

    pub fn n(&self) -> usize {
        self.alpha.nrows()
    }

    /// Rejects depths beyond the unambiguous range of `cfg`.
    pub fn check_range(&self, cfg: &InstrumentConfig<T>) -> Result<()> {
        let zmax = cfg.max_depth();
        if let Some(z) = self.depth.iter().find(|z| **z >= zmax) {
            return Err(Error::InvalidScene(format!("depth {z} is at or beyond c*T_r/2 = {zmax}")));
        }
        Ok(())
    }
}

/// Per-pixel detection times (seconds), row-major. The count at a pixel is
/// the length of its list.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionFrame {
    n: usize,
    times: Vec<Vec<f64>>,
}

impl DetectionFrame {
    pub fn new(n: usize, times: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != n * n {
            return Err(Error::InvalidFrame(format!("expected {} pixels, got {}", n * n, times.len())));
        }
        Ok(Self { n, times })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        &self.times[row * self.n + col]
    }

    pub fn count(&self, row: usize, col: usize) -> u32 {
        self.pixel(row, col).len() as u32
    }

    pub fn pixels(&self) -> &[Vec<f64>] {
        &self.times
    }

    pub fn counts(&self) -> Array2<u32> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.count(i, j))
    }

    pub fn total_detections(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    pub fn mean_count(&self) -> f64 {
        self.total_detections() as f64 / (self.n * self.n) as f64
    }

    pub fn missing_fraction(&self) -> f64 {
        self.times.iter().filter(|t| t.is_empty()).count() as f64 / (self.n * self.n) as f64
    }

    /// Checks counts against `N`, the `[0, T_r)` range and Δ quantization.
    pub fn validate<T: Real>(&self, cfg: &InstrumentConfig<T>) -> Result<()> {
        let period = cfg.period.as_f64();
        let delta = cfg.delta.as_f64();
        for (idx, ts) in self.times.iter().enumerate() {
            if ts.len() as u64 > cfg.pulses {
                return Err(Error::InvalidFrame(format!("pixel {idx} has {} > N detections", ts.len())));
            }
            for &t in ts {
                if !(0.0..period).contains(&t) {
                    return Err(Error::InvalidFrame(format!("time {t} at pixel {idx} outside [0, T_r)")));
                }
                if !is_quantized(t, delta) {
                    return Err(Error::InvalidFrame(format!("time {t} at pixel {idx} is not a multiple of delta")));
                }
            }
        }
        Ok(())
    }
}

/// Rounds `t` down to the bin grid: `floor(t/Δ)·Δ`.
#[inline]
pub fn quantize(t: f64, delta: f64) -> f64 {
    (t / delta).floor() * delta
}

/// `t` is exactly `m·Δ` (as computed in floating point) for an integer `m`.
#[inline]
pub fn is_quantized(t: f64, delta: f64) -> bool {
    (t / delta).round() * delta == t
}

/// Per-pixel indices (0-based, ascending) of detections retained as signal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CensorMask {
    n: usize,
    kept: Vec<Vec<u32>>,
}

impl CensorMask {
    pub fn new(n: usize, kept: Vec<Vec<u32>>) -> Result<Self> {
        if kept.len() != n * n {
            return Err(Error::Shape(format!("mask has {} pixels, expected {}", kept.len(), n * n)));
        }
        if kept.iter().any(|u| u.windows(2).any(|w| w[0] >= w[1])) {
            return Err(Error::Shape("mask indices must be strictly ascending".into()));
        }
        Ok(Self { n, kept })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kept(&self, row: usize, col: usize) -> &[u32] {
        &self.kept[row * self.n + col]
    }

    pub fn pixels(&self) -> &[Vec<u32>] {
        &self.kept
    }

    pub fn total_kept(&self) -> usize {
        self.kept.iter().map(Vec::len).sum()
    }

    /// Indices are in range of the frame's detection lists.
    pub fn is_consistent_with(&self, frame: &DetectionFrame) -> bool {
        self.n == frame.n()
            && self.kept.iter().zip(frame.pixels()).all(|(u, ts)| u.iter().all(|&l| (l as usize) < ts.len()))
    }
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    if !(alpha >= T::zero()) || !alpha.is_finite() {
        return Err(Error::Domain { what: "reflectivity", value: alpha.as_f64() });
    }
    Ok(())
}

fn check_time<T: Real>(cfg: &InstrumentConfig<T>, t: T) -> Result<()> {
    if !(t >= T::zero() && t < cfg.period) {
        return Err(Error::Domain { what: "detection time", value: t.as_f64() });
    }
    Ok(())
}

/// Photon-arrival rate `η α s(t − 2z/c) + B/T_r` (counts per second).
pub fn rate_function<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, alpha: T, z: T, t: T) -> Result<T> {
    check_alpha(alpha)?;
    check_time(cfg, t)?;
    if !(z >= T::zero() && z < cfg.max_depth()) {
        return Err(Error::Domain { what: "depth", value: z.as_f64() });
    }
    Ok(cfg.eta * alpha * pulse.flux(t - cfg.round_trip(z)) + cfg.background / cfg.period)
}

/// Probability of no detection in one period, `exp[−(η α S + B)]`.
pub fn p_no_detect<T: Real>(cfg: &InstrumentConfig<T>, alpha: T) -> T {
    (-cfg.flux(alpha)).exp()
}

/// Mean detection count over `N` pulses, `C(α) = N (1 − P₀)`.
pub fn expected_count<T: Real>(cfg: &InstrumentConfig<T>, alpha: T) -> T {
    T::lit(cfg.pulses as f64) * -(-cfg.flux(alpha)).exp_m1()
}

/// Binomial count law `C(N,k) P₀^{N−k} (1−P₀)^k`, evaluated in log space.
pub fn count_pmf<T: Real>(cfg: &InstrumentConfig<T>, alpha: T, k: u64) -> Result<T> {
    check_alpha(alpha)?;
    if k > cfg.pulses {
        return Err(Error::Domain { what: "count", value: k as f64 });
    }
    Ok(T::lit(log_count_pmf(cfg.pulses, cfg.flux(alpha).as_f64(), k).exp()))
}

/// `ln Pr[K = k]` for `K ~ Binomial(n, 1 − e^{−flux})`, via Loader's
/// saddle-point form so that large `n` keeps full relative accuracy.
pub(crate) fn log_count_pmf(n: u64, flux: f64, k: u64) -> f64 {
    let log_q = -flux;
    let p = -(-flux).exp_m1();
    if k == 0 {
        return n as f64 * log_q;
    }
    if k == n {
        return n as f64 * p.ln();
    }
    let (nf, kf) = (n as f64, k as f64);
    let lc = stirlerr(n) - stirlerr(k) - stirlerr(n - k) - bd0(kf, nf * p) - bd0(nf - kf, nf * log_q.exp());
    let lf = (2.0 * std::f64::consts::PI).ln() + kf.ln() + (-kf / nf).ln_1p();
    lc - 0.5 * lf
}

/// `ln n! − ln(√(2πn) (n/e)^n)`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let x = n as f64;
    if n <= 15 {
        let ln_fact = statrs::function::factorial::ln_factorial(n);
        return ln_fact - (x + 0.5) * x.ln() + x - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    let xx = x * x;
    if n > 500 {
        (S0 - S1 / xx) / x
    } else if n > 80 {
        (S0 - (S1 - S2 / xx) / xx) / x
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / xx) / xx) / xx) / x
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / xx) / xx) / xx) / xx) / x
    }
}

/// Deviance term `x ln(x/m) + m − x`, evaluated without cancellation.
fn bd0(x: f64, m: f64) -> f64 {
    if (x - m).abs() < 0.1 * (x + m) {
        let v = (x - m) / (x + m);
        let mut s = (x - m) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        for j in 1..1000 {
            ej *= v2;
            let next = s + ej / (2 * j + 1) as f64;
            if next == s {
                return next;
            }
            s = next;
        }
        s
    } else {
        x * (x / m).ln() + m - x
    }
}

/// Mixture density of a detection time on `[0, T_r)`.
pub fn detection_time_pdf<T: Real>(
    cfg: &InstrumentConfig<T>,
    pulse: &PulseShape<T>,
    alpha: T,
    z: T,
    t: T,
) -> Result<T> {
    check_alpha(alpha)?;
    check_time(cfg, t)?;
    let signal = cfg.eta * alpha * cfg.signal;
    let total = signal + cfg.background;
    if !(total > T::zero()) {
        return Err(Error::UndefinedDensity);
    }
    let ws = signal / total;
    let wb = cfg.background / total;
    let shaped = if ws > T::zero() { ws * pulse.flux(t - cfg.round_trip(z)) / pulse.total() } else { T::zero() };
    Ok(shaped + wb / cfg.period)
}

/// Probability that a detection is signal rather than background.
pub fn signal_probability<T: Real>(cfg: &InstrumentConfig<T>, alpha: T) -> T {
    let signal = cfg.eta * alpha * cfg.signal;
    let total = signal + cfg.background;
    if total > T::zero() {
        signal / total
    } else {
        T::zero()
    }
}
