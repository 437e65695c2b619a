//! Illumination waveform `s(t)`: photon flux per unit time of a single pulse,
//! centred so that a target at depth `z` returns it at `t = 2z/c`.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Gaussian pulses are cut at this many RMS widths on either side.
pub const GAUSSIAN_TRUNCATION: f64 = 6.0;

/// Number of knots in the inverse-CDF table used for sampled pulses.
pub const SAMPLED_CDF_KNOTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub enum PulseKind<T> {
    Gaussian { rms_width: T },
    /// Piecewise-linear flux between `(times[i], fluxes[i])`.
    Sampled { times: Vec<T>, fluxes: Vec<T> },
}

#[derive(Clone, Debug)]
pub struct PulseShape<T> {
    kind: PulseKind<T>,
    total: T,
    support: (T, T),
    peak: T,
    centroid: T,
    rms_width: T,
    flux_floor: T,
    cdf_table: Vec<(T, T)>,
}

impl<T: Real> PulseShape<T> {
    /// Gaussian pulse carrying `total` photons with RMS width `rms_width`,
    /// renormalised after truncation so that `∫ s = total`.
    pub fn gaussian(total: T, rms_width: T) -> Result<Self> {
        if !(total > T::zero()) || !(rms_width > T::zero()) || !total.is_finite() || !rms_width.is_finite() {
            return Err(Error::InvalidPulse(format!(
                "gaussian pulse needs positive total and width, got S={total}, T_p={rms_width}"
            )));
        }
        let cut = T::lit(GAUSSIAN_TRUNCATION);
        let mass = statrs::function::erf::erf(GAUSSIAN_TRUNCATION / std::f64::consts::SQRT_2);
        let peak = total / ((T::TAU()).sqrt() * rms_width * T::lit(mass));
        Ok(Self {
            kind: PulseKind::Gaussian { rms_width },
            total,
            support: (-cut * rms_width, cut * rms_width),
            peak,
            centroid: T::zero(),
            rms_width,
            flux_floor: T::lit(1e-12) * total / rms_width,
            cdf_table: Vec::new(),
        })
    }

    /// Sampled pulse; `fluxes` are rescaled so that the piecewise-linear
    /// interpolant integrates to `total`.
    pub fn sampled(times: Vec<T>, fluxes: Vec<T>, total: T) -> Result<Self> {
        if times.len() != fluxes.len() || times.len() < 2 {
            return Err(Error::InvalidPulse("need at least two (time, flux) samples of equal length".into()));
        }
        if !(total > T::zero()) {
            return Err(Error::InvalidPulse(format!("total photon count must be positive, got {total}")));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPulse("sample times must be finite and strictly increasing".into()));
        }
        if fluxes.iter().any(|f| !(*f >= T::zero()) || !f.is_finite()) {
            return Err(Error::InvalidPulse("fluxes must be finite and non-negative".into()));
        }
        let raw: T = segments(&times, &fluxes).map(|(t0, t1, f0, f1)| T::lit(0.5) * (t1 - t0) * (f0 + f1)).sum();
        if !(raw > T::zero()) {
            return Err(Error::InvalidPulse("pulse has zero energy".into()));
        }
        let scale = total / raw;
        let fluxes: Vec<T> = fluxes.into_iter().map(|f| f * scale).collect();

        // Simpson's rule is exact for the linear and cubic moments of a linear flux.
        let six = T::lit(6.0);
        let first: T = segments(&times, &fluxes)
            .map(|(t0, t1, f0, f1)| {
                let tm = T::lit(0.5) * (t0 + t1);
                let fm = T::lit(0.5) * (f0 + f1);
                (t1 - t0) / six * (t0 * f0 + T::lit(4.0) * tm * fm + t1 * f1)
            })
            .sum();
        let centroid = first / total;
        let second: T = segments(&times, &fluxes)
            .map(|(t0, t1, f0, f1)| {
                let tm = T::lit(0.5) * (t0 + t1);
                let fm = T::lit(0.5) * (f0 + f1);
                let sq = |t: T| (t - centroid) * (t - centroid);
                (t1 - t0) / six * (sq(t0) * f0 + T::lit(4.0) * sq(tm) * fm + sq(t1) * f1)
            })
            .sum();
        let rms_width = (second / total).sqrt();
        let peak = fluxes.iter().copied().fold(T::zero(), T::max);
        let support = (times[0], times[times.len() - 1]);
        let mut pulse = Self {
            kind: PulseKind::Sampled { times, fluxes },
            total,
            support,
            peak,
            centroid,
            rms_width,
            flux_floor: T::lit(1e-12) * total / rms_width,
            cdf_table: Vec::new(),
        };
        pulse.cdf_table = pulse.build_cdf_table();
        Ok(pulse)
    }

    pub fn kind(&self) -> &PulseKind<T> {
        &self.kind
    }

    /// Integrated photon count `S`.
    pub fn total(&self) -> T {
        self.total
    }

    /// `[t_lo, t_hi]`; the flux is zero outside.
    pub fn support(&self) -> (T, T) {
        self.support
    }

    pub fn centroid(&self) -> T {
        self.centroid
    }

    pub fn rms_width(&self) -> T {
        self.rms_width
    }

    pub fn peak(&self) -> T {
        self.peak
    }

    /// Floor applied before taking logarithms of a sampled flux.
    pub fn flux_floor(&self) -> T {
        self.flux_floor
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, PulseKind::Gaussian { .. })
    }

    /// `s(t)`.
    pub fn flux(&self, t: T) -> T {
        if t < self.support.0 || t > self.support.1 {
            return T::zero();
        }
        match &self.kind {
            PulseKind::Gaussian { rms_width } => {
                let x = t / *rms_width;
                self.peak * (-T::lit(0.5) * x * x).exp()
            }
            PulseKind::Sampled { times, fluxes } => {
                let i = segment_index(times, t);
                let (t0, t1) = (times[i], times[i + 1]);
                let w = (t - t0) / (t1 - t0);
                fluxes[i] + w * (fluxes[i + 1] - fluxes[i])
            }
        }
    }

    /// `ln s(t)`. Gaussian pulses use the untruncated quadratic so that the
    /// depth likelihood stays convex everywhere; sampled pulses are floored.
    pub fn log_flux(&self, t: T) -> T {
        match &self.kind {
            PulseKind::Gaussian { rms_width } => {
                let x = t / *rms_width;
                self.peak.ln() - T::lit(0.5) * x * x
            }
            PulseKind::Sampled { .. } => self.flux(t).max(self.flux_floor).ln(),
        }
    }

    /// `d/dt ln s(t)`, consistent with [`log_flux`](Self::log_flux).
    pub fn dlog_flux(&self, t: T) -> T {
        match &self.kind {
            PulseKind::Gaussian { rms_width } => -t / (*rms_width * *rms_width),
            PulseKind::Sampled { times, fluxes } => {
                if t < self.support.0 || t > self.support.1 {
                    return T::zero();
                }
                let f = self.flux(t);
                if f <= self.flux_floor {
                    return T::zero();
                }
                let i = segment_index(times, t);
                (fluxes[i + 1] - fluxes[i]) / (times[i + 1] - times[i]) / f
            }
        }
    }

    /// `ds/dt`: analytic for Gaussian pulses, central difference with `step` otherwise.
    pub fn flux_derivative(&self, t: T, step: T) -> T {
        match &self.kind {
            PulseKind::Gaussian { rms_width } => -t / (*rms_width * *rms_width) * self.flux(t),
            PulseKind::Sampled { .. } => (self.flux(t + step) - self.flux(t - step)) / (step + step),
        }
    }

    /// Draws a time offset (relative to the pulse origin) from `s/S` by
    /// inverting the CDF at `u ∈ [0, 1)`.
    pub fn inverse_cdf(&self, u: f64) -> T {
        match &self.kind {
            PulseKind::Gaussian { rms_width } => {
                let std = Normal::new(0.0, 1.0).expect("unit normal");
                let lo = std.cdf(-GAUSSIAN_TRUNCATION);
                let hi = std.cdf(GAUSSIAN_TRUNCATION);
                let x = std.inverse_cdf(lo + u * (hi - lo)).clamp(-GAUSSIAN_TRUNCATION, GAUSSIAN_TRUNCATION);
                T::lit(x) * *rms_width
            }
            PulseKind::Sampled { .. } => {
                let target = T::lit(u);
                let table = &self.cdf_table;
                let pos = table.partition_point(|(c, _)| *c < target);
                if pos == 0 {
                    return table[0].1;
                }
                if pos >= table.len() {
                    return table[table.len() - 1].1;
                }
                let (c0, t0) = table[pos - 1];
                let (c1, t1) = table[pos];
                if c1 <= c0 {
                    return t1;
                }
                t0 + (target - c0) / (c1 - c0) * (t1 - t0)
            }
        }
    }

    /// Log-concavity on the samples: for each interior triple with positive
    /// flux, `ln s_i` lies on or above the chord through its neighbours.
    pub fn check_log_concave(&self) -> Result<()> {
        let PulseKind::Sampled { times, fluxes } = &self.kind else {
            return Ok(());
        };
        for i in 1..fluxes.len() - 1 {
            let (a, b, c) = (fluxes[i - 1], fluxes[i], fluxes[i + 1]);
            if b <= T::zero() {
                if a > T::zero() && c > T::zero() {
                    return Err(Error::NotLogConcave { index: i });
                }
                continue;
            }
            if a <= T::zero() || c <= T::zero() {
                continue;
            }
            let h1 = times[i] - times[i - 1];
            let h2 = times[i + 1] - times[i];
            let chord = (h2 * a.ln() + h1 * c.ln()) / (h1 + h2);
            if b.ln() < chord - T::lit(1e-9) * (T::one() + chord.abs()) {
                return Err(Error::NotLogConcave { index: i });
            }
        }
        Ok(())
    }

    /// Exact `∫_{t_lo}^{t} s` for the piecewise-linear flux.
    fn cumulative(&self, t: T) -> T {
        let PulseKind::Sampled { times, fluxes } = &self.kind else {
            unreachable!("cumulative is only used for sampled pulses")
        };
        let mut acc = T::zero();
        for (t0, t1, f0, f1) in segments(times, fluxes) {
            if t >= t1 {
                acc += T::lit(0.5) * (t1 - t0) * (f0 + f1);
            } else {
                if t > t0 {
                    let ft = f0 + (t - t0) / (t1 - t0) * (f1 - f0);
                    acc += T::lit(0.5) * (t - t0) * (f0 + ft);
                }
                break;
            }
        }
        acc
    }

    fn build_cdf_table(&self) -> Vec<(T, T)> {
        let (lo, hi) = self.support;
        let knots = SAMPLED_CDF_KNOTS;
        (0..=knots)
            .map(|i| {
                let t = lo + (hi - lo) * T::lit(i as f64 / knots as f64);
                (self.cumulative(t) / self.total, t)
            })
            .collect()
    }
}

fn segments<'a, T: Real>(times: &'a [T], fluxes: &'a [T]) -> impl Iterator<Item = (T, T, T, T)> + 'a {
    times.windows(2).zip(fluxes.windows(2)).map(|(t, f)| (t[0], t[1], f[0], f[1]))
}

fn segment_index<T: Real>(times: &[T], t: T) -> usize {
    let pos = times.partition_point(|x| *x <= t);
    pos.saturating_sub(1).min(times.len() - 2)
}
