//! Per-pixel baselines: constrained ML and normalized-count reflectivity,
//! log-matched-filter and histogram-peak depth, and missing-pixel imputation.

use ndarray::{Array2, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{DetectionFrame, InstrumentConfig};
use crate::pulse::PulseShape;
use crate::rng::{pixel_stream, DOMAIN_IMPUTE};
use crate::scalar::{CompensatedSum, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmlReflectivity<T> {
    /// `+∞` when saturated.
    pub value: T,
    /// Every pulse produced a detection (`k = N`).
    pub saturated: bool,
}

/// `max{ (1/ηS)[ln(N/(N−k)) − B], 0 }`.
pub fn cml_reflectivity<T: Real>(cfg: &InstrumentConfig<T>, k: u64) -> CmlReflectivity<T> {
    debug_assert!(k <= cfg.pulses);
    if k >= cfg.pulses {
        return CmlReflectivity { value: T::infinity(), saturated: true };
    }
    let value = (unconstrained_ml_reflectivity(cfg, k)).max(T::zero());
    CmlReflectivity { value, saturated: false }
}

/// `(1/ηS)[ln(N/(N−k)) − B]` without the non-negativity constraint.
pub fn unconstrained_ml_reflectivity<T: Real>(cfg: &InstrumentConfig<T>, k: u64) -> T {
    let frac = T::lit(k as f64 / cfg.pulses as f64);
    let log_ratio = -(-frac).ln_1p();
    (log_ratio - cfg.background) / (cfg.eta * cfg.signal)
}

/// `k / (N η S)`.
pub fn normalized_count_reflectivity<T: Real>(cfg: &InstrumentConfig<T>, k: u64) -> T {
    T::lit(k as f64) / (T::lit(cfg.pulses as f64) * cfg.eta * cfg.signal)
}

fn mean_time(times: &[f64]) -> f64 {
    let s: CompensatedSum<f64> = times.iter().copied().collect();
    s.value() / times.len() as f64
}

/// Depth maximising `Σ ln s(t − 2z/c)` over `[0, cT_r/2)`. Gaussian pulses use
/// the closed form `(c/2)·mean(t)`; other pulses go through
/// [`log_matched_filter_search`]. `None` when there are no detections.
pub fn log_matched_filter_depth<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, times: &[f64]) -> Option<T> {
    if times.is_empty() {
        return None;
    }
    if pulse.is_gaussian() {
        let z = cfg.depth_of_time(T::lit(mean_time(times)) - pulse.centroid());
        return Some(z.max(T::zero()).min(cfg.depth_upper()));
    }
    log_matched_filter_search(cfg, pulse, times)
}

/// Numerical maximisation of the log-matched filter: grid at spacing `cΔ/2`,
/// golden-section refinement, then bisection on the sign of the derivative.
pub fn log_matched_filter_search<T: Real>(cfg: &InstrumentConfig<T>, pulse: &PulseShape<T>, times: &[f64]) -> Option<T> {
    if times.is_empty() {
        return None;
    }
    let ts: Vec<T> = times.iter().map(|t| T::lit(*t)).collect();
    let objective = |z: T| -> T {
        let shift = cfg.round_trip(z);
        ts.iter().map(|t| pulse.log_flux(*t - shift)).sum()
    };
    // d/dz Σ ln s(t − 2z/c)
    let slope = |z: T| -> T {
        let shift = cfg.round_trip(z);
        let s: T = ts.iter().map(|t| pulse.dlog_flux(*t - shift)).sum();
        -s * T::lit(2.0) / cfg.c
    };
    let upper = cfg.depth_upper();
    let step = cfg.c * cfg.delta / T::lit(2.0);
    let steps = (upper / step).ceil().to_usize().unwrap_or(0);
    let mut best = (T::zero(), objective(T::zero()));
    for i in 1..=steps {
        let z = (step * T::lit(i as f64)).min(upper);
        let v = objective(z);
        if v > best.1 {
            best = (z, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(T::zero()), (best.0 + step).min(upper));

    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (objective(x1), objective(x2));
    for _ in 0..60 {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = objective(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = objective(x1);
        }
    }
    let golden = T::lit(0.5) * (a + b);

    // Widen the bracket back out and polish on the derivative sign.
    let (mut lo, mut hi) = ((golden - step).max(T::zero()), (golden + step).min(upper));
    if slope(lo) > T::zero() && slope(hi) < T::zero() {
        for _ in 0..200 {
            let mid = T::lit(0.5) * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cand = T::lit(0.5) * (lo + hi);
        if objective(cand) >= objective(golden) {
            return Some(cand);
        }
    }
    Some(golden)
}

/// Peak of the detection-time histogram mapped to depth, earliest bin on ties.
pub fn histogram_depth<T: Real>(
    cfg: &InstrumentConfig<T>,
    pulse: &PulseShape<T>,
    times: &[f64],
    bin_width: T,
) -> Result<Option<T>> {
    if !(bin_width >= cfg.delta) {
        return Err(Error::Contract(format!("bin width {bin_width} is below delta {}", cfg.delta)));
    }
    if times.is_empty() {
        return Ok(None);
    }
    let bw = bin_width.as_f64();
    let bins = (cfg.period.as_f64() / bw).ceil() as usize;
    let mut hist = vec![0_u32; bins];
    for &t in times {
        let b = ((t / bw).floor() as usize).min(bins - 1);
        hist[b] += 1;
    }
    let (peak, _) = hist.iter().enumerate().fold((0, 0), |acc, (i, &h)| if h > acc.1 { (i, h) } else { acc });
    let center = T::lit((peak as f64 + 0.5) * bw);
    let z = cfg.depth_of_time(center - pulse.centroid());
    Ok(Some(z.max(T::zero()).min(cfg.depth_upper())))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImputeStrategy<T> {
    /// Mean of the available 8-neighbours, repeated until nothing is missing.
    NeighborMean,
    /// Uniform draw on `[0, upper)` from a per-pixel stream of `seed`.
    RandomUniform { upper: T, seed: u64 },
}

/// Fills `None` pixels. Neighbour-mean passes are Jacobi-style (each pass
/// reads only values known at its start) and sweep row-major.
pub fn impute_missing<T: Real>(image: &Array2<Option<T>>, strategy: ImputeStrategy<T>) -> Result<Array2<T>> {
    match strategy {
        ImputeStrategy::RandomUniform { upper, seed } => Ok(Array2::from_shape_fn(image.dim(), |(i, j)| {
            image[(i, j)].unwrap_or_else(|| {
                let mut rng = pixel_stream(seed, DOMAIN_IMPUTE, i, j);
                T::lit(rng.random::<f64>()) * upper
            })
        })),
        ImputeStrategy::NeighborMean => {
            if image.iter().all(Option::is_none) {
                return Err(Error::AllMissing);
            }
            let (rows, cols) = image.dim();
            let mut current = image.clone();
            while current.iter().any(Option::is_none) {
                let prev = current.clone();
                for ((i, j), slot) in current.indexed_iter_mut() {
                    if slot.is_some() {
                        continue;
                    }
                    let mut sum = T::zero();
                    let mut count = 0;
                    for di in -1_isize..=1 {
                        for dj in -1_isize..=1 {
                            if di == 0 && dj == 0 {
                                continue;
                            }
                            let (r, c) = (i as isize + di, j as isize + dj);
                            if r < 0 || c < 0 || r >= rows as isize || c >= cols as isize {
                                continue;
                            }
                            if let Some(v) = prev[(r as usize, c as usize)] {
                                sum += v;
                                count += 1;
                            }
                        }
                    }
                    if count > 0 {
                        *slot = Some(sum / T::lit(count as f64));
                    }
                }
            }
            Ok(current.mapv(|v| v.expect("filled")))
        }
    }
}

/// 3×3 median filter; edge pixels use their in-bounds neighbourhood.
pub fn median_filter3<T: Real>(image: &Array2<T>) -> Array2<T> {
    let (rows, cols) = image.dim();
    Array2::from_shape_fn((rows, cols), |(i, j)| {
        let mut window: Vec<T> = Vec::with_capacity(9);
        for r in i.saturating_sub(1)..=(i + 1).min(rows - 1) {
            for c in j.saturating_sub(1)..=(j + 1).min(cols - 1) {
                window.push(image[(r, c)]);
            }
        }
        median(&mut window).expect("non-empty window")
    })
}

/// Median with the even-size convention (mean of the two central values).
pub fn median<T: Real>(values: &mut [T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { T::lit(0.5) * (values[m - 1] + values[m]) })
}

/// Pixelwise estimates for a whole frame.
#[derive(Clone, Debug)]
pub struct PixelwiseImages<T> {
    /// Normalized-count reflectivity `k/(NηS)`.
    pub reflectivity: Array2<T>,
    /// Constrained ML reflectivity (`+∞` at saturated pixels).
    pub cml: Array2<T>,
    /// Log-matched-filter depth; `None` where no detection was recorded.
    pub depth: Array2<Option<T>>,
}

pub fn pixelwise_estimates<T: Real>(
    frame: &DetectionFrame,
    cfg: &InstrumentConfig<T>,
    pulse: &PulseShape<T>,
) -> PixelwiseImages<T> {
    let n = frame.n();
    let counts = frame.counts();
    let reflectivity = counts.mapv(|k| normalized_count_reflectivity(cfg, k as u64));
    let cml = counts.mapv(|k| cml_reflectivity(cfg, k as u64).value);
    let mut depth = Array2::from_elem((n, n), None);
    Zip::indexed(&mut depth).par_for_each(|(i, j), d| *d = log_matched_filter_depth(cfg, pulse, frame.pixel(i, j)));
    PixelwiseImages { reflectivity, cml, depth }
}

/// Neighbour-mean imputation followed by a 3×3 median filter.
pub fn denoised_pixelwise_depth<T: Real>(depth: &Array2<Option<T>>) -> Result<Array2<T>> {
    Ok(median_filter3(&impute_missing(depth, ImputeStrategy::NeighborMean)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> InstrumentConfig<f64> {
        InstrumentConfig {
            eta: 1.0,
            signal: 1.0,
            background: 0.0,
            pulses: 1000,
            period: 100e-9,
            pulse_width: 270e-12,
            delta: 8e-12,
            c: 2.998e8,
        }
    }

    #[test]
    fn cml_values() {
        let mut c = cfg();
        assert_eq!(cml_reflectivity(&c, 0).value, 0.0);
        assert_relative_eq!(cml_reflectivity(&c, 500).value, std::f64::consts::LN_2, max_relative = 1e-15);
        c.background = 0.8;
        assert_eq!(cml_reflectivity(&c, 500).value, 0.0);
        let sat = cml_reflectivity(&c, 1000);
        assert!(sat.saturated && sat.value.is_infinite());
    }

    #[test]
    fn cml_nondecreasing_in_k() {
        let mut c = cfg();
        c.background = 0.01;
        c.eta = 0.35;
        let vals: Vec<f64> = (0..1000).map(|k| cml_reflectivity(&c, k).value).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn normalized_count_values() {
        let mut c = cfg();
        assert_eq!(normalized_count_reflectivity(&c, 0), 0.0);
        c.signal = 0.01;
        assert_relative_eq!(normalized_count_reflectivity(&c, 1), 0.1, max_relative = 1e-14);
    }

    #[test]
    fn normalized_count_is_first_order_cml() {
        let c = cfg();
        for k in [1_u64, 2, 5] {
            let a = normalized_count_reflectivity(&c, k);
            let b = cml_reflectivity(&c, k).value;
            let x = k as f64 / c.pulses as f64;
            // ln(1/(1-x)) = x + x²/2 + ...
            assert!((b - a).abs() <= x * x, "k={k}");
        }
    }

    #[test]
    fn matched_filter_closed_form() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        assert_eq!(log_matched_filter_depth(&c, &p, &[]), None);
        let z = log_matched_filter_depth(&c, &p, &[12e-9]).unwrap();
        assert_relative_eq!(z, c.c * 12e-9 / 2.0, max_relative = 1e-15);
        let z = log_matched_filter_depth(&c, &p, &[10e-9, 20e-9]).unwrap();
        assert_relative_eq!(z, 2.2485, max_relative = 1e-12);
    }

    #[test]
    fn matched_filter_search_agrees_with_closed_form() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        let sets: [&[f64]; 3] = [&[33.1e-9], &[40e-9, 40.2e-9, 39.7e-9], &[71.23e-9, 71.9e-9]];
        for ts in sets {
            let closed = log_matched_filter_depth(&c, &p, ts).unwrap();
            let searched = log_matched_filter_search(&c, &p, ts).unwrap();
            assert!((closed - searched).abs() / closed < 1e-12, "{closed} vs {searched}");
        }
    }

    #[test]
    fn matched_filter_sampled_pulse() {
        let c = cfg();
        let times: Vec<f64> = (-30..=30).map(|i| i as f64 * 20e-12).collect();
        let fluxes: Vec<f64> = times.iter().map(|t| (-(t * t) / (2.0 * 200e-12f64.powi(2))).exp()).collect();
        let p = PulseShape::sampled(times, fluxes, 1.0).unwrap();
        let z = log_matched_filter_depth(&c, &p, &[30e-9, 30.1e-9]).unwrap();
        assert!((z - c.c * 30.05e-9 / 2.0).abs() < 1e-3, "{z}");
    }

    #[test]
    fn histogram_ties_and_identical() {
        let c = cfg();
        let p = c.gaussian_pulse().unwrap();
        let bw = 100e-12;
        let z = histogram_depth(&c, &p, &[5.01e-9; 4], bw).unwrap().unwrap();
        assert_relative_eq!(z, c.c * 5.05e-9 / 2.0, max_relative = 1e-9);
        let z = histogram_depth(&c, &p, &[7.01e-9, 3.01e-9], bw).unwrap().unwrap();
        assert_relative_eq!(z, c.c * 3.05e-9 / 2.0, max_relative = 1e-9);
        assert_eq!(histogram_depth(&c, &p, &[], bw).unwrap(), None);
        assert!(histogram_depth(&c, &p, &[1e-9], 1e-12).is_err());
    }

    #[test]
    fn impute_identity_and_single() {
        let full = Array2::from_shape_fn((3, 3), |(i, j)| Some((i * 3 + j) as f64));
        let out = impute_missing(&full, ImputeStrategy::NeighborMean).unwrap();
        assert_eq!(out, full.mapv(|v| v.unwrap()));
        let mut one = Array2::from_elem((3, 3), Some(2.5));
        one[(1, 1)] = None;
        assert_eq!(impute_missing(&one, ImputeStrategy::NeighborMean).unwrap()[(1, 1)], 2.5);
        let none: Array2<Option<f64>> = Array2::from_elem((2, 2), None);
        assert!(matches!(impute_missing(&none, ImputeStrategy::NeighborMean), Err(Error::AllMissing)));
    }

    #[test]
    fn impute_checkerboard_single_pass() {
        let img = Array2::from_shape_fn((6, 6), |(i, j)| if (i + j) % 2 == 0 { Some(1.0 + i as f64) } else { None });
        // Every missing pixel has a known 4-neighbour, so a single Jacobi pass fills all of them and
        // each equals the mean of its known neighbours in the original image.
        let out = impute_missing(&img, ImputeStrategy::NeighborMean).unwrap();
        for ((i, j), v) in img.indexed_iter() {
            if v.is_none() {
                let mut vals = vec![];
                for (r, c) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i.wrapping_sub(1), j + 1), (i + 1, j.wrapping_sub(1)), (i + 1, j + 1), (i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)] {
                    if let Some(Some(x)) = img.get((r, c)) {
                        vals.push(*x);
                    }
                }
                assert_relative_eq!(out[(i, j)], vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }

    #[test]
    fn impute_isolated_region_multi_pass() {
        let mut img = Array2::from_elem((7, 7), None);
        img[(0, 0)] = Some(3.0);
        let out = impute_missing(&img, ImputeStrategy::NeighborMean).unwrap();
        assert!(out.iter().all(|v| *v == 3.0));
    }

    #[test]
    fn impute_random_uniform_in_range() {
        let img: Array2<Option<f64>> = Array2::from_elem((10, 10), None);
        let out = impute_missing(&img, ImputeStrategy::RandomUniform { upper: 15.0, seed: 4 }).unwrap();
        assert!(out.iter().all(|v| (0.0..15.0).contains(v)));
        let again = impute_missing(&img, ImputeStrategy::RandomUniform { upper: 15.0, seed: 4 }).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), Some(3.0));
        assert_eq!(median::<f64>(&mut []), None);
    }
}
