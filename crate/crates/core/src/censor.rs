//! Background rejection by rank-ordered mean: a detection is kept only when it
//! lies close to the median detection time of the surrounding pixels.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::model::{CensorMask, DetectionFrame, InstrumentConfig};
use crate::pixelwise::median;
use crate::scalar::Real;

/// Median of the pooled detection times of the 8 neighbours of every pixel;
/// `+∞` where the neighbours hold no detections.
pub fn rom_times<T: Real>(frame: &DetectionFrame) -> Array2<T> {
    let n = frame.n();
    let mut rom = Array2::from_elem((n, n), T::infinity());
    Zip::indexed(&mut rom).par_for_each(|(i, j), out| {
        let mut pooled: Vec<f64> = Vec::new();
        for r in i.saturating_sub(1)..=(i + 1).min(n - 1) {
            for c in j.saturating_sub(1)..=(j + 1).min(n - 1) {
                if (r, c) != (i, j) {
                    pooled.extend_from_slice(frame.pixel(r, c));
                }
            }
        }
        if let Some(m) = median(&mut pooled) {
            *out = T::lit(m);
        }
    });
    rom
}

/// Half-width of the acceptance window, `2 T_p B / (η α̂ S + B)`.
pub fn censor_threshold<T: Real>(cfg: &InstrumentConfig<T>, alpha_hat: T) -> T {
    let b = cfg.background;
    T::lit(2.0) * cfg.pulse_width * b / (cfg.eta * alpha_hat * cfg.signal + b)
}

/// Keeps `{ ℓ : |t_ℓ − t_ROM| < 2 T_p B / (η α̂ S + B) }` at each pixel. With
/// `B = 0` there is nothing to reject and every detection is kept.
pub fn censor_detections<T: Real>(
    frame: &DetectionFrame,
    cfg: &InstrumentConfig<T>,
    alpha_hat: &Array2<T>,
    rom: &Array2<T>,
) -> Result<CensorMask> {
    let n = frame.n();
    if alpha_hat.dim() != (n, n) || rom.dim() != (n, n) {
        return Err(Error::Shape(format!("frame is {n}x{n} but reflectivity/ROM images are {:?}/{:?}", alpha_hat.dim(), rom.dim())));
    }
    if let Some(a) = alpha_hat.iter().find(|a| !(**a >= T::zero())) {
        return Err(Error::Domain { what: "reflectivity estimate", value: a.as_f64() });
    }
    let bypass = cfg.background == T::zero();
    let kept: Vec<Vec<u32>> = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let times = frame.pixel(i, j);
            if bypass {
                return (0..times.len() as u32).collect();
            }
            let centre = rom[(i, j)];
            if !centre.is_finite() {
                return Vec::new();
            }
            let centre = centre.as_f64();
            let window = censor_threshold(cfg, alpha_hat[(i, j)]).as_f64();
            times
                .iter()
                .enumerate()
                .filter(|(_, t)| (**t - centre).abs() < window)
                .map(|(l, _)| l as u32)
                .collect()
        })
        .collect();
    CensorMask::new(n, kept)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> InstrumentConfig<f64> {
        InstrumentConfig {
            eta: 0.35,
            signal: 0.01,
            background: 0.002,
            pulses: 1000,
            period: 100e-9,
            pulse_width: 270e-12,
            delta: 8e-12,
            c: 2.998e8,
        }
    }

    fn frame_from(n: usize, f: impl Fn(usize, usize) -> Vec<f64>) -> DetectionFrame {
        DetectionFrame::new(n, (0..n * n).map(|idx| f(idx / n, idx % n)).collect()).unwrap()
    }

    #[test]
    fn rom_of_uniform_neighbours() {
        let tau = 31e-9;
        let f = frame_from(3, |i, j| if (i, j) == (1, 1) { vec![] } else { vec![tau] });
        let rom: Array2<f64> = rom_times(&f);
        assert_eq!(rom[(1, 1)], tau);
    }

    #[test]
    fn rom_empty_neighbours_is_infinite() {
        let f = frame_from(3, |i, j| if (i, j) == (1, 1) { vec![5e-9] } else { vec![] });
        let rom: Array2<f64> = rom_times(&f);
        assert!(rom[(1, 1)].is_infinite());
        assert_eq!(rom[(0, 0)], 5e-9);
    }

    #[test]
    fn rom_even_pool_median() {
        let f = frame_from(3, |i, j| match (i, j) {
            (0, 0) => vec![1e-9, 2e-9],
            (2, 2) => vec![3e-9, 4e-9],
            _ => vec![],
        });
        let rom: Array2<f64> = rom_times(&f);
        assert!((rom[(1, 1)] - 2.5e-9).abs() < 1e-21);
    }

    #[test]
    fn zero_background_keeps_everything() {
        let mut c = cfg();
        c.background = 0.0;
        let f = frame_from(4, |i, j| vec![(i + j) as f64 * 1e-9, 50e-9]);
        let alpha = Array2::zeros((4, 4));
        let rom = rom_times(&f);
        let m = censor_detections(&f, &c, &alpha, &rom).unwrap();
        assert_eq!(m.total_kept(), f.total_detections());
    }

    #[test]
    fn zero_reflectivity_window_is_two_pulse_widths() {
        let c = cfg();
        let tau = 40e-9;
        let f = frame_from(3, |i, j| {
            if (i, j) == (1, 1) {
                vec![tau + 500e-12, tau - 560e-12, tau + 100e-12, 80e-9]
            } else {
                vec![tau]
            }
        });
        let alpha = Array2::zeros((3, 3));
        let m = censor_detections(&f, &c, &alpha, &rom_times(&f)).unwrap();
        assert_eq!(m.kept(1, 1), &[0, 2]);
        assert!(m.is_consistent_with(&f));
    }

    #[test]
    fn empty_pixels_and_infinite_rom() {
        let c = cfg();
        let f = frame_from(3, |i, j| if (i, j) == (1, 1) { vec![5e-9] } else { vec![] });
        let m = censor_detections(&f, &c, &Array2::zeros((3, 3)), &rom_times(&f)).unwrap();
        assert_eq!(m.total_kept(), 0);
    }

    #[test]
    fn threshold_grows_with_background() {
        let mut c = cfg();
        let mut prev = 0.0;
        for b in [1e-4, 1e-3, 1e-2, 1e-1] {
            c.background = b;
            let w = censor_threshold(&c, 0.5);
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn rejects_negative_reflectivity() {
        let f = frame_from(2, |_, _| vec![]);
        let mut a = Array2::zeros((2, 2));
        a[(0, 0)] = -1.0;
        assert!(censor_detections(&f, &cfg(), &a, &rom_times(&f)).is_err());
    }
}
