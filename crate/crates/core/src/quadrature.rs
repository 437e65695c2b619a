//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct Quadrature<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QuadSettings<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_intervals: usize,
}

impl<T: Real> Default for QuadSettings<T> {
    fn default() -> Self {
        Self { abs_tol: T::lit(1e-14), rel_tol: T::lit(1e-10), max_intervals: 4000 }
    }
}

#[derive(Clone, Copy)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn kronrod<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Segment<T> {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let radius = half * (b - a);
    let fc = f(center);
    let mut kron = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for i in 0..7 {
        let dx = radius * T::lit(XGK[i]);
        let pair = f(center - dx) + f(center + dx);
        kron += pair * T::lit(WGK[i]);
        if i % 2 == 1 {
            gauss += pair * T::lit(WG[i / 2]);
        }
    }
    Segment { a, b, value: kron * radius, error: ((kron - gauss) * radius).abs() }
}

/// Integrates `f` over `[a, b]` until the summed error estimate drops below
/// `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<T: Real, F: Fn(T) -> T>(
    f: F,
    a: T,
    b: T,
    settings: QuadSettings<T>,
) -> Result<Quadrature<T>> {
    integrate_with_breaks(f, &[a, b], settings)
}

/// Like [`integrate`] but seeds the subdivision with the given breakpoints
/// (sorted, at least two). Useful when the integrand is concentrated.
pub fn integrate_with_breaks<T: Real, F: Fn(T) -> T>(
    f: F,
    breaks: &[T],
    settings: QuadSettings<T>,
) -> Result<Quadrature<T>> {
    assert!(breaks.len() >= 2, "need at least one interval");
    let mut segments: Vec<Segment<T>> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod(&f, w[0], w[1]))
        .collect();
    let mut evaluations = 15 * segments.len();
    if segments.is_empty() {
        return Ok(Quadrature { value: T::zero(), error: T::zero(), evaluations });
    }
    loop {
        let value: CompensatedSum<T> = segments.iter().map(|s| s.value).collect();
        let error: CompensatedSum<T> = segments.iter().map(|s| s.error).collect();
        let (value, error) = (value.value(), error.value());
        let target = settings.abs_tol.max(settings.rel_tol * value.abs());
        if error <= target {
            return Ok(Quadrature { value, error, evaluations });
        }
        if segments.len() >= settings.max_intervals {
            return Err(Error::Quadrature { achieved: error.as_f64(), requested: target.as_f64() });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc });
        let seg = segments.swap_remove(worst);
        let mid = T::lit(0.5) * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            return Err(Error::Quadrature { achieved: error.as_f64(), requested: target.as_f64() });
        }
        segments.push(kronrod(&f, seg.a, mid));
        segments.push(kronrod(&f, mid, seg.b));
        evaluations += 30;
    }
}
