//! Image-quality metrics.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::model::{InstrumentConfig, Scene};
use crate::scalar::{CompensatedSum, Real};

fn check_dims<T>(a: &Array2<T>, b: &Array2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Mean squared difference.
pub fn mse<T: Real>(reference: &Array2<T>, estimate: &Array2<T>) -> Result<T> {
    check_dims(reference, estimate)?;
    let mut sum = CompensatedSum::new();
    Zip::from(reference).and(estimate).for_each(|&a, &b| sum.add((a - b) * (a - b)));
    Ok(sum.value() / T::lit(reference.len() as f64))
}

/// `10 log₁₀(max α² / MSE)` with the peak taken from `reference`;
/// `+∞` when the images agree exactly.
pub fn psnr<T: Real>(reference: &Array2<T>, estimate: &Array2<T>) -> Result<T> {
    let err = mse(reference, estimate)?;
    let peak = reference.iter().fold(T::zero(), |m, &a| m.max(a * a));
    if !(peak > T::zero()) {
        return Err(Error::Contract("PSNR needs a reference with a non-zero peak".into()));
    }
    if err == T::zero() {
        return Ok(T::infinity());
    }
    Ok(T::lit(10.0) * (peak / err).log10())
}

pub fn rmse<T: Real>(reference: &Array2<T>, estimate: &Array2<T>) -> Result<T> {
    Ok(mse(reference, estimate)?.sqrt())
}

/// Scene-averaged `ηαS/B`; `+∞` without background.
pub fn sbr<T: Real>(scene: &Scene<T>, cfg: &InstrumentConfig<T>) -> T {
    if cfg.background == T::zero() {
        return T::infinity();
    }
    let sum: CompensatedSum<T> = scene.alpha.iter().copied().collect();
    let mean = sum.value() / T::lit(scene.alpha.len() as f64);
    cfg.eta * mean * cfg.signal / cfg.background
}
