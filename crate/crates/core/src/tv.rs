//! Anisotropic total variation with reflexive (Neumann) boundaries and its
//! proximal operator, solved on the dual by fast gradient projection.

use ndarray::Array2;

use crate::scalar::{CompensatedSum, Real};

/// Default stopping rule for the prox: duality gap `≤ 1e-8 ‖v‖²`.
pub const DEFAULT_GAP_TOL: f64 = 1e-8;
const DEFAULT_MAX_ITERS: usize = 20_000;
const GAP_CHECK_EVERY: usize = 5;

/// `Σ |u[i,j+1] − u[i,j]| + Σ |u[i+1,j] − u[i,j]|`.
pub fn tv_seminorm<T: Real>(image: &Array2<T>) -> T {
    let (rows, cols) = image.dim();
    let mut acc = CompensatedSum::new();
    for i in 0..rows {
        for j in 0..cols {
            let v = image[(i, j)];
            if j + 1 < cols {
                acc.add((image[(i, j + 1)] - v).abs());
            }
            if i + 1 < rows {
                acc.add((image[(i + 1, j)] - v).abs());
            }
        }
    }
    acc.value()
}

/// Result of one prox evaluation.
#[derive(Clone, Debug)]
pub struct ProxOutcome<T> {
    pub image: Array2<T>,
    pub gap: T,
    pub iterations: usize,
}

/// Reusable prox solver. Keeps the dual field between calls so that a
/// sequence of nearby problems (as inside a proximal-gradient loop) starts warm.
#[derive(Clone, Debug)]
pub struct TvProx<T> {
    rows: usize,
    cols: usize,
    px: Vec<T>,
    py: Vec<T>,
    pub gap_tol: T,
    pub max_iters: usize,
}

impl<T: Real> TvProx<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            px: vec![T::zero(); rows * cols],
            py: vec![T::zero(); rows * cols],
            gap_tol: T::lit(DEFAULT_GAP_TOL),
            max_iters: DEFAULT_MAX_ITERS,
        }
    }

    pub fn reset(&mut self) {
        self.px.iter_mut().for_each(|p| *p = T::zero());
        self.py.iter_mut().for_each(|p| *p = T::zero());
    }

    /// `u = v − w Dᵀ p`.
    fn primal(&self, v: &[T], w: T, px: &[T], py: &[T], u: &mut [T]) {
        let (r, c) = (self.rows, self.cols);
        for i in 0..r {
            for j in 0..c {
                let k = i * c + j;
                let mut div = T::zero();
                if j + 1 < c {
                    div -= px[k];
                }
                if j > 0 {
                    div += px[k - 1];
                }
                if i + 1 < r {
                    div -= py[k];
                }
                if i > 0 {
                    div += py[k - c];
                }
                u[k] = v[k] - w * div;
            }
        }
    }

    fn gap(&self, v: &[T], u: &[T], w: T) -> T {
        let (r, c) = (self.rows, self.cols);
        let mut primal = CompensatedSum::new();
        let mut dual = CompensatedSum::new();
        for k in 0..r * c {
            let d = u[k] - v[k];
            primal.add(T::lit(0.5) * d * d);
            dual.add(T::lit(0.5) * (v[k] * v[k] - u[k] * u[k]));
            let (i, j) = (k / c, k % c);
            if j + 1 < c {
                primal.add(w * (u[k + 1] - u[k]).abs());
            }
            if i + 1 < r {
                primal.add(w * (u[k + c] - u[k]).abs());
            }
        }
        primal.value() - dual.value()
    }

    /// Solves `min_u ½‖u − v‖² + weight · TV(u)`.
    pub fn prox(&mut self, v: &Array2<T>, weight: T) -> ProxOutcome<T> {
        assert_eq!(v.dim(), (self.rows, self.cols), "prox image has the wrong shape");
        if weight <= T::zero() {
            return ProxOutcome { image: v.clone(), gap: T::zero(), iterations: 0 };
        }
        let (r, c) = (self.rows, self.cols);
        let n = r * c;
        // TV is shift invariant, so work on the zero-mean image: same
        // minimiser up to the shift, same duality gap, better conditioned.
        let shift = v.iter().copied().sum::<T>() / T::lit(n as f64);
        let v: Vec<T> = v.iter().map(|x| *x - shift).collect();
        let norm2: T = v.iter().map(|x| *x * *x).sum();
        let tol = self.gap_tol * norm2.max(T::min_positive_value());
        let step = T::one() / (T::lit(8.0) * weight);

        let mut qx = self.px.clone();
        let mut qy = self.py.clone();
        let mut u = vec![T::zero(); n];
        let mut t = T::one();
        let mut gap = T::infinity();
        let mut last_gap = T::infinity();
        let mut iterations = 0;

        self.primal(&v, weight, &self.px, &self.py, &mut u);
        if self.gap(&v, &u, weight) <= tol {
            u.iter_mut().for_each(|x| *x += shift);
            return ProxOutcome { image: Array2::from_shape_vec((r, c), u).expect("shape"), gap: T::zero(), iterations };
        }
        while iterations < self.max_iters {
            iterations += 1;
            self.primal(&v, weight, &qx, &qy, &mut u);
            let t_next = T::lit(0.5) * (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt());
            let momentum = (t - T::one()) / t_next;
            for k in 0..n {
                let (i, j) = (k / c, k % c);
                let nx = if j + 1 < c { (qx[k] + step * (u[k + 1] - u[k])).max(-T::one()).min(T::one()) } else { T::zero() };
                let ny = if i + 1 < r { (qy[k] + step * (u[k + c] - u[k])).max(-T::one()).min(T::one()) } else { T::zero() };
                qx[k] = nx + momentum * (nx - self.px[k]);
                qy[k] = ny + momentum * (ny - self.py[k]);
                self.px[k] = nx;
                self.py[k] = ny;
            }
            t = t_next;
            if iterations % GAP_CHECK_EVERY == 0 {
                self.primal(&v, weight, &self.px, &self.py, &mut u);
                gap = self.gap(&v, &u, weight);
                if gap <= tol {
                    break;
                }
                // Restart momentum when it stops paying off.
                if gap > last_gap {
                    qx.copy_from_slice(&self.px);
                    qy.copy_from_slice(&self.py);
                    t = T::one();
                }
                last_gap = gap;
            }
        }
        self.primal(&v, weight, &self.px, &self.py, &mut u);
        u.iter_mut().for_each(|x| *x += shift);
        ProxOutcome { image: Array2::from_shape_vec((r, c), u).expect("shape"), gap, iterations }
    }
}

/// One-shot [`TvProx::prox`] from a cold start.
pub fn tv_prox<T: Real>(image: &Array2<T>, weight: T) -> Array2<T> {
    let (r, c) = image.dim();
    TvProx::new(r, c).prox(image, weight).image
}
