//! L1-regularized least squares by cyclic coordinate descent.
//!
//! Each output column solves
//!
//! ```text
//! min_w  (1/2N)‖y − Xw − b‖² + α‖w‖₁
//! ```
//!
//! with an unpenalized intercept `b`. The `1/(2N)` scaling matters: `α` is
//! only comparable across libraries that use the same convention.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lstsq::{center, dot};
use super::{AffineMap, SolverError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub fit_intercept: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            max_iter: 1000,
            tol: 1e-6,
            fit_intercept: true,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SolverError::InvalidParameter(format!(
                "alpha must be ≥ 0, got {}",
                self.alpha
            )));
        }
        if self.max_iter == 0 {
            return Err(SolverError::InvalidParameter("max_iter must be ≥ 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(SolverError::InvalidParameter(format!(
                "tol must be ≥ 0, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

pub fn soft_threshold<F: Scalar>(x: F, threshold: F) -> F {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        F::zero()
    }
}

/// Coordinate-descent state for a single response column.
///
/// The residual `y − Xw` is maintained incrementally, so one sweep costs
/// `O(N·D)`.
#[derive(Debug, Clone)]
pub struct CoordinateDescent<'a, F> {
    /// Columns of the design, one row per feature.
    columns: ArrayView2<'a, F>,
    /// `‖x_j‖²/N` per column.
    curvature: Array1<F>,
    alpha: F,
    n: F,
    y_sq: F,
    w: Array1<F>,
    residual: Array1<F>,
}

impl<'a, F: Scalar> CoordinateDescent<'a, F> {
    /// `columns` is the transposed design (`D × N`); `y` the response.
    pub fn new(columns: ArrayView2<'a, F>, y: ArrayView1<'_, F>, alpha: F) -> Self {
        let n = F::from_usize_lossy(columns.ncols());
        let curvature = columns
            .rows()
            .into_iter()
            .map(|c| dot(c, c) / n)
            .collect();
        Self {
            curvature,
            alpha,
            n,
            y_sq: dot(y, y),
            w: Array1::zeros(columns.nrows()),
            residual: y.to_owned(),
            columns,
        }
    }

    pub fn coefficients(&self) -> &Array1<F> {
        &self.w
    }

    /// One cyclic pass over all coordinates; returns the largest coefficient
    /// change.
    pub fn sweep(&mut self) -> F {
        let mut max_change = F::zero();
        for j in 0..self.w.len() {
            let a = self.curvature[j];
            if a == F::zero() {
                continue;
            }
            let col = self.columns.row(j);
            let old = self.w[j];
            let rho = dot(col, self.residual.view()) / self.n + a * old;
            let new = soft_threshold(rho, self.alpha) / a;
            let delta = new - old;
            if delta != F::zero() {
                self.residual.scaled_add(-delta, &col);
                self.w[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        max_change
    }

    /// `(1/2N)‖r‖² + α‖w‖₁` at the current iterate.
    pub fn objective(&self) -> F {
        let rss = dot(self.residual.view(), self.residual.view());
        rss / (F::lit(2.0) * self.n) + self.alpha * self.w.iter().map(|v| v.abs()).sum::<F>()
    }

    /// Largest violation of the optimality conditions: `|g_j| ≤ α` for zero
    /// coefficients and `g_j = α·sign(w_j)` for active ones, with
    /// `g_j = x_jᵀr/N`.
    pub fn kkt_violation(&self) -> F {
        let mut worst = F::zero();
        for (j, col) in self.columns.rows().into_iter().enumerate() {
            if self.curvature[j] == F::zero() {
                continue;
            }
            let g = dot(col, self.residual.view()) / self.n;
            let w = self.w[j];
            let v = if w == F::zero() {
                (g.abs() - self.alpha).max(F::zero())
            } else {
                (g - self.alpha * w.signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// `‖y‖²/(2N)`, the objective at `w = 0`.
    pub fn null_objective(&self) -> F {
        self.y_sq / (F::lit(2.0) * self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_violation: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit<F> {
    pub map: AffineMap<F>,
    pub columns: Vec<ColumnDiagnostics>,
}

impl<F> LassoFit<F> {
    /// False when any output column hit `max_iter` with a KKT violation above
    /// `10·tol`; the map still holds the last iterate.
    pub fn converged(&self) -> bool {
        self.columns.iter().all(|c| c.converged)
    }
}

/// Fits one Lasso per output column of `y`, in parallel.
pub fn fit_lasso<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: ArrayView2<'_, F>,
    cfg: &LassoConfig,
) -> Result<LassoFit<F>, SolverError> {
    cfg.validate()?;
    let (n, d) = x.dim();
    if y.nrows() != n {
        return Err(SolverError::ShapeMismatch {
            expected: n,
            found: y.nrows(),
        });
    }
    if n < 2 {
        return Err(SolverError::TooFewSamples { n });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let (x_mean, x_work, y_mean, y_work) = if cfg.fit_intercept {
        let (xm, xc) = center(x);
        let (ym, yc) = center(y);
        (xm, xc, ym, yc)
    } else {
        (Array1::zeros(d), x.to_owned(), Array1::zeros(y.ncols()), y.to_owned())
    };
    if x_work.iter().all(|&v| v == F::zero()) {
        return Err(SolverError::DegenerateDesign);
    }
    // row j holds feature j contiguously
    let columns: Array2<F> = x_work.t().as_standard_layout().to_owned();
    let alpha = F::lit(cfg.alpha);
    let tol = F::lit(cfg.tol);
    let kkt_tol = F::lit(10.0 * cfg.tol);

    let solved: Vec<(Array1<F>, ColumnDiagnostics)> = (0..y.ncols())
        .into_par_iter()
        .map(|k| {
            let mut cd = CoordinateDescent::new(columns.view(), y_work.column(k), alpha);
            let mut sweeps = 0;
            let mut converged = false;
            while sweeps < cfg.max_iter {
                let change = cd.sweep();
                sweeps += 1;
                if change < tol && cd.kkt_violation() <= kkt_tol {
                    converged = true;
                    break;
                }
            }
            let kkt = cd.kkt_violation();
            let diag = ColumnDiagnostics {
                sweeps,
                converged: converged || kkt <= kkt_tol,
                kkt_violation: kkt.to_f64_lossy(),
                objective: cd.objective().to_f64_lossy(),
            };
            (cd.coefficients().clone(), diag)
        })
        .collect();

    let mut weights = Array2::zeros((d, y.ncols()));
    let mut diagnostics = Vec::with_capacity(y.ncols());
    for (k, (w, diag)) in solved.into_iter().enumerate() {
        weights.column_mut(k).assign(&w);
        diagnostics.push(diag);
    }
    let bias = &y_mean - &x_mean.dot(&weights);
    if diagnostics.iter().any(|c| !c.converged) {
        log::warn!("lasso did not converge within {} sweeps", cfg.max_iter);
    }
    Ok(LassoFit {
        map: AffineMap::new(weights, bias)?,
        columns: diagnostics,
    })
}

/// Smallest `α` for which the all-zero solution is optimal:
/// `max_j |x_jᵀ(y − ȳ)|/N` on centered columns.
pub fn alpha_max<F: Scalar>(x: ArrayView2<'_, F>, y: ArrayView1<'_, F>) -> F {
    let (_, xc) = center(x);
    let ym = y.mean().unwrap_or(F::zero());
    let yc = y.mapv(|v| v - ym);
    let n = F::from_usize_lossy(x.nrows());
    xc.columns()
        .into_iter()
        .map(|c| (dot(c, yc.view()) / n).abs())
        .fold(F::zero(), F::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fit_least_squares;
    use ndarray::Axis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    fn tight() -> LassoConfig {
        LassoConfig {
            tol: 1e-10,
            max_iter: 100_000,
            ..LassoConfig::default()
        }
    }

    #[test]
    fn zero_alpha_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian(120, 5, &mut rng);
        let y = gaussian(120, 3, &mut rng);
        let cfg = LassoConfig { alpha: 0.0, ..tight() };
        let lasso = fit_lasso(x.view(), y.view(), &cfg).unwrap();
        let ols = fit_least_squares(x.view(), y.view(), 0.0).unwrap();
        assert!(lasso.converged());
        for (a, b) in lasso.map.weights.iter().zip(ols.weights.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        for (a, b) in lasso.map.bias.iter().zip(ols.bias.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn one_dimensional_soft_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = 50;
            let mut x: Array1<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mean = x.mean().unwrap();
            x -= mean;
            let scale = (x.dot(&x) / n as f64).sqrt();
            x /= scale;
            let y: Array1<f64> = x.mapv(|v| 0.4 * v) + (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Array1<f64>>();
            let y = &y - y.mean().unwrap();
            let rho = x.dot(&y) / n as f64;
            let alpha = rng.random_range(0.0..0.6);
            let expected = rho.signum() * (rho.abs() - alpha).max(0.0);
            let cfg = LassoConfig { alpha, ..tight() };
            let fit = fit_lasso(
                x.view().insert_axis(Axis(1)),
                y.view().insert_axis(Axis(1)),
                &cfg,
            )
            .unwrap();
            assert!((fit.map.weights[[0, 0]] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn alpha_above_threshold_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian(60, 4, &mut rng) * 3.0 + 1.0;
        let y = gaussian(60, 1, &mut rng) + 2.0;
        // threshold from the plain definition, not from alpha_max()
        let n = 60.0;
        let ym = y.column(0).mean().unwrap();
        let threshold = x
            .columns()
            .into_iter()
            .map(|c| {
                let cm = c.mean().unwrap();
                (c.iter().zip(y.column(0)).map(|(a, b)| (a - cm) * (b - ym)).sum::<f64>() / n).abs()
            })
            .fold(0.0, f64::max);
        assert!((alpha_max(x.view(), y.column(0)) - threshold).abs() < 1e-12);
        let cfg = LassoConfig { alpha: threshold, ..LassoConfig::default() };
        let fit = fit_lasso(x.view(), y.view(), &cfg).unwrap();
        assert!(fit.map.weights.iter().all(|&w| w == 0.0));
        assert!((fit.map.bias[0] - ym).abs() < 1e-12);
        let below = LassoConfig { alpha: threshold * 0.99, ..LassoConfig::default() };
        let fit = fit_lasso(x.view(), y.view(), &below).unwrap();
        assert!(fit.map.weights.iter().any(|&w| w != 0.0));
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for trial in 0..10 {
            let x = gaussian(40, 6, &mut rng);
            let y = gaussian(40, 1, &mut rng);
            let (_, xc) = center(x.view());
            let (_, yc) = center(y.view());
            let cols = xc.t().to_owned();
            let mut cd = CoordinateDescent::new(cols.view(), yc.column(0), 0.05 * trial as f64);
            let mut prev = cd.objective();
            assert_eq!(prev, cd.null_objective());
            for _ in 0..50 {
                cd.sweep();
                let obj = cd.objective();
                assert!(obj <= prev + 1e-14, "{obj} > {prev}");
                prev = obj;
            }
        }
    }

    #[test]
    fn sparsity_is_monotone_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let x = gaussian(80, 10, &mut rng);
            let y = gaussian(80, 2, &mut rng);
            let mut prev = usize::MAX;
            for alpha in [0.001, 0.01, 0.05, 0.1, 0.3] {
                let fit = fit_lasso(x.view(), y.view(), &LassoConfig { alpha, ..tight() }).unwrap();
                let nnz = fit.map.weights.iter().filter(|&&w| w != 0.0).count();
                assert!(nnz <= prev);
                prev = nnz;
            }
        }
    }

    #[test]
    fn kkt_holds_at_default_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = gaussian(200, 12, &mut rng);
        let y = x.dot(&gaussian(12, 12, &mut rng)) + gaussian(200, 12, &mut rng) * 0.1;
        let cfg = LassoConfig::default();
        let fit = fit_lasso(x.view(), y.view(), &cfg).unwrap();
        assert!(fit.converged());
        for c in &fit.columns {
            assert!(c.kkt_violation <= 10.0 * cfg.tol);
        }
    }

    #[test]
    fn not_converged_is_a_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let base = gaussian(50, 1, &mut rng);
        let mut x = Array2::zeros((50, 4));
        for j in 0..4 {
            x.column_mut(j).assign(&(&base.column(0) + &(gaussian(50, 1, &mut rng).column(0).to_owned() * 1e-3)));
        }
        let y = gaussian(50, 1, &mut rng);
        let cfg = LassoConfig { alpha: 0.0, max_iter: 2, tol: 1e-12, fit_intercept: true };
        let fit = fit_lasso(x.view(), y.view(), &cfg).unwrap();
        assert!(!fit.converged());
        assert_eq!(fit.columns[0].sweeps, 2);
    }

    #[test]
    fn invalid_config() {
        let x = Array2::<f64>::ones((3, 1));
        let bad = LassoConfig { alpha: -1.0, ..LassoConfig::default() };
        assert!(matches!(fit_lasso(x.view(), x.view(), &bad), Err(SolverError::InvalidParameter(_))));
        let zero = LassoConfig::default();
        assert!(matches!(fit_lasso(x.view(), x.view(), &zero), Err(SolverError::DegenerateDesign)));
    }
}
