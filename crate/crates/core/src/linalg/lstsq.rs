use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{AffineMap, SolverError};
use crate::Scalar;

/// Column means and the centered copy of `x`.
pub(crate) fn center<F: Scalar>(x: ArrayView2<'_, F>) -> (Array1<F>, Array2<F>) {
    let mean = x
        .mean_axis(Axis(0))
        .unwrap_or_else(|| Array1::zeros(x.ncols()));
    let centered = &x - &mean.view().insert_axis(Axis(0));
    (mean, centered)
}

/// Lower-triangular Cholesky factor `L` with `A = LLᵀ`. Returns `None` when a
/// pivot falls below `tol`.
pub(crate) fn cholesky<F: Scalar>(a: &Array2<F>, tol: F) -> Option<Array2<F>> {
    let n = a.nrows();
    let mut l = Array2::<F>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > tol) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Solves `LLᵀ X = B` in place of `B`.
pub(crate) fn cholesky_solve<F: Scalar>(l: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let n = l.nrows();
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    x
}

/// Trace of the centered Gram matrix divided by the dimension: the mean
/// per-column sum of squares. Used to scale ridge penalties.
pub fn mean_column_energy<F: Scalar>(x: ArrayView2<'_, F>) -> F {
    let (_, xc) = center(x);
    let trace: F = xc.iter().map(|&v| v * v).sum();
    trace / F::from_usize_lossy(x.ncols().max(1))
}

/// Ridge regression with an unpenalized intercept.
///
/// Minimizes `‖Y − XW − 1bᵀ‖²_F + ridge·‖W‖²_F` through the centered normal
/// equations, a Cholesky factorization and one step of iterative refinement.
pub fn fit_least_squares<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: ArrayView2<'_, F>,
    ridge: F,
) -> Result<AffineMap<F>, SolverError> {
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
    if !(ridge >= F::zero()) || !ridge.is_finite() {
        return Err(SolverError::InvalidParameter(format!("ridge must be ≥ 0, got {ridge}")));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let (x_mean, xc) = center(x);
    let (y_mean, yc) = center(y);
    let mut gram = xc.t().dot(&xc);
    let max_diag = gram.diag().fold(F::zero(), |m, &v| m.max(v));
    for i in 0..d {
        gram[[i, i]] += ridge;
    }
    let rhs = xc.t().dot(&yc);
    let tol = F::epsilon() * F::from_usize_lossy(d.max(1) * 16) * max_diag.max(F::min_positive_value());
    let l = cholesky(&gram, tol).ok_or(SolverError::SingularDesign)?;
    let mut w = cholesky_solve(&l, &rhs);
    let residual = &rhs - &gram.dot(&w);
    w += &cholesky_solve(&l, &residual);
    let bias = &y_mean - &x_mean.dot(&w);
    AffineMap::new(w, bias)
}

/// `‖Xcᵀ(Yc − XcW) − ridge·W‖_F`, the gradient norm of
/// the ridge objective at `map`.
pub fn ridge_gradient_norm<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: ArrayView2<'_, F>,
    ridge: F,
    map: &AffineMap<F>,
) -> F {
    let (_, xc) = center(x);
    let (_, yc) = center(y);
    let resid = &yc - &xc.dot(&map.weights);
    let grad = xc.t().dot(&resid) - &map.weights * ridge;
    grad.iter().map(|&v| v * v).sum::<F>().sqrt()
}

pub(crate) fn dot<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    a.iter().zip(b.iter()).map(|(&p, &q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
        a.iter().map(|&v| v * v).sum::<f64>().sqrt()
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
    }

    #[test]
    fn identity_targets_give_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = gaussian(40, 6, &mut rng);
        let map = fit_least_squares(x.view(), x.view(), 0.0).unwrap();
        for ((i, j), &v) in map.weights.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-8);
        }
        assert!(map.bias.iter().all(|b| b.abs() < 1e-8));
    }

    #[test]
    fn planted_solution_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(500, 10, &mut rng);
        let w_true = gaussian(10, 3, &mut rng);
        let b_true = gaussian(1, 3, &mut rng).row(0).to_owned();
        let y = x.dot(&w_true) + &b_true.view().insert_axis(Axis(0));
        let map = fit_least_squares(x.view(), y.view(), 0.0).unwrap();
        for (a, b) in map.weights.iter().zip(w_true.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in map.bias.iter().zip(b_true.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let g = ridge_gradient_norm(x.view(), y.view(), 0.0, &map);
        assert!(g <= 1e-6 * (1.0 + frobenius(y.view())));
    }

    #[test]
    fn huge_ridge_collapses_to_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(100, 5, &mut rng);
        let y = gaussian(100, 2, &mut rng) + 3.0;
        let map = fit_least_squares(x.view(), y.view(), 1e12).unwrap();
        assert!(frobenius(map.weights.view()) < 1e-4);
        let means = y.mean_axis(Axis(0)).unwrap();
        for (b, m) in map.bias.iter().zip(means.iter()) {
            assert!((b - m).abs() < 1e-4);
        }
    }

    #[test]
    fn rank_deficient_design_is_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = gaussian(30, 4, &mut rng);
        let c0 = x.column(0).to_owned();
        x.column_mut(3).assign(&(&c0 * 2.0));
        let y = gaussian(30, 1, &mut rng);
        assert!(matches!(
            fit_least_squares(x.view(), y.view(), 0.0),
            Err(SolverError::SingularDesign)
        ));
        assert!(fit_least_squares(x.view(), y.view(), 1e-3).is_ok());
    }

    #[test]
    fn translation_of_inputs_moves_only_the_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(80, 4, &mut rng);
        let y = gaussian(80, 3, &mut rng);
        let shifted = &x + &ndarray::array![10.0, -3.0, 0.5, 100.0].insert_axis(Axis(0));
        let a = fit_least_squares(x.view(), y.view(), 0.1).unwrap();
        let b = fit_least_squares(shifted.view(), y.view(), 0.1).unwrap();
        for (p, q) in a.weights.iter().zip(b.weights.iter()) {
            assert!((p - q).abs() < 1e-6);
        }
        let pa = a.apply(x.view()).unwrap();
        let pb = b.apply(shifted.view()).unwrap();
        for (p, q) in pa.iter().zip(pb.iter()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn too_few_samples() {
        let x = Array2::<f64>::zeros((1, 2));
        assert!(matches!(
            fit_least_squares(x.view(), x.view(), 0.0),
            Err(SolverError::TooFewSamples { n: 1 })
        ));
    }

    #[test]
    fn single_precision_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(200, 4, &mut rng).mapv(|v| v as f32);
        let y = x.dot(&ndarray::array![[1.0f32], [2.0], [-1.0], [0.5]]);
        let map = fit_least_squares(x.view(), y.view(), 0.0).unwrap();
        assert!((map.weights[[1, 0]] - 2.0).abs() < 1e-3);
    }
}
