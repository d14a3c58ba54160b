use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::Scalar;

/// `x ↦ xᵀW + b` with `W: d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap<F> {
    pub weights: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> AffineMap<F> {
    pub fn new(weights: Array2<F>, bias: Array1<F>) -> Result<Self, SolverError> {
        if weights.ncols() != bias.len() {
            return Err(SolverError::ShapeMismatch {
                expected: weights.ncols(),
                found: bias.len(),
            });
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        Ok(Self { weights, bias })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.ncols()
    }

    /// `XW + 1bᵀ` for `X: N × d_in`.
    pub fn apply(&self, x: ArrayView2<'_, F>) -> Result<Array2<F>, SolverError> {
        if x.ncols() != self.d_in() {
            return Err(SolverError::ShapeMismatch {
                expected: self.d_in(),
                found: x.ncols(),
            });
        }
        let mut out = x.dot(&self.weights);
        out += &self.bias.view().insert_axis(Axis(0));
        Ok(out)
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn compose(&self, inner: &AffineMap<F>) -> Result<AffineMap<F>, SolverError> {
        if inner.d_out() != self.d_in() {
            return Err(SolverError::ShapeMismatch {
                expected: self.d_in(),
                found: inner.d_out(),
            });
        }
        Ok(AffineMap {
            weights: inner.weights.dot(&self.weights),
            bias: inner.bias.dot(&self.weights) + &self.bias,
        })
    }

    pub fn cast<G: Scalar>(&self) -> AffineMap<G> {
        AffineMap {
            weights: self.weights.mapv(|v| G::lit(v.to_f64_lossy())),
            bias: self.bias.mapv(|v| G::lit(v.to_f64_lossy())),
        }
    }
}

/// On-disk form of an [`AffineMap`] (`*.map.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_in × d_out`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    #[serde(default)]
    pub source: String,
    #[serde(default)]
    pub training_meta: serde_json::Value,
}

impl MapFile {
    pub fn from_map<F: Scalar>(
        map: &AffineMap<F>,
        source: impl Into<String>,
        training_meta: serde_json::Value,
    ) -> Self {
        Self {
            d_in: map.d_in(),
            d_out: map.d_out(),
            weights: map.weights.iter().map(|v| v.to_f64_lossy()).collect(),
            bias: map.bias.iter().map(|v| v.to_f64_lossy()).collect(),
            source: source.into(),
            training_meta,
        }
    }

    pub fn to_map<F: Scalar>(&self) -> Result<AffineMap<F>, SolverError> {
        if self.weights.len() != self.d_in * self.d_out {
            return Err(SolverError::ShapeMismatch {
                expected: self.d_in * self.d_out,
                found: self.weights.len(),
            });
        }
        let weights = Array2::from_shape_vec(
            (self.d_in, self.d_out),
            self.weights.iter().map(|&v| F::lit(v)).collect(),
        )
        .expect("length checked");
        AffineMap::new(weights, self.bias.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        fs::write(path, json)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_leaves_input() {
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        assert_eq!(AffineMap::identity(2).apply(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let map = AffineMap::new(Array2::zeros((3, 2)), array![0.5, -1.0]).unwrap();
        let out = map.apply(Array2::ones((4, 3)).view()).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.0]);
        }
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = AffineMap::new(random(5, 4, &mut rng), random(1, 4, &mut rng).row(0).to_owned()).unwrap();
        let g = AffineMap::new(random(4, 3, &mut rng), random(1, 3, &mut rng).row(0).to_owned()).unwrap();
        let x = random(20, 5, &mut rng);
        let seq = g.apply(f.apply(x.view()).unwrap().view()).unwrap();
        let composed = g.compose(&f).unwrap().apply(x.view()).unwrap();
        // direct multiplication, independent of compose()
        let mut direct = Array2::<f64>::zeros((20, 3));
        for n in 0..20 {
            for k in 0..3 {
                let mut acc = g.bias[k];
                for m in 0..4 {
                    let mut h = f.bias[m];
                    for d in 0..5 {
                        h += x[[n, d]] * f.weights[[d, m]];
                    }
                    acc += h * g.weights[[m, k]];
                }
                direct[[n, k]] = acc;
            }
        }
        for ((a, b), c) in seq.iter().zip(composed.iter()).zip(direct.iter()) {
            assert!((a - b).abs() < 1e-9 && (a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_detected() {
        let map = AffineMap::<f64>::identity(3);
        assert!(matches!(
            map.apply(Array2::zeros((2, 4)).view()),
            Err(SolverError::ShapeMismatch { expected: 3, found: 4 })
        ));
        assert!(map.compose(&AffineMap::identity(2)).is_err());
    }

    #[test]
    fn map_file_round_trip() {
        let map = AffineMap::new(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], array![0.1, 0.2, 0.3]).unwrap();
        let file = MapFile::from_map(&map, "xlsr-layer17", serde_json::json!({"alpha": 0.01}));
        assert_eq!(file.weights, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let json = serde_json::to_string(&file).unwrap();
        let back: MapFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_map::<f64>().unwrap(), map);
    }
}
