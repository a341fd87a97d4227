//! The trainable embedder: `layernorm(W · features + b)` over hashed features.

use super::{
    hashed_features, DenseVector, EncodeMode, Encoder, EncoderError, DEFAULT_HASH_SEED,
    DEFAULT_MAX_QUERY_CHARS, LAYER_NORM_EPS,
};

/// Mean and population standard deviation seen by [`layer_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNormStats {
    pub mean: f64,
    pub std: f64,
}

/// `(x - mean) / (std + eps)`. An all-constant input maps to zeros.
pub fn layer_norm(x: &[f64]) -> (Vec<f64>, LayerNormStats) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = std + LAYER_NORM_EPS;
    let y = x.iter().map(|v| (v - mean) / denom).collect();
    (y, LayerNormStats { mean, std })
}

/// Gradient of a scalar loss through [`layer_norm`], given `dL/dy`.
pub fn layer_norm_backward(x: &[f64], stats: LayerNormStats, grad_y: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let s = stats.std + LAYER_NORM_EPS;
    let g_mean = grad_y.iter().sum::<f64>() / n;
    let g_dot_c: f64 = grad_y
        .iter()
        .zip(x)
        .map(|(g, v)| g * (v - stats.mean))
        .sum();
    // d std / d x_j = (x_j - mean) / (n std); undefined at std == 0 where we take 0.
    let coupling = if stats.std > 0.0 {
        g_dot_c / (n * stats.std * s * s)
    } else {
        0.0
    };
    grad_y
        .iter()
        .zip(x)
        .map(|(g, v)| (g - g_mean) / s - (v - stats.mean) * coupling)
        .collect()
}

/// Cached intermediate values of one affine + layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LinearForward {
    pub pre: Vec<f64>,
    pub stats: LayerNormStats,
    pub output: Vec<f64>,
}

fn check_shapes(features: &[f64], weights: &[f64], bias: &[f64]) -> Result<usize, EncoderError> {
    let d = bias.len();
    if features.len() != d || weights.len() != d * d {
        return Err(EncoderError::Shape(format!(
            "features {} / weights {} / bias {} (expected d, d*d, d)",
            features.len(),
            weights.len(),
            d
        )));
    }
    Ok(d)
}

/// `layernorm(W · features + b)` with `W` row-major `d × d`.
pub fn linear_embed(
    features: &[f64],
    weights: &[f64],
    bias: &[f64],
) -> Result<LinearForward, EncoderError> {
    let d = check_shapes(features, weights, bias)?;
    let nonzero: Vec<usize> = (0..d).filter(|&j| features[j] != 0.0).collect();
    let pre: Vec<f64> = (0..d)
        .map(|i| {
            let row = &weights[i * d..(i + 1) * d];
            let mut acc = bias[i];
            for &j in &nonzero {
                acc += row[j] * features[j];
            }
            acc
        })
        .collect();
    let (output, stats) = layer_norm(&pre);
    Ok(LinearForward { pre, stats, output })
}

impl LinearForward {
    /// Accumulates `dL/dW` and `dL/db` for upstream gradient `grad_out` into `grad`.
    pub fn backward(&self, features: &[f64], grad_out: &[f64], grad: &mut LinearGrad) {
        let d = features.len();
        let dx = layer_norm_backward(&self.pre, self.stats, grad_out);
        let nonzero: Vec<usize> = (0..d).filter(|&j| features[j] != 0.0).collect();
        for (i, &g) in dx.iter().enumerate() {
            grad.bias[i] += g;
            if g == 0.0 {
                continue;
            }
            let row = &mut grad.weights[i * d..(i + 1) * d];
            for &j in &nonzero {
                row[j] += g * features[j];
            }
        }
    }
}

/// Gradient buffers matching one [`LinearEmbedder`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    pub fn zeros(dimension: usize) -> Self {
        LinearGrad {
            weights: vec![0.0; dimension * dimension],
            bias: vec![0.0; dimension],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|g| g * g).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|g| *g *= factor);
    }
}

/// Affine map parameters. Values are kept `f32`-representable so saved models
/// reproduce in-memory behaviour exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEmbedder {
    dimension: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearEmbedder {
    pub fn identity(dimension: usize) -> Result<Self, EncoderError> {
        if dimension <= 1 {
            return Err(EncoderError::InvalidDimension(dimension));
        }
        let mut weights = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            weights[i * dimension + i] = 1.0;
        }
        Ok(LinearEmbedder {
            dimension,
            weights,
            bias: vec![0.0; dimension],
        })
    }

    pub fn from_f32(dimension: usize, weights: &[f32], bias: &[f32]) -> Result<Self, EncoderError> {
        if dimension <= 1 {
            return Err(EncoderError::InvalidDimension(dimension));
        }
        if weights.len() != dimension * dimension || bias.len() != dimension {
            return Err(EncoderError::Shape(format!(
                "weights {} / bias {} for dimension {dimension}",
                weights.len(),
                bias.len()
            )));
        }
        if !weights.iter().chain(bias).all(|v| v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(LinearEmbedder {
            dimension,
            weights: weights.iter().map(|&v| f64::from(v)).collect(),
            bias: bias.iter().map(|&v| f64::from(v)).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_f32(&self) -> Vec<f32> {
        self.weights.iter().map(|&v| v as f32).collect()
    }

    pub fn bias_f32(&self) -> Vec<f32> {
        self.bias.iter().map(|&v| v as f32).collect()
    }

    pub fn forward(&self, features: &[f64]) -> Result<LinearForward, EncoderError> {
        linear_embed(features, &self.weights, &self.bias)
    }

    /// Plain SGD step; updated parameters are rounded to `f32`.
    pub fn apply_sgd(&mut self, grad: &LinearGrad, learning_rate: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w = f64::from((*w - learning_rate * g) as f32);
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b = f64::from((*b - learning_rate * g) as f32);
        }
    }
}

/// Query/passage encoder backed by trained [`LinearEmbedder`]s.
///
/// In shared mode one embedder encodes both sides until a frozen passage copy
/// is taken; in split mode the two sides always have their own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub query: LinearEmbedder,
    pub passage: Option<LinearEmbedder>,
    pub shared: bool,
    pub phase: u8,
    pub feature_seed: u64,
    pub max_query_chars: usize,
}

impl LinearEncoder {
    /// Identity-initialized encoder: starts out equal to the hashed encoder.
    pub fn identity(dimension: usize, shared: bool) -> Result<Self, EncoderError> {
        let query = LinearEmbedder::identity(dimension)?;
        let passage = (!shared).then(|| query.clone());
        Ok(LinearEncoder {
            query,
            passage,
            shared,
            phase: 1,
            feature_seed: DEFAULT_HASH_SEED,
            max_query_chars: DEFAULT_MAX_QUERY_CHARS,
        })
    }

    pub fn passage_embedder(&self) -> &LinearEmbedder {
        self.passage.as_ref().unwrap_or(&self.query)
    }

    pub fn embedder(&self, mode: EncodeMode) -> &LinearEmbedder {
        match mode {
            EncodeMode::Query => &self.query,
            EncodeMode::Passage => self.passage_embedder(),
        }
    }

    pub fn features(&self, text: &str) -> Result<Vec<f64>, EncoderError> {
        hashed_features(text, self.query.dimension(), self.feature_seed)
    }
}

impl Encoder for LinearEncoder {
    fn dimension(&self) -> usize {
        self.query.dimension()
    }

    fn max_query_chars(&self) -> usize {
        self.max_query_chars
    }

    fn encode_texts(
        &self,
        texts: &[String],
        mode: EncodeMode,
    ) -> Result<Vec<DenseVector>, EncoderError> {
        let embedder = self.embedder(mode);
        texts
            .iter()
            .map(|t| {
                let f = self.features(t)?;
                DenseVector::from_f64(&embedder.forward(&f)?.output)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{hashed_embed, Encoder, HashedEncoder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_over_hashed_features_equals_hashed_encoder() {
        let lin = LinearEncoder::identity(64, true).unwrap();
        let hashed = HashedEncoder::new(64, DEFAULT_HASH_SEED).unwrap();
        for text in ["who directed the film", "a b c", "", "e017 is r2 of e003"] {
            let t = vec![text.to_string()];
            assert_eq!(
                lin.encode_texts(&t, EncodeMode::Query).unwrap(),
                hashed.encode_texts(&t, EncodeMode::Query).unwrap()
            );
        }
    }

    #[test]
    fn identity_weights_give_layer_norm_of_features() {
        let f = vec![3.0, -1.0, 0.0, 2.0];
        let e = LinearEmbedder::identity(4).unwrap();
        assert_eq!(e.forward(&f).unwrap().output, layer_norm(&f).0);
    }

    #[test]
    fn zero_weights_give_zero_vector() {
        let out = linear_embed(&[1.0, 2.0, 3.0], &[0.0; 9], &[0.0; 3]).unwrap();
        assert_eq!(out.output, vec![0.0; 3]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(linear_embed(&[1.0, 2.0], &[0.0; 9], &[0.0; 3]), Err(EncoderError::Shape(_))));
        assert!(matches!(linear_embed(&[1.0; 3], &[0.0; 8], &[0.0; 3]), Err(EncoderError::Shape(_))));
    }

    #[test]
    fn split_mode_routes_passages_to_passage_side() {
        let mut enc = LinearEncoder::identity(16, false).unwrap();
        enc.passage.as_mut().unwrap().bias[0] = 5.0;
        let t = vec!["x y".to_string()];
        let q = enc.encode_texts(&t, EncodeMode::Query).unwrap();
        let p = enc.encode_texts(&t, EncodeMode::Passage).unwrap();
        assert_eq!(q[0], hashed_embed("x y", 16, 0).unwrap());
        assert_ne!(q, p);
    }

    #[test]
    fn sgd_keeps_parameters_f32_representable() {
        let mut e = LinearEmbedder::identity(4).unwrap();
        let mut g = LinearGrad::zeros(4);
        g.weights.iter_mut().for_each(|w| *w = 0.123456789);
        e.apply_sgd(&g, 0.01);
        assert!(e.weights().iter().all(|&w| f64::from(w as f32) == w));
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |x: &[f64]| layer_norm(x).0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let (_, stats) = layer_norm(&x);
            let analytic = layer_norm_backward(&x, stats, &w);
            for j in 0..6 {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let numeric = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((numeric - analytic[j]).abs() <= 1e-6 * (1.0 + numeric.abs()));
            }
        }
    }
}
