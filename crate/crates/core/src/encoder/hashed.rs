use super::{layer_norm, DenseVector, EncodeMode, Encoder, EncoderError, DEFAULT_MAX_QUERY_CHARS};
use crate::text::{fnv1a64, tokenize};

pub const DEFAULT_HASH_SEED: u64 = 0;

/// Signed feature-hashing counts of unigrams and bigrams, before normalization.
///
/// Each token (or space-joined bigram) is hashed with FNV-1a, XORed with `seed`;
/// bit 63 picks the sign and `hash % dimension` the bucket.
pub fn hashed_features(text: &str, dimension: usize, seed: u64) -> Result<Vec<f64>, EncoderError> {
    if dimension <= 1 {
        return Err(EncoderError::InvalidDimension(dimension));
    }
    let tokens = tokenize(text);
    let mut features = vec![0.0f64; dimension];
    let mut add = |bytes: &[u8]| {
        let h = fnv1a64(bytes) ^ seed;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        features[(h % dimension as u64) as usize] += sign;
    };
    for tok in &tokens {
        add(tok.as_bytes());
    }
    let mut bigram = String::new();
    for pair in tokens.windows(2) {
        bigram.clear();
        bigram.push_str(&pair[0]);
        bigram.push(' ');
        bigram.push_str(&pair[1]);
        add(bigram.as_bytes());
    }
    Ok(features)
}

/// Hashed unigram+bigram features followed by layer normalization.
pub fn hashed_embed(text: &str, dimension: usize, seed: u64) -> Result<DenseVector, EncoderError> {
    let features = hashed_features(text, dimension, seed)?;
    DenseVector::from_f64(&layer_norm(&features).0)
}

/// Untrained feature-hashing encoder; the same function serves queries and passages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedEncoder {
    dimension: usize,
    seed: u64,
    max_query_chars: usize,
}

impl HashedEncoder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self, EncoderError> {
        if dimension <= 1 {
            return Err(EncoderError::InvalidDimension(dimension));
        }
        Ok(HashedEncoder {
            dimension,
            seed,
            max_query_chars: DEFAULT_MAX_QUERY_CHARS,
        })
    }

    pub fn with_max_query_chars(mut self, max_query_chars: usize) -> Self {
        self.max_query_chars = max_query_chars;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl Encoder for HashedEncoder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn max_query_chars(&self) -> usize {
        self.max_query_chars
    }

    fn encode_texts(
        &self,
        texts: &[String],
        _mode: EncodeMode,
    ) -> Result<Vec<DenseVector>, EncoderError> {
        texts
            .iter()
            .map(|t| hashed_embed(t, self.dimension, self.seed))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::encoder::QueryInput;
    use proptest::prelude::*;

    fn stats(v: &DenseVector) -> (f64, f64) {
        let x = v.to_f64();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn empty_text_yields_zero_vector() {
        let v = hashed_embed("", 16, 0).unwrap();
        assert_eq!(v.values(), &[0.0; 16]);
    }

    #[test]
    fn bigrams_make_order_matter() {
        let ab = hashed_embed("a b", 64, 0).unwrap();
        let ba = hashed_embed("b a", 64, 0).unwrap();
        assert_ne!(ab, ba);
    }

    #[test]
    fn dimension_must_exceed_one() {
        assert!(matches!(hashed_embed("x", 1, 0), Err(EncoderError::InvalidDimension(1))));
        assert!(HashedEncoder::new(0, 0).is_err());
    }

    #[test]
    fn passage_encoding_is_deterministic_and_sized() {
        let enc = HashedEncoder::new(64, 7).unwrap();
        let p = Passage::new("x", "Title", "Some body text.");
        let a = enc.encode_passage(&p).unwrap();
        let b = enc.encode_passage(&p).unwrap();
        assert_eq!(a.dimension(), 64);
        assert!(a.values().iter().all(|v| v.is_finite()));
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn hop_one_query_equals_raw_text_encoding() {
        let enc = HashedEncoder::new(32, 3).unwrap();
        let q = enc.encode_query(&QueryInput::new("q", &[])).unwrap();
        assert_eq!(q, hashed_embed("q", 32, 3).unwrap());
    }

    #[test]
    fn prior_passage_changes_query_vector() {
        let enc = HashedEncoder::new(64, 0).unwrap();
        let p1 = Passage::new("1", "Paris", "capital of France");
        let p2 = Passage::new("2", "Rome", "capital of Italy");
        let a = enc.encode_query(&QueryInput::new("what city", &[&p1])).unwrap();
        let b = enc.encode_query(&QueryInput::new("what city", &[&p2])).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn seed_changes_buckets() {
        assert_ne!(hashed_embed("alpha beta", 64, 0).unwrap(), hashed_embed("alpha beta", 64, 99).unwrap());
    }

    proptest! {
        #[test]
        fn layer_norm_statistics(text in "[a-z ]{1,80}", dim in 8usize..=64) {
            prop_assume!(!crate::text::tokenize(&text).is_empty());
            let v = hashed_embed(&text, dim, 0).unwrap();
            let (mean, std) = stats(&v);
            if v.values().iter().any(|x| *x != 0.0) {
                prop_assert!(mean.abs() < 1e-4, "mean {mean}");
                prop_assert!((std - 1.0).abs() < 1e-4, "std {std}");
            }
        }
    }
}
