use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Architecture hyperparameters of an encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Number of Transformer layers.
    pub layers: usize,
    /// Hidden size.
    pub hidden: usize,
    /// Feedforward size.
    pub feedforward: usize,
    /// Self-attention heads; must divide `hidden`.
    pub heads: usize,
    pub vocab_size: usize,
    /// Learned position embedding rows.
    pub max_positions: usize,
    #[serde(default)]
    pub dropout: f32,
}

impl EncoderConfig {
    pub fn new(layers: usize, hidden: usize, feedforward: usize, heads: usize, vocab_size: usize, max_positions: usize) -> Self {
        Self {
            layers,
            hidden,
            feedforward,
            heads,
            vocab_size,
            max_positions,
            dropout: 0.0,
        }
    }

    /// The 12-layer, 768-wide teacher shape with the uncased BERT vocabulary size.
    pub fn teacher_base() -> Self {
        Self::new(12, 768, 3072, 12, 30522, 512)
    }

    /// The 8-layer, 256-wide student shape.
    pub fn student_small() -> Self {
        Self::new(8, 256, 1024, 8, 30522, 512)
    }

    pub fn with_dropout(mut self, dropout: f32) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let positive = [
            ("hidden", self.hidden),
            ("feedforward", self.feedforward),
            ("heads", self.heads),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        // layers == 0 is allowed: an embeddings-only model is still well defined.
        for (name, value) in positive {
            if value == 0 {
                return Err(EncoderError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.hidden % self.heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Trainable parameter counts, split the way model sizes are usually quoted:
/// the encoder body on its own, and each output head as a separate line item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub body: u64,
    pub mlm_head: u64,
    pub scorer_head: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.body + self.mlm_head + self.scorer_head
    }
}

/// Closed-form parameter count for `config`.
pub fn count_params(config: &EncoderConfig) -> ParamCount {
    let n = config.layers as u64;
    let d1 = config.hidden as u64;
    let d2 = config.feedforward as u64;
    let v = config.vocab_size as u64;
    let p = config.max_positions as u64;

    let embeddings = v * d1 + p * d1 + 2 * d1;
    let attention = 4 * (d1 * d1 + d1);
    let norms = 2 * (2 * d1);
    let feedforward = d1 * d2 + d2 + d2 * d1 + d1;
    ParamCount {
        body: embeddings + n * (attention + norms + feedforward),
        mlm_head: d1 * v + v,
        scorer_head: d1 + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_indivisible_heads() {
        let c = EncoderConfig::new(1, 10, 16, 3, 20, 8);
        assert!(matches!(c.validate(), Err(EncoderError::InvalidConfig(_))));
    }

    #[test]
    fn embeddings_only_count() {
        // V*d1 + P*d1 + 2*d1 = 40 + 16 + 8
        let c = EncoderConfig::new(0, 4, 8, 1, 10, 4);
        assert_eq!(count_params(&c).body, 64);
        assert_eq!(count_params(&c).mlm_head, 50);
        assert_eq!(count_params(&c).scorer_head, 5);
    }

    #[test]
    fn table_shapes() {
        let teacher = count_params(&EncoderConfig::teacher_base()).body as f64;
        let student = count_params(&EncoderConfig::student_small()).body as f64;
        assert!((teacher / 110e6 - 1.0).abs() <= 0.02, "{teacher}");
        assert!((student / 14e6 - 1.0).abs() <= 0.05, "{student}");
    }
}
