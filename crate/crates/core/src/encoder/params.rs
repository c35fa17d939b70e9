use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderConfig, EncoderError, Real, Tensor};

const INIT_STDDEV: f64 = 0.02;

/// One post-norm Transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub query_w: Tensor<T>,
    pub query_b: Tensor<T>,
    pub key_w: Tensor<T>,
    pub key_b: Tensor<T>,
    pub value_w: Tensor<T>,
    pub value_b: Tensor<T>,
    pub output_w: Tensor<T>,
    pub output_b: Tensor<T>,
    pub attn_norm_gain: Tensor<T>,
    pub attn_norm_bias: Tensor<T>,
    pub ff_in_w: Tensor<T>,
    pub ff_in_b: Tensor<T>,
    pub ff_out_w: Tensor<T>,
    pub ff_out_b: Tensor<T>,
    pub ff_norm_gain: Tensor<T>,
    pub ff_norm_bias: Tensor<T>,
}

/// Every trainable tensor of an encoder plus its two output heads.
///
/// Weight matrices are stored input-major (`in x out`) so a row batch is
/// projected as `x * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: EncoderConfig,
    pub token_embedding: Tensor<T>,
    pub segment_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub mlm_w: Tensor<T>,
    pub mlm_b: Tensor<T>,
    /// Relevance scorer `W` (one row of `hidden` weights).
    pub scorer_w: Tensor<T>,
    pub scorer_b: Tensor<T>,
}

/// Gradients share the parameter shape tree.
pub type Gradients<T = f32> = ModelParams<T>;

impl<T: Real> LayerParams<T> {
    fn zeros(d1: usize, d2: usize) -> Self {
        Self {
            query_w: Tensor::zeros(d1, d1),
            query_b: Tensor::zeros(1, d1),
            key_w: Tensor::zeros(d1, d1),
            key_b: Tensor::zeros(1, d1),
            value_w: Tensor::zeros(d1, d1),
            value_b: Tensor::zeros(1, d1),
            output_w: Tensor::zeros(d1, d1),
            output_b: Tensor::zeros(1, d1),
            attn_norm_gain: Tensor::zeros(1, d1),
            attn_norm_bias: Tensor::zeros(1, d1),
            ff_in_w: Tensor::zeros(d1, d2),
            ff_in_b: Tensor::zeros(1, d2),
            ff_out_w: Tensor::zeros(d2, d1),
            ff_out_b: Tensor::zeros(1, d1),
            ff_norm_gain: Tensor::zeros(1, d1),
            ff_norm_bias: Tensor::zeros(1, d1),
        }
    }

    fn tensors(&self) -> [&Tensor<T>; 16] {
        [
            &self.query_w,
            &self.query_b,
            &self.key_w,
            &self.key_b,
            &self.value_w,
            &self.value_b,
            &self.output_w,
            &self.output_b,
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.ff_in_w,
            &self.ff_in_b,
            &self.ff_out_w,
            &self.ff_out_b,
            &self.ff_norm_gain,
            &self.ff_norm_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor<T>; 16] {
        [
            &mut self.query_w,
            &mut self.query_b,
            &mut self.key_w,
            &mut self.key_b,
            &mut self.value_w,
            &mut self.value_b,
            &mut self.output_w,
            &mut self.output_b,
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.ff_in_w,
            &mut self.ff_in_b,
            &mut self.ff_out_w,
            &mut self.ff_out_b,
            &mut self.ff_norm_gain,
            &mut self.ff_norm_bias,
        ]
    }
}

const LAYER_TENSOR_NAMES: [&str; 16] = [
    "query_w",
    "query_b",
    "key_w",
    "key_b",
    "value_w",
    "value_b",
    "output_w",
    "output_b",
    "attn_norm_gain",
    "attn_norm_bias",
    "ff_in_w",
    "ff_in_b",
    "ff_out_w",
    "ff_out_b",
    "ff_norm_gain",
    "ff_norm_bias",
];

impl<T: Real> ModelParams<T> {
    /// All-zero tree shaped by `config`; the usual gradient accumulator.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d1 = config.hidden;
        Self {
            config: *config,
            token_embedding: Tensor::zeros(config.vocab_size, d1),
            segment_embedding: Tensor::zeros(2, d1),
            position_embedding: Tensor::zeros(config.max_positions, d1),
            layers: (0..config.layers).map(|_| LayerParams::zeros(d1, config.feedforward)).collect(),
            mlm_w: Tensor::zeros(d1, config.vocab_size),
            mlm_b: Tensor::zeros(1, config.vocab_size),
            scorer_w: Tensor::zeros(1, d1),
            scorer_b: Tensor::zeros(1, 1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    /// Tensors in canonical order: embeddings, then each layer, then the MLM
    /// head, then the scorer head. Checkpoints serialize in this order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.token_embedding, &self.segment_embedding, &self.position_embedding];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend([&self.mlm_w, &self.mlm_b, &self.scorer_w, &self.scorer_b]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.segment_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend([&mut self.mlm_w, &mut self.mlm_b, &mut self.scorer_w, &mut self.scorer_b]);
        out
    }

    /// Names parallel to [`ModelParams::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out: Vec<String> = ["token_embedding", "segment_embedding", "position_embedding"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.layers.len() {
            out.extend(LAYER_TENSOR_NAMES.iter().map(|n| format!("layer{i}.{n}")));
        }
        out.extend(["mlm_w", "mlm_b", "scorer_w", "scorer_b"].iter().map(|s| s.to_string()));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config);
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    pub fn fill(&mut self, value: T) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * *s;
            }
        }
    }

    /// Euclidean norm over every value, accumulated in `f64`.
    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Fresh parameters: weights from a normal truncated at two standard
/// deviations (stddev 0.02), biases zero, layer-norm gains one.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<ModelParams<f32>, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, INIT_STDDEV).expect("valid stddev");
    let mut draw = |t: &mut Tensor<f32>| {
        for x in t.data.iter_mut() {
            let v = loop {
                let v = normal.sample(&mut rng);
                if v.abs() <= 2.0 * INIT_STDDEV {
                    break v;
                }
            };
            *x = v as f32;
        }
    };

    let mut params = ModelParams::<f32>::zeros(config);
    draw(&mut params.token_embedding);
    draw(&mut params.segment_embedding);
    draw(&mut params.position_embedding);
    for layer in &mut params.layers {
        draw(&mut layer.query_w);
        draw(&mut layer.key_w);
        draw(&mut layer.value_w);
        draw(&mut layer.output_w);
        draw(&mut layer.ff_in_w);
        draw(&mut layer.ff_out_w);
        layer.attn_norm_gain.fill(1.0);
        layer.ff_norm_gain.fill(1.0);
    }
    draw(&mut params.mlm_w);
    draw(&mut params.scorer_w);
    Ok(params)
}
