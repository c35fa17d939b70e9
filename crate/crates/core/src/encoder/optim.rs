use serde::{Deserialize, Serialize};

use super::{EncoderError, Gradients, ModelParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam moment estimates over a flat list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model<T: Real>(params: &ModelParams<T>) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes)
    }

    /// One Adam update with global-norm clipping, at learning rate `lr`
    /// (callers apply their schedule). Returns the pre-clip gradient norm.
    pub fn step<T: Real>(&mut self, params: &mut [&mut [T]], grads: &[&[T]], hyper: &AdamConfig, lr: f64) -> Result<f64, EncoderError> {
        let ones = vec![1.0; params.len()];
        self.step_scaled(params, grads, hyper, lr, &ones)
    }

    /// As [`AdamState::step`], with tensor `i` updated at `lr * lr_scales[i]`.
    /// Clipping still uses the norm over all tensors.
    pub fn step_scaled<T: Real>(
        &mut self,
        params: &mut [&mut [T]],
        grads: &[&[T]],
        hyper: &AdamConfig,
        lr: f64,
        lr_scales: &[f64],
    ) -> Result<f64, EncoderError> {
        if params.len() != grads.len() || params.len() != self.m.len() || params.len() != lr_scales.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} parameter tensors, {} gradient tensors, {} moment tensors, {} learning-rate scales",
                params.len(),
                grads.len(),
                self.m.len(),
                lr_scales.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(EncoderError::ShapeMismatch(format!(
                    "tensor {i}: {} parameters, {} gradients",
                    p.len(),
                    g.len()
                )));
            }
        }
        let norm = grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| {
                let v = x.to_f64().unwrap();
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let scale = match hyper.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hyper.beta1.powi(t);
        let bc2 = 1.0 - hyper.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let lr = lr * lr_scales[i];
            for j in 0..p.len() {
                let gj = g[j].to_f64().unwrap() * scale;
                m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * gj;
                v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * gj * gj;
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + hyper.eps);
                p[j] -= T::lit(update);
            }
        }
        Ok(norm)
    }

    pub fn step_model<T: Real>(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &Gradients<T>,
        hyper: &AdamConfig,
        lr: f64,
    ) -> Result<f64, EncoderError> {
        if params.config != grads.config {
            return Err(EncoderError::ShapeMismatch("parameter and gradient configs differ".into()));
        }
        let mut ps: Vec<&mut [T]> = params.tensors_mut().into_iter().map(|t| t.data.as_mut_slice()).collect();
        let gs: Vec<&[T]> = grads.tensors().into_iter().map(|t| t.data.as_slice()).collect();
        self.step(&mut ps, &gs, hyper, lr)
    }

    /// Model-level [`AdamState::step_scaled`]; scales follow
    /// [`ModelParams::tensor_names`] order.
    pub fn step_model_scaled<T: Real>(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &Gradients<T>,
        hyper: &AdamConfig,
        lr: f64,
        lr_scales: &[f64],
    ) -> Result<f64, EncoderError> {
        if params.config != grads.config {
            return Err(EncoderError::ShapeMismatch("parameter and gradient configs differ".into()));
        }
        let mut ps: Vec<&mut [T]> = params.tensors_mut().into_iter().map(|t| t.data.as_mut_slice()).collect();
        let gs: Vec<&[T]> = grads.tensors().into_iter().map(|t| t.data.as_slice()).collect();
        self.step_scaled(&mut ps, &gs, hyper, lr, lr_scales)
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to zero at
/// `total`.
pub fn warmup_linear(step: usize, warmup: usize, total: usize, peak: f64) -> f64 {
    if total == 0 {
        return peak;
    }
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let remaining = total.saturating_sub(step) as f64;
    let span = total.saturating_sub(warmup).max(1) as f64;
    peak * (remaining / span).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(&[3]);
        let mut p = vec![1.0f64, -2.0, 0.5];
        let g = vec![0.0f64; 3];
        state
            .step(&mut [p.as_mut_slice()], &[g.as_slice()], &AdamConfig::default(), 1e-3)
            .unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn scalar_recurrence_by_hand() {
        let hyper = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        };
        let mut state = AdamState::new(&[1]);
        let mut p = vec![1.0f64];
        let g = 0.5f64;
        for _ in 0..2 {
            state.step(&mut [p.as_mut_slice()], &[&[g][..]], &hyper, hyper.lr).unwrap();
        }
        // step 1: m=0.05, v=0.00025, mhat=0.5, vhat=0.25 -> x -= 0.1*0.5/(0.5+1e-8)
        // step 2: m=0.095, v=0.00049975, mhat=0.5, vhat=0.25 -> same update again
        let u = 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - (1.0 - 2.0 * u)).abs() < 1e-8, "{}", p[0]);
    }

    #[test]
    fn clipping_rescales_to_clip_norm() {
        // With a single step, Adam's update is lr * g / (|g| + eps) per
        // coordinate, which hides the scale. Inspect the first moment instead.
        let hyper = AdamConfig {
            clip_norm: Some(1.0),
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[2]);
        let mut p = vec![0.0f64, 0.0];
        let g = vec![60.0f64, 80.0];
        let norm = state.step(&mut [p.as_mut_slice()], &[g.as_slice()], &hyper, 1e-3).unwrap();
        assert!((norm - 100.0).abs() < 1e-12);
        let clipped: Vec<f64> = state.m[0].iter().map(|m| m / (1.0 - hyper.beta1)).collect();
        let clipped_norm = clipped.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((clipped_norm - 1.0).abs() < 1e-6);
        assert!((clipped[0] - 0.6).abs() < 1e-9 && (clipped[1] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn scaled_step_multiplies_each_tensor_update() {
        let hyper = AdamConfig::default();
        let g = [vec![0.3f64, -0.2], vec![0.1f64]];
        let run = |scales: &[f64]| {
            let mut state = AdamState::new(&[2, 1]);
            let (mut a, mut b) = (vec![1.0f64, 1.0], vec![1.0f64]);
            state
                .step_scaled(
                    &mut [a.as_mut_slice(), b.as_mut_slice()],
                    &[g[0].as_slice(), g[1].as_slice()],
                    &hyper,
                    1e-3,
                    scales,
                )
                .unwrap();
            (a, b)
        };
        let (a1, b1) = run(&[1.0, 1.0]);
        let (a3, b0) = run(&[3.0, 0.0]);
        for (x1, x3) in a1.iter().zip(&a3) {
            assert!(((1.0 - x3) - 3.0 * (1.0 - x1)).abs() < 1e-12);
        }
        assert!(b1[0] < 1.0);
        assert_eq!(b0, vec![1.0]);
    }

    #[test]
    fn shape_mismatch() {
        let mut state = AdamState::new(&[2]);
        let mut p = vec![0.0f64; 3];
        let g = vec![0.0f64; 3];
        assert!(matches!(
            state.step(&mut [p.as_mut_slice()], &[g.as_slice()], &AdamConfig::default(), 1e-3),
            Err(EncoderError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn schedule_shape() {
        assert!((warmup_linear(0, 10, 100, 1.0) - 0.1).abs() < 1e-12);
        assert!((warmup_linear(9, 10, 100, 1.0) - 1.0).abs() < 1e-12);
        assert!((warmup_linear(55, 10, 100, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(warmup_linear(100, 10, 100, 1.0), 0.0);
    }
}
