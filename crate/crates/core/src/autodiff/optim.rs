use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Adam hyperparameters. `Default` is α = 1e-4, β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients by `clip_norm / g` when their global norm `g` exceeds `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], clip_norm: f64) -> f64 {
    assert!(clip_norm > 0.0, "clip_norm must be positive");
    let g = global_norm(grads);
    if g > clip_norm {
        let s = clip_norm / g;
        for t in grads.iter_mut() {
            t.scale(s);
        }
    }
    g
}

/// One bias-corrected Adam update. `l2_weight · θ` is added to each gradient first.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, l2_weight: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i] + l2_weight * pd[i];
            md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
            vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut RngStream) -> Tensor {
    assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
    let keep = 1.0 / (1.0 - p);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
    Tensor::new(shape.to_vec(), data).expect("sized from shape")
}

/// Minibatch training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub dropout: f64,
    pub l2_weight: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub max_len: usize,
    pub adam: AdamConfig,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Sentences per independent tape inside a batch. Fixed, so results do
    /// not depend on the number of worker threads.
    pub chunk_size: usize,
}

impl TrainHyper {
    /// The reference recipe: batch 60, dropout 0.2, L2 1e-8, clip 1.0, 10 epochs, length 60.
    pub fn paper() -> Self {
        Self {
            batch_size: 60,
            dropout: 0.2,
            l2_weight: 1e-8,
            clip_norm: 1.0,
            max_epochs: 10,
            max_len: 60,
            adam: AdamConfig::default(),
            patience: 3,
            chunk_size: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.l2_weight < 0.0 || self.clip_norm <= 0.0 || self.adam.learning_rate < 0.0 {
            return bad("l2_weight, clip_norm and learning_rate must be nonnegative (clip_norm positive)");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        Ok(())
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            max_len: 30,
            ..Self::paper()
        }
    }
}
