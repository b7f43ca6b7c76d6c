use crate::hnn::batch::BatchKernel;
use crate::hnn::tape_net::{collocation_grid, tape_loss_and_gradient};
use crate::hnn::{HnnError, NetworkParams, SystemSpec};
use crate::pruner::Mask;
use crate::scalar::Scalar;

/// Which route computes the per-step gradient. Both give the same numbers
/// up to summation order; the tape is kept as the reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientBackend {
    #[default]
    Batched,
    Tape,
}

/// Which iterate `train` returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Checkpoint {
    /// Parameters after the last update.
    Last,
    /// Parameters with the lowest loss seen during training.
    #[default]
    BestLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub epochs: usize,
    pub learning_rate: T,
    pub grid_points: usize,
    pub t_max: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    pub backend: GradientBackend,
    pub checkpoint: Checkpoint,
}

impl<T: Scalar> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            learning_rate: T::lit(8e-3),
            grid_points: 200,
            t_max: T::lit(4.0) * T::PI(),
            beta1: T::lit(0.999),
            beta2: T::lit(0.9999),
            epsilon: T::lit(1e-8),
            backend: GradientBackend::Batched,
            checkpoint: Checkpoint::BestLoss,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), HnnError> {
        let bad = |what: &str| Err(HnnError::InvalidConfig(what.to_string()));
        if self.grid_points < 2 {
            return bad("grid_points must be at least 2");
        }
        if !(self.t_max > T::zero()) {
            return bad("t_max must be positive");
        }
        if !(self.learning_rate > T::zero()) {
            return bad("learning_rate must be positive");
        }
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !unit(self.beta1) || !unit(self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > T::zero()) {
            return bad("adam epsilon must be positive");
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<T> {
        collocation_grid(self.grid_points, self.t_max)
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    b1_pow: T,
    b2_pow: T,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: T, beta1: T, beta2: T, eps: T) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            b1_pow: T::one(),
            b2_pow: T::one(),
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.b1_pow *= self.beta1;
        self.b2_pow *= self.beta2;
        let c1 = T::one() - self.b1_pow;
        let c2 = T::one() - self.b2_pow;
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    /// Loss before each update, one entry per epoch.
    pub loss_history: Vec<T>,
    /// Loss of the returned parameters.
    pub final_loss: T,
}

/// Adam on the residual loss. Gradients are multiplied by the mask before
/// the moment update, so pruned weights never move. Optimizer state starts
/// fresh on every call.
pub fn train<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    system: &SystemSpec<T>,
    config: &TrainConfig<T>,
) -> Result<TrainOutcome<T>, HnnError> {
    config.validate()?;
    if !mask.conforms(params.arch()) {
        return Err(HnnError::MaskMismatch);
    }
    if params.arch().output_dim != system.initial_state.len() {
        return Err(HnnError::SystemMismatch {
            outputs: params.arch().output_dim,
            dim: system.initial_state.len(),
        });
    }
    let grid = config.grid();
    let multiplier: Vec<T> = mask.param_multiplier(params.layout());
    let mut values = params.values().to_vec();
    let mut grad = vec![T::zero(); values.len()];
    let mut adam = Adam::new(
        values.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut kernel = BatchKernel::new(params.arch(), &grid)?;
    let mut scratch = params.clone();
    let mut best: Option<(T, Vec<T>)> = None;

    for epoch in 0..config.epochs {
        let loss = match config.backend {
            GradientBackend::Batched => {
                kernel.loss_and_gradient(&values, &multiplier, system, &mut grad)?
            }
            GradientBackend::Tape => {
                scratch.set_values(values.clone())?;
                let (loss, g) = tape_loss_and_gradient(&scratch, mask, system, &grid)?;
                grad.copy_from_slice(g.as_slice());
                loss
            }
        };
        if !loss.is_finite() {
            return Err(HnnError::Diverged { epoch });
        }
        history.push(loss);
        if config.checkpoint == Checkpoint::BestLoss && best.as_ref().map_or(true, |(b, _)| loss < *b) {
            match &mut best {
                Some((b, v)) => {
                    *b = loss;
                    v.copy_from_slice(&values);
                }
                None => best = Some((loss, values.clone())),
            }
        }
        for (g, &m) in grad.iter_mut().zip(&multiplier) {
            *g *= m;
        }
        adam.step(&mut values, &grad);
    }

    let mut final_loss = kernel.loss(&values, &multiplier, system)?;
    if let Some((b, v)) = best {
        if !(final_loss <= b) {
            final_loss = b;
            values = v;
        }
    }
    if !final_loss.is_finite() {
        return Err(HnnError::Diverged {
            epoch: config.epochs,
        });
    }
    let mut trained = params.clone();
    trained.set_values(values)?;
    Ok(TrainOutcome {
        params: trained,
        loss_history: history,
        final_loss,
    })
}

/// Network state estimates on the grid of `config`.
pub fn predict_trajectory<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    system: &SystemSpec<T>,
    grid: &[T],
) -> Result<Vec<Vec<T>>, HnnError> {
    let multiplier: Vec<T> = mask.param_multiplier(params.layout());
    BatchKernel::new(params.arch(), grid)?.trajectory(params.values(), &multiplier, &system.initial_state)
}
