//! The network, ansatz and residual loss expressed on the scalar tape.
//!
//! This is the reference route for gradients; the batched kernel in
//! [`super::batch`] must agree with it.

use crate::diffengine::{GradientVector, Tape, Var};
use crate::hnn::{HnnError, NetworkParams, SystemSpec};
use crate::pruner::Mask;
use crate::scalar::Scalar;

/// Network parameters lifted onto a tape, weights already multiplied by the
/// mask.
pub struct TapeNetwork {
    shapes: Vec<(usize, usize)>,
    weights: Vec<Vec<Var>>,
    biases: Vec<Vec<Var>>,
}

impl TapeNetwork {
    /// Registers every parameter with the tape in canonical order, so the
    /// tape gradient lines up with the flat parameter vector.
    pub fn lift<T: Scalar>(
        tape: &mut Tape<T>,
        params: &NetworkParams<T>,
        mask: &Mask,
    ) -> Result<Self, HnnError> {
        if !mask.conforms(params.arch()) {
            return Err(HnnError::MaskMismatch);
        }
        let layout = params.layout();
        let shapes = layout.shapes().to_vec();
        let mut weights = Vec::with_capacity(shapes.len());
        let mut biases = Vec::with_capacity(shapes.len());
        for (l, bits) in (0..shapes.len()).map(|l| (l, mask.layer(l))) {
            let w = params.layer_weights(l);
            let lifted: Vec<Var> = w
                .iter()
                .zip(bits)
                .map(|(&v, &keep)| {
                    let p = tape.lift_param(v);
                    let m = tape.constant(if keep { T::one() } else { T::zero() });
                    tape.mul(p, m)
                })
                .collect();
            weights.push(lifted);
            biases.push(params.layer_biases(l).iter().map(|&b| tape.lift_param(b)).collect());
        }
        Ok(Self {
            shapes,
            weights,
            biases,
        })
    }

    /// Raw network outputs at input `t`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, t: Var) -> Vec<Var> {
        let last = self.shapes.len() - 1;
        let mut act = vec![t];
        for (l, &(fan_in, fan_out)) in self.shapes.iter().enumerate() {
            let w = &self.weights[l];
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let mut z = self.biases[l][j];
                for (i, &a) in act.iter().enumerate().take(fan_in) {
                    let term = tape.mul(a, w[i * fan_out + j]);
                    z = tape.add(z, term);
                }
                next.push(if l == last { z } else { tape.sin(z) });
            }
            act = next;
        }
        act
    }
}

/// `x(t) = x0 + (1 - e^{-t}) N(t)`, componentwise.
pub fn apply_ansatz<T: Scalar>(
    tape: &mut Tape<T>,
    raw: &[Var],
    t: Var,
    initial_state: &[T],
) -> Vec<Var> {
    let one = tape.constant(T::one());
    let neg_t = tape.neg(t);
    let decay = tape.exp(neg_t);
    let gate = tape.sub(one, decay);
    raw.iter()
        .zip(initial_state)
        .map(|(&n, &x0)| {
            let c = tape.constant(x0);
            let g = tape.mul(gate, n);
            tape.add(c, g)
        })
        .collect()
}

/// `K` equally spaced times on `[0, t_max]`, endpoints included.
pub fn collocation_grid<T: Scalar>(points: usize, t_max: T) -> Vec<T> {
    if points == 1 {
        return vec![T::zero()];
    }
    let denom = T::lit((points - 1) as f64);
    (0..points)
        .map(|k| t_max * T::lit(k as f64) / denom)
        .collect()
}

/// Mean squared residual of Hamilton's equations over the grid, built on a
/// fresh tape. Returns the tape and the loss node.
pub fn residual_loss_tape<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    system: &SystemSpec<T>,
    grid: &[T],
) -> Result<(Tape<T>, Var), HnnError> {
    if grid.is_empty() {
        return Err(HnnError::EmptyGrid);
    }
    if params.arch().output_dim != system.initial_state.len() {
        return Err(HnnError::SystemMismatch {
            outputs: params.arch().output_dim,
            dim: system.initial_state.len(),
        });
    }
    let mut tape = Tape::new();
    let net = TapeNetwork::lift(&mut tape, params, mask)?;
    let mut terms = Vec::with_capacity(grid.len());
    for &tk in grid {
        let t = tape.lift_input(tk);
        let raw = net.forward(&mut tape, t);
        let state = apply_ansatz(&mut tape, &raw, t, &system.initial_state);
        let deriv: Vec<Var> = state.iter().map(|&s| tape.derivative(s)).collect();
        for r in system.residual_terms(&mut tape, &state, &deriv) {
            terms.push(tape.mul(r, r));
        }
    }
    let total = tape.sum(&terms);
    let k = tape.constant(T::lit(grid.len() as f64));
    let loss = tape.div(total, k)?;
    Ok((tape, loss))
}

/// Loss value and canonical-order gradient through the tape.
pub fn tape_loss_and_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    system: &SystemSpec<T>,
    grid: &[T],
) -> Result<(T, GradientVector<T>), HnnError> {
    let (tape, loss) = residual_loss_tape(params, mask, system, grid)?;
    let grad = tape.reverse(loss)?;
    Ok((tape.value(loss), grad))
}
