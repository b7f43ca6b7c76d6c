//! Batched evaluation of the residual loss and its parameter gradient.
//!
//! All `K` collocation times go through each layer as one matrix. Every
//! activation buffer has `2K` rows: rows `0..K` hold values and rows `K..2K`
//! hold the time derivatives (the tangent channel). A linear layer acts on
//! both halves with the same weights; the bias only enters the value rows.
//! The backward sweep carries adjoints for both halves, mirroring the
//! forward-over-reverse rule of the tape.

use crate::hnn::{ArchSpec, HnnError, Layout, SystemSpec};
use crate::scalar::Scalar;

pub struct BatchKernel<T> {
    layout: Layout,
    points: usize,
    gate: Vec<T>,
    gate_rate: Vec<T>,
    // inputs[l]: 2K x fan_in of layer l
    inputs: Vec<Vec<T>>,
    // pre-activation of the output layer: 2K x D
    output: Vec<T>,
    // sin / cos of hidden pre-activations (value rows only): K x width
    sin: Vec<Vec<T>>,
    cos: Vec<Vec<T>>,
    // tangent rows of hidden pre-activations: K x width
    pre_tangent: Vec<Vec<T>>,
    effective: Vec<T>,
    adj: Vec<T>,
    adj_in: Vec<T>,
    state: Vec<T>,
    state_dot: Vec<T>,
}

impl<T: Scalar> BatchKernel<T> {
    pub fn new(arch: &ArchSpec, grid: &[T]) -> Result<Self, HnnError> {
        if grid.is_empty() {
            return Err(HnnError::EmptyGrid);
        }
        let layout = Layout::new(arch);
        let k = grid.len();
        let shapes = layout.shapes().to_vec();
        let max_width = shapes.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(1);
        let mut inputs: Vec<Vec<T>> = shapes
            .iter()
            .map(|&(fan_in, _)| vec![T::zero(); 2 * k * fan_in])
            .collect();
        for (row, &t) in grid.iter().enumerate() {
            inputs[0][row] = t;
            inputs[0][k + row] = T::one();
        }
        let hidden = &shapes[..shapes.len() - 1];
        let d = arch.output_dim;
        Ok(Self {
            points: k,
            gate: grid.iter().map(|&t| T::one() - (-t).exp()).collect(),
            gate_rate: grid.iter().map(|&t| (-t).exp()).collect(),
            inputs,
            output: vec![T::zero(); 2 * k * d],
            sin: hidden.iter().map(|&(_, w)| vec![T::zero(); k * w]).collect(),
            cos: hidden.iter().map(|&(_, w)| vec![T::zero(); k * w]).collect(),
            pre_tangent: hidden.iter().map(|&(_, w)| vec![T::zero(); k * w]).collect(),
            effective: vec![T::zero(); layout.param_count()],
            adj: vec![T::zero(); 2 * k * max_width],
            adj_in: vec![T::zero(); 2 * k * max_width],
            state: vec![T::zero(); k * d],
            state_dot: vec![T::zero(); k * d],
            layout,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    fn check(&self, values: &[T], multiplier: &[T]) -> Result<(), HnnError> {
        let n = self.layout.param_count();
        for len in [values.len(), multiplier.len()] {
            if len != n {
                return Err(HnnError::ShapeMismatch {
                    expected: n,
                    found: len,
                });
            }
        }
        Ok(())
    }

    fn forward(&mut self, values: &[T], multiplier: &[T]) {
        for ((e, &v), &m) in self.effective.iter_mut().zip(values).zip(multiplier) {
            *e = v * m;
        }
        let k = self.points;
        let layers = self.layout.layer_count();
        for l in 0..layers {
            let (fan_in, fan_out) = self.layout.shapes()[l];
            let w = &self.effective[self.layout.weight_range(l)];
            let b = &self.effective[self.layout.bias_range(l)];
            let last = l + 1 == layers;
            let (head, tail) = self.inputs.split_at_mut(l + 1);
            let input = &head[l];
            let z: &mut [T] = if last { &mut self.output } else { &mut tail[0] };
            T::gemm(2 * k, fan_in, fan_out, T::one(), input, false, w, false, T::zero(), z);
            for row in z[..k * fan_out].chunks_exact_mut(fan_out) {
                for (zj, &bj) in row.iter_mut().zip(b) {
                    *zj += bj;
                }
            }
            if !last {
                let (sin, cos, tan) = (&mut self.sin[l], &mut self.cos[l], &mut self.pre_tangent[l]);
                let (vals, tans) = z.split_at_mut(k * fan_out);
                for idx in 0..k * fan_out {
                    let (s, c) = vals[idx].sin_cos();
                    sin[idx] = s;
                    cos[idx] = c;
                    tan[idx] = tans[idx];
                    vals[idx] = s;
                    tans[idx] = c * tan[idx];
                }
            }
        }
        self.fill_state();
    }

    fn fill_state(&mut self) {
        let k = self.points;
        let d = self.state.len() / k;
        for row in 0..k {
            let (g, gr) = (self.gate[row], self.gate_rate[row]);
            for j in 0..d {
                let n = self.output[row * d + j];
                let nt = self.output[(k + row) * d + j];
                self.state[row * d + j] = g * n;
                self.state_dot[row * d + j] = gr * n + g * nt;
            }
        }
    }

    /// Loss only.
    pub fn loss(&mut self, values: &[T], multiplier: &[T], system: &SystemSpec<T>) -> Result<T, HnnError> {
        self.check(values, multiplier)?;
        self.forward(values, multiplier);
        Ok(self.residuals(system, false))
    }

    /// Mean squared residual, and (when `seed_adjoint`) the output adjoint in
    /// `self.adj`.
    fn residuals(&mut self, system: &SystemSpec<T>, seed_adjoint: bool) -> T {
        let k = self.points;
        let d = system.initial_state.len();
        let scale = T::lit(2.0) / T::lit(k as f64);
        let mut total = T::zero();
        let mut x = vec![T::zero(); d];
        let mut f = vec![T::zero(); d];
        let mut cot = vec![T::zero(); d];
        let mut back = vec![T::zero(); d];
        for row in 0..k {
            for j in 0..d {
                x[j] = system.initial_state[j] + self.state[row * d + j];
            }
            crate::hnn::Dynamics::rhs_into(system, &x, &mut f);
            for j in 0..d {
                let r = self.state_dot[row * d + j] - f[j];
                total += r * r;
                cot[j] = scale * r;
            }
            if seed_adjoint {
                system.rhs_vjp(&x, &cot, &mut back);
                let (g, gr) = (self.gate[row], self.gate_rate[row]);
                for j in 0..d {
                    // d/dx of the residual is -J^T, d/dxdot is the identity
                    let xbar = -back[j];
                    let xdbar = cot[j];
                    self.adj[row * d + j] = g * xbar + gr * xdbar;
                    self.adj[(k + row) * d + j] = g * xdbar;
                }
            }
        }
        total / T::lit(k as f64)
    }

    /// Loss and gradient in canonical parameter order. The gradient is with
    /// respect to the raw (unmasked) parameters, so masked weights receive
    /// exactly zero.
    pub fn loss_and_gradient(
        &mut self,
        values: &[T],
        multiplier: &[T],
        system: &SystemSpec<T>,
        grad: &mut [T],
    ) -> Result<T, HnnError> {
        self.check(values, multiplier)?;
        if grad.len() != values.len() {
            return Err(HnnError::ShapeMismatch {
                expected: values.len(),
                found: grad.len(),
            });
        }
        if system.initial_state.len() != self.state.len() / self.points {
            return Err(HnnError::SystemMismatch {
                outputs: self.state.len() / self.points,
                dim: system.initial_state.len(),
            });
        }
        self.forward(values, multiplier);
        let loss = self.residuals(system, true);
        let k = self.points;
        for l in (0..self.layout.layer_count()).rev() {
            let (fan_in, fan_out) = self.layout.shapes()[l];
            let wr = self.layout.weight_range(l);
            let g = &self.adj[..2 * k * fan_out];
            T::gemm(
                fan_in,
                2 * k,
                fan_out,
                T::one(),
                &self.inputs[l],
                true,
                g,
                false,
                T::zero(),
                &mut grad[wr.clone()],
            );
            for (slot, &m) in grad[wr.clone()].iter_mut().zip(&multiplier[wr.clone()]) {
                *slot *= m;
            }
            let br = self.layout.bias_range(l);
            let bias = &mut grad[br];
            bias.iter_mut().for_each(|b| *b = T::zero());
            for row in g[..k * fan_out].chunks_exact(fan_out) {
                for (b, &v) in bias.iter_mut().zip(row) {
                    *b += v;
                }
            }
            if l == 0 {
                break;
            }
            // adjoint of this layer's input = adjoint of the previous
            // hidden activation
            T::gemm(
                2 * k,
                fan_out,
                fan_in,
                T::one(),
                g,
                false,
                &self.effective[wr],
                true,
                T::zero(),
                &mut self.adj_in[..2 * k * fan_in],
            );
            let (sin, cos, tan) = (&self.sin[l - 1], &self.cos[l - 1], &self.pre_tangent[l - 1]);
            let (a_val, a_tan) = self.adj_in[..2 * k * fan_in].split_at(k * fan_in);
            let (z_val, z_tan) = self.adj[..2 * k * fan_in].split_at_mut(k * fan_in);
            for idx in 0..k * fan_in {
                z_val[idx] = cos[idx] * a_val[idx] - sin[idx] * tan[idx] * a_tan[idx];
                z_tan[idx] = cos[idx] * a_tan[idx];
            }
        }
        Ok(loss)
    }

    /// State estimates `x(t_k)` (initial state included) at every grid time.
    pub fn trajectory(
        &mut self,
        values: &[T],
        multiplier: &[T],
        initial_state: &[T],
    ) -> Result<Vec<Vec<T>>, HnnError> {
        self.check(values, multiplier)?;
        self.forward(values, multiplier);
        let d = initial_state.len();
        Ok(self
            .state
            .chunks_exact(d)
            .map(|row| row.iter().zip(initial_state).map(|(&n, &x0)| x0 + n).collect())
            .collect())
    }
}
