//! Reference trajectories by classical Runge-Kutta and the error metrics
//! measured against them.

use thiserror::Error;

use crate::hnn::Dynamics;
use crate::scalar::Scalar;

/// RK4 steps per grid interval for reference trajectories.
pub const REFERENCE_SUBSTEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegratorError {
    #[error("substeps must be at least 1")]
    NoSubsteps,
    #[error("time grid must be non-empty and strictly increasing")]
    BadGrid,
    #[error("state became non-finite near t = {time}")]
    Diverged { time: f64 },
    #[error("grid mismatch: {left} vs {right} points")]
    GridMismatch { left: usize, right: usize },
    #[error("state dimension mismatch at point {index}")]
    DimensionMismatch { index: usize },
    #[error("trajectory is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub system: String,
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Linear oscillator `x'' = -x`, the nonlinear oscillator without its
/// quartic term. Its exact solution makes it the convergence benchmark.
#[derive(Debug, Clone, Copy, Default)]
pub struct HarmonicOscillator;

impl<T: Scalar> Dynamics<T> for HarmonicOscillator {
    fn dim(&self) -> usize {
        2
    }

    fn rhs_into(&self, s: &[T], out: &mut [T]) {
        out[0] = s[1];
        out[1] = -s[0];
    }

    fn energy(&self, s: &[T]) -> T {
        T::lit(0.5) * (s[0] * s[0] + s[1] * s[1])
    }
}

fn rk4_step<T: Scalar, D: Dynamics<T> + ?Sized>(sys: &D, state: &mut [T], h: T, buf: &mut [Vec<T>; 5]) {
    let n = state.len();
    let half = T::lit(0.5);
    let [k1, k2, k3, k4, tmp] = buf;
    sys.rhs_into(state, k1);
    for i in 0..n {
        tmp[i] = state[i] + half * h * k1[i];
    }
    sys.rhs_into(tmp, k2);
    for i in 0..n {
        tmp[i] = state[i] + half * h * k2[i];
    }
    sys.rhs_into(tmp, k3);
    for i in 0..n {
        tmp[i] = state[i] + h * k3[i];
    }
    sys.rhs_into(tmp, k4);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    for i in 0..n {
        state[i] += sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
}

/// Integrate from `initial_state` at `grid[0]` and record the state at every
/// grid time, taking `substeps` equal RK4 steps per grid interval.
pub fn rk4_solve<T: Scalar, D: Dynamics<T> + ?Sized>(
    system: &D,
    name: &str,
    initial_state: &[T],
    grid: &[T],
    substeps: usize,
) -> Result<Trajectory<T>, IntegratorError> {
    if substeps == 0 {
        return Err(IntegratorError::NoSubsteps);
    }
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(IntegratorError::BadGrid);
    }
    let n = system.dim();
    let mut buf = [
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
    ];
    let mut state = initial_state.to_vec();
    let mut states = Vec::with_capacity(grid.len());
    states.push(state.clone());
    let sub = T::lit(substeps as f64);
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / sub;
        for _ in 0..substeps {
            rk4_step(system, &mut state, h, &mut buf);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(IntegratorError::Diverged {
                time: w[1].to_f64_lossy(),
            });
        }
        states.push(state.clone());
    }
    Ok(Trajectory {
        system: name.to_string(),
        times: grid.to_vec(),
        states,
    })
}

/// Mean over the grid of the Euclidean distance between states.
pub fn trajectory_error<T: Scalar>(states: &[Vec<T>], reference: &Trajectory<T>) -> Result<T, IntegratorError> {
    if states.len() != reference.states.len() {
        return Err(IntegratorError::GridMismatch {
            left: states.len(),
            right: reference.states.len(),
        });
    }
    if states.is_empty() {
        return Err(IntegratorError::Empty);
    }
    let mut total = T::zero();
    for (i, (a, b)) in states.iter().zip(&reference.states).enumerate() {
        if a.len() != b.len() {
            return Err(IntegratorError::DimensionMismatch { index: i });
        }
        let sq = a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        total += sq.sqrt();
    }
    Ok(total / T::lit(states.len() as f64))
}

/// `max_k |H(x_k) - H(x_0)|`.
pub fn energy_drift<T: Scalar, D: Dynamics<T> + ?Sized>(states: &[Vec<T>], system: &D) -> Result<T, IntegratorError> {
    let first = states.first().ok_or(IntegratorError::Empty)?;
    let e0 = system.energy(first);
    Ok(states
        .iter()
        .map(|s| (system.energy(s) - e0).abs())
        .fold(T::zero(), T::max))
}
