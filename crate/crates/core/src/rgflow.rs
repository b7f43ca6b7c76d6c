//! Flow observables of iterative magnitude pruning.
//!
//! `M_i(n)` is the share of total unmasked weight magnitude held by layer `i`
//! after `n` pruning rounds. Consecutive ratios `lambda_i(n) = M_i(n) /
//! M_i(n-1)` are read as eigenvalues of the pruning map, and writing
//! `lambda = l^sigma` with the per-round coarse-graining factor `l` gives the
//! scale-free exponent `sigma_i`. A layer is relevant when `sigma_i > 0`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::hnn::NetworkParams;
use crate::pruner::Mask;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RgFlowError {
    #[error("all unmasked weights are zero; magnitude fractions are undefined")]
    DegenerateNetwork,
    #[error("mask does not conform to the parameters")]
    MaskMismatch,
    #[error("need at least {needed} flow entries, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("coarse-graining factor must exceed 1 (got {0} at step {1})")]
    BadScale(f64, usize),
    #[error("flow entries have inconsistent layer counts")]
    Ragged,
}

/// `M_i`: unmasked `|w|` summed per layer over the network total. Biases are
/// excluded.
pub fn layer_magnitude_fraction<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
) -> Result<Vec<T>, RgFlowError> {
    if !mask.conforms(params.arch()) {
        return Err(RgFlowError::MaskMismatch);
    }
    let sums: Vec<T> = (0..mask.layer_count())
        .map(|l| {
            params
                .layer_weights(l)
                .iter()
                .zip(mask.layer(l))
                .filter(|(_, &keep)| keep)
                .fold(T::zero(), |acc, (&w, _)| acc + w.abs())
        })
        .collect();
    magnitude_shares(&sums)
}

/// Normalize per-layer magnitude sums into shares.
pub fn magnitude_shares<T: Scalar>(sums: &[T]) -> Result<Vec<T>, RgFlowError> {
    let total = sums.iter().fold(T::zero(), |a, &b| a + b);
    if !(total > T::zero()) {
        return Err(RgFlowError::DegenerateNetwork);
    }
    Ok(sums.iter().map(|&s| s / total).collect())
}

/// `lambda_i(n) = M_i(n) / M_i(n-1)` for each consecutive pair. A zero
/// denominator (fully pruned layer) yields `None`.
pub fn eigenvalue_sequence<T: Scalar>(flow: &[Vec<T>]) -> Result<Vec<Vec<Option<T>>>, RgFlowError> {
    if flow.len() < 2 {
        return Err(RgFlowError::TooShort {
            needed: 2,
            got: flow.len(),
        });
    }
    let width = flow[0].len();
    if flow.iter().any(|m| m.len() != width) {
        return Err(RgFlowError::Ragged);
    }
    Ok(flow
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(&before, &after)| (before != T::zero()).then(|| after / before))
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport<T> {
    /// `sigma_i(n) = ln lambda_i(n) / ln l(n)`; `None` where `lambda` is
    /// missing or non-positive.
    pub per_step: Vec<Vec<Option<T>>>,
    /// Mean over the included steps; `None` when a layer has no usable step.
    pub mean: Vec<Option<T>>,
    /// Number of steps that entered the mean.
    pub steps_used: usize,
}

/// Exponents per step, and their mean over the steps flagged in `include`
/// (typically those before any layer reaches its density floor).
pub fn sigma_exponents<T: Scalar>(
    lambdas: &[Vec<Option<T>>],
    scales: &[T],
    include: &[bool],
) -> Result<SigmaReport<T>, RgFlowError> {
    if scales.len() != lambdas.len() || include.len() != lambdas.len() {
        return Err(RgFlowError::Ragged);
    }
    let width = lambdas.first().map_or(0, Vec::len);
    let mut per_step = Vec::with_capacity(lambdas.len());
    for (n, (row, &l)) in lambdas.iter().zip(scales).enumerate() {
        if !(l > T::one()) {
            return Err(RgFlowError::BadScale(l.to_f64_lossy(), n));
        }
        if row.len() != width {
            return Err(RgFlowError::Ragged);
        }
        let ln_l = l.ln();
        per_step.push(
            row.iter()
                .map(|lam| lam.filter(|&v| v > T::zero()).map(|v| v.ln() / ln_l))
                .collect::<Vec<_>>(),
        );
    }
    let mean = (0..width)
        .map(|i| {
            let vals: Vec<T> = per_step
                .iter()
                .zip(include)
                .filter(|(_, &inc)| inc)
                .filter_map(|(row, _)| row[i])
                .collect();
            (!vals.is_empty()).then(|| vals.iter().fold(T::zero(), |a, &b| a + b) / T::lit(vals.len() as f64))
        })
        .collect();
    Ok(SigmaReport {
        per_step,
        mean,
        steps_used: include.iter().filter(|&&b| b).count(),
    })
}

/// One pruning round of the flow table.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRow<T> {
    pub iteration: usize,
    pub density: f64,
    pub fractions: Vec<T>,
    /// Eigenvalue and exponent of the step into this iteration (absent for
    /// iteration 0).
    pub lambda: Vec<Option<T>>,
    pub sigma: Vec<Option<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowObservables<T> {
    pub rows: Vec<FlowRow<T>>,
    pub sigma: SigmaReport<T>,
}

/// Input to [`flow_observables`]: one entry per IMP iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint<T> {
    pub density: f64,
    pub fractions: Vec<T>,
    /// Coarse-graining factor of the step into this iteration.
    pub scale: Option<f64>,
    /// Whether some layer sits at its density floor at this iteration.
    pub floor_bound: bool,
}

/// Assemble the full table. The mean exponent uses the steps whose target
/// iteration has no layer at its floor.
pub fn flow_observables<T: Scalar>(points: &[FlowPoint<T>]) -> Result<FlowObservables<T>, RgFlowError> {
    let flow: Vec<Vec<T>> = points.iter().map(|p| p.fractions.clone()).collect();
    let lambdas = eigenvalue_sequence(&flow)?;
    let mut scales = Vec::with_capacity(lambdas.len());
    for (n, p) in points.iter().enumerate().skip(1) {
        let l = p.scale.ok_or(RgFlowError::BadScale(f64::NAN, n - 1))?;
        scales.push(T::lit(l));
    }
    let include: Vec<bool> = points.iter().skip(1).map(|p| !p.floor_bound).collect();
    let sigma = sigma_exponents(&lambdas, &scales, &include)?;
    let width = flow[0].len();
    let rows = points
        .iter()
        .enumerate()
        .map(|(n, p)| FlowRow {
            iteration: n,
            density: p.density,
            fractions: p.fractions.clone(),
            lambda: if n == 0 { vec![None; width] } else { lambdas[n - 1].clone() },
            sigma: if n == 0 { vec![None; width] } else { sigma.per_step[n - 1].clone() },
        })
        .collect();
    Ok(FlowObservables { rows, sigma })
}

fn cell<T: Scalar>(v: Option<T>) -> String {
    v.map(|x| format!("{}", x.to_f64_lossy())).unwrap_or_default()
}

impl<T: Scalar> FlowObservables<T> {
    pub fn layer_count(&self) -> usize {
        self.rows.first().map_or(0, |r| r.fractions.len())
    }

    /// `iteration,density,M_1..M_L,lambda_1..lambda_L,sigma_1..sigma_L`.
    pub fn to_csv(&self) -> String {
        let l = self.layer_count();
        let mut out = String::from("iteration,density");
        for prefix in ["M", "lambda", "sigma"] {
            for i in 1..=l {
                let _ = write!(out, ",{prefix}_{i}");
            }
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{},{}", row.iteration, row.density);
            for m in &row.fractions {
                let _ = write!(out, ",{}", m.to_f64_lossy());
            }
            for v in row.lambda.iter().chain(&row.sigma) {
                let _ = write!(out, ",{}", cell(*v));
            }
            out.push('\n');
        }
        out
    }
}
