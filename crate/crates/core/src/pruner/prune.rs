use std::cmp::Ordering;

use crate::hnn::NetworkParams;
use crate::pruner::{Mask, PruneError};
use crate::scalar::Scalar;

/// Which weights compete in one pruning round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PruneScope {
    /// One ranking over every layer.
    Global,
    /// Only this layer (0-indexed) is pruned.
    SingleLayer(usize),
    /// Each layer ranked and pruned on its own at the same rate.
    AllLayersIndependently,
}

/// How the per-round removal count is rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Rounding {
    /// `floor(p * count)`.
    #[default]
    Floor,
    /// `round(p * count)`, halves away from zero.
    Nearest,
}

impl Rounding {
    pub fn apply(self, rate: f64, count: usize) -> usize {
        let x = rate * count as f64;
        // 0.05 * 2500 must count as exactly 125
        let x = x + 1e-9 * x.abs().max(1.0);
        match self {
            Rounding::Floor => x.floor() as usize,
            Rounding::Nearest => x.round() as usize,
        }
    }
}

/// Smallest number of weights a layer keeps under a density floor.
pub fn floor_count(floor: f64, size: usize) -> usize {
    let x = floor * size as f64;
    ((x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize).min(size)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOutcome {
    pub mask: Mask,
    pub removed: usize,
    /// Nothing was eligible: every layer in scope sits at its floor or has
    /// no unmasked weights.
    pub empty_scope: bool,
}

/// Mask out the smallest-magnitude unmasked weights in scope.
///
/// Per round, `rounding(rate * count)` weights go, where `count` is the
/// number of unmasked weights in scope that live in layers above their
/// floor. Ties in magnitude break by canonical `(layer, row, column)` order.
/// A layer never drops below `floor_count(floor, size)`. Biases are never
/// touched. The input mask is left unchanged.
pub fn magnitude_prune<T: Scalar>(
    params: &NetworkParams<T>,
    mask: &Mask,
    rate: f64,
    scope: PruneScope,
    floor: f64,
    rounding: Rounding,
) -> Result<PruneOutcome, PruneError> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(PruneError::InvalidRate(rate));
    }
    if !(0.0..1.0).contains(&floor) {
        return Err(PruneError::InvalidFloor(floor));
    }
    if !mask.conforms(params.arch()) {
        return Err(PruneError::MaskMismatch);
    }
    let layers = mask.layer_count();
    let groups: Vec<Vec<usize>> = match scope {
        PruneScope::Global => vec![(0..layers).collect()],
        PruneScope::SingleLayer(i) if i < layers => vec![vec![i]],
        PruneScope::SingleLayer(i) => return Err(PruneError::LayerOutOfRange(i)),
        PruneScope::AllLayersIndependently => (0..layers).map(|i| vec![i]).collect(),
    };
    let keep_min: Vec<usize> = (0..layers).map(|l| floor_count(floor, mask.layer_total(l))).collect();
    let mut remaining: Vec<usize> = (0..layers).map(|l| mask.layer_unmasked(l)).collect();
    let mut next = mask.clone();
    let mut removed = 0;
    let mut any_eligible = false;

    for group in groups {
        let active: Vec<usize> = group.into_iter().filter(|&l| remaining[l] > keep_min[l]).collect();
        // (|w|, layer, position)
        let mut candidates: Vec<(T, usize, usize)> = Vec::new();
        for &l in &active {
            for (pos, (&w, &keep)) in params.layer_weights(l).iter().zip(mask.layer(l)).enumerate() {
                if keep {
                    candidates.push((w.abs(), l, pos));
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        any_eligible = true;
        let target = rounding.apply(rate, candidates.len());
        if target == 0 {
            continue;
        }
        candidates.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut taken = 0;
        for &(_, l, pos) in &candidates {
            if taken == target {
                break;
            }
            if remaining[l] > keep_min[l] {
                next.layer_mut(l)[pos] = false;
                remaining[l] -= 1;
                taken += 1;
            }
        }
        removed += taken;
    }
    Ok(PruneOutcome {
        mask: next,
        removed,
        empty_scope: !any_eligible,
    })
}

/// Reset every weight and bias to its initialization. Optimizer state lives
/// inside each training call, so nothing else needs clearing.
pub fn rewind<T: Scalar>(params: &NetworkParams<T>) -> NetworkParams<T> {
    params.rewound()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hnn::ArchSpec;

    fn tiny(weights: &[f64]) -> (NetworkParams<f64>, Mask) {
        // 1 -> n -> 1 network with the given first-layer weights
        let n = weights.len();
        let arch = ArchSpec::new(vec![n], 1).unwrap();
        let mut init = vec![0.0; 3 * n + 1];
        init[..n].copy_from_slice(weights);
        // large output weights so they never compete
        init[2 * n..3 * n].iter_mut().for_each(|v| *v = 10.0);
        let p = NetworkParams::from_init(&arch, init, 0).unwrap();
        let m = Mask::full(&arch);
        (p, m)
    }

    #[test]
    fn smallest_magnitude_goes_first() {
        let (p, m) = tiny(&[0.5, -0.1, 0.3]);
        let out = magnitude_prune(&p, &m, 1.0 / 3.0, PruneScope::SingleLayer(0), 0.0, Rounding::Floor).unwrap();
        assert_eq!(out.mask.layer(0), &[true, false, true]);
        assert_eq!(out.removed, 1);
        assert_eq!(m, Mask::full(p.arch()), "input mask untouched");
    }

    #[test]
    fn zero_count_is_a_no_op() {
        let (p, m) = tiny(&[0.5, -0.1, 0.3]);
        let out = magnitude_prune(&p, &m, 0.2, PruneScope::SingleLayer(0), 0.0, Rounding::Floor).unwrap();
        assert_eq!(out.mask, m);
        assert_eq!(out.removed, 0);
        assert!(!out.empty_scope);
    }

    #[test]
    fn ties_break_in_canonical_order() {
        let (p, m) = tiny(&[0.2, -0.2, 0.2, 0.9]);
        let out = magnitude_prune(&p, &m, 0.5, PruneScope::SingleLayer(0), 0.0, Rounding::Floor).unwrap();
        assert_eq!(out.mask.layer(0), &[false, false, true, true]);
    }

    #[test]
    fn single_layer_five_percent_of_2500() {
        let arch = ArchSpec::with_outputs(2);
        let p = NetworkParams::<f64>::init(&arch, 5);
        let m = Mask::full(&arch);
        let out = magnitude_prune(&p, &m, 0.05, PruneScope::SingleLayer(1), 0.1, Rounding::Floor).unwrap();
        assert_eq!(out.mask.layer_unmasked(1), 2375);
        assert_eq!(out.mask.layer_unmasked(0), 50);
        assert_eq!(out.mask.layer_unmasked(2), 100);
    }

    #[test]
    fn floors_stop_pruning() {
        let (p, m) = tiny(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        let mut mask = m;
        for _ in 0..50 {
            let out = magnitude_prune(&p, &mask, 0.5, PruneScope::SingleLayer(0), 0.2, Rounding::Floor).unwrap();
            mask = out.mask;
            if out.empty_scope {
                break;
            }
        }
        // 10 -> 5 -> 3 -> 2, then nothing is eligible
        assert_eq!(mask.layer_unmasked(0), 2);
        assert_eq!(mask.layer(0)[8..], [true, true]);
        let out = magnitude_prune(&p, &mask, 0.5, PruneScope::SingleLayer(0), 0.2, Rounding::Floor).unwrap();
        assert!(out.empty_scope);
    }

    #[test]
    fn floor_counts() {
        assert_eq!(floor_count(0.05, 2500), 125);
        assert_eq!(floor_count(0.05, 50), 3);
        assert_eq!(floor_count(0.1, 50), 5);
        assert_eq!(floor_count(0.05, 100), 5);
        assert_eq!(Rounding::Floor.apply(0.05, 2500), 125);
        assert_eq!(Rounding::Floor.apply(0.01, 50), 0);
        assert_eq!(Rounding::Nearest.apply(0.01, 50), 1);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (p, m) = tiny(&[0.1, 0.2]);
        assert!(magnitude_prune(&p, &m, 1.5, PruneScope::Global, 0.05, Rounding::Floor).is_err());
        assert!(magnitude_prune(&p, &m, 0.0, PruneScope::Global, 0.05, Rounding::Floor).is_err());
        assert!(magnitude_prune(&p, &m, 0.1, PruneScope::SingleLayer(7), 0.05, Rounding::Floor).is_err());
    }

    #[test]
    fn rewind_restores_init_exactly() {
        let arch = ArchSpec::with_outputs(2);
        let p = NetworkParams::<f64>::init(&arch, 9);
        let mut trained = p.clone();
        trained.values_mut().iter_mut().for_each(|v| *v = *v * 1.5 + 0.01);
        let r = rewind(&trained);
        assert_eq!(r.values(), p.init_values());
        assert_eq!(rewind(&r), r);
    }
}
