use std::ops::Range;

use crate::hnn::HnnError;
use crate::scalar::Scalar;
use crate::seed::SeededRng;

/// Fully connected `1 -> hidden... -> output_dim` network with `sin` hidden
/// activations and a linear output layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchSpec {
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl ArchSpec {
    pub const INPUT_DIM: usize = 1;
    pub const DEFAULT_HIDDEN: [usize; 2] = [50, 50];

    pub fn new(hidden: Vec<usize>, output_dim: usize) -> Result<Self, HnnError> {
        if output_dim == 0 || hidden.contains(&0) {
            return Err(HnnError::InvalidArch(format!(
                "widths must be positive (hidden {hidden:?}, output {output_dim})"
            )));
        }
        Ok(Self { hidden, output_dim })
    }

    /// Two hidden layers of fifty units.
    pub fn with_outputs(output_dim: usize) -> Self {
        Self::new(Self::DEFAULT_HIDDEN.to_vec(), output_dim).expect("default widths")
    }

    /// `[1, hidden..., output_dim]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(Self::INPUT_DIM);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn layer_count(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(fan_in, fan_out)` for each weight layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.widths().windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn weight_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c).sum()
    }

    pub fn bias_count(&self) -> usize {
        self.hidden.iter().sum::<usize>() + self.output_dim
    }
}

/// Offsets of each layer's weights and biases in the flat parameter vector.
///
/// Canonical order is layer by layer; inside a layer the row-major
/// `fan_in x fan_out` weights come first and the bias row follows, i.e. the
/// bias behaves like an extra input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(arch: &ArchSpec) -> Self {
        let shapes = arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut at = 0;
        for &(r, c) in &shapes {
            offsets.push(at);
            at += r * c + c;
        }
        Self {
            shapes,
            offsets,
            total: at,
        }
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn layer_count(&self) -> usize {
        self.shapes.len()
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn weight_range(&self, layer: usize) -> Range<usize> {
        let (r, c) = self.shapes[layer];
        let start = self.offsets[layer];
        start..start + r * c
    }

    pub fn bias_range(&self, layer: usize) -> Range<usize> {
        let (r, c) = self.shapes[layer];
        let start = self.offsets[layer] + r * c;
        start..start + c
    }

    /// Flat index of weight `(layer, row, col)`.
    pub fn weight_index(&self, layer: usize, row: usize, col: usize) -> usize {
        let (_, c) = self.shapes[layer];
        self.offsets[layer] + row * c + col
    }
}

/// Current parameters plus the frozen initialization they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    arch: ArchSpec,
    layout: Layout,
    values: Vec<T>,
    init: Vec<T>,
    seed: u64,
}

impl<T: Scalar> NetworkParams<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
    pub fn init(arch: &ArchSpec, seed: u64) -> Self {
        let layout = Layout::new(arch);
        let mut rng = SeededRng::new(seed);
        let mut values = vec![T::zero(); layout.param_count()];
        for (l, &(fan_in, _)) in layout.shapes().iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in &mut values[layout.weight_range(l)] {
                *w = rng.symmetric(bound);
            }
        }
        Self {
            arch: arch.clone(),
            layout,
            init: values.clone(),
            values,
            seed,
        }
    }

    /// Parameters whose initialization is the given flat vector.
    pub fn from_init(arch: &ArchSpec, init: Vec<T>, seed: u64) -> Result<Self, HnnError> {
        let layout = Layout::new(arch);
        if init.len() != layout.param_count() {
            return Err(HnnError::ShapeMismatch {
                expected: layout.param_count(),
                found: init.len(),
            });
        }
        Ok(Self {
            arch: arch.clone(),
            layout,
            values: init.clone(),
            init,
            seed,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn init_values(&self) -> &[T] {
        &self.init
    }

    pub fn layer_weights(&self, layer: usize) -> &[T] {
        &self.values[self.layout.weight_range(layer)]
    }

    pub fn layer_biases(&self, layer: usize) -> &[T] {
        &self.values[self.layout.bias_range(layer)]
    }

    pub fn init_layer_weights(&self, layer: usize) -> &[T] {
        &self.init[self.layout.weight_range(layer)]
    }

    /// Replace the current values, keeping the initialization.
    pub fn set_values(&mut self, values: Vec<T>) -> Result<(), HnnError> {
        if values.len() != self.values.len() {
            return Err(HnnError::ShapeMismatch {
                expected: self.values.len(),
                found: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Copy of these parameters reset to their initialization.
    pub fn rewound(&self) -> Self {
        let mut out = self.clone();
        out.values.copy_from_slice(&self.init);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let arch = ArchSpec::with_outputs(2);
        assert_eq!(arch.weight_count(), 2650);
        assert_eq!(arch.bias_count(), 102);
        assert_eq!(arch.layer_shapes(), vec![(1, 50), (50, 50), (50, 2)]);
        let hh = ArchSpec::with_outputs(4);
        assert_eq!(hh.layer_shapes()[2], (50, 4));
    }

    #[test]
    fn zero_width_rejected() {
        assert!(ArchSpec::new(vec![50, 0], 2).is_err());
        assert!(ArchSpec::new(vec![50], 0).is_err());
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let arch = ArchSpec::with_outputs(2);
        let a = NetworkParams::<f64>::init(&arch, 11);
        let b = NetworkParams::<f64>::init(&arch, 11);
        let c = NetworkParams::<f64>::init(&arch, 12);
        assert_eq!(a, b);
        assert!(a.values().iter().zip(c.values()).any(|(x, y)| x != y));
        assert!(a.layer_weights(0).iter().all(|w| w.abs() <= 1.0));
        let bound = 1.0 / 50f64.sqrt();
        assert!(a.layer_weights(1).iter().all(|w| w.abs() <= bound));
        assert!(a.layer_biases(1).iter().all(|&b| b == 0.0));
        assert_eq!(a.values(), a.init_values());
    }

    #[test]
    fn layout_is_contiguous() {
        let arch = ArchSpec::new(vec![3], 2).unwrap();
        let l = Layout::new(&arch);
        assert_eq!(l.weight_range(0), 0..3);
        assert_eq!(l.bias_range(0), 3..6);
        assert_eq!(l.weight_range(1), 6..12);
        assert_eq!(l.bias_range(1), 12..14);
        assert_eq!(l.param_count(), 14);
        assert_eq!(l.weight_index(1, 2, 1), 11);
    }
}
