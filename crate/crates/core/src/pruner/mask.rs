use crate::hnn::{ArchSpec, Layout};
use crate::scalar::Scalar;

/// Keep/prune bit per weight, one row-major matrix per layer. Biases are
/// never masked.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    shapes: Vec<(usize, usize)>,
    layers: Vec<Vec<bool>>,
}

impl Mask {
    pub fn full(arch: &ArchSpec) -> Self {
        Self::filled(arch, true)
    }

    pub fn zeros(arch: &ArchSpec) -> Self {
        Self::filled(arch, false)
    }

    fn filled(arch: &ArchSpec, bit: bool) -> Self {
        let shapes = arch.layer_shapes();
        let layers = shapes.iter().map(|&(r, c)| vec![bit; r * c]).collect();
        Self { shapes, layers }
    }

    /// Build from explicit per-layer bitmaps; `None` if sizes disagree.
    pub fn from_layers(shapes: Vec<(usize, usize)>, layers: Vec<Vec<bool>>) -> Option<Self> {
        if shapes.len() != layers.len()
            || shapes.iter().zip(&layers).any(|(&(r, c), l)| r * c != l.len())
        {
            return None;
        }
        Some(Self { shapes, layers })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, i: usize) -> &[bool] {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut [bool] {
        &mut self.layers[i]
    }

    pub fn get(&self, layer: usize, row: usize, col: usize) -> bool {
        let (_, cols) = self.shapes[layer];
        self.layers[layer][row * cols + col]
    }

    pub fn set(&mut self, layer: usize, row: usize, col: usize, keep: bool) {
        let (_, cols) = self.shapes[layer];
        self.layers[layer][row * cols + col] = keep;
    }

    pub fn conforms(&self, arch: &ArchSpec) -> bool {
        self.shapes == arch.layer_shapes()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn layer_total(&self, i: usize) -> usize {
        self.layers[i].len()
    }

    pub fn unmasked(&self) -> usize {
        (0..self.layers.len()).map(|i| self.layer_unmasked(i)).sum()
    }

    pub fn layer_unmasked(&self, i: usize) -> usize {
        self.layers[i].iter().filter(|&&b| b).count()
    }

    /// Fraction of weights kept across the whole network.
    pub fn density(&self) -> f64 {
        self.unmasked() as f64 / self.total() as f64
    }

    pub fn layer_density(&self, i: usize) -> f64 {
        self.layer_unmasked(i) as f64 / self.layer_total(i) as f64
    }

    pub fn layer_densities(&self) -> Vec<f64> {
        (0..self.layers.len()).map(|i| self.layer_density(i)).collect()
    }

    /// Elementwise `self <= other` (every weight kept here is kept there).
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shapes == other.shapes
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| !x || y))
    }

    /// Multiplier over the flat parameter vector: mask bit for weights, one
    /// for biases.
    pub fn param_multiplier<T: Scalar>(&self, layout: &Layout) -> Vec<T> {
        let mut out = vec![T::one(); layout.param_count()];
        for (i, bits) in self.layers.iter().enumerate() {
            let range = layout.weight_range(i);
            for (slot, &keep) in out[range].iter_mut().zip(bits) {
                if !keep {
                    *slot = T::zero();
                }
            }
        }
        out
    }
}
