//! Trainable parameter registry and its gradient mirror.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Storage precision for parameters and membrane trajectories.
///
/// Arithmetic is always carried out in `f64`. `Single` rounds stored values
/// to the nearest `f32` so a run behaves like a single-precision one and
/// checkpoints round-trip bitwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl Precision {
    #[inline]
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::Single => x as f32 as f64,
            Precision::Double => x,
        }
    }

    pub fn round_slice(self, xs: &mut [f64]) {
        if self == Precision::Single {
            for x in xs {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// Weights `[fan_in x fan_out]` (row-major), bias and raw decay of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub alpha_raw: Vec<f64>,
}

impl LayerTensors {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            alpha_raw: vec![0.0; fan_out],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 3] {
        [&self.weights, &self.bias, &self.alpha_raw]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 3] {
        [&mut self.weights, &mut self.bias, &mut self.alpha_raw]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub fan_in: usize,
    pub fan_out: usize,
    pub tensors: LayerTensors,
}

/// Shape record of one flat parameter array, in store order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamShape {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// All trainable arrays of a network, in construction order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    layers: Vec<Layer>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            fan_in,
            fan_out,
            tensors: LayerTensors::zeros(fan_in, fan_out),
        });
        self.layers.len() - 1
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut Layer {
        &mut self.layers[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn shapes(&self) -> Vec<ParamShape> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    ParamShape {
                        name: format!("{}.weights", l.name),
                        shape: vec![l.fan_in, l.fan_out],
                    },
                    ParamShape {
                        name: format!("{}.bias", l.name),
                        shape: vec![l.fan_out],
                    },
                    ParamShape {
                        name: format!("{}.alpha_raw", l.name),
                        shape: vec![l.fan_out],
                    },
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.fan_in * l.fan_out + 2 * l.fan_out).sum()
    }

    /// Visits every scalar in store order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.tensors.parts().into_iter().flat_map(|p| p.iter().copied()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors.parts_mut().into_iter().flat_map(|p| p.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", self.num_params(), flat.len())?;
        for (dst, &src) in self.values_mut().zip(flat) {
            *dst = src;
        }
        Ok(())
    }

    pub fn round_to(&mut self, precision: Precision) {
        for l in &mut self.layers {
            for p in l.tensors.parts_mut() {
                precision.round_slice(p);
            }
        }
    }

    /// Checks that `grads` has exactly this store's layout.
    pub fn check_congruent(&self, grads: &GradientSet) -> Result<()> {
        check_len("gradient layer count", self.layers.len(), grads.layers.len())?;
        for (l, g) in self.layers.iter().zip(&grads.layers) {
            for (p, q) in l.tensors.parts().into_iter().zip(g.parts()) {
                check_len("gradient tensor", p.len(), q.len())?;
            }
        }
        Ok(())
    }
}

/// One gradient array per trainable array, mirroring a [`ParameterStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    layers: Vec<LayerTensors>,
}

impl GradientSet {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            layers: store
                .layers
                .iter()
                .map(|l| LayerTensors::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    /// Gradient set with `flat` laid out in store order.
    pub fn from_flat(store: &ParameterStore, flat: &[f64]) -> Result<Self> {
        check_len("flat gradients", store.num_params(), flat.len())?;
        let mut out = Self::zeros_like(store);
        for (dst, &src) in out.values_mut().zip(flat) {
            *dst = src;
        }
        Ok(out)
    }

    pub fn layers(&self) -> &[LayerTensors] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerTensors {
        &self.layers[index]
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> &mut LayerTensors {
        &mut self.layers[index]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.parts().into_iter().flat_map(|p| p.iter().copied()))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parts_mut().into_iter().flat_map(|p| p.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        check_len("gradient layer count", self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (p, q) in a.parts_mut().into_iter().zip(b.parts()) {
                check_len("gradient tensor", p.len(), q.len())?;
                for (x, y) in p.iter_mut().zip(q) {
                    *x += y;
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for x in self.values_mut() {
            *x *= factor;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn ensure_finite(&self, store: &ParameterStore) -> Result<()> {
        for (l, g) in store.layers.iter().zip(&self.layers) {
            for (part, values) in ["weights", "bias", "alpha_raw"].iter().zip(g.parts()) {
                if let Some(x) = values.iter().find(|x| !x.is_finite()) {
                    return Err(Error::Divergence {
                        location: format!("{}.{}", l.name, part),
                        detail: format!("non-finite gradient {x}"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.push("a", 3, 2);
        s.push("b", 2, 4);
        s
    }

    #[test]
    fn counts_and_shapes() {
        let s = store();
        assert_eq!(s.num_params(), 3 * 2 + 4 + 2 * 4 + 8);
        let shapes = s.shapes();
        assert_eq!(shapes.len(), 6);
        assert_eq!(shapes[0].name, "a.weights");
        assert_eq!(shapes[0].shape, vec![3, 2]);
        assert_eq!(shapes.iter().map(ParamShape::numel).sum::<usize>(), s.num_params());
    }

    #[test]
    fn flat_round_trip() {
        let mut s = store();
        let flat: Vec<f64> = (0..s.num_params()).map(|i| i as f64 * 0.5).collect();
        s.assign_flat(&flat).unwrap();
        assert_eq!(s.to_flat(), flat);
        assert_eq!(s.layer(1).tensors.bias[0], (3 * 2 + 2 + 2 + 2 * 4) as f64 * 0.5);
        assert!(s.assign_flat(&flat[1..]).is_err());
    }

    #[test]
    fn gradient_congruence() {
        let s = store();
        let g = GradientSet::zeros_like(&s);
        s.check_congruent(&g).unwrap();
        let mut other = ParameterStore::new();
        other.push("a", 3, 2);
        assert!(other.check_congruent(&g).is_err());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let s = store();
        let mut g = GradientSet::zeros_like(&s);
        g.layer_mut(1).bias[2] = f64::NAN;
        let err = g.ensure_finite(&s).unwrap_err();
        assert!(err.to_string().contains("b.bias"));
    }

    #[test]
    fn single_precision_rounding() {
        assert_eq!(Precision::Single.round(0.1), 0.1f32 as f64);
        assert_eq!(Precision::Double.round(0.1), 0.1);
    }
}
