use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{ProfsError, Result};

/// Shape of one fully connected layer; weights are stored `outputs x inputs`, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Flat-buffer layout of a parameter set: the MLP layers in order followed by
/// `extra` free scalars (for example a trainable margin boundary).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    layers: Vec<LayerShape>,
    extra: usize,
}

impl ParamLayout {
    pub fn new(layers: Vec<LayerShape>, extra: usize) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(ProfsError::ShapeMismatch(format!(
                    "layer outputs {} do not feed next layer inputs {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(ProfsError::ShapeMismatch("zero-sized layer".into()));
        }
        Ok(Self { layers, extra })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn extra(&self) -> usize {
        self.extra
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum::<usize>() + self.extra
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of the final linear layer, if any.
    pub fn head_index(&self) -> Option<usize> {
        self.layers.len().checked_sub(1)
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(LayerShape::len).sum()
    }

    pub fn weight_range(&self, l: usize) -> Range<usize> {
        let start = self.layer_offset(l);
        let s = self.layers[l];
        start..start + s.inputs * s.outputs
    }

    pub fn bias_range(&self, l: usize) -> Range<usize> {
        let w = self.weight_range(l);
        w.end..w.end + self.layers[l].outputs
    }

    pub fn extra_range(&self) -> Range<usize> {
        let n = self.len();
        n - self.extra..n
    }

    /// The head parameter group: the final layer plus all extra scalars.
    /// Everything before it is the body group.
    pub fn head_range(&self) -> Range<usize> {
        let start = match self.head_index() {
            Some(h) => self.layer_offset(h),
            None => self.len() - self.extra,
        };
        start..self.len()
    }
}

/// The trainable parameters θ as one flat buffer with structured layer views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: ParamLayout,
    data: Vec<f64>,
}

/// Gradients share the exact layout of the parameters they differentiate.
pub type GradVector = ParamVector;

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_flat(layout: ParamLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(ProfsError::ShapeMismatch(format!(
                "flat length {} does not match layout length {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, data })
    }

    /// Builds a parameter vector from `(weight, bias)` pairs plus extra scalars.
    pub fn from_layers(layers: &[(Matrix, Vec<f64>)], extra: &[f64]) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len());
        let mut data = Vec::new();
        for (w, b) in layers {
            if b.len() != w.rows() {
                return Err(ProfsError::ShapeMismatch(format!(
                    "bias length {} does not match {} weight rows",
                    b.len(),
                    w.rows()
                )));
            }
            shapes.push(LayerShape {
                inputs: w.cols(),
                outputs: w.rows(),
            });
            data.extend_from_slice(w.as_slice());
            data.extend_from_slice(b);
        }
        data.extend_from_slice(extra);
        let layout = ParamLayout::new(shapes, extra.len())?;
        Self::from_flat(layout, data)
    }

    pub fn to_layers(&self) -> Vec<(Matrix, Vec<f64>)> {
        (0..self.layout.layers.len())
            .map(|l| {
                let s = self.layout.layers[l];
                let w = Matrix::from_vec(s.outputs, s.inputs, self.weight(l).to_vec())
                    .expect("layout-consistent weight");
                (w, self.bias(l).to_vec())
            })
            .collect()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.data[self.layout.weight_range(l)]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layout.weight_range(l);
        &mut self.data[r]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.data[self.layout.bias_range(l)]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.layout.bias_range(l);
        &mut self.data[r]
    }

    pub fn extra(&self) -> &[f64] {
        &self.data[self.layout.extra_range()]
    }

    pub fn extra_mut(&mut self) -> &mut [f64] {
        let r = self.layout.extra_range();
        &mut self.data[r]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn norm(&self) -> f64 {
        super::matrix::norm(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(ProfsError::ShapeMismatch(format!(
                "operands have lengths {} and {} with differing layouts",
                self.len(),
                other.len()
            )));
        }
        Ok(())
    }

    /// `a * u + v`, elementwise.
    pub fn axpy(a: f64, u: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        u.check_same_shape(v)?;
        let data = u.data.iter().zip(&v.data).map(|(x, y)| a * x + y).collect();
        Ok(ParamVector {
            layout: v.layout.clone(),
            data,
        })
    }

    /// In-place `self += a * u`.
    pub fn add_scaled(&mut self, a: f64, u: &ParamVector) -> Result<()> {
        self.check_same_shape(u)?;
        for (x, y) in self.data.iter_mut().zip(&u.data) {
            *x += a * y;
        }
        Ok(())
    }

    /// `‖θ₁ − θ₂‖₂²`.
    pub fn sqnorm_diff(a: &ParamVector, b: &ParamVector) -> Result<f64> {
        a.check_same_shape(b)?;
        Ok(super::matrix::squared_distance_unchecked(&a.data, &b.data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layout() -> ParamLayout {
        ParamLayout::new(
            vec![
                LayerShape { inputs: 3, outputs: 4 },
                LayerShape { inputs: 4, outputs: 2 },
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn ranges_tile_the_buffer() {
        let l = layout();
        assert_eq!(l.len(), 12 + 4 + 8 + 2 + 1);
        assert_eq!(l.weight_range(0), 0..12);
        assert_eq!(l.bias_range(0), 12..16);
        assert_eq!(l.weight_range(1), 16..24);
        assert_eq!(l.bias_range(1), 24..26);
        assert_eq!(l.extra_range(), 26..27);
        assert_eq!(l.head_range(), 16..27);
    }

    #[test]
    fn inconsistent_chain_rejected() {
        let r = ParamLayout::new(
            vec![
                LayerShape { inputs: 3, outputs: 4 },
                LayerShape { inputs: 5, outputs: 2 },
            ],
            0,
        );
        assert!(matches!(r, Err(ProfsError::ShapeMismatch(_))));
    }

    #[test]
    fn sqnorm_and_axpy_examples() {
        let l = ParamLayout::new(vec![LayerShape { inputs: 2, outputs: 2 }], 1).unwrap();
        assert_eq!(l.len(), 7);
        let a = ParamVector::from_flat(l.clone(), vec![1.5; 7]).unwrap();
        let b = ParamVector::from_flat(l.clone(), vec![0.5; 7]).unwrap();
        assert_eq!(ParamVector::sqnorm_diff(&a, &a).unwrap(), 0.0);
        assert_eq!(ParamVector::sqnorm_diff(&a, &b).unwrap(), 7.0);
        assert_eq!(ParamVector::axpy(0.0, &a, &b).unwrap(), b);
        let other = ParamVector::zeros(layout());
        assert!(ParamVector::sqnorm_diff(&a, &other).is_err());
        assert!(ParamVector::axpy(1.0, &a, &other).is_err());
    }

    proptest! {
        #[test]
        fn flat_structured_round_trip(data in prop::collection::vec(-5.0..5.0f64, 27)) {
            let p = ParamVector::from_flat(layout(), data.clone()).unwrap();
            let back = ParamVector::from_layers(&p.to_layers(), p.extra()).unwrap();
            prop_assert_eq!(&back, &p);
            let again = ParamVector::from_flat(layout(), back.to_flat()).unwrap();
            prop_assert_eq!(again.as_slice(), &data[..]);
        }
    }
}
