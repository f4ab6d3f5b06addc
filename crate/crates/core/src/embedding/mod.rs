//! Video and text encoders mapping into one shared, L2-normalized space.
//!
//! The loss and trainer only ever see the [`EncoderPair`] trait. A pair owns
//! its parameters as named blocks in a [`ParamStore`] and can back-propagate
//! a gradient with respect to its normalized output into those blocks.

mod synthetic;
mod toy;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{AceError, Result};

pub use synthetic::{generate_synthetic_dataset, SyntheticConfig, SyntheticDataset};
pub use toy::{token_bucket, ToyEncoderConfig, ToyEncoders, TEXT_PROJ, TEXT_TABLE, VIDEO_PROJ};

/// A point in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vector: Array1<f64>,
    normalized: bool,
}

impl Embedding {
    pub fn raw(vector: Array1<f64>) -> Self {
        Self {
            vector,
            normalized: false,
        }
    }

    /// Scales `vector` to unit L2 norm.
    pub fn normalized(vector: Array1<f64>) -> Result<Self> {
        let norm = vector.dot(&vector).sqrt();
        if !norm.is_finite() {
            return Err(AceError::NumericsError("embedding norm".into()));
        }
        if norm == 0.0 {
            return Err(AceError::NormalizationError);
        }
        Ok(Self {
            vector: vector / norm,
            normalized: true,
        })
    }

    pub fn vector(&self) -> ArrayView1<'_, f64> {
        self.vector.view()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.vector.dot(&other.vector)
    }

    pub fn into_vector(self) -> Array1<f64> {
        self.vector
    }
}

/// One trimmed clip: per-frame features and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub clip_id: String,
    /// frames × feature-dim
    pub features: Array2<f64>,
    pub label_index: usize,
}

/// Named parameter matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub value: Array2<f64>,
}

/// Ordered set of named parameter blocks. Also used for gradients and
/// optimizer state, which mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        match self.blocks.iter_mut().find(|b| b.name == name) {
            Some(b) => b.value = value,
            None => self.blocks.push(ParamBlock {
                name: name.to_string(),
                value,
            }),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.blocks.iter_mut().find(|b| b.name == name).map(|b| &mut b.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|b| b.name.as_str())
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock] {
        &mut self.blocks
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    value: Array2::zeros(b.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.value.iter().all(|x| x.is_finite()))
    }
}

/// Video encoder `E` and text encoder `G` sharing one output dimension.
pub trait EncoderPair {
    /// Output dimension `D`.
    fn dim(&self) -> usize;

    fn encode_video(&self, sample: &VideoSample) -> Result<Embedding>;

    fn encode_text(&self, text: &str) -> Result<Embedding>;

    /// Accumulates into `grads` the parameter gradient of a scalar whose
    /// gradient with respect to `encode_video(sample)` is `upstream`.
    fn backward_video(&self, sample: &VideoSample, upstream: ArrayView1<f64>, grads: &mut ParamStore) -> Result<()>;

    /// Text counterpart of [`EncoderPair::backward_video`].
    fn backward_text(&self, text: &str, upstream: ArrayView1<f64>, grads: &mut ParamStore) -> Result<()>;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;
}

/// Gradient through `e = z / ‖z‖`: `(g - e (e·g)) / ‖z‖`.
pub(crate) fn normalize_backward(z: &Array1<f64>, upstream: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = z.dot(z).sqrt();
    if norm == 0.0 {
        return Err(AceError::NormalizationError);
    }
    let e = z / norm;
    let proj = e.dot(&upstream);
    Ok((&upstream - &(e * proj)) / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_vector_cannot_be_normalized() {
        assert!(matches!(
            Embedding::normalized(array![0.0, 0.0]),
            Err(AceError::NormalizationError)
        ));
    }

    #[test]
    fn normalized_has_unit_norm() {
        let e = Embedding::normalized(array![3.0, 4.0]).unwrap();
        assert!((e.dot(&e) - 1.0).abs() < 1e-12);
        assert!(e.is_normalized());
        assert!(!Embedding::raw(array![3.0, 4.0]).is_normalized());
    }

    #[test]
    fn normalize_backward_matches_finite_difference() {
        let z = array![0.3, -1.2, 0.7];
        let g = array![0.5, 0.1, -0.4];
        let analytic = normalize_backward(&z, g.view()).unwrap();
        let f = |z: &Array1<f64>| (z / z.dot(z).sqrt()).dot(&g);
        for i in 0..3 {
            let h = 1e-6;
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn param_store_zeros_like_keeps_shapes() {
        let mut p = ParamStore::new();
        p.insert("a", Array2::ones((2, 3)));
        p.insert("b", Array2::ones((1, 1)));
        let z = p.zeros_like();
        assert_eq!(z.get("a").unwrap().dim(), (2, 3));
        assert_eq!(z.get("b").unwrap().sum(), 0.0);
        assert_eq!(p.num_scalars(), 7);
    }
}
