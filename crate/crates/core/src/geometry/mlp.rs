use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map `x ↦ Wx + b`, weights stored row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.outputs(), self.inputs(), |i, j| self.weights[i][j])
    }

    pub fn bias_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.bias)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// He-normal weights, biases drawn with standard deviation `bias_scale`.
    fn random(inputs: usize, outputs: usize, bias_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        let b = Normal::new(0.0, bias_scale.max(f64::MIN_POSITIVE)).expect("positive std");
        DenseLayer {
            weights: (0..outputs)
                .map(|_| (0..inputs).map(|_| w.sample(rng)).collect())
                .collect(),
            bias: (0..outputs)
                .map(|_| if bias_scale > 0.0 { b.sample(rng) } else { 0.0 })
                .collect(),
        }
    }
}

/// ReLU network: hidden layers `σ(W⁽ˡ⁾z + b⁽ˡ⁾)` followed by an optional linear head.
///
/// Without a head the network output is the last hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub hidden: Vec<DenseLayer>,
    #[serde(default)]
    pub head: Option<DenseLayer>,
    #[serde(default)]
    pub seed: u64,
}

impl MlpSpec {
    /// Random network with widths `[n_in, hidden…]` and an optional head of `n_out` units.
    pub fn random(n_in: usize, hidden: &[usize], n_out: Option<usize>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut prev = n_in;
        for &w in hidden {
            layers.push(DenseLayer::random(prev, w, 0.5, &mut rng));
            prev = w;
        }
        let head = n_out.map(|o| DenseLayer::random(prev, o, 0.5, &mut rng));
        MlpSpec {
            hidden: layers,
            head,
            seed,
        }
    }

    /// `[n_in, n_1, …, n_k]` plus the head width when present.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.hidden.iter().map(DenseLayer::outputs));
        if let Some(h) = &self.head {
            w.push(h.outputs());
        }
        w
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().or(self.head.as_ref()).map_or(0, DenseLayer::inputs)
    }

    pub fn output_dim(&self) -> usize {
        match &self.head {
            Some(h) => h.outputs(),
            None => self.hidden.last().map_or(self.input_dim(), DenseLayer::outputs),
        }
    }

    /// Number of hidden ReLU units.
    pub fn neurons(&self) -> usize {
        self.hidden.iter().map(DenseLayer::outputs).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = self.input_dim();
        if prev == 0 {
            return Err(Error::Invalid("network has no input units".into()));
        }
        for (l, layer) in self.hidden.iter().chain(self.head.as_ref()).enumerate() {
            if layer.weights.len() != layer.bias.len() {
                return Err(Error::Invalid(format!(
                    "layer {l}: {} weight rows but {} biases",
                    layer.weights.len(),
                    layer.bias.len()
                )));
            }
            if layer.weights.iter().any(|r| r.len() != prev) {
                return Err(Error::Invalid(format!(
                    "layer {l}: weight rows must have {prev} entries"
                )));
            }
            if layer
                .weights
                .iter()
                .flatten()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::Invalid(format!("layer {l}: non-finite parameter")));
            }
            prev = layer.outputs();
        }
        Ok(())
    }
}

/// Network output together with every hidden layer's preactivation.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: Vec<f64>,
    pub preactivations: Vec<Vec<f64>>,
}

pub fn mlp_forward(spec: &MlpSpec, x: &[f64]) -> Result<Forward> {
    if x.len() != spec.input_dim() {
        return Err(Error::Dimension {
            expected: spec.input_dim(),
            got: x.len(),
        });
    }
    let mut z = x.to_vec();
    let mut preactivations = Vec::with_capacity(spec.hidden.len());
    for layer in &spec.hidden {
        let pre = layer.apply(&z);
        z = pre.iter().map(|&v| v.max(0.0)).collect();
        preactivations.push(pre);
    }
    let output = match &spec.head {
        Some(h) => h.apply(&z),
        None => z,
    };
    Ok(Forward { output, preactivations })
}

/// One bit per hidden neuron, layers concatenated in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivationPattern {
    pub bits: Vec<bool>,
}

impl ActivationPattern {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn flipped(&self, index: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[index] = !bits[index];
        ActivationPattern { bits }
    }
}

/// Strict positivity: a zero preactivation is inactive.
pub fn activation_pattern(preactivations: &[Vec<f64>]) -> ActivationPattern {
    ActivationPattern {
        bits: preactivations.iter().flatten().map(|&v| v > 0.0).collect(),
    }
}

pub fn hamming(a: &ActivationPattern, b: &ActivationPattern) -> usize {
    a.bits.iter().zip(&b.bits).filter(|(x, y)| x != y).count()
}

/// The affine map `x ↦ Ax + b` the network computes on the region of `pattern`.
///
/// `A = H·D_k W_k ⋯ D_1 W_1` with `D_l` the diagonal 0/1 mask of layer `l`
/// and `H` the head (identity when absent).
pub fn pattern_linear_map(spec: &MlpSpec, pattern: &ActivationPattern) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if pattern.len() != spec.neurons() {
        return Err(Error::Dimension {
            expected: spec.neurons(),
            got: pattern.len(),
        });
    }
    let n = spec.input_dim();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut offset = 0;
    for layer in &spec.hidden {
        let w = layer.matrix();
        a = &w * a;
        b = &w * b + layer.bias_vector();
        for i in 0..layer.outputs() {
            if !pattern.bits[offset + i] {
                a.row_mut(i).fill(0.0);
                b[i] = 0.0;
            }
        }
        offset += layer.outputs();
    }
    if let Some(h) = &spec.head {
        let w = h.matrix();
        a = &w * a;
        b = &w * b + h.bias_vector();
    }
    Ok((a, b))
}
