//! Patch discriminator: a small fully connected network scoring flattened
//! RGB patches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_PATCH: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Offset of this layer's weights (row-major `outputs × inputs`, then
    /// `outputs` biases) in the flat parameter vector.
    offset: usize,
}

impl Layer {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// MLP `input → hidden… → 1` with leaky-rectifier activations.
///
/// The output layer starts at zero, so a fresh discriminator scores every
/// patch 0 and passes no gradient to the generator until it has been trained
/// on differing real and fake patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub patch: usize,
    layers: Vec<Layer>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass.
pub struct Forward {
    /// Inputs to each layer; `acts[0]` is the patch.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    pub score: f64,
}

impl Discriminator {
    /// Default architecture: `patch²·3 → 128 → 64 → 1`.
    pub fn new<R: Rng + ?Sized>(patch: usize, rng: &mut R) -> Self {
        Self::with_hidden(patch, &[128, 64], rng)
    }

    pub fn with_hidden<R: Rng + ?Sized>(patch: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![patch * patch * 3];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut layers = Vec::new();
        let mut offset = 0;
        for pair in sizes.windows(2) {
            let layer = Layer {
                inputs: pair[0],
                outputs: pair[1],
                offset,
            };
            offset += layer.len();
            layers.push(layer);
        }
        let mut params = vec![0.0; offset];
        let last = layers.len() - 1;
        for layer in &layers[..last] {
            let bound = (6.0 / layer.inputs as f64).sqrt();
            for w in &mut params[layer.offset..layer.offset + layer.inputs * layer.outputs] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Self {
            patch,
            layers,
            params,
        }
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn forward(&self, input: &[f64]) -> Result<Forward> {
        if input.len() != self.input_len() {
            return Err(Error::DimensionMismatch(format!(
                "discriminator expects {} inputs, got {}",
                self.input_len(),
                input.len()
            )));
        }
        let mut acts = vec![input.to_vec()];
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let x = acts.last().expect("input present");
            let w = &self.params[layer.offset..layer.offset + layer.inputs * layer.outputs];
            let b = &self.params
                [layer.offset + layer.inputs * layer.outputs..layer.offset + layer.len()];
            let z: Vec<f64> = (0..layer.outputs)
                .map(|o| {
                    b[o] + w[o * layer.inputs..(o + 1) * layer.inputs]
                        .iter()
                        .zip(x)
                        .map(|(a, v)| a * v)
                        .sum::<f64>()
                })
                .collect();
            if li == last {
                let score = z[0];
                return Ok(Forward { acts, pre, score });
            }
            acts.push(
                z.iter()
                    .map(|v| if *v > 0.0 { *v } else { LEAKY_SLOPE * v })
                    .collect(),
            );
            pre.push(z);
        }
        unreachable!("network has an output layer")
    }

    pub fn score(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward(input)?.score)
    }

    /// Accumulates `d_score · ∂score/∂params` into `grad_params` and returns
    /// `d_score · ∂score/∂input`.
    pub fn backward(&self, fwd: &Forward, d_score: f64, grad_params: &mut [f64]) -> Vec<f64> {
        let mut upstream = vec![d_score];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &fwd.acts[li];
            let w_end = layer.offset + layer.inputs * layer.outputs;
            let mut down = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let g = upstream[o];
                if g == 0.0 {
                    continue;
                }
                grad_params[w_end + o] += g;
                let row = layer.offset + o * layer.inputs;
                for i in 0..layer.inputs {
                    grad_params[row + i] += g * x[i];
                    down[i] += g * self.params[row + i];
                }
            }
            if li > 0 {
                for (d, z) in down.iter_mut().zip(&fwd.pre[li - 1]) {
                    if *z <= 0.0 {
                        *d *= LEAKY_SLOPE;
                    }
                }
            }
            upstream = down;
        }
        upstream
    }

    /// Signs of hidden pre-activations; the score is smooth in its inputs and
    /// weights wherever this pattern stays fixed.
    pub fn regime(&self, input: &[f64]) -> Result<Vec<bool>> {
        let fwd = self.forward(input)?;
        Ok(fwd.pre.iter().flatten().map(|z| *z > 0.0).collect())
    }

    /// Hinge loss on paired real and fake patches and its gradient with
    /// respect to the discriminator parameters.
    ///
    /// The two sets are accumulated separately and subtracted at the end, so
    /// identical real and fake sets give an exactly zero gradient.
    pub fn hinge_step_grad(&self, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let mut loss = 0.0;
        let mut parts = [vec![0.0; self.params.len()], vec![0.0; self.params.len()]];
        for ((set, sign), acc) in [(real, 1.0), (fake, -1.0)]
            .into_iter()
            .zip(parts.iter_mut())
        {
            let n = set.len().max(1) as f64;
            for patch in set {
                let fwd = self.forward(patch)?;
                // real: max(0, 1 − D); fake: max(0, 1 + D)
                let margin = 1.0 - sign * fwd.score;
                if margin > 0.0 {
                    loss += margin / n;
                    self.backward(&fwd, 1.0 / n, acc);
                }
            }
        }
        let [real_grad, fake_grad] = parts;
        Ok((
            loss,
            fake_grad
                .iter()
                .zip(&real_grad)
                .map(|(f, r)| f - r)
                .collect(),
        ))
    }
}
