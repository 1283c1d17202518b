//! Fully connected network with tanh hidden layers and a linear output,
//! stored as one flat parameter vector so optimizers and gradient checks
//! can treat it as a plain slice.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths, input first.
    pub sizes: Vec<usize>,
    /// Per layer: weights (out × in, row-major) followed by biases.
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Input to each layer; `acts[0]` is the network input.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        let n = Self::param_count(sizes);
        Self { sizes: sizes.to_vec(), params: vec![0.0; n] }
    }

    /// Scaled-normal weights (std = gain/√fan_in), zero biases; the last
    /// layer uses `out_gain`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], gain: f64, out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let g = if l + 1 == layers { out_gain } else { gain };
            let normal = Normal::new(0.0, g / (fan_in as f64).sqrt()).expect("finite std");
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = if g == 0.0 { 0.0 } else { normal.sample(rng) };
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(PolicyError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut next = b.to_vec();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *out += row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            cur = next;
            offset += n_in * n_out + n_out;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Result<Vec<f64>> {
        self.check_input(x)?;
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let layers = self.sizes.len() - 1;
        let mut offset = 0;
        let mut out = Vec::new();
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let cur = cache.acts.last().unwrap();
            let mut next = b.to_vec();
            for (o, v) in next.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *v += row.iter().zip(cur).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
                cache.acts.push(next);
            } else {
                out = next;
            }
            offset += n_in * n_out + n_out;
        }
        Ok(out)
    }

    /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output)
    /// for the pass recorded in `cache`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let offset = offsets[l];
            let input = &cache.acts[l];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wv;
                }
            }
            // input to layer l is tanh output of layer l-1
            for (p, a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
    }

    /// Weights and bias of layer `l` as (rows, cols, weights, bias).
    pub fn layer(&self, l: usize) -> (usize, usize, &[f64], &[f64]) {
        let offset: usize = self.sizes.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (n_out, n_in, w, b)
    }

    /// Mutable bias of the output layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.output_dim();
        let len = self.params.len();
        &mut self.params[len - n..]
    }
}
