//! Fully connected network with layer normalisation and leaky-rectifier
//! hidden units, stored as one flat parameter vector.
//!
//! Parameter order, per layer `l` with `n_in -> n_out`: weights row-major
//! (`n_out` rows of `n_in`), biases, then for hidden layers the
//! normalisation gains and shifts.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LearnerError, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Intermediate values of one forward pass, needed for backprop.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    normalized: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
    shifted: Vec<Vec<f64>>,
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

impl Mlp {
    pub fn param_count(sizes: &[usize]) -> usize {
        let layers = sizes.len() - 1;
        sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| w[0] * w[1] + w[1] + if l + 1 < layers { 2 * w[1] } else { 0 })
            .sum()
    }

    /// Network with the given layer sizes (input first, output last), all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(LearnerError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count(sizes)] })
    }

    /// He-scaled Gaussian weights, unit gains, zero biases; the output
    /// layer is scaled by `out_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let layers = net.layers();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let scale = (2.0 / n_in as f64).sqrt() * if l + 1 == layers { out_scale } else { 1.0 };
            for w in &mut net.params[off..off + n_in * n_out] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
            off += n_in * n_out + n_out;
            if l + 1 < layers {
                net.params[off..off + n_out].fill(1.0);
                off += 2 * n_out;
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(LearnerError::Shape(format!(
                "{} parameters for layer sizes {sizes:?}, expected {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.input_len() {
            return Err(LearnerError::Shape(format!("input of length {}, expected {}", x.len(), self.input_len())));
        }
        let layers = self.layers();
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(layers),
            normalized: Vec::with_capacity(layers),
            inv_std: Vec::with_capacity(layers),
            shifted: Vec::with_capacity(layers),
        };
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&h).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            off += n_in * n_out + n_out;
            cache.inputs.push(std::mem::take(&mut h));
            if l + 1 == layers {
                h = z;
                break;
            }
            let gain = &self.params[off..off + n_out];
            let shift = &self.params[off + n_out..off + 2 * n_out];
            off += 2 * n_out;
            let mean = z.iter().sum::<f64>() / n_out as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n_out as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            let xhat: Vec<f64> = z.iter().map(|v| (v - mean) * inv).collect();
            let y: Vec<f64> = xhat.iter().zip(gain).zip(shift).map(|((x, g), s)| g * x + s).collect();
            h = y.iter().map(|&v| leaky(v)).collect();
            cache.normalized.push(xhat);
            cache.inv_std.push(inv);
            cache.shifted.push(y);
        }
        Ok((h, cache))
    }

    /// Accumulate parameter gradients of a loss with output gradient
    /// `d_out` into `grad`; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(d_out.len(), self.output_len());
        let layers = self.layers();
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off += n_in * n_out + n_out + if l + 1 < layers { 2 * n_out } else { 0 };
        }
        let mut d = d_out.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            if l + 1 < layers {
                // Through the activation and normalisation back to the affine output.
                let norm_off = off + n_in * n_out + n_out;
                let y = &cache.shifted[l];
                let xhat = &cache.normalized[l];
                let inv = cache.inv_std[l];
                let gain = &self.params[norm_off..norm_off + n_out];
                let dy: Vec<f64> = d.iter().zip(y).map(|(g, &v)| if v > 0.0 { *g } else { LEAKY_SLOPE * g }).collect();
                for o in 0..n_out {
                    grad[norm_off + o] += dy[o] * xhat[o];
                    grad[norm_off + n_out + o] += dy[o];
                }
                let dxhat: Vec<f64> = dy.iter().zip(gain).map(|(a, b)| a * b).collect();
                let n = n_out as f64;
                let mean_d = dxhat.iter().sum::<f64>() / n;
                let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                d = (0..n_out).map(|o| inv * (dxhat[o] - mean_d - xhat[o] * mean_dx)).collect();
            }
            let input = &cache.inputs[l];
            let mut d_in = vec![0.0; n_in];
            for o in 0..n_out {
                let g = d[o];
                if g == 0.0 {
                    continue;
                }
                let row = off + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += g * input[i];
                    d_in[i] += g * self.params[row + i];
                }
                grad[off + n_in * n_out + o] += g;
            }
            d = d_in;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_identity() {
        let mut net = Mlp::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            net.params[i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn parameter_count() {
        assert_eq!(Mlp::param_count(&[4, 8, 8, 2]), 40 + 16 + 72 + 16 + 18);
        assert!(Mlp::zeros(&[4]).is_err());
        assert!(Mlp::from_params(&[2, 2], vec![0.0; 5]).is_err());
    }

    #[test]
    fn wrong_input_length_is_an_error() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[4, 8, 2], 1.0, &mut rng).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4];
        assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
    }
}
