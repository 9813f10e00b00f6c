//! Three-layer residual refinement network on the texture grid.
//!
//! `out = in + conv₃(relu(conv₂(relu(conv₁(in)))))`, all convolutions 3×3
//! with zero padding; channel widths 1 → 16 → 16 → 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};

pub const HIDDEN: usize = 16;
const TAPS: usize = 9;

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    /// `[out][in][ky][kx]`
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Conv {
    fn zeros(cin: usize, cout: usize) -> Self {
        Conv {
            cin,
            cout,
            weights: vec![0.0; cout * cin * TAPS],
            bias: vec![0.0; cout],
        }
    }

    fn he(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (cin * TAPS) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Conv {
            cin,
            cout,
            weights: (0..cout * cin * TAPS).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; cout],
        }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, input: &[Vec<f64>], w: usize, h: usize) -> Vec<Vec<f64>> {
        (0..self.cout)
            .map(|o| {
                let mut out = vec![self.bias[o]; w * h];
                for (c, src) in input.iter().enumerate() {
                    for k in 0..TAPS {
                        let wt = self.weights[(o * self.cin + c) * TAPS + k];
                        let (dx, dy) = ((k % 3) as isize - 1, (k / 3) as isize - 1);
                        shifted_axpy(&mut out, src, wt, dx, dy, w, h);
                    }
                }
                out
            })
            .collect()
    }

    /// Returns the input gradient; accumulates weight and bias gradients into `grad`.
    fn backward(
        &self,
        input: &[Vec<f64>],
        upstream: &[Vec<f64>],
        w: usize,
        h: usize,
        grad: &mut Conv,
        need_input_grad: bool,
    ) -> Vec<Vec<f64>> {
        let mut gin = vec![vec![0.0; w * h]; if need_input_grad { self.cin } else { 0 }];
        for (o, g) in upstream.iter().enumerate() {
            grad.bias[o] += g.iter().sum::<f64>();
            for (c, src) in input.iter().enumerate() {
                for k in 0..TAPS {
                    let idx = (o * self.cin + c) * TAPS + k;
                    let (dx, dy) = ((k % 3) as isize - 1, (k / 3) as isize - 1);
                    grad.weights[idx] += shifted_dot(g, src, dx, dy, w, h);
                    if need_input_grad {
                        shifted_axpy(&mut gin[c], g, self.weights[idx], -dx, -dy, w, h);
                    }
                }
            }
        }
        gin
    }
}

/// `dst(x, y) += a · src(x + dx, y + dy)` where the source index is in bounds.
fn shifted_axpy(dst: &mut [f64], src: &[f64], a: f64, dx: isize, dy: isize, w: usize, h: usize) {
    if a == 0.0 {
        return;
    }
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x0 as isize + dx) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        for (d, s) in d.iter_mut().zip(s) {
            *d += a * s;
        }
    }
}

/// `Σ g(x, y) · src(x + dx, y + dy)` over in-bounds source positions.
fn shifted_dot(g: &[f64], src: &[f64], dx: isize, dy: isize, w: usize, h: usize) -> f64 {
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let sx0 = (x0 as isize + dx) as usize;
        let gs = &g[y * w + x0..y * w + x1];
        let s = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
        acc += gs.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

fn relu(v: &[Vec<f64>]) -> Vec<Vec<f64>> {
    v.iter()
        .map(|c| c.iter().map(|&x| x.max(0.0)).collect())
        .collect()
}

/// ReLU' with the subgradient at zero taken as zero.
fn relu_backward(pre: &[Vec<f64>], g: &mut [Vec<f64>]) {
    for (p, g) in pre.iter().zip(g.iter_mut()) {
        for (p, g) in p.iter().zip(g.iter_mut()) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorNet {
    layers: [Conv; 3],
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct PriorCache {
    width: usize,
    height: usize,
    input: Vec<f64>,
    pre1: Vec<Vec<f64>>,
    act1: Vec<Vec<f64>>,
    pre2: Vec<Vec<f64>>,
    act2: Vec<Vec<f64>>,
    mask: Option<Mask>,
}

impl PriorCache {
    /// Sign pattern of both hidden pre-activations (`true` where positive).
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.pre1
            .iter()
            .chain(&self.pre2)
            .flat_map(|c| c.iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl PriorNet {
    /// Number of scalar parameters (all filters and biases).
    pub const PARAM_COUNT: usize =
        HIDDEN * TAPS + HIDDEN + HIDDEN * HIDDEN * TAPS + HIDDEN + HIDDEN * TAPS + 1;

    /// All parameters zero: the identity map.
    pub fn zeros() -> Self {
        PriorNet {
            layers: [
                Conv::zeros(1, HIDDEN),
                Conv::zeros(HIDDEN, HIDDEN),
                Conv::zeros(HIDDEN, 1),
            ],
        }
    }

    /// He-initialized hidden layers, zero biases and a zero output layer, so
    /// the network starts as the identity.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PriorNet {
            layers: [
                Conv::he(1, HIDDEN, &mut rng),
                Conv::he(HIDDEN, HIDDEN, &mut rng),
                Conv::zeros(HIDDEN, 1),
            ],
        }
    }

    pub fn is_identity(&self) -> bool {
        let last = &self.layers[2];
        last.weights.iter().chain(&last.bias).all(|&v| v == 0.0)
    }

    /// Parameters in layer order, weights before biases.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::PARAM_COUNT);
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let mut net = Self::zeros();
        net.set_from(values)?;
        Ok(net)
    }

    pub fn set_from(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != Self::PARAM_COUNT {
            return Err(Error::Dimension(format!(
                "prior network has {} parameters, got {}",
                Self::PARAM_COUNT,
                values.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn forward(&self, input: &Raster, mask: Option<&Mask>) -> Result<Raster> {
        Ok(self.forward_cached(input, mask)?.0)
    }

    /// Output and the activations needed by [`PriorNet::backward`]. Texels
    /// outside `mask` are zeroed after the skip connection.
    pub fn forward_cached(
        &self,
        input: &Raster,
        mask: Option<&Mask>,
    ) -> Result<(Raster, PriorCache)> {
        let (w, h) = input.dims();
        if let Some(m) = mask {
            if m.dims() != (w, h) {
                return Err(Error::Dimension("prior mask does not match input".into()));
            }
        }
        let x = vec![input.as_slice().to_vec()];
        let pre1 = self.layers[0].forward(&x, w, h);
        let act1 = relu(&pre1);
        let pre2 = self.layers[1].forward(&act1, w, h);
        let act2 = relu(&pre2);
        let res = self.layers[2].forward(&act2, w, h).swap_remove(0);
        let mut out: Vec<f64> = input
            .as_slice()
            .iter()
            .zip(&res)
            .map(|(a, r)| a + r)
            .collect();
        if let Some(m) = mask {
            for (o, &valid) in out.iter_mut().zip(m.as_slice()) {
                if !valid {
                    *o = 0.0;
                }
            }
        }
        let cache = PriorCache {
            width: w,
            height: h,
            input: x.into_iter().next().expect("one channel"),
            pre1,
            act1,
            pre2,
            act2,
            mask: mask.cloned(),
        };
        Ok((Raster::from_vec(w, h, out)?, cache))
    }

    /// Reverse pass: gradients with respect to all parameters (in
    /// [`PriorNet::to_vec`] order) and with respect to the input.
    pub fn backward(&self, cache: &PriorCache, upstream: &Raster) -> Result<(Vec<f64>, Raster)> {
        let (w, h) = (cache.width, cache.height);
        upstream.ensure_dims((w, h), "prior upstream gradient")?;
        let mut g_out = upstream.as_slice().to_vec();
        if let Some(m) = &cache.mask {
            for (g, &valid) in g_out.iter_mut().zip(m.as_slice()) {
                if !valid {
                    *g = 0.0;
                }
            }
        }
        let mut grads = [
            Conv::zeros(1, HIDDEN),
            Conv::zeros(HIDDEN, HIDDEN),
            Conv::zeros(HIDDEN, 1),
        ];
        let [g0, g1, g2] = &mut grads;
        let mut g_act2 = self.layers[2].backward(&cache.act2, &[g_out.clone()], w, h, g2, true);
        relu_backward(&cache.pre2, &mut g_act2);
        let mut g_act1 = self.layers[1].backward(&cache.act1, &g_act2, w, h, g1, true);
        relu_backward(&cache.pre1, &mut g_act1);
        let g_in =
            self.layers[0].backward(std::slice::from_ref(&cache.input), &g_act1, w, h, g0, true);
        let grad_input: Vec<f64> = g_out.iter().zip(&g_in[0]).map(|(a, b)| a + b).collect();
        let flat = PriorNet { layers: grads }.to_vec();
        Ok((flat, Raster::from_vec(w, h, grad_input)?))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv::len).sum()
    }
}
