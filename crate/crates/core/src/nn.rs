//! Dense multilayer perceptrons with exact reverse-mode gradients and Adam.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out x in`, row-major) followed by the bias. Inputs are processed in
//! row-major batches of shape `batch x in`.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_TOKEN: AtomicU64 = AtomicU64::new(1);

fn fresh_token() -> u64 {
    NEXT_TOKEN.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    /// `scale * tanh(z)`.
    Tanh { scale: f64 },
}

#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    output: OutputActivation,
    /// Changes on every parameter write; caches remember it.
    token: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.output == other.output && self.params == other.params
    }
}

/// Intermediate values of a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    batch: usize,
    token: u64,
    /// `inputs[l]` is the input to layer `l` (post-activation of `l - 1`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
}

impl Cache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// C = A * B with arbitrary strides (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; n], output, token: fresh_token() })
    }

    /// Uniform fan-in initialisation `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`;
    /// the final layer is drawn from `U[-final_scale, final_scale]`.
    pub fn new<R: Rng>(sizes: &[usize], output: OutputActivation, final_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let layers = net.n_layers();
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let bound = if l + 1 == layers { final_scale } else { 1.0 / (fan_in as f64).sqrt() };
            for p in &mut net.params[offset..offset + fan_in * fan_out + fan_out] {
                *p = if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.token = fresh_token();
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: params.len() });
        }
        self.params_mut().copy_from_slice(params);
        Ok(())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weights, bias)` of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let off = self.layer_offset(layer);
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        (&self.params[off..off + i * o], &self.params[off + i * o..off + i * o + o])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Forward pass over a batch, returning outputs and the cache needed
    /// for [`Mlp::backward`].
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<(Vec<f64>, Cache)> {
        let d_in = self.input_dim();
        if input.len() != batch * d_in {
            return Err(Error::Dimension { expected: batch * d_in, got: input.len() });
        }
        let layers = self.n_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut x = input.to_vec();
        let mut off = 0;
        for l in 0..layers {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + fi * fo];
            let b = &self.params[off + fi * fo..off + fi * fo + fo];
            off += fi * fo + fo;
            let mut z = vec![0.0; batch * fo];
            for row in z.chunks_exact_mut(fo) {
                row.copy_from_slice(b);
            }
            gemm(batch, fi, fo, &x, (fi, 1), w, (1, fi), 1.0, &mut z, (fo, 1));
            let a: Vec<f64> = if l + 1 < layers {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                match self.output {
                    OutputActivation::Linear => z.clone(),
                    OutputActivation::Tanh { scale } => z.iter().map(|&v| scale * v.tanh()).collect(),
                }
            };
            inputs.push(std::mem::replace(&mut x, a));
            pre.push(z);
        }
        Ok((x, Cache { batch, token: self.token, inputs, pre }))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Cache)> {
        self.forward_batch(input, 1)
    }

    /// Outputs only.
    pub fn predict(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.forward_batch(input, batch).map(|(y, _)| y)
    }

    fn output_delta(&self, cache: &Cache, output_grad: &[f64]) -> Vec<f64> {
        let z = cache.pre.last().unwrap();
        match self.output {
            OutputActivation::Linear => output_grad.to_vec(),
            OutputActivation::Tanh { scale } => z
                .iter()
                .zip(output_grad)
                .map(|(&z, &g)| {
                    let t = z.tanh();
                    g * scale * (1.0 - t * t)
                })
                .collect(),
        }
    }

    fn check_cache(&self, cache: &Cache, output_grad: &[f64]) -> Result<()> {
        if cache.token != self.token || cache.pre.len() != self.n_layers() {
            return Err(Error::StaleCache);
        }
        let expected = cache.batch * self.output_dim();
        if output_grad.len() != expected {
            return Err(Error::Dimension { expected, got: output_grad.len() });
        }
        Ok(())
    }

    /// Reverse pass. Returns gradients with respect to the parameters
    /// (summed over the batch, same layout as [`Mlp::params`]) and with
    /// respect to the inputs (`batch x in`).
    pub fn backward(&self, cache: &Cache, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_cache(cache, output_grad)?;
        let mut grads = vec![0.0; self.params.len()];
        let input_grad = self.backprop(cache, output_grad, Some(&mut grads));
        Ok((grads, input_grad))
    }

    /// Gradient with respect to the inputs only.
    pub fn backward_input(&self, cache: &Cache, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_cache(cache, output_grad)?;
        Ok(self.backprop(cache, output_grad, None))
    }

    fn backprop(&self, cache: &Cache, output_grad: &[f64], mut grads: Option<&mut Vec<f64>>) -> Vec<f64> {
        let batch = cache.batch;
        let mut delta = self.output_delta(cache, output_grad);
        for l in (0..self.n_layers()).rev() {
            let (fi, fo) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.layer_offset(l);
            let x = &cache.inputs[l];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = g[off..off + fi * fo + fo].split_at_mut(fi * fo);
                // dW = delta^T x
                gemm(fo, batch, fi, &delta, (1, fo), x, (fi, 1), 0.0, gw, (fi, 1));
                for row in delta.chunks_exact(fo) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            // dX = delta W
            let w = &self.params[off..off + fi * fo];
            let mut dx = vec![0.0; batch * fi];
            gemm(batch, fo, fi, &delta, (fo, 1), w, (fi, 1), 0.0, &mut dx, (fi, 1));
            if l > 0 {
                for (d, &z) in dx.iter_mut().zip(&cache.pre[l - 1]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        delta
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if source.params.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: source.params.len() });
        }
        for (t, &s) in self.params_mut().iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    /// Text checkpoint: a header with layer sizes and output activation,
    /// then every parameter in layer order using round-trip float formatting.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        writeln!(w, "mlp {}", sizes.join(" "))?;
        match self.output {
            OutputActivation::Linear => writeln!(w, "output linear")?,
            OutputActivation::Tanh { scale } => writeln!(w, "output tanh {scale:?}")?,
        }
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "{p:?}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut R| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of file".into()));
            }
            Ok(line.trim().to_string())
        };
        let bad = |what: &str| Error::Checkpoint(format!("malformed {what}"));
        let header = next_line(r)?;
        let sizes = header
            .strip_prefix("mlp ")
            .ok_or_else(|| bad("mlp header"))?
            .split_whitespace()
            .map(|s| s.parse::<usize>().map_err(|_| bad("layer size")))
            .collect::<Result<Vec<_>>>()?;
        let out = next_line(r)?;
        let output = match out.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["output", "linear"] => OutputActivation::Linear,
            ["output", "tanh", s] => OutputActivation::Tanh { scale: s.parse().map_err(|_| bad("tanh scale"))? },
            _ => return Err(bad("output line")),
        };
        let mut net = Mlp::zeros(&sizes, output)?;
        let count: usize = next_line(r)?
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("params header"))?;
        if count != net.n_params() {
            return Err(Error::Dimension { expected: net.n_params(), got: count });
        }
        for i in 0..count {
            net.params[i] = next_line(r)?.parse().map_err(|_| bad("parameter"))?;
        }
        net.token = fresh_token();
        Ok(net)
    }
}

/// Adam optimiser state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], opt: &mut OptimState) -> Result<()> {
    if grads.len() != params.len() || opt.m.len() != params.len() {
        return Err(Error::Dimension { expected: params.len(), got: grads.len().min(opt.m.len()) });
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

impl Mlp {
    /// Adam step on this network's parameters.
    pub fn adam_step(&mut self, grads: &[f64], opt: &mut OptimState) -> Result<()> {
        adam_step(self.params_mut(), grads, opt)
    }
}
