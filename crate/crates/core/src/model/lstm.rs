//! LSTM -> Dense(PReLU) -> Dense(sigmoid) risk predictor with hand-written
//! backpropagation through time.
//!
//! All parameters live in one flat `Vec<f64>`; [`ParamLayout`] names the
//! segments. Gate blocks are ordered input, forget, candidate, output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::sigmoid;
use crate::rng::RngStream;

pub const PRELU_INIT: f64 = 0.25;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub hidden: usize,
    pub dense: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            hidden: 16,
            dense: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub struct ParamLayout {
    pub dims: ModelDims,
    w_x: usize,
    w_h: usize,
    b: usize,
    w1: usize,
    b1: usize,
    alpha: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl ParamLayout {
    pub fn new(dims: ModelDims) -> Self {
        let (h, d) = (dims.hidden, dims.dense);
        let w_x = 0;
        let w_h = w_x + 4 * h;
        let b = w_h + 4 * h * h;
        let w1 = b + 4 * h;
        let b1 = w1 + d * h;
        let alpha = b1 + d;
        let w2 = alpha + d;
        let b2 = w2 + d;
        ParamLayout {
            dims,
            w_x,
            w_h,
            b,
            w1,
            b1,
            alpha,
            w2,
            b2,
            total: b2 + 1,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> Vec<Segment> {
        let (h, d) = (self.dims.hidden, self.dims.dense);
        let seg = |name: &str, shape: &[usize]| Segment {
            name: name.to_string(),
            shape: shape.to_vec(),
        };
        vec![
            seg("lstm.kernel", &[4 * h, 1]),
            seg("lstm.recurrent_kernel", &[4 * h, h]),
            seg("lstm.bias", &[4 * h]),
            seg("dense.kernel", &[d, h]),
            seg("dense.bias", &[d]),
            seg("dense.prelu_alpha", &[d]),
            seg("output.kernel", &[1, d]),
            seg("output.bias", &[1]),
        ]
    }
}

/// Flat parameter vector; gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub dims: ModelDims,
    pub params: Vec<f64>,
}

/// Per-sequence activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SeqCache {
    xs: Vec<f64>,
    /// Post-activation gates, `k x 4H`.
    gates: Vec<f64>,
    /// Cell states, `k x H`.
    cs: Vec<f64>,
    /// `tanh(c_t)`, `k x H`.
    tanh_cs: Vec<f64>,
    /// Hidden states, `k x H`.
    hs: Vec<f64>,
    dense_pre: Vec<f64>,
    dense_out: Vec<f64>,
    pub q: f64,
}

fn glorot(stream: &mut RngStream, fan_in: usize, fan_out: usize, out: &mut [f64]) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in out {
        *w = stream.random_range(-bound..bound);
    }
}

impl ModelWeights {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelWeights {
            dims,
            params: vec![0.0; ParamLayout::new(dims).len()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.dims)
    }

    /// Glorot-uniform kernels, zero biases except forget gate = 1, PReLU
    /// slopes 0.25.
    pub fn init(dims: ModelDims, stream: &mut RngStream) -> Self {
        let lay = ParamLayout::new(dims);
        let (h, d) = (dims.hidden, dims.dense);
        let mut w = Self::zeros(dims);
        let p = &mut w.params;
        glorot(stream, 1, 4 * h, &mut p[lay.w_x..lay.w_h]);
        glorot(stream, h, 4 * h, &mut p[lay.w_h..lay.b]);
        p[lay.b + h..lay.b + 2 * h].fill(FORGET_BIAS_INIT);
        glorot(stream, h, d, &mut p[lay.w1..lay.b1]);
        p[lay.alpha..lay.w2].fill(PRELU_INIT);
        glorot(stream, d, 1, &mut p[lay.w2..lay.b2]);
        w
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.params.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.params.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_assign(&mut self, other: &ModelWeights) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
    }

    /// Risk score for one magnitude sequence, without caching.
    pub fn predict(&self, seq: &[f64]) -> f64 {
        let lay = self.layout();
        let h = self.dims.hidden;
        let p = &self.params;
        let mut hs = vec![0.0; h];
        let mut cs = vec![0.0; h];
        let mut z = vec![0.0; 4 * h];
        for &x in seq {
            lstm_preact(p, &lay, x, &hs, &mut z);
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                cs[j] = f * cs[j] + i * g;
                hs[j] = o * cs[j].tanh();
            }
        }
        let (_, u) = dense_forward(p, &lay, &hs);
        output_forward(p, &lay, &u)
    }

    pub fn predict_batch(&self, seqs: &[Vec<f64>]) -> Vec<f64> {
        seqs.iter().map(|s| self.predict(s)).collect()
    }

    pub fn forward(&self, seq: &[f64]) -> Result<SeqCache> {
        if let Some((t, v)) = seq.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite input at step {t}: {v}")));
        }
        let lay = self.layout();
        let h = self.dims.hidden;
        let k = seq.len();
        let p = &self.params;
        let mut cache = SeqCache {
            xs: seq.to_vec(),
            gates: vec![0.0; k * 4 * h],
            cs: vec![0.0; k * h],
            tanh_cs: vec![0.0; k * h],
            hs: vec![0.0; k * h],
            dense_pre: Vec::new(),
            dense_out: Vec::new(),
            q: 0.0,
        };
        let mut z = vec![0.0; 4 * h];
        let zeros = vec![0.0; h];
        for t in 0..k {
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&cache.hs[(t - 1) * h..t * h], &cache.cs[(t - 1) * h..t * h])
            };
            lstm_preact(p, &lay, seq[t], h_prev, &mut z);
            let mut c_new = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            let mut tc = vec![0.0; h];
            let gates = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                gates[j] = i;
                gates[h + j] = f;
                gates[2 * h + j] = g;
                gates[3 * h + j] = o;
                c_new[j] = f * c_prev[j] + i * g;
                tc[j] = c_new[j].tanh();
                h_new[j] = o * tc[j];
            }
            cache.cs[t * h..(t + 1) * h].copy_from_slice(&c_new);
            cache.tanh_cs[t * h..(t + 1) * h].copy_from_slice(&tc);
            cache.hs[t * h..(t + 1) * h].copy_from_slice(&h_new);
        }
        let last = if k == 0 {
            zeros.clone()
        } else {
            cache.hs[(k - 1) * h..k * h].to_vec()
        };
        let (pre, out) = dense_forward(p, &lay, &last);
        cache.q = output_forward(p, &lay, &out);
        cache.dense_pre = pre;
        cache.dense_out = out;
        Ok(cache)
    }

    /// Forward pass for all resources of a system with shared weights.
    pub fn forward_batch(&self, seqs: &[Vec<f64>]) -> Result<Vec<SeqCache>> {
        seqs.iter().map(|s| self.forward(s)).collect()
    }

    /// Reverse-mode gradient of `sum_r dq[r] * q_r` with respect to every
    /// parameter, accumulated over the sequences in `caches`.
    pub fn backward(&self, caches: &[SeqCache], dq: &[f64]) -> ModelWeights {
        assert_eq!(caches.len(), dq.len(), "one upstream gradient per sequence");
        let mut grad = self.zeros_like();
        for (cache, &d) in caches.iter().zip(dq) {
            if d != 0.0 {
                self.backward_one(cache, d, &mut grad.params);
            }
        }
        grad
    }

    fn backward_one(&self, c: &SeqCache, dq: f64, gp: &mut [f64]) {
        let lay = self.layout();
        let (h, dd) = (self.dims.hidden, self.dims.dense);
        let p = &self.params;
        let k = c.xs.len();

        // Output sigmoid.
        let dz2 = dq * c.q * (1.0 - c.q);
        gp[lay.b2] += dz2;
        let mut da = vec![0.0; dd];
        for j in 0..dd {
            gp[lay.w2 + j] += dz2 * c.dense_out[j];
            let du = dz2 * p[lay.w2 + j];
            let a = c.dense_pre[j];
            if a > 0.0 {
                da[j] = du;
            } else {
                da[j] = du * p[lay.alpha + j];
                gp[lay.alpha + j] += du * a;
            }
        }

        // Dense layer on the last hidden state.
        let mut dh = vec![0.0; h];
        if k > 0 {
            let h_last = &c.hs[(k - 1) * h..k * h];
            for j in 0..dd {
                gp[lay.b1 + j] += da[j];
                let row = lay.w1 + j * h;
                for m in 0..h {
                    gp[row + m] += da[j] * h_last[m];
                    dh[m] += da[j] * p[row + m];
                }
            }
        } else {
            for j in 0..dd {
                gp[lay.b1 + j] += da[j];
            }
        }

        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..k).rev() {
            let gates = &c.gates[t * 4 * h..(t + 1) * 4 * h];
            let tc = &c.tanh_cs[t * h..(t + 1) * h];
            for j in 0..h {
                let i = gates[j];
                let f = gates[h + j];
                let g = gates[2 * h + j];
                let o = gates[3 * h + j];
                let c_prev = if t == 0 { 0.0 } else { c.cs[(t - 1) * h + j] };
                let d_o = dh[j] * tc[j];
                let dct = dc[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dct * g * i * (1.0 - i);
                dz[h + j] = dct * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dct * i * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] = dct * f;
            }
            let x = c.xs[t];
            for r in 0..4 * h {
                gp[lay.w_x + r] += dz[r] * x;
                gp[lay.b + r] += dz[r];
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            if t > 0 {
                let h_prev = &c.hs[(t - 1) * h..t * h];
                for r in 0..4 * h {
                    let dzr = dz[r];
                    if dzr == 0.0 {
                        continue;
                    }
                    let row = lay.w_h + r * h;
                    let wrow = &p[row..row + h];
                    let grow = &mut gp[row..row + h];
                    for m in 0..h {
                        grow[m] += dzr * h_prev[m];
                        dh[m] += dzr * wrow[m];
                    }
                }
            }
        }
    }
}

fn lstm_preact(p: &[f64], lay: &ParamLayout, x: f64, h_prev: &[f64], z: &mut [f64]) {
    let h = lay.dims.hidden;
    for r in 0..4 * h {
        let row = &p[lay.w_h + r * h..lay.w_h + (r + 1) * h];
        let rec: f64 = row.iter().zip(h_prev).map(|(w, v)| w * v).sum();
        z[r] = p[lay.w_x + r] * x + rec + p[lay.b + r];
    }
}

fn dense_forward(p: &[f64], lay: &ParamLayout, hs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (h, d) = (lay.dims.hidden, lay.dims.dense);
    let pre: Vec<f64> = (0..d)
        .map(|j| {
            let row = &p[lay.w1 + j * h..lay.w1 + (j + 1) * h];
            row.iter().zip(hs).map(|(w, v)| w * v).sum::<f64>() + p[lay.b1 + j]
        })
        .collect();
    let out = pre
        .iter()
        .enumerate()
        .map(|(j, &a)| if a > 0.0 { a } else { p[lay.alpha + j] * a })
        .collect();
    (pre, out)
}

fn output_forward(p: &[f64], lay: &ParamLayout, u: &[f64]) -> f64 {
    let d = lay.dims.dense;
    let z: f64 = p[lay.w2..lay.w2 + d].iter().zip(u).map(|(w, v)| w * v).sum::<f64>() + p[lay.b2];
    sigmoid(z)
}
