//! Fixed two-hidden-layer tanh perceptron over flat parameter vectors:
//! forward pass, reverse-mode gradient accumulation, and forward-mode
//! parameter tangents (for Fisher-vector products).
//!
//! Parameter packing order: W1 (hidden x input, row major), b1, W2
//! (hidden x hidden), b2, W3 (output x hidden), b3. Callers may append
//! extra direct parameters (e.g. log standard deviations) after the net.

use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl NetDims {
    pub fn param_len(&self) -> usize {
        self.hidden * self.input
            + self.hidden
            + self.hidden * self.hidden
            + self.hidden
            + self.output * self.hidden
            + self.output
    }

    fn offsets(&self) -> [usize; 6] {
        let w1 = 0;
        let b1 = w1 + self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.hidden;
        let w3 = b2 + self.hidden;
        let b3 = w3 + self.output * self.hidden;
        [w1, b1, w2, b2, w3, b3]
    }
}

/// Post-activation values kept for the backward/tangent passes.
#[derive(Debug, Clone)]
pub struct Activations {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
}

pub fn forward(dims: &NetDims, params: &[f64], x: &[f64]) -> Activations {
    debug_assert_eq!(x.len(), dims.input);
    let [w1, b1, w2, b2, w3, b3] = dims.offsets();
    let mut h1 = vec![0.0; dims.hidden];
    for j in 0..dims.hidden {
        let row = &params[w1 + j * dims.input..w1 + (j + 1) * dims.input];
        let mut z = params[b1 + j];
        for i in 0..dims.input {
            z += row[i] * x[i];
        }
        h1[j] = z.tanh();
    }
    let mut h2 = vec![0.0; dims.hidden];
    for j in 0..dims.hidden {
        let row = &params[w2 + j * dims.hidden..w2 + (j + 1) * dims.hidden];
        let mut z = params[b2 + j];
        for i in 0..dims.hidden {
            z += row[i] * h1[i];
        }
        h2[j] = z.tanh();
    }
    let mut out = vec![0.0; dims.output];
    for o in 0..dims.output {
        let row = &params[w3 + o * dims.hidden..w3 + (o + 1) * dims.hidden];
        let mut z = params[b3 + o];
        for i in 0..dims.hidden {
            z += row[i] * h2[i];
        }
        out[o] = z;
    }
    Activations { h1, h2, out }
}

/// Accumulate d(out . out_cot)/d(params) into `grad` (same packing as
/// `params`; `grad` may be longer, extra tail untouched).
pub fn backward(
    dims: &NetDims,
    params: &[f64],
    x: &[f64],
    acts: &Activations,
    out_cot: &[f64],
    grad: &mut [f64],
) {
    let [w1, b1, w2, b2, w3, b3] = dims.offsets();
    // Output layer.
    for o in 0..dims.output {
        let c = out_cot[o];
        let g = &mut grad[w3 + o * dims.hidden..w3 + (o + 1) * dims.hidden];
        for i in 0..dims.hidden {
            g[i] += c * acts.h2[i];
        }
        grad[b3 + o] += c;
    }
    // Into hidden 2.
    let mut cz2 = vec![0.0; dims.hidden];
    for i in 0..dims.hidden {
        let mut c = 0.0;
        for o in 0..dims.output {
            c += params[w3 + o * dims.hidden + i] * out_cot[o];
        }
        cz2[i] = c * (1.0 - acts.h2[i] * acts.h2[i]);
    }
    for j in 0..dims.hidden {
        let c = cz2[j];
        let g = &mut grad[w2 + j * dims.hidden..w2 + (j + 1) * dims.hidden];
        for i in 0..dims.hidden {
            g[i] += c * acts.h1[i];
        }
        grad[b2 + j] += c;
    }
    // Into hidden 1.
    let mut cz1 = vec![0.0; dims.hidden];
    for i in 0..dims.hidden {
        let mut c = 0.0;
        for j in 0..dims.hidden {
            c += params[w2 + j * dims.hidden + i] * cz2[j];
        }
        cz1[i] = c * (1.0 - acts.h1[i] * acts.h1[i]);
    }
    for j in 0..dims.hidden {
        let c = cz1[j];
        let g = &mut grad[w1 + j * dims.input..w1 + (j + 1) * dims.input];
        for i in 0..dims.input {
            g[i] += c * x[i];
        }
        grad[b1 + j] += c;
    }
}

/// Forward-mode tangent of the network output along the parameter direction
/// `v` (same packing as `params`), at fixed input.
pub fn jvp(dims: &NetDims, params: &[f64], x: &[f64], acts: &Activations, v: &[f64]) -> Vec<f64> {
    let [w1, b1, w2, b2, w3, b3] = dims.offsets();
    let mut dh1 = vec![0.0; dims.hidden];
    for j in 0..dims.hidden {
        let row = &v[w1 + j * dims.input..w1 + (j + 1) * dims.input];
        let mut dz = v[b1 + j];
        for i in 0..dims.input {
            dz += row[i] * x[i];
        }
        dh1[j] = (1.0 - acts.h1[j] * acts.h1[j]) * dz;
    }
    let mut dh2 = vec![0.0; dims.hidden];
    for j in 0..dims.hidden {
        let vrow = &v[w2 + j * dims.hidden..w2 + (j + 1) * dims.hidden];
        let prow = &params[w2 + j * dims.hidden..w2 + (j + 1) * dims.hidden];
        let mut dz = v[b2 + j];
        for i in 0..dims.hidden {
            dz += vrow[i] * acts.h1[i] + prow[i] * dh1[i];
        }
        dh2[j] = (1.0 - acts.h2[j] * acts.h2[j]) * dz;
    }
    let mut dout = vec![0.0; dims.output];
    for o in 0..dims.output {
        let vrow = &v[w3 + o * dims.hidden..w3 + (o + 1) * dims.hidden];
        let prow = &params[w3 + o * dims.hidden..w3 + (o + 1) * dims.hidden];
        let mut dz = v[b3 + o];
        for i in 0..dims.hidden {
            dz += vrow[i] * acts.h2[i] + prow[i] * dh2[i];
        }
        dout[o] = dz;
    }
    dout
}

/// Glorot-style scaled-uniform init; `out_gain` shrinks the output layer
/// (small initial logits/means stabilize early policy updates).
pub fn init_params(dims: &NetDims, rng: &mut impl Rng, out_gain: f64) -> Vec<f64> {
    let mut p = vec![0.0; dims.param_len()];
    let [w1, _b1, w2, _b2, w3, _b3] = dims.offsets();
    let mut fill = |lo: usize, n: usize, fan_in: usize, fan_out: usize, gain: f64| {
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        for slot in &mut p[lo..lo + n] {
            *slot = rng.gen_range(-bound..bound);
        }
    };
    fill(w1, dims.hidden * dims.input, dims.input, dims.hidden, 1.0);
    fill(w2, dims.hidden * dims.hidden, dims.hidden, dims.hidden, 1.0);
    fill(w3, dims.output * dims.hidden, dims.hidden, dims.output, out_gain);
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_dims() -> NetDims {
        NetDims { input: 3, hidden: 5, output: 2 }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let dims = small_dims();
        let mut rng = crate::rng::substream(41, &[0]);
        let params = init_params(&dims, &mut rng, 1.0);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let acts = forward(&dims, &params, &x);
        let mut grad = vec![0.0; dims.param_len()];
        backward(&dims, &params, &x, &acts, &cot, &mut grad);

        let f = |p: &[f64]| -> f64 {
            let a = forward(&dims, p, &x);
            a.out.iter().zip(&cot).map(|(o, c)| o * c).sum()
        };
        let eps = 1e-6;
        for k in 0..dims.param_len() {
            let mut hi = params.clone();
            let mut lo = params.clone();
            hi[k] += eps;
            lo[k] -= eps;
            let fd = (f(&hi) - f(&lo)) / (2.0 * eps);
            assert!(
                (grad[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "param {k}: analytic {} fd {}",
                grad[k],
                fd
            );
        }
    }

    #[test]
    fn jvp_matches_directional_difference() {
        let dims = small_dims();
        let mut rng = crate::rng::substream(42, &[0]);
        let params = init_params(&dims, &mut rng, 1.0);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dims.param_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let acts = forward(&dims, &params, &x);
        let dout = jvp(&dims, &params, &x, &acts, &v);

        let eps = 1e-7;
        let shifted: Vec<f64> = params.iter().zip(&v).map(|(p, t)| p + eps * t).collect();
        let shifted_lo: Vec<f64> = params.iter().zip(&v).map(|(p, t)| p - eps * t).collect();
        let hi = forward(&dims, &shifted, &x).out;
        let lo = forward(&dims, &shifted_lo, &x).out;
        for o in 0..2 {
            let fd = (hi[o] - lo[o]) / (2.0 * eps);
            assert!((dout[o] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{} vs {}", dout[o], fd);
        }
    }
}
