//! Oracles shared by the integration tests. Everything here is written
//! against plain slices, without the tape, so it can check the library.
#![allow(dead_code)]

use moonfl::data::Dataset;
use moonfl::nn::Architecture;
use moonfl::rng::Rng;
use moonfl::tensor::Tensor;

/// `(in, out, relu)` per layer in storage order: encoder, projection
/// hidden, projection output, classifier.
pub fn layer_dims(arch: &Architecture) -> Vec<(usize, usize, bool)> {
    let mut dims = Vec::new();
    let mut prev = arch.input_dim;
    for &w in &arch.encoder_widths {
        dims.push((prev, w, true));
        prev = w;
    }
    dims.push((prev, arch.projection_hidden, true));
    dims.push((arch.projection_hidden, arch.projection_dim, false));
    dims.push((arch.projection_dim, arch.num_classes, false));
    dims
}

fn dense(params: &[f64], offset: &mut usize, x: &[f64], (n_in, n_out, relu): (usize, usize, bool)) -> Vec<f64> {
    let w = &params[*offset..*offset + n_in * n_out];
    let b = &params[*offset + n_in * n_out..*offset + n_in * n_out + n_out];
    *offset += n_in * n_out + n_out;
    (0..n_out)
        .map(|o| {
            let mut acc = b[o];
            for i in 0..n_in {
                acc += w[o * n_in + i] * x[i];
            }
            if relu {
                acc.max(0.0)
            } else {
                acc
            }
        })
        .collect()
}

/// Projection output and logits for one input row.
pub fn ref_forward(arch: &Architecture, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims = layer_dims(arch);
    let mut offset = 0;
    let mut h = x.to_vec();
    for &d in &dims[..dims.len() - 1] {
        h = dense(params, &mut offset, &h, d);
    }
    let logits = dense(params, &mut offset, &h, dims[dims.len() - 1]);
    assert_eq!(offset, params.len(), "reference layout consumed every parameter");
    (h, logits)
}

pub fn ref_cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    -(logits[label] - m) + denom.ln()
}

pub fn ref_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `-log(e^{s_g/tau} / (e^{s_g/tau} + sum_i e^{s_i/tau}))`, evaluated directly.
pub fn ref_contrastive(z: &[f64], glob: &[f64], prevs: &[&[f64]], tau: f64) -> f64 {
    let pos = (ref_cos(z, glob) / tau).exp();
    let neg: f64 = prevs.iter().map(|p| (ref_cos(z, p) / tau).exp()).sum();
    -(pos / (pos + neg)).ln()
}

pub fn ref_l2(z: &[f64], glob: &[f64]) -> f64 {
    z.iter().zip(glob).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

pub fn ref_proximal(w: &[f64], anchor: &[f64]) -> f64 {
    0.5 * w.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Central finite differences of `f` at `p`.
pub fn central_diff(p: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut work = p.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + h;
            let up = f(&work);
            work[i] = orig - h;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a|| + ||b||, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

/// Double-double accumulator (error-free sums and products).
#[derive(Clone, Copy, Debug, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl DoubleDouble {
    pub fn add_f64(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, e + self.lo);
        self.hi = hi;
        self.lo = lo;
    }

    /// Add the exact product `a * b`.
    pub fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add_f64(p);
        self.add_f64(err);
    }

    /// Divide by `d` with one Newton correction, rounded to f64.
    pub fn div_f64(&self, d: f64) -> f64 {
        let q = self.hi / d;
        let r = {
            let mut rem = *self;
            rem.add_product(-q, d);
            rem.hi + rem.lo
        };
        q + r / d
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

pub fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()
}

pub fn random_tensor(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(vec![rows, cols], random_vec(rng, rows * cols, scale)).unwrap()
}

/// A small random architecture.
pub fn random_arch(rng: &mut Rng) -> Architecture {
    let depth = rng.below(3);
    let widths = (0..depth).map(|_| 2 + rng.below(5)).collect();
    Architecture::new(2 + rng.below(4), widths, 2 + rng.below(4), 2 + rng.below(3))
}

/// Label-only dataset with the given per-class counts, in class order.
pub fn labelled(counts: &[usize]) -> Dataset {
    let labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let n = labels.len();
    Dataset::new(Tensor::zeros(&[n, 1]), labels, counts.len()).unwrap()
}

/// Shannon entropy (nats) of a count vector; zero for an empty vector.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// FNV-1a over the little-endian bytes of each value.
pub fn checksum(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
