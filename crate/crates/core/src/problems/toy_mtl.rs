//! Two-task classifier with a shared tanh encoder and per-task softmax heads.
//!
//! Inputs are sums of two class prototypes (one per task) plus Gaussian
//! noise, so both labels are recoverable from one shared representation but
//! compete for encoder capacity.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use super::{check_dim, MooProblem};
use crate::error::{Error, Result};
use crate::minnorm::GradientMatrix;
use crate::rng::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MtlArchitecture {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MtlArchitecture {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.hidden * self.input
    }
    fn head(&self, task: usize) -> usize {
        self.b1() + self.hidden + task * (self.classes * self.hidden + self.classes)
    }

    /// Flattened length of `[W1, b1, V1, c1, V2, c2]`.
    pub fn dim(&self) -> usize {
        self.head(2)
    }
}

#[derive(Clone, Debug)]
pub struct ToyMtl {
    arch: MtlArchitecture,
    inputs: Vec<f64>,
    labels: Vec<[usize; 2]>,
    batch: usize,
}

pub const DEFAULT_INPUT_DIM: usize = 16;
pub const DEFAULT_HIDDEN: usize = 50;
const PROTOTYPE_SCALE: f64 = 1.0;
const INPUT_NOISE: f64 = 0.7;

/// Builds the dataset deterministically from `seed`.
pub fn make_toy_mtl(seed: u64, samples: usize, classes: usize, batch: usize) -> Result<ToyMtl> {
    if classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
    }
    if batch == 0 || batch > samples {
        return Err(Error::invalid(format!("batch {batch} must be in [1, samples = {samples}]")));
    }
    let input = DEFAULT_INPUT_DIM;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut prototypes = vec![vec![0.0; classes * input]; 2];
    for task in prototypes.iter_mut() {
        for v in task.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = PROTOTYPE_SCALE * z;
        }
    }
    let mut inputs = Vec::with_capacity(samples * input);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let a = rng.gen_range(0..classes);
        let b = rng.gen_range(0..classes);
        for j in 0..input {
            let z: f64 = rng.sample(StandardNormal);
            inputs.push(prototypes[0][a * input + j] + prototypes[1][b * input + j] + INPUT_NOISE * z);
        }
        labels.push([a, b]);
    }
    ToyMtl::from_dataset(input, DEFAULT_HIDDEN, classes, inputs, labels, batch)
}

struct Pass {
    losses: [f64; 2],
    grads: Option<Vec<f64>>,
}

impl ToyMtl {
    pub fn from_dataset(
        input: usize,
        hidden: usize,
        classes: usize,
        inputs: Vec<f64>,
        labels: Vec<[usize; 2]>,
        batch: usize,
    ) -> Result<Self> {
        if labels.is_empty() || inputs.len() != labels.len() * input {
            return Err(Error::shape("toy mtl dataset", "inputs and labels disagree"));
        }
        if labels.iter().any(|l| l[0] >= classes || l[1] >= classes) {
            return Err(Error::invalid("label out of range"));
        }
        if batch == 0 || batch > labels.len() {
            return Err(Error::invalid(format!("batch {batch} must be in [1, samples = {}]", labels.len())));
        }
        Ok(ToyMtl {
            arch: MtlArchitecture { input, hidden, classes },
            inputs,
            labels,
            batch,
        })
    }

    pub fn architecture(&self) -> MtlArchitecture {
        self.arch
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Raw dataset bytes (inputs then labels), little-endian.
    pub fn dataset_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.inputs.len() * 8 + self.labels.len() * 16);
        for v in &self.inputs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.labels {
            out.extend_from_slice(&(l[0] as u64).to_le_bytes());
            out.extend_from_slice(&(l[1] as u64).to_le_bytes());
        }
        out
    }

    /// Mean per-task cross-entropy over `indices` (all samples when `None`),
    /// with per-task gradients when `want_grad`.
    fn pass(&self, x: &[f64], indices: Option<&[usize]>, want_grad: bool) -> Result<Pass> {
        check_dim(self, x)?;
        let a = self.arch;
        let (ni, nh, nc) = (a.input, a.hidden, a.classes);
        let dim = a.dim();
        let w1 = &x[a.w1()..a.b1()];
        let b1 = &x[a.b1()..a.b1() + nh];
        let mut grads = if want_grad { Some(vec![0.0; 2 * dim]) } else { None };
        let mut losses = [0.0; 2];
        let mut h = vec![0.0; nh];
        let mut z = vec![0.0; nc];
        let mut dh = vec![0.0; nh];

        let count = indices.map_or(self.labels.len(), <[usize]>::len);
        if count == 0 {
            return Err(Error::invalid("empty batch"));
        }
        for n in 0..count {
            let s = indices.map_or(n, |ix| ix[n]);
            let xs = &self.inputs[s * ni..(s + 1) * ni];
            for (k, hk) in h.iter_mut().enumerate() {
                let row = &w1[k * ni..(k + 1) * ni];
                let pre: f64 = row.iter().zip(xs).map(|(w, v)| w * v).sum::<f64>() + b1[k];
                *hk = pre.tanh();
            }
            for task in 0..2 {
                let off = a.head(task);
                let v = &x[off..off + nc * nh];
                let c = &x[off + nc * nh..off + nc * nh + nc];
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = v[j * nh..(j + 1) * nh].iter().zip(&h).map(|(w, hv)| w * hv).sum::<f64>() + c[j];
                }
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = z.iter().map(|zj| (zj - zmax).exp()).sum();
                let lse = zmax + denom.ln();
                let y = self.labels[s][task];
                losses[task] += lse - z[y];

                if let Some(g) = grads.as_mut() {
                    let g = &mut g[task * dim..(task + 1) * dim];
                    dh.iter_mut().for_each(|v| *v = 0.0);
                    for j in 0..nc {
                        let p = (z[j] - lse).exp();
                        let dz = if j == y { p - 1.0 } else { p };
                        for k in 0..nh {
                            g[off + j * nh + k] += dz * h[k];
                            dh[k] += dz * v[j * nh + k];
                        }
                        g[off + nc * nh + j] += dz;
                    }
                    for k in 0..nh {
                        let da = dh[k] * (1.0 - h[k] * h[k]);
                        for (gw, xv) in g[k * ni..(k + 1) * ni].iter_mut().zip(xs) {
                            *gw += da * xv;
                        }
                        g[a.b1() + k] += da;
                    }
                }
            }
        }
        let inv = 1.0 / count as f64;
        losses.iter_mut().for_each(|l| *l *= inv);
        if let Some(g) = grads.as_mut() {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(Pass { losses, grads })
    }

    fn jacobian_on(&self, x: &[f64], indices: Option<&[usize]>) -> Result<GradientMatrix> {
        let pass = self.pass(x, indices, true)?;
        GradientMatrix::new(2, self.arch.dim(), pass.grads.unwrap_or_default())
    }

    fn draw_sorted(&self, n: usize, rng: &mut SimRng) -> Vec<usize> {
        let mut ix = index::sample(rng, self.labels.len(), n.min(self.labels.len())).into_vec();
        ix.sort_unstable();
        ix
    }
}

impl MooProblem for ToyMtl {
    fn name(&self) -> &str {
        "toy_mtl"
    }

    fn dim(&self) -> usize {
        self.arch.dim()
    }

    fn objectives(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.pass(x, None, false)?.losses.to_vec())
    }

    fn full_jacobian(&self, x: &[f64]) -> Result<GradientMatrix> {
        self.jacobian_on(x, None)
    }

    /// Mean gradient over one batch drawn without replacement.
    fn sample_gradient(&self, x: &[f64], rng: &mut SimRng) -> Result<GradientMatrix> {
        let ix = self.draw_sorted(self.batch, rng);
        self.jacobian_on(x, Some(&ix))
    }

    /// Mean gradient over `n` samples drawn without replacement (capped at the dataset size).
    fn sample_gradient_mean(&self, x: &[f64], n: usize, rng: &mut SimRng) -> Result<GradientMatrix> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let ix = self.draw_sorted(n, rng);
        self.jacobian_on(x, Some(&ix))
    }

    /// Gaussian initialization scaled per layer.
    fn initial_point(&self, rng: &mut SimRng) -> Vec<f64> {
        let a = self.arch;
        let mut x = vec![0.0; a.dim()];
        let enc_std = 1.0 / (a.input as f64).sqrt();
        let head_std = 0.1 / (a.hidden as f64).sqrt();
        for (i, v) in x.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let std = if i < a.b1() {
                enc_std
            } else if i < a.head(0) {
                0.01
            } else {
                head_std
            };
            *v = std * z;
        }
        x
    }

    fn draw_guard_batch(&self, rng: &mut SimRng) -> Option<Vec<usize>> {
        Some(self.draw_sorted(self.batch, rng))
    }

    fn eval_batch(&self, x: &[f64], batch: Option<&[usize]>) -> Result<Vec<f64>> {
        Ok(self.pass(x, batch, false)?.losses.to_vec())
    }
}
