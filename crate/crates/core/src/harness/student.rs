//! Two-layer student network with a classification head.
//!
//! `input → tanh(W1·x + b1) → W2·h + b2 = embedding → W3·e + b3 = logits`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::HarnessError;
use crate::eval::Embedder;
use crate::math::{Mat64, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudentShape {
    pub input: usize,
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
}

impl StudentShape {
    pub fn param_count(&self) -> usize {
        self.hidden * (self.input + 1)
            + self.embed * (self.hidden + 1)
            + self.classes * (self.embed + 1)
    }
}

/// Parameters in storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub w3: Matrix,
    pub b3: Matrix,
}

/// Parameters or gradients in working precision; weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params64 {
    pub w1: Mat64,
    pub b1: Vec<f64>,
    pub w2: Mat64,
    pub b2: Vec<f64>,
    pub w3: Mat64,
    pub b3: Vec<f64>,
}

pub struct Forward {
    pub hidden: Mat64,
    pub embed: Mat64,
    pub logits: Mat64,
}

impl StudentModel {
    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn init(shape: StudentShape, seed: u64) -> Result<Self, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |out: usize, inp: usize| -> Result<(Matrix, Matrix), HarnessError> {
            let scale = 1.0 / (inp as f64).sqrt();
            let w: Vec<f32> = (0..out * inp)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (z * scale) as f32
                })
                .collect();
            Ok((Matrix::new(out, inp, w)?, Matrix::zeros(1, out)?))
        };
        let (w1, b1) = layer(shape.hidden, shape.input)?;
        let (w2, b2) = layer(shape.embed, shape.hidden)?;
        let (w3, b3) = layer(shape.classes, shape.embed)?;
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        })
    }

    pub fn shape(&self) -> StudentShape {
        StudentShape {
            input: self.w1.cols(),
            hidden: self.w1.rows(),
            embed: self.w2.rows(),
            classes: self.w3.rows(),
        }
    }

    pub fn to_f64(&self) -> Params64 {
        let row = |m: &Matrix| m.to_f64().data;
        Params64 {
            w1: self.w1.to_f64(),
            b1: row(&self.b1),
            w2: self.w2.to_f64(),
            b2: row(&self.b2),
            w3: self.w3.to_f64(),
            b3: row(&self.b3),
        }
    }

    pub fn from_f64(p: &Params64) -> Result<Self, HarnessError> {
        let bias = |b: &[f64]| Matrix::new(1, b.len(), b.iter().map(|&v| v as f32).collect());
        Ok(Self {
            w1: p.w1.to_matrix()?,
            b1: bias(&p.b1)?,
            w2: p.w2.to_matrix()?,
            b2: bias(&p.b2)?,
            w3: p.w3.to_matrix()?,
            b3: bias(&p.b3)?,
        })
    }

    pub fn forward(&self, inputs: &Mat64) -> Forward {
        self.to_f64().forward(inputs)
    }

    /// Named tensors in a fixed order, for checkpoints.
    pub fn tensors(&self) -> [(&'static str, &Matrix); 6] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("w3", &self.w3),
            ("b3", &self.b3),
        ]
    }
}

impl Embedder for StudentModel {
    fn embed(&self, inputs: &Mat64) -> Mat64 {
        self.forward(inputs).embed
    }
}

/// `out[i] = W · x_i + b` for every row of `x`.
fn affine(x: &Mat64, w: &Mat64, b: &[f64]) -> Mat64 {
    let mut out = Mat64::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        for (o, dst) in out.row_mut(i).iter_mut().enumerate() {
            *dst = b[o] + crate::math::dot64(w.row(o), xi);
        }
    }
    out
}

/// Accumulates `gᵀ x` into `gw` and column sums of `g` into `gb`.
fn accumulate(g: &Mat64, x: &Mat64, gw: &mut Mat64, gb: &mut [f64]) {
    for i in 0..g.rows {
        let (gi, xi) = (g.row(i), x.row(i));
        for (o, &go) in gi.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            for (dst, &xv) in gw.row_mut(o).iter_mut().zip(xi) {
                *dst += go * xv;
            }
        }
    }
}

/// `g · W`, mapping output-side gradients to the input side.
fn back(g: &Mat64, w: &Mat64) -> Mat64 {
    let mut out = Mat64::zeros(g.rows, w.cols);
    for i in 0..g.rows {
        for (o, &go) in g.row(i).iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (dst, &wv) in out.row_mut(i).iter_mut().zip(w.row(o)) {
                *dst += go * wv;
            }
        }
    }
    out
}

impl Params64 {
    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Mat64::zeros(self.w1.rows, self.w1.cols),
            b1: vec![0.0; self.b1.len()],
            w2: Mat64::zeros(self.w2.rows, self.w2.cols),
            b2: vec![0.0; self.b2.len()],
            w3: Mat64::zeros(self.w3.rows, self.w3.cols),
            b3: vec![0.0; self.b3.len()],
        }
    }

    pub fn forward(&self, inputs: &Mat64) -> Forward {
        let mut hidden = affine(inputs, &self.w1, &self.b1);
        hidden.data.iter_mut().for_each(|v| *v = v.tanh());
        let embed = affine(&hidden, &self.w2, &self.b2);
        let logits = affine(&embed, &self.w3, &self.b3);
        Forward {
            hidden,
            embed,
            logits,
        }
    }

    /// Exact gradients of `Σ ⟨g_embed, e⟩ + ⟨g_logits, z⟩` for upstream
    /// gradients on the embeddings `e` and logits `z`.
    pub fn backprop(
        &self,
        inputs: &Mat64,
        fwd: &Forward,
        g_embed: &Mat64,
        g_logits: &Mat64,
    ) -> Params64 {
        let mut grads = self.zeros_like();
        accumulate(g_logits, &fwd.embed, &mut grads.w3, &mut grads.b3);
        let mut ge = back(g_logits, &self.w3);
        ge.add_scaled(g_embed, 1.0);
        accumulate(&ge, &fwd.hidden, &mut grads.w2, &mut grads.b2);
        let mut gh = back(&ge, &self.w2);
        for (g, h) in gh.data.iter_mut().zip(&fwd.hidden.data) {
            *g *= 1.0 - h * h;
        }
        accumulate(&gh, inputs, &mut grads.w1, &mut grads.b1);
        grads
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for part in [
            &self.w1.data,
            &self.b1,
            &self.w2.data,
            &self.b2,
            &self.w3.data,
            &self.b3,
        ] {
            out.extend_from_slice(part);
        }
        out
    }

    pub fn unflatten(&self, flat: &[f64]) -> Self {
        let mut out = self.zeros_like();
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[at..at + dst.len()]);
            at += dst.len();
        };
        take(&mut out.w1.data);
        take(&mut out.b1);
        take(&mut out.w2.data);
        take(&mut out.b2);
        take(&mut out.w3.data);
        take(&mut out.b3);
        out
    }

    /// `self -= lr * step`.
    pub fn sgd_step(&mut self, step: &Params64, lr: f64) {
        let pairs: [(&mut [f64], &[f64]); 6] = [
            (&mut self.w1.data, &step.w1.data),
            (&mut self.b1, &step.b1),
            (&mut self.w2.data, &step.w2.data),
            (&mut self.b2, &step.b2),
            (&mut self.w3.data, &step.w3.data),
            (&mut self.b3, &step.b3),
        ];
        for (dst, src) in pairs {
            for (p, g) in dst.iter_mut().zip(src) {
                *p -= lr * g;
            }
        }
    }

    /// `self = momentum * self + grad`.
    pub fn momentum_update(&mut self, grad: &Params64, momentum: f64) {
        let pairs: [(&mut [f64], &[f64]); 6] = [
            (&mut self.w1.data, &grad.w1.data),
            (&mut self.b1, &grad.b1),
            (&mut self.w2.data, &grad.w2.data),
            (&mut self.b2, &grad.b2),
            (&mut self.w3.data, &grad.w3.data),
            (&mut self.b3, &grad.b3),
        ];
        for (dst, src) in pairs {
            for (v, g) in dst.iter_mut().zip(src) {
                *v = momentum * *v + g;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Parameter gradients for upstream gradients on embeddings and logits.
pub fn student_backprop(
    model: &StudentModel,
    inputs: &Mat64,
    g_embed: &Mat64,
    g_logits: &Mat64,
) -> Params64 {
    let p = model.to_f64();
    let fwd = p.forward(inputs);
    p.backprop(inputs, &fwd, g_embed, g_logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_grad, relative_error};
    use rand::Rng;

    fn shape() -> StudentShape {
        StudentShape {
            input: 6,
            hidden: 5,
            embed: 3,
            classes: 4,
        }
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat64 {
        Mat64::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = StudentModel::init(shape(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, 3, 6);
        let g = student_backprop(&m, &x, &Mat64::zeros(3, 3), &Mat64::zeros(3, 4));
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = StudentModel::init(shape(), 4).unwrap();
        let p = m.to_f64();
        let x = random(&mut rng, 4, 6);
        let ge = random(&mut rng, 4, 3);
        let gl = random(&mut rng, 4, 4);
        let analytic = p.backprop(&x, &p.forward(&x), &ge, &gl).flatten();
        let objective = |flat: &[f64]| {
            let f = p.unflatten(flat).forward(&x);
            crate::math::dot64(&f.embed.data, &ge.data)
                + crate::math::dot64(&f.logits.data, &gl.data)
        };
        let numeric = finite_diff_grad(objective, &p.flatten(), 1e-4).unwrap();
        assert!(relative_error(&analytic, &numeric, 1e-8) < 1e-6);
    }

    #[test]
    fn duplicated_sample_doubles_contribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = StudentModel::init(shape(), 6).unwrap();
        let x1 = random(&mut rng, 1, 6);
        let ge1 = random(&mut rng, 1, 3);
        let gl1 = random(&mut rng, 1, 4);
        let single = student_backprop(&m, &x1, &ge1, &gl1).flatten();
        let dup = |a: &Mat64| {
            Mat64::from_vec(2, a.cols, [a.data.clone(), a.data.clone()].concat()).unwrap()
        };
        let double = student_backprop(&m, &dup(&x1), &dup(&ge1), &dup(&gl1)).flatten();
        for (s, d) in single.iter().zip(&double) {
            assert!((2.0 * s - d).abs() < 1e-12);
        }
    }

    #[test]
    fn storage_round_trip() {
        let m = StudentModel::init(shape(), 7).unwrap();
        assert_eq!(StudentModel::from_f64(&m.to_f64()).unwrap(), m);
        assert_eq!(m.to_f64().flatten().len(), shape().param_count());
        let p = m.to_f64();
        assert_eq!(p.unflatten(&p.flatten()), p);
    }
}
